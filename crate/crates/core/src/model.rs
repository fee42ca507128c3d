//! Noisy-OR parameterisation: activation probabilities, trial likelihoods,
//! outcome sampling and priors over the causal strength and base rate.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::graph::{CausalGraph, Intervention, Outcome, Trial};

/// Causal strength `w_s` and background (base-rate) strength `w_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub w_s: f64,
    pub w_b: f64,
}

impl Params {
    pub fn new(w_s: f64, w_b: f64) -> Result<Params, ModelError> {
        check_unit("w_s", w_s)?;
        check_unit("w_b", w_b)?;
        Ok(Params { w_s, w_b })
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::ParamRange { name, value })
    }
}

/// `P(x = 1)` for a free node with `active_parents` active parents.
#[inline]
pub fn node_activation_prob(active_parents: u32, w: Params) -> f64 {
    1.0 - (1.0 - w.w_b) * (1.0 - w.w_s).powi(active_parents as i32)
}

/// Likelihood of an outcome given parent masks. Only free nodes contribute.
#[inline]
pub(crate) fn outcome_likelihood(parents: &[u32], free: u32, bits: u32, w: Params) -> f64 {
    let mut p = 1.0;
    let mut rest = free;
    while rest != 0 {
        let x = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let k = (parents[x] & bits).count_ones();
        let on = node_activation_prob(k, w);
        p *= if bits & (1 << x) != 0 { on } else { 1.0 - on };
    }
    p
}

/// `P(outcome | graph, w, intervention)`.
pub fn trial_likelihood(g: &CausalGraph, w: Params, trial: &Trial) -> Result<f64, ModelError> {
    if g.n() != trial.n() {
        return Err(crate::GraphError::Dimension {
            expected: g.n(),
            found: trial.n(),
        }
        .into());
    }
    let parents = g.parent_masks();
    Ok(outcome_likelihood(
        &parents,
        trial.intervention().free_mask(),
        trial.outcome().bits(),
        w,
    ))
}

/// Draws an outcome by forward sampling in topological order.
pub fn sample_outcome<R: Rng + ?Sized>(
    g: &CausalGraph,
    w: Params,
    c: &Intervention,
    rng: &mut R,
) -> Result<Outcome, ModelError> {
    if g.n() != c.n() {
        return Err(crate::GraphError::Dimension {
            expected: g.n(),
            found: c.n(),
        }
        .into());
    }
    let parents = g.parent_masks();
    let free = c.free_mask();
    let mut bits = c.on_mask();
    for x in g.topological_order() {
        if free & (1 << x) != 0 {
            let k = (parents[x] & bits).count_ones();
            if rng.random::<f64>() < node_activation_prob(k, w) {
                bits |= 1 << x;
            }
        }
    }
    Ok(Outcome::from_bits(g.n(), bits))
}

/// Density over one strength parameter on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Density {
    Uniform,
    Beta { a: f64, b: f64 },
}

impl Density {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError> {
        match *self {
            Density::Uniform => Ok(rng.random::<f64>()),
            Density::Beta { a, b } => {
                let d = Beta::new(a, b)
                    .map_err(|e| ModelError::InvalidPrior(format!("Beta({a}, {b}): {e}")))?;
                Ok(d.sample(rng))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Density::Uniform => 0.5,
            Density::Beta { a, b } => a / (a + b),
        }
    }
}

/// Prior over `(w_s, w_b)`.
///
/// The named sparse/strong variants use the shapes `w_s ~ Beta(2, 10)` and
/// `w_b ~ Beta(10, 2)`; the `*T` variants swap the two shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamPrior {
    #[serde(rename = "UU")]
    Uu,
    #[serde(rename = "SU")]
    Su,
    #[serde(rename = "SS")]
    Ss,
    #[serde(rename = "SU-T")]
    SuTransposed,
    #[serde(rename = "SS-T")]
    SsTransposed,
    #[serde(rename = "custom")]
    Custom { w_s: Density, w_b: Density },
}

impl ParamPrior {
    pub fn densities(&self) -> (Density, Density) {
        let low = Density::Beta { a: 2.0, b: 10.0 };
        let high = Density::Beta { a: 10.0, b: 2.0 };
        match *self {
            ParamPrior::Uu => (Density::Uniform, Density::Uniform),
            ParamPrior::Su => (low, Density::Uniform),
            ParamPrior::Ss => (low, high),
            ParamPrior::SuTransposed => (high, Density::Uniform),
            ParamPrior::SsTransposed => (high, low),
            ParamPrior::Custom { w_s, w_b } => (w_s, w_b),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Params, ModelError> {
        let (ds, db) = self.densities();
        Ok(Params {
            w_s: ds.sample(rng)?,
            w_b: db.sample(rng)?,
        })
    }
}

/// Equally weighted samples from a [`ParamPrior`], used to marginalise
/// over unknown strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    samples: Vec<Params>,
}

impl ParamGrid {
    pub fn from_samples(samples: Vec<Params>) -> Result<ParamGrid, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyGrid);
        }
        for s in &samples {
            Params::new(s.w_s, s.w_b)?;
        }
        Ok(ParamGrid { samples })
    }

    pub fn samples(&self) -> &[Params] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Default number of grid samples.
pub const DEFAULT_GRID_SIZE: usize = 1000;

/// Draws `count` samples from `prior`.
pub fn draw_param_grid<R: Rng + ?Sized>(
    prior: &ParamPrior,
    count: usize,
    rng: &mut R,
) -> Result<ParamGrid, ModelError> {
    if count == 0 {
        return Err(ModelError::EmptyGrid);
    }
    let samples = (0..count)
        .map(|_| prior.sample(rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParamGrid { samples })
}

/// Seed of the shared uniform-prior grid.
pub const UU_GRID_SEED: u64 = 0x5eed_0001;

/// The default-size grid drawn from the uniform prior with a fixed seed,
/// shared by every learner that does not know the strengths.
pub fn shared_uu_grid() -> Arc<ParamGrid> {
    static GRID: OnceLock<Arc<ParamGrid>> = OnceLock::new();
    GRID.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(UU_GRID_SEED);
        Arc::new(draw_param_grid(&ParamPrior::Uu, DEFAULT_GRID_SIZE, &mut rng).expect("uniform prior is valid"))
    })
    .clone()
}

/// What the learner knows about the strengths: the true values, or a
/// prior grid to marginalise over.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamBelief {
    Known(Params),
    Grid(Arc<ParamGrid>),
}

impl ParamBelief {
    pub fn samples(&self) -> &[Params] {
        match self {
            ParamBelief::Known(p) => std::slice::from_ref(p),
            ParamBelief::Grid(g) => g.samples(),
        }
    }

    pub fn is_known(&self) -> bool {
        matches!(self, ParamBelief::Known(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::outcome_space;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_formula() {
        let w = Params::new(0.8, 0.1).unwrap();
        assert!((node_activation_prob(0, w) - 0.1).abs() < 1e-15);
        assert!((node_activation_prob(1, w) - 0.82).abs() < 1e-15);
        assert!((node_activation_prob(2, w) - (1.0 - 0.9 * 0.04)).abs() < 1e-15);
        let one = Params::new(1.0, 0.3).unwrap();
        assert_eq!(node_activation_prob(1, one), 1.0);
        assert!(Params::new(1.2, 0.0).is_err());
        assert!(Params::new(0.5, -0.1).is_err());
    }

    #[test]
    fn chain_likelihood_by_hand() {
        // x->y->z, observe, outcome 110: 0.1 * 0.82 * (1 - 0.82)
        let g = CausalGraph::parse(3, "x->y;y->z").unwrap();
        let w = Params::new(0.8, 0.1).unwrap();
        let t = Trial::parse("...", "110").unwrap();
        let p = trial_likelihood(&g, w, &t).unwrap();
        assert!((p - 0.1 * 0.82 * 0.18).abs() < 1e-12);
        // fixed node contributes nothing and still counts as an active parent
        let t = Trial::parse("+..", "100").unwrap();
        let p = trial_likelihood(&g, w, &t).unwrap();
        assert!((p - 0.18 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn outcome_likelihoods_sum_to_one() {
        let g = CausalGraph::parse(3, "x->z;y->z").unwrap();
        let w = Params::new(0.75, 0.25).unwrap();
        for c in crate::graph::enumerate_interventions(3) {
            let s: f64 = outcome_space(&c)
                .into_iter()
                .map(|o| trial_likelihood(&g, w, &Trial::new(c.clone(), o).unwrap()).unwrap())
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_matches_likelihood() {
        let g = CausalGraph::parse(3, "x->y;x->z").unwrap();
        let w = Params::new(0.9, 0.25).unwrap();
        let c = Intervention::observe(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[sample_outcome(&g, w, &c, &mut rng).unwrap().bits() as usize] += 1;
        }
        for o in outcome_space(&c) {
            let p = trial_likelihood(&g, w, &Trial::new(c.clone(), o).unwrap()).unwrap();
            let f = counts[o.bits() as usize] as f64 / n as f64;
            assert!((p - f).abs() < 0.01, "{o}: {p} vs {f}");
        }
    }

    #[test]
    fn grid_is_seeded_and_in_range() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let ga = draw_param_grid(&ParamPrior::Ss, 500, &mut a).unwrap();
        let gb = draw_param_grid(&ParamPrior::Ss, 500, &mut b).unwrap();
        assert_eq!(ga, gb);
        let mean_s: f64 = ga.samples().iter().map(|p| p.w_s).sum::<f64>() / 500.0;
        let mean_b: f64 = ga.samples().iter().map(|p| p.w_b).sum::<f64>() / 500.0;
        assert!((mean_s - 2.0 / 12.0).abs() < 0.03);
        assert!((mean_b - 10.0 / 12.0).abs() < 0.03);
        assert!(draw_param_grid(&ParamPrior::Uu, 0, &mut a).is_err());
    }

    #[test]
    fn prior_serde_names() {
        let p: ParamPrior = serde_json::from_str("\"SU\"").unwrap();
        assert_eq!(p, ParamPrior::Su);
        let c: ParamPrior = serde_json::from_str(
            r#"{"custom":{"w_s":{"dist":"beta","a":1.0,"b":3.0},"w_b":{"dist":"uniform"}}}"#,
        )
        .unwrap();
        assert!(matches!(c, ParamPrior::Custom { .. }));
    }
}

//! Locally focused intervention choice.
//!
//! A learner first picks a focus (one edge, the effects of one node, or a
//! check of its current hypothesis against the unconnected graph) by how
//! uncertain it is under recent evidence, then picks the intervention that is
//! most informative about that focus under a uniform pseudo-prior.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::InferenceError;
use crate::graph::{pair_count, shared_interventions, CausalGraph, HypothesisSpace, Intervention, Trial};
use crate::inference::{
    conditional_from_completions, evidence_likelihoods, BeliefDistribution, GainEngine, TrialKey,
};
use crate::math::{shannon_entropy, softmax};
use crate::model::ParamBelief;

/// A local question a learner may focus on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "lowercase")]
pub enum Focus {
    /// State of the edge at this canonical pair index.
    Edge(usize),
    /// Descendant set of this node.
    Effects(usize),
    /// Current hypothesis versus the unconnected graph.
    Confirmation,
}

impl Focus {
    pub fn label(&self, n: usize) -> String {
        match *self {
            Focus::Edge(p) => {
                let (i, j) = crate::graph::pairs(n)[p];
                format!("edge {}-{}", crate::graph::node_label(i), crate::graph::node_label(j))
            }
            Focus::Effects(x) => format!("effects {}", crate::graph::node_label(x)),
            Focus::Confirmation => "confirmation".to_string(),
        }
    }
}

/// The focus kinds an intervention model can draw on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusKind {
    Edge,
    Effects,
    Confirmation,
    Mixed,
}

/// Foci available to a learner, in a fixed order: edges, then effects, then confirmation.
pub fn focus_set(kind: FocusKind, n: usize) -> Vec<Focus> {
    let edges = (0..pair_count(n)).map(Focus::Edge);
    let effects = (0..n).map(Focus::Effects);
    match kind {
        FocusKind::Edge => edges.collect(),
        FocusKind::Effects => effects.collect(),
        FocusKind::Confirmation => vec![Focus::Confirmation],
        FocusKind::Mixed => edges
            .chain(effects)
            .chain(std::iter::once(Focus::Confirmation))
            .collect(),
    }
}

/// Intervention-choice model and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InterventionModelSpec {
    Edge { eta: f64, rho: f64 },
    Effects { eta: f64, rho: f64 },
    Confirmation { eta: f64 },
    Mixed { eta: f64, rho: f64 },
    Global { theta: f64 },
    Baseline,
}

impl InterventionModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionModelSpec::Edge { .. } => "edge",
            InterventionModelSpec::Effects { .. } => "effects",
            InterventionModelSpec::Confirmation { .. } => "confirmation",
            InterventionModelSpec::Mixed { .. } => "mixed",
            InterventionModelSpec::Global { .. } => "global",
            InterventionModelSpec::Baseline => "baseline",
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |what: &str, v: f64| {
            Err(InferenceError::InvalidArgument(format!("{what} = {v} is out of range")))
        };
        match *self {
            InterventionModelSpec::Edge { eta, rho }
            | InterventionModelSpec::Effects { eta, rho }
            | InterventionModelSpec::Mixed { eta, rho } => {
                if !(eta >= 0.0) {
                    return bad("eta", eta);
                }
                if rho.is_nan() {
                    return bad("rho", rho);
                }
            }
            InterventionModelSpec::Confirmation { eta } => {
                if !(eta >= 0.0) {
                    return bad("eta", eta);
                }
            }
            InterventionModelSpec::Global { theta } => {
                if !(theta >= 0.0) {
                    return bad("theta", theta);
                }
            }
            InterventionModelSpec::Baseline => {}
        }
        Ok(())
    }

    fn focus_kind(&self) -> Option<FocusKind> {
        match self {
            InterventionModelSpec::Edge { .. } => Some(FocusKind::Edge),
            InterventionModelSpec::Effects { .. } => Some(FocusKind::Effects),
            InterventionModelSpec::Confirmation { .. } => Some(FocusKind::Confirmation),
            InterventionModelSpec::Mixed { .. } => Some(FocusKind::Mixed),
            _ => None,
        }
    }
}

/// Softmax of `ρ·H` over the defined foci; undefined foci get probability 0.
pub fn focus_selection_probs(entropies: &[Option<f64>], rho: f64) -> Vec<f64> {
    let defined: Vec<usize> = (0..entropies.len())
        .filter(|&i| entropies[i].is_some())
        .collect();
    let mut out = vec![0.0; entropies.len()];
    if defined.is_empty() {
        return out;
    }
    let values: Vec<f64> = defined.iter().map(|&i| entropies[i].unwrap()).collect();
    let probs = if rho == f64::NEG_INFINITY {
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        softmax(&neg, f64::INFINITY)
    } else {
        softmax(&values, rho)
    };
    for (&i, p) in defined.iter().zip(probs) {
        out[i] = p;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum GainKey {
    Edge([u32; 3]),
    Effects(usize),
    Confirmation(usize),
    GlobalNoEvidence,
}

/// Everything the intervention models need at one decision point, with the
/// parameter-free parts precomputed.
#[derive(Debug, Clone)]
pub struct ChoiceFeatures {
    /// Focus entropies in [`focus_set`]`(Mixed)` order; `None` where undefined.
    pub entropies: Vec<Option<f64>>,
    /// Per-focus local gains over all `3^n` candidates; `None` where undefined.
    pub gains: Vec<Option<Arc<Vec<f64>>>>,
    /// Global expected information gain per candidate, if requested.
    pub global: Option<Arc<Vec<f64>>>,
}

/// Computes focus entropies and local gains, caching the evidence-free gain
/// tables across calls.
pub struct LocalFocusEngine {
    space: Arc<HypothesisSpace>,
    belief: ParamBelief,
    candidates: Arc<Vec<Intervention>>,
    cache: Mutex<HashMap<GainKey, Arc<Vec<f64>>>>,
}

impl LocalFocusEngine {
    pub fn new(n: usize, belief: ParamBelief) -> Result<LocalFocusEngine, InferenceError> {
        Ok(LocalFocusEngine {
            space: HypothesisSpace::shared(n)?,
            belief,
            candidates: shared_interventions(n),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn space(&self) -> &Arc<HypothesisSpace> {
        &self.space
    }

    pub fn candidates(&self) -> &Arc<Vec<Intervention>> {
        &self.candidates
    }

    pub fn belief(&self) -> &ParamBelief {
        &self.belief
    }

    fn check_graph(&self, b: &CausalGraph) -> Result<usize, InferenceError> {
        self.space.index_of(b).ok_or_else(|| {
            crate::GraphError::Dimension {
                expected: self.space.n(),
                found: b.n(),
            }
            .into()
        })
    }

    fn check_focus(&self, f: Focus) -> Result<(), InferenceError> {
        let ok = match f {
            Focus::Edge(p) => p < self.space.pair_count(),
            Focus::Effects(x) => x < self.space.n(),
            Focus::Confirmation => true,
        };
        if ok {
            Ok(())
        } else {
            Err(InferenceError::InvalidArgument(format!("focus {f:?} out of range")))
        }
    }

    /// Uncertainty (bits) about a focus given recent evidence.
    pub fn focus_entropy(
        &self,
        f: Focus,
        b: &CausalGraph,
        recent: &[Trial],
    ) -> Result<f64, InferenceError> {
        self.check_focus(f)?;
        let bi = self.check_graph(b)?;
        let keys: Vec<TrialKey> = recent.iter().map(TrialKey::from).collect();
        match f {
            Focus::Edge(p) => {
                let comps = self.space.pair_neighbors(bi, p);
                Ok(conditional_from_completions(&self.space, comps, &keys, &self.belief)?.entropy())
            }
            Focus::Effects(x) => {
                let lik = evidence_likelihoods(&self.space, recent, &self.belief)?;
                let mut masses = vec![0.0; 1 << self.space.n()];
                for (i, l) in lik.iter().enumerate() {
                    masses[self.space.descendant_mask(i, x) as usize] += l;
                }
                if !(masses.iter().sum::<f64>() > 0.0) {
                    return Err(InferenceError::DegenerateEvidence);
                }
                Ok(shannon_entropy(&masses))
            }
            Focus::Confirmation => {
                let b0 = self.space.empty_index();
                if bi == b0 {
                    return Err(InferenceError::UndefinedFocus);
                }
                let l = [
                    crate::inference::marginal_evidence_likelihood(&self.space, bi, &keys, &self.belief),
                    crate::inference::marginal_evidence_likelihood(&self.space, b0, &keys, &self.belief),
                ];
                if !(l[0] + l[1] > 0.0) {
                    return Err(InferenceError::DegenerateEvidence);
                }
                Ok(shannon_entropy(&l))
            }
        }
    }

    /// Expected information gain about the focus for every candidate, under a
    /// uniform pseudo-prior over the focus's local possibilities.
    pub fn gains(&self, f: Focus, b: &CausalGraph) -> Result<Arc<Vec<f64>>, InferenceError> {
        self.check_focus(f)?;
        let bi = self.check_graph(b)?;
        let key = match f {
            Focus::Edge(p) => GainKey::Edge(
                self.space
                    .pair_neighbors(bi, p)
                    .map(|c| c.map(|i| i as u32).unwrap_or(u32::MAX)),
            ),
            Focus::Effects(x) => GainKey::Effects(x),
            Focus::Confirmation => {
                if bi == self.space.empty_index() {
                    return Err(InferenceError::UndefinedFocus);
                }
                GainKey::Confirmation(bi)
            }
        };
        if let Some(g) = self.cache.lock().unwrap().get(&key) {
            return Ok(g.clone());
        }
        let (models, classes): (Vec<usize>, Vec<u32>) = match &key {
            GainKey::Edge(comps) => {
                let models: Vec<usize> = comps
                    .iter()
                    .filter(|c| **c != u32::MAX)
                    .map(|c| *c as usize)
                    .collect();
                let classes = (0..models.len() as u32).collect();
                (models, classes)
            }
            GainKey::Effects(x) => {
                let models: Vec<usize> = (0..self.space.len()).collect();
                let classes = models
                    .iter()
                    .map(|&i| self.space.descendant_mask(i, *x))
                    .collect();
                (models, classes)
            }
            GainKey::Confirmation(bi) => (vec![*bi, self.space.empty_index()], vec![0, 1]),
            GainKey::GlobalNoEvidence => unreachable!("global gains are built separately"),
        };
        let samples = self.belief.samples();
        let weights = vec![1.0; models.len() * samples.len()];
        let engine = GainEngine::new(self.space.clone(), &models, samples, &weights, &classes)?;
        let gains = Arc::new(engine.gains(&self.candidates));
        self.cache.lock().unwrap().insert(key, gains.clone());
        Ok(gains)
    }

    /// Global expected information gain per candidate, from the posterior
    /// over full evidence under a uniform model prior.
    pub fn global_gains(&self, full: &[Trial]) -> Result<Arc<Vec<f64>>, InferenceError> {
        if full.is_empty() {
            if let Some(g) = self.cache.lock().unwrap().get(&GainKey::GlobalNoEvidence) {
                return Ok(g.clone());
            }
        }
        let prior = BeliefDistribution::uniform(self.space.clone());
        let engine = GainEngine::global(&prior, full, &self.belief)?;
        let gains = Arc::new(engine.gains(&self.candidates));
        if full.is_empty() {
            // the no-evidence table is reused at the start of every problem
            self.cache
                .lock()
                .unwrap()
                .insert(GainKey::GlobalNoEvidence, gains.clone());
        }
        Ok(gains)
    }

    /// Precomputes entropies and gains for every focus at one decision point.
    pub fn features(
        &self,
        b: &CausalGraph,
        recent: &[Trial],
        full: &[Trial],
        with_global: bool,
    ) -> Result<ChoiceFeatures, InferenceError> {
        let foci = focus_set(FocusKind::Mixed, self.space.n());
        let mut entropies = Vec::with_capacity(foci.len());
        let mut gains = Vec::with_capacity(foci.len());
        for f in foci {
            match self.focus_entropy(f, b, recent) {
                Ok(h) => {
                    entropies.push(Some(h));
                    gains.push(Some(self.gains(f, b)?));
                }
                Err(InferenceError::UndefinedFocus) => {
                    entropies.push(None);
                    gains.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        let global = if with_global {
            Some(self.global_gains(full)?)
        } else {
            None
        };
        Ok(ChoiceFeatures {
            entropies,
            gains,
            global,
        })
    }

    /// Choice distribution over all `3^n` candidates.
    pub fn distribution(
        &self,
        spec: &InterventionModelSpec,
        b: &CausalGraph,
        recent: &[Trial],
        full: &[Trial],
    ) -> Result<Vec<f64>, InferenceError> {
        spec.validate()?;
        let with_global = matches!(spec, InterventionModelSpec::Global { .. });
        let feats = match spec {
            InterventionModelSpec::Baseline => None,
            _ => Some(self.features(b, recent, full, with_global)?),
        };
        Ok(choice_probs(spec, self.space.n(), self.candidates.len(), feats.as_ref()))
    }
}

/// Choice distribution from precomputed features. `features` may be `None`
/// only for the baseline model.
pub fn choice_probs(
    spec: &InterventionModelSpec,
    n: usize,
    n_candidates: usize,
    features: Option<&ChoiceFeatures>,
) -> Vec<f64> {
    let uniform = vec![1.0 / n_candidates as f64; n_candidates];
    let feats = match (spec, features) {
        (InterventionModelSpec::Baseline, _) | (_, None) => return uniform,
        (_, Some(f)) => f,
    };
    if let InterventionModelSpec::Global { theta } = *spec {
        return match &feats.global {
            Some(g) => softmax(g, theta),
            None => uniform,
        };
    }
    let (eta, rho) = match *spec {
        InterventionModelSpec::Edge { eta, rho }
        | InterventionModelSpec::Effects { eta, rho }
        | InterventionModelSpec::Mixed { eta, rho } => (eta, rho),
        InterventionModelSpec::Confirmation { eta } => (eta, 0.0),
        _ => unreachable!(),
    };
    let kind = spec.focus_kind().expect("focus model");
    let np = pair_count(n);
    let range = match kind {
        FocusKind::Edge => 0..np,
        FocusKind::Effects => np..np + n,
        FocusKind::Confirmation => np + n..np + n + 1,
        FocusKind::Mixed => 0..np + n + 1,
    };
    let entropies = &feats.entropies[range.clone()];
    let p_focus = focus_selection_probs(entropies, rho);
    if p_focus.iter().all(|p| *p == 0.0) {
        return uniform;
    }
    let mut out = vec![0.0; n_candidates];
    for (k, pf) in p_focus.into_iter().enumerate() {
        if pf == 0.0 {
            continue;
        }
        let g = feats.gains[range.start + k].as_ref().expect("defined focus has gains");
        for (o, p) in out.iter_mut().zip(softmax(g, eta)) {
            *o += pf * p;
        }
    }
    out
}

/// Uncertainty (bits) about a focus given recent evidence.
pub fn focus_entropy(
    f: Focus,
    b: &CausalGraph,
    recent: &[Trial],
    belief: &ParamBelief,
) -> Result<f64, InferenceError> {
    LocalFocusEngine::new(b.n(), belief.clone())?.focus_entropy(f, b, recent)
}

/// Expected information gain about a focus from intervention `c`.
pub fn local_expected_gain(
    f: Focus,
    c: &Intervention,
    b: &CausalGraph,
    belief: &ParamBelief,
) -> Result<f64, InferenceError> {
    let engine = LocalFocusEngine::new(b.n(), belief.clone())?;
    let idx = engine
        .candidates()
        .iter()
        .position(|x| x == c)
        .ok_or_else(|| InferenceError::InvalidArgument(format!("intervention {c} has wrong size")))?;
    Ok(engine.gains(f, b)?[idx])
}

/// `softmax(η · gain)` over all candidates for one focus.
pub fn intervention_probs_given_focus(
    f: Focus,
    b: &CausalGraph,
    belief: &ParamBelief,
    eta: f64,
) -> Result<Vec<f64>, InferenceError> {
    let engine = LocalFocusEngine::new(b.n(), belief.clone())?;
    Ok(softmax(&engine.gains(f, b)?, eta))
}

/// Probability that the model chooses `observed`.
pub fn intervention_model_likelihood(
    spec: &InterventionModelSpec,
    observed: &Intervention,
    b: &CausalGraph,
    recent: &[Trial],
    full: &[Trial],
    belief: &ParamBelief,
) -> Result<f64, InferenceError> {
    let engine = LocalFocusEngine::new(b.n(), belief.clone())?;
    let idx = engine
        .candidates()
        .iter()
        .position(|x| x == observed)
        .ok_or_else(|| InferenceError::InvalidArgument(format!("intervention {observed} has wrong size")))?;
    Ok(engine.distribution(spec, b, recent, full)?[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::argmax_set;
    use crate::model::Params;

    fn known(s: f64, b: f64) -> ParamBelief {
        ParamBelief::Known(Params::new(s, b).unwrap())
    }

    fn g(text: &str) -> CausalGraph {
        CausalGraph::parse(3, text).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let w = known(0.8, 0.1);
        let h = focus_entropy(Focus::Edge(0), &CausalGraph::empty(3), &[], &w).unwrap();
        assert!((h - 3f64.log2()).abs() < 1e-12);
        let h = focus_entropy(Focus::Confirmation, &g("x->y"), &[], &w).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
        assert!(matches!(
            focus_entropy(Focus::Confirmation, &CausalGraph::empty(3), &[], &w),
            Err(InferenceError::UndefinedFocus)
        ));
    }

    #[test]
    fn effects_entropy_matches_partition_oracle() {
        // Oracle: group the 25 graphs by descendant set of x, by direct path search.
        let space = HypothesisSpace::shared(3).unwrap();
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for gr in space.graphs() {
            *counts.entry(gr.descendants(0)).or_default() += 1;
        }
        let sizes: Vec<f64> = counts.values().map(|c| *c as f64).collect();
        let expect = shannon_entropy(&sizes);
        let h = focus_entropy(Focus::Effects(0), &CausalGraph::empty(3), &[], &known(0.8, 0.1)).unwrap();
        assert!((h - expect).abs() < 1e-12);
    }

    #[test]
    fn selection_probs() {
        assert_eq!(focus_selection_probs(&[Some(2.0), Some(1.0)], 0.0), vec![0.5, 0.5]);
        let p = focus_selection_probs(&[Some(2.0), Some(1.0)], f64::INFINITY);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = focus_selection_probs(&[Some(2.0), Some(1.0)], -2.0);
        assert!(p[1] > 0.5);
        let p = focus_selection_probs(&[Some(2.0), None], 1.0);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn effects_argmax_is_target_on() {
        let w = known(0.85, 0.15);
        let engine = LocalFocusEngine::new(3, w).unwrap();
        for x in 0..3 {
            let gains = engine.gains(Focus::Effects(x), &CausalGraph::empty(3)).unwrap();
            let best = argmax_set(&gains);
            assert_eq!(best.len(), 1);
            assert_eq!(engine.candidates()[best[0]], Intervention::fixing(3, &[(x, true)]));
        }
    }

    #[test]
    fn edge_focus_all_fixed_scores_zero() {
        let engine = LocalFocusEngine::new(3, known(0.85, 0.15)).unwrap();
        let gains = engine.gains(Focus::Edge(0), &CausalGraph::empty(3)).unwrap();
        for (c, gval) in engine.candidates().iter().zip(gains.iter()) {
            if c.free_count() == 0 {
                assert!(gval.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_focus_blocks_indirect_path() {
        let engine = LocalFocusEngine::new(3, known(0.85, 0.15)).unwrap();
        let b = g("x->y;y->z");
        let gains = engine.gains(Focus::Edge(1), &b).unwrap();
        let idx = |code: &str| {
            let c = Intervention::parse(code).unwrap();
            engine.candidates().iter().position(|x| *x == c).unwrap()
        };
        assert!(gains[idx("+-.")] > gains[idx("+..")] + 1e-6);
    }

    #[test]
    fn model_probabilities_are_proper() {
        let engine = LocalFocusEngine::new(3, known(0.8, 0.1)).unwrap();
        let recent = [Trial::parse("+..", "110").unwrap()];
        let specs = [
            InterventionModelSpec::Edge { eta: 3.0, rho: 1.0 },
            InterventionModelSpec::Effects { eta: 3.0, rho: -1.0 },
            InterventionModelSpec::Confirmation { eta: 5.0 },
            InterventionModelSpec::Mixed { eta: 2.0, rho: 0.5 },
            InterventionModelSpec::Global { theta: 4.0 },
            InterventionModelSpec::Baseline,
        ];
        for b in [CausalGraph::empty(3), g("x->y")] {
            for s in &specs {
                let p = engine.distribution(s, &b, &recent, &recent).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{s:?}");
            }
        }
        let mixed0 = engine
            .distribution(&InterventionModelSpec::Mixed { eta: 0.0, rho: 0.0 }, &g("x->y"), &recent, &recent)
            .unwrap();
        assert!(mixed0.iter().all(|p| (p - 1.0 / 27.0).abs() < 1e-12));
        let conf = engine
            .distribution(&InterventionModelSpec::Confirmation { eta: 5.0 }, &CausalGraph::empty(3), &[], &[])
            .unwrap();
        assert!(conf.iter().all(|p| (p - 1.0 / 27.0).abs() < 1e-12));
    }

    #[test]
    fn spec_serde_shape() {
        let s: InterventionModelSpec =
            serde_json::from_str(r#"{"kind":"effects","eta":20.0,"rho":0.0}"#).unwrap();
        assert_eq!(s, InterventionModelSpec::Effects { eta: 20.0, rho: 0.0 });
        assert!(InterventionModelSpec::Global { theta: -1.0 }.validate().is_err());
    }
}

//! Per-participant maximum-likelihood fitting of judgment and intervention
//! models, BIC model comparison and the model-recovery study.
//!
//! Everything that does not depend on the free parameters (posteriors,
//! recent-evidence likelihoods, local gains) is computed once per
//! participant, so each objective evaluation is cheap.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Condition, Judgment, ParticipantData, ProblemData, TestRecord};
use crate::devices::Device;
use crate::error::{DataError, FitError};
use crate::graph::{shared_interventions, CausalGraph, HypothesisSpace, Intervention, Trial};
use crate::inference::{evidence_likelihoods, posterior, BeliefDistribution};
use crate::learners::{
    se_update, stay_probability, JudgmentKind, JudgmentModelSpec, LearnerState, RationalScale,
    StayRule, TransitionMatrix, MAX_SEARCH_STEPS,
};
use crate::local_focus::{choice_probs, ChoiceFeatures, InterventionModelSpec, LocalFocusEngine};
use crate::math::{derive_seed, median, sigmoid, softmax, truncated_poisson};
use crate::model::{sample_outcome, shared_uu_grid, ParamBelief};
use crate::optim::{minimize_scalar, minimize_simplex};

/// Smallest probability credited to any observation.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

fn floored_ln(p: f64) -> f64 {
    p.max(LIKELIHOOD_FLOOR).ln()
}

/// Which strength belief the fitted models are given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefMode {
    /// Known strengths if the condition says so, the uniform-prior grid otherwise.
    #[default]
    Condition,
    Known,
    Unknown,
}

/// Strength belief for a condition under a belief mode.
pub fn belief_for(mode: BeliefMode, condition: &Condition) -> ParamBelief {
    let known = match mode {
        BeliefMode::Condition => condition.w_known,
        BeliefMode::Known => true,
        BeliefMode::Unknown => false,
    };
    if known {
        ParamBelief::Known(condition.params())
    } else {
        ParamBelief::Grid(shared_uu_grid())
    }
}

/// How ω is fitted when four-variable problems are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaMode {
    /// Fit ω on three-variable problems, then λ and ε on all problems with ω held.
    #[default]
    TwoPass,
    /// Fit all three parameters on all problems.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub restarts: usize,
    pub belief: BeliefMode,
    pub omega_mode: OmegaMode,
    pub stay_rule: StayRule,
    pub rational_scale: RationalScale,
    /// Iteration cap per simplex run.
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> FitOptions {
        FitOptions {
            restarts: 10,
            belief: BeliefMode::Condition,
            omega_mode: OmegaMode::TwoPass,
            stay_rule: StayRule::Likelihood,
            rational_scale: RationalScale::Probability,
            max_iters: 400,
        }
    }
}

/// Intervention-choice model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterventionKind {
    Edge,
    Effects,
    Confirmation,
    Mixed,
    Global,
    Baseline,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 6] = [
        InterventionKind::Edge,
        InterventionKind::Effects,
        InterventionKind::Confirmation,
        InterventionKind::Mixed,
        InterventionKind::Global,
        InterventionKind::Baseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InterventionKind::Edge => "edge",
            InterventionKind::Effects => "effects",
            InterventionKind::Confirmation => "confirmation",
            InterventionKind::Mixed => "mixed",
            InterventionKind::Global => "global",
            InterventionKind::Baseline => "baseline",
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            InterventionKind::Edge | InterventionKind::Effects | InterventionKind::Mixed => &["eta", "rho"],
            InterventionKind::Confirmation => &["eta"],
            InterventionKind::Global => &["theta"],
            InterventionKind::Baseline => &[],
        }
    }

    pub fn from_values(&self, v: &[f64]) -> InterventionModelSpec {
        match self {
            InterventionKind::Edge => InterventionModelSpec::Edge { eta: v[0], rho: v[1] },
            InterventionKind::Effects => InterventionModelSpec::Effects { eta: v[0], rho: v[1] },
            InterventionKind::Mixed => InterventionModelSpec::Mixed { eta: v[0], rho: v[1] },
            InterventionKind::Confirmation => InterventionModelSpec::Confirmation { eta: v[0] },
            InterventionKind::Global => InterventionModelSpec::Global { theta: v[0] },
            InterventionKind::Baseline => InterventionModelSpec::Baseline,
        }
    }
}

/// Any fittable model. Judgment models use their capitalised names
/// (`NS`, `Baseline`), intervention models lower case (`edge`, `baseline`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Judgment(JudgmentKind),
    Intervention(InterventionKind),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Judgment(k) => k.name(),
            ModelKind::Intervention(k) => k.name(),
        }
    }

    /// Exact names first, then case-insensitive judgment names.
    pub fn parse(s: &str) -> Option<ModelKind> {
        let s = s.trim();
        if let Some(k) = JudgmentKind::ALL.into_iter().find(|k| k.name() == s) {
            return Some(ModelKind::Judgment(k));
        }
        if let Some(k) = InterventionKind::ALL.into_iter().find(|k| k.name() == s) {
            return Some(ModelKind::Intervention(k));
        }
        JudgmentKind::parse(s).map(ModelKind::Judgment)
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::Judgment(k) => k.param_names(),
            ModelKind::Intervention(k) => k.param_names(),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// Parameter scales for the optimiser.

#[derive(Debug, Clone, Copy)]
enum Scale {
    Log { lo: f64, hi: f64 },
    Logit,
    Identity { lo: f64, hi: f64 },
}

const LOGIT_BOUND: f64 = 12.0;

impl Scale {
    fn for_param(kind: ModelKind, name: &str) -> Scale {
        match name {
            "lambda" => Scale::Log { lo: -7.0, hi: 4.6 },
            "omega" => Scale::Log { lo: -7.0, hi: 6.9 },
            "theta" => Scale::Log { lo: -7.0, hi: 9.2 },
            "eta" => Scale::Log { lo: -7.0, hi: 6.9 },
            "rho" if matches!(kind, ModelKind::Intervention(_)) => Scale::Identity { lo: -30.0, hi: 30.0 },
            _ => Scale::Logit,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Scale::Log { lo, hi } | Scale::Identity { lo, hi } => (lo, hi),
            Scale::Logit => (-LOGIT_BOUND, LOGIT_BOUND),
        }
    }

    fn natural(&self, z: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let z = z.clamp(lo, hi);
        match self {
            Scale::Log { .. } => z.exp(),
            Scale::Logit => sigmoid(z),
            Scale::Identity { .. } => z,
        }
    }

    /// Random start in the usual range of the parameter.
    fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = match self {
            Scale::Log { .. } => (0.1f64.ln(), 10f64.ln()),
            Scale::Logit => (-4.0, 2.0),
            Scale::Identity { .. } => (-3.0, 3.0),
        };
        rng.random_range(a..b)
    }
}


/// Minimises `f` (taking natural-scale values) over transformed bounds.
/// One parameter: Brent on `restarts` sub-brackets. More: Nelder-Mead from
/// `restarts` random starts. Returns the best natural values and cost.
fn optimize<R: Rng + ?Sized, F: Fn(&[f64]) -> f64>(
    scales: &[Scale],
    restarts: usize,
    max_iters: u64,
    rng: &mut R,
    f: F,
) -> (Vec<f64>, f64) {
    let natural = |z: &[f64]| -> Vec<f64> { z.iter().zip(scales).map(|(z, s)| s.natural(*z)).collect() };
    match scales.len() {
        0 => (Vec::new(), f(&[])),
        1 => {
            let s = scales[0];
            let (lo, hi) = s.bounds();
            let (z, v) = minimize_scalar(|z| f(&[s.natural(z)]), lo, hi, restarts);
            (vec![s.natural(z)], v)
        }
        _ => {
            let mut best: Option<(Vec<f64>, f64)> = None;
            for _ in 0..restarts.max(1) {
                let z0: Vec<f64> = scales.iter().map(|s| s.start(rng)).collect();
                let (z, v) = minimize_simplex(|z| f(&natural(z)), &z0, 1.0, max_iters);
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((natural(&z), v));
                }
            }
            best.expect("at least one restart")
        }
    }
}

// Judgment data.

#[derive(Debug, Clone)]
struct JudgmentObs {
    space: Arc<HypothesisSpace>,
    prev: usize,
    target: usize,
    se: usize,
    /// Likelihood of the latest outcome under the previous judgment.
    stay: f64,
    posterior: Vec<f64>,
    recent_lik: Vec<f64>,
}

impl JudgmentObs {
    fn m(&self) -> usize {
        self.space.len()
    }

    fn n(&self) -> usize {
        self.space.n()
    }

    fn lapse(&self, p: f64, epsilon: f64) -> f64 {
        (1.0 - epsilon) * p + epsilon / self.m() as f64
    }

    fn endpoints(&self, omega: f64) -> Vec<f64> {
        TransitionMatrix::from_likelihoods(self.space.clone(), &self.recent_lik, omega).endpoint_probs(
            self.prev,
            self.target,
            MAX_SEARCH_STEPS,
        )
    }
}

/// Parameter-free quantities for every scorable judgment of one participant.
#[derive(Debug, Clone)]
pub struct JudgmentFitData {
    participant: String,
    obs: Vec<JudgmentObs>,
}

fn space_index(space: &HypothesisSpace, g: &CausalGraph) -> Result<usize, FitError> {
    space.index_of(g).ok_or_else(|| {
        crate::GraphError::Dimension {
            expected: space.n(),
            found: g.n(),
        }
        .into()
    })
}

fn check_problem(p: &ProblemData) -> Result<(), FitError> {
    for t in &p.tests {
        if t.trial.n() != p.n {
            return Err(crate::GraphError::Dimension {
                expected: p.n,
                found: t.trial.n(),
            }
            .into());
        }
        if let Judgment::Graph(g) = &t.judgment {
            if g.n() != p.n {
                return Err(crate::GraphError::Dimension {
                    expected: p.n,
                    found: g.n(),
                }
                .into());
            }
        }
    }
    Ok(())
}

impl JudgmentFitData {
    /// Walks every problem: the previous judgment starts empty, recent
    /// evidence resets when the reported judgment changes, and unspecified
    /// or cyclic judgments are skipped.
    pub fn build(data: &ParticipantData, belief: &ParamBelief) -> Result<JudgmentFitData, FitError> {
        let mut obs = Vec::new();
        for problem in &data.problems {
            check_problem(problem)?;
            let space = HypothesisSpace::shared(problem.n)?;
            let uniform = BeliefDistribution::uniform(space.clone());
            let mut reported = CausalGraph::empty(problem.n);
            let mut recent: Vec<Trial> = Vec::new();
            let mut full: Vec<Trial> = Vec::new();
            for test in &problem.tests {
                recent.push(test.trial.clone());
                full.push(test.trial.clone());
                let Judgment::Graph(g) = &test.judgment else {
                    continue;
                };
                obs.push(JudgmentObs {
                    space: space.clone(),
                    prev: space_index(&space, &reported)?,
                    target: space_index(&space, g)?,
                    se: space_index(&space, &se_update(&reported, &test.trial))?,
                    stay: stay_probability(&reported, &test.trial, belief),
                    posterior: posterior(&uniform, &full, belief)?.probs().to_vec(),
                    recent_lik: evidence_likelihoods(&space, &recent, belief)?,
                });
                if *g != reported {
                    reported = g.clone();
                    recent.clear();
                }
            }
        }
        Ok(JudgmentFitData {
            participant: data.participant_id.clone(),
            obs,
        })
    }

    pub fn participant(&self) -> &str {
        &self.participant
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// NLL of the uniform judgment model.
    pub fn baseline_nll(&self) -> f64 {
        self.obs.iter().map(|o| (o.m() as f64).ln()).sum()
    }

    fn subset(&self, n: usize) -> JudgmentFitData {
        JudgmentFitData {
            participant: self.participant.clone(),
            obs: self.obs.iter().filter(|o| o.n() == n).cloned().collect(),
        }
    }

    fn has_n(&self, n: usize) -> bool {
        self.obs.iter().any(|o| o.n() == n)
    }

    fn ns_tables(&self, omega: f64) -> Vec<Vec<f64>> {
        self.obs.iter().map(|o| o.endpoints(omega)).collect()
    }

    fn ns_nll_tables(&self, tables: &[Vec<f64>], lambda: f64, epsilon: f64) -> f64 {
        let pois = truncated_poisson(lambda, MAX_SEARCH_STEPS);
        self.obs
            .iter()
            .zip(tables)
            .map(|(o, v)| {
                let p: f64 = pois.iter().zip(v).map(|(a, b)| a * b).sum();
                -floored_ln(o.lapse(p, epsilon))
            })
            .sum()
    }

    fn ns_nll(&self, lambda: f64, omega: f64, epsilon: f64) -> f64 {
        let pois = truncated_poisson(lambda, MAX_SEARCH_STEPS);
        self.obs
            .iter()
            .map(|o| {
                let v = o.endpoints(omega);
                let p: f64 = pois.iter().zip(&v).map(|(a, b)| a * b).sum();
                -floored_ln(o.lapse(p, epsilon))
            })
            .sum()
    }
}

/// Negative log likelihood of the reported judgments.
pub fn judgment_nll(spec: &JudgmentModelSpec, data: &JudgmentFitData) -> Result<f64, FitError> {
    spec.validate()?;
    let nll = match *spec {
        JudgmentModelSpec::Ns { lambda, omega, epsilon } => data.ns_nll(lambda, omega, epsilon),
        JudgmentModelSpec::NsRe { lambda, epsilon } => data.ns_nll(lambda, 0.0, epsilon),
        JudgmentModelSpec::Se { rho, epsilon } => data
            .obs
            .iter()
            .map(|o| {
                let mut p = 0.0;
                if o.target == o.se {
                    p += rho;
                }
                if o.target == o.prev {
                    p += 1.0 - rho;
                }
                -floored_ln(o.lapse(p, epsilon))
            })
            .sum(),
        JudgmentModelSpec::Wsls { epsilon, stay_rule } => data
            .obs
            .iter()
            .map(|o| {
                let stay = match stay_rule {
                    StayRule::Likelihood => o.stay,
                    StayRule::Complement => 1.0 - o.stay,
                };
                let mut p = (1.0 - stay) * o.posterior[o.target];
                if o.target == o.prev {
                    p += stay;
                }
                -floored_ln(o.lapse(p, epsilon))
            })
            .sum(),
        JudgmentModelSpec::Rational { theta, epsilon, scale } => data
            .obs
            .iter()
            .map(|o| {
                let p = if theta == 0.0 {
                    1.0 / o.m() as f64
                } else {
                    let scores: Vec<f64> = match scale {
                        RationalScale::Probability => o.posterior.clone(),
                        RationalScale::LogProbability => o
                            .posterior
                            .iter()
                            .map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
                            .collect(),
                    };
                    softmax(&scores, theta)[o.target]
                };
                -floored_ln(o.lapse(p, epsilon))
            })
            .sum(),
        JudgmentModelSpec::Baseline => data.baseline_nll(),
    };
    Ok(nll)
}

// Intervention data.

#[derive(Debug, Clone)]
struct InterventionObs {
    n: usize,
    n_candidates: usize,
    chosen: usize,
    features: ChoiceFeatures,
}

/// Focus entropies and gains at every intervention choice of one participant.
#[derive(Debug, Clone)]
pub struct InterventionFitData {
    participant: String,
    obs: Vec<InterventionObs>,
}

impl InterventionFitData {
    /// `b` is the latest reported judgment (empty at the start of each
    /// problem) and recent evidence is what has accrued since it changed.
    /// Global gains are only computed when `with_global` is set.
    pub fn build(
        data: &ParticipantData,
        belief: &ParamBelief,
        with_global: bool,
    ) -> Result<InterventionFitData, FitError> {
        let mut engines: HashMap<usize, LocalFocusEngine> = HashMap::new();
        let mut obs = Vec::new();
        for problem in &data.problems {
            check_problem(problem)?;
            if !engines.contains_key(&problem.n) {
                engines.insert(problem.n, LocalFocusEngine::new(problem.n, belief.clone())?);
            }
            let engine = &engines[&problem.n];
            let candidates = shared_interventions(problem.n);
            let mut reported = CausalGraph::empty(problem.n);
            let mut recent: Vec<Trial> = Vec::new();
            let mut full: Vec<Trial> = Vec::new();
            for test in &problem.tests {
                let chosen = candidate_index(&candidates, test.trial.intervention())?;
                obs.push(InterventionObs {
                    n: problem.n,
                    n_candidates: candidates.len(),
                    chosen,
                    features: engine.features(&reported, &recent, &full, with_global)?,
                });
                recent.push(test.trial.clone());
                full.push(test.trial.clone());
                if let Judgment::Graph(g) = &test.judgment {
                    if *g != reported {
                        reported = g.clone();
                        recent.clear();
                    }
                }
            }
        }
        Ok(InterventionFitData {
            participant: data.participant_id.clone(),
            obs,
        })
    }

    pub fn participant(&self) -> &str {
        &self.participant
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn baseline_nll(&self) -> f64 {
        self.obs.iter().map(|o| (o.n_candidates as f64).ln()).sum()
    }

    fn has_global(&self) -> bool {
        self.obs.iter().all(|o| o.features.global.is_some())
    }
}

fn candidate_index(candidates: &[Intervention], c: &Intervention) -> Result<usize, FitError> {
    candidates.iter().position(|x| x == c).ok_or_else(|| {
        crate::GraphError::Dimension {
            expected: candidates.first().map(|x| x.n()).unwrap_or(0),
            found: c.n(),
        }
        .into()
    })
}

/// Negative log likelihood of the chosen interventions.
pub fn intervention_nll(spec: &InterventionModelSpec, data: &InterventionFitData) -> Result<f64, FitError> {
    spec.validate()?;
    if matches!(spec, InterventionModelSpec::Global { .. }) && !data.has_global() {
        return Err(FitError::Optimizer("global gains were not precomputed".into()));
    }
    Ok(data
        .obs
        .iter()
        .map(|o| -floored_ln(choice_probs(spec, o.n, o.n_candidates, Some(&o.features))[o.chosen]))
        .sum())
}

// Results.

/// One model fitted to one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub participant: String,
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub nll: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub bic: f64,
    pub pseudo_r2: f64,
}

impl FitResult {
    fn new(
        participant: &str,
        kind: ModelKind,
        values: &[f64],
        nll: f64,
        n_obs: usize,
        baseline_nll: f64,
    ) -> FitResult {
        let names = kind.param_names();
        let params = names.iter().zip(values).map(|(k, v)| (k.to_string(), *v)).collect();
        FitResult {
            participant: participant.to_string(),
            model: kind.name().to_string(),
            params,
            nll,
            n_params: names.len(),
            n_obs,
            bic: bic(nll, names.len(), n_obs),
            pseudo_r2: pseudo_r2(nll, baseline_nll),
        }
    }

    pub fn kind(&self) -> Option<ModelKind> {
        ModelKind::parse(&self.model)
    }

    /// Parameter values in the model's canonical order.
    pub fn values(&self) -> Option<Vec<f64>> {
        self.kind()?
            .param_names()
            .iter()
            .map(|n| self.params.get(*n).copied())
            .collect()
    }

    /// The fitted judgment model, if this is one.
    pub fn judgment_spec(&self) -> Option<JudgmentModelSpec> {
        match self.kind()? {
            ModelKind::Judgment(k) => Some(JudgmentModelSpec::from_values(k, &self.values()?)),
            _ => None,
        }
    }
}

/// `2·NLL + k·ln T`.
pub fn bic(nll: f64, n_params: usize, n_obs: usize) -> f64 {
    2.0 * nll + n_params as f64 * (n_obs as f64).ln()
}

/// McFadden's `1 − NLL / NLL_baseline`.
pub fn pseudo_r2(nll: f64, baseline_nll: f64) -> f64 {
    if baseline_nll == 0.0 {
        0.0
    } else {
        1.0 - nll / baseline_nll
    }
}

fn check_fit(nll: f64) -> Result<f64, FitError> {
    if nll.is_finite() && nll < 1e299 {
        Ok(nll)
    } else {
        Err(FitError::Optimizer("objective is not finite at any start".into()))
    }
}

fn with_flags(spec: JudgmentModelSpec, options: &FitOptions) -> JudgmentModelSpec {
    match spec {
        JudgmentModelSpec::Wsls { epsilon, .. } => JudgmentModelSpec::Wsls {
            epsilon,
            stay_rule: options.stay_rule,
        },
        JudgmentModelSpec::Rational { theta, epsilon, .. } => JudgmentModelSpec::Rational {
            theta,
            epsilon,
            scale: options.rational_scale,
        },
        s => s,
    }
}

/// Fits one judgment model to prepared data.
pub fn fit_judgment<R: Rng + ?Sized>(
    kind: JudgmentKind,
    data: &JudgmentFitData,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitResult, FitError> {
    if data.is_empty() {
        return Err(FitError::NoObservations);
    }
    let mk = ModelKind::Judgment(kind);
    let scales: Vec<Scale> = kind.param_names().iter().map(|n| Scale::for_param(mk, n)).collect();
    let (values, nll) = match kind {
        JudgmentKind::Ns => fit_ns(data, &scales, options, rng),
        JudgmentKind::NsRe => {
            let tables = data.ns_tables(0.0);
            optimize(&scales, options.restarts, options.max_iters, rng, |v| {
                data.ns_nll_tables(&tables, v[0], v[1])
            })
        }
        _ => optimize(&scales, options.restarts, options.max_iters, rng, |v| {
            let spec = with_flags(JudgmentModelSpec::from_values(kind, v), options);
            judgment_nll(&spec, data).unwrap_or(f64::INFINITY)
        }),
    };
    let nll = check_fit(nll)?;
    Ok(FitResult::new(&data.participant, mk, &values, nll, data.len(), data.baseline_nll()))
}

fn fit_ns<R: Rng + ?Sized>(
    data: &JudgmentFitData,
    scales: &[Scale],
    options: &FitOptions,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let two_pass = options.omega_mode == OmegaMode::TwoPass && data.has_n(3) && data.obs.iter().any(|o| o.n() > 3);
    if !two_pass {
        return optimize(scales, options.restarts, options.max_iters, rng, |v| data.ns_nll(v[0], v[1], v[2]));
    }
    let small = data.subset(3);
    let (first, _) = optimize(scales, options.restarts, options.max_iters, rng, |v| {
        small.ns_nll(v[0], v[1], v[2])
    });
    let omega = first[1];
    let tables = data.ns_tables(omega);
    let (second, nll) = optimize(&[scales[0], scales[2]], options.restarts, options.max_iters, rng, |v| {
        data.ns_nll_tables(&tables, v[0], v[1])
    });
    (vec![second[0], omega, second[1]], nll)
}

/// Fits one intervention model to prepared data.
pub fn fit_intervention<R: Rng + ?Sized>(
    kind: InterventionKind,
    data: &InterventionFitData,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitResult, FitError> {
    if data.is_empty() {
        return Err(FitError::NoObservations);
    }
    let mk = ModelKind::Intervention(kind);
    let scales: Vec<Scale> = kind.param_names().iter().map(|n| Scale::for_param(mk, n)).collect();
    let (values, nll) = optimize(&scales, options.restarts, options.max_iters, rng, |v| {
        intervention_nll(&kind.from_values(v), data).unwrap_or(f64::INFINITY)
    });
    let nll = check_fit(nll)?;
    Ok(FitResult::new(&data.participant, mk, &values, nll, data.len(), data.baseline_nll()))
}

/// Fits one model to one participant.
pub fn fit_mle<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &ParticipantData,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitResult, FitError> {
    let belief = belief_for(options.belief, &data.condition);
    match kind {
        ModelKind::Judgment(k) => fit_judgment(k, &JudgmentFitData::build(data, &belief)?, options, rng),
        ModelKind::Intervention(k) => {
            let d = InterventionFitData::build(data, &belief, k == InterventionKind::Global)?;
            fit_intervention(k, &d, options, rng)
        }
    }
}

/// Seed for one participant's fits.
pub fn participant_seed(master: u64, participant: &str) -> u64 {
    derive_seed(master, participant)
}

/// Fits every listed model to one participant, preparing the data once.
/// The rng is reseeded per model so results do not depend on list order.
pub fn fit_participant(
    data: &ParticipantData,
    kinds: &[ModelKind],
    options: &FitOptions,
    seed: u64,
) -> Result<Vec<FitResult>, FitError> {
    let belief = belief_for(options.belief, &data.condition);
    let wants_judgment = kinds.iter().any(|k| matches!(k, ModelKind::Judgment(_)));
    let wants_intervention = kinds.iter().any(|k| matches!(k, ModelKind::Intervention(_)));
    let with_global = kinds.contains(&ModelKind::Intervention(InterventionKind::Global));
    let jd = if wants_judgment {
        Some(JudgmentFitData::build(data, &belief)?)
    } else {
        None
    };
    let id = if wants_intervention {
        Some(InterventionFitData::build(data, &belief, with_global)?)
    } else {
        None
    };
    let base = participant_seed(seed, &data.participant_id);
    kinds
        .iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, k.name()));
            match k {
                ModelKind::Judgment(j) => fit_judgment(*j, jd.as_ref().unwrap(), options, &mut rng),
                ModelKind::Intervention(i) => fit_intervention(*i, id.as_ref().unwrap(), options, &mut rng),
            }
        })
        .collect()
}

/// Fits all participants in parallel; results keep participant order, then model order.
pub fn fit_population(
    data: &[ParticipantData],
    kinds: &[ModelKind],
    options: &FitOptions,
    seed: u64,
) -> Result<Vec<FitResult>, FitError> {
    let per: Vec<Result<Vec<FitResult>, FitError>> = data
        .par_iter()
        .map(|p| fit_participant(p, kinds, options, seed))
        .collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// Lowest BIC; ties go to fewer parameters, then to the earlier entry.
pub fn best_fit<'a, I: IntoIterator<Item = &'a FitResult>>(fits: I) -> Option<&'a FitResult> {
    let mut best: Option<&FitResult> = None;
    for f in fits {
        best = match best {
            None => Some(f),
            Some(b) if f.bic < b.bic || (f.bic == b.bic && f.n_params < b.n_params) => Some(f),
            keep => keep,
        };
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub n_params: usize,
    pub participants: usize,
    pub total_bic: f64,
    pub total_log_lik: f64,
    pub median_pseudo_r2: f64,
    pub n_best: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFit {
    pub participant: String,
    pub model: String,
    pub bic: f64,
}

/// Population totals per model, ranked by summed BIC, plus each participant's best model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub models: Vec<ModelSummary>,
    pub best: Vec<BestFit>,
}

pub fn compare_models(fits: &[FitResult]) -> ModelComparison {
    let mut order: Vec<String> = Vec::new();
    let mut participants: Vec<String> = Vec::new();
    for f in fits {
        if !order.contains(&f.model) {
            order.push(f.model.clone());
        }
        if !participants.contains(&f.participant) {
            participants.push(f.participant.clone());
        }
    }
    let best: Vec<BestFit> = participants
        .iter()
        .filter_map(|p| {
            best_fit(fits.iter().filter(|f| &f.participant == p)).map(|b| BestFit {
                participant: p.clone(),
                model: b.model.clone(),
                bic: b.bic,
            })
        })
        .collect();
    let mut models: Vec<(usize, ModelSummary)> = order
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let of: Vec<&FitResult> = fits.iter().filter(|f| &f.model == m).collect();
            let r2: Vec<f64> = of.iter().map(|f| f.pseudo_r2).collect();
            (
                i,
                ModelSummary {
                    model: m.clone(),
                    n_params: of[0].n_params,
                    participants: of.len(),
                    total_bic: of.iter().map(|f| f.bic).sum(),
                    total_log_lik: -of.iter().map(|f| f.nll).sum::<f64>(),
                    median_pseudo_r2: median(&r2),
                    n_best: best.iter().filter(|b| &b.model == m).count(),
                },
            )
        })
        .collect();
    models.sort_by(|(ia, a), (ib, b)| {
        a.total_bic
            .total_cmp(&b.total_bic)
            .then(a.n_params.cmp(&b.n_params))
            .then(ia.cmp(ib))
    });
    ModelComparison {
        models: models.into_iter().map(|(_, m)| m).collect(),
        best,
    }
}

// Recovery.

/// Replays a participant's interventions against the true devices with
/// fresh outcomes, letting `spec` produce the judgments.
pub fn simulate_judgments<R: Rng + ?Sized>(
    template: &ParticipantData,
    spec: &JudgmentModelSpec,
    belief_mode: BeliefMode,
    rng: &mut R,
) -> Result<ParticipantData, FitError> {
    let w = template.condition.params();
    let belief = belief_for(belief_mode, &template.condition);
    let mut problems = Vec::with_capacity(template.problems.len());
    for problem in &template.problems {
        let device = Device::lookup(problem.device_id, problem.n).ok_or_else(|| FitError::UnknownDevice {
            experiment: template.experiment.clone(),
            device: problem.device_id,
            n: problem.n,
        })?;
        let space = HypothesisSpace::shared(problem.n)?;
        let mut state = LearnerState::initial(problem.n);
        let mut full: Vec<Trial> = Vec::new();
        let mut tests = Vec::with_capacity(problem.tests.len());
        for t in &problem.tests {
            let c = t.trial.intervention().clone();
            let outcome = sample_outcome(&device.graph, w, &c, rng)?;
            let trial = Trial::new(c, outcome)?;
            spec.step(&mut state, &trial, &full, &space, &belief, rng)?;
            full.push(trial.clone());
            tests.push(TestRecord::new(trial, Judgment::Graph(state.belief.clone())));
        }
        problems.push(ProblemData {
            device_id: problem.device_id,
            n: problem.n,
            tests,
        });
    }
    Ok(ParticipantData {
        participant_id: template.participant_id.clone(),
        experiment: template.experiment.clone(),
        condition: template.condition,
        problems,
    })
}

/// One simulated participant in a recovery study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCase {
    pub participant: String,
    pub generator: String,
    pub recovered: String,
}

/// Generating model × best-fitting model counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub models: Vec<String>,
    /// `counts[generator][recovered]`.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub cases: Vec<RecoveryCase>,
}

impl RecoveryReport {
    fn from_cases(models: Vec<String>, cases: Vec<RecoveryCase>) -> RecoveryReport {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for g in &models {
            counts.insert(g.clone(), models.iter().map(|m| (m.clone(), 0)).collect());
        }
        for c in &cases {
            *counts
                .entry(c.generator.clone())
                .or_default()
                .entry(c.recovered.clone())
                .or_insert(0) += 1;
        }
        RecoveryReport { models, counts, cases }
    }

    /// Share of cases generated by `model` that were recovered as `model`.
    pub fn hit_rate(&self, model: &str) -> f64 {
        let row = match self.counts.get(model) {
            Some(r) => r,
            None => return f64::NAN,
        };
        let total: usize = row.values().sum();
        row.get(model).copied().unwrap_or(0) as f64 / total as f64
    }

    pub fn count(&self, generator: &str, recovered: &str) -> usize {
        self.counts
            .get(generator)
            .and_then(|r| r.get(recovered))
            .copied()
            .unwrap_or(0)
    }
}

/// Simulates each participant under each of their fitted judgment models,
/// refits all judgment models to each simulation and tallies the winners.
pub fn recovery_study(
    data: &[ParticipantData],
    fits: &[FitResult],
    options: &FitOptions,
    seed: u64,
) -> Result<RecoveryReport, FitError> {
    let kinds: Vec<ModelKind> = JudgmentKind::ALL.into_iter().map(ModelKind::Judgment).collect();
    let by_id: HashMap<&str, &ParticipantData> = data.iter().map(|p| (p.participant_id.as_str(), p)).collect();
    let jobs: Vec<(&ParticipantData, &FitResult, JudgmentModelSpec)> = fits
        .iter()
        .filter_map(|f| {
            let spec = with_flags(f.judgment_spec()?, options);
            Some((*by_id.get(f.participant.as_str())?, f, spec))
        })
        .collect();
    let cases: Vec<Result<RecoveryCase, FitError>> = jobs
        .par_iter()
        .map(|(p, f, spec)| {
            let s = derive_seed(seed, &format!("{}/{}", f.participant, f.model));
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let sim = simulate_judgments(p, spec, options.belief, &mut rng)?;
            let refits = fit_participant(&sim, &kinds, options, s)?;
            let winner = best_fit(&refits).expect("six models were fitted");
            Ok(RecoveryCase {
                participant: f.participant.clone(),
                generator: f.model.clone(),
                recovered: winner.model.clone(),
            })
        })
        .collect();
    let cases = cases.into_iter().collect::<Result<Vec<_>, _>>()?;
    let models = JudgmentKind::ALL.iter().map(|k| k.name().to_string()).collect();
    Ok(RecoveryReport::from_cases(models, cases))
}

// Tables.

/// Fit table: `model, participant, <param columns>, nll, n_params, n_obs, bic, pseudo_r2`.
pub fn write_fits_csv<W: Write>(writer: W, fits: &[FitResult]) -> Result<(), DataError> {
    let mut names: Vec<String> = Vec::new();
    for f in fits {
        for k in f.params.keys() {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
    }
    names.sort();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string(), "participant".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["nll", "n_params", "n_obs", "bic", "pseudo_r2"].map(String::from));
    w.write_record(&header)?;
    for f in fits {
        let mut row = vec![f.model.clone(), f.participant.clone()];
        row.extend(names.iter().map(|n| f.params.get(n).map(|v| v.to_string()).unwrap_or_default()));
        row.push(f.nll.to_string());
        row.push(f.n_params.to_string());
        row.push(f.n_obs.to_string());
        row.push(f.bic.to_string());
        row.push(f.pseudo_r2.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Confusion matrix: one row per generating model, one column per recovered model.
pub fn write_confusion_csv<W: Write>(writer: W, report: &RecoveryReport) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["generator".to_string()];
    header.extend(report.models.iter().cloned());
    w.write_record(&header)?;
    for g in &report.models {
        let mut row = vec![g.clone()];
        row.extend(report.models.iter().map(|r| report.count(g, r).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Reporting;
    use crate::graph::{enumerate_interventions, Outcome};
    use crate::model::Params;

    fn condition() -> Condition {
        Condition {
            w_s: 0.9,
            w_b: 0.1,
            w_known: true,
            reporting: Reporting::Disappear,
        }
    }

    /// A participant whose judgments come from `spec` on random interventions.
    fn synthetic(spec: &JudgmentModelSpec, problems: usize, tests: usize, seed: u64) -> ParticipantData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cands = enumerate_interventions(3);
        let template = ParticipantData {
            participant_id: format!("s{seed}"),
            experiment: "exp1".into(),
            condition: condition(),
            problems: (0..problems)
                .map(|i| ProblemData {
                    device_id: 1 + (i % 5) as u32,
                    n: 3,
                    tests: (0..tests)
                        .map(|_| {
                            let c = cands[rng.random_range(0..cands.len())].clone();
                            let o = Outcome::from_bits(3, c.on_mask());
                            TestRecord::new(Trial::new(c, o).unwrap(), Judgment::Graph(CausalGraph::empty(3)))
                        })
                        .collect(),
                })
                .collect(),
        };
        simulate_judgments(&template, spec, BeliefMode::Condition, &mut rng).unwrap()
    }

    fn known() -> ParamBelief {
        ParamBelief::Known(Params::new(0.9, 0.1).unwrap())
    }

    #[test]
    fn baseline_and_full_lapse_match_uniform() {
        let p = synthetic(&JudgmentModelSpec::Se { rho: 0.7, epsilon: 0.1 }, 3, 6, 1);
        let d = JudgmentFitData::build(&p, &known()).unwrap();
        let t = d.len() as f64;
        let uni = t * 25f64.ln();
        assert!((judgment_nll(&JudgmentModelSpec::Baseline, &d).unwrap() - uni).abs() < 1e-9);
        let ns = JudgmentModelSpec::Ns { lambda: 2.0, omega: 3.0, epsilon: 1.0 };
        assert!((judgment_nll(&ns, &d).unwrap() - uni).abs() < 1e-9);
        let se = JudgmentModelSpec::Se { rho: 0.4, epsilon: 1.0 };
        assert!((judgment_nll(&se, &d).unwrap() - uni).abs() < 1e-9);
    }

    #[test]
    fn deterministic_se_scores_zero() {
        let spec = JudgmentModelSpec::Se { rho: 1.0, epsilon: 0.0 };
        let p = synthetic(&spec, 4, 6, 2);
        let d = JudgmentFitData::build(&p, &known()).unwrap();
        assert_eq!(judgment_nll(&spec, &d).unwrap(), 0.0);
    }

    #[test]
    fn interventions_baseline_and_flat_global() {
        let p = synthetic(&JudgmentModelSpec::Baseline, 2, 6, 3);
        let d = InterventionFitData::build(&p, &known(), true).unwrap();
        let uni = d.len() as f64 * 27f64.ln();
        assert!((intervention_nll(&InterventionModelSpec::Baseline, &d).unwrap() - uni).abs() < 1e-9);
        let g = InterventionModelSpec::Global { theta: 0.0 };
        assert!((intervention_nll(&g, &d).unwrap() - uni).abs() < 1e-9);
    }

    #[test]
    fn bic_arithmetic() {
        assert_eq!(bic(10.0, 2, 50), 20.0 + 2.0 * 50f64.ln());
        assert_eq!(pseudo_r2(5.0, 10.0), 0.5);
        let p = synthetic(&JudgmentModelSpec::Baseline, 2, 6, 4);
        let f = fit_participant(&p, &[ModelKind::Judgment(JudgmentKind::Baseline)], &FitOptions::default(), 0).unwrap();
        assert_eq!(f[0].pseudo_r2, 0.0);
        assert_eq!(f[0].bic, bic(f[0].nll, f[0].n_params, f[0].n_obs));
    }

    #[test]
    fn fewer_parameters_win_ties() {
        let mk = |m: &str, k: usize| FitResult {
            participant: "p".into(),
            model: m.into(),
            params: BTreeMap::new(),
            nll: 3.0,
            n_params: k,
            n_obs: 10,
            bic: bic(3.0, k, 10),
            pseudo_r2: 0.0,
        };
        let fits = vec![mk("SE", 2), mk("WSLS", 1)];
        let c = compare_models(&fits);
        assert_eq!(c.models[0].model, "WSLS");
        assert_eq!(c.best[0].model, "WSLS");
        let tie = vec![mk("A", 1), mk("B", 1)];
        assert_eq!(best_fit(&tie).unwrap().model, "A");
    }

    #[test]
    fn single_observation_is_finite() {
        let mut p = synthetic(&JudgmentModelSpec::Baseline, 1, 1, 5);
        p.problems[0].tests[0].judgment = Judgment::Graph(CausalGraph::parse(3, "z->x;z->y;y->x").unwrap());
        for k in JudgmentKind::ALL {
            let r = fit_mle(ModelKind::Judgment(k), &p, &FitOptions { restarts: 2, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert!(r.nll.is_finite(), "{k}");
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let p = synthetic(&JudgmentModelSpec::Wsls { epsilon: 0.1, stay_rule: StayRule::Likelihood }, 3, 6, 6);
        let kinds = [ModelKind::Judgment(JudgmentKind::Se), ModelKind::Judgment(JudgmentKind::Wsls)];
        let opts = FitOptions { restarts: 3, ..Default::default() };
        assert_eq!(fit_participant(&p, &kinds, &opts, 9).unwrap(), fit_participant(&p, &kinds, &opts, 9).unwrap());
    }

    #[test]
    fn se_generated_prefers_se() {
        let p = synthetic(&JudgmentModelSpec::Se { rho: 0.9, epsilon: 0.05 }, 5, 6, 7);
        let kinds: Vec<ModelKind> = JudgmentKind::ALL.into_iter().map(ModelKind::Judgment).collect();
        let fits = fit_participant(&p, &kinds, &FitOptions { restarts: 3, ..Default::default() }, 1).unwrap();
        assert_eq!(best_fit(&fits).unwrap().model, "SE");
        let eps1 = judgment_nll(&JudgmentModelSpec::Se { rho: 0.5, epsilon: 1.0 }, &JudgmentFitData::build(&p, &known()).unwrap()).unwrap();
        let se = fits.iter().find(|f| f.model == "SE").unwrap();
        assert!(se.nll <= eps1);
    }

    #[test]
    fn model_names_round_trip() {
        for k in JudgmentKind::ALL {
            assert_eq!(ModelKind::parse(k.name()), Some(ModelKind::Judgment(k)));
        }
        for k in InterventionKind::ALL {
            assert_eq!(ModelKind::parse(k.name()), Some(ModelKind::Intervention(k)));
        }
        assert_eq!(ModelKind::parse("ns-re"), Some(ModelKind::Judgment(JudgmentKind::NsRe)));
    }

    #[test]
    fn fit_table_columns() {
        let p = synthetic(&JudgmentModelSpec::Baseline, 1, 4, 8);
        let kinds = [ModelKind::Judgment(JudgmentKind::Wsls), ModelKind::Judgment(JudgmentKind::Baseline)];
        let fits = fit_participant(&p, &kinds, &FitOptions { restarts: 1, ..Default::default() }, 0).unwrap();
        let mut buf = Vec::new();
        write_fits_csv(&mut buf, &fits).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("model,participant,epsilon,nll,n_params,n_obs,bic,pseudo_r2\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

//! Judgment models: how a learner's reported graph changes after each trial.
//!
//! Every model is available as a likelihood (a distribution over the next
//! judgment, for fitting) and as a step simulator (for the harness).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::InferenceError;
use crate::graph::{CausalGraph, EdgeState, HypothesisSpace, NodeSetting, Trial};
use crate::inference::{
    conditional_from_completions, evidence_likelihoods, marginal_evidence_likelihood, posterior,
    sample_index, BeliefDistribution, EdgeDist, EvidenceLog, TrialKey,
};
use crate::math::{argmax_set, softmax, truncated_poisson};
use crate::model::{outcome_likelihood, ParamBelief};

/// Largest number of resampling steps in one update.
pub const MAX_SEARCH_STEPS: usize = 50;

/// Which reading of the win-stay rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StayRule {
    /// Stay with probability `P(d | b_prev)`.
    #[default]
    Likelihood,
    /// Stay with probability `1 − P(d | b_prev)`.
    Complement,
}

/// Scale the rational model's softmax acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RationalScale {
    /// Posterior probabilities.
    #[default]
    Probability,
    /// Log posterior probabilities.
    LogProbability,
}

/// A judgment model with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum JudgmentModelSpec {
    #[serde(rename = "NS")]
    Ns { lambda: f64, omega: f64, epsilon: f64 },
    #[serde(rename = "NS-RE")]
    NsRe { lambda: f64, epsilon: f64 },
    #[serde(rename = "SE")]
    Se { rho: f64, epsilon: f64 },
    #[serde(rename = "WSLS")]
    Wsls {
        epsilon: f64,
        #[serde(default)]
        stay_rule: StayRule,
    },
    #[serde(rename = "Rational")]
    Rational {
        theta: f64,
        epsilon: f64,
        #[serde(default)]
        scale: RationalScale,
    },
    #[serde(rename = "Baseline")]
    Baseline,
}

/// The six judgment model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgmentKind {
    #[serde(rename = "NS")]
    Ns,
    #[serde(rename = "NS-RE")]
    NsRe,
    #[serde(rename = "SE")]
    Se,
    #[serde(rename = "WSLS")]
    Wsls,
    #[serde(rename = "Rational")]
    Rational,
    #[serde(rename = "Baseline")]
    Baseline,
}

impl JudgmentKind {
    pub const ALL: [JudgmentKind; 6] = [
        JudgmentKind::Ns,
        JudgmentKind::NsRe,
        JudgmentKind::Se,
        JudgmentKind::Wsls,
        JudgmentKind::Rational,
        JudgmentKind::Baseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            JudgmentKind::Ns => "NS",
            JudgmentKind::NsRe => "NS-RE",
            JudgmentKind::Se => "SE",
            JudgmentKind::Wsls => "WSLS",
            JudgmentKind::Rational => "Rational",
            JudgmentKind::Baseline => "Baseline",
        }
    }

    pub fn parse(s: &str) -> Option<JudgmentKind> {
        JudgmentKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Parameter names in the order used by [`JudgmentModelSpec::from_values`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            JudgmentKind::Ns => &["lambda", "omega", "epsilon"],
            JudgmentKind::NsRe => &["lambda", "epsilon"],
            JudgmentKind::Se => &["rho", "epsilon"],
            JudgmentKind::Wsls => &["epsilon"],
            JudgmentKind::Rational => &["theta", "epsilon"],
            JudgmentKind::Baseline => &[],
        }
    }
}

impl std::fmt::Display for JudgmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl JudgmentModelSpec {
    pub fn kind(&self) -> JudgmentKind {
        match self {
            JudgmentModelSpec::Ns { .. } => JudgmentKind::Ns,
            JudgmentModelSpec::NsRe { .. } => JudgmentKind::NsRe,
            JudgmentModelSpec::Se { .. } => JudgmentKind::Se,
            JudgmentModelSpec::Wsls { .. } => JudgmentKind::Wsls,
            JudgmentModelSpec::Rational { .. } => JudgmentKind::Rational,
            JudgmentModelSpec::Baseline => JudgmentKind::Baseline,
        }
    }

    /// Parameter values in [`JudgmentKind::param_names`] order.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            JudgmentModelSpec::Ns { lambda, omega, epsilon } => vec![lambda, omega, epsilon],
            JudgmentModelSpec::NsRe { lambda, epsilon } => vec![lambda, epsilon],
            JudgmentModelSpec::Se { rho, epsilon } => vec![rho, epsilon],
            JudgmentModelSpec::Wsls { epsilon, .. } => vec![epsilon],
            JudgmentModelSpec::Rational { theta, epsilon, .. } => vec![theta, epsilon],
            JudgmentModelSpec::Baseline => vec![],
        }
    }

    /// Builds a spec from values in [`JudgmentKind::param_names`] order,
    /// using the default variants of the config flags.
    pub fn from_values(kind: JudgmentKind, v: &[f64]) -> JudgmentModelSpec {
        match kind {
            JudgmentKind::Ns => JudgmentModelSpec::Ns { lambda: v[0], omega: v[1], epsilon: v[2] },
            JudgmentKind::NsRe => JudgmentModelSpec::NsRe { lambda: v[0], epsilon: v[1] },
            JudgmentKind::Se => JudgmentModelSpec::Se { rho: v[0], epsilon: v[1] },
            JudgmentKind::Wsls => JudgmentModelSpec::Wsls { epsilon: v[0], stay_rule: StayRule::default() },
            JudgmentKind::Rational => JudgmentModelSpec::Rational {
                theta: v[0],
                epsilon: v[1],
                scale: RationalScale::default(),
            },
            JudgmentKind::Baseline => JudgmentModelSpec::Baseline,
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(InferenceError::InvalidArgument(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 {
                Ok(())
            } else {
                Err(InferenceError::InvalidArgument(format!("{name} = {v} is negative")))
            }
        };
        match *self {
            JudgmentModelSpec::Ns { lambda, omega, epsilon } => {
                nonneg("lambda", lambda)?;
                nonneg("omega", omega)?;
                unit("epsilon", epsilon)
            }
            JudgmentModelSpec::NsRe { lambda, epsilon } => {
                nonneg("lambda", lambda)?;
                unit("epsilon", epsilon)
            }
            JudgmentModelSpec::Se { rho, epsilon } => {
                unit("rho", rho)?;
                unit("epsilon", epsilon)
            }
            JudgmentModelSpec::Wsls { epsilon, .. } => unit("epsilon", epsilon),
            JudgmentModelSpec::Rational { theta, epsilon, .. } => {
                nonneg("theta", theta)?;
                unit("epsilon", epsilon)
            }
            JudgmentModelSpec::Baseline => Ok(()),
        }
    }
}

/// The single hypothesis a sequential learner holds, plus the evidence seen
/// since it last changed.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub belief: CausalGraph,
    pub recent: EvidenceLog,
}

impl LearnerState {
    /// Unconnected belief and no evidence.
    pub fn initial(n: usize) -> LearnerState {
        LearnerState {
            belief: CausalGraph::empty(n),
            recent: EvidenceLog::new(),
        }
    }
}

/// Inputs to a judgment prediction at one test.
#[derive(Debug, Clone, Copy)]
pub struct JudgmentContext<'a> {
    pub space: &'a Arc<HypothesisSpace>,
    /// Previous judgment.
    pub b_prev: &'a CausalGraph,
    /// Evidence since the previous judgment change, including the latest trial.
    pub recent: &'a [Trial],
    /// All evidence in the problem, including the latest trial.
    pub full: &'a [Trial],
    pub belief: &'a ParamBelief,
}

impl JudgmentContext<'_> {
    fn latest(&self) -> Result<&Trial, InferenceError> {
        self.full
            .last()
            .ok_or_else(|| InferenceError::InvalidArgument("no trial to respond to".into()))
    }
}

/// Raises a 3-state distribution to the power `ω` and renormalises.
/// Zero stays zero for every `ω`; `ω = 0` is uniform over the positive
/// states and `ω = ∞` is uniform over the maxima.
pub fn sharpen(d: EdgeDist, omega: f64) -> EdgeDist {
    let p = d.0;
    if omega == 1.0 {
        return d;
    }
    if omega == 0.0 {
        let k = p.iter().filter(|x| **x > 0.0).count() as f64;
        return EdgeDist(p.map(|x| if x > 0.0 { 1.0 / k } else { 0.0 }));
    }
    if omega == f64::INFINITY {
        let best = argmax_set(&p);
        let mut out = [0.0; 3];
        for i in &best {
            out[*i] = 1.0 / best.len() as f64;
        }
        return EdgeDist(out);
    }
    let logs = p.map(|x| if x > 0.0 { omega * x.ln() } else { f64::NEG_INFINITY });
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logs.map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 });
    let z: f64 = e.iter().sum();
    EdgeDist(e.map(|x| x / z))
}

/// Conditional over one pair from completion likelihoods, falling back to a
/// uniform choice among acyclic completions when the evidence rules out all
/// of them, then sharpened by `ω`.
fn kernel(likelihoods: [Option<f64>; 3], omega: f64) -> EdgeDist {
    let mut w = likelihoods.map(|l| l.unwrap_or(0.0));
    if !(w.iter().sum::<f64>() > 0.0) {
        w = likelihoods.map(|l| if l.is_some() { 1.0 } else { 0.0 });
    }
    let z: f64 = w.iter().sum();
    sharpen(EdgeDist(w.map(|x| x / z)), omega)
}

/// `P^ω(E_pair = e | other edges, evidence)`.
pub fn gibbs_conditional(
    space: &HypothesisSpace,
    states: &[EdgeState],
    pair: usize,
    evidence: &[Trial],
    belief: &ParamBelief,
    omega: f64,
) -> Result<EdgeDist, InferenceError> {
    if states.len() != space.pair_count() || pair >= states.len() {
        return Err(crate::GraphError::Dimension {
            expected: space.pair_count(),
            found: states.len(),
        }
        .into());
    }
    let comps = space.completions(states, pair);
    let keys: Vec<TrialKey> = evidence.iter().map(TrialKey::from).collect();
    match conditional_from_completions(space, comps, &keys, belief) {
        Ok(d) => Ok(sharpen(d, omega)),
        Err(InferenceError::DegenerateEvidence) => Ok(kernel(comps.map(|c| c.map(|_| 0.0)), omega)),
        Err(e) => Err(e),
    }
}

/// Row-stochastic single-edge resampling kernel, averaged over pairs.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    space: Arc<HypothesisSpace>,
    rows: Vec<Vec<(u32, f64)>>,
}

impl TransitionMatrix {
    /// Builds the kernel for the given evidence and sharpness.
    pub fn build(
        space: Arc<HypothesisSpace>,
        evidence: &[Trial],
        belief: &ParamBelief,
        omega: f64,
    ) -> Result<TransitionMatrix, InferenceError> {
        let lik = evidence_likelihoods(&space, evidence, belief)?;
        Ok(TransitionMatrix::from_likelihoods(space, &lik, omega))
    }

    /// Builds the kernel from per-graph evidence likelihoods.
    pub fn from_likelihoods(space: Arc<HypothesisSpace>, lik: &[f64], omega: f64) -> TransitionMatrix {
        let np = space.pair_count();
        let mut rows = Vec::with_capacity(space.len());
        let mut acc: Vec<(u32, f64)> = Vec::with_capacity(1 + 2 * np);
        for m in 0..space.len() {
            acc.clear();
            if np == 0 {
                acc.push((m as u32, 1.0));
            }
            for p in 0..np {
                let comps = space.pair_neighbors(m, p);
                let d = kernel(comps.map(|c| c.map(|i| lik[i])), omega);
                for (c, q) in comps.iter().zip(d.0) {
                    if let (Some(j), true) = (c, q > 0.0) {
                        let j = *j as u32;
                        match acc.iter_mut().find(|(k, _)| *k == j) {
                            Some(e) => e.1 += q / np as f64,
                            None => acc.push((j, q / np as f64)),
                        }
                    }
                }
            }
            acc.sort_by_key(|e| e.0);
            rows.push(acc.clone());
        }
        TransitionMatrix { space, rows }
    }

    pub fn space(&self) -> &Arc<HypothesisSpace> {
        &self.space
    }

    /// Non-zero entries of row `m`, sorted by column.
    pub fn row(&self, m: usize) -> &[(u32, f64)] {
        &self.rows[m]
    }

    pub fn get(&self, m: usize, j: usize) -> f64 {
        self.rows[m]
            .iter()
            .find(|e| e.0 as usize == j)
            .map(|e| e.1)
            .unwrap_or(0.0)
    }

    /// `v · R`.
    pub fn propagate(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.propagate_into(v, &mut out);
        out
    }

    pub(crate) fn propagate_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for &(j, r) in &self.rows[i] {
                out[j as usize] += vi * r;
            }
        }
    }

    /// Distribution after exactly `k` steps from `start`, for `k = 0..=max_k`,
    /// evaluated at column `target`.
    pub fn endpoint_probs(&self, start: usize, target: usize, max_k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.space.len()];
        v[start] = 1.0;
        let mut next = vec![0.0; v.len()];
        let mut out = Vec::with_capacity(max_k + 1);
        out.push(v[target]);
        for _ in 0..max_k {
            self.propagate_into(&v, &mut next);
            std::mem::swap(&mut v, &mut next);
            out.push(v[target]);
        }
        out
    }
}

/// Builds the resampling kernel for the given evidence.
pub fn build_transition_matrix(
    space: Arc<HypothesisSpace>,
    evidence: &[Trial],
    belief: &ParamBelief,
    omega: f64,
) -> Result<TransitionMatrix, InferenceError> {
    TransitionMatrix::build(space, evidence, belief, omega)
}

/// Endpoint distribution of a capped-Poisson-length local search starting
/// at `b_prev`, mixed with a uniform lapse.
pub fn ns_predictive(
    space: &Arc<HypothesisSpace>,
    b_prev: &CausalGraph,
    evidence: &[Trial],
    belief: &ParamBelief,
    lambda: f64,
    omega: f64,
    epsilon: f64,
) -> Result<BeliefDistribution, InferenceError> {
    let start = index_in(space, b_prev)?;
    let r = TransitionMatrix::build(space.clone(), evidence, belief, omega)?;
    Ok(ns_predictive_with(&r, start, lambda, epsilon))
}

pub(crate) fn ns_predictive_with(
    r: &TransitionMatrix,
    start: usize,
    lambda: f64,
    epsilon: f64,
) -> BeliefDistribution {
    let m = r.space().len();
    let pois = truncated_poisson(lambda, MAX_SEARCH_STEPS);
    let mut v = vec![0.0; m];
    v[start] = 1.0;
    let mut acc: Vec<f64> = v.iter().map(|x| x * pois[0]).collect();
    let mut next = vec![0.0; m];
    let mut tail: f64 = pois[1..].iter().sum();
    for &pk in pois.iter().skip(1) {
        if tail <= 0.0 {
            break;
        }
        r.propagate_into(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += pk * x;
        }
        tail -= pk;
    }
    let u = epsilon / m as f64;
    let probs = acc.into_iter().map(|p| (1.0 - epsilon) * p + u).collect();
    BeliefDistribution::from_probs_unchecked(r.space().clone(), probs)
}

fn index_in(space: &HypothesisSpace, g: &CausalGraph) -> Result<usize, InferenceError> {
    space.index_of(g).ok_or_else(|| {
        crate::GraphError::Dimension {
            expected: space.n(),
            found: g.n(),
        }
        .into()
    })
}

/// Procedural local search: add the trial to recent evidence, make a
/// capped-Poisson number of single-edge resamples and adopt the endpoint.
/// Recent evidence is cleared only if the belief changed.
pub fn ns_step<R: Rng + ?Sized>(
    state: &mut LearnerState,
    trial: &Trial,
    space: &HypothesisSpace,
    belief: &ParamBelief,
    lambda: f64,
    omega: f64,
    rng: &mut R,
) -> Result<(), InferenceError> {
    let start = index_in(space, &state.belief)?;
    state.recent.push(trial.clone());
    let pois = truncated_poisson(lambda, MAX_SEARCH_STEPS);
    let k = sample_index(&pois, rng);
    let keys: Vec<TrialKey> = state.recent.iter().map(TrialKey::from).collect();
    let np = space.pair_count();
    let mut current = start;
    for _ in 0..k {
        if np == 0 {
            break;
        }
        let p = rng.random_range(0..np);
        let comps = space.pair_neighbors(current, p);
        let liks = comps.map(|c| c.map(|i| marginal_evidence_likelihood(space, i, &keys, belief)));
        let d = kernel(liks, omega);
        let pick = sample_index(&d.0, rng);
        current = comps[pick].expect("sampled state has positive mass");
    }
    if current != start {
        state.belief = space.graph(current).clone();
        state.recent.clear();
    }
    Ok(())
}

/// Applies the endorsement heuristic: edges from each fixed-on node to each
/// activated free node, no edge to each inactive free node. Edits that would
/// close a cycle keep the previous state; pairs are processed in canonical order.
pub fn se_update(b_prev: &CausalGraph, trial: &Trial) -> CausalGraph {
    let n = b_prev.n();
    let c = trial.intervention();
    let d = trial.outcome();
    let mut states = b_prev.states().to_vec();
    for (p, (i, j)) in crate::graph::pairs(n).into_iter().enumerate() {
        let target = match (c.setting(i), c.setting(j)) {
            (NodeSetting::On, NodeSetting::Free) => Some(if d.value(j) {
                EdgeState::Forward
            } else {
                EdgeState::Absent
            }),
            (NodeSetting::Free, NodeSetting::On) => Some(if d.value(i) {
                EdgeState::Backward
            } else {
                EdgeState::Absent
            }),
            _ => None,
        };
        if let Some(s) = target {
            let old = states[p];
            states[p] = s;
            if !crate::graph::is_acyclic(n, &states) {
                states[p] = old;
            }
        }
    }
    CausalGraph::from_states_unchecked(n, states)
}

/// `(1−ε)[ρ·δ(b_SE) + (1−ρ)·δ(b_prev)] + ε·U`.
pub fn se_likelihood(
    space: &Arc<HypothesisSpace>,
    b_prev: &CausalGraph,
    trial: &Trial,
    rho: f64,
    epsilon: f64,
) -> Result<BeliefDistribution, InferenceError> {
    let prev = index_in(space, b_prev)?;
    let se = index_in(space, &se_update(b_prev, trial))?;
    let mut w = vec![0.0; space.len()];
    w[se] += rho;
    w[prev] += 1.0 - rho;
    Ok(BeliefDistribution::from_probs_unchecked(space.clone(), w).with_lapse(epsilon))
}

/// Probability of the latest outcome under `b_prev`, averaged over the strength samples.
pub fn stay_probability(b_prev: &CausalGraph, latest: &Trial, belief: &ParamBelief) -> f64 {
    let parents = b_prev.parent_masks();
    let key = TrialKey::from(latest);
    let samples = belief.samples();
    samples
        .iter()
        .map(|w| outcome_likelihood(&parents, key.free, key.bits, *w))
        .sum::<f64>()
        / samples.len() as f64
}

/// Win-stay, lose-sample: keep `b_prev` with probability given by the stay
/// rule, otherwise draw from the posterior over all evidence so far.
pub fn wsls_likelihood(
    space: &Arc<HypothesisSpace>,
    b_prev: &CausalGraph,
    full: &[Trial],
    latest: &Trial,
    belief: &ParamBelief,
    epsilon: f64,
    rule: StayRule,
) -> Result<BeliefDistribution, InferenceError> {
    let prev = index_in(space, b_prev)?;
    let p = stay_probability(b_prev, latest, belief);
    let stay = match rule {
        StayRule::Likelihood => p,
        StayRule::Complement => 1.0 - p,
    };
    let post = posterior(&BeliefDistribution::uniform(space.clone()), full, belief)?;
    let mut w: Vec<f64> = post.probs().iter().map(|q| (1.0 - stay) * q).collect();
    w[prev] += stay;
    Ok(BeliefDistribution::from_probs_unchecked(space.clone(), w).with_lapse(epsilon))
}

/// Soft maximisation of the posterior: `(1−ε)·softmax(θ·P(M|D)) + ε·U`.
pub fn rational_likelihood(
    space: &Arc<HypothesisSpace>,
    full: &[Trial],
    belief: &ParamBelief,
    theta: f64,
    epsilon: f64,
    scale: RationalScale,
) -> Result<BeliefDistribution, InferenceError> {
    let post = posterior(&BeliefDistribution::uniform(space.clone()), full, belief)?;
    Ok(rational_from_posterior(&post, theta, epsilon, scale))
}

pub(crate) fn rational_from_posterior(
    post: &BeliefDistribution,
    theta: f64,
    epsilon: f64,
    scale: RationalScale,
) -> BeliefDistribution {
    let scores: Vec<f64> = match scale {
        RationalScale::Probability => post.probs().to_vec(),
        RationalScale::LogProbability => post
            .probs()
            .iter()
            .map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect(),
    };
    let probs = if theta == 0.0 {
        vec![1.0 / scores.len() as f64; scores.len()]
    } else {
        softmax(&scores, theta)
    };
    BeliefDistribution::from_probs_unchecked(post.space().clone(), probs).with_lapse(epsilon)
}

/// Uniform over the hypothesis space.
pub fn baseline_likelihood(n: usize) -> Result<BeliefDistribution, InferenceError> {
    Ok(BeliefDistribution::uniform(HypothesisSpace::shared(n)?))
}

impl JudgmentModelSpec {
    /// Distribution over the next judgment.
    pub fn predict(&self, ctx: &JudgmentContext<'_>) -> Result<BeliefDistribution, InferenceError> {
        self.validate()?;
        match *self {
            JudgmentModelSpec::Ns { lambda, omega, epsilon } => {
                ns_predictive(ctx.space, ctx.b_prev, ctx.recent, ctx.belief, lambda, omega, epsilon)
            }
            JudgmentModelSpec::NsRe { lambda, epsilon } => {
                ns_predictive(ctx.space, ctx.b_prev, ctx.recent, ctx.belief, lambda, 0.0, epsilon)
            }
            JudgmentModelSpec::Se { rho, epsilon } => {
                se_likelihood(ctx.space, ctx.b_prev, ctx.latest()?, rho, epsilon)
            }
            JudgmentModelSpec::Wsls { epsilon, stay_rule } => wsls_likelihood(
                ctx.space,
                ctx.b_prev,
                ctx.full,
                ctx.latest()?,
                ctx.belief,
                epsilon,
                stay_rule,
            ),
            JudgmentModelSpec::Rational { theta, epsilon, scale } => {
                rational_likelihood(ctx.space, ctx.full, ctx.belief, theta, epsilon, scale)
            }
            JudgmentModelSpec::Baseline => Ok(BeliefDistribution::uniform(ctx.space.clone())),
        }
    }

    /// Advances a simulated learner by one trial. `full` holds the problem's
    /// evidence before this trial. Recent evidence follows the same rule as
    /// for NS: it is cleared whenever the belief changes.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut LearnerState,
        trial: &Trial,
        full: &[Trial],
        space: &Arc<HypothesisSpace>,
        belief: &ParamBelief,
        rng: &mut R,
    ) -> Result<(), InferenceError> {
        self.validate()?;
        let (lambda, omega, epsilon) = match *self {
            JudgmentModelSpec::Ns { lambda, omega, epsilon } => (lambda, omega, epsilon),
            JudgmentModelSpec::NsRe { lambda, epsilon } => (lambda, 0.0, epsilon),
            _ => {
                let mut all = full.to_vec();
                all.push(trial.clone());
                let mut recent = state.recent.trials().to_vec();
                recent.push(trial.clone());
                let ctx = JudgmentContext {
                    space,
                    b_prev: &state.belief,
                    recent: &recent,
                    full: &all,
                    belief,
                };
                let next = self.predict(&ctx)?.sample(rng);
                let next = space.graph(next);
                if *next != state.belief {
                    state.belief = next.clone();
                    state.recent.clear();
                } else {
                    state.recent.push(trial.clone());
                }
                return Ok(());
            }
        };
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            // lapse: a uniformly random judgment replaces the search
            let next = space.graph(rng.random_range(0..space.len())).clone();
            if next != state.belief {
                state.belief = next;
                state.recent.clear();
            } else {
                state.recent.push(trial.clone());
            }
            return Ok(());
        }
        ns_step(state, trial, space, belief, lambda, omega, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Params;

    fn space3() -> Arc<HypothesisSpace> {
        HypothesisSpace::shared(3).unwrap()
    }

    const W: ParamBelief = ParamBelief::Known(Params { w_s: 0.8, w_b: 0.1 });

    #[test]
    fn sharpen_limits() {
        let d = EdgeDist([0.5, 0.3, 0.2]);
        assert_eq!(sharpen(d, 1.0), d);
        assert_eq!(sharpen(EdgeDist([0.5, 0.5, 0.0]), 0.0).0, [0.5, 0.5, 0.0]);
        assert_eq!(sharpen(d, f64::INFINITY).0, [1.0, 0.0, 0.0]);
        let s = sharpen(d, 2.0).0;
        let z = 0.25 + 0.09 + 0.04;
        assert!((s[0] - 0.25 / z).abs() < 1e-12);
    }

    #[test]
    fn gibbs_examples() {
        let s = space3();
        let d = gibbs_conditional(&s, CausalGraph::empty(3).states(), 0, &[], &W, 1.0).unwrap();
        assert!(d.0.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        let chain = CausalGraph::parse(3, "x->y;y->z").unwrap();
        let d = gibbs_conditional(&s, chain.states(), 1, &[], &W, 0.0).unwrap();
        assert_eq!(d.get(EdgeState::Backward), 0.0);
        assert!((d.get(EdgeState::Forward) - 0.5).abs() < 1e-12);
        assert!((d.get(EdgeState::Absent) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn transition_rows_are_stochastic_and_local() {
        let s = space3();
        let ev = [Trial::parse("+..", "110").unwrap()];
        for omega in [0.0, 1.0, 10.0] {
            let r = TransitionMatrix::build(s.clone(), &ev, &W, omega).unwrap();
            for m in 0..s.len() {
                let sum: f64 = r.row(m).iter().map(|e| e.1).sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for &(j, _) in r.row(m) {
                    assert!(s.graph(m).edit_distance(s.graph(j as usize)).unwrap() <= 1);
                }
            }
        }
    }

    #[test]
    fn se_examples() {
        let empty = CausalGraph::empty(3);
        let t = Trial::parse("+..", "110").unwrap();
        assert_eq!(se_update(&empty, &t), CausalGraph::parse(3, "x->y").unwrap());
        let t = Trial::parse("+..", "111").unwrap();
        assert_eq!(se_update(&empty, &t), CausalGraph::parse(3, "x->y;x->z").unwrap());
        // removes edges to inactive nodes, including reversed ones
        let b = CausalGraph::parse(3, "y->x").unwrap();
        let t = Trial::parse("+..", "100").unwrap();
        assert_eq!(se_update(&b, &t), empty);
    }

    #[test]
    fn wsls_all_fixed_stays() {
        let s = space3();
        let b = CausalGraph::parse(3, "x->y").unwrap();
        let t = Trial::parse("+-+", "101").unwrap();
        let d = wsls_likelihood(&s, &b, &[t.clone()], &t, &W, 0.0, StayRule::Likelihood).unwrap();
        assert!((d.prob_of(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_serde() {
        let s: JudgmentModelSpec =
            serde_json::from_str(r#"{"kind":"NS","lambda":1.5,"omega":10,"epsilon":0.05}"#).unwrap();
        assert_eq!(s, JudgmentModelSpec::Ns { lambda: 1.5, omega: 10.0, epsilon: 0.05 });
        let w: JudgmentModelSpec = serde_json::from_str(r#"{"kind":"WSLS","epsilon":0.1}"#).unwrap();
        assert_eq!(w, JudgmentModelSpec::Wsls { epsilon: 0.1, stay_rule: StayRule::Likelihood });
        assert_eq!(JudgmentKind::parse("ns-re"), Some(JudgmentKind::NsRe));
    }
}

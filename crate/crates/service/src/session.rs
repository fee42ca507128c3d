//! One participant's run through the task: the intervene/judge phase
//! machine, its append-only event log, scoring, export and replay.

use std::sync::Arc;

use neurath::{
    belief_for, edge_marginals, focus_set, node_label, ns_predictive, pair_count, pairs,
    parse_judgment, posterior, sample_outcome, BeliefDistribution, BeliefMode, CausalGraph, Condition,
    Device, FocusKind, InferenceError, Intervention, Judgment, LocalFocusEngine, ParamBelief,
    ParticipantData, Preset, ProblemData, ProblemSpec, Reporting, TestRecord, Trial,
};
use neurath::math::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SessionError;

/// Shown when a drawn structure contains a directed cycle.
pub const LOOP_MESSAGE: &str =
    "The connections you drew form a loop. Remove at least one of them before continuing.";

/// Minimum length of a free-text explanation.
pub const MIN_FREE_TEXT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// The last judgment on each problem.
    #[default]
    Final,
    /// One judgment per problem drawn at random from the session seed.
    RandomTimepoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Intervene,
    Judge,
    Done,
}

/// Request body for creating a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Overrides the preset schedule.
    #[serde(default)]
    pub problems: Option<Vec<ProblemSpec>>,
    /// Defaults to one of the preset's conditions, picked by the seed.
    #[serde(default)]
    pub condition: Option<Condition>,
    /// Drawn at random and recorded when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub analytics: bool,
    #[serde(default)]
    pub scoring: ScoringMode,
    #[serde(default)]
    pub participant_id: Option<String>,
    /// Problem index whose judgments invite a free-text explanation.
    #[serde(default)]
    pub free_text_problem: Option<usize>,
}

/// A spec with every default filled in, as stored in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub experiment: String,
    pub problems: Vec<ProblemSpec>,
    pub condition: Condition,
    pub seed: u64,
    pub analytics: bool,
    pub scoring: ScoringMode,
    pub participant_id: Option<String>,
    pub free_text_problem: Option<usize>,
}

impl SessionSpec {
    pub fn resolve(&self) -> Result<SessionPlan, SessionError> {
        let bad = |m: String| Err(SessionError::Validation(m));
        let problems = match (&self.problems, self.preset) {
            (Some(p), _) => p.clone(),
            (None, Some(preset)) => preset.problems(),
            (None, None) => return bad("give a preset or a problem list".into()),
        };
        if problems.is_empty() {
            return bad("the problem list is empty".into());
        }
        for p in &problems {
            if p.tests == 0 {
                return bad(format!("device {} has no tests", p.device));
            }
            if Device::lookup(p.device, p.n).is_none() {
                return bad(format!("unknown device {} with {} nodes", p.device, p.n));
            }
        }
        let seed = self.seed.unwrap_or_else(|| rand::rng().random());
        let condition = match (self.condition, self.preset) {
            (Some(c), _) => c,
            (None, Some(preset)) => {
                let all = preset.conditions();
                all[(seed % all.len() as u64) as usize]
            }
            (None, None) => return bad("give a condition when no preset is used".into()),
        };
        let unit = 0.0..=1.0;
        if !unit.contains(&condition.w_s) || !unit.contains(&condition.w_b) {
            return bad(format!("strengths ({}, {}) are outside [0, 1]", condition.w_s, condition.w_b));
        }
        if let Some(f) = self.free_text_problem {
            if f >= problems.len() {
                return bad(format!("free-text problem {f} is past the last problem"));
            }
        }
        let experiment = self
            .preset
            .map(|p| p.experiment().to_string())
            .unwrap_or_else(|| "custom".to_string());
        Ok(SessionPlan {
            experiment,
            problems,
            condition,
            seed,
            analytics: self.analytics,
            scoring: self.scoring,
            participant_id: self.participant_id.clone(),
            free_text_problem: self.free_text_problem,
        })
    }
}

/// Logged event. `seq` counts from zero; timestamps are milliseconds since
/// the Unix epoch and never decrease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Created { id: String, plan: SessionPlan },
    Intervention { problem: usize, test: usize, intervention: String },
    Prediction { problem: usize, test: usize, values: Vec<Option<f64>> },
    Outcome { problem: usize, test: usize, outcome: String },
    Judgment { problem: usize, test: usize, judgment: String },
    Confidence { problem: usize, test: usize, values: Vec<Option<f64>> },
    FreeText { problem: usize, test: usize, text: String },
    Feedback(Feedback),
    Score(ScoreReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub problem: usize,
    pub device_id: u32,
    pub true_graph: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScore {
    pub problem: usize,
    pub device_id: u32,
    /// Test whose judgment was scored.
    pub test: usize,
    pub correct: usize,
    pub pairs: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: ScoringMode,
    pub problems: Vec<ProblemScore>,
    pub correct: usize,
    pub pairs: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeTextEntry {
    pub problem: usize,
    pub test: usize,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterveneRequest {
    pub intervention: String,
    #[serde(default)]
    pub predictions: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterveneResponse {
    pub problem: usize,
    pub test: usize,
    pub outcome: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeRequest {
    pub judgment: String,
    #[serde(default)]
    pub confidences: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub free_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub accepted: bool,
    pub phase: Phase,
    pub problem: usize,
    pub test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreReport>,
}

/// What a client may see of the condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionView {
    pub w_known: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_b: Option<f64>,
    pub reporting: Reporting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestView {
    pub test: usize,
    pub intervention: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub experiment: String,
    pub phase: Phase,
    pub problem: usize,
    pub problem_count: usize,
    pub test: usize,
    pub tests_in_problem: usize,
    pub n: usize,
    pub condition: ConditionView,
    pub analytics: bool,
    pub free_text_prompt: bool,
    /// Tests so far on the current problem, including one awaiting judgment.
    pub history: Vec<TestView>,
    /// Only in remain mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub previous_judgment: Option<String>,
    pub feedback: Vec<Feedback>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsQuery {
    pub lambda: f64,
    pub omega: f64,
    pub epsilon: f64,
}

impl Default for NsQuery {
    fn default() -> NsQuery {
        NsQuery {
            lambda: 1.5,
            omega: 10.0,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMarginal {
    pub pair: String,
    pub backward: f64,
    pub absent: f64,
    pub forward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionGain {
    pub intervention: String,
    pub class: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusView {
    pub focus: String,
    /// Absent when the focus is undefined (confirmation of the empty graph).
    pub entropy: Option<f64>,
    /// Aligned with `AnalyticsBundle::eig`.
    pub gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphProb {
    pub graph: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsView {
    pub lambda: f64,
    pub omega: f64,
    pub epsilon: f64,
    /// Sorted by decreasing probability.
    pub distribution: Vec<GraphProb>,
}

/// Live model quantities for the current problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsBundle {
    pub problem: usize,
    pub evidence: usize,
    pub edge_marginals: Vec<EdgeMarginal>,
    pub eig: Vec<InterventionGain>,
    /// Latest judgment on this problem, or the empty graph.
    pub reference_judgment: String,
    pub foci: Vec<FocusView>,
    pub ns: NsView,
}

struct Pending {
    trial: Trial,
    predictions: Vec<Option<f64>>,
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

pub struct Session {
    id: String,
    plan: SessionPlan,
    devices: Vec<Device>,
    problem: usize,
    phase: Phase,
    data: Vec<ProblemData>,
    pending: Option<Pending>,
    rng: ChaCha8Rng,
    events: Vec<SessionEvent>,
    free_text: Vec<FreeTextEntry>,
    feedback: Vec<Feedback>,
    score: Option<ScoreReport>,
    analytics_allowed: bool,
    clock: Clock,
    engine: Option<Arc<LocalFocusEngine>>,
}

fn problem_rng(seed: u64, problem: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("problem {problem}")))
}

fn check_unit(what: &str, values: &[Option<f64>], len: usize) -> Result<(), SessionError> {
    if values.len() != len {
        return Err(SessionError::Validation(format!(
            "expected {len} {what} values, got {}",
            values.len()
        )));
    }
    for v in values.iter().flatten() {
        if !(0.0..=1.0).contains(v) {
            return Err(SessionError::Validation(format!("{what} value {v} is outside [0, 1]")));
        }
    }
    Ok(())
}

impl Session {
    /// Starts a session; `analytics_allowed` is the server-wide switch.
    pub fn create(id: String, plan: SessionPlan, analytics_allowed: bool, clock: Clock) -> Session {
        let devices = plan
            .problems
            .iter()
            .map(|p| Device::lookup(p.device, p.n).expect("plan devices were validated"))
            .collect();
        let data = plan
            .problems
            .iter()
            .map(|p| ProblemData {
                device_id: p.device,
                n: p.n,
                tests: Vec::new(),
            })
            .collect();
        let rng = problem_rng(plan.seed, 0);
        let mut s = Session {
            id: id.clone(),
            plan: plan.clone(),
            devices,
            problem: 0,
            phase: Phase::Intervene,
            data,
            pending: None,
            rng,
            events: Vec::new(),
            free_text: Vec::new(),
            feedback: Vec::new(),
            score: None,
            analytics_allowed,
            clock,
            engine: None,
        };
        s.emit(Event::Created { id, plan });
        s
    }

    /// Rebuilds a session from its log by re-running every participant
    /// action. Outcomes, feedback and scores must come out identical.
    pub fn replay(events: &[SessionEvent], analytics_allowed: bool) -> Result<Session, SessionError> {
        let bad = |m: String| SessionError::Replay(m);
        let (id, plan) = match events.first().map(|e| &e.event) {
            Some(Event::Created { id, plan }) => (id.clone(), plan.clone()),
            _ => return Err(bad("log does not start with a created event".into())),
        };
        let stamps: Vec<u64> = events.iter().map(|e| e.timestamp).collect();
        let cursor = Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let c = cursor.clone();
        let clock: Clock = Arc::new(move || {
            let i = c.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            stamps.get(i).copied().unwrap_or_else(|| stamps.last().copied().unwrap_or(0))
        });
        let mut s = Session::create(id, plan, analytics_allowed, clock);
        let mut i = 1;
        while i < events.len() {
            match &events[i].event {
                Event::Intervention { intervention, .. } => {
                    let predictions = match events.get(i + 1).map(|e| &e.event) {
                        Some(Event::Prediction { values, .. }) => Some(values.clone()),
                        _ => None,
                    };
                    s.intervene(&InterveneRequest {
                        intervention: intervention.clone(),
                        predictions,
                    })?;
                }
                Event::Judgment { judgment, .. } => {
                    let mut req = JudgeRequest {
                        judgment: judgment.clone(),
                        ..JudgeRequest::default()
                    };
                    for e in events[i + 1..].iter().take(2) {
                        match &e.event {
                            Event::Confidence { values, .. } => req.confidences = Some(values.clone()),
                            Event::FreeText { text, .. } => req.free_text = Some(text.clone()),
                            _ => {}
                        }
                    }
                    s.judge(&req)?;
                }
                _ => {}
            }
            let produced = s.events.len();
            if produced > events.len() {
                return Err(bad(format!("replay produced {produced} events, log has {}", events.len())));
            }
            i = produced.max(i + 1);
        }
        if s.events.len() != events.len() {
            return Err(bad(format!(
                "replay produced {} events, log has {}",
                s.events.len(),
                events.len()
            )));
        }
        for (a, b) in s.events.iter().zip(events) {
            if a.event != b.event || a.seq != b.seq {
                return Err(bad(format!("event {} differs on replay", b.seq)));
            }
        }
        Ok(s)
    }

    fn emit(&mut self, event: Event) {
        let last = self.events.last().map(|e| e.timestamp).unwrap_or(0);
        let timestamp = (self.clock)().max(last);
        self.events.push(SessionEvent {
            seq: self.events.len() as u64,
            timestamp,
            event,
        });
    }

    pub(crate) fn set_clock(&mut self, clock: Clock) {
        self.clock = clock;
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn plan(&self) -> &SessionPlan {
        &self.plan
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn free_text(&self) -> &[FreeTextEntry] {
        &self.free_text
    }

    fn n(&self) -> usize {
        self.plan.problems[self.problem.min(self.plan.problems.len() - 1)].n
    }

    fn test(&self) -> usize {
        match self.data.get(self.problem) {
            Some(d) => d.tests.len(),
            None => 0,
        }
    }

    fn expect_phase(&self, want: Phase) -> Result<(), SessionError> {
        if self.phase == want {
            Ok(())
        } else {
            Err(SessionError::Sequence {
                expected: want,
                found: self.phase,
            })
        }
    }

    pub fn intervene(&mut self, req: &InterveneRequest) -> Result<InterveneResponse, SessionError> {
        self.expect_phase(Phase::Intervene)?;
        let n = self.n();
        let c = Intervention::parse(&req.intervention).map_err(|e| SessionError::Validation(e.to_string()))?;
        if c.n() != n {
            return Err(SessionError::Validation(format!(
                "intervention has {} nodes, the device has {n}",
                c.n()
            )));
        }
        if let Some(p) = &req.predictions {
            check_unit("prediction", p, n)?;
        }
        let device = &self.devices[self.problem];
        let outcome = sample_outcome(&device.graph, self.plan.condition.params(), &c, &mut self.rng)
            .map_err(|e| SessionError::Internal(e.to_string()))?;
        let trial = Trial::new(c, outcome).map_err(|e| SessionError::Internal(e.to_string()))?;
        let (problem, test) = (self.problem, self.test());
        self.emit(Event::Intervention {
            problem,
            test,
            intervention: trial.intervention().code(),
        });
        if let Some(p) = &req.predictions {
            self.emit(Event::Prediction {
                problem,
                test,
                values: p.clone(),
            });
        }
        self.emit(Event::Outcome {
            problem,
            test,
            outcome: outcome.code(),
        });
        self.pending = Some(Pending {
            trial,
            predictions: req.predictions.clone().unwrap_or_else(|| vec![None; n]),
        });
        self.phase = Phase::Judge;
        Ok(InterveneResponse {
            problem,
            test,
            outcome: outcome.code(),
            phase: self.phase,
        })
    }

    pub fn judge(&mut self, req: &JudgeRequest) -> Result<JudgeResponse, SessionError> {
        self.expect_phase(Phase::Judge)?;
        let n = self.n();
        let graph = match parse_judgment(n, &req.judgment) {
            Ok(Judgment::Graph(g)) => g,
            Ok(Judgment::Cyclic(_)) => return Err(SessionError::Loop),
            Ok(Judgment::Unspecified(_)) => {
                return Err(SessionError::Validation("every pair needs a state; '?' is not accepted".into()))
            }
            Err(e) => return Err(SessionError::Validation(e.to_string())),
        };
        let np = pair_count(n);
        if let Some(c) = &req.confidences {
            check_unit("confidence", c, np)?;
        }
        let free_text = match &req.free_text {
            Some(t) if t.trim().chars().count() < MIN_FREE_TEXT => {
                return Err(SessionError::Validation(format!(
                    "explanations need at least {MIN_FREE_TEXT} characters"
                )))
            }
            Some(t) => Some(t.clone()),
            None => None,
        };
        let pending = self.pending.take().expect("judge phase has a pending trial");
        let (problem, test) = (self.problem, self.test());
        self.emit(Event::Judgment {
            problem,
            test,
            judgment: graph.to_text(),
        });
        if let Some(c) = &req.confidences {
            self.emit(Event::Confidence {
                problem,
                test,
                values: c.clone(),
            });
        }
        if let Some(text) = free_text {
            self.emit(Event::FreeText {
                problem,
                test,
                text: text.clone(),
            });
            self.free_text.push(FreeTextEntry { problem, test, text });
        }
        let mut record = TestRecord::new(pending.trial, Judgment::Graph(graph));
        record.predictions = pending.predictions;
        if let Some(c) = &req.confidences {
            record.confidences = c.clone();
        }
        self.data[problem].tests.push(record);

        let mut response = JudgeResponse {
            accepted: true,
            phase: Phase::Intervene,
            problem,
            test,
            feedback: None,
            score: None,
        };
        if self.data[problem].tests.len() < self.plan.problems[problem].tests {
            self.phase = Phase::Intervene;
            return Ok(response);
        }
        let device = &self.devices[problem];
        let fb = Feedback {
            problem,
            device_id: device.id,
            true_graph: device.graph.to_text(),
        };
        self.emit(Event::Feedback(fb.clone()));
        self.feedback.push(fb.clone());
        response.feedback = Some(fb);
        if problem + 1 < self.plan.problems.len() {
            self.problem += 1;
            self.rng = problem_rng(self.plan.seed, self.problem);
            self.phase = Phase::Intervene;
        } else {
            self.phase = Phase::Done;
            let report = self.score(self.plan.scoring);
            self.emit(Event::Score(report.clone()));
            self.score = Some(report.clone());
            response.score = Some(report);
        }
        response.phase = self.phase;
        Ok(response)
    }

    /// Edge accuracy over problems with at least one judgment.
    pub fn score(&self, mode: ScoringMode) -> ScoreReport {
        let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(self.plan.seed, "score"));
        let mut problems = Vec::new();
        for (i, d) in self.data.iter().enumerate() {
            // one draw per scheduled problem keeps choices stable as the session grows
            let draw: f64 = pick.random();
            if d.tests.is_empty() {
                continue;
            }
            let t = match mode {
                ScoringMode::Final => d.tests.len() - 1,
                ScoringMode::RandomTimepoint => ((draw * d.tests.len() as f64) as usize).min(d.tests.len() - 1),
            };
            let truth = &self.devices[i].graph;
            let judged = d.tests[t].judgment.graph().expect("only acyclic judgments are stored");
            let correct = truth
                .states()
                .iter()
                .zip(judged.states())
                .filter(|(a, b)| a == b)
                .count();
            let np = pair_count(d.n);
            problems.push(ProblemScore {
                problem: i,
                device_id: d.device_id,
                test: t,
                correct,
                pairs: np,
                accuracy: correct as f64 / np as f64,
            });
        }
        let correct = problems.iter().map(|p| p.correct).sum();
        let total: usize = problems.iter().map(|p| p.pairs).sum();
        ScoreReport {
            mode,
            problems,
            correct,
            pairs: total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let cond = self.plan.condition;
        let history = match self.data.get(self.problem) {
            Some(d) if self.phase != Phase::Done => {
                let mut h: Vec<TestView> = d
                    .tests
                    .iter()
                    .enumerate()
                    .map(|(i, t)| TestView {
                        test: i,
                        intervention: t.trial.intervention().code(),
                        outcome: t.trial.outcome().code(),
                    })
                    .collect();
                if let Some(p) = &self.pending {
                    h.push(TestView {
                        test: d.tests.len(),
                        intervention: p.trial.intervention().code(),
                        outcome: p.trial.outcome().code(),
                    });
                }
                h
            }
            _ => Vec::new(),
        };
        let previous_judgment = match (cond.reporting, self.phase) {
            (Reporting::Remain, Phase::Intervene | Phase::Judge) => self.data[self.problem]
                .tests
                .last()
                .map(|t| t.judgment.to_text(self.n())),
            _ => None,
        };
        Snapshot {
            id: self.id.clone(),
            experiment: self.plan.experiment.clone(),
            phase: self.phase,
            problem: self.problem,
            problem_count: self.plan.problems.len(),
            test: self.test(),
            tests_in_problem: self.plan.problems[self.problem].tests,
            n: self.n(),
            condition: ConditionView {
                w_known: cond.w_known,
                w_s: cond.w_known.then_some(cond.w_s),
                w_b: cond.w_known.then_some(cond.w_b),
                reporting: cond.reporting,
            },
            analytics: self.analytics_enabled(),
            free_text_prompt: self.plan.free_text_problem == Some(self.problem) && self.phase != Phase::Done,
            history,
            previous_judgment,
            feedback: self.feedback.clone(),
            score: self.score.clone(),
        }
    }

    pub fn analytics_enabled(&self) -> bool {
        self.analytics_allowed && self.plan.analytics
    }

    fn param_belief(&self) -> ParamBelief {
        belief_for(BeliefMode::Condition, &self.plan.condition)
    }

    fn engine(&mut self, n: usize) -> Result<Arc<LocalFocusEngine>, InferenceError> {
        if let Some(e) = &self.engine {
            if e.space().n() == n {
                return Ok(e.clone());
            }
        }
        let e = Arc::new(LocalFocusEngine::new(n, self.param_belief())?);
        self.engine = Some(e.clone());
        Ok(e)
    }

    pub fn analytics(&mut self, ns: NsQuery) -> Result<AnalyticsBundle, SessionError> {
        if !self.analytics_enabled() {
            return Err(SessionError::Policy);
        }
        if !(ns.lambda >= 0.0 && ns.omega >= 0.0 && (0.0..=1.0).contains(&ns.epsilon)) {
            return Err(SessionError::Validation("invalid NS parameters".into()));
        }
        let problem = self.problem.min(self.plan.problems.len() - 1);
        let n = self.plan.problems[problem].n;
        let internal = |e: InferenceError| SessionError::Internal(e.to_string());
        let tests = &self.data[problem].tests;
        let mut full: Vec<Trial> = tests.iter().map(|t| t.trial.clone()).collect();
        // evidence since the judgment last changed
        let mut recent: Vec<Trial> = Vec::new();
        let mut b = CausalGraph::empty(n);
        for t in tests {
            recent.push(t.trial.clone());
            let g = t.judgment.graph().expect("only acyclic judgments are stored");
            if *g != b {
                b = g.clone();
                recent.clear();
            }
        }
        if let Some(p) = &self.pending {
            full.push(p.trial.clone());
            recent.push(p.trial.clone());
        }
        let belief = self.param_belief();
        let engine = self.engine(n).map_err(internal)?;
        let space = engine.space().clone();
        let post = posterior(&BeliefDistribution::uniform(space.clone()), &full, &belief).map_err(internal)?;
        let edge_marginals = pairs(n)
            .into_iter()
            .zip(edge_marginals(&post))
            .map(|((i, j), d)| EdgeMarginal {
                pair: format!("{}-{}", node_label(i), node_label(j)),
                backward: d.0[0],
                absent: d.0[1],
                forward: d.0[2],
            })
            .collect();
        let global = engine.global_gains(&full).map_err(internal)?;
        let eig = engine
            .candidates()
            .iter()
            .zip(global.iter())
            .map(|(c, g)| InterventionGain {
                intervention: c.code(),
                class: c.classify().label(),
                gain: *g,
            })
            .collect();
        let mut foci = Vec::new();
        for f in focus_set(FocusKind::Mixed, n) {
            let view = match engine.focus_entropy(f, &b, &recent) {
                Ok(h) => FocusView {
                    focus: f.label(n),
                    entropy: Some(h),
                    gains: Some(engine.gains(f, &b).map_err(internal)?.to_vec()),
                },
                Err(InferenceError::UndefinedFocus) => FocusView {
                    focus: f.label(n),
                    entropy: None,
                    gains: None,
                },
                Err(e) => return Err(internal(e)),
            };
            foci.push(view);
        }
        let pred = ns_predictive(&space, &b, &recent, &belief, ns.lambda, ns.omega, ns.epsilon).map_err(internal)?;
        let mut distribution: Vec<GraphProb> = pred
            .probs()
            .iter()
            .enumerate()
            .map(|(i, p)| GraphProb {
                graph: space.graph(i).to_text(),
                prob: *p,
            })
            .collect();
        distribution.sort_by(|a, b| b.prob.total_cmp(&a.prob));
        Ok(AnalyticsBundle {
            problem,
            evidence: full.len(),
            edge_marginals,
            eig,
            reference_judgment: b.to_text(),
            foci,
            ns: NsView {
                lambda: ns.lambda,
                omega: ns.omega,
                epsilon: ns.epsilon,
                distribution,
            },
        })
    }

    /// Judged tests as behavioral data. A test still awaiting its judgment
    /// is left out.
    pub fn participant_data(&self) -> ParticipantData {
        ParticipantData {
            participant_id: self.plan.participant_id.clone().unwrap_or_else(|| self.id.clone()),
            experiment: self.plan.experiment.clone(),
            condition: self.plan.condition,
            problems: self.data.iter().filter(|d| !d.tests.is_empty()).cloned().collect(),
        }
    }

    /// Behavioral CSV for this session.
    pub fn export_csv(&self) -> Result<String, SessionError> {
        let mut buf = Vec::new();
        neurath::write_behavior(&mut buf, &[self.participant_data()])
            .map_err(|e| SessionError::Internal(e.to_string()))?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Side file of explanations: `session_id, problem, test, text`.
    pub fn export_free_text(&self) -> Result<String, SessionError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| SessionError::Internal(e.to_string());
        w.write_record(["session_id", "problem", "test", "text"]).map_err(io)?;
        for f in &self.free_text {
            w.write_record([self.id.clone(), f.problem.to_string(), f.test.to_string(), f.text.clone()])
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| SessionError::Internal(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

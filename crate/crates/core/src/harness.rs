//! Experiment presets, seeded batch simulation of learner × chooser agents,
//! summary tables and report files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Condition, Judgment, ParticipantData, ProblemData, Reporting, TestRecord};
use crate::devices::{Device, DeviceLabel};
use crate::error::HarnessError;
use crate::fitting::{belief_for, BeliefMode};
use crate::graph::{pair_count, CausalGraph, HypothesisSpace, Intervention, Outcome, Trial};
use crate::inference::{posterior, sample_index, BeliefDistribution};
use crate::learners::{JudgmentModelSpec, LearnerState};
use crate::local_focus::{InterventionModelSpec, LocalFocusEngine};
use crate::math::{argmax_set, derive_seed, mean, sample_sd};
use crate::model::{sample_outcome, ParamBelief};

/// Named experiment designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Five three-variable devices, `w = (.8, .1)`, 12 tests, judgments remain.
    #[serde(rename = "bramley2015")]
    Bramley2015,
    /// Devices 1–10 (6–10 four-variable), four strength conditions, known strengths.
    #[serde(rename = "exp1")]
    Exp1,
    /// The three-variable half of `exp1`.
    #[serde(rename = "exp1-3var")]
    Exp1ThreeVar,
    /// Devices 1–5, the unconnected device and a repeated chain, unknown strengths.
    #[serde(rename = "exp2")]
    Exp2,
}

/// One problem in a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub device: u32,
    pub n: usize,
    pub tests: usize,
}

const EXP_CONDITIONS: [(f64, f64); 4] = [(0.9, 0.1), (0.9, 0.25), (0.75, 0.1), (0.75, 0.25)];

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Bramley2015 => "bramley2015",
            Preset::Exp1 => "exp1",
            Preset::Exp1ThreeVar => "exp1-3var",
            Preset::Exp2 => "exp2",
        }
    }

    pub fn parse(s: &str) -> Option<Preset> {
        [Preset::Bramley2015, Preset::Exp1, Preset::Exp1ThreeVar, Preset::Exp2]
            .into_iter()
            .find(|p| p.name() == s.trim())
    }

    /// Experiment id written into behavioral rows.
    pub fn experiment(&self) -> &'static str {
        match self {
            Preset::Exp1ThreeVar => "exp1",
            p => p.name(),
        }
    }

    pub fn problems(&self) -> Vec<ProblemSpec> {
        let p = |device, n, tests| ProblemSpec { device, n, tests };
        match self {
            Preset::Bramley2015 => (1..=5).map(|d| p(d, 3, 12)).collect(),
            Preset::Exp1 => (1..=5).map(|d| p(d, 3, 6)).chain((6..=10).map(|d| p(d, 4, 8))).collect(),
            Preset::Exp1ThreeVar => (1..=5).map(|d| p(d, 3, 6)).collect(),
            Preset::Exp2 => (1..=7).map(|d| p(d, 3, 6)).collect(),
        }
    }

    pub fn conditions(&self) -> Vec<Condition> {
        match self {
            Preset::Bramley2015 => vec![Condition {
                w_s: 0.8,
                w_b: 0.1,
                w_known: true,
                reporting: Reporting::Remain,
            }],
            Preset::Exp1 | Preset::Exp1ThreeVar => EXP_CONDITIONS
                .iter()
                .map(|&(w_s, w_b)| Condition {
                    w_s,
                    w_b,
                    w_known: true,
                    reporting: Reporting::Disappear,
                })
                .collect(),
            Preset::Exp2 => [Reporting::Remain, Reporting::Disappear]
                .into_iter()
                .flat_map(|reporting| {
                    EXP_CONDITIONS.iter().map(move |&(w_s, w_b)| Condition {
                        w_s,
                        w_b,
                        w_known: false,
                        reporting,
                    })
                })
                .collect(),
        }
    }

    /// Participant count of the original sample.
    pub fn default_replications(&self) -> usize {
        match self {
            Preset::Bramley2015 => 139,
            _ => 120,
        }
    }
}

/// Belief-update agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearnerSpec {
    Simple { kind: SimpleLearner },
    Model(JudgmentModelSpec),
}

/// Learners without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimpleLearner {
    /// A uniformly random graph at every test.
    Random,
    /// A sample from the exact posterior over all evidence.
    Posterior,
    /// The posterior mode, ties broken at random.
    Ideal,
}

impl LearnerSpec {
    pub fn name(&self) -> String {
        match self {
            LearnerSpec::Simple { kind } => match kind {
                SimpleLearner::Random => "Random".into(),
                SimpleLearner::Posterior => "Posterior".into(),
                SimpleLearner::Ideal => "Ideal".into(),
            },
            LearnerSpec::Model(m) => m.kind().name().into(),
        }
    }
}

/// Intervention-choice agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChooserSpec {
    Edge { eta: f64, rho: f64 },
    Effects { eta: f64, rho: f64 },
    Confirmation { eta: f64 },
    Mixed { eta: f64, rho: f64 },
    Global { theta: f64 },
    #[serde(alias = "baseline")]
    Random,
    /// Greedy expected information gain on the full-evidence posterior.
    Ideal,
}

impl ChooserSpec {
    fn model(&self) -> Option<InterventionModelSpec> {
        Some(match *self {
            ChooserSpec::Edge { eta, rho } => InterventionModelSpec::Edge { eta, rho },
            ChooserSpec::Effects { eta, rho } => InterventionModelSpec::Effects { eta, rho },
            ChooserSpec::Confirmation { eta } => InterventionModelSpec::Confirmation { eta },
            ChooserSpec::Mixed { eta, rho } => InterventionModelSpec::Mixed { eta, rho },
            ChooserSpec::Global { theta } => InterventionModelSpec::Global { theta },
            ChooserSpec::Random => InterventionModelSpec::Baseline,
            ChooserSpec::Ideal => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChooserSpec::Edge { .. } => "edge",
            ChooserSpec::Effects { .. } => "effects",
            ChooserSpec::Confirmation { .. } => "confirmation",
            ChooserSpec::Mixed { .. } => "mixed",
            ChooserSpec::Global { .. } => "global",
            ChooserSpec::Random => "random",
            ChooserSpec::Ideal => "ideal",
        }
    }
}

/// A complete simulation configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Overrides the preset schedule.
    #[serde(default)]
    pub problems: Option<Vec<ProblemSpec>>,
    /// Overrides the preset conditions; replications cycle through them.
    #[serde(default)]
    pub conditions: Option<Vec<Condition>>,
    pub learner: LearnerSpec,
    pub chooser: ChooserSpec,
    #[serde(default)]
    pub replications: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub belief: BeliefMode,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<ExperimentSpec, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<ExperimentSpec, HarnessError> {
        ExperimentSpec::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn experiment(&self) -> String {
        match (&self.name, self.preset) {
            (Some(n), _) => n.clone(),
            (None, Some(p)) => p.experiment().to_string(),
            (None, None) => "custom".to_string(),
        }
    }

    pub fn schedule(&self) -> Vec<ProblemSpec> {
        self.problems
            .clone()
            .or_else(|| self.preset.map(|p| p.problems()))
            .unwrap_or_default()
    }

    pub fn condition_list(&self) -> Vec<Condition> {
        self.conditions
            .clone()
            .or_else(|| self.preset.map(|p| p.conditions()))
            .unwrap_or_default()
    }

    pub fn replication_count(&self) -> usize {
        self.replications
            .or_else(|| self.preset.map(|p| p.default_replications()))
            .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        let schedule = self.schedule();
        if schedule.is_empty() {
            return bad("no problems: give a preset or a problem list".into());
        }
        for p in &schedule {
            if p.tests == 0 {
                return bad(format!("device {} has no tests", p.device));
            }
            if Device::lookup(p.device, p.n).is_none() {
                return bad(format!("unknown device {} with {} nodes", p.device, p.n));
            }
        }
        let conds = self.condition_list();
        if conds.is_empty() {
            return bad("no conditions".into());
        }
        for c in &conds {
            if !(0.0..=1.0).contains(&c.w_s) || !(0.0..=1.0).contains(&c.w_b) {
                return bad(format!("strengths ({}, {}) are outside [0, 1]", c.w_s, c.w_b));
            }
        }
        if self.replication_count() == 0 {
            return bad("replications must be positive".into());
        }
        if let LearnerSpec::Model(m) = &self.learner {
            m.validate().map_err(|e| HarnessError::Spec(e.to_string()))?;
        }
        if let Some(m) = self.chooser.model() {
            m.validate().map_err(|e| HarnessError::Spec(e.to_string()))?;
        }
        Ok(())
    }
}

/// One simulated test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTest {
    pub intervention: String,
    pub outcome: String,
    pub judgment: String,
    /// Edit distance from the previous judgment; absent at the first test.
    pub edit_distance: Option<usize>,
    pub correct_edges: usize,
}

/// One simulated participant on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub replication: usize,
    pub problem: usize,
    pub learner: String,
    pub chooser: String,
    pub device_id: u32,
    pub n: usize,
    pub label: DeviceLabel,
    pub condition: Condition,
    pub tests: Vec<SimTest>,
    pub final_accuracy: f64,
}

fn choose<R: Rng + ?Sized>(
    chooser: &ChooserSpec,
    engine: &LocalFocusEngine,
    b: &CausalGraph,
    recent: &[Trial],
    full: &[Trial],
    rng: &mut R,
) -> Result<Intervention, HarnessError> {
    let cands = engine.candidates();
    let idx = match chooser.model() {
        Some(InterventionModelSpec::Baseline) => rng.random_range(0..cands.len()),
        Some(m) => sample_index(&engine.distribution(&m, b, recent, full)?, rng),
        None => {
            let best = argmax_set(&engine.global_gains(full)?);
            best[rng.random_range(0..best.len())]
        }
    };
    Ok(cands[idx].clone())
}

fn judge<R: Rng + ?Sized>(
    learner: &LearnerSpec,
    state: &mut LearnerState,
    trial: &Trial,
    full_before: &[Trial],
    space: &std::sync::Arc<HypothesisSpace>,
    belief: &ParamBelief,
    rng: &mut R,
) -> Result<(), HarnessError> {
    let kind = match learner {
        LearnerSpec::Model(m) => {
            m.step(state, trial, full_before, space, belief, rng)?;
            return Ok(());
        }
        LearnerSpec::Simple { kind } => *kind,
    };
    let mut full = full_before.to_vec();
    full.push(trial.clone());
    let next = match kind {
        SimpleLearner::Random => rng.random_range(0..space.len()),
        SimpleLearner::Posterior => posterior(&BeliefDistribution::uniform(space.clone()), &full, belief)?.sample(rng),
        SimpleLearner::Ideal => {
            let modes = posterior(&BeliefDistribution::uniform(space.clone()), &full, belief)?.modes();
            modes[rng.random_range(0..modes.len())]
        }
    };
    let next = space.graph(next);
    if *next != state.belief {
        state.belief = next.clone();
        state.recent.clear();
    } else {
        state.recent.push(trial.clone());
    }
    Ok(())
}

fn simulate_problem<R: Rng + ?Sized>(
    spec: &ExperimentSpec,
    replication: usize,
    index: usize,
    problem: ProblemSpec,
    condition: Condition,
    rng: &mut R,
) -> Result<SimRecord, HarnessError> {
    let device = Device::lookup(problem.device, problem.n)
        .ok_or_else(|| HarnessError::Spec(format!("unknown device {}", problem.device)))?;
    let w = condition.params();
    let belief = belief_for(spec.belief, &condition);
    let engine = LocalFocusEngine::new(problem.n, belief.clone())?;
    let space = engine.space().clone();
    let mut state = LearnerState::initial(problem.n);
    let mut full: Vec<Trial> = Vec::new();
    let mut tests = Vec::with_capacity(problem.tests);
    for t in 0..problem.tests {
        let c = choose(&spec.chooser, &engine, &state.belief, &state.recent, &full, rng)?;
        let outcome = sample_outcome(&device.graph, w, &c, rng)?;
        let trial = Trial::new(c, outcome)?;
        let before = state.belief.clone();
        judge(&spec.learner, &mut state, &trial, &full, &space, &belief, rng)?;
        let edits = device.graph.edit_distance(&state.belief)?;
        tests.push(SimTest {
            intervention: trial.intervention().code(),
            outcome: trial.outcome().code(),
            judgment: state.belief.to_text(),
            edit_distance: if t > 0 { Some(before.edit_distance(&state.belief)?) } else { None },
            correct_edges: pair_count(problem.n) - edits,
        });
        full.push(trial);
    }
    let last = tests.last().map(|t| t.correct_edges).unwrap_or(0);
    Ok(SimRecord {
        replication,
        problem: index,
        learner: spec.learner.name(),
        chooser: spec.chooser.name().to_string(),
        device_id: device.id,
        n: problem.n,
        label: device.label,
        condition,
        tests,
        final_accuracy: last as f64 / pair_count(problem.n) as f64,
    })
}

/// Runs every replication with its own derived seed; output is ordered by
/// replication, then problem, so it is identical across thread counts.
pub fn run_simulation(spec: &ExperimentSpec) -> Result<Vec<SimRecord>, HarnessError> {
    spec.validate()?;
    let schedule = spec.schedule();
    let conditions = spec.condition_list();
    let reps: Vec<Result<Vec<SimRecord>, HarnessError>> = (0..spec.replication_count())
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("replication {r}")));
            let condition = conditions[r % conditions.len()];
            schedule
                .iter()
                .enumerate()
                .map(|(i, p)| simulate_problem(spec, r, i, *p, condition, &mut rng))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in reps {
        out.extend(r?);
    }
    Ok(out)
}

/// Converts simulated records into behavioral data, one participant per replication.
pub fn records_to_participants(records: &[SimRecord], experiment: &str) -> Result<Vec<ParticipantData>, HarnessError> {
    let mut out: BTreeMap<usize, ParticipantData> = BTreeMap::new();
    for r in records {
        let mut tests = Vec::with_capacity(r.tests.len());
        for t in &r.tests {
            let trial = Trial::new(Intervention::parse(&t.intervention)?, Outcome::parse(&t.outcome)?)?;
            let g = CausalGraph::parse(r.n, &t.judgment)?;
            tests.push(TestRecord::new(trial, Judgment::Graph(g)));
        }
        let p = out.entry(r.replication).or_insert_with(|| ParticipantData {
            participant_id: format!("sim{:04}", r.replication),
            experiment: experiment.to_string(),
            condition: r.condition,
            problems: Vec::new(),
        });
        p.problems.push(ProblemData {
            device_id: r.device_id,
            n: r.n,
            tests,
        });
    }
    Ok(out.into_values().collect())
}

// Summaries.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub learner: String,
    pub label: String,
    pub problems: usize,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDistanceRow {
    pub learner: String,
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    /// Zero when fewer than two values exist; see `sd_defined`.
    pub sd: f64,
    pub sd_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionTypeRow {
    pub learner: String,
    pub n: usize,
    /// 1-based.
    pub test: usize,
    pub class: String,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub accuracy: Vec<AccuracyRow>,
    pub edit_distance: Vec<EditDistanceRow>,
    pub intervention_types: Vec<InterventionTypeRow>,
}

/// Final accuracy by device label, consecutive-judgment edit distance by
/// learner and problem size, and intervention-type shares by test index.
pub fn summarize(records: &[SimRecord]) -> SummaryTables {
    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut edits: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut types: BTreeMap<(String, usize, usize), BTreeMap<String, usize>> = BTreeMap::new();
    for r in records {
        acc.entry((r.learner.clone(), r.label.name().to_string()))
            .or_default()
            .push(r.final_accuracy);
        let e = edits.entry((r.learner.clone(), r.n)).or_default();
        e.extend(r.tests.iter().filter_map(|t| t.edit_distance.map(|d| d as f64)));
        for (i, t) in r.tests.iter().enumerate() {
            let class = Intervention::parse(&t.intervention)
                .map(|c| c.classify().label())
                .unwrap_or_else(|_| "invalid".into());
            *types
                .entry((r.learner.clone(), r.n, i + 1))
                .or_default()
                .entry(class)
                .or_insert(0) += 1;
        }
    }
    let accuracy = acc
        .into_iter()
        .map(|((learner, label), v)| AccuracyRow {
            learner,
            label,
            problems: v.len(),
            mean_accuracy: mean(&v),
        })
        .collect();
    let edit_distance = edits
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|((learner, n), v)| {
            let sd = sample_sd(&v);
            EditDistanceRow {
                learner,
                n,
                count: v.len(),
                mean: mean(&v),
                sd: sd.unwrap_or(0.0),
                sd_defined: sd.is_some(),
            }
        })
        .collect();
    let mut intervention_types = Vec::new();
    for ((learner, n, test), counts) in types {
        let total: usize = counts.values().sum();
        for (class, count) in counts {
            intervention_types.push(InterventionTypeRow {
                learner: learner.clone(),
                n,
                test,
                class,
                count,
                proportion: count as f64 / total as f64,
            });
        }
    }
    SummaryTables {
        accuracy,
        edit_distance,
        intervention_types,
    }
}

/// Which files [`emit_reports`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

fn write_table<W: Write, T: Serialize>(writer: W, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the summary tables. The same tables always give the same bytes.
pub fn emit_reports(tables: &SummaryTables, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let files: [(&str, Box<dyn Fn(std::fs::File) -> Result<(), HarnessError> + '_>); 3] = [
            (
                "accuracy.csv",
                Box::new(|f| write_table(f, &["learner", "label", "problems", "mean_accuracy"], &tables.accuracy)),
            ),
            (
                "edit_distance.csv",
                Box::new(|f| {
                    write_table(f, &["learner", "n", "count", "mean", "sd", "sd_defined"], &tables.edit_distance)
                }),
            ),
            (
                "intervention_types.csv",
                Box::new(|f| {
                    write_table(
                        f,
                        &["learner", "n", "test", "class", "count", "proportion"],
                        &tables.intervention_types,
                    )
                }),
            ),
        ];
        for (name, write) in files {
            let path = dir.join(name);
            write(std::fs::File::create(&path)?)?;
            written.push(path);
        }
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(tables)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes records as pretty JSON.
pub fn write_records(records: &[SimRecord], path: &Path) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(records)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<SimRecord>, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

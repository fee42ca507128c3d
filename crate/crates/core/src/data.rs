//! Behavioral data: per-participant problem records and the one-row-per-test
//! CSV format used for ingest and export.
//!
//! Columns: `participant_id, experiment, w_s, w_b, w_known, reporting,
//! device_id, trial_index, intervention, outcome, judgment`, then optional
//! `confidence_<pair>` (e.g. `confidence_xy`) and `prediction_<node>`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::graph::{
    is_acyclic, node_label, pair_count, pairs, parse_edge_states, states_text, CausalGraph,
    EdgeState, Trial,
};
use crate::model::Params;

/// Whether the previous judgment stays visible between tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reporting {
    Remain,
    Disappear,
}

impl Reporting {
    pub fn name(&self) -> &'static str {
        match self {
            Reporting::Remain => "remain",
            Reporting::Disappear => "disappear",
        }
    }

    pub fn parse(s: &str) -> Option<Reporting> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remain" => Some(Reporting::Remain),
            "disappear" => Some(Reporting::Disappear),
            _ => None,
        }
    }
}

/// Between-subjects condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub w_s: f64,
    pub w_b: f64,
    pub w_known: bool,
    pub reporting: Reporting,
}

impl Condition {
    pub fn params(&self) -> Params {
        Params {
            w_s: self.w_s,
            w_b: self.w_b,
        }
    }
}

/// A reported structure judgment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Judgment {
    Graph(CausalGraph),
    /// At least one edge left unspecified; kept verbatim.
    Unspecified(String),
    /// A drawn structure containing a cycle.
    Cyclic(Vec<EdgeState>),
}

impl Judgment {
    pub fn graph(&self) -> Option<&CausalGraph> {
        match self {
            Judgment::Graph(g) => Some(g),
            _ => None,
        }
    }

    pub fn to_text(&self, n: usize) -> String {
        match self {
            Judgment::Graph(g) => g.to_text(),
            Judgment::Unspecified(s) => s.clone(),
            Judgment::Cyclic(states) => states_text(n, states),
        }
    }
}

/// One test: the trial, the judgment that followed and optional slider data.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub trial: Trial,
    pub judgment: Judgment,
    /// Per pair, canonical order.
    pub confidences: Vec<Option<f64>>,
    /// Per node.
    pub predictions: Vec<Option<f64>>,
}

impl TestRecord {
    pub fn new(trial: Trial, judgment: Judgment) -> TestRecord {
        let n = trial.n();
        TestRecord {
            trial,
            judgment,
            confidences: vec![None; pair_count(n)],
            predictions: vec![None; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub device_id: u32,
    pub n: usize,
    pub tests: Vec<TestRecord>,
}

impl ProblemData {
    /// Number of tests whose judgment is a fully specified acyclic graph.
    pub fn scorable(&self) -> usize {
        self.tests
            .iter()
            .filter(|t| matches!(t.judgment, Judgment::Graph(_)))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantData {
    pub participant_id: String,
    pub experiment: String,
    pub condition: Condition,
    pub problems: Vec<ProblemData>,
}

impl ParticipantData {
    /// Tests whose judgment was skipped for fitting (unspecified or cyclic).
    pub fn skipped(&self) -> usize {
        self.problems
            .iter()
            .map(|p| p.tests.len() - p.scorable())
            .sum()
    }

    pub fn test_count(&self) -> usize {
        self.problems.iter().map(|p| p.tests.len()).sum()
    }
}

/// Ingest behaviour.
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Reject cyclic judgments instead of flagging them.
    pub strict: bool,
}

const FIXED: [&str; 11] = [
    "participant_id",
    "experiment",
    "w_s",
    "w_b",
    "w_known",
    "reporting",
    "device_id",
    "trial_index",
    "intervention",
    "outcome",
    "judgment",
];

fn pair_suffix(i: usize, j: usize) -> String {
    format!("{}{}", node_label(i), node_label(j))
}

/// Parses judgment text; `?` anywhere marks the judgment unspecified.
pub fn parse_judgment(n: usize, text: &str) -> Result<Judgment, crate::GraphError> {
    if text.contains('?') {
        return Ok(Judgment::Unspecified(text.to_string()));
    }
    let states = match parse_edge_states(n, text) {
        Ok(s) => s,
        // both directions drawn on one pair
        Err(crate::GraphError::Cyclic) => return Ok(Judgment::Cyclic(Vec::new())),
        Err(e) => return Err(e),
    };
    if is_acyclic(n, &states) {
        Ok(Judgment::Graph(CausalGraph::from_states(n, states)?))
    } else {
        Ok(Judgment::Cyclic(states))
    }
}

/// Reads behavioral CSV from a file.
pub fn ingest_behavior(path: &Path, options: IngestOptions) -> Result<Vec<ParticipantData>, DataError> {
    let file = std::fs::File::open(path)?;
    read_behavior(file, options)
}

/// Reads behavioral CSV from any reader.
pub fn read_behavior<R: Read>(reader: R, options: IngestOptions) -> Result<Vec<ParticipantData>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = HashMap::new();
    for name in FIXED {
        idx.insert(name, col(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))?);
    }
    let mut out: Vec<ParticipantData> = Vec::new();
    let mut by_id: HashMap<String, (usize, i64)> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2; // header is line 1
        let get = |name: &str| {
            idx.get(name)
                .copied()
                .or_else(|| col(name))
                .and_then(|c| rec.get(c))
                .unwrap_or("")
        };
        let err = |column: &str, message: String| DataError::Row {
            row,
            column: column.to_string(),
            message,
        };
        let pid = get("participant_id").to_string();
        if pid.is_empty() {
            return Err(err("participant_id", "empty participant id".into()));
        }
        let unit = |name: &str| -> Result<f64, DataError> {
            let v: f64 = get(name)
                .parse()
                .map_err(|e| err(name, format!("not a number: {e}")))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(err(name, format!("{v} is outside [0, 1]")))
            }
        };
        let w_known = match get("w_known").to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(err("w_known", format!("expected true/false, found '{other}'"))),
        };
        let reporting = Reporting::parse(get("reporting"))
            .ok_or_else(|| err("reporting", format!("expected remain/disappear, found '{}'", get("reporting"))))?;
        let condition = Condition {
            w_s: unit("w_s")?,
            w_b: unit("w_b")?,
            w_known,
            reporting,
        };
        let device_id: u32 = get("device_id")
            .parse()
            .map_err(|e| err("device_id", format!("not an integer: {e}")))?;
        let trial_index: i64 = get("trial_index")
            .parse()
            .map_err(|e| err("trial_index", format!("not an integer: {e}")))?;
        let intervention = crate::graph::Intervention::parse(get("intervention"))
            .map_err(|e| err("intervention", e.to_string()))?;
        let outcome = crate::graph::Outcome::parse(get("outcome")).map_err(|e| err("outcome", e.to_string()))?;
        let trial = Trial::new(intervention, outcome).map_err(|e| err("outcome", e.to_string()))?;
        let n = trial.n();
        let judgment = parse_judgment(n, get("judgment")).map_err(|e| err("judgment", e.to_string()))?;
        if options.strict {
            if let Judgment::Cyclic(_) = judgment {
                return Err(err("judgment", "cyclic judgment".into()));
            }
        }
        let mut test = TestRecord::new(trial, judgment);
        for (p, (i, j)) in pairs(n).into_iter().enumerate() {
            let name = format!("confidence_{}", pair_suffix(i, j));
            if let Some(c) = col(&name) {
                let v = rec.get(c).unwrap_or("");
                if !v.is_empty() {
                    test.confidences[p] = Some(unit(&name)?);
                }
            }
        }
        for x in 0..n {
            let name = format!("prediction_{}", node_label(x));
            if let Some(c) = col(&name) {
                let v = rec.get(c).unwrap_or("");
                if !v.is_empty() {
                    test.predictions[x] = Some(unit(&name)?);
                }
            }
        }
        let entry = by_id.get(&pid).copied();
        let pi = match entry {
            Some((pi, _)) => {
                let p = &out[pi];
                if p.condition != condition || p.experiment != get("experiment") {
                    return Err(err("participant_id", format!("condition or experiment changes within participant '{pid}'")));
                }
                pi
            }
            None => {
                out.push(ParticipantData {
                    participant_id: pid.clone(),
                    experiment: get("experiment").to_string(),
                    condition,
                    problems: Vec::new(),
                });
                out.len() - 1
            }
        };
        let last_index = entry.map(|e| e.1);
        let p = &mut out[pi];
        let new_problem = match p.problems.last() {
            None => true,
            Some(last) => last.device_id != device_id || last.n != n || last_index.is_none_or(|li| trial_index <= li),
        };
        if new_problem {
            p.problems.push(ProblemData {
                device_id,
                n,
                tests: Vec::new(),
            });
        }
        p.problems.last_mut().unwrap().tests.push(test);
        by_id.insert(pid, (pi, trial_index));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes behavioral CSV. Trial indices are 1-based within each problem.
pub fn write_behavior<W: Write>(writer: W, data: &[ParticipantData]) -> Result<(), DataError> {
    let max_n = data
        .iter()
        .flat_map(|p| p.problems.iter().map(|q| q.n))
        .max()
        .unwrap_or(3);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    let all_pairs = pairs(max_n);
    for &(i, j) in &all_pairs {
        header.push(format!("confidence_{}", pair_suffix(i, j)));
    }
    for x in 0..max_n {
        header.push(format!("prediction_{}", node_label(x)));
    }
    w.write_record(&header)?;
    for p in data {
        for prob in &p.problems {
            let local = pairs(prob.n);
            for (t, test) in prob.tests.iter().enumerate() {
                let mut rec = vec![
                    p.participant_id.clone(),
                    p.experiment.clone(),
                    p.condition.w_s.to_string(),
                    p.condition.w_b.to_string(),
                    p.condition.w_known.to_string(),
                    p.condition.reporting.name().to_string(),
                    prob.device_id.to_string(),
                    (t + 1).to_string(),
                    test.trial.intervention().code(),
                    test.trial.outcome().code(),
                    test.judgment.to_text(prob.n),
                ];
                for pr in &all_pairs {
                    let v = local
                        .iter()
                        .position(|q| q == pr)
                        .and_then(|k| test.confidences.get(k).copied().flatten());
                    rec.push(fmt_opt(v));
                }
                for x in 0..max_n {
                    rec.push(fmt_opt(test.predictions.get(x).copied().flatten()));
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes behavioral CSV to a file.
pub fn export_behavior(path: &Path, data: &[ParticipantData]) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_behavior(std::io::BufWriter::new(file), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "participant_id,experiment,w_s,w_b,w_known,reporting,device_id,trial_index,intervention,outcome,judgment,confidence_xy,prediction_y
p1,exp1,0.9,0.1,true,disappear,1,1,+..,110,x->y,0.8,0.7
p1,exp1,0.9,0.1,true,disappear,1,2,...,000,x->y,,
p1,exp1,0.9,0.1,true,disappear,2,1,+..,111,x->y;x->z,,
";

    #[test]
    fn ingest_groups_problems() {
        let d = read_behavior(SAMPLE.as_bytes(), IngestOptions::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].problems.len(), 2);
        assert_eq!(d[0].problems[0].tests.len(), 2);
        assert_eq!(d[0].problems[0].tests[0].confidences[0], Some(0.8));
        assert_eq!(d[0].problems[0].tests[0].predictions[1], Some(0.7));
    }

    #[test]
    fn round_trip() {
        let d = read_behavior(SAMPLE.as_bytes(), IngestOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_behavior(&mut buf, &d).unwrap();
        let back = read_behavior(&buf[..], IngestOptions::default()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn malformed_edge_names_row_and_column() {
        let bad = SAMPLE.replace("x->y;x->z", "x=>y");
        match read_behavior(bad.as_bytes(), IngestOptions::default()) {
            Err(DataError::Row { row, column, .. }) => {
                assert_eq!(row, 4);
                assert_eq!(column, "judgment");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unspecified_and_cyclic_are_flagged() {
        let s = SAMPLE
            .replace(",x->y,0.8", ",x->y;y?z,0.8")
            .replace(",000,x->y", ",000,x->y;y->z;z->x");
        let d = read_behavior(s.as_bytes(), IngestOptions::default()).unwrap();
        assert_eq!(d[0].skipped(), 2);
        assert!(matches!(d[0].problems[0].tests[1].judgment, Judgment::Cyclic(_)));
        assert!(read_behavior(s.as_bytes(), IngestOptions { strict: true }).is_err());
    }
}

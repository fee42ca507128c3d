//! Device catalog and experiment presets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::CausalGraph;

/// Structural class of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceLabel {
    Single,
    Fork,
    Chain,
    Collider,
    FullyConnected,
    Unconnected,
}

impl DeviceLabel {
    pub fn name(&self) -> &'static str {
        match self {
            DeviceLabel::Single => "single",
            DeviceLabel::Fork => "fork",
            DeviceLabel::Chain => "chain",
            DeviceLabel::Collider => "collider",
            DeviceLabel::FullyConnected => "fully-connected",
            DeviceLabel::Unconnected => "unconnected",
        }
    }
}

impl fmt::Display for DeviceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A true causal system learners are asked to identify.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Device {
    pub id: u32,
    pub graph: CausalGraph,
    pub label: DeviceLabel,
}

impl Device {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Builds a device with a label inferred from the structure.
    pub fn new(id: u32, graph: CausalGraph) -> Device {
        let label = classify_structure(&graph);
        Device { id, graph, label }
    }

    /// Canonical device by id and node count. Ids 1–5 are the three-node
    /// single/fork/chain/collider/fully-connected devices, ids 6–10 their
    /// four-node analogs, and three-node ids 6 and 7 are the unconnected
    /// device and the repeated chain.
    pub fn lookup(id: u32, n: usize) -> Option<Device> {
        let text = match (n, id) {
            (3, 1) => "x->y",
            (3, 2) => "x->y;x->z",
            (3, 3) | (3, 7) => "x->y;y->z",
            (3, 4) => "x->z;y->z",
            (3, 5) => "x->y;x->z;y->z",
            (3, 6) => "",
            (4, 6) => "x->y",
            (4, 7) => "x->y;x->z;x->w",
            (4, 8) => "x->y;y->z;z->w",
            (4, 9) => "x->w;y->w;z->w",
            (4, 10) => "x->y;x->z;x->w;y->z;y->w;z->w",
            _ => return None,
        };
        let graph = CausalGraph::parse(n, text).expect("catalog graphs are acyclic");
        Some(Device::new(id, graph))
    }

    /// Node count of the canonical device with this id in a preset.
    pub fn default_n(id: u32, experiment: &str) -> usize {
        if experiment_has_four_var(experiment) && (6..=10).contains(&id) {
            4
        } else {
            3
        }
    }
}

fn experiment_has_four_var(experiment: &str) -> bool {
    experiment == "exp1"
}

/// Structural class: single edge, fork, chain, collider, fully connected or unconnected.
pub fn classify_structure(g: &CausalGraph) -> DeviceLabel {
    let n = g.n();
    let edges = g.directed_edges();
    if edges.is_empty() {
        return DeviceLabel::Unconnected;
    }
    if edges.len() == 1 {
        return DeviceLabel::Single;
    }
    if edges.len() == n * (n - 1) / 2 {
        return DeviceLabel::FullyConnected;
    }
    let indeg: Vec<usize> = (0..n).map(|x| g.parents(x).len()).collect();
    let outdeg: Vec<usize> = (0..n).map(|x| g.children(x).len()).collect();
    if edges.len() == n - 1 {
        if indeg.iter().all(|d| *d <= 1) && outdeg.iter().all(|d| *d <= 1) {
            return DeviceLabel::Chain;
        }
        if outdeg.iter().filter(|d| **d > 0).count() == 1 {
            return DeviceLabel::Fork;
        }
        if indeg.iter().filter(|d| **d > 0).count() == 1 {
            return DeviceLabel::Collider;
        }
    }
    if outdeg.iter().filter(|d| **d > 0).count() == 1 {
        DeviceLabel::Fork
    } else if indeg.iter().filter(|d| **d > 0).count() == 1 {
        DeviceLabel::Collider
    } else {
        DeviceLabel::Chain
    }
}

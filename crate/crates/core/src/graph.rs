//! Causal graphs over binary variables, the enumerated hypothesis space of
//! DAGs, and the intervention and outcome spaces that go with it.
//!
//! A graph on `n` nodes is stored as one [`EdgeState`] per unordered pair
//! `(i, j)` with `i < j`, in canonical pair order `(0,1), (0,2), …, (1,2), …`.
//! Nodes are 0-based internally; the text forms use the labels `x, y, z, w, v`.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;

/// Largest node count for which the full hypothesis space is enumerated.
pub const MAX_ENUM_NODES: usize = 5;

/// Largest node count any graph may have (node sets are stored as `u32` masks).
pub const MAX_NODES: usize = 16;

const LABELS: [&str; 5] = ["x", "y", "z", "w", "v"];

/// Display label for a node.
pub fn node_label(i: usize) -> String {
    LABELS
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("n{i}"))
}

fn parse_label(s: &str) -> Option<usize> {
    let s = s.trim();
    if let Some(i) = LABELS.iter().position(|l| *l == s) {
        return Some(i);
    }
    s.strip_prefix('n').and_then(|rest| rest.parse().ok())
}

/// State of the edge between nodes `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeState {
    /// `i ← j`
    Backward,
    /// no connection
    Absent,
    /// `i → j`
    Forward,
}

impl EdgeState {
    /// All three states in canonical order (−1 < 0 < +1).
    pub const ALL: [EdgeState; 3] = [EdgeState::Backward, EdgeState::Absent, EdgeState::Forward];

    /// Position in [`EdgeState::ALL`].
    #[inline]
    pub fn digit(self) -> usize {
        match self {
            EdgeState::Backward => 0,
            EdgeState::Absent => 1,
            EdgeState::Forward => 2,
        }
    }

    #[inline]
    pub fn from_digit(d: usize) -> EdgeState {
        EdgeState::ALL[d]
    }

    /// The signed value used in the adjacency-matrix form: +1, 0 or −1.
    pub fn value(self) -> i8 {
        match self {
            EdgeState::Backward => -1,
            EdgeState::Absent => 0,
            EdgeState::Forward => 1,
        }
    }

    pub fn reversed(self) -> EdgeState {
        match self {
            EdgeState::Backward => EdgeState::Forward,
            EdgeState::Absent => EdgeState::Absent,
            EdgeState::Forward => EdgeState::Backward,
        }
    }
}

/// Number of unordered node pairs.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// All pairs `(i, j)`, `i < j`, in canonical order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(pair_count(n));
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((i, j));
        }
    }
    out
}

/// Canonical index of the pair `{i, j}` (order of arguments does not matter).
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    // pairs before row a: sum_{r<a} (n-1-r)
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

/// True iff the directed graph implied by `states` has no directed cycle.
pub fn is_acyclic(n: usize, states: &[EdgeState]) -> bool {
    let parents = parent_masks(n, states);
    acyclic_from_parents(&parents)
}

fn parent_masks(n: usize, states: &[EdgeState]) -> Vec<u32> {
    let mut parents = vec![0u32; n];
    let mut p = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            match states[p] {
                EdgeState::Forward => parents[j] |= 1 << i,
                EdgeState::Backward => parents[i] |= 1 << j,
                EdgeState::Absent => {}
            }
            p += 1;
        }
    }
    parents
}

fn acyclic_from_parents(parents: &[u32]) -> bool {
    let n = parents.len();
    let mut done = 0u32;
    let all = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    loop {
        let mut progressed = false;
        for (x, &pa) in parents.iter().enumerate() {
            if done & (1 << x) == 0 && pa & !done == 0 {
                done |= 1 << x;
                progressed = true;
            }
        }
        if done == all {
            return true;
        }
        if !progressed {
            return false;
        }
    }
}

/// A directed acyclic graph over `n` binary variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CausalGraph {
    n: usize,
    edges: Vec<EdgeState>,
}

impl CausalGraph {
    /// The unconnected graph.
    pub fn empty(n: usize) -> CausalGraph {
        CausalGraph {
            n,
            edges: vec![EdgeState::Absent; pair_count(n)],
        }
    }

    /// Builds a graph from per-pair states, rejecting cycles.
    pub fn from_states(n: usize, edges: Vec<EdgeState>) -> Result<CausalGraph, GraphError> {
        if n == 0 || n > MAX_NODES {
            return Err(GraphError::SizeLimit { n, max: MAX_NODES });
        }
        if edges.len() != pair_count(n) {
            return Err(GraphError::Dimension {
                expected: pair_count(n),
                found: edges.len(),
            });
        }
        if !is_acyclic(n, &edges) {
            return Err(GraphError::Cyclic);
        }
        Ok(CausalGraph { n, edges })
    }

    /// Builds a graph from a list of directed edges `(cause, effect)`.
    pub fn from_edges(n: usize, directed: &[(usize, usize)]) -> Result<CausalGraph, GraphError> {
        let states = states_from_edges(n, directed)?;
        CausalGraph::from_states(n, states)
    }

    /// Parses the `"x->y;y->z"` text form. The empty string is the unconnected graph.
    pub fn parse(n: usize, text: &str) -> Result<CausalGraph, GraphError> {
        let states = parse_edge_states(n, text)?;
        CausalGraph::from_states(n, states)
    }

    pub(crate) fn from_states_unchecked(n: usize, edges: Vec<EdgeState>) -> CausalGraph {
        debug_assert!(is_acyclic(n, &edges));
        CausalGraph { n, edges }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Per-pair edge states in canonical pair order.
    #[inline]
    pub fn states(&self) -> &[EdgeState] {
        &self.edges
    }

    /// State of the edge between `i` and `j`, read in the direction `i → j`.
    pub fn state(&self, i: usize, j: usize) -> EdgeState {
        let s = self.edges[pair_index(self.n, i, j)];
        if i < j {
            s
        } else {
            s.reversed()
        }
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from != to && self.state(from, to) == EdgeState::Forward
    }

    /// Returns a copy with pair `pair` set to `state`, or `None` if that creates a cycle.
    pub fn with_pair(&self, pair: usize, state: EdgeState) -> Option<CausalGraph> {
        let mut edges = self.edges.clone();
        edges[pair] = state;
        if is_acyclic(self.n, &edges) {
            Some(CausalGraph { n: self.n, edges })
        } else {
            None
        }
    }

    /// Bitmask of parents for every node.
    pub fn parent_masks(&self) -> Vec<u32> {
        parent_masks(self.n, &self.edges)
    }

    pub fn parents(&self, x: usize) -> Vec<usize> {
        mask_to_nodes(self.parent_masks()[x])
    }

    pub fn children(&self, x: usize) -> Vec<usize> {
        (0..self.n).filter(|&y| self.has_edge(x, y)).collect()
    }

    /// Direct or indirect descendants of `x` (excluding `x`) as a bitmask.
    pub fn descendant_mask(&self, x: usize) -> u32 {
        let parents = self.parent_masks();
        descendant_mask_from_parents(&parents, x)
    }

    /// Direct or indirect descendants of `x`, excluding `x` itself.
    pub fn descendants(&self, x: usize) -> Vec<usize> {
        mask_to_nodes(self.descendant_mask(x))
    }

    /// Number of directed edges.
    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|s| **s != EdgeState::Absent).count()
    }

    /// Number of node pairs whose state differs. A reversal counts as one edit.
    pub fn edit_distance(&self, other: &CausalGraph) -> Result<usize, GraphError> {
        if self.n != other.n {
            return Err(GraphError::Dimension {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(self
            .edges
            .iter()
            .zip(&other.edges)
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Base-3 code of the edge-state vector, first pair most significant.
    /// Numeric order of codes is the canonical lexicographic order of graphs.
    pub fn code(&self) -> usize {
        states_code(&self.edges)
    }

    /// Nodes in a topological order (parents before children).
    pub fn topological_order(&self) -> Vec<usize> {
        let parents = self.parent_masks();
        let mut done = 0u32;
        let mut order = Vec::with_capacity(self.n);
        while order.len() < self.n {
            for (x, &pa) in parents.iter().enumerate() {
                if done & (1 << x) == 0 && pa & !done == 0 {
                    done |= 1 << x;
                    order.push(x);
                }
            }
        }
        order
    }

    /// Directed edges `(cause, effect)` in canonical pair order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        pairs(self.n)
            .into_iter()
            .zip(&self.edges)
            .filter_map(|((i, j), s)| match s {
                EdgeState::Forward => Some((i, j)),
                EdgeState::Backward => Some((j, i)),
                EdgeState::Absent => None,
            })
            .collect()
    }

    /// The `"x->y;y->z"` text form.
    pub fn to_text(&self) -> String {
        edges_text(&self.directed_edges())
    }
}

impl fmt::Display for CausalGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub(crate) fn edges_text(directed: &[(usize, usize)]) -> String {
    directed
        .iter()
        .map(|&(a, b)| format!("{}->{}", node_label(a), node_label(b)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Text form of a raw state vector, which may be cyclic.
pub fn states_text(n: usize, states: &[EdgeState]) -> String {
    let directed: Vec<_> = pairs(n)
        .into_iter()
        .zip(states)
        .filter_map(|((i, j), s)| match s {
            EdgeState::Forward => Some((i, j)),
            EdgeState::Backward => Some((j, i)),
            EdgeState::Absent => None,
        })
        .collect();
    edges_text(&directed)
}

fn states_from_edges(n: usize, directed: &[(usize, usize)]) -> Result<Vec<EdgeState>, GraphError> {
    if n == 0 || n > MAX_NODES {
        return Err(GraphError::SizeLimit { n, max: MAX_NODES });
    }
    let mut states = vec![EdgeState::Absent; pair_count(n)];
    for &(a, b) in directed {
        if a >= n || b >= n || a == b {
            return Err(GraphError::Parse(format!(
                "invalid edge {a}->{b} for {n} nodes"
            )));
        }
        let p = pair_index(n, a, b);
        let s = if a < b {
            EdgeState::Forward
        } else {
            EdgeState::Backward
        };
        if states[p] != EdgeState::Absent && states[p] != s {
            // both directions drawn on one pair is a 2-cycle
            return Err(GraphError::Cyclic);
        }
        states[p] = s;
    }
    Ok(states)
}

/// Parses the edge-list text form into raw states without an acyclicity check.
pub fn parse_edge_states(n: usize, text: &str) -> Result<Vec<EdgeState>, GraphError> {
    let mut directed = Vec::new();
    for token in text.split(';') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let (from, to) = if let Some((a, b)) = token.split_once("->") {
            (a, b)
        } else if let Some((a, b)) = token.split_once("<-") {
            (b, a)
        } else {
            return Err(GraphError::Parse(format!("malformed edge token '{token}'")));
        };
        let a = parse_label(from)
            .ok_or_else(|| GraphError::Parse(format!("unknown node '{}'", from.trim())))?;
        let b = parse_label(to)
            .ok_or_else(|| GraphError::Parse(format!("unknown node '{}'", to.trim())))?;
        directed.push((a, b));
    }
    states_from_edges(n, &directed)
}

pub(crate) fn states_code(states: &[EdgeState]) -> usize {
    states.iter().fold(0usize, |acc, s| acc * 3 + s.digit())
}

pub(crate) fn mask_to_nodes(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

pub(crate) fn descendant_mask_from_parents(parents: &[u32], x: usize) -> u32 {
    let mut reached = 0u32;
    let mut frontier = 1u32 << x;
    while frontier != 0 {
        let mut next = 0u32;
        for (y, &pa) in parents.iter().enumerate() {
            if pa & frontier != 0 && reached & (1 << y) == 0 {
                next |= 1 << y;
            }
        }
        reached |= next;
        frontier = next;
    }
    reached & !(1 << x)
}

/// Number of labeled DAGs on `n` nodes, via Robinson's recurrence
/// `a(n) = Σ_{k=1..n} (−1)^{k+1} C(n,k) 2^{k(n−k)} a(n−k)`.
pub fn count_dags(n: usize) -> BigInt {
    let mut a: Vec<BigInt> = vec![BigInt::from(1)];
    for m in 1..=n {
        let mut total = BigInt::from(0);
        let mut binom = BigInt::from(1);
        for k in 1..=m {
            binom = binom * BigInt::from(m - k + 1) / BigInt::from(k);
            let term = &binom * (BigInt::from(1) << (k * (m - k))) * &a[m - k];
            if k % 2 == 1 {
                total += term;
            } else {
                total -= term;
            }
        }
        a.push(total);
    }
    a.swap_remove(n)
}

const NONE: u32 = u32::MAX;

/// All DAGs on `n` labeled nodes in canonical order, with the lookup tables
/// the inference code needs.
#[derive(Debug)]
pub struct HypothesisSpace {
    n: usize,
    graphs: Vec<CausalGraph>,
    parents: Vec<u32>,
    descendants: Vec<u32>,
    index: Vec<u32>,
    neighbors: Vec<[u32; 3]>,
}

impl HypothesisSpace {
    /// Enumerates every DAG on `n` nodes, `1 ≤ n ≤ 5`.
    pub fn enumerate(n: usize) -> Result<HypothesisSpace, GraphError> {
        if n == 0 || n > MAX_ENUM_NODES {
            return Err(GraphError::SizeLimit {
                n,
                max: MAX_ENUM_NODES,
            });
        }
        let np = pair_count(n);
        let total = 3usize.pow(np as u32);
        let mut index = vec![NONE; total];
        let mut graphs = Vec::new();
        let mut states = vec![EdgeState::Backward; np];
        for code in 0..total {
            let mut c = code;
            for p in (0..np).rev() {
                states[p] = EdgeState::from_digit(c % 3);
                c /= 3;
            }
            if is_acyclic(n, &states) {
                index[code] = graphs.len() as u32;
                graphs.push(CausalGraph {
                    n,
                    edges: states.clone(),
                });
            }
        }
        let mut parents = Vec::with_capacity(graphs.len() * n);
        let mut descendants = Vec::with_capacity(graphs.len() * n);
        for g in &graphs {
            let pa = g.parent_masks();
            for x in 0..n {
                descendants.push(descendant_mask_from_parents(&pa, x));
            }
            parents.extend(pa);
        }
        let mut neighbors = Vec::with_capacity(graphs.len() * np);
        let powers: Vec<usize> = (0..np).map(|p| 3usize.pow((np - 1 - p) as u32)).collect();
        for g in &graphs {
            let code = g.code();
            for p in 0..np {
                let base = code - g.edges[p].digit() * powers[p];
                let mut row = [NONE; 3];
                for (d, slot) in row.iter_mut().enumerate() {
                    *slot = index[base + d * powers[p]];
                }
                neighbors.push(row);
            }
        }
        Ok(HypothesisSpace {
            n,
            graphs,
            parents,
            descendants,
            index,
            neighbors,
        })
    }

    /// Process-wide shared space for `n` nodes, built on first use.
    pub fn shared(n: usize) -> Result<Arc<HypothesisSpace>, GraphError> {
        static SPACES: [OnceLock<Arc<HypothesisSpace>>; MAX_ENUM_NODES + 1] =
            [const { OnceLock::new() }; MAX_ENUM_NODES + 1];
        if n == 0 || n > MAX_ENUM_NODES {
            return Err(GraphError::SizeLimit {
                n,
                max: MAX_ENUM_NODES,
            });
        }
        if let Some(s) = SPACES[n].get() {
            return Ok(s.clone());
        }
        let space = Arc::new(HypothesisSpace::enumerate(n)?);
        Ok(SPACES[n].get_or_init(|| space).clone())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    #[inline]
    pub fn pair_count(&self) -> usize {
        pair_count(self.n)
    }

    #[inline]
    pub fn graph(&self, i: usize) -> &CausalGraph {
        &self.graphs[i]
    }

    pub fn graphs(&self) -> &[CausalGraph] {
        &self.graphs
    }

    /// Parent masks of graph `i`, one per node.
    #[inline]
    pub fn parents_of(&self, i: usize) -> &[u32] {
        &self.parents[i * self.n..(i + 1) * self.n]
    }

    /// Descendant mask of `node` in graph `i`.
    #[inline]
    pub fn descendant_mask(&self, i: usize, node: usize) -> u32 {
        self.descendants[i * self.n + node]
    }

    /// Position of `g` in the canonical order.
    pub fn index_of(&self, g: &CausalGraph) -> Option<usize> {
        if g.n != self.n {
            return None;
        }
        self.index_of_states(&g.edges)
    }

    pub fn index_of_states(&self, states: &[EdgeState]) -> Option<usize> {
        if states.len() != self.pair_count() {
            return None;
        }
        match self.index[states_code(states)] {
            NONE => None,
            i => Some(i as usize),
        }
    }

    /// Graphs that agree with graph `i` everywhere except (possibly) at `pair`,
    /// indexed by [`EdgeState::digit`]; `None` where the state would create a cycle.
    #[inline]
    pub fn pair_neighbors(&self, i: usize, pair: usize) -> [Option<usize>; 3] {
        let row = self.neighbors[i * self.pair_count() + pair];
        row.map(|v| if v == NONE { None } else { Some(v as usize) })
    }

    /// Acyclic completions of an arbitrary state vector at `pair`.
    pub fn completions(&self, states: &[EdgeState], pair: usize) -> [Option<usize>; 3] {
        let mut s = states.to_vec();
        let mut out = [None; 3];
        for (d, slot) in out.iter_mut().enumerate() {
            s[pair] = EdgeState::from_digit(d);
            *slot = self.index_of_states(&s);
        }
        out
    }

    /// Index of the unconnected graph.
    pub fn empty_index(&self) -> usize {
        self.index_of(&CausalGraph::empty(self.n))
            .expect("unconnected graph is acyclic")
    }
}

/// How a single node is set by an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeSetting {
    Free,
    On,
    Off,
}

/// Per-node fixed-on / fixed-off / free settings.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Intervention {
    settings: Vec<NodeSetting>,
}

impl Intervention {
    pub fn new(settings: Vec<NodeSetting>) -> Intervention {
        Intervention { settings }
    }

    /// The pure observation: every node free.
    pub fn observe(n: usize) -> Intervention {
        Intervention {
            settings: vec![NodeSetting::Free; n],
        }
    }

    /// `Do[...]` from `(node, on)` pairs.
    pub fn fixing(n: usize, fixed: &[(usize, bool)]) -> Intervention {
        let mut c = Intervention::observe(n);
        for &(x, on) in fixed {
            c.settings[x] = if on { NodeSetting::On } else { NodeSetting::Off };
        }
        c
    }

    /// Parses the `{+,-,.}` code string, e.g. `"+.-"`.
    pub fn parse(code: &str) -> Result<Intervention, GraphError> {
        let settings = code
            .chars()
            .map(|ch| match ch {
                '+' => Ok(NodeSetting::On),
                '-' => Ok(NodeSetting::Off),
                '.' => Ok(NodeSetting::Free),
                other => Err(GraphError::Parse(format!(
                    "invalid intervention character '{other}'"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if settings.is_empty() || settings.len() > MAX_NODES {
            return Err(GraphError::Parse(format!("invalid intervention '{code}'")));
        }
        Ok(Intervention { settings })
    }

    pub fn code(&self) -> String {
        self.settings
            .iter()
            .map(|s| match s {
                NodeSetting::On => '+',
                NodeSetting::Off => '-',
                NodeSetting::Free => '.',
            })
            .collect()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.settings.len()
    }

    pub fn settings(&self) -> &[NodeSetting] {
        &self.settings
    }

    pub fn setting(&self, x: usize) -> NodeSetting {
        self.settings[x]
    }

    /// Mask of fixed nodes.
    pub fn fixed_mask(&self) -> u32 {
        self.mask_where(|s| s != NodeSetting::Free)
    }

    /// Mask of nodes fixed on.
    pub fn on_mask(&self) -> u32 {
        self.mask_where(|s| s == NodeSetting::On)
    }

    pub fn free_mask(&self) -> u32 {
        self.mask_where(|s| s == NodeSetting::Free)
    }

    fn mask_where(&self, f: impl Fn(NodeSetting) -> bool) -> u32 {
        self.settings
            .iter()
            .enumerate()
            .filter(|(_, s)| f(**s))
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    pub fn free_count(&self) -> usize {
        self.free_mask().count_ones() as usize
    }

    /// Taxonomy label from the counts of fixed-on and fixed-off nodes.
    pub fn classify(&self) -> InterventionClass {
        let on = self.on_mask().count_ones() as usize;
        let off = self.fixed_mask().count_ones() as usize - on;
        InterventionClass {
            on,
            off,
            all_fixed: self.free_count() == 0,
        }
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// Count-based intervention type: "observe", "1 on", "1 on 1 off", "all fixed", …
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InterventionClass {
    pub on: usize,
    pub off: usize,
    pub all_fixed: bool,
}

impl InterventionClass {
    pub fn label(&self) -> String {
        if self.all_fixed {
            return "all fixed".to_string();
        }
        match (self.on, self.off) {
            (0, 0) => "observe".to_string(),
            (on, 0) => format!("{on} on"),
            (0, off) => format!("{off} off"),
            (on, off) => format!("{on} on {off} off"),
        }
    }
}

impl fmt::Display for InterventionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// All `3^n` interventions. Node 0 is the most significant digit and the
/// digit order is free, on, off, so the pure observation comes first.
pub fn enumerate_interventions(n: usize) -> Vec<Intervention> {
    const ORDER: [NodeSetting; 3] = [NodeSetting::Free, NodeSetting::On, NodeSetting::Off];
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|code| {
            let mut settings = vec![NodeSetting::Free; n];
            let mut c = code;
            for x in (0..n).rev() {
                settings[x] = ORDER[c % 3];
                c /= 3;
            }
            Intervention { settings }
        })
        .collect()
}

/// Shared copy of [`enumerate_interventions`] for `n ≤ 5`.
pub fn shared_interventions(n: usize) -> Arc<Vec<Intervention>> {
    static CACHE: [OnceLock<Arc<Vec<Intervention>>>; MAX_ENUM_NODES + 1] =
        [const { OnceLock::new() }; MAX_ENUM_NODES + 1];
    if n > MAX_ENUM_NODES {
        return Arc::new(enumerate_interventions(n));
    }
    CACHE[n]
        .get_or_init(|| Arc::new(enumerate_interventions(n)))
        .clone()
}

/// A full binary outcome, one bit per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Outcome {
    n: usize,
    bits: u32,
}

impl Outcome {
    pub fn from_bits(n: usize, bits: u32) -> Outcome {
        Outcome { n, bits }
    }

    pub fn from_values(values: &[bool]) -> Outcome {
        let bits = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .fold(0, |m, (i, _)| m | (1 << i));
        Outcome {
            n: values.len(),
            bits,
        }
    }

    /// Parses a `{0,1}` string, node 0 first.
    pub fn parse(s: &str) -> Result<Outcome, GraphError> {
        let values = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(GraphError::Parse(format!("invalid outcome character '{other}'"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() || values.len() > MAX_NODES {
            return Err(GraphError::Parse(format!("invalid outcome '{s}'")));
        }
        Ok(Outcome::from_values(&values))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn value(&self, x: usize) -> bool {
        self.bits & (1 << x) != 0
    }

    pub fn values(&self) -> Vec<bool> {
        (0..self.n).map(|x| self.value(x)).collect()
    }

    pub fn code(&self) -> String {
        (0..self.n)
            .map(|x| if self.value(x) { '1' } else { '0' })
            .collect()
    }

    /// True when every fixed node takes its fixed value.
    pub fn consistent_with(&self, c: &Intervention) -> bool {
        self.n == c.n() && (self.bits & c.fixed_mask()) == c.on_mask()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// All `2^(free count)` outcomes consistent with `c`.
pub fn outcome_space(c: &Intervention) -> Vec<Outcome> {
    let free = c.free_mask();
    let on = c.on_mask();
    let n = c.n();
    // enumerate submasks of `free` in increasing order
    let mut out = Vec::with_capacity(1 << free.count_ones());
    let mut sub = 0u32;
    loop {
        out.push(Outcome::from_bits(n, on | sub));
        if sub == free {
            break;
        }
        sub = (sub.wrapping_sub(free)) & free;
    }
    out
}

/// An intervention together with the outcome it produced.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    intervention: Intervention,
    outcome: Outcome,
}

impl Trial {
    pub fn new(intervention: Intervention, outcome: Outcome) -> Result<Trial, GraphError> {
        if !outcome.consistent_with(&intervention) {
            return Err(GraphError::InconsistentOutcome {
                intervention: intervention.code(),
                outcome: outcome.code(),
            });
        }
        Ok(Trial {
            intervention,
            outcome,
        })
    }

    pub fn parse(intervention: &str, outcome: &str) -> Result<Trial, GraphError> {
        Trial::new(Intervention::parse(intervention)?, Outcome::parse(outcome)?)
    }

    #[inline]
    pub fn intervention(&self) -> &Intervention {
        &self.intervention
    }

    #[inline]
    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.outcome.n
    }
}

//! Parent-set recovery from (causally conditioned) directed information.
//!
//! Three procedures are provided, all driven by a memoizing [`DiOracle`]:
//!
//! * [`mgm_construct`] prunes each full candidate set one process at a time,
//!   conditioning on whatever is still in the set.
//! * [`di_construct`] tests every ordered pair against all remaining processes.
//! * [`structure_recovery_bounded`] uses only unconditioned directed information
//!   from source sets of a bounded size and intersects the maximal ones.

use crate::estimate::EstimateError;
use crate::exactinfo::{
    cc_directed_information, cc_directed_information_sets, InfoError, InfoValue, ProcessSelector,
};
use crate::model::{enumerate_joint, GenerativeModel, Joint, ModelError};
use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("in-degree bound {k} for process {process} exceeds m - 2 = {max}")]
    InDegreeBound {
        process: usize,
        k: usize,
        max: usize,
    },
    #[error("expected {expected} in-degree bounds, got {got}")]
    BoundCount { expected: usize, got: usize },
    #[error("scan order must be a permutation of 0..{0}")]
    BadOrder(usize),
    #[error("graph has {got} nodes, expected {expected}")]
    NodeCount { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Node set `0..m` with a parent set per node. Cycles are allowed, self-loops
/// are not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedGraph {
    parents: Vec<BTreeSet<usize>>,
    names: Vec<String>,
}

impl DirectedGraph {
    pub fn empty(m: usize) -> Self {
        DirectedGraph {
            parents: vec![BTreeSet::new(); m],
            names: default_names(m),
        }
    }

    pub fn from_parents(parents: Vec<BTreeSet<usize>>) -> Result<Self, StructureError> {
        let m = parents.len();
        for (i, ps) in parents.iter().enumerate() {
            if ps.contains(&i) {
                return Err(StructureError::InvalidGraph(format!("self-loop on {i}")));
            }
            if let Some(&p) = ps.iter().find(|&&p| p >= m) {
                return Err(StructureError::InvalidGraph(format!(
                    "parent {p} of {i} out of range"
                )));
            }
        }
        Ok(DirectedGraph {
            parents,
            names: default_names(m),
        })
    }

    /// Builds a graph from `(from, to)` edges.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self, StructureError> {
        let mut parents = vec![BTreeSet::new(); m];
        for &(k, i) in edges {
            if i >= m {
                return Err(StructureError::InvalidGraph(format!(
                    "node {i} out of range"
                )));
            }
            parents[i].insert(k);
        }
        Self::from_parents(parents)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, StructureError> {
        if names.len() != self.m() {
            return Err(StructureError::NodeCount {
                expected: self.m(),
                got: names.len(),
            });
        }
        let distinct: BTreeSet<&String> = names.iter().collect();
        if distinct.len() != names.len() {
            return Err(StructureError::InvalidGraph("duplicate node names".into()));
        }
        self.names = names;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.parents.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parents(&self, i: usize) -> &BTreeSet<usize> {
        &self.parents[i]
    }

    pub fn parent_map(&self) -> &[BTreeSet<usize>] {
        &self.parents
    }

    pub fn children(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m()).filter(move |&i| self.parents[i].contains(&k))
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].contains(&from)
    }

    pub fn remove_edge(&mut self, from: usize, to: usize) -> bool {
        self.parents[to].remove(&from)
    }

    /// Edges as `(from, to)`, sorted by target then source.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(i, ps)| ps.iter().map(move |&k| (k, i)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, StructureError> {
        let file = GraphFile {
            m: self.m(),
            parents: self
                .parents
                .iter()
                .enumerate()
                .map(|(i, ps)| (i.to_string(), ps.iter().copied().collect()))
                .collect(),
            names: Some(self.names.clone()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self, StructureError> {
        let file: GraphFile = serde_json::from_str(s)?;
        let mut parents = vec![BTreeSet::new(); file.m];
        for (k, ps) in file.parents {
            let i: usize = k
                .parse()
                .map_err(|_| StructureError::InvalidGraph(format!("bad node key {k:?}")))?;
            if i >= file.m {
                return Err(StructureError::InvalidGraph(format!(
                    "node {i} out of range"
                )));
            }
            parents[i] = ps.into_iter().collect();
        }
        let g = Self::from_parents(parents)?;
        match file.names {
            Some(names) => g.with_names(names),
            None => Ok(g),
        }
    }

    /// Graphviz rendering. When `weights` is given, edges carry their value
    /// rounded to three decimals.
    pub fn to_dot(&self, weights: Option<&BTreeMap<(usize, usize), f64>>) -> String {
        let mut out = String::from("digraph G {\n");
        for name in &self.names {
            let _ = writeln!(out, "  \"{name}\";");
        }
        for (k, i) in self.edges() {
            let (a, b) = (&self.names[k], &self.names[i]);
            match weights.and_then(|w| w.get(&(k, i))) {
                Some(v) => {
                    let _ = writeln!(out, "  \"{a}\" -> \"{b}\" [label=\"{v:.3}\"];");
                }
                None => {
                    let _ = writeln!(out, "  \"{a}\" -> \"{b}\";");
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn default_names(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("p{i}")).collect()
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    m: usize,
    parents: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

/// Number of ordered pairs `(k, i)`, `k != i`, on which two graphs disagree.
pub fn edge_disagreements(a: &DirectedGraph, b: &DirectedGraph) -> usize {
    assert_eq!(a.m(), b.m(), "graphs must have the same node count");
    (0..a.m())
        .map(|i| a.parents[i].symmetric_difference(&b.parents[i]).count())
        .sum()
}

/// Source of directed information values for the structure algorithms.
pub trait DiBackend: Send + Sync {
    fn m(&self) -> usize;
    fn evaluate(&self, sel: &ProcessSelector) -> Result<InfoValue, StructureError>;
}

/// Exact values computed on an enumerated joint.
pub struct ExactBackend {
    joint: Joint,
}

impl ExactBackend {
    pub fn new(joint: Joint) -> Self {
        ExactBackend { joint }
    }

    pub fn from_model(model: &GenerativeModel, cap: usize) -> Result<Self, StructureError> {
        Ok(ExactBackend::new(enumerate_joint(model, cap)?))
    }

    pub fn joint(&self) -> &Joint {
        &self.joint
    }
}

impl DiBackend for ExactBackend {
    fn m(&self) -> usize {
        self.joint.m()
    }

    fn evaluate(&self, sel: &ProcessSelector) -> Result<InfoValue, StructureError> {
        Ok(cc_directed_information(&self.joint, sel)?)
    }
}

/// One answered query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    pub selector: ProcessSelector,
    pub value: InfoValue,
}

/// Statistics about the queries an oracle has answered.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct QueryStats {
    /// All queries, including repeats served from the memo.
    pub total: usize,
    /// Distinct selectors evaluated by the backend.
    pub distinct: usize,
    pub max_source_size: usize,
    pub max_conditioning_size: usize,
    /// Smallest and largest source set seen, if any query was made.
    pub min_source_size: Option<usize>,
}

/// Memoizing front end over a [`DiBackend`] that also logs every query.
pub struct DiOracle<B> {
    backend: B,
    memo: Mutex<HashMap<ProcessSelector, InfoValue>>,
    stats: Mutex<QueryStats>,
}

impl<B: DiBackend> DiOracle<B> {
    pub fn new(backend: B) -> Self {
        DiOracle {
            backend,
            memo: Mutex::new(HashMap::new()),
            stats: Mutex::new(QueryStats::default()),
        }
    }

    pub fn m(&self) -> usize {
        self.backend.m()
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn query(&self, sel: &ProcessSelector) -> Result<InfoValue, StructureError> {
        {
            let mut st = self.stats.lock();
            st.total += 1;
            st.max_source_size = st.max_source_size.max(sel.sources.len());
            st.max_conditioning_size = st.max_conditioning_size.max(sel.conditioning.len());
            st.min_source_size = Some(
                st.min_source_size
                    .map_or(sel.sources.len(), |s| s.min(sel.sources.len())),
            );
        }
        if let Some(v) = self.memo.lock().get(sel) {
            return Ok(*v);
        }
        let v = self.backend.evaluate(sel)?;
        let mut memo = self.memo.lock();
        let stored = *memo.entry(sel.clone()).or_insert_with(|| {
            self.stats.lock().distinct += 1;
            v
        });
        Ok(stored)
    }

    pub fn stats(&self) -> QueryStats {
        self.stats.lock().clone()
    }

    /// Resets the statistics, keeping memoized values.
    pub fn reset_stats(&self) {
        *self.stats.lock() = QueryStats::default();
    }

    /// Every memoized value, sorted by selector.
    pub fn records(&self) -> Vec<QueryRecord> {
        let mut out: Vec<QueryRecord> = self
            .memo
            .lock()
            .iter()
            .map(|(s, v)| QueryRecord {
                selector: s.clone(),
                value: *v,
            })
            .collect();
        out.sort_by(|a, b| a.selector.cmp(&b.selector));
        out
    }
}

/// Prunes the candidate set of `i`, visiting candidates in `order`.
fn markov_boundary_in_order<B: DiBackend>(
    oracle: &DiOracle<B>,
    i: usize,
    order: &[usize],
    eps: f64,
) -> Result<BTreeSet<usize>, StructureError> {
    let m = oracle.m();
    let mut a: BTreeSet<usize> = (0..m).filter(|&k| k != i).collect();
    for &k in order.iter().filter(|&&k| k != i) {
        let rest: Vec<usize> = a.iter().copied().filter(|&p| p != k).collect();
        let sel = ProcessSelector::new([k], i, rest, m)?;
        if oracle.query(&sel)?.value <= eps {
            a.remove(&k);
        }
    }
    Ok(a)
}

/// Causal Markov boundary of process `i` by sequential pruning.
pub fn causal_markov_boundary<B: DiBackend>(
    oracle: &DiOracle<B>,
    i: usize,
    eps: f64,
) -> Result<BTreeSet<usize>, StructureError> {
    let order: Vec<usize> = (0..oracle.m()).collect();
    markov_boundary_in_order(oracle, i, &order, eps)
}

/// Minimal generative model graph by sequential pruning, ascending scan order.
pub fn mgm_construct<B: DiBackend>(
    oracle: &DiOracle<B>,
    eps: f64,
) -> Result<DirectedGraph, StructureError> {
    let order: Vec<usize> = (0..oracle.m()).collect();
    mgm_construct_with_order(oracle, &order, eps)
}

/// Like [`mgm_construct`] with an explicit scan order over candidate parents.
pub fn mgm_construct_with_order<B: DiBackend>(
    oracle: &DiOracle<B>,
    order: &[usize],
    eps: f64,
) -> Result<DirectedGraph, StructureError> {
    let m = oracle.m();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..m).collect::<Vec<_>>() {
        return Err(StructureError::BadOrder(m));
    }
    let parents = (0..m)
        .into_par_iter()
        .map(|i| markov_boundary_in_order(oracle, i, order, eps))
        .collect::<Result<Vec<_>, _>>()?;
    DirectedGraph::from_parents(parents)
}

/// Directed information graph: edge `k -> i` iff
/// `I(X_k -> X_i || X_{rest}) > eps`.
pub fn di_construct<B: DiBackend>(
    oracle: &DiOracle<B>,
    eps: f64,
) -> Result<DirectedGraph, StructureError> {
    let m = oracle.m();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..m).filter(move |&k| k != i).map(move |k| (k, i)))
        .collect();
    let keep = pairs
        .par_iter()
        .map(|&(k, i)| {
            let sel = ProcessSelector::pairwise_full(k, i, m)?;
            Ok(oracle.query(&sel)?.value > eps)
        })
        .collect::<Result<Vec<bool>, StructureError>>()?;
    let edges: Vec<(usize, usize)> = pairs
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect();
    DirectedGraph::from_edges(m, &edges)
}

/// Which candidate sets count as maximal in bounded recovery.
///
/// Values at or below `zero` are first treated as exactly zero; a set is then
/// maximal when its value is at least `max - relative * |max| - absolute`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Maximality {
    pub relative: f64,
    pub absolute: f64,
    pub zero: f64,
}

impl Maximality {
    /// Exact oracles: ties up to floating-point noise.
    pub fn exact(eps: f64) -> Self {
        Maximality {
            relative: 0.0,
            absolute: eps,
            zero: eps,
        }
    }

    /// Relative band `delta` below the maximum, with values up to `zero`
    /// counting as no influence.
    pub fn relative(delta: f64, zero: f64) -> Self {
        Maximality {
            relative: delta,
            absolute: 0.0,
            zero,
        }
    }

    pub fn effective(&self, value: f64) -> f64 {
        if value <= self.zero {
            0.0
        } else {
            value
        }
    }

    pub fn cutoff(&self, max: f64) -> f64 {
        max - self.relative * max.abs() - self.absolute
    }
}

/// Per-node diagnostics of bounded recovery.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeRecovery {
    pub node: usize,
    pub k: usize,
    /// Every evaluated source set with its raw value.
    pub candidates: Vec<(BTreeSet<usize>, f64)>,
    /// Largest value after zeroing values at or below the zero threshold.
    pub max: f64,
    pub maximal: Vec<BTreeSet<usize>>,
    pub parents: BTreeSet<usize>,
    /// Set when the maximal sets have an empty intersection although some of
    /// them are nonempty.
    pub empty_intersection: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundedRecovery {
    pub graph: DirectedGraph,
    pub nodes: Vec<NodeRecovery>,
}

/// All `k`-subsets of `items`, in lexicographic order.
pub fn subsets_of_size(items: &[usize], k: usize) -> Vec<BTreeSet<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&j| items[j]).collect());
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + items.len() - k) else {
            break;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    out
}

/// Bounded in-degree recovery. For each `i` every source set `B` of size
/// `k[i]` drawn from the other processes is scored by `I(X_B -> X_i)`; the
/// parents are the intersection of the maximal sets.
pub fn structure_recovery_bounded<B: DiBackend>(
    oracle: &DiOracle<B>,
    k: &[usize],
    maximality: Maximality,
) -> Result<BoundedRecovery, StructureError> {
    let m = oracle.m();
    if k.len() != m {
        return Err(StructureError::BoundCount {
            expected: m,
            got: k.len(),
        });
    }
    for (i, &ki) in k.iter().enumerate() {
        if m < 2 || ki > m - 2 {
            return Err(StructureError::InDegreeBound {
                process: i,
                k: ki,
                max: m.saturating_sub(2),
            });
        }
    }
    let nodes = (0..m)
        .into_par_iter()
        .map(|i| {
            let rest: Vec<usize> = (0..m).filter(|&p| p != i).collect();
            let sets = subsets_of_size(&rest, k[i]);
            let candidates = sets
                .into_par_iter()
                .map(|b| {
                    let sel = ProcessSelector::new(b.iter().copied(), i, [], m)?;
                    Ok((b, oracle.query(&sel)?.value))
                })
                .collect::<Result<Vec<_>, StructureError>>()?;
            let max = candidates
                .iter()
                .map(|c| maximality.effective(c.1))
                .fold(f64::NEG_INFINITY, f64::max);
            let cut = maximality.cutoff(max);
            let maximal: Vec<BTreeSet<usize>> = candidates
                .iter()
                .filter(|c| maximality.effective(c.1) >= cut)
                .map(|c| c.0.clone())
                .collect();
            let parents = maximal
                .iter()
                .skip(1)
                .fold(maximal.first().cloned().unwrap_or_default(), |acc, s| {
                    acc.intersection(s).copied().collect()
                });
            let empty_intersection = parents.is_empty() && maximal.iter().any(|s| !s.is_empty());
            Ok(NodeRecovery {
                node: i,
                k: k[i],
                candidates,
                max,
                maximal,
                parents,
                empty_intersection,
            })
        })
        .collect::<Result<Vec<_>, StructureError>>()?;
    let graph = DirectedGraph::from_parents(nodes.iter().map(|n| n.parents.clone()).collect())?;
    Ok(BoundedRecovery { graph, nodes })
}

/// Per-node divergence between the full dynamics of each process and the
/// dynamics restricted to its parents in `g`:
/// `I(X_{rest \ A(i)} -> X_i || X_{A(i)})`.
pub fn generative_model_divergences(
    joint: &Joint,
    g: &DirectedGraph,
) -> Result<Vec<f64>, StructureError> {
    let m = joint.m();
    if g.m() != m {
        return Err(StructureError::NodeCount {
            expected: m,
            got: g.m(),
        });
    }
    (0..m)
        .map(|i| {
            let others: BTreeSet<usize> = (0..m)
                .filter(|&p| p != i && !g.parents(i).contains(&p))
                .collect();
            let v =
                cc_directed_information_sets(joint, &others, &BTreeSet::from([i]), g.parents(i))?;
            Ok(v.value)
        })
        .collect()
}

/// Whether the parent sets of `g` reproduce the joint dynamics up to `eps`.
pub fn verify_generative_model(
    joint: &Joint,
    g: &DirectedGraph,
    eps: f64,
) -> Result<bool, StructureError> {
    Ok(generative_model_divergences(joint, g)?
        .into_iter()
        .all(|d| d <= eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_enumeration() {
        let s = subsets_of_size(&[1, 3, 5, 7], 2);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], BTreeSet::from([1, 3]));
        assert_eq!(s[5], BTreeSet::from([5, 7]));
        assert_eq!(subsets_of_size(&[1, 2], 0), vec![BTreeSet::new()]);
        assert!(subsets_of_size(&[1], 2).is_empty());
    }

    #[test]
    fn graph_json_and_dot() {
        let g = DirectedGraph::from_edges(3, &[(0, 1), (2, 1), (1, 0)])
            .unwrap()
            .with_names(vec!["A".into(), "B".into(), "C".into()])
            .unwrap();
        let back = DirectedGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let w = BTreeMap::from([((0, 1), 0.12345)]);
        let dot = g.to_dot(Some(&w));
        assert!(dot.contains("\"A\" -> \"B\" [label=\"0.123\"];"));
        assert!(dot.contains("\"C\" -> \"B\";"));
        assert!(DirectedGraph::from_edges(2, &[(1, 1)]).is_err());
    }

    #[test]
    fn disagreement_counts_ordered_pairs() {
        let a = DirectedGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let b = DirectedGraph::from_edges(3, &[(0, 1), (2, 1)]).unwrap();
        assert_eq!(edge_disagreements(&a, &b), 2);
        assert_eq!(edge_disagreements(&a, &a), 0);
    }

    #[test]
    fn maximality_cutoff_handles_negative_max() {
        let m = Maximality::relative(0.05, 0.0);
        assert!((m.cutoff(0.5) - 0.475).abs() < 1e-15);
        assert!(m.cutoff(-0.1) < -0.1);
        let z = Maximality::relative(0.05, 0.05);
        assert_eq!(z.effective(0.04), 0.0);
        assert_eq!(z.effective(-0.01), 0.0);
        assert_eq!(z.effective(0.2), 0.2);
    }
}

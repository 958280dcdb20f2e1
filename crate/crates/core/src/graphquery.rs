//! Separation queries on process graphs and unrolled variable-level DAGs.
//!
//! c-separation on a process graph: `(U ⊥ W | Z)_c` holds when every path
//! between a node of `U` and a node of `W` contains a node of `Z ∪ W` with an
//! outgoing arrow along the path. Nodes outside `Z ∪ W` never block, so
//! unlike d-separation an unconditioned collider does not close a path, and a
//! path whose last edge leaves the `W` endpoint is blocked by that endpoint.
//!
//! Both separation tests are reachability searches over `(node, arrived by an
//! arrow into the node)` states.

use crate::exactinfo::{conditional_mutual_information, DEFAULT_EPS};
use crate::model::{enumerate_joint, GenerativeModel, Joint, ModelError, Var};
use crate::structure::DirectedGraph;
use serde::Serialize;
use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("node sets overlap on {0}")]
    Overlap(String),
    #[error("node {0} is not in the graph")]
    UnknownNode(String),
    #[error("edge {from} -> {to} does not increase time")]
    NonIncreasingEdge { from: Var, to: Var },
    #[error("conditional of {var} has several minimal supports")]
    AmbiguousSupport { var: Var },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Direction of one step along a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Step {
    /// The edge points from the previous node to the next one.
    Forward,
    /// The edge points from the next node back to the previous one.
    Backward,
}

/// A path given as its start node and `(step, node)` pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GraphPath {
    pub start: usize,
    pub steps: Vec<(Step, usize)>,
}

impl GraphPath {
    pub fn nodes(&self) -> Vec<usize> {
        std::iter::once(self.start)
            .chain(self.steps.iter().map(|s| s.1))
            .collect()
    }

    pub fn render(&self, names: &[String]) -> String {
        let mut out = names[self.start].clone();
        for (step, v) in &self.steps {
            let arrow = match step {
                Step::Forward => "->",
                Step::Backward => "<-",
            };
            let _ = write!(out, " {arrow} {}", names[*v]);
        }
        out
    }
}

/// Outcome of a c-separation query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CsepVerdict {
    pub separated: bool,
    /// A path from `U` to `W` on which nothing blocks, when not separated.
    pub open_path: Option<GraphPath>,
    /// Nodes of `Z ∪ W` that stopped the search by having an outgoing arrow.
    pub blockers: BTreeSet<usize>,
}

fn check_disjoint(
    m: usize,
    sets: [&BTreeSet<usize>; 3],
    name: impl Fn(usize) -> String,
) -> Result<(), QueryError> {
    let mut seen = BTreeSet::new();
    for s in sets {
        for &v in s {
            if v >= m {
                return Err(QueryError::UnknownNode(v.to_string()));
            }
            if !seen.insert(v) {
                return Err(QueryError::Overlap(name(v)));
            }
        }
    }
    Ok(())
}

/// Full c-separation verdict with a witness.
pub fn c_separation(
    g: &DirectedGraph,
    u: &BTreeSet<usize>,
    z: &BTreeSet<usize>,
    w: &BTreeSet<usize>,
) -> Result<CsepVerdict, QueryError> {
    let m = g.m();
    check_disjoint(m, [u, z, w], |v| g.names()[v].clone())?;
    let children: Vec<Vec<usize>> = (0..m).map(|k| g.children(k).collect()).collect();
    let guard = |v: usize| z.contains(&v) || w.contains(&v);

    // state index: 2 * node + (arrived by an arrow into node)
    let mut prev: Vec<Option<(usize, Step)>> = vec![None; 2 * m];
    let mut visited = vec![false; 2 * m];
    let mut queue = VecDeque::new();
    let mut blockers = BTreeSet::new();
    let mut found = None;
    for &s in u {
        // the start counts as entered without an arrow; it is never a guard
        visited[2 * s] = true;
        queue.push_back(2 * s);
    }
    'search: while let Some(state) = queue.pop_front() {
        let v = state / 2;
        let into = state % 2 == 1;
        let start = u.contains(&v) && prev[state].is_none();
        if !start && w.contains(&v) && into {
            found = Some(state);
            break 'search;
        }
        let mut moves: Vec<(usize, Step)> = Vec::new();
        if !start && guard(v) {
            if !into {
                blockers.insert(v);
                continue;
            }
            // a guard passes only as a collider: leave against an arrow into it
            moves.extend(g.parents(v).iter().map(|&p| (2 * p, Step::Backward)));
            if !children[v].is_empty() {
                blockers.insert(v);
            }
        } else {
            moves.extend(children[v].iter().map(|&c| (2 * c + 1, Step::Forward)));
            moves.extend(g.parents(v).iter().map(|&p| (2 * p, Step::Backward)));
        }
        for (next, step) in moves {
            if !visited[next] {
                visited[next] = true;
                prev[next] = Some((state, step));
                queue.push_back(next);
            }
        }
    }
    let open_path = found.map(|end| {
        let mut steps = Vec::new();
        let mut cur = end;
        while let Some((p, step)) = prev[cur] {
            steps.push((step, cur / 2));
            cur = p;
        }
        steps.reverse();
        GraphPath {
            start: cur / 2,
            steps,
        }
    });
    Ok(CsepVerdict {
        separated: open_path.is_none(),
        open_path,
        blockers,
    })
}

/// Whether `Z` c-separates `U` from `W` in `g`.
pub fn c_separates(
    g: &DirectedGraph,
    u: &BTreeSet<usize>,
    z: &BTreeSet<usize>,
    w: &BTreeSet<usize>,
) -> Result<bool, QueryError> {
    Ok(c_separation(g, u, z, w)?.separated)
}

/// A directed acyclic graph on nodes `0..len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<BTreeSet<usize>>,
}

impl Dag {
    pub fn new(parents: Vec<BTreeSet<usize>>) -> Self {
        Dag { parents }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parents(&self, v: usize) -> &BTreeSet<usize> {
        &self.parents[v]
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (v, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                ch[p].push(v);
            }
        }
        ch
    }

    /// Nodes that are in `z` or have a descendant in `z`.
    fn ancestors_of(&self, z: &BTreeSet<usize>) -> Vec<bool> {
        let mut anc = vec![false; self.len()];
        let mut stack: Vec<usize> = z.iter().copied().collect();
        while let Some(v) = stack.pop() {
            if !anc[v] {
                anc[v] = true;
                stack.extend(self.parents[v].iter().copied());
            }
        }
        anc
    }

    /// Standard d-separation of `u` and `w` given `z`.
    pub fn d_separates(
        &self,
        u: &BTreeSet<usize>,
        z: &BTreeSet<usize>,
        w: &BTreeSet<usize>,
    ) -> Result<bool, QueryError> {
        check_disjoint(self.len(), [u, z, w], |v| v.to_string())?;
        let children = self.children();
        let anc = self.ancestors_of(z);
        // state: 2 * node + (arrived from a child, i.e. moving up)
        let mut visited = vec![false; 2 * self.len()];
        let mut queue: VecDeque<(usize, bool)> = u.iter().map(|&s| (s, true)).collect();
        while let Some((v, up)) = queue.pop_front() {
            if visited[2 * v + up as usize] {
                continue;
            }
            visited[2 * v + up as usize] = true;
            if w.contains(&v) {
                return Ok(false);
            }
            let observed = z.contains(&v);
            if up && !observed {
                queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                queue.extend(children[v].iter().map(|&c| (c, false)));
            } else if !up {
                if !observed {
                    queue.extend(children[v].iter().map(|&c| (c, false)));
                }
                if anc[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        Ok(true)
    }
}

/// How the parents of each unrolled variable were determined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum UnrollMode {
    /// Minimal supports found by exact conditional-independence tests.
    Exact,
    /// The context variables declared by the model's factors.
    Declared,
}

/// Variable-level DAG over `(process, time)` with edges strictly forward in
/// time. Node index is `time * m + process`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnrolledDag {
    m: usize,
    n: usize,
    dag: Dag,
    names: Vec<String>,
    pub mode: UnrollMode,
}

impl UnrolledDag {
    pub fn from_edges(m: usize, n: usize, edges: &[(Var, Var)]) -> Result<Self, QueryError> {
        let mut parents = vec![BTreeSet::new(); m * n];
        for &(a, b) in edges {
            for v in [a, b] {
                if v.process >= m || v.time >= n {
                    return Err(QueryError::UnknownNode(v.to_string()));
                }
            }
            if a.time >= b.time {
                return Err(QueryError::NonIncreasingEdge { from: a, to: b });
            }
            parents[b.time * m + b.process].insert(a.time * m + a.process);
        }
        Ok(UnrolledDag {
            m,
            n,
            dag: Dag::new(parents),
            names: (0..m).map(|i| format!("p{i}")).collect(),
            mode: UnrollMode::Declared,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.m);
        self.names = names;
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self, v: Var) -> usize {
        v.time * self.m + v.process
    }

    pub fn var(&self, index: usize) -> Var {
        Var::new(index % self.m, index / self.m)
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.dag
            .parents(self.index(v))
            .iter()
            .map(|&p| self.var(p))
            .collect()
    }

    pub fn edges(&self) -> Vec<(Var, Var)> {
        (0..self.m * self.n)
            .flat_map(|c| {
                self.dag
                    .parents(c)
                    .iter()
                    .map(move |&p| (self.var(p), self.var(c)))
            })
            .collect()
    }

    fn indices(&self, vars: &BTreeSet<Var>) -> Result<BTreeSet<usize>, QueryError> {
        vars.iter()
            .map(|v| {
                if v.process >= self.m || v.time >= self.n {
                    Err(QueryError::UnknownNode(v.to_string()))
                } else {
                    Ok(self.index(*v))
                }
            })
            .collect()
    }

    pub fn d_separates(
        &self,
        u: &BTreeSet<Var>,
        z: &BTreeSet<Var>,
        w: &BTreeSet<Var>,
    ) -> Result<bool, QueryError> {
        self.dag
            .d_separates(&self.indices(u)?, &self.indices(z)?, &self.indices(w)?)
    }

    /// Process graph with `k -> i` iff some `(k, s) -> (i, t)` edge exists.
    pub fn collapse(&self) -> DirectedGraph {
        let mut parents = vec![BTreeSet::new(); self.m];
        for (a, b) in self.edges() {
            if a.process != b.process {
                parents[b.process].insert(a.process);
            }
        }
        DirectedGraph::from_parents(parents)
            .expect("collapsed edges are valid")
            .with_names(self.names.clone())
            .expect("names match")
    }

    /// Graphviz rendering with one rank per time step.
    pub fn to_dot(&self) -> String {
        let label = |v: Var| format!("{}_{}", self.names[v.process], v.time);
        let mut out = String::from("digraph U {\n  rankdir=LR;\n");
        for t in 0..self.n {
            let _ = write!(out, "  {{ rank=same;");
            for i in 0..self.m {
                let _ = write!(out, " \"{}\";", label(Var::new(i, t)));
            }
            out.push_str(" }\n");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", label(a), label(b));
        }
        out.push_str("}\n");
        out
    }
}

fn all_before(m: usize, t: usize) -> Vec<Var> {
    (0..t)
        .flat_map(|s| (0..m).map(move |i| Var::new(i, s)))
        .collect()
}

/// Unique minimal set `S` of earlier variables with
/// `I(target ; earlier \ S | S) <= eps`, by backward elimination.
pub fn minimal_support(joint: &Joint, target: Var, eps: f64) -> Result<Vec<Var>, QueryError> {
    let past = all_before(joint.m(), target.time);
    let mut support = past.clone();
    for v in &past {
        let rest: Vec<Var> = support.iter().copied().filter(|x| x != v).collect();
        if conditional_mutual_information(joint, &[target], &[*v], &rest) <= eps {
            support = rest;
        }
    }
    let outside: Vec<Var> = past
        .iter()
        .copied()
        .filter(|v| !support.contains(v))
        .collect();
    if conditional_mutual_information(joint, &[target], &outside, &support) > eps {
        return Err(QueryError::AmbiguousSupport { var: target });
    }
    Ok(support)
}

/// Variable-level DAG of a model. Within `cap` trajectories every conditional
/// is reduced to its minimal support by exact tests; otherwise the declared
/// factor contexts are used.
pub fn unroll_dbn(
    model: &GenerativeModel,
    cap: usize,
    eps: f64,
) -> Result<UnrolledDag, QueryError> {
    let (m, n) = (model.m(), model.n());
    let mut edges = Vec::new();
    let mode = if model.state_count() <= cap as f64 {
        let joint = enumerate_joint(model, cap)?;
        for t in 0..n {
            for i in 0..m {
                let target = Var::new(i, t);
                for p in minimal_support(&joint, target, eps)? {
                    edges.push((p, target));
                }
            }
        }
        UnrollMode::Exact
    } else {
        for f in model.factors() {
            for &p in &f.context {
                edges.push((p, f.target()));
            }
        }
        UnrollMode::Declared
    };
    let mut dag = UnrolledDag::from_edges(m, n, &edges)?.with_names(model.names().to_vec());
    dag.mode = mode;
    Ok(dag)
}

/// [`unroll_dbn`] with the default exact threshold.
pub fn unroll_dbn_default(model: &GenerativeModel, cap: usize) -> Result<UnrolledDag, QueryError> {
    unroll_dbn(model, cap, DEFAULT_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn witness_path_is_rendered() {
        // A -> B -> C
        let g = DirectedGraph::from_edges(3, &[(0, 1), (1, 2)])
            .unwrap()
            .with_names(vec!["A".into(), "B".into(), "C".into()])
            .unwrap();
        let v = c_separation(&g, &set(&[0]), &set(&[]), &set(&[2])).unwrap();
        assert!(!v.separated);
        assert_eq!(v.open_path.unwrap().render(g.names()), "A -> B -> C");
        let v = c_separation(&g, &set(&[0]), &set(&[1]), &set(&[2])).unwrap();
        assert!(v.separated);
        assert!(v.blockers.contains(&1));
        // the target's own outgoing arrow blocks
        let v = c_separation(&g, &set(&[2]), &set(&[]), &set(&[0])).unwrap();
        assert!(v.separated);
    }

    #[test]
    fn overlapping_sets_rejected() {
        let g = DirectedGraph::empty(3);
        assert!(matches!(
            c_separates(&g, &set(&[0]), &set(&[]), &set(&[0])),
            Err(QueryError::Overlap(_))
        ));
    }

    #[test]
    fn unrolled_edges_must_increase_time() {
        let e = [(Var::new(0, 1), Var::new(1, 1))];
        assert!(matches!(
            UnrolledDag::from_edges(2, 2, &e),
            Err(QueryError::NonIncreasingEdge { .. })
        ));
    }

    #[test]
    fn dot_has_time_ranks() {
        let d = UnrolledDag::from_edges(2, 2, &[(Var::new(0, 0), Var::new(1, 1))]).unwrap();
        let dot = d.to_dot();
        assert!(dot.contains("{ rank=same; \"p0_0\"; \"p1_0\"; }"));
        assert!(dot.contains("\"p0_0\" -> \"p1_1\";"));
    }
}

use infograph::exactinfo::{cc_directed_information_sets, DEFAULT_EPS};
use infograph::graphquery::{c_separates, c_separation, unroll_dbn, Dag, UnrollMode, UnrolledDag};
use infograph::model::{enumerate_joint, Var, DEFAULT_STATE_CAP};
use infograph::sim::{
    coupled_pair_with_follower, model_graph, random_generative_model, xor_system, RandomModelSpec,
};
use infograph::structure::DirectedGraph;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn set(xs: &[usize]) -> BTreeSet<usize> {
    xs.iter().copied().collect()
}

/// Edges of the five-node example system: A->B, B->C, D->A, D->C, C->E.
fn example_system() -> DirectedGraph {
    DirectedGraph::from_edges(5, &[(0, 1), (1, 2), (3, 0), (3, 2), (2, 4)])
        .unwrap()
        .with_names(["A", "B", "C", "D", "E"].map(String::from).to_vec())
        .unwrap()
}

/// Every simple path from `u` to `w` as `(node, edge)` steps, where `edge` is
/// the directed edge `(from, to)` used to reach `node`. Opposite parallel
/// edges count as distinct paths.
fn simple_paths(g: &DirectedGraph, u: usize, w: usize) -> Vec<Vec<(usize, (usize, usize))>> {
    fn go(
        g: &DirectedGraph,
        v: usize,
        w: usize,
        seen: &mut Vec<bool>,
        path: &mut Vec<(usize, (usize, usize))>,
        out: &mut Vec<Vec<(usize, (usize, usize))>>,
    ) {
        if v == w {
            out.push(path.clone());
            return;
        }
        for x in 0..g.m() {
            if seen[x] {
                continue;
            }
            for e in [(v, x), (x, v)] {
                if g.has_edge(e.0, e.1) {
                    seen[x] = true;
                    path.push((x, e));
                    go(g, x, w, seen, path, out);
                    path.pop();
                    seen[x] = false;
                }
            }
        }
    }
    let mut seen = vec![false; g.m()];
    seen[u] = true;
    let mut out = Vec::new();
    go(g, u, w, &mut seen, &mut Vec::new(), &mut out);
    out
}

/// c-separation by listing every path: blocked iff some node of Z ∪ W on it
/// has an outgoing edge along the path.
fn csep_by_paths(
    g: &DirectedGraph,
    u: &BTreeSet<usize>,
    z: &BTreeSet<usize>,
    w: &BTreeSet<usize>,
) -> bool {
    let guard: BTreeSet<usize> = z.union(w).copied().collect();
    for &a in u {
        for &b in w {
            for path in simple_paths(g, a, b) {
                let blocked = path.iter().any(|&(_, (from, _))| guard.contains(&from));
                if !blocked {
                    return false;
                }
            }
        }
    }
    true
}

/// d-separation by listing every path in the DAG.
fn dsep_by_paths(
    dag_parents: &[BTreeSet<usize>],
    u: &BTreeSet<usize>,
    z: &BTreeSet<usize>,
    w: &BTreeSet<usize>,
) -> bool {
    let k = dag_parents.len();
    let g = DirectedGraph::from_parents(dag_parents.to_vec()).unwrap();
    let desc_in_z = |v: usize| {
        let mut stack = vec![v];
        let mut seen = vec![false; k];
        while let Some(x) = stack.pop() {
            if z.contains(&x) {
                return true;
            }
            if !seen[x] {
                seen[x] = true;
                stack.extend(g.children(x));
            }
        }
        false
    };
    for &a in u {
        for &b in w {
            for path in simple_paths(&g, a, b) {
                let open = path.windows(2).all(|win| {
                    let (mid, into_mid) = (win[0].0, win[0].1);
                    let out_of_mid = win[1].1;
                    let collider = into_mid.1 == mid && out_of_mid.1 == mid;
                    if collider {
                        desc_in_z(mid)
                    } else {
                        !z.contains(&mid)
                    }
                });
                if open {
                    return false;
                }
            }
        }
    }
    true
}

fn arb_graph(max_nodes: usize) -> impl Strategy<Value = DirectedGraph> {
    (2..=max_nodes).prop_flat_map(|m| {
        proptest::collection::vec(any::<bool>(), m * m).prop_map(move |bits| {
            let mut parents = vec![BTreeSet::new(); m];
            for i in 0..m {
                for k in 0..m {
                    if k != i && bits[i * m + k] {
                        parents[i].insert(k);
                    }
                }
            }
            DirectedGraph::from_parents(parents).unwrap()
        })
    })
}

/// Random disjoint (u, z, w) with u, w nonempty.
fn arb_sets(
    m: usize,
) -> impl Strategy<Value = (BTreeSet<usize>, BTreeSet<usize>, BTreeSet<usize>)> {
    proptest::collection::vec(0u8..4, m).prop_filter_map("u and w nonempty", |labels| {
        let pick = |l: u8| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, &x)| x == l)
                .map(|(i, _)| i)
                .collect::<BTreeSet<_>>()
        };
        let (u, z, w) = (pick(1), pick(2), pick(3));
        (!u.is_empty() && !w.is_empty()).then_some((u, z, w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn csep_reachability_matches_path_enumeration(
        (g, sets) in arb_graph(6).prop_flat_map(|g| { let m = g.m(); (Just(g), arb_sets(m)) })
    ) {
        let (u, z, w) = sets;
        let fast = c_separates(&g, &u, &z, &w).unwrap();
        prop_assert_eq!(fast, csep_by_paths(&g, &u, &z, &w));
        // a reported open path must really be open
        if let Some(p) = c_separation(&g, &u, &z, &w).unwrap().open_path {
            let nodes = p.nodes();
            prop_assert!(u.contains(&nodes[0]));
            prop_assert!(w.contains(nodes.last().unwrap()));
        }
    }

    #[test]
    fn dsep_bayes_ball_matches_path_enumeration(
        (m, bits, labels) in (2usize..=6).prop_flat_map(|m| (Just(m), proptest::collection::vec(any::<bool>(), m * m), proptest::collection::vec(0u8..4, m)))
    ) {
        // edges only from lower to higher index keep the graph acyclic
        let mut parents = vec![BTreeSet::new(); m];
        for i in 0..m {
            for k in 0..i {
                if bits[i * m + k] {
                    parents[i].insert(k);
                }
            }
        }
        let pick = |l: u8| labels.iter().enumerate().filter(|(_, &x)| x == l).map(|(i, _)| i).collect::<BTreeSet<_>>();
        let (u, z, w) = (pick(1), pick(2), pick(3));
        prop_assume!(!u.is_empty() && !w.is_empty());
        let dag = Dag::new(parents.clone());
        prop_assert_eq!(dag.d_separates(&u, &z, &w).unwrap(), dsep_by_paths(&parents, &u, &z, &w));
    }
}

#[test]
fn example_system_separation_cases() {
    let g = example_system();
    let (a, b, c, d, e) = (0, 1, 2, 3, 4);
    assert!(c_separates(&g, &set(&[d]), &set(&[a]), &set(&[b])).unwrap());
    assert!(c_separates(&g, &set(&[d]), &set(&[a, c]), &set(&[b])).unwrap());
    assert!(c_separates(&g, &set(&[c]), &set(&[d]), &set(&[a])).unwrap());
    assert!(c_separates(&g, &set(&[e]), &set(&[]), &set(&[c])).unwrap());
    // c-separation is not symmetric here
    assert!(!c_separates(&g, &set(&[c]), &set(&[]), &set(&[e])).unwrap());
}

#[test]
fn complete_graph_separates_nothing_unconditionally() {
    let m = 4;
    let edges: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..m).filter(move |&k| k != i).map(move |k| (k, i)))
        .collect();
    let g = DirectedGraph::from_edges(m, &edges).unwrap();
    for u in 0..m {
        for w in 0..m {
            if u != w {
                assert!(!c_separates(&g, &set(&[u]), &set(&[]), &set(&[w])).unwrap());
            }
        }
    }
}

#[test]
fn asymmetry_witness_found_by_search() {
    // all graphs on 3 nodes, all singleton queries
    let mut witness = None;
    'outer: for mask in 0u32..64 {
        let pairs = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)];
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, e)| *e)
            .collect();
        let g = DirectedGraph::from_edges(3, &edges).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                if x == y {
                    continue;
                }
                let z: BTreeSet<usize> = (0..3).filter(|&v| v != x && v != y).collect();
                for zz in [BTreeSet::new(), z] {
                    let f = c_separates(&g, &set(&[x]), &zz, &set(&[y])).unwrap();
                    let r = c_separates(&g, &set(&[y]), &zz, &set(&[x])).unwrap();
                    if f != r {
                        witness = Some((edges.clone(), x, y));
                        break 'outer;
                    }
                }
            }
        }
    }
    assert!(witness.is_some());
}

/// Network W->Y, X->Y, W->Z with W, X at time 0 and Y, Z at time 1.
fn collider_network() -> UnrolledDag {
    let (w, x, y, z) = (
        Var::new(0, 0),
        Var::new(1, 0),
        Var::new(2, 1),
        Var::new(3, 1),
    );
    UnrolledDag::from_edges(4, 2, &[(w, y), (x, y), (w, z)]).unwrap()
}

#[test]
fn collider_network_d_separation() {
    let d = collider_network();
    let v = |i, t| BTreeSet::from([Var::new(i, t)]);
    assert!(d.d_separates(&v(3, 1), &v(0, 0), &v(2, 1)).unwrap());
    assert!(d.d_separates(&v(1, 0), &BTreeSet::new(), &v(0, 0)).unwrap());
    assert!(!d.d_separates(&v(1, 0), &v(2, 1), &v(0, 0)).unwrap());
    // disconnected nodes with nothing observed
    let e = UnrolledDag::from_edges(2, 2, &[]).unwrap();
    assert!(e.d_separates(&v(0, 0), &BTreeSet::new(), &v(1, 1)).unwrap());
    assert!(d.d_separates(&v(9, 0), &BTreeSet::new(), &v(0, 0)).is_err());
}

#[test]
fn unrolled_coupled_system_has_order_one_parents() {
    let model = coupled_pair_with_follower(4).unwrap();
    let dag = unroll_dbn(&model, DEFAULT_STATE_CAP, DEFAULT_EPS).unwrap();
    assert_eq!(dag.mode, UnrollMode::Exact);
    for t in 1..4 {
        let p = |i| {
            dag.parents(Var::new(i, t))
                .into_iter()
                .collect::<BTreeSet<_>>()
        };
        let at = |i| Var::new(i, t - 1);
        assert_eq!(p(0), BTreeSet::from([at(0), at(1)]));
        assert_eq!(p(1), BTreeSet::from([at(0), at(1)]));
        assert_eq!(p(2), BTreeSet::from([at(1), at(2)]));
    }
    assert!(dag.parents(Var::new(0, 0)).is_empty());
    assert_eq!(
        dag.collapse().parent_map(),
        model_graph(&model).parent_map()
    );
}

#[test]
fn unrolled_independent_processes_have_no_edges() {
    let spec = RandomModelSpec::binary(3, 3, 0, 21);
    let model = random_generative_model(&spec).unwrap();
    let dag = unroll_dbn(&model, DEFAULT_STATE_CAP, DEFAULT_EPS).unwrap();
    // own-history dependence may remain, but no edges between processes
    assert!(dag.edges().iter().all(|(a, b)| a.process == b.process));
    assert!(dag.collapse().edges().is_empty());
}

#[test]
fn unrolled_full_window_model_reads_every_parent_variable() {
    for seed in 0..10 {
        let spec = RandomModelSpec::binary(3, 3, 2, 100 + seed);
        let model = random_generative_model(&spec).unwrap();
        let dag = unroll_dbn(&model, DEFAULT_STATE_CAP, DEFAULT_EPS).unwrap();
        for i in 0..3 {
            for t in 0..3 {
                let parents: BTreeSet<Var> = dag.parents(Var::new(i, t)).into_iter().collect();
                let allowed: BTreeSet<Var> = model.window_context(i, t).into_iter().collect();
                assert!(parents.is_subset(&allowed));
                for &k in model.parents(i) {
                    for s in 0..t {
                        assert!(
                            parents.contains(&Var::new(k, s)),
                            "seed {seed}: {k}@{s} -> {i}@{t}"
                        );
                    }
                }
            }
        }
        assert_eq!(dag.collapse().parent_map(), model.parent_map());
    }
}

#[test]
fn declared_unroll_beyond_cap() {
    let model = xor_system(0.1, 3).unwrap();
    let dag = unroll_dbn(&model, 16, DEFAULT_EPS).unwrap();
    assert_eq!(dag.mode, UnrollMode::Declared);
    let p: BTreeSet<Var> = dag.parents(Var::new(3, 2)).into_iter().collect();
    assert_eq!(p, BTreeSet::from([Var::new(0, 0), Var::new(1, 0)]));
}

#[test]
fn xor_system_is_not_a_perfect_map() {
    // Z's parents are W and X, yet X alone carries no information about Z
    let model = xor_system(0.1, 3).unwrap();
    let joint = enumerate_joint(&model, DEFAULT_STATE_CAP).unwrap();
    let g = model_graph(&model);
    let (w, x, z) = (0, 1, 3);
    assert!(!c_separates(&g, &set(&[x]), &set(&[]), &set(&[z])).unwrap());
    let di = cc_directed_information_sets(&joint, &set(&[x]), &set(&[z]), &set(&[])).unwrap();
    assert!(di.value <= DEFAULT_EPS);
    let _ = w;
}

use std::collections::BTreeSet;

use proptest::prelude::*;

use covsel::citest::{ci_test, mi_statistic, CiOracle};
use covsel::dataset::{contingency, DiscreteDataset};
use covsel::graphs::{d_separated, Dag, DsepOracle};
use covsel::par::Execution;
use covsel::structure::{
    hill_climb, hill_climb_traced, mmpc_neighbors, mmpc_skeleton, HillClimbConfig, MmpcConfig, Phase1,
};
use covsel::targets::{definitional_targets, oracle_targets};

/// Random DAG on `p` vertices: edges follow a shuffled order so that low
/// indices are not always sources.
fn dag_strategy(max_p: usize) -> impl Strategy<Value = Dag> {
    (2..=max_p).prop_flat_map(|p| {
        (Just((0..p).collect::<Vec<_>>()).prop_shuffle(), prop::collection::vec(any::<bool>(), p * (p - 1) / 2))
            .prop_map(move |(order, coins)| build_dag(p, &order, &coins))
    })
}

fn build_dag(p: usize, order: &[usize], coins: &[bool]) -> Dag {
    let mut dag = Dag::with_size(p);
    let mut k = 0;
    for a in 0..p {
        for b in a + 1..p {
            if coins[k] {
                dag.add_edge(order[a], order[b]).unwrap();
            }
            k += 1;
        }
    }
    dag
}

/// d-separation by enumerating every simple path in the skeleton.
fn brute_dsep(dag: &Dag, i: usize, j: usize, cond: &[usize]) -> bool {
    let z: BTreeSet<usize> = cond.iter().copied().collect();
    let has_desc_in_z = |v: usize| z.contains(&v) || z.iter().any(|&w| dag.has_path(v, w));
    let mut stack = vec![vec![i]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == j {
            let active = (1..path.len() - 1).all(|k| {
                let (a, v, b) = (path[k - 1], path[k], path[k + 1]);
                let collider = dag.has_edge(a, v) && dag.has_edge(b, v);
                if collider {
                    has_desc_in_z(v)
                } else {
                    !z.contains(&v)
                }
            });
            if active {
                return false;
            }
            continue;
        }
        let nbrs: BTreeSet<usize> = dag.parents(last).union(dag.children(last)).copied().collect();
        for n in nbrs {
            if !path.contains(&n) {
                let mut next = path.clone();
                next.push(n);
                stack.push(next);
            }
        }
    }
    true
}

fn discrete_data() -> impl Strategy<Value = DiscreteDataset> {
    (2usize..=4, 30usize..200).prop_flat_map(|(vars, n)| {
        prop::collection::vec((2u32..=3, prop::collection::vec(0u32..3, n)), vars).prop_map(move |cols| {
            // chain-correlate neighbours so some structure exists
            let mut out: Vec<Vec<u32>> = Vec::new();
            for (k, (levels, raw)) in cols.into_iter().enumerate() {
                let col: Vec<u32> = raw
                    .iter()
                    .enumerate()
                    .map(|(r, &v)| if k > 0 && v == 0 { out[k - 1][r] % levels } else { v % levels })
                    .collect();
                out.push(col);
            }
            DiscreteDataset::from_codes(out).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dsep_agrees_with_path_enumeration(dag in dag_strategy(8), seed in any::<u64>()) {
        let p = dag.p();
        let i = (seed % p as u64) as usize;
        let j = ((seed >> 8) % p as u64) as usize;
        prop_assume!(i != j);
        let cond: Vec<usize> = (0..p).filter(|&v| v != i && v != j && (seed >> (16 + v)) & 1 == 1).collect();
        prop_assert_eq!(d_separated(&dag, i, j, &cond), brute_dsep(&dag, i, j, &cond));
        prop_assert_eq!(d_separated(&dag, i, j, &cond), d_separated(&dag, j, i, &cond));
    }

    #[test]
    fn treatment_neighbors_are_its_parents(dag in dag_strategy(7)) {
        // make the last vertex childless, so it plays T with only causes among the candidates
        let mut dag = dag;
        let t = dag.p() - 1;
        for c in dag.children(t).clone() {
            dag.remove_edge(t, c);
        }
        let cands: Vec<usize> = (0..t).collect();
        let oracle = DsepOracle::new(dag.clone());
        for phase1 in [Phase1::MaxMin, Phase1::Ordered] {
            let cfg = MmpcConfig { phase1, ..MmpcConfig::uncapped() };
            prop_assert_eq!(&mmpc_neighbors(&oracle, t, &cands, &cfg), dag.parents(t));
        }
    }

    #[test]
    fn oracle_target_sets_satisfy_invariants(dag in dag_strategy(7)) {
        // last two vertices play T and Y with T -> Y and no descendants among X
        let mut dag = dag;
        let p = dag.p();
        prop_assume!(p >= 4);
        let (t, y) = (p - 2, p - 1);
        for v in [t, y] {
            for c in dag.children(v).clone() {
                dag.remove_edge(v, c);
            }
        }
        dag.add_edge(t, y).unwrap();
        let x: Vec<usize> = (0..t).collect();
        let est = oracle_targets(&dag, &x, t, y);
        prop_assert!(est.check_invariants().is_ok());
        // with no children in X, the blanket of T within X is its parents
        let truth = definitional_targets(&dag, &x, t, y);
        prop_assert_eq!(&est.xt, dag.parents(t));
        prop_assert_eq!(&truth.xt, dag.parents(t));
    }

    #[test]
    fn contingency_margins_are_consistent(data in discrete_data()) {
        let cond: Vec<usize> = (2..data.n_vars()).collect();
        let tab = contingency(&data, 0, 1, &cond).unwrap();
        let total: u32 = tab.cells.iter().sum();
        prop_assert_eq!(total as usize, data.n());
        for s in 0..tab.strata() {
            for a in 0..tab.a_levels {
                let row: u32 = (0..tab.b_levels).map(|b| tab.cell(s, a, b)).sum();
                prop_assert_eq!(row, tab.n_ik[s * tab.a_levels + a]);
            }
        }
    }

    #[test]
    fn mi_test_is_symmetric_and_ignores_constants(data in discrete_data()) {
        let cond: Vec<usize> = (2..data.n_vars()).collect();
        let ab = ci_test(&data, 0, 1, &cond, 0.05);
        let ba = ci_test(&data, 1, 0, &cond, 0.05);
        prop_assert!((ab.g2 - ba.g2).abs() <= 1e-9 * ab.g2.max(1.0));
        prop_assert_eq!(ab.df, ba.df);
        prop_assert!(ab.mi_hat >= 0.0 && (0.0..=1.0).contains(&ab.p_value));

        let mut cols: Vec<Vec<u32>> = (0..data.n_vars()).map(|v| data.codes(v).to_vec()).collect();
        cols.push(vec![0; data.n()]);
        let with_const = DiscreteDataset::from_codes(cols).unwrap();
        let mut cond2 = cond.clone();
        cond2.push(data.n_vars());
        let (mi1, df1) = mi_statistic(&contingency(&data, 0, 1, &cond).unwrap());
        let (mi2, df2) = mi_statistic(&contingency(&with_const, 0, 1, &cond2).unwrap());
        prop_assert!((mi1 - mi2).abs() <= 1e-12);
        prop_assert_eq!(df1, df2);
    }

    #[test]
    fn hill_climbing_is_monotone_acyclic_and_inside_the_skeleton(data in discrete_data()) {
        let vertices: Vec<usize> = (0..data.n_vars()).collect();
        let cfg = MmpcConfig::default();
        let skel = mmpc_skeleton(&covsel::citest::MiTest::new(&data, cfg.ci_config()), &vertices, &cfg, Execution::Sequential);
        let hc = hill_climb_traced(&data, &skel, &HillClimbConfig::default());
        prop_assert!(hc.dag.is_acyclic());
        prop_assert!(hc.trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(hc.dag.edges().iter().all(|&(a, b)| skel.adjacent(a, b)));
        prop_assert_eq!(hill_climb(&data, &skel, &HillClimbConfig::default()).edges(), hc.dag.edges());
    }
}

#[test]
fn independence_oracle_default_p_values() {
    struct Never;
    impl CiOracle for Never {
        fn independent(&self, _: usize, _: usize, _: &[usize]) -> bool {
            false
        }
    }
    assert_eq!(Never.p_value(0, 1, &[]), 0.0);
}

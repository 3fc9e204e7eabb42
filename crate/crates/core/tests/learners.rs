mod common;

use common::{enumerate_splits, finite_difference_gradient, max_relative_error, random_table, split_sse};
use errcast_core::dataset::Table;
use errcast_core::forest::{best_split, fit_forest, fit_tree, fit_tree_rows, node_sse, tree_sample, ForestParams};
use errcast_core::network::{gradient, init_network, train, NetworkArch, TrainHyper};
use errcast_core::seed;
use proptest::prelude::*;
use rand::Rng;

fn full_tree(n_features: usize) -> ForestParams {
    ForestParams {
        n_trees: 1,
        max_depth: None,
        min_samples_leaf: 1,
        features_per_split: Some(n_features),
        seed: 0,
        bootstrap: false,
    }
}

#[test]
fn backprop_matches_finite_differences() {
    for case in 0..25u64 {
        let mut rng = seed::rng(seed::derive_indexed(11, "gradcheck", case));
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=5));
        }
        sizes.push(rng.random_range(1..=3));
        let arch = NetworkArch::new(sizes.clone()).unwrap();
        let net = init_network(&arch, case, 1.5);
        let batch = rng.random_range(1..=6);
        let x = random_table(&mut rng, batch, sizes[0], -1.5, 1.5);
        let y = random_table(&mut rng, batch, arch.n_out(), -1.0, 1.0);
        let rows: Vec<usize> = (0..batch).collect();
        let analytic = gradient(&net, &x, &y, &rows).unwrap().flat();
        let numeric = finite_difference_gradient(&net, &x, &y, 1e-6);
        let err = max_relative_error(&analytic, &numeric, 1e-4);
        assert!(err < 1e-5, "case {case} arch {sizes:?}: relative error {err}");
    }
}

#[test]
fn repeating_the_batch_leaves_the_mean_gradient() {
    let mut rng = seed::rng(5);
    let arch = NetworkArch::new(vec![3, 4, 2]).unwrap();
    let net = init_network(&arch, 2, 1.0);
    let x = random_table(&mut rng, 4, 3, -1.0, 1.0);
    let y = random_table(&mut rng, 4, 2, -1.0, 1.0);
    let rows = [0, 1, 2, 3];
    let g = gradient(&net, &x, &y, &rows).unwrap().flat();
    let doubled = gradient(&net, &x, &y, &[0, 1, 2, 3, 0, 1, 2, 3]).unwrap().flat();
    assert!(max_relative_error(&g, &doubled, 1e-12) < 1e-12);
}

#[test]
fn cart_split_matches_exhaustive_enumeration() {
    for case in 0..15u64 {
        let mut rng = seed::rng(seed::derive_indexed(3, "cart", case));
        let n = rng.random_range(4..=50);
        let f = rng.random_range(1..=5);
        let x = random_table(&mut rng, n, f, 0.0, 1.0);
        let y = random_table(&mut rng, n, 1, -2.0, 2.0);
        let min_leaf = rng.random_range(1..=3);
        let rows: Vec<usize> = (0..n).collect();
        let features: Vec<usize> = (0..f).collect();
        let all = enumerate_splits(&x, &y, min_leaf);
        let chosen = best_split(&x, &y, &rows, &features, min_leaf);
        if all.is_empty() {
            assert!(chosen.is_none());
            continue;
        }
        let chosen = chosen.unwrap();
        let best = all.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
        let oracle = all.iter().find(|s| s.2 <= best + 1e-9 * (1.0 + best)).unwrap();
        assert_eq!((chosen.feature, chosen.threshold), (oracle.0, oracle.1), "case {case}");
        assert!((split_sse(&x, &y, chosen.feature, chosen.threshold) - best).abs() < 1e-9 * (1.0 + best));
        assert!((chosen.sse - best).abs() < 1e-9 * (1.0 + best));
    }
}

#[test]
fn separable_two_class_toy_is_fit_exactly() {
    let x = Table::from_rows(&[vec![0.0], vec![0.5], vec![1.0], vec![3.0], vec![3.5]]).unwrap();
    let y = Table::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
    let split = best_split(&x, &y, &[0, 1, 2, 3, 4], &[0], 1).unwrap();
    let all = enumerate_splits(&x, &y, 1);
    let best = all.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    assert_eq!(best, 0.0);
    assert_eq!(split.threshold, 2.0);
}

#[test]
fn unbounded_tree_interpolates_unique_rows() {
    let mut rng = seed::rng(17);
    let x = random_table(&mut rng, 40, 3, -1.0, 1.0);
    let y = random_table(&mut rng, 40, 2, -5.0, 5.0);
    let tree = fit_tree(&x, &y, &full_tree(3), 0).unwrap();
    for r in 0..40 {
        assert_eq!(tree.predict(x.row(r)), y.row(r));
    }
}

#[test]
fn forests_are_deterministic() {
    let mut rng = seed::rng(8);
    let x = random_table(&mut rng, 60, 4, 0.0, 1.0);
    let y = random_table(&mut rng, 60, 1, 0.0, 1.0);
    let schema: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
    let params = ForestParams { seed: 21, ..ForestParams::default() };
    assert_eq!(fit_forest(&x, &y, &schema, &params).unwrap(), fit_forest(&x, &y, &schema, &params).unwrap());
}

#[test]
fn network_training_is_deterministic() {
    let mut rng = seed::rng(8);
    let x = random_table(&mut rng, 30, 2, -1.0, 1.0);
    let y = random_table(&mut rng, 30, 1, -1.0, 1.0);
    let net = init_network(&NetworkArch::new(vec![2, 5, 5, 1]).unwrap(), 1, 1.0);
    let hyper = TrainHyper { epochs: 20, batch_size: 7, seed: 4, ..TrainHyper::default() };
    let (a, ta) = train(&net, &x, &y, &hyper).unwrap();
    let (b, tb) = train(&net, &x, &y, &hyper).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let json = serde_json::to_string(&a).unwrap();
    let back: errcast_core::network::Network = serde_json::from_str(&json).unwrap();
    for r in 0..30 {
        assert_eq!(a.forward(x.row(r)), back.forward(x.row(r)));
    }
}

fn dataset(seed_value: u64, n: usize, f: usize) -> (Table, Table) {
    let mut rng = seed::rng(seed_value);
    (random_table(&mut rng, n, f, -1.0, 1.0), random_table(&mut rng, n, 1, -1.0, 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_sse_never_exceeds_root_sse(s in any::<u64>(), n in 5usize..60, f in 1usize..5) {
        let (x, y) = dataset(s, n, f);
        let params = ForestParams { seed: s, ..ForestParams::default() };
        let (rows, tree_seed) = tree_sample(&params, n, 0);
        let tree = fit_tree_rows(&x, &y, &rows, &params, tree_seed).unwrap();
        let sse: f64 = rows.iter().map(|&r| (tree.predict(x.row(r))[0] - y.get(r, 0)).powi(2)).sum();
        prop_assert!(sse <= node_sse(&y, &rows) + 1e-9);
    }

    #[test]
    fn forest_is_piecewise_constant(s in any::<u64>(), n in 5usize..40, probe in -1.0f64..1.0) {
        let (x, y) = dataset(s, n, 2);
        let schema = vec!["a".to_string(), "b".to_string()];
        let forest = fit_forest(&x, &y, &schema, &ForestParams { seed: s, ..ForestParams::default() }).unwrap();
        let mut thresholds = Vec::new();
        for tree in &forest.trees {
            tree.thresholds(0, &mut thresholds);
        }
        let gap = thresholds.iter().map(|t| (t - probe).abs()).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-9);
        let nudge = 0.5 * gap.min(1.0);
        let base = forest.predict(&[probe, 0.3]);
        prop_assert_eq!(&base, &forest.predict(&[probe + nudge, 0.3]));
        prop_assert_eq!(&base, &forest.predict(&[probe - nudge, 0.3]));
    }

    #[test]
    fn row_order_does_not_change_predictions(s in any::<u64>(), n in 5usize..40, f in 1usize..4) {
        let (x, y) = dataset(s, n, f);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left((s % n as u64) as usize);
        let xp = x.select(&order);
        let yp = y.select(&order);
        let params = ForestParams { min_samples_leaf: 2, ..full_tree(f) };
        let a = fit_tree(&x, &y, &params, 0).unwrap();
        let b = fit_tree(&xp, &yp, &params, 0).unwrap();
        let mut rng = seed::rng(s ^ 0x55);
        for _ in 0..20 {
            let probe: Vec<f64> = (0..f).map(|_| rng.random_range(-1.2..1.2)).collect();
            let (pa, pb) = (a.predict(&probe)[0], b.predict(&probe)[0]);
            prop_assert!((pa - pb).abs() < 1e-12, "{} vs {}", pa, pb);
        }
    }

    #[test]
    fn forward_is_finite_with_bounded_hidden_units(s in any::<u64>(), x0 in -50.0f64..50.0, x1 in -50.0f64..50.0) {
        let net = init_network(&NetworkArch::new(vec![2, 6, 6, 3]).unwrap(), s, 2.0);
        let acts = net.activations(&[x0, x1]);
        for hidden in &acts[1..acts.len() - 1] {
            prop_assert!(hidden.iter().all(|a| a.abs() <= 1.0));
        }
        prop_assert!(acts.last().unwrap().iter().all(|v| v.is_finite()));
    }
}

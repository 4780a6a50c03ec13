mod common;

use heterograph::attribution::{
    aggregate, grad_input, heatmap_matrix, integrated_gradients, zero_baseline, AttributionError, Method,
};
use heterograph::model::{HyperParams, ModelKind, ModelParams};
use heterograph::{HeteroGraph, Tape, Tensor};
use proptest::prelude::*;

use common::{fixture_graph, random_graph, random_tensor};

fn linear_probe(graph: &HeteroGraph, seed: u64) -> ModelParams {
    let hyper = HyperParams {
        input_dim: graph.schema().feature_count,
        hidden: 4,
        heads: 1,
        layers: 0,
        outputs: 6,
    };
    ModelParams::init(ModelKind::Mlp, hyper, graph.schema(), seed).unwrap()
}

fn wider(kind: ModelKind, graph: &HeteroGraph, seed: u64) -> ModelParams {
    let hyper = HyperParams {
        input_dim: graph.schema().feature_count,
        hidden: 8,
        heads: 2,
        layers: 2,
        outputs: 6,
    };
    ModelParams::init(kind, hyper, graph.schema(), seed).unwrap()
}

fn output(model: &ModelParams, graph: &HeteroGraph, node: usize, j: usize) -> f64 {
    model.predict(graph).unwrap().values.get(node, j)
}

/// Gradient of one output with respect to every input, on the whole graph.
fn full_gradient(model: &ModelParams, graph: &HeteroGraph, node: usize, j: usize) -> Tensor {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false);
    let xv = tape.leaf(graph.features().clone(), true);
    let y = model.forward_on(&mut tape, graph, xv, &params).unwrap();
    let p = tape.pick(y, node, j).unwrap();
    tape.backward(p).unwrap().take(xv).unwrap()
}

#[test]
fn gradient_input_equals_ig_on_a_linear_probe() {
    let g = fixture_graph(8, 1);
    let m = linear_probe(&g, 2);
    for node in 0..5 {
        for j in 0..6 {
            let gi = grad_input(&m, &g, node, j).unwrap();
            let ig = integrated_gradients(&m, &g, node, j, &zero_baseline(&g), 7).unwrap();
            assert!(common::max_abs_diff(&gi.scores, &ig.scores) <= 1e-10);
            assert_eq!(gi.method, Method::GradInput);
            assert_eq!(ig.steps, Some(7));
        }
    }
}

#[test]
fn restricted_gradients_match_the_whole_graph() {
    let g = fixture_graph(6, 3);
    for kind in ModelKind::ALL {
        let m = wider(kind, &g, 4);
        for node in 0..5 {
            let expected = g.features().mul(&full_gradient(&m, &g, node, 2)).unwrap();
            let got = grad_input(&m, &g, node, 2).unwrap().scores;
            assert!(common::max_abs_diff(&got, &expected) < 1e-12, "{kind} node {node}");
        }
    }
}

#[test]
fn node_without_in_edges_is_explained_by_itself() {
    let g = fixture_graph(6, 3);
    let m = wider(ModelKind::Hgt, &g, 5);
    let s = grad_input(&m, &g, 4, 0).unwrap().scores;
    for r in 0..4 {
        assert!(s.row(r).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn ig_completeness_on_the_fixture() {
    let g = fixture_graph(6, 7);
    let base = zero_baseline(&g);
    for kind in ModelKind::ALL {
        let m = wider(kind, &g, 8);
        for (node, j) in [(0, 0), (1, 3), (2, 5), (3, 1), (4, 2)] {
            let ig = integrated_gradients(&m, &g, node, j, &base, 200).unwrap();
            let delta = output(&m, &g, node, j) - output(&m, &base, node, j);
            let gap = (ig.total() - delta).abs();
            assert!(gap <= 0.01 * delta.abs() || gap < 1e-9, "{kind} ({node}, {j}): {gap} vs {delta}");
        }
    }
}

#[test]
fn ig_of_the_baseline_itself_is_zero() {
    let g = fixture_graph(4, 1);
    let m = wider(ModelKind::Hgt, &g, 1);
    let base = zero_baseline(&g);
    let ig = integrated_gradients(&m, &base, 1, 0, &base, 10).unwrap();
    assert!(ig.scores.data().iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_requests() {
    let g = fixture_graph(4, 1);
    let m = wider(ModelKind::Hgt, &g, 1);
    let base = zero_baseline(&g);
    assert!(matches!(integrated_gradients(&m, &g, 0, 0, &base, 0), Err(AttributionError::Steps)));
    assert!(matches!(grad_input(&m, &g, 5, 0), Err(AttributionError::Target { node: 5, .. })));
    assert!(matches!(grad_input(&m, &g, 0, 6), Err(AttributionError::Target { output: 6, .. })));
    let other = zero_baseline(&random_graph(5, 4, 2));
    assert!(matches!(integrated_gradients(&m, &g, 0, 0, &other, 5), Err(AttributionError::Structure)));
    assert!(matches!(heatmap_matrix(&m, &g, &random_tensor(5, 6, 1), &[], 5), Err(AttributionError::EmptyMask)));
}

#[test]
fn aggregate_sums_over_nodes() {
    let g = fixture_graph(5, 2);
    let m = wider(ModelKind::Gcn, &g, 3);
    let s = grad_input(&m, &g, 2, 1).unwrap();
    let agg = aggregate(&s);
    for (k, v) in agg.iter().enumerate() {
        let col: f64 = (0..5).map(|r| s.scores.get(r, k)).sum();
        assert!((v - col).abs() < 1e-15);
    }
    assert!((agg.iter().sum::<f64>() - s.total()).abs() < 1e-12);
}

#[test]
fn heatmap_rows_average_by_dominant_indicator() {
    let g = fixture_graph(4, 4);
    let m = wider(ModelKind::Hgt, &g, 5);
    let mut t = vec![0.0; 30];
    // Nodes 0 and 3 are dominated by indicator 2, node 1 by 4, node 2 by 0.
    for (i, j) in [(0, 2), (1, 4), (2, 0), (3, 2), (4, 1)] {
        t[i * 6 + j] = 1.0;
    }
    let targets = Tensor::new(5, 6, t).unwrap();
    let h = heatmap_matrix(&m, &g, &targets, &[0, 1, 2, 3], 20).unwrap();
    assert_eq!(h.counts, vec![1, 0, 2, 0, 1, 0]);
    assert!(h.values.row(1).iter().all(|&v| v == 0.0));
    let base = zero_baseline(&g);
    let a = aggregate(&integrated_gradients(&m, &g, 0, 2, &base, 20).unwrap());
    let b = aggregate(&integrated_gradients(&m, &g, 3, 2, &base, 20).unwrap());
    for k in 0..4 {
        assert!((h.values.get(2, k) - 0.5 * (a[k] + b[k])).abs() < 1e-14);
    }
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("indicator,06:00,06:15,06:30,06:45\noffice,"), "{text}");
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn heatmap_is_repeatable() {
    let g = random_graph(20, 5, 9);
    let m = wider(ModelKind::Hgt, &g, 2);
    let targets = random_tensor(20, 6, 3);
    let nodes: Vec<usize> = (0..20).step_by(3).collect();
    let a = heatmap_matrix(&m, &g, &targets, &nodes, 8).unwrap();
    assert_eq!(a, heatmap_matrix(&m, &g, &targets, &nodes, 8).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_probe_identity_on_random_graphs(n in 2usize..15, seed in any::<u64>(), steps in 1usize..30) {
        let g = random_graph(n, 5, seed);
        let m = linear_probe(&g, seed ^ 3);
        let node = (seed % n as u64) as usize;
        let gi = grad_input(&m, &g, node, 3).unwrap();
        let ig = integrated_gradients(&m, &g, node, 3, &zero_baseline(&g), steps).unwrap();
        prop_assert!(common::max_abs_diff(&gi.scores, &ig.scores) <= 1e-10);
        let delta = output(&m, &g, node, 3) - output(&m, &zero_baseline(&g), node, 3);
        prop_assert!((ig.total() - delta).abs() <= 1e-10);
    }

    #[test]
    fn attributions_vanish_outside_the_receptive_field(n in 2usize..20, seed in any::<u64>()) {
        let g = random_graph(n, 3, seed);
        let m = wider(ModelKind::Hgt, &g, seed);
        let node = (seed % n as u64) as usize;
        let s = grad_input(&m, &g, node, 0).unwrap().scores;
        let reach = g.topology().in_neighborhood(node, 2);
        for r in (0..n).filter(|r| !reach.contains(r)) {
            prop_assert!(s.row(r).iter().all(|&v| v == 0.0));
        }
    }
}

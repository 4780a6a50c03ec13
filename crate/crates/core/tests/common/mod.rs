#![allow(dead_code)]

use std::sync::Arc;

use heterograph::graph::{EdgeRecord, NodeRecord};
use heterograph::tape::SparseMatrix;
use heterograph::model::{HyperParams, ModelKind, ModelParams, ParamKey, Role};
use heterograph::{HeteroGraph, Schema, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn schema(features: usize) -> Schema {
    Schema {
        feature_count: features,
        ..Schema::default()
    }
}

pub fn edge(graph_schema: &Schema, src: usize, dst: usize, kind: &str) -> EdgeRecord {
    EdgeRecord {
        src,
        dst,
        edge_type: graph_schema.edge_type_index(kind).unwrap(),
    }
}

/// Five stations of three types. Node 4 has no incoming edge.
///
/// ```text
/// 0 tube <-> 1 bus   primary
/// 1 bus  <-> 2 bus   residential
/// 0 tube  -> 2 bus   tube-line
/// 3 bike  -> 1 bus   secondary
/// 2 bus  <-> 3 bike  tertiary
/// 4 bike  -> 3 bike  unclassified
/// ```
pub fn fixture_graph(features: usize, seed: u64) -> HeteroGraph {
    let s = schema(features);
    let mut r = rng(seed);
    let types = [0, 1, 1, 2, 2];
    let nodes = types
        .iter()
        .enumerate()
        .map(|(i, &t)| NodeRecord {
            id: format!("n{i}"),
            node_type: t,
            lon: -0.1 + 0.01 * i as f64,
            lat: 51.5 + 0.005 * i as f64,
            features: (0..features).map(|_| r.random_range(0.0..1.0)).collect(),
        })
        .collect();
    let edges = vec![
        edge(&s, 0, 1, "primary"),
        edge(&s, 1, 0, "primary"),
        edge(&s, 1, 2, "residential"),
        edge(&s, 2, 1, "residential"),
        edge(&s, 0, 2, "tube-line"),
        edge(&s, 3, 1, "secondary"),
        edge(&s, 2, 3, "tertiary"),
        edge(&s, 3, 2, "tertiary"),
        edge(&s, 4, 3, "unclassified"),
    ];
    HeteroGraph::new(s, nodes, edges).unwrap()
}

pub fn small_hyper(input_dim: usize) -> HyperParams {
    HyperParams {
        input_dim,
        hidden: 4,
        heads: 2,
        layers: 2,
        outputs: 3,
    }
}

pub fn model(kind: ModelKind, graph: &HeteroGraph, seed: u64) -> ModelParams {
    ModelParams::init(kind, small_hyper(graph.schema().feature_count), graph.schema(), seed).unwrap()
}

/// Central differences of a scalar function of one tensor.
pub fn fd_gradient(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut data = x.to_vec();
    let mut grad = vec![0.0; data.len()];
    for k in 0..data.len() {
        let orig = data[k];
        data[k] = orig + FD_STEP;
        let up = f(&Tensor::new(x.rows(), x.cols(), data.clone()).unwrap());
        data[k] = orig - FD_STEP;
        let down = f(&Tensor::new(x.rows(), x.cols(), data.clone()).unwrap());
        data[k] = orig;
        grad[k] = (up - down) / (2.0 * FD_STEP);
    }
    Tensor::new(x.rows(), x.cols(), grad).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn row_vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    assert_eq!(x.len(), w.rows());
    (0..w.cols()).map(|c| (0..x.len()).map(|r| x[r] * w.get(r, c)).sum()).collect()
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

fn weighted_output(tape: &mut Tape, build: &Build, vars: &[Var], weights: &Tensor) -> Var {
    let out = build(tape, vars).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Worst relative error, over inputs, between the tape gradient and central
/// differences of `sum(op(inputs) ⊙ R)` for a fixed random `R`.
pub fn op_gradient_error(inputs: &[Tensor], build: &Build, seed: u64) -> f64 {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape()
    };
    let weights = random_tensor(shape.0, shape.1, seed ^ 0x5eed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = weighted_output(&mut tape, build, &vars, &weights);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let numeric = fd_gradient(x, |probe| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(m, v)| t.constant(if m == k { probe.clone() } else { v.clone() }))
                .collect();
            let l = weighted_output(&mut t, build, &vs, &weights);
            t.value(l).item()
        });
        worst = worst.max(relative_error(grads.get(vars[k]).unwrap(), &numeric));
    }
    worst
}

/// Random values kept away from zero so ReLU kinks are not straddled.
pub fn away_from_zero(rows: usize, cols: usize, seed: u64) -> Tensor {
    random_tensor(rows, cols, seed).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

pub type OpCase = (&'static str, Vec<Tensor>, Box<Build>);

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + 'static,
) -> OpCase {
    (name, inputs, Box::new(build))
}

/// Every differentiable tape op with inputs of the given sizes, `n, m ≤ 16`.
pub fn op_cases(n: usize, m: usize, seed: u64) -> Vec<OpCase> {
    let t = |r, c, k: u64| random_tensor(r, c, seed.wrapping_mul(31).wrapping_add(k));
    let index: Arc<[usize]> = (0..n + 2).map(|k| (k * 7 + seed as usize) % n).collect();
    let segments: Arc<[usize]> = (0..n).map(|k| (k * 3 + seed as usize) % 3.min(n)).collect();
    let sparse = {
        let mut r = rng(seed ^ 0xabc);
        let trip: Vec<(usize, usize, f64)> = (0..2 * n)
            .map(|_| (r.random_range(0..n), r.random_range(0..n), r.random_range(-1.0..1.0)))
            .collect();
        Arc::new(SparseMatrix::from_triplets(n, n, &trip))
    };
    let sparse_t = Arc::new(sparse.transpose());
    let (gi, si, seg) = (index.clone(), index.clone(), segments.clone());
    vec![
        case("matmul", vec![t(n, m, 1), t(m, 3, 2)], |tp, v| tp.matmul(v[0], v[1])),
        case("add", vec![t(n, m, 3), t(n, m, 4)], |tp, v| tp.add(v[0], v[1])),
        case("sub", vec![t(n, m, 5), t(n, m, 6)], |tp, v| tp.sub(v[0], v[1])),
        case("mul", vec![t(n, m, 7), t(n, m, 8)], |tp, v| tp.mul(v[0], v[1])),
        case("add_row_bias", vec![t(n, m, 9), t(1, m, 10)], |tp, v| tp.add_row_bias(v[0], v[1])),
        case("relu", vec![away_from_zero(n, m, seed)], |tp, v| Ok(tp.relu(v[0]))),
        case("scale", vec![t(n, m, 11)], |tp, v| Ok(tp.scale(v[0], -1.7))),
        case("softmax_rows", vec![t(n, m, 12)], |tp, v| Ok(tp.softmax_rows(v[0]))),
        case("concat_cols", vec![t(n, m, 13), t(n, 2, 14), t(n, 1, 15)], |tp, v| tp.concat_cols(v)),
        case("gather_rows", vec![t(n, m, 16)], move |tp, v| tp.gather_rows(v[0], gi.clone())),
        case("scatter_rows", vec![t(n + 2, m, 17)], move |tp, v| tp.scatter_rows(v[0], si.clone(), n)),
        case("scale_rows", vec![t(n, m, 18), t(n, 1, 19)], |tp, v| tp.scale_rows(v[0], v[1])),
        case("row_dot", vec![t(n, m, 20), t(n, m, 21)], |tp, v| tp.row_dot(v[0], v[1])),
        case("segment_softmax", vec![t(n, 1, 22)], move |tp, v| tp.segment_softmax(v[0], seg.clone())),
        case("sparse_matmul", vec![t(n, m, 23)], move |tp, v| {
            tp.sparse_matmul(sparse.clone(), sparse_t.clone(), v[0])
        }),
        case("sum", vec![t(n, m, 24)], |tp, v| Ok(tp.sum(v[0]))),
        case("pick", vec![t(n, m, 25)], move |tp, v| tp.pick(v[0], n - 1, m / 2)),
    ]
}

fn param(model: &ModelParams, key: ParamKey) -> &Tensor {
    model.get(&key).unwrap_or_else(|| panic!("missing {key}"))
}

fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The transformer written edge by edge with plain vectors, one equation per
/// step: typed projection, per-head typed messages, bilinear attention with
/// softmax by explicit exponentiation, head mean, typed aggregation plus
/// residual, ReLU, linear head.
pub fn hgt_oracle(model: &ModelParams, graph: &HeteroGraph, x: &Tensor) -> Tensor {
    let hp = model.hyper;
    let n = graph.num_nodes();
    let dk = hp.hidden / hp.heads;
    let type_name = |i: usize| graph.schema().node_types[graph.node(i).node_type].clone();
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|i| row_vec_mat(x.row(i), param(model, ParamKey::new(0, Role::Projection).typed(&type_name(i)))))
        .collect();
    for l in 1..=hp.layers {
        let edges = graph.edges();
        let mut messages = Vec::with_capacity(edges.len());
        let mut scores = Vec::with_capacity(edges.len());
        for e in edges {
            let (s, t) = (e.src, e.dst);
            let rel = &graph.schema().edge_types[e.edge_type].name;
            let mut m = Vec::with_capacity(hp.hidden);
            let mut sc = Vec::with_capacity(hp.heads);
            for tau in 0..hp.heads {
                let mh = param(model, ParamKey::new(l, Role::MultiHead).head(tau).typed(&type_name(s)));
                let mp = param(model, ParamKey::new(l, Role::MessagePassing).typed(rel));
                m.extend(row_vec_mat(&row_vec_mat(&h[s], mh), mp));
                let q = row_vec_mat(&h[s], param(model, ParamKey::new(l, Role::Query).head(tau)));
                let k = row_vec_mat(&h[t], param(model, ParamKey::new(l, Role::Key).head(tau)));
                let qa = row_vec_mat(&q, param(model, ParamKey::new(l, Role::Attention).head(tau)));
                sc.push(vec_dot(&qa, &k) / (dk as f64).sqrt());
            }
            messages.push(m);
            scores.push(sc);
        }
        let mut next = Vec::with_capacity(n);
        for t in 0..n {
            let incoming: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].dst == t).collect();
            let mut alpha = vec![0.0; incoming.len()];
            for tau in 0..hp.heads {
                let exps: Vec<f64> = incoming.iter().map(|&e| scores[e][tau].exp()).collect();
                let z: f64 = exps.iter().sum();
                for (a, ex) in alpha.iter_mut().zip(&exps) {
                    *a += ex / z / hp.heads as f64;
                }
            }
            let mut agg = vec![0.0; hp.hidden];
            for (a, &e) in alpha.iter().zip(&incoming) {
                for (acc, v) in agg.iter_mut().zip(&messages[e]) {
                    *acc += a * v;
                }
            }
            let ag = param(model, ParamKey::new(l, Role::Aggregation).typed(&type_name(t)));
            let out: Vec<f64> = row_vec_mat(&agg, ag).iter().zip(&h[t]).map(|(a, r)| (a + r).max(0.0)).collect();
            next.push(out);
        }
        h = next;
    }
    let w = param(model, ParamKey::new(hp.layers + 1, Role::Output));
    let b = param(model, ParamKey::new(hp.layers + 1, Role::OutputBias));
    let rows: Vec<Vec<f64>> = h
        .iter()
        .map(|hi| row_vec_mat(hi, w).iter().zip(b.row(0)).map(|(v, bb)| v + bb).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

/// Relative error between tape gradients of `sum(forward ⊙ R)` and central
/// differences, over the input features and every parameter matrix.
pub fn model_gradient_error(model: &ModelParams, graph: &HeteroGraph, seed: u64) -> f64 {
    let outputs = model.hyper.outputs;
    let weights = random_tensor(graph.num_nodes(), outputs, seed);
    let loss_of = |m: &ModelParams, x: &Tensor| -> f64 {
        let y = m.predict_with(graph, x).unwrap().values;
        y.mul(&weights).unwrap().sum()
    };
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let xv = tape.leaf(graph.features().clone(), true);
    let y = model.forward_on(&mut tape, graph, xv, &params).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();

    let x = graph.features();
    let mut worst = relative_error(grads.get(xv).unwrap(), &fd_gradient(x, |probe| loss_of(model, probe)));
    for (key, var) in params.iter() {
        let value = model.get(key).unwrap();
        let numeric = fd_gradient(value, |probe| {
            let mut m = model.clone();
            m.set(key, probe.clone()).unwrap();
            loss_of(&m, x)
        });
        worst = worst.max(relative_error(grads.get(*var).unwrap(), &numeric));
    }
    worst
}

/// The default synthetic city for `root`, labelled, scaled and split the way
/// the command line does it.
pub fn city(root: u64) -> (heterograph::synth::SyntheticCity, heterograph::pipeline::Dataset) {
    use heterograph::pipeline::{derive_seed, prepare, PrepareOptions};
    use heterograph::synth::{generate, CitySpec};
    let spec = CitySpec {
        seed: derive_seed(root, "synth"),
        ..CitySpec::default()
    };
    let city = generate(&spec).unwrap();
    let opts = PrepareOptions {
        split_seed: derive_seed(root, "split"),
        ..PrepareOptions::default()
    };
    let data = prepare(&city.graph().unwrap(), &city.pois, &opts).unwrap();
    (city, data)
}

/// Members and induced edges of the 1-hop subgraph, from a scan of the edge list.
pub fn oracle_subgraph(graph: &HeteroGraph, i: usize) -> (Vec<usize>, Vec<usize>) {
    let mut members = std::collections::BTreeSet::from([i]);
    for e in graph.edges() {
        if e.dst == i {
            members.insert(e.src);
        }
        if e.src == i {
            members.insert(e.dst);
        }
    }
    let edges = (0..graph.num_edges())
        .filter(|&k| {
            let e = &graph.edges()[k];
            members.contains(&e.src) && members.contains(&e.dst)
        })
        .collect();
    (members.into_iter().collect(), edges)
}

/// Dissimilarity of `j`'s subgraph from `i`'s, written out term by term.
pub fn oracle_dissimilarity(graph: &HeteroGraph, i: usize, j: usize) -> f64 {
    let (mi, ei) = oracle_subgraph(graph, i);
    let (mj, ej) = oracle_subgraph(graph, j);
    let x = graph.features();
    let xi = x.row(i);
    let mut feature = 0.0;
    for &k in &mj {
        let xk = x.row(k);
        let l2 = xi.iter().zip(xk).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let (na, nb) = (xi.iter().map(|a| a * a).sum::<f64>().sqrt(), xk.iter().map(|a| a * a).sum::<f64>().sqrt());
        let cos = if na == 0.0 || nb == 0.0 {
            1.0
        } else {
            (1.0 - xi.iter().zip(xk).map(|(a, b)| a * b).sum::<f64>() / (na * nb)).max(0.0)
        };
        feature += 0.5 * (l2 + cos);
    }
    feature /= mj.len() as f64;

    let types = graph.schema().node_types.len();
    let count = |m: &[usize]| {
        let mut c = vec![0usize; types];
        for &k in m {
            c[graph.node(k).node_type] += 1;
        }
        c
    };
    let (ci, cj) = (count(&mi), count(&mj));
    let lo: usize = ci.iter().zip(&cj).map(|(a, b)| *a.min(b)).sum();
    let hi: usize = ci.iter().zip(&cj).map(|(a, b)| *a.max(b)).sum();
    let node_type = if hi == 0 { 0.0 } else { 1.0 - lo as f64 / hi as f64 };

    let mean_code = |es: &[usize]| {
        if es.is_empty() {
            0.0
        } else {
            es.iter().map(|&e| graph.edge_code(e) as f64).sum::<f64>() / es.len() as f64
        }
    };
    let edge_type = (mean_code(&ei) - mean_code(&ej)).abs();
    let structure = (ei.len() as f64 - ej.len() as f64).abs();
    feature + node_type + edge_type + structure
}

/// Exhaustive argmin over `desired`, lower index on ties.
pub fn oracle_counterfactual(graph: &HeteroGraph, i: usize, desired: &[usize]) -> (usize, f64) {
    let mut sorted = desired.to_vec();
    sorted.sort_unstable();
    let mut best = (usize::MAX, f64::INFINITY);
    for j in sorted {
        let d = oracle_dissimilarity(graph, i, j);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Random heterogeneous graph with `n` nodes and about `2n` edges.
pub fn random_graph(n: usize, features: usize, seed: u64) -> HeteroGraph {
    let s = schema(features);
    let mut r = rng(seed);
    let nodes = (0..n)
        .map(|i| NodeRecord {
            id: format!("r{i}"),
            node_type: r.random_range(0..3),
            lon: 0.001 * i as f64,
            lat: 0.0,
            features: (0..features).map(|_| r.random_range(0.0..1.0)).collect(),
        })
        .collect();
    let kinds = s.edge_types.len();
    let edges = (0..2 * n)
        .filter_map(|_| {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            (a != b).then(|| EdgeRecord { src: a, dst: b, edge_type: r.random_range(0..kinds) })
        })
        .collect();
    HeteroGraph::new(s, nodes, edges).unwrap()
}

/// Disjoint stars; each spec is (centre type, leaf types). Leaves point at
/// the centre. Returns the graph and the centre indices.
pub fn stars(specs: &[(usize, Vec<usize>)], features: impl Fn(usize) -> Vec<f64>) -> (HeteroGraph, Vec<usize>) {
    let s = schema(2);
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut centres = Vec::new();
    let push = |t: usize, nodes: &mut Vec<NodeRecord>| {
        let i = nodes.len();
        nodes.push(NodeRecord {
            id: format!("v{i}"),
            node_type: t,
            lon: 0.0,
            lat: 0.0,
            features: features(i),
        });
        i
    };
    for (centre, leaves) in specs {
        let c = push(*centre, &mut nodes);
        centres.push(c);
        for &t in leaves {
            let l = push(t, &mut nodes);
            edges.push(EdgeRecord { src: l, dst: c, edge_type: 0 });
        }
    }
    (HeteroGraph::new(s, nodes, edges).unwrap(), centres)
}

/// Query star and an exact copy placed among random decoys whose features
/// never equal the query's.
pub fn clone_fixture(decoys: usize, leaves: usize, seed: u64) -> (HeteroGraph, usize, usize) {
    let s = schema(4);
    let mut r = rng(seed);
    let kinds = s.edge_types.len();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for i in 0..decoys {
        nodes.push(NodeRecord {
            id: format!("d{i}"),
            node_type: r.random_range(0..3),
            lon: 0.0,
            lat: 0.0,
            features: (0..4).map(|_| r.random_range(0.0..0.4)).collect(),
        });
    }
    for _ in 0..2 * decoys {
        let (a, b) = (r.random_range(0..decoys), r.random_range(0..decoys));
        if a != b {
            edges.push(EdgeRecord { src: a, dst: b, edge_type: r.random_range(0..kinds) });
        }
    }
    let centre_type = r.random_range(0..3);
    let leaf_types: Vec<(usize, usize, bool)> = (0..leaves)
        .map(|_| (r.random_range(0..3), r.random_range(0..kinds), r.random_bool(0.5)))
        .collect();
    let mut centres = Vec::new();
    for copy in 0..2 {
        let c = nodes.len();
        centres.push(c);
        nodes.push(NodeRecord {
            id: format!("c{copy}"),
            node_type: centre_type,
            lon: 0.0,
            lat: 0.0,
            features: vec![0.7; 4],
        });
        for (k, &(t, kind, inward)) in leaf_types.iter().enumerate() {
            let l = nodes.len();
            nodes.push(NodeRecord {
                id: format!("c{copy}l{k}"),
                node_type: t,
                lon: 0.0,
                lat: 0.0,
                features: vec![0.7; 4],
            });
            let (src, dst) = if inward { (l, c) } else { (c, l) };
            edges.push(EdgeRecord { src, dst, edge_type: kind });
        }
    }
    (HeteroGraph::new(s, nodes, edges).unwrap(), centres[0], centres[1])
}

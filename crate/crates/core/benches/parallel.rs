//! Rayon backend against a single thread.
//!
//! With the default `parallel` feature each kernel runs on a one-thread pool
//! and on the global pool. `cargo bench --no-default-features` runs the
//! plain sequential loops under the label `sequential`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use heterograph::attribution::heatmap_matrix;
use heterograph::counterfactual::{aggregate_cf_scores, mixed_set};
use heterograph::pipeline::{derive_seed, prepare, Dataset, PrepareOptions};
use heterograph::synth::{generate, CitySpec};
use heterograph::{HyperParams, ModelKind, ModelParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn city() -> Dataset {
    let spec = CitySpec {
        seed: derive_seed(42, "synth"),
        ..CitySpec::default()
    };
    let city = generate(&spec).unwrap();
    let opts = PrepareOptions {
        split_seed: derive_seed(42, "split"),
        ..PrepareOptions::default()
    };
    prepare(&city.graph().unwrap(), &city.pois, &opts).unwrap()
}

/// Runs `f` under every backend available in this build.
fn backends(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::from_parameter("single-thread"), |b| b.iter(|| single.install(&mut f)));
        let label = format!("global-pool-{}", rayon::current_num_threads());
        g.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(&mut f));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&mut f));
    g.finish();
}

fn matmul(c: &mut Criterion) {
    let a = random(400, 128, 1);
    let b = random(128, 128, 2);
    backends(c, "matmul_400x128x128", || {
        std::hint::black_box(a.matmul(&b).unwrap());
    });
}

fn counterfactual_table(c: &mut Criterion) {
    let data = city();
    let mixed = mixed_set(&data.targets.values, 0.1).unwrap();
    backends(c, "cf_table_city", || {
        std::hint::black_box(aggregate_cf_scores(&data.graph, &data.targets.values, &mixed).unwrap());
    });
}

fn ig_heatmap(c: &mut Criterion) {
    let data = city();
    let hyper = HyperParams {
        input_dim: data.graph.schema().feature_count,
        hidden: 32,
        ..HyperParams::default()
    };
    let model = ModelParams::init(ModelKind::Hgt, hyper, data.graph.schema(), 7).unwrap();
    let nodes: Vec<usize> = data.masks.test.iter().copied().take(8).collect();
    backends(c, "ig_heatmap_8_nodes", || {
        std::hint::black_box(heatmap_matrix(&model, &data.graph, &data.targets.values, &nodes, 20).unwrap());
    });
}

criterion_group!(benches, matmul, counterfactual_table, ig_heatmap);
criterion_main!(benches);

//! Trains every model on the default synthetic city and prints test R².

use std::time::Instant;

use heterograph::model::ModelKind;
use heterograph::pipeline::{derive_seed, prepare, PrepareOptions};
use heterograph::synth::{generate, CitySpec};
use heterograph::train::{ablate, evaluate, train, Scenario, TrainConfig};

fn main() {
    let root: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut spec: CitySpec = match std::env::var("SPEC") {
        Ok(json) => serde_json::from_str(&json).unwrap(),
        Err(_) => CitySpec::default(),
    };
    spec.seed = derive_seed(root, "synth");
    let models: Vec<ModelKind> = match std::env::var("MODELS") {
        Ok(m) => m.split(',').map(|s| s.parse().unwrap()).collect(),
        Err(_) => ModelKind::ALL.to_vec(),
    };
    let city = generate(&spec).unwrap();
    let raw = city.graph().unwrap();
    let opts = PrepareOptions { split_seed: derive_seed(root, "split"), ..PrepareOptions::default() };
    let data = prepare(&raw, &city.pois, &opts).unwrap();
    println!("nodes {} edges {} pois {}", raw.num_nodes(), raw.num_edges(), city.pois.len());
    let mut r2s = Vec::new();
    for &kind in &models {
        let t = Instant::now();
        let cfg = TrainConfig { model: kind, epochs, seed: derive_seed(root, "init"), ..TrainConfig::default() };
        let out = train(&data.graph, &data.targets.values, &data.masks, &cfg).unwrap();
        let pred = out.params.predict(&data.graph).unwrap().values;
        let rep = evaluate(&pred, &data.targets.values, &data.masks.test, "test").unwrap();
        let r: Vec<f64> = rep.indicators.iter().map(|m| m.r2).collect();
        println!("{kind:>4} best {:>3} {:6.1}s mean {:.3} {:?}", out.best_epoch, t.elapsed().as_secs_f64(), rep.mean_r2(), r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        r2s.push(r);
    }
    if r2s.len() == 3 {
        let wins = (0..6).filter(|&j| r2s[2][j] > r2s[1][j] && r2s[1][j] > r2s[0][j]).count();
        println!("ordering holds on {wins}/6");
    }
    if std::env::var("ABLATE").is_ok() {
        for sc in [Scenario::All, Scenario::BusOnly] {
            let cfg = TrainConfig { model: ModelKind::Hgt, epochs, seed: derive_seed(root, "init"), ..TrainConfig::default() };
            let res = ablate(&data.graph, &data.targets.values, &data.masks, sc, &cfg).unwrap();
            println!("{sc}: mean R² {:.3}", res.test.mean_r2());
        }
    }
}

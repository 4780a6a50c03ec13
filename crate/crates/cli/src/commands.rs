use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use heterograph::attribution::{aggregate, heatmap_matrix, integrated_gradients, zero_baseline};
use heterograph::counterfactual::{aggregate_cf_scores, find_counterfactual, mixed_set};
use heterograph::graph::{load_graph, read_pois, GraphError, INDICATORS};
use heterograph::model::{read_snapshot, write_snapshot};
use heterograph::pipeline::{derive_seed, prepare, Dataset, PrepareOptions};
use heterograph::synth::{generate, CitySpec, SynthError};
use heterograph::train::{
    ablate as ablate_scenario, evaluate, export_residuals, train as fit, write_residuals, Comparison, Scenario,
    TrainConfig, TrainError,
};
use heterograph::{ModelKind, ModelParams, Schema};
use serde::Serialize;

use crate::config::{self, Loaded};
use crate::{CliError, Common};

pub struct Ctx {
    pub loaded: Loaded,
    pub seed: u64,
    /// `<out_dir>/<command>/`, already created.
    pub dir: PathBuf,
}

#[derive(Serialize)]
struct RunLog<'a> {
    command: &'a str,
    seed: u64,
    config: String,
    config_sha256: &'a str,
    outputs: Vec<String>,
    wall_time_s: f64,
}

/// Loads the config, runs one command and writes its `run.json`.
pub fn run(command: &str, common: &Common, f: impl FnOnce(&Ctx) -> Result<Vec<String>, CliError>) -> Result<(), CliError> {
    let start = Instant::now();
    let loaded = config::load(&common.config)?;
    let seed = common.seed.unwrap_or(loaded.config.seed);
    let dir = loaded.command_dir(command);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let ctx = Ctx { loaded, seed, dir };
    log::info!("{command}: seed {seed}, writing to {}", ctx.dir.display());
    let outputs = f(&ctx)?;
    let wall = start.elapsed().as_secs_f64();
    let record = RunLog {
        command,
        seed,
        config: common.config.display().to_string(),
        config_sha256: &ctx.loaded.sha256,
        outputs,
        wall_time_s: wall,
    };
    let path = ctx.dir.join("run.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &record).map_err(io_err(&path))?;
    finish(w, &path)?;
    log::info!("{command}: done in {wall:.1} s");
    Ok(())
}

fn io_err<E: Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(io_err(path))
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Io(_) | TrainError::Csv(_) | TrainError::Json(_) => CliError::Io(e.to_string()),
        TrainError::Graph(GraphError::Io { .. }) => CliError::Io(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

/// Writes `name` under the command directory and returns the name for the run log.
fn write_file<E: Display>(
    ctx: &Ctx,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
) -> Result<String, CliError> {
    let path = ctx.dir.join(name);
    let mut w = create(&path)?;
    body(&mut w).map_err(io_err(&path))?;
    finish(w, &path)?;
    Ok(name.to_string())
}

fn train_config(ctx: &Ctx, model: ModelKind) -> TrainConfig {
    TrainConfig {
        model,
        seed: derive_seed(ctx.seed, "init"),
        ..ctx.loaded.config.train
    }
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{} not found; {hint}", path.display())))
    }
}

fn dataset(ctx: &Ctx) -> Result<Dataset, CliError> {
    let l = &ctx.loaded;
    let (nodes, edges, poi) = (l.nodes_path(), l.edges_path(), l.poi_path());
    for p in [&nodes, &edges, &poi] {
        require(p, "run `heterograph synth` or set [data] paths")?;
    }
    let schema = Schema {
        feature_count: l.config.data.features,
        ..Schema::default()
    };
    let data_err = |e: GraphError| CliError::Io(e.to_string());
    let raw = load_graph(&nodes, &edges, &schema).map_err(data_err)?;
    let pois = read_pois(File::open(&poi).map_err(io_err(&poi))?).map_err(data_err)?;
    let opts = PrepareOptions {
        radius_m: l.config.data.radius_m,
        split_seed: derive_seed(ctx.seed, "split"),
        ..PrepareOptions::default()
    };
    let data = prepare(&raw, &pois, &opts).map_err(|e| match e {
        GraphError::Config(_) | GraphError::Labeling(_) => CliError::Config(e.to_string()),
        _ => data_err(e),
    })?;
    log::info!(
        "{} nodes, {} edges, {} POIs; split {}/{}/{}",
        raw.num_nodes(),
        raw.num_edges(),
        pois.len(),
        data.masks.train.len(),
        data.masks.validation.len(),
        data.masks.test.len()
    );
    Ok(data)
}

fn snapshot_path(ctx: &Ctx, kind: ModelKind) -> PathBuf {
    ctx.loaded.command_dir("train").join(format!("{kind}.json"))
}

fn load_model(ctx: &Ctx, kind: ModelKind) -> Result<ModelParams, CliError> {
    let path = snapshot_path(ctx, kind);
    require(&path, "run `heterograph train` first")?;
    let file = File::open(&path).map_err(io_err(&path))?;
    read_snapshot(std::io::BufReader::new(file)).map_err(io_err(&path))
}

fn node_index(data: &Dataset, id: &str) -> Result<usize, CliError> {
    data.graph
        .index_of(id)
        .ok_or_else(|| CliError::Config(format!("--node-id: no station with id `{id}`")))
}

fn indicator_name(j: usize) -> String {
    INDICATORS.get(j).map_or_else(|| format!("output{j}"), |s| s.to_string())
}

pub fn synth(ctx: &Ctx) -> Result<Vec<String>, CliError> {
    let spec = CitySpec {
        seed: derive_seed(ctx.seed, "synth"),
        ..ctx.loaded.config.synth.clone()
    };
    let city = generate(&spec).map_err(|e| match e {
        SynthError::Spec(_) => CliError::Config(e.to_string()),
        _ => CliError::Io(e.to_string()),
    })?;
    city.write_to(&ctx.dir).map_err(|e| CliError::Io(e.to_string()))?;
    log::info!("{} stations, {} edges, {} POIs", city.nodes.len(), city.edges.len(), city.pois.len());
    Ok(["nodes.csv", "edges.csv", "poi.csv", "manifest.json"].map(String::from).to_vec())
}

pub fn train(ctx: &Ctx) -> Result<Vec<String>, CliError> {
    let data = dataset(ctx)?;
    let mut outputs = Vec::new();
    for &kind in &ctx.loaded.config.models {
        let t = Instant::now();
        let out = fit(&data.graph, &data.targets.values, &data.masks, &train_config(ctx, kind)).map_err(train_err)?;
        log::info!(
            "{kind}: best epoch {} validation loss {:.5} ({:.1} s)",
            out.best_epoch,
            out.best_validation_loss,
            t.elapsed().as_secs_f64()
        );
        outputs.push(write_file(ctx, &format!("{kind}.json"), |w| write_snapshot(&out.params, w))?);
        outputs.push(write_file(ctx, &format!("history_{kind}.csv"), |w| {
            writeln!(w, "epoch,train_loss,validation_loss")?;
            for e in &out.history {
                writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.validation_loss)?;
            }
            Ok::<(), std::io::Error>(())
        })?);
    }
    Ok(outputs)
}

pub fn eval(ctx: &Ctx) -> Result<Vec<String>, CliError> {
    let data = dataset(ctx)?;
    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    for &kind in &ctx.loaded.config.models {
        let params = load_model(ctx, kind)?;
        let pred = params.predict(&data.graph).map_err(|e| CliError::Config(e.to_string()))?.values;
        let report = evaluate(&pred, &data.targets.values, &data.masks.test, "test").map_err(train_err)?;
        log::info!("{kind}: test mean R² {:.3}", report.mean_r2());
        let residuals =
            export_residuals(&pred, &data.targets.values, &data.graph, &data.masks.test).map_err(train_err)?;
        outputs.push(write_file(ctx, &format!("residuals_{kind}.csv"), |w| write_residuals(&residuals, w))?);
        reports.push((kind, report));
    }
    let comparison = Comparison::new(reports).map_err(train_err)?;
    outputs.push(write_file(ctx, "metrics.csv", |w| comparison.write_csv(w))?);
    outputs.push(write_file(ctx, "metrics.json", |w| comparison.write_json(w))?);
    Ok(outputs)
}

#[derive(Serialize)]
struct AblationSummary {
    scenario: String,
    nodes: usize,
    mean_r2: f64,
}

pub fn ablate(ctx: &Ctx, scenario: Option<&str>) -> Result<Vec<String>, CliError> {
    let scenarios = match scenario {
        Some(s) => vec![s.parse::<Scenario>().map_err(|e| CliError::Config(format!("--scenario: {e}")))?],
        None => Scenario::ALL.to_vec(),
    };
    let data = dataset(ctx)?;
    let cfg = train_config(ctx, ctx.loaded.config.train.model);
    let mut results = Vec::new();
    for sc in scenarios {
        let r = ablate_scenario(&data.graph, &data.targets.values, &data.masks, sc, &cfg).map_err(train_err)?;
        log::info!("{sc}: {} nodes, test mean R² {:.3}", r.kept.len(), r.test.mean_r2());
        results.push(r);
    }
    let csv = write_file(ctx, "ablation.csv", |w| {
        writeln!(w, "scenario,indicator,mae,rmse,r2")?;
        for r in &results {
            for m in &r.test.indicators {
                writeln!(w, "{},{},{},{},{}", r.scenario, m.indicator, m.mae, m.rmse, m.r2)?;
            }
        }
        Ok::<(), std::io::Error>(())
    })?;
    let summary: Vec<AblationSummary> = results
        .iter()
        .map(|r| AblationSummary {
            scenario: r.scenario.to_string(),
            nodes: r.kept.len(),
            mean_r2: r.test.mean_r2(),
        })
        .collect();
    let json = write_file(ctx, "ablation.json", |w| serde_json::to_writer_pretty(w, &summary))?;
    Ok(vec![csv, json])
}

#[derive(Serialize)]
struct Completeness {
    indicator: String,
    attribution_sum: f64,
    output_change: f64,
}

pub fn attribute(ctx: &Ctx, node_id: Option<&str>) -> Result<Vec<String>, CliError> {
    let data = dataset(ctx)?;
    let kind = ctx.loaded.config.train.model;
    let params = load_model(ctx, kind)?;
    let steps = ctx.loaded.config.explain.ig_steps;
    let attr_err = |e: heterograph::attribution::AttributionError| CliError::Config(e.to_string());
    if let Some(id) = node_id {
        let i = node_index(&data, id)?;
        let base = zero_baseline(&data.graph);
        let pred = params.predict(&data.graph).map_err(|e| CliError::Config(e.to_string()))?.values;
        let pred0 = params.predict(&base).map_err(|e| CliError::Config(e.to_string()))?.values;
        let mut rows = Vec::new();
        let mut checks = Vec::new();
        for j in 0..params.hyper.outputs {
            let s = integrated_gradients(&params, &data.graph, i, j, &base, steps).map_err(attr_err)?;
            checks.push(Completeness {
                indicator: indicator_name(j),
                attribution_sum: s.total(),
                output_change: pred.get(i, j) - pred0.get(i, j),
            });
            rows.push(aggregate(&s));
        }
        let schema = data.graph.schema();
        let csv = write_file(ctx, &format!("attribution_{id}.csv"), |w| {
            let labels: Vec<String> = (0..schema.feature_count).map(|k| schema.feature_label(k)).collect();
            writeln!(w, "indicator,{}", labels.join(","))?;
            for (j, row) in rows.iter().enumerate() {
                let vals: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(w, "{},{}", indicator_name(j), vals.join(","))?;
            }
            Ok::<(), std::io::Error>(())
        })?;
        let json = write_file(ctx, &format!("completeness_{id}.json"), |w| serde_json::to_writer_pretty(w, &checks))?;
        return Ok(vec![csv, json]);
    }
    let mut nodes = data.masks.test.clone();
    nodes.sort_unstable();
    if let Some(cap) = ctx.loaded.config.explain.heatmap_nodes {
        nodes.truncate(cap);
    }
    let t = Instant::now();
    let heatmap = heatmap_matrix(&params, &data.graph, &data.targets.values, &nodes, steps).map_err(attr_err)?;
    log::info!("{kind} heatmap over {} test nodes ({:.1} s)", nodes.len(), t.elapsed().as_secs_f64());
    Ok(vec![write_file(ctx, "heatmap.csv", |w| heatmap.write_csv(w))?])
}

#[derive(Serialize)]
struct MixedEntry {
    node_id: String,
    diversity: f64,
}

pub fn counterfactual(ctx: &Ctx, node_id: Option<&str>) -> Result<Vec<String>, CliError> {
    let data = dataset(ctx)?;
    let params = load_model(ctx, ctx.loaded.config.train.model)?;
    let pred = params.predict(&data.graph).map_err(|e| CliError::Config(e.to_string()))?.values;
    let cf_err = |e: heterograph::counterfactual::CounterfactualError| CliError::Config(e.to_string());
    let mixed = mixed_set(&pred, ctx.loaded.config.explain.mixed_fraction).map_err(cf_err)?;
    log::info!("mixed set: {} of {} nodes", mixed.nodes.len(), pred.rows());
    if let Some(id) = node_id {
        let i = node_index(&data, id)?;
        if mixed.contains(i) {
            return Err(CliError::Config(format!(
                "--node-id: `{id}` is itself in the mixed set, so it has no counterfactual"
            )));
        }
        let cf = find_counterfactual(&data.graph, i, &mixed.nodes).map_err(cf_err)?;
        let report = cf.report(&data.graph);
        log::info!("{id}: counterfactual {} at dissimilarity {:.4}", report.ce_node, report.total);
        return Ok(vec![write_file(ctx, &format!("ce_{id}.json"), |w| serde_json::to_writer_pretty(w, &report))?]);
    }
    let table = aggregate_cf_scores(&data.graph, &data.targets.values, &mixed).map_err(cf_err)?;
    let entries: Vec<MixedEntry> = mixed
        .nodes
        .iter()
        .map(|&i| MixedEntry {
            node_id: data.graph.node(i).id.clone(),
            diversity: mixed.diversity[i],
        })
        .collect();
    Ok(vec![
        write_file(ctx, "cf_table.csv", |w| table.write_csv(w))?,
        write_file(ctx, "mixed_set.json", |w| serde_json::to_writer_pretty(w, &entries))?,
    ])
}

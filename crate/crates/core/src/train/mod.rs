//! Multi-task regression training, evaluation and ablation.

mod ablation;
mod adamw;
mod metrics;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, HeteroGraph, SplitMasks};
use crate::model::sampling::sample_neighbors;
use crate::model::{HyperParams, ModelError, ModelKind, ModelParams};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub use ablation::{ablate, Scenario, ScenarioResult};
pub use adamw::{adamw_step, AdamState, AdamW};
pub use metrics::{
    evaluate, export_residuals, improvement_pct, write_residuals, Comparison, IndicatorMetrics, MetricsReport, Residual,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss {loss} at epoch {epoch}; lower the learning rate or check the inputs for extreme values")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} mask is empty")]
    EmptyMask(String),
    #[error("{what}: shapes {left:?} and {right:?} do not match")]
    Shape {
        what: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("node index {index} out of range for {len} nodes")]
    Index { index: usize, len: usize },
    #[error("ablation: {0}")]
    Ablation(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    /// Only used with neighbour sampling; full-batch otherwise.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Incoming edges kept per node and edge type when sampling.
    pub neighbor_budget: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamW::default();
        let hyper = HyperParams::default();
        Self {
            model: ModelKind::Hgt,
            epochs: 200,
            batch_size: 64,
            learning_rate: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            hidden: hyper.hidden,
            heads: hyper.heads,
            layers: hyper.layers,
            neighbor_budget: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn hyper(&self, input_dim: usize, outputs: usize) -> HyperParams {
        HyperParams {
            input_dim,
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            outputs,
        }
    }

    /// Zero epochs is accepted and means "return the initialisation".
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(TrainError::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 || self.neighbor_budget == Some(0) {
            return Err(TrainError::Config("batch_size and neighbor_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub params: ModelParams,
    /// Losses of the parameters at the start of each epoch.
    pub history: Vec<EpochLog>,
    /// Number of updates applied to the returned parameters.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Sum over outputs of the per-output mean squared error on `rows`.
pub fn multitask_mse(pred: &Tensor, targets: &Tensor, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let sq: f64 = rows
        .iter()
        .flat_map(|&r| pred.row(r).iter().zip(targets.row(r)).map(|(p, t)| (p - t) * (p - t)))
        .sum();
    sq / rows.len() as f64
}

fn loss_on(tape: &mut Tape, pred: Var, targets: &Tensor, rows: &[usize]) -> Result<Var, TensorError> {
    let index: std::sync::Arc<[usize]> = rows.into();
    let picked = tape.gather_rows(pred, index.clone())?;
    let target = tape.constant(targets.gather_rows(&index)?);
    let diff = tape.sub(picked, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / rows.len() as f64))
}

/// One forward/backward pass; returns the predictions, loss and gradients.
fn step(
    params: &ModelParams,
    graph: &HeteroGraph,
    targets: &Tensor,
    rows: &[usize],
) -> Result<(Tensor, f64, BTreeMap<crate::model::ParamKey, Tensor>), TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(graph.features().clone());
    let pred = params.forward_on(&mut tape, graph, x, &bound)?;
    let loss = loss_on(&mut tape, pred, targets, rows)?;
    let loss_value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let by_key = bound
        .iter()
        .filter_map(|(k, v)| grads.take(*v).map(|g| (k.clone(), g)))
        .collect();
    Ok((tape.value(pred).clone(), loss_value, by_key))
}

/// Trains a fresh model on `masks.train` and returns the parameters with the
/// lowest validation loss. Targets are `nodes x outputs`.
pub fn train(
    graph: &HeteroGraph,
    targets: &Tensor,
    masks: &SplitMasks,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if targets.rows() != graph.num_nodes() {
        return Err(TrainError::Shape {
            what: "targets vs graph",
            left: targets.shape(),
            right: (graph.num_nodes(), targets.cols()),
        });
    }
    if masks.train.is_empty() {
        return Err(TrainError::EmptyMask("train".into()));
    }
    let hyper = config.hyper(graph.schema().feature_count, targets.cols());
    let mut params = ModelParams::init(config.model, hyper, graph.schema(), config.seed)?;
    let opt = config.optimizer();
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let select = |val: f64, train: f64| if masks.validation.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c);

    for epoch in 0..config.epochs {
        let (train_loss, val_loss) = match config.neighbor_budget {
            None => {
                let (pred, loss, grads) = step(&params, graph, targets, &masks.train)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { epoch, loss });
                }
                let val = multitask_mse(&pred, targets, &masks.validation);
                if select(val, loss) < best.0 {
                    best = (select(val, loss), params.clone(), epoch);
                }
                adamw_step(&mut params, &grads, &mut state, &opt);
                (loss, val)
            }
            Some(budget) => {
                let full = params.predict(graph)?.values;
                let loss = multitask_mse(&full, targets, &masks.train);
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { epoch, loss });
                }
                let val = multitask_mse(&full, targets, &masks.validation);
                if select(val, loss) < best.0 {
                    best = (select(val, loss), params.clone(), epoch);
                }
                let mut order = masks.train.clone();
                order.shuffle(&mut rng);
                for (b, batch) in order.chunks(config.batch_size).enumerate() {
                    let sampled = sample_neighbors(graph, budget, config.seed.wrapping_add((epoch * 1_000_003 + b) as u64))?;
                    let (_, batch_loss, grads) = step(&params, &sampled, targets, batch)?;
                    if !batch_loss.is_finite() {
                        return Err(TrainError::NonFinite { epoch, loss: batch_loss });
                    }
                    adamw_step(&mut params, &grads, &mut state, &opt);
                }
                (loss, val)
            }
        };
        log::debug!("epoch {epoch}: train {train_loss:.6} validation {val_loss:.6}");
        history.push(EpochLog {
            epoch,
            train_loss,
            validation_loss: val_loss,
        });
    }
    if config.epochs > 0 {
        let pred = params.predict(graph)?.values;
        let loss = multitask_mse(&pred, targets, &masks.train);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { epoch: config.epochs, loss });
        }
        let score = select(multitask_mse(&pred, targets, &masks.validation), loss);
        if score < best.0 {
            best = (score, params, config.epochs);
        }
    }
    let (best_validation_loss, params, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_validation_loss,
    })
}

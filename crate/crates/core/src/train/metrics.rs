use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::graph::{HeteroGraph, INDICATORS};
use crate::model::ModelKind;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorMetrics {
    pub indicator: String,
    pub mae: f64,
    pub rmse: f64,
    /// NaN when the targets have zero variance on the mask.
    pub r2: f64,
    /// Mean signed error, prediction minus target.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub nodes: usize,
    pub indicators: Vec<IndicatorMetrics>,
}

impl MetricsReport {
    pub fn mean_r2(&self) -> f64 {
        self.indicators.iter().map(|m| m.r2).sum::<f64>() / self.indicators.len() as f64
    }
}

fn indicator_name(j: usize) -> String {
    INDICATORS.get(j).map_or_else(|| format!("output{j}"), |s| s.to_string())
}

/// MAE, RMSE, R² and bias per output column over the rows in `mask`.
///
/// The mask is sorted first, so the result does not depend on its order.
pub fn evaluate(pred: &Tensor, targets: &Tensor, mask: &[usize], split: &str) -> Result<MetricsReport, TrainError> {
    if pred.shape() != targets.shape() {
        return Err(TrainError::Shape {
            what: "predictions vs targets",
            left: pred.shape(),
            right: targets.shape(),
        });
    }
    if mask.is_empty() {
        return Err(TrainError::EmptyMask(split.to_string()));
    }
    let mut rows = mask.to_vec();
    rows.sort_unstable();
    if let Some(&bad) = rows.iter().find(|&&r| r >= pred.rows()) {
        return Err(TrainError::Index { index: bad, len: pred.rows() });
    }
    let n = rows.len() as f64;
    let indicators = (0..pred.cols())
        .map(|j| {
            let (mut abs, mut sq, mut signed, mut total) = (0.0, 0.0, 0.0, 0.0);
            for &r in &rows {
                let e = pred.get(r, j) - targets.get(r, j);
                abs += e.abs();
                sq += e * e;
                signed += e;
                total += targets.get(r, j);
            }
            let mean = total / n;
            let ss_tot: f64 = rows.iter().map(|&r| (targets.get(r, j) - mean).powi(2)).sum();
            let r2 = if ss_tot > 0.0 {
                1.0 - sq / ss_tot
            } else {
                log::warn!("{split}: {} has zero target variance, R² undefined", indicator_name(j));
                f64::NAN
            };
            IndicatorMetrics {
                indicator: indicator_name(j),
                mae: abs / n,
                rmse: (sq / n).sqrt(),
                r2,
                bias: signed / n,
            }
        })
        .collect();
    Ok(MetricsReport {
        split: split.to_string(),
        nodes: rows.len(),
        indicators,
    })
}

/// Relative error reduction against a baseline, in percent.
pub fn improvement_pct(baseline: f64, model: f64) -> f64 {
    (baseline - model) / baseline * 100.0
}

/// Test metrics of several models side by side, with improvements measured
/// against the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: ModelKind,
    pub models: Vec<(ModelKind, MetricsReport)>,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    indicator: &'a str,
    model: ModelKind,
    mae: f64,
    rmse: f64,
    r2: f64,
    mae_impr_pct: Option<f64>,
    rmse_impr_pct: Option<f64>,
}

impl Comparison {
    pub fn new(models: Vec<(ModelKind, MetricsReport)>) -> Result<Self, TrainError> {
        let baseline = models.first().ok_or(TrainError::EmptyMask("comparison".into()))?.0;
        Ok(Self { baseline, models })
    }

    pub fn report(&self, kind: ModelKind) -> Option<&MetricsReport> {
        self.models.iter().find(|(k, _)| *k == kind).map(|(_, r)| r)
    }

    fn rows(&self) -> Vec<ComparisonRow<'_>> {
        let base = &self.models[0].1;
        let mut out = Vec::new();
        for (j, b) in base.indicators.iter().enumerate() {
            for (k, (kind, report)) in self.models.iter().enumerate() {
                let m = &report.indicators[j];
                let impr = |base: f64, model: f64| (k > 0).then(|| improvement_pct(base, model));
                out.push(ComparisonRow {
                    indicator: &b.indicator,
                    model: *kind,
                    mae: m.mae,
                    rmse: m.rmse,
                    r2: m.r2,
                    mae_impr_pct: impr(b.mae, m.mae),
                    rmse_impr_pct: impr(b.rmse, m.rmse),
                });
            }
        }
        out
    }

    /// One row per indicator; per model the columns `mae`, `rmse`, `r2`,
    /// `mae_impr`, `rmse_impr` (improvements are blank for the baseline).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["indicator".to_string()];
        for (kind, _) in &self.models {
            for col in ["mae", "rmse", "r2", "mae_impr", "rmse_impr"] {
                header.push(format!("{kind}_{col}"));
            }
        }
        out.write_record(&header)?;
        let per_model = self.models.len();
        for chunk in self.rows().chunks(per_model) {
            let mut record = vec![chunk[0].indicator.to_string()];
            for row in chunk {
                record.push(row.mae.to_string());
                record.push(row.rmse.to_string());
                record.push(row.r2.to_string());
                record.push(row.mae_impr_pct.map_or_else(String::new, |v| v.to_string()));
                record.push(row.rmse_impr_pct.map_or_else(String::new, |v| v.to_string()));
            }
            out.write_record(&record)?;
        }
        out.flush().map_err(TrainError::from)?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), TrainError> {
        serde_json::to_writer_pretty(w, &self.rows())?;
        Ok(())
    }
}

/// Signed residual of one node and indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub node_id: String,
    pub lon: f64,
    pub lat: f64,
    pub indicator: String,
    pub residual: f64,
}

/// `prediction − target` for every node in `mask` (mask order) and indicator.
pub fn export_residuals(
    pred: &Tensor,
    targets: &Tensor,
    graph: &HeteroGraph,
    mask: &[usize],
) -> Result<Vec<Residual>, TrainError> {
    if pred.shape() != targets.shape() || pred.rows() != graph.num_nodes() {
        return Err(TrainError::Shape {
            what: "residual inputs",
            left: pred.shape(),
            right: targets.shape(),
        });
    }
    let mut out = Vec::with_capacity(mask.len() * pred.cols());
    for &i in mask {
        if i >= graph.num_nodes() {
            return Err(TrainError::Index { index: i, len: graph.num_nodes() });
        }
        let node = graph.node(i);
        for j in 0..pred.cols() {
            out.push(Residual {
                node_id: node.id.clone(),
                lon: node.lon,
                lat: node.lat,
                indicator: indicator_name(j),
                residual: pred.get(i, j) - targets.get(i, j),
            });
        }
    }
    Ok(out)
}

pub fn write_residuals<W: Write>(rows: &[Residual], w: W) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(TrainError::from)?;
    Ok(())
}

//! Forecast metrics, the historical-average baseline, per-horizon reports
//! and training-budget sweeps.
//!
//! All metrics are computed in original flow units and pool inflow and
//! outflow together.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ForecastInputs, SampleWindow, ScalingSpec, SplitData};
use crate::error::{Error, Result};
use crate::model::{reconstruct, ModelConfig, Prnet};
use crate::tensor::{Precision, Tensor};
use crate::train::ordered_map;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
}

/// `2|e| / (|y| + |y_hat|)`, zero when both are zero.
#[inline]
pub fn smape_term(pred: f64, truth: f64) -> f64 {
    let denom = pred.abs() + truth.abs();
    if denom == 0.0 {
        0.0
    } else {
        2.0 * (pred - truth).abs() / denom
    }
}

/// Running sums for MAE, RMSE and SMAPE.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    pub abs_sum: f64,
    pub sq_sum: f64,
    pub smape_sum: f64,
    pub count: usize,
}

impl MetricAccumulator {
    #[inline]
    pub fn push(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.abs_sum += e.abs();
        self.sq_sum += e * e;
        self.smape_sum += smape_term(pred, truth);
        self.count += 1;
    }

    pub fn push_slices(&mut self, pred: &[f64], truth: &[f64]) {
        for (&p, &t) in pred.iter().zip(truth) {
            self.push(p, t);
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        MetricAccumulator {
            abs_sum: self.abs_sum + other.abs_sum,
            sq_sum: self.sq_sum + other.sq_sum,
            smape_sum: self.smape_sum + other.smape_sum,
            count: self.count + other.count,
        }
    }

    /// Order-fixed pairwise reduction.
    pub fn pairwise_merge(parts: &[Self]) -> Self {
        match parts {
            [] => Self::default(),
            [one] => *one,
            _ => {
                let (l, r) = parts.split_at(parts.len() / 2);
                Self::pairwise_merge(l).merge(&Self::pairwise_merge(r))
            }
        }
    }

    pub fn finish(&self) -> Metrics {
        if self.count == 0 {
            return Metrics {
                mae: f64::NAN,
                rmse: f64::NAN,
                smape: f64::NAN,
            };
        }
        let n = self.count as f64;
        Metrics {
            mae: self.abs_sum / n,
            rmse: (self.sq_sum / n).sqrt(),
            smape: self.smape_sum / n,
        }
    }
}

fn metrics_of(pred: &Tensor, truth: &Tensor) -> Result<Metrics> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: truth.shape().to_vec(),
        });
    }
    let mut acc = MetricAccumulator::default();
    acc.push_slices(pred.data(), truth.data());
    Ok(acc.finish())
}

pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    metrics_of(pred, truth).map(|m| m.mae)
}

pub fn rmse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    metrics_of(pred, truth).map(|m| m.rmse)
}

pub fn smape(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    metrics_of(pred, truth).map(|m| m.smape)
}

/// Mean of the periodic predictions: the forecast with a zero residual.
pub fn ha_baseline(inputs: &ForecastInputs) -> Result<Tensor> {
    let zero = Tensor::zeros(inputs.periodic_prediction.shape().to_vec());
    reconstruct(&zero, &inputs.periodic_prediction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub name: String,
    /// Index `i` is horizon step `i + 1`.
    pub per_step: Vec<Metrics>,
    pub aggregate: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub samples: usize,
    pub t_pred: usize,
    pub config: ModelConfig,
    pub scaling: ScalingSpec,
    pub predictors: Vec<PredictorReport>,
}

impl ForecastReport {
    pub fn predictor(&self, name: &str) -> Option<&PredictorReport> {
        self.predictors.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `step,predictor,mae,rmse,smape`; the aggregate row uses step `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,predictor,mae,rmse,smape\n");
        for p in &self.predictors {
            for (i, m) in p.per_step.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", i + 1, p.name, m.mae, m.rmse, m.smape);
            }
            let m = &p.aggregate;
            let _ = writeln!(out, "all,{},{},{},{}", p.name, m.mae, m.rmse, m.smape);
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, body) in [("report.json", self.to_json()), ("report.csv", self.to_csv())] {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Per-step accumulators for one `[H, W, 2, T]` forecast; time is the
/// fastest axis.
fn step_accumulators(pred: &Tensor, truth: &Tensor, t_pred: usize) -> Vec<MetricAccumulator> {
    let mut accs = vec![MetricAccumulator::default(); t_pred];
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        accs[i % t_pred].push(p, t);
    }
    accs
}

fn summarize(name: &str, per_window: &[Vec<MetricAccumulator>], t_pred: usize) -> PredictorReport {
    let per_step_acc: Vec<MetricAccumulator> = (0..t_pred)
        .map(|s| {
            let column: Vec<MetricAccumulator> = per_window.iter().map(|w| w[s]).collect();
            MetricAccumulator::pairwise_merge(&column)
        })
        .collect();
    PredictorReport {
        name: name.to_string(),
        per_step: per_step_acc.iter().map(MetricAccumulator::finish).collect(),
        aggregate: MetricAccumulator::pairwise_merge(&per_step_acc).finish(),
    }
}

pub const MODEL_NAME: &str = "prnet";
pub const HA_NAME: &str = "ha";

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub precision: Precision,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            precision: Precision::F64,
            threads: 1,
        }
    }
}

/// Model and HA metrics per horizon step over `windows` (scaled units in,
/// original units out).
pub fn evaluate(
    model: &Prnet,
    windows: &[SampleWindow],
    scaling: &ScalingSpec,
    options: EvalOptions,
) -> Result<ForecastReport> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset("test set"));
    }
    let config = model.config();
    let t_pred = config.t_pred;
    if let Some(w) = windows.iter().find(|w| {
        w.target.shape() != [config.height, config.width, 2, t_pred]
            || w.inputs.periodic_prediction.shape()[0] != config.periods
    }) {
        return Err(Error::ConfigMismatch {
            stored: format!("{config:?}"),
            requested: format!(
                "windows with target {:?} and {} periods",
                w.target.shape(),
                w.inputs.periodic_prediction.shape()[0]
            ),
        });
    }
    let pool = if options.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(options.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let per_window = ordered_map(pool.as_ref(), windows, |w| -> Result<_> {
        let truth = scaling.restore(&w.target);
        let model_pred = scaling.restore(&model.predict(&w.inputs, options.precision)?);
        let ha_pred = scaling.restore(&ha_baseline(&w.inputs)?);
        Ok((
            step_accumulators(&model_pred, &truth, t_pred),
            step_accumulators(&ha_pred, &truth, t_pred),
        ))
    });
    let (model_accs, ha_accs): (Vec<_>, Vec<_>) =
        per_window.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(ForecastReport {
        samples: windows.len(),
        t_pred,
        config: config.clone(),
        scaling: *scaling,
        predictors: vec![
            summarize(MODEL_NAME, &model_accs, t_pred),
            summarize(HA_NAME, &ha_accs, t_pred),
        ],
    })
}

/// The chronologically earliest `floor(ratio * n)` windows, kept in their
/// original order.
pub fn subsample_train(train: &[SampleWindow], ratio: f64) -> Result<Vec<SampleWindow>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("budget ratio {ratio} must lie in (0, 1]")));
    }
    let keep = (ratio * train.len() as f64).floor() as usize;
    if keep == 0 {
        return Err(Error::EmptyDataset("budget ratio leaves no training windows"));
    }
    let mut anchors: Vec<usize> = train.iter().map(SampleWindow::anchor).collect();
    anchors.sort_unstable();
    let cutoff = anchors[keep - 1];
    let kept: Vec<SampleWindow> = train
        .iter()
        .filter(|w| w.anchor() <= cutoff)
        .take(keep)
        .cloned()
        .collect();
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub n_train: usize,
    pub model: Metrics,
    pub ha: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `ratio,predictor,n_train,mae,rmse,smape`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,predictor,n_train,mae,rmse,smape\n");
        for r in &self.rows {
            for (name, m) in [(MODEL_NAME, &r.model), (HA_NAME, &r.ha)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.ratio, name, r.n_train, m.mae, m.rmse, m.smape
                );
            }
        }
        out
    }
}

/// Trains on growing fractions of the training windows and evaluates each
/// result on the fixed test set.
pub fn budget_sweep<F>(
    data: &SplitData,
    ratios: &[f64],
    scaling: &ScalingSpec,
    options: EvalOptions,
    mut train_fn: F,
) -> Result<SweepReport>
where
    F: FnMut(&[SampleWindow]) -> Result<Prnet>,
{
    let subsets = ratios
        .iter()
        .map(|&r| subsample_train(&data.train, r))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(ratios.len());
    for (&ratio, subset) in ratios.iter().zip(subsets) {
        let model = train_fn(&subset)?;
        let report = evaluate(&model, &data.test, scaling, options)?;
        rows.push(SweepRow {
            ratio,
            n_train: subset.len(),
            model: report.predictor(MODEL_NAME).expect("model row").aggregate,
            ha: report.predictor(HA_NAME).expect("ha row").aggregate,
        });
    }
    Ok(SweepReport { rows })
}

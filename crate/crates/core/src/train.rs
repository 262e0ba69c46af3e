//! L1 residual objective, Adam, early stopping and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SampleWindow, ScalingSpec};
use crate::error::{Error, Result};
use crate::eval::MetricAccumulator;
use crate::graph::{Graph, Reduction};
use crate::model::{param_shapes, ModelConfig, Prnet, PrnetParams};
use crate::prnf;
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_reduction: Reduction,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            loss_reduction: Reduction::Sum,
            seed: 0,
            precision: Precision::F64,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.validate_optimizer()
    }

    /// Everything but the learning-rate sign; `train` accepts a zero rate,
    /// which freezes the parameters.
    fn validate_optimizer(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

/// L1 distance between predicted and true residuals.
pub fn compute_loss(delta_hat: &Tensor, residual: &Tensor, reduction: Reduction) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(delta_hat.clone());
    let t = g.input(residual.clone());
    let l = g.l1_loss(p, t, reduction)?;
    Ok(g.value(l).data()[0])
}

/// First and second moments per parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: PrnetParams<Tensor>,
    pub v: PrnetParams<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: &ModelConfig) -> Self {
        AdamState {
            m: PrnetParams::zeros(config),
            v: PrnetParams::zeros(config),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut PrnetParams<Tensor>,
    grads: &PrnetParams<Tensor>,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads.entries() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { name });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let grads = grads.entries();
    let params = params.buffers_mut();
    let ms = state.m.buffers_mut();
    let vs = state.v.buffers_mut();
    for (((p, (_, g)), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
            p[i] = config.precision.round(p[i]);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, in scaled units.
    pub train_loss: f64,
    /// Validation MAE in original units.
    pub val_mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (the initial weights if
    /// training diverged before any epoch finished).
    pub model: Prnet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mae: f64,
    /// Batch-mean loss after every optimizer step.
    pub step_losses: Vec<f64>,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Diverged { .. })
    }
}

fn add_assign(acc: &mut PrnetParams<Tensor>, g: &PrnetParams<Tensor>) {
    for (a, (_, b)) in acc.buffers_mut().into_iter().zip(g.entries()) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

fn scale_assign(acc: &mut PrnetParams<Tensor>, s: f64) {
    for a in acc.buffers_mut() {
        a.data_mut().iter_mut().for_each(|x| *x *= s);
    }
}

fn thread_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs `f` over `items` in order, on `pool` when present. Output order
/// always matches input order.
pub(crate) fn ordered_map<T, U, F>(pool: Option<&rayon::ThreadPool>, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match pool {
        Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

/// Pooled MAE of the model's forecasts in original units.
pub fn validation_mae(
    model: &Prnet,
    windows: &[SampleWindow],
    scaling: &ScalingSpec,
    precision: Precision,
) -> Result<f64> {
    validation_mae_with(model, windows, scaling, precision, None)
}

fn validation_mae_with(
    model: &Prnet,
    windows: &[SampleWindow],
    scaling: &ScalingSpec,
    precision: Precision,
    pool: Option<&rayon::ThreadPool>,
) -> Result<f64> {
    let partials = ordered_map(pool, windows, |w| -> Result<MetricAccumulator> {
        let pred = scaling.restore(&model.predict(&w.inputs, precision)?);
        let truth = scaling.restore(&w.target);
        let mut acc = MetricAccumulator::default();
        acc.push_slices(pred.data(), truth.data());
        Ok(acc)
    });
    let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MetricAccumulator::pairwise_merge(&partials).finish().mae)
}

/// Mini-batch Adam on the residual loss with early stopping on validation
/// MAE. Gradients are averaged over each batch.
pub fn train(
    model: Prnet,
    train_set: &[SampleWindow],
    val_set: &[SampleWindow],
    scaling: &ScalingSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate_optimizer()?;
    scaling.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation set"));
    }
    let pool = thread_pool(config.threads)?;
    let pool = pool.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model;
    let mut state = AdamState::new(model.config());
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = ordered_map(pool, batch, |&i| {
                model.loss_and_grads(&train_set[i], config.loss_reduction, config.precision)
            });
            let mut total: Option<PrnetParams<Tensor>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = match r {
                    Ok(v) => v,
                    Err(e) if e.is_numerical() => {
                        stop = StopReason::Diverged {
                            epoch,
                            reason: e.to_string(),
                        };
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                batch_loss += loss;
                match &mut total {
                    Some(t) => add_assign(t, &grads),
                    None => total = Some(grads),
                }
            }
            if !batch_loss.is_finite() {
                stop = StopReason::Diverged {
                    epoch,
                    reason: "non-finite training loss".into(),
                };
                break 'epochs;
            }
            let mut grads = total.expect("non-empty batch");
            scale_assign(&mut grads, 1.0 / batch.len() as f64);
            if let Err(e) = adam_step(model.params_mut(), &grads, &mut state, config) {
                stop = StopReason::Diverged {
                    epoch,
                    reason: e.to_string(),
                };
                break 'epochs;
            }
            loss_sum += batch_loss;
            step_losses.push(batch_loss / batch.len() as f64);
        }

        let val_mae = match validation_mae_with(&model, val_set, scaling, config.precision, pool) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                stop = StopReason::Diverged {
                    epoch,
                    reason: "non-finite validation MAE".into(),
                };
                break;
            }
            Err(e) if e.is_numerical() => {
                stop = StopReason::Diverged {
                    epoch,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        best_val_mae: best_val,
        step_losses,
        stop,
    })
}

/// `epoch,train_loss,val_mae` with a header row.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_mae\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_mae);
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_DIR: &str = "weights";
const CHECKPOINT_FORMAT: &str = "prnet-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub parameters: Vec<ParamEntry>,
}

/// Writes `manifest.json` and one PRNF file per parameter under `dir`.
pub fn save_checkpoint(dir: impl AsRef<Path>, model: &Prnet) -> Result<()> {
    let dir = dir.as_ref();
    let weights = dir.join(WEIGHTS_DIR);
    fs::create_dir_all(&weights).map_err(|e| Error::io(&weights, e))?;
    let mut parameters = Vec::new();
    for (name, t) in model.params().entries() {
        let file = format!("{WEIGHTS_DIR}/{name}.prnf");
        prnf::write(dir.join(&file), t)?;
        parameters.push(ParamEntry {
            name,
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        config: model.config().clone(),
        parameters,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != 1 {
        return Err(Error::InvalidData {
            path,
            reason: format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            ),
        });
    }
    Ok(manifest)
}

/// Loads a checkpoint, optionally insisting on a specific configuration.
pub fn load_checkpoint(dir: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Prnet> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if let Some(want) = expected {
        if *want != manifest.config {
            return Err(Error::ConfigMismatch {
                stored: format!("{:?}", manifest.config),
                requested: format!("{want:?}"),
            });
        }
    }
    let config = manifest.config.clone();
    config.validate()?;
    let shapes = param_shapes(&config);
    let wanted = shapes.entries();
    if wanted.len() != manifest.parameters.len() {
        return Err(Error::InvalidData {
            path: dir.join(MANIFEST_FILE),
            reason: format!(
                "manifest lists {} parameters, config needs {}",
                manifest.parameters.len(),
                wanted.len()
            ),
        });
    }
    let mut params = PrnetParams::zeros(&config);
    for ((slot, (name, shape)), entry) in params
        .buffers_mut()
        .into_iter()
        .zip(wanted)
        .zip(&manifest.parameters)
    {
        let path = dir.join(&entry.file);
        if entry.name != name {
            return Err(Error::InvalidData {
                path,
                reason: format!("expected parameter {name}, manifest has {}", entry.name),
            });
        }
        let t = prnf::read(&path)?;
        if t.shape() != shape.as_slice() || entry.shape != *shape {
            return Err(Error::InvalidData {
                path,
                reason: format!("{name}: expected shape {shape:?}, found {:?}", t.shape()),
            });
        }
        *slot = t;
    }
    Prnet::from_params(config, params)
}

//! `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use prnet_core::data::SeriesMeta;
use prnet_core::{ModelConfig, Precision, Reduction, ScalingSpec, TrainConfig};

/// File name of the resolved config written into every output directory.
pub const RESOLVED_NAME: &str = "config.txt";

pub const SEED_ENV: &str = "PRNET_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub channels: usize,
    pub blocks: usize,
    pub periods: usize,
    /// `None` means one calendar period of the data (a week by default).
    pub interval: Option<usize>,
    pub pooled_h: usize,
    pub pooled_w: usize,
    pub reduction_spatial: usize,
    pub reduction_channel: usize,
    pub kernel: usize,
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
    pub threads: usize,
    pub scale_divisor: f64,
    pub stride: usize,
    pub test_frac: f64,
    pub val_frac: f64,
    /// Used when reading CSV data, which carries no calendar metadata.
    pub steps_per_day: usize,
    pub budget_ratio: f64,
    pub ratios: Vec<f64>,
    pub clamp_nonneg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            t_obs: m.t_obs,
            t_pred: m.t_pred,
            channels: m.channels,
            blocks: m.blocks,
            periods: m.periods,
            interval: None,
            pooled_h: m.pooled_h,
            pooled_w: m.pooled_w,
            reduction_spatial: m.reduction_spatial,
            reduction_channel: m.reduction_channel,
            kernel: m.kernel,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            loss_reduction: t.loss_reduction,
            seed: t.seed,
            precision: t.precision,
            threads: t.threads,
            scale_divisor: ScalingSpec::default().divisor,
            stride: 1,
            test_frac: 0.1,
            val_frac: 0.1,
            steps_per_day: SeriesMeta::default().steps_per_day,
            budget_ratio: 1.0,
            ratios: vec![0.1, 0.5, 1.0],
            clamp_nonneg: true,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("t_obs", "observed steps per segment"),
    ("t_pred", "predicted steps"),
    ("channels", "hidden channels"),
    ("blocks", "stacked SCE blocks"),
    ("periods", "periodic segments"),
    ("interval", "steps between periodic segments, or `auto` for one calendar period"),
    ("pooled_h", "spatial excitation pooled height"),
    ("pooled_w", "spatial excitation pooled width"),
    ("reduction_spatial", "spatial excitation reduction ratio"),
    ("reduction_channel", "channel excitation reduction ratio"),
    ("kernel", "convolution kernel size"),
    ("learning_rate", "Adam step size"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("epsilon", "Adam denominator offset"),
    ("batch_size", "windows per optimizer step"),
    ("max_epochs", "epoch limit"),
    ("patience", "epochs without validation improvement before stopping"),
    ("loss_reduction", "`sum` or `mean` over residual elements"),
    ("seed", "initialization, shuffling and split seed"),
    ("precision", "`f64` or `f32`"),
    ("threads", "worker threads"),
    ("scale_divisor", "flows are divided by this before training"),
    ("stride", "steps between consecutive window anchors"),
    ("test_frac", "fraction of windows held out as the final test block"),
    ("val_frac", "fraction of windows used for validation"),
    ("steps_per_day", "steps per day for CSV input"),
    ("budget_ratio", "fraction of training windows to keep"),
    ("ratios", "comma-separated budget ratios for sweeps"),
    ("clamp_nonneg", "clamp emitted predictions at zero"),
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse `{value}`: {e}"))
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_ratios(value: &str) -> Result<Vec<f64>> {
    let ratios = value
        .split(',')
        .map(|r| num::<f64>("ratios", r.trim()))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        bail!("ratios: {bad} is outside (0, 1]");
    }
    Ok(ratios)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "t_obs" => self.t_obs = num(key, v)?,
            "t_pred" => self.t_pred = num(key, v)?,
            "channels" => self.channels = num(key, v)?,
            "blocks" => self.blocks = num(key, v)?,
            "periods" => self.periods = num(key, v)?,
            "interval" => self.interval = if v == "auto" { None } else { Some(num(key, v)?) },
            "pooled_h" => self.pooled_h = num(key, v)?,
            "pooled_w" => self.pooled_w = num(key, v)?,
            "reduction_spatial" => self.reduction_spatial = num(key, v)?,
            "reduction_channel" => self.reduction_channel = num(key, v)?,
            "kernel" => self.kernel = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "beta1" => self.beta1 = num(key, v)?,
            "beta2" => self.beta2 = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "loss_reduction" => {
                self.loss_reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => bail!("loss_reduction: expected `sum` or `mean`, got `{v}`"),
                }
            }
            "seed" => self.seed = num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    _ => bail!("precision: expected `f64` or `f32`, got `{v}`"),
                }
            }
            "threads" => self.threads = num(key, v)?,
            "scale_divisor" => self.scale_divisor = num(key, v)?,
            "stride" => self.stride = num(key, v)?,
            "test_frac" => self.test_frac = num(key, v)?,
            "val_frac" => self.val_frac = num(key, v)?,
            "steps_per_day" => self.steps_per_day = num(key, v)?,
            "budget_ratio" => self.budget_ratio = num(key, v)?,
            "ratios" => self.ratios = parse_ratios(v)?,
            "clamp_nonneg" => self.clamp_nonneg = num(key, v)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "t_obs" => self.t_obs.to_string(),
            "t_pred" => self.t_pred.to_string(),
            "channels" => self.channels.to_string(),
            "blocks" => self.blocks.to_string(),
            "periods" => self.periods.to_string(),
            "interval" => self.interval.map_or("auto".into(), |i| i.to_string()),
            "pooled_h" => self.pooled_h.to_string(),
            "pooled_w" => self.pooled_w.to_string(),
            "reduction_spatial" => self.reduction_spatial.to_string(),
            "reduction_channel" => self.reduction_channel.to_string(),
            "kernel" => self.kernel.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "loss_reduction" => match self.loss_reduction {
                Reduction::Sum => "sum".into(),
                Reduction::Mean => "mean".into(),
            },
            "seed" => self.seed.to_string(),
            "precision" => match self.precision {
                Precision::F64 => "f64".into(),
                Precision::F32 => "f32".into(),
            },
            "threads" => self.threads.to_string(),
            "scale_divisor" => self.scale_divisor.to_string(),
            "stride" => self.stride.to_string(),
            "test_frac" => self.test_frac.to_string(),
            "val_frac" => self.val_frac.to_string(),
            "steps_per_day" => self.steps_per_day.to_string(),
            "budget_ratio" => self.budget_ratio.to_string(),
            "ratios" => join(&self.ratios),
            "clamp_nonneg" => self.clamp_nonneg.to_string(),
            _ => unreachable!("key table covers {key}"),
        }
    }

    /// Applies a config file on top of `self`. Blank lines and `#` comments
    /// are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got `{o}`"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = num(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_NAME);
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }

    /// Model shape for a series with the given grid and calendar.
    pub fn model_config(&self, height: usize, width: usize, meta: &SeriesMeta) -> ModelConfig {
        ModelConfig {
            height,
            width,
            t_obs: self.t_obs,
            t_pred: self.t_pred,
            channels: self.channels,
            blocks: self.blocks,
            periods: self.periods,
            interval: self.interval.unwrap_or_else(|| meta.period_steps()),
            pooled_h: self.pooled_h,
            pooled_w: self.pooled_w,
            reduction_spatial: self.reduction_spatial,
            reduction_channel: self.reduction_channel,
            kernel: self.kernel,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            loss_reduction: self.loss_reduction,
            seed: self.seed,
            precision: self.precision,
            threads: self.threads,
        }
    }

    pub fn scaling(&self) -> Result<ScalingSpec> {
        Ok(ScalingSpec::new(self.scale_divisor)?)
    }
}

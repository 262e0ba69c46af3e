use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prnet_core::data::{
    inputs_at, load_csv, load_series, make_windows, save_series, split, synth_generate, FlowSeries,
    SynthSpec,
};
use prnet_core::eval::{budget_sweep, evaluate, subsample_train, EvalOptions};
use prnet_core::train::{load_checkpoint, save_checkpoint, train, write_history, StopReason};
use prnet_core::{prnf, ModelConfig, Prnet, ScalingSpec, SplitData};

use crate::config::{RunConfig, RESOLVED_NAME, SEED_ENV};

/// A numerical failure; reported with exit code 2.
#[derive(Debug)]
pub struct Numerical(pub String);

impl fmt::Display for Numerical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

/// Layers that sit above the built-in defaults, lowest precedence first.
#[derive(Clone, Debug, Default)]
pub struct Layers {
    pub base_dir: Option<PathBuf>,
    pub file: Option<PathBuf>,
    pub env_seed: Option<String>,
    pub overrides: Vec<String>,
}

impl Layers {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        if let Some(dir) = &self.base_dir {
            let stored = dir.join(RESOLVED_NAME);
            if stored.exists() {
                run.apply_file(&stored)?;
            }
        }
        if let Some(file) = &self.file {
            run.apply_file(file)?;
        }
        run.apply_seed_env(self.env_seed.as_deref())
            .with_context(|| format!("reading {SEED_ENV}"))?;
        run.apply_overrides(&self.overrides)?;
        Ok(run)
    }
}

pub fn load_data(path: &Path, run: &RunConfig) -> Result<FlowSeries> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let series = if is_csv {
        load_csv(path, run.steps_per_day)?
    } else {
        load_series(path)?
    };
    Ok(series)
}

struct Prepared {
    config: ModelConfig,
    scaling: ScalingSpec,
    data: SplitData,
}

fn prepare(series: &FlowSeries, run: &RunConfig) -> Result<Prepared> {
    let config = run.model_config(series.height(), series.width(), series.meta());
    config.validate()?;
    let scaling = run.scaling()?;
    let scaled = scaling.scale(series)?;
    let set = make_windows(&scaled, &config.window_spec(run.stride))?;
    if set.too_short {
        bail!(
            "series of {} steps is too short for {} periods of interval {}",
            series.n_steps(),
            config.periods,
            config.interval
        );
    }
    let data = split(set.windows, run.test_frac, run.val_frac, run.seed)?;
    Ok(Prepared { config, scaling, data })
}

fn eval_options(run: &RunConfig) -> EvalOptions {
    EvalOptions {
        precision: run.precision,
        threads: run.threads,
    }
}

pub struct GenerateArgs {
    pub out: PathBuf,
    pub spec: SynthSpec,
    pub periods: usize,
}

pub fn parse_grid(grid: &str) -> Result<(usize, usize)> {
    let (h, w) = grid
        .split_once(['x', 'X'])
        .with_context(|| format!("grid `{grid}` must look like HxW"))?;
    let parse = |s: &str| -> Result<usize> {
        let n: usize = s.trim().parse().with_context(|| format!("grid `{grid}` must look like HxW"))?;
        if n == 0 {
            bail!("grid `{grid}` has a zero dimension");
        }
        Ok(n)
    };
    Ok((parse(h)?, parse(w)?))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let need = args.periods + 2;
    if args.spec.weeks < need {
        bail!(
            "need ≥ P+2 weeks of data (P = {}, so at least {need}), got {}",
            args.periods,
            args.spec.weeks
        );
    }
    let series = synth_generate(&args.spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_series(&series, &args.out)?;
    println!(
        "wrote {} ({}x{} grid, {} steps, mean flow {:.3})",
        args.out.display(),
        series.height(),
        series.width(),
        series.n_steps(),
        series.mean()
    );
    Ok(())
}

pub fn train_cmd(data: &Path, out: &Path, run: &RunConfig) -> Result<()> {
    let series = load_data(data, run)?;
    let prep = prepare(&series, run)?;
    let subset = subsample_train(&prep.data.train, run.budget_ratio)?;
    run.write(out)?;
    let model = Prnet::new(prep.config.clone(), run.seed)?;
    let outcome = train(model, &subset, &prep.data.val, &prep.scaling, &run.train_config())?;
    save_checkpoint(out, &outcome.model)?;
    write_history(out.join("history.csv"), &outcome.history)?;
    println!(
        "trained on {} windows ({} validation, {} test); best validation MAE {:.6} at epoch {}",
        subset.len(),
        prep.data.val.len(),
        prep.data.test.len(),
        outcome.best_val_mae,
        outcome.best_epoch.map_or("none".into(), |e| e.to_string())
    );
    match outcome.stop {
        StopReason::Diverged { epoch, reason } => {
            Err(Numerical(format!("training diverged at epoch {epoch}: {reason}")).into())
        }
        StopReason::EarlyStopped => {
            println!("stopped early after {} epochs", outcome.history.len());
            Ok(())
        }
        StopReason::MaxEpochs => {
            println!("reached the epoch limit of {}", run.max_epochs);
            Ok(())
        }
    }
}

fn load_model(dir: &Path, expected: &ModelConfig) -> Result<Prnet> {
    load_checkpoint(dir, Some(expected)).with_context(|| format!("loading checkpoint {}", dir.display()))
}

pub fn evaluate_cmd(model_dir: &Path, data: &Path, report_dir: &Path, run: &RunConfig) -> Result<()> {
    let series = load_data(data, run)?;
    let prep = prepare(&series, run)?;
    let model = load_model(model_dir, &prep.config)?;
    let report = evaluate(&model, &prep.data.test, &prep.scaling, eval_options(run))?;
    run.write(report_dir)?;
    report.write(report_dir)?;
    for p in &report.predictors {
        println!(
            "{:>6}: MAE {:.6} RMSE {:.6} SMAPE {:.6}",
            p.name, p.aggregate.mae, p.aggregate.rmse, p.aggregate.smape
        );
    }
    Ok(())
}

pub fn predict_cmd(model_dir: &Path, data: &Path, at: usize, out: &Path, run: &RunConfig) -> Result<()> {
    let series = load_data(data, run)?;
    let config = run.model_config(series.height(), series.width(), series.meta());
    let model = load_model(model_dir, &config)?;
    let scaling = run.scaling()?;
    let scaled = scaling.scale(&series)?;
    let inputs = inputs_at(&scaled, &config.window_spec(run.stride), at)
        .with_context(|| format!("building inputs for anchor {at}"))?;
    let mut forecast = scaling.restore(&model.predict(&inputs, run.precision)?);
    if forecast.data().iter().any(|v| !v.is_finite()) {
        return Err(Numerical(format!("prediction at anchor {at} is not finite")).into());
    }
    if run.clamp_nonneg {
        forecast = forecast.map(|v| v.max(0.0));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        run.write(parent)?;
    }
    prnf::write(out, &forecast)?;
    println!("wrote {} with shape {:?}", out.display(), forecast.shape());
    Ok(())
}

pub fn sweep_cmd(data: &Path, out: &Path, run: &RunConfig) -> Result<()> {
    let series = load_data(data, run)?;
    let prep = prepare(&series, run)?;
    run.write(out)?;
    let train_config = run.train_config();
    let report = budget_sweep(&prep.data, &run.ratios, &prep.scaling, eval_options(run), |subset| {
        let model = Prnet::new(prep.config.clone(), run.seed)?;
        let outcome = train(model, subset, &prep.data.val, &prep.scaling, &train_config)?;
        if let StopReason::Diverged { epoch, reason } = outcome.stop {
            return Err(prnet_core::Error::Diverged { epoch, reason });
        }
        Ok(outcome.model)
    })?;
    let path = out.join("sweep.csv");
    std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    for row in &report.rows {
        println!(
            "ratio {}: {} windows, MAE prnet {:.6} ha {:.6}",
            row.ratio, row.n_train, row.model.mae, row.ha.mae
        );
    }
    Ok(())
}

/// Exit status for a failed command: 2 for numerical failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Numerical>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<prnet_core::Error>() {
            if matches!(
                e,
                prnet_core::Error::NonFinite { .. }
                    | prnet_core::Error::NonFiniteGradient { .. }
                    | prnet_core::Error::Diverged { .. }
            ) {
                return 2;
            }
        }
    }
    1
}

//! Sample extraction around an anchor step.
//!
//! For an anchor `t` (first predicted step) with period interval `l`:
//!
//! | block                    | steps                                |
//! |--------------------------|--------------------------------------|
//! | closeness                | `[t - T_obs, t)`                     |
//! | periodic closeness `p`   | `[t - T_obs - l*p, t - l*p)`         |
//! | periodic prediction `p`  | `[t - l*p, t + T_pred - l*p)`        |
//! | target                   | `[t, t + T_pred)`                    |
//!
//! for `p = 1..=P`, stored with `p - 1` on the leading axis. The residual
//! target is `target - periodic_prediction[p]`.

use serde::{Deserialize, Serialize};

use super::series::FlowSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t_obs: usize,
    pub t_pred: usize,
    pub interval: usize,
    pub periods: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_obs == 0 || self.t_pred == 0 || self.periods == 0 || self.stride == 0 {
            return Err(Error::Config(
                "t_obs, t_pred, periods and stride must be positive".into(),
            ));
        }
        if self.interval < self.t_obs + self.t_pred {
            return Err(Error::Config(format!(
                "interval {} overlaps the current window (needs >= t_obs + t_pred = {})",
                self.interval,
                self.t_obs + self.t_pred
            )));
        }
        Ok(())
    }

    /// Earliest local anchor with full periodic history.
    pub fn first_anchor(&self) -> usize {
        self.t_obs + self.interval * self.periods
    }
}

/// Everything the network sees for one forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastInputs {
    /// `[H, W, 2, T_obs]`
    pub closeness: Tensor,
    /// `[P, H, W, 2, T_obs]`
    pub periodic_closeness: Tensor,
    /// `[P, H, W, 2, T_pred]`
    pub periodic_prediction: Tensor,
    /// Absolute index of the first predicted step.
    pub anchor: usize,
}

/// One training example: inputs plus the known future.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub inputs: ForecastInputs,
    /// `[H, W, 2, T_pred]`
    pub target: Tensor,
    /// `[P, H, W, 2, T_pred]`, `target - periodic_prediction[p]`.
    pub residual: Tensor,
}

impl SampleWindow {
    pub fn anchor(&self) -> usize {
        self.inputs.anchor
    }
}

#[derive(Clone, Debug, Default)]
pub struct WindowSet {
    pub windows: Vec<SampleWindow>,
    /// Set when the series cannot hold a single window.
    pub too_short: bool,
}

/// Inputs for the forecast starting at absolute step `anchor`. The future
/// itself need not be in the series.
pub fn inputs_at(series: &FlowSeries, spec: &WindowSpec, anchor: usize) -> Result<ForecastInputs> {
    spec.validate()?;
    let start = series.meta().start_index;
    let n = series.n_steps();
    let t = anchor
        .checked_sub(start)
        .filter(|&t| t >= spec.first_anchor())
        .ok_or_else(|| {
            Error::invalid(
                "window",
                format!(
                    "anchor {anchor} lacks periodic history (earliest is {})",
                    start + spec.first_anchor()
                ),
            )
        })?;
    if t + spec.t_pred > n + spec.interval {
        return Err(Error::invalid(
            "window",
            format!("anchor {anchor} has no periodic prediction inside the series"),
        ));
    }
    let closeness = series.segment(t - spec.t_obs, spec.t_obs);
    let mut xp = Vec::with_capacity(spec.periods);
    let mut yp = Vec::with_capacity(spec.periods);
    for p in 1..=spec.periods {
        let back = spec.interval * p;
        xp.push(series.segment(t - spec.t_obs - back, spec.t_obs));
        yp.push(series.segment(t - back, spec.t_pred));
    }
    Ok(ForecastInputs {
        closeness,
        periodic_closeness: Tensor::stack(&xp)?,
        periodic_prediction: Tensor::stack(&yp)?,
        anchor,
    })
}

/// Full sample at `anchor`; the target must lie inside the series.
pub fn window_at(series: &FlowSeries, spec: &WindowSpec, anchor: usize) -> Result<SampleWindow> {
    let inputs = inputs_at(series, spec, anchor)?;
    let t = anchor - series.meta().start_index;
    if t + spec.t_pred > series.n_steps() {
        return Err(Error::invalid(
            "window",
            format!("anchor {anchor} runs past the end of the series"),
        ));
    }
    let target = series.segment(t, spec.t_pred);
    let residual = residual(&target, &inputs.periodic_prediction);
    Ok(SampleWindow {
        inputs,
        target,
        residual,
    })
}

fn residual(target: &Tensor, periodic: &Tensor) -> Tensor {
    let inner = target.numel();
    let y = target.data();
    let data = periodic
        .data()
        .iter()
        .enumerate()
        .map(|(i, &yp)| y[i % inner] - yp)
        .collect();
    Tensor::new(periodic.shape().to_vec(), data).expect("residual shape")
}

/// Every window whose anchor advances by `spec.stride` from the first one
/// with full history. Windows reaching before the series start are dropped.
pub fn make_windows(series: &FlowSeries, spec: &WindowSpec) -> Result<WindowSet> {
    spec.validate()?;
    let first = spec.first_anchor();
    let n = series.n_steps();
    if first + spec.t_pred > n {
        return Ok(WindowSet {
            windows: Vec::new(),
            too_short: true,
        });
    }
    let start = series.meta().start_index;
    let windows = (first..=n - spec.t_pred)
        .step_by(spec.stride)
        .map(|t| window_at(series, spec, start + t))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowSet {
        windows,
        too_short: false,
    })
}

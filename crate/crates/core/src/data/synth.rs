//! Synthetic weekly-periodic crowd flows.
//!
//! Per cell and channel:
//!
//! ```text
//! value(t) = max(0, base * daily(t mod steps_per_day) * weekly(day of week)
//!                   + trend_slope * t + N(0, noise_sd))
//! ```
//!
//! `daily` is a fixed two-peak commute profile; `base` and `weekly` are
//! drawn from seeded uniform ranges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::series::{FlowSeries, SeriesMeta};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub weeks: usize,
    pub steps_per_day: usize,
    pub noise_sd: f64,
    pub trend_slope: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 8,
            width: 8,
            weeks: 8,
            steps_per_day: 24,
            noise_sd: 0.0,
            trend_slope: 0.0,
            seed: 0,
        }
    }
}

const DAYS_PER_WEEK: usize = 7;
const BASE_RANGE: (f64, f64) = (5.0, 40.0);
const WEEKLY_RANGE: (f64, f64) = (0.7, 1.3);

/// Two-peak profile over the day; `morning` weights the first peak.
fn daily(step: usize, steps_per_day: usize, morning: f64) -> f64 {
    let hour = 24.0 * step as f64 / steps_per_day as f64;
    let bump = |center: f64, width: f64| (-0.5 * ((hour - center) / width).powi(2)).exp();
    0.25 + morning * bump(8.5, 1.5) + (1.8 - morning) * bump(18.0, 2.0)
}

pub fn synth_generate(spec: &SynthSpec) -> Result<FlowSeries> {
    if spec.height == 0 || spec.width == 0 || spec.weeks == 0 || spec.steps_per_day == 0 {
        return Err(Error::Config("synthetic grid, weeks and steps_per_day must be positive".into()));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) || !spec.trend_slope.is_finite() {
        return Err(Error::Config("noise_sd must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lanes = spec.height * spec.width * 2;
    let base: Vec<f64> = (0..lanes)
        .map(|_| rng.random_range(BASE_RANGE.0..BASE_RANGE.1))
        .collect();
    let weekly: Vec<f64> = (0..lanes * DAYS_PER_WEEK)
        .map(|_| rng.random_range(WEEKLY_RANGE.0..WEEKLY_RANGE.1))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    let n = spec.weeks * DAYS_PER_WEEK * spec.steps_per_day;
    let profiles = [
        (0..spec.steps_per_day)
            .map(|s| daily(s, spec.steps_per_day, 1.0))
            .collect::<Vec<_>>(),
        (0..spec.steps_per_day)
            .map(|s| daily(s, spec.steps_per_day, 0.8))
            .collect::<Vec<_>>(),
    ];
    let mut values = Vec::with_capacity(n * lanes);
    for t in 0..n {
        let step = t % spec.steps_per_day;
        let day = (t / spec.steps_per_day) % DAYS_PER_WEEK;
        let trend = spec.trend_slope * t as f64;
        for lane in 0..lanes {
            let seasonal = base[lane] * profiles[lane % 2][step] * weekly[lane * DAYS_PER_WEEK + day];
            let eps = if spec.noise_sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            values.push((seasonal + trend + eps).max(0.0));
        }
    }
    let meta = SeriesMeta {
        steps_per_day: spec.steps_per_day,
        days_per_period: DAYS_PER_WEEK,
        start_index: 0,
    };
    FlowSeries::new(spec.height, spec.width, meta, values)
}

//! Flow series storage and file I/O.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prnf;
use crate::tensor::Tensor;

/// Calendar metadata stored next to a series file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub steps_per_day: usize,
    #[serde(default = "default_days_per_period")]
    pub days_per_period: usize,
    /// Absolute index of the first step.
    #[serde(default)]
    pub start_index: usize,
}

fn default_days_per_period() -> usize {
    7
}

impl Default for SeriesMeta {
    fn default() -> Self {
        SeriesMeta {
            steps_per_day: 24,
            days_per_period: 7,
            start_index: 0,
        }
    }
}

impl SeriesMeta {
    /// Steps in one calendar period (a week by default).
    pub fn period_steps(&self) -> usize {
        self.steps_per_day * self.days_per_period
    }
}

/// Inflow/outflow grids over time, stored `[n_steps, H, W, 2]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSeries {
    height: usize,
    width: usize,
    meta: SeriesMeta,
    values: Vec<f64>,
}

impl FlowSeries {
    pub fn new(height: usize, width: usize, meta: SeriesMeta, values: Vec<f64>) -> Result<Self> {
        let frame = height * width * 2;
        if height == 0 || width == 0 {
            return Err(Error::invalid("flow_series", "grid extents must be positive"));
        }
        if !values.len().is_multiple_of(frame) {
            return Err(Error::invalid(
                "flow_series",
                format!("{} values do not fill whole {height}x{width}x2 frames", values.len()),
            ));
        }
        if meta.steps_per_day == 0 || meta.days_per_period == 0 {
            return Err(Error::invalid("flow_series", "calendar extents must be positive"));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(
                "flow_series",
                format!("flows must be finite and non-negative, found {bad}"),
            ));
        }
        Ok(FlowSeries {
            height,
            width,
            meta,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn meta(&self) -> &SeriesMeta {
        &self.meta
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.frame_len()
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Same grid and calendar with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        FlowSeries::new(self.height, self.width, self.meta, values)
    }

    /// Steps `[start, start + len)` as an `[H, W, 2, len]` segment.
    pub fn segment(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.n_steps(), "segment past end of series");
        let cells = self.height * self.width;
        let mut out = vec![0.0; cells * 2 * len];
        for t in 0..len {
            let frame = self.frame(start + t);
            for cell in 0..cells {
                for f in 0..2 {
                    out[(cell * 2 + f) * len + t] = frame[cell * 2 + f];
                }
            }
        }
        Tensor::new([self.height, self.width, 2, len], out).expect("segment shape")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.n_steps(), self.height, self.width, 2],
            self.values.clone(),
        )
        .expect("series shape")
    }
}

/// `series.prnf` -> `series.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the PRNF tensor plus its JSON calendar sidecar.
pub fn save_series(series: &FlowSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    prnf::write(path, &series.to_tensor())?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&series.meta).map_err(|e| Error::Json {
        path: side.clone(),
        source: e,
    })?;
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_series(path: impl AsRef<Path>) -> Result<FlowSeries> {
    let path = path.as_ref();
    let tensor = prnf::read(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SeriesMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: side.clone(),
        source: e,
    })?;
    let &[_, h, w, 2] = tensor.shape() else {
        return Err(Error::InvalidData {
            path: path.to_path_buf(),
            reason: format!("expected extents [n_steps, H, W, 2], found {:?}", tensor.shape()),
        });
    };
    FlowSeries::new(h, w, meta, tensor.into_data()).map_err(|e| Error::InvalidData {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    t: usize,
    h: usize,
    w: usize,
    inflow: f64,
    outflow: f64,
}

/// Imports `t,h,w,inflow,outflow` rows. Every `(t, h, w)` in the bounding
/// box must appear exactly once; the smallest `t` becomes `start_index`.
pub fn load_csv(path: impl AsRef<Path>, steps_per_day: usize) -> Result<FlowSeries> {
    let path = path.as_ref();
    let bad = |reason: String| Error::InvalidData {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let rows: Vec<CsvRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    let t0 = rows.iter().map(|r| r.t).min().unwrap();
    let n = rows.iter().map(|r| r.t).max().unwrap() - t0 + 1;
    let h = rows.iter().map(|r| r.h).max().unwrap() + 1;
    let w = rows.iter().map(|r| r.w).max().unwrap() + 1;
    let mut values = vec![0.0; n * h * w * 2];
    let mut seen = vec![false; n * h * w];
    for r in &rows {
        if r.inflow < 0.0 || r.outflow < 0.0 {
            return Err(bad(format!("negative flow at t={} h={} w={}", r.t, r.h, r.w)));
        }
        let cell = ((r.t - t0) * h + r.h) * w + r.w;
        if std::mem::replace(&mut seen[cell], true) {
            return Err(bad(format!("duplicate row t={} h={} w={}", r.t, r.h, r.w)));
        }
        values[cell * 2] = r.inflow;
        values[cell * 2 + 1] = r.outflow;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let (t, rest) = (missing / (h * w), missing % (h * w));
        return Err(bad(format!(
            "missing row t={} h={} w={}",
            t + t0,
            rest / w,
            rest % w
        )));
    }
    let meta = SeriesMeta {
        steps_per_day,
        start_index: t0,
        ..SeriesMeta::default()
    };
    FlowSeries::new(h, w, meta, values).map_err(|e| bad(e.to_string()))
}

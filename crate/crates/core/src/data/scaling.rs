use serde::{Deserialize, Serialize};

use super::series::FlowSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Divides flows by a constant before training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub divisor: f64,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec { divisor: 50.0 }
    }
}

impl ScalingSpec {
    pub fn new(divisor: f64) -> Result<Self> {
        let s = ScalingSpec { divisor };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.divisor > 0.0 && self.divisor.is_finite()) {
            return Err(Error::Config(format!(
                "scaling divisor must be positive, got {}",
                self.divisor
            )));
        }
        Ok(())
    }

    pub fn scale(&self, series: &FlowSeries) -> Result<FlowSeries> {
        self.validate()?;
        series.with_values(series.values().iter().map(|v| v / self.divisor).collect())
    }

    pub fn inverse_scale(&self, series: &FlowSeries) -> Result<FlowSeries> {
        self.validate()?;
        series.with_values(series.values().iter().map(|v| v * self.divisor).collect())
    }

    /// Back to original units.
    pub fn restore(&self, t: &Tensor) -> Tensor {
        t.map(|v| v * self.divisor)
    }
}

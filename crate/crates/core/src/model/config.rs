use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and windowing hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Observed steps per segment (closeness and periodic closeness).
    pub t_obs: usize,
    /// Predicted steps (prediction and periodic prediction).
    pub t_pred: usize,
    pub channels: usize,
    /// Number of stacked SCE blocks.
    pub blocks: usize,
    /// Number of periodic segments.
    pub periods: usize,
    /// Steps between a frame and its periodic counterpart.
    pub interval: usize,
    pub pooled_h: usize,
    pub pooled_w: usize,
    pub reduction_spatial: usize,
    pub reduction_channel: usize,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            t_obs: 12,
            t_pred: 12,
            channels: 64,
            blocks: 9,
            periods: 3,
            interval: 7 * 24,
            pooled_h: 8,
            pooled_w: 8,
            reduction_spatial: 8,
            reduction_channel: 4,
            kernel: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("height", self.height),
            ("width", self.width),
            ("t_obs", self.t_obs),
            ("t_pred", self.t_pred),
            ("channels", self.channels),
            ("blocks", self.blocks),
            ("periods", self.periods),
            ("pooled_h", self.pooled_h),
            ("pooled_w", self.pooled_w),
            ("reduction_spatial", self.reduction_spatial),
            ("reduction_channel", self.reduction_channel),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.interval < self.t_obs + self.t_pred {
            return fail(format!(
                "interval {} must be at least t_obs + t_pred = {}",
                self.interval,
                self.t_obs + self.t_pred
            ));
        }
        if self.pooled_h > self.height || self.pooled_w > self.width {
            return fail(format!(
                "pooled extent {}x{} exceeds grid {}x{}",
                self.pooled_h, self.pooled_w, self.height, self.width
            ));
        }
        let pooled = self.pooled_h * self.pooled_w;
        if !pooled.is_multiple_of(self.reduction_spatial) {
            return fail(format!(
                "pooled_h * pooled_w = {pooled} is not divisible by reduction_spatial {}",
                self.reduction_spatial
            ));
        }
        if !self.channels.is_multiple_of(self.reduction_channel) {
            return fail(format!(
                "channels {} is not divisible by reduction_channel {}",
                self.channels, self.reduction_channel
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return fail(format!("kernel size {} must be odd", self.kernel));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn pooled_cells(&self) -> usize {
        self.pooled_h * self.pooled_w
    }

    pub fn spatial_hidden(&self) -> usize {
        self.pooled_cells() / self.reduction_spatial
    }

    pub fn channel_hidden(&self) -> usize {
        self.channels / self.reduction_channel
    }

    /// Whether prediction-length segments need their own embedding.
    pub fn separate_pred_embedding(&self) -> bool {
        self.t_obs != self.t_pred
    }

    /// Learnable scalar count from the closed-form shape sum.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let embed = |t: usize| 2 * t * c + c;
        let mut total = embed(self.t_obs);
        if self.separate_pred_embedding() {
            total += embed(self.t_pred);
        }
        let k2 = self.kernel * self.kernel;
        let block = 2 * (k2 * c * c + c)
            + 2 * self.pooled_cells() * self.spatial_hidden()
            + 2 * c * self.channel_hidden();
        total += self.blocks * block;
        total += 2 * c * c;
        total += c * 2 * self.t_pred + 2 * self.t_pred;
        total
    }
}

//! Periodic residual learning for grid crowd-flow forecasting.
//!
//! The network predicts how the next `T_pred` frames deviate from the same
//! frames one, two, ... `P` periods earlier, and averages
//! `deviation + periodic frame` over periods to recover the flows.
//!
//! * [`tensor`] / [`graph`]: dense tensors and tape-based reverse-mode
//!   differentiation with exactly the ops the network needs.
//! * [`model`]: embedding, SCE encoder, differencing, fusion, decoder.
//! * [`data`]: flow series, windows, splits, scaling, synthetic data.
//! * [`train`]: L1 residual loss, Adam, early stopping, checkpoints.
//! * [`eval`]: MAE / RMSE / SMAPE, historical average, budget sweeps.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod prnf;
pub mod tensor;
pub mod train;

pub use data::{FlowSeries, ForecastInputs, SampleWindow, ScalingSpec, SplitData, WindowSpec};
pub use error::{Error, Result};
pub use eval::{ForecastReport, Metrics};
pub use graph::{EwiseKind, Graph, Reduction, Var};
pub use model::{ModelConfig, Prnet, PrnetParams};
pub use tensor::{Precision, Tensor};
pub use train::{TrainConfig, TrainOutcome};

impl ModelConfig {
    /// Window extraction matching this architecture.
    pub fn window_spec(&self, stride: usize) -> WindowSpec {
        WindowSpec {
            t_obs: self.t_obs,
            t_pred: self.t_pred,
            interval: self.interval,
            periods: self.periods,
            stride,
        }
    }
}

//! Flow series, sample windows, splits, scaling and synthetic data.

mod scaling;
mod series;
mod split;
mod synth;
mod window;

pub use scaling::ScalingSpec;
pub use series::{load_csv, load_series, save_series, sidecar_path, FlowSeries, SeriesMeta};
pub use split::{split, split_sizes, SplitData};
pub use synth::{synth_generate, SynthSpec};
pub use window::{inputs_at, make_windows, window_at, ForecastInputs, SampleWindow, WindowSet, WindowSpec};

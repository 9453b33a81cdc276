//! Synthetic data, evaluation metrics, plots and the ablation runner.

mod ablation;
mod metrics;
mod plot;
mod synth;

pub use ablation::*;
pub use metrics::*;
pub use plot::*;
pub use synth::*;

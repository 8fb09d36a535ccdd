pub mod basis;
pub mod distributions;
pub mod error;
pub mod gamlss;
pub mod metrics;
pub mod model_space;
pub mod pipeline;
pub mod presets;
pub mod series;
pub mod simulation;
mod special;

pub use error::{GawsError, Result};
pub use series::TimeSeriesSample;

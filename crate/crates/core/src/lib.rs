pub mod cli;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod graphs;
pub mod metrics;
pub mod model;
pub mod ndmath;
pub mod pipeline;
pub mod preprocess;
pub mod train;

pub use error::{Error, Result};

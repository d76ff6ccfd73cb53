pub mod covariance;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod hier;
pub mod linalg;
pub mod mle;
pub mod optimize;
pub mod points;
pub mod schedules;
pub mod specfun;

pub use error::{Error, Result};
pub use points::Points;

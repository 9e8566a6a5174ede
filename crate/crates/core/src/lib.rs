//! Joint nonlinear mixed-effects model of a longitudinal score and a
//! time-to-event outcome, linked through a latent disease age.

pub mod error;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod personalize;
pub mod pipeline;
pub mod saem;
pub mod simulate;

pub use error::{Error, Result};

//! Semi-parametric vehicle dynamics learning and sampling-based racing
//! control: a bicycle/brush-tire parametric core, a neural residual with
//! online pseudo-rehearsal updates, and an MPPI controller with an
//! experiment harness around them.

pub mod dataset;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod gmm;
pub mod learner;
pub mod mppi;
pub mod nn;
pub mod parametric;
pub mod plant;
pub mod semiparam;
pub mod state;
pub mod track;

pub use error::{Error, Result};

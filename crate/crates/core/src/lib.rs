//! Question-centric interpretable knowledge tracing.
//!
//! Two recurrent cells track what a student acquires from each attempt and
//! their question-agnostic knowledge state; three score heads turn those into
//! an acquisition score α, a mastery score β and a problem-solving score ζ
//! for the next question, and the prediction is the parameter-free
//! `σ(α + β + ζ)`.
//!
//! The crate carries its own small reverse-mode autodiff ([`autodiff`]), the
//! data pipeline ([`data`]), Adam training with early stopping and
//! cross-validation ([`train`]), and metrics plus interpretable exports
//! ([`eval`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

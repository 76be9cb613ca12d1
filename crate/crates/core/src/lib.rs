//! Practical identifiability analysis and ordinary-least-squares estimation
//! for parametric ODE models observed through noisy interval counts.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod lsq;
pub mod model;
pub mod ode;
pub mod ols;
pub mod seirs;
pub mod sensitivity;
pub mod subset;
pub mod synthetic;

pub use error::{Error, Result};

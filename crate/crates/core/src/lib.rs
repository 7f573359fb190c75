//! Quasistatic spring-sliding manipulation: springy-finger stick/slide
//! contact mechanics, wrench-balance robustness and two-finger sliding
//! regrasp planning for planar objects resting against a stationary
//! environment.

pub mod error;
pub mod finger;
pub mod ident;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod planner;
pub mod robustness;
pub mod simulator;
pub mod sliding;
pub mod tasks;
pub mod wrench;

pub use error::{Error, Result};

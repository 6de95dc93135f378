pub mod align;
pub mod baseline;
pub mod cf;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod par;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

//! Flow-matching editing samplers (direct regeneration, inversion, velocity-
//! difference editing and anchor-aligned editing) over Gaussian-mixture tasks
//! whose velocity fields are known in closed form, plus a small learned MLP
//! field, metrics and a deterministic benchmark harness.
//!
//! Time runs from data at `t = 0` to noise at `t = 1`.

pub mod anchor;
pub mod bench;
pub mod config;
pub mod editing;
pub mod error;
pub mod fault;
pub mod flow;
pub mod gmm;
pub mod latent;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod svg;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{Condition, VelocityField};
pub use latent::Latent;

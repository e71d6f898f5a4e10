//! Irregular repetition slotted ALOHA with energy-harvesting devices.
//!
//! The crate covers the battery Markov chain of devices that never plan more
//! replicas than they can pay for, analytical loss and age-of-information
//! expressions, a frame-level Monte-Carlo simulator, three successive
//! interference cancellation decoders (including one that locates replicas
//! dropped for lack of energy), and a degree-distribution optimizer.

pub mod analysis;
pub mod config;
pub mod decode;
pub mod energy_chain;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use model::{Adaptivity, Capacity, DegreeDistribution, SystemConfig};
pub use sim::{BatteryModel, Scheme};

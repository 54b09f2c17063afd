//! Posterior bootstrap sampling for two-module cut models.
//!
//! A cut model has two modules. Module 1 owns `theta1` and is fitted on its
//! own data. Module 2 owns `theta2` and conditions on `theta1` without
//! feeding information back. Each bootstrap draw maximizes a randomly
//! weighted log-likelihood stage by stage.
//!
//! ```
//! use cutboot::model::PriorWeight;
//! use cutboot::sampler::{pbmi_scenario1, SamplerConfig};
//! use cutboot::zoo::{toy_generate, toy_model};
//!
//! let model = toy_model();
//! let data = toy_generate(0.0, 1.0, 200, 1).unwrap();
//! let zero = PriorWeight::zero();
//! let set = pbmi_scenario1(&model, &data, 50, &zero, &zero, &SamplerConfig::default(), 7).unwrap();
//! assert_eq!(set.len(), 50);
//! ```

pub mod asymptotics;
pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod optimize;
pub mod rng;
pub mod sampler;
pub mod zoo;

pub use error::{Error, Result};

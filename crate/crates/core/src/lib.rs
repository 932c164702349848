//! Adversarial training as a two-player game between a PGD attacker and an
//! SGD trainer, with loss rebalancing (BoAT), weight averaging, and a suite
//! of diagnostics for robust overfitting.

pub mod attack;
pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use attack::{AttackConfig, AttackSchedule};
pub use data::Dataset;
pub use error::{Error, Result};
pub use model::{Model, ModelSpec, ParamVector};
pub use tensor::{Precision, Real, Tensor};
pub use train::{TrainConfig, Trainer};

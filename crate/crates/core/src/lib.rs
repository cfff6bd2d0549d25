//! Feedforward neural networks with STE (stochastically trained ensemble)
//! layers, written from scratch in `f64`.
//!
//! An STE layer trains `A` weight matrices and biases side by side under
//! independent dropout or dropconnect noise and averages their outputs before
//! the activation. At test time the noise is replaced by its expectation and
//! the `A` branches collapse into one dense layer ([`collapse`]), so inference
//! costs the same as an ordinary dense layer.
//!
//! Modules:
//!
//! - [`tensor`], [`random`]: arrays, the seeded generator, initialization and masks
//! - [`layers`], [`model`]: dense/STE forward and backward passes, networks
//! - [`objective`], [`optimizer`]: cross-entropy, accuracy, Nesterov SGD
//! - [`collapse`]: test-time collapse, its verifier and parameter counts
//! - [`data`], [`checkpoint`], [`synthetic`]: datasets and persistence
//! - [`trainer`]: training loop, experiments and branch-activation analysis

pub mod checkpoint;
pub mod collapse;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod random;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use collapse::{collapse_model, collapse_ste, count_parameters, verify_collapse, CollapseReport, ParamCount};
pub use data::{Dataset, LabelColumn};
pub use error::{Error, Result};
pub use layers::{Activation, DenseLayer, Noise, SteLayer};
pub use model::{Layer, LayerSpec, Model, ModelSpec, Regularization};
pub use optimizer::TrainConfig;
pub use random::Rng;
pub use tensor::{Matrix, Vector};
pub use trainer::{evaluate, run_experiment, train, ExperimentConfig, ExperimentTable, RunResult, Splits, TrainOutcome};

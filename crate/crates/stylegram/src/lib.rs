//! Gram-statistic style transfer engine.
//!
//! Synthesizes an image that matches the content of one photograph and the
//! style of another by descending a feature-statistic loss through a VGG-19
//! trunk with L-BFGS. Beyond the classic per-layer Gram matrices the
//! statistics module implements shifted activations, inter-layer and
//! chained correlations (optionally box-blurred), adjacent-offset blocks,
//! amplified activations, content-aware Gram slices and triple-correlation
//! Gram cubes, each with an exact hand-derived gradient that is validated
//! against a finite-difference oracle.

pub mod container;
pub mod gradcheck;
pub mod imaging;
pub mod loss;
pub mod network;
pub mod optimizer;
mod parallel;
mod rng;
pub mod statistics;
pub mod tensor;

pub use container::{load_vgg19, ContainerError, WeightContainer};
pub use network::{ActivationSet, Network, NetworkError, NetworkWeights};
pub use statistics::{GramStatistic, StatVariant};
pub use tensor::{ActivationVolume, Matrix, TensorError};

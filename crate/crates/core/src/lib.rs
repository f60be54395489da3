//! Aligned multimodal graph learning at desk scale.
//!
//! The pipeline has an offline and an online half. Offline, [`cap`] builds
//! similarity-weighted propagation operators from the input features and
//! diffuses both modalities in lockstep, producing one [`Trajectory`] per
//! modality. Online, [`taa`] runs hop-axis self-attention, cross-modal
//! cross-attention and consistency-gated hop fusion over those trajectories,
//! and [`tasks`] trains heads on the fused embedding.
//!
//! [`verify`] turns the stability and fusion bounds into executable
//! certificates, [`baselines`] holds the decoupled comparison models, and
//! [`synthgen`] generates graphs with a tunable amount of cross-modal
//! conflict.

pub mod baselines;
pub mod cap;
pub mod config;
pub mod error;
pub mod io;
pub mod mag;
pub mod metrics;
pub mod numerics;
pub mod params;
pub mod par;
pub mod seed;
pub mod synthgen;
pub mod taa;
pub mod tasks;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};
pub use mag::{Mag, Modality, PropagationConfig, SplitSpec, Splits};
pub use numerics::{CsrMatrix, DenseMatrix};
pub use trajectory::Trajectory;

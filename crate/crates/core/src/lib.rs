//! Memory-driven multi-agent deterministic policy gradients.
//!
//! Agents share a fixed-length message vector that each of them reads
//! through a learned gate and rewrites through LSTM-style input/forget
//! gates, in turn, every timestep. Critics are centralized; execution only
//! uses each agent's own observation plus the shared message.
//!
//! The network engine ([`nn`]), the memory-driven policy ([`memdevice`]) and
//! the PCA used for communication analysis are generic over [`Real`]
//! (`f32`/`f64`). Training and evaluation run in `f64`.

pub mod commanalysis;
pub mod envs;
pub mod error;
pub mod evaluation;
pub mod memdevice;
pub mod nn;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mlp64 = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type ParamMatrix64 = nn::ParamMatrix<f64>;
pub type AdamState64 = nn::AdamState<f64>;
pub type MdPolicy64 = memdevice::MdPolicy<f64>;
pub type MdPolicy32 = memdevice::MdPolicy<f32>;

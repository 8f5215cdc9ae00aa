//! Minimal deterministic neural-network core: dense tensors, a reverse-mode tape, layers,
//! finite-difference gradient checking, Adam, and checkpoint files.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod opsuite;
pub mod layers;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{BnParams, Graph, Mode, Var, BN_EPS, BN_MOMENTUM, FOCAL_CLAMP};
pub use params::{ParamId, ParamKind, ParamStore, Parameter};
pub use scalar::Real;
pub use tensor::Tensor;

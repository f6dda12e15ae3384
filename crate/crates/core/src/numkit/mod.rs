//! Deterministic numeric kernels shared by every model in the crate.

mod adam;
mod finite_diff;
mod frechet;
pub mod nn;
mod ops;
mod real;
mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState, MultiStepLr, ParamSet};
pub use finite_diff::{check_param_grads, finite_diff_coords, finite_diff_grad, relative_error};
pub use frechet::{frechet_gaussian_distance, GaussianStats};
pub use ops::{dot, l2_norm, softmax, softmax_in_place};
pub use real::Real;
pub use rng::Rng;
pub use tensor::{gemm_into, matmul, Op, Tensor};

//! CNN-based end-to-end adaptive tracking control.
//!
//! A convolutional network reads a matrix of stacked past samples of
//! tracking error, state and input, and its output cancels the unknown
//! dynamics of a control-affine plant `ẋ = f(x) + u`. Weights adapt online
//! along the closed-form Jacobian of the network, with e-modification
//! damping and a norm-ball projection.
//!
//! The math modules are generic over [`Scalar`] (`f32` or `f64`); the
//! simulator and CLI work in `f64`, exposed through the aliases below.

pub mod cli;
pub mod controller;
pub mod error;
pub mod gradcheck;
pub mod jacobian;
pub mod mat;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision matrix.
pub type Matrix = mat::Mat<f64>;
pub type Trace = network::ForwardTrace<f64>;
pub type Jacobian = jacobian::JacobianMatrix<f64>;
pub type Params = controller::ControllerParams<f64>;

//! Nonlinear information bottleneck training.
//!
//! A stochastic encoder `m = f_θ(x) + σε` is trained together with a softmax
//! decoder to minimise `β·Î(X;M) + CE`, where `Î` is a differentiable
//! pairwise-distance kernel upper bound on `I(X;M)` whose mixture width comes
//! from leave-one-out likelihood maximisation, and the cross-entropy gives the
//! variational bound `I(Y;M) ≥ H(Y) - CE`.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only routes
//! transcendental functions to the platform libm; file formats and the CLI
//! live in the companion `nib` crate.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`tensor`] | row-major `f64` matrices and GEMM |
//! | [`net`] | layers, parameter store, forward/backward, gradient checking |
//! | [`kernel_mi`] | pairwise distances, LOO bandwidth, the bound and its gradient |
//! | [`encoder`] | additive-Gaussian stochastic encoder |
//! | [`objective`] | cross-entropy, loss assembly, `I(Y;M)` bound, VIB baseline |
//! | [`trainer`] | dual-minibatch Adam training and evaluation |
//! | [`dataset`] | datasets, stratified subsampling, synthetic clusters |

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adam;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod kernel_mi;
pub mod math;
pub mod model;
pub mod net;
pub mod objective;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor2;

use alloc::string::String;
use alloc::vec::Vec;

use crate::net::ParamStore;

/// Errors raised by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A network, tensor, or run configuration does not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// An internal consistency check failed (wrong activation count, non-finite input, ...).
    #[error("invariant violated: {0}")]
    Invariant(String),
    /// A precondition on the arguments of an operation was not met.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// Labels or inputs are outside their declared domain.
    #[error("data error: {0}")]
    Data(String),
    /// Training produced a non-finite loss; carries the state needed to reproduce it.
    #[error("non-finite loss at step {}: eta={}, sigma={}", .0.step, .0.eta, .0.sigma)]
    NonFinite(alloc::boxed::Box<NonFiniteSnapshot>),
}

/// State captured when a training step produces a NaN or infinite loss.
#[derive(Debug, Clone)]
pub struct NonFiniteSnapshot {
    pub step: u64,
    pub eta: f64,
    pub sigma: f64,
    pub ce_nats: f64,
    pub mi_bits: f64,
    pub sgd_indices: Vec<usize>,
    pub mi_indices: Vec<usize>,
    pub params: ParamStore,
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! invariant_err {
    ($($arg:tt)*) => { $crate::error::Error::Invariant(alloc::format!($($arg)*)) };
}
macro_rules! precondition_err {
    ($($arg:tt)*) => { $crate::error::Error::Precondition(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(alloc::format!($($arg)*)) };
}
pub(crate) use {config_err, data_err, invariant_err, precondition_err};

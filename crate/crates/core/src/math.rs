//! Scalar transcendental functions.
//!
//! With the `std` feature these forward to the platform libm through `f64`
//! methods; without it they use the pure-Rust `libm` port.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        x.ln_1p()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        libm::log1p(x)
    }
}

pub use imp::{exp, ln, ln_1p, sqrt};

pub const LN_2: f64 = core::f64::consts::LN_2;

/// Natural-log units to bits.
#[inline]
pub fn nats_to_bits(x: f64) -> f64 {
    x / LN_2
}

#[inline]
pub fn bits_to_nats(x: f64) -> f64 {
    x * LN_2
}

#[inline]
pub fn log2(x: f64) -> f64 {
    ln(x) / LN_2
}

/// `ln Σ exp(xs)` with max-shift stabilization. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + ln(sum)
}

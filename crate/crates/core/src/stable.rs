//! Numerically stable sigmoid / softplus / log-sigmoid.
//!
//! The adversarial losses compose `log D` and `log(1-D)` from raw logits via
//! these helpers so that logits of magnitude several hundred stay finite.

/// `1 / (1 + e^{-x})`, computed on the non-overflowing branch.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln sigmoid(x) = -softplus(-x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

//! Log-probability arithmetic.
//!
//! All scores are natural-log probabilities stored as `f64`. `-inf` is the
//! zero of the semiring, `0.0` its one.

/// A natural-log probability in `[-inf, 0]`.
pub type LogProb = f64;

pub const LOG_ZERO: LogProb = f64::NEG_INFINITY;
pub const LOG_ONE: LogProb = 0.0;

/// Masses below `ln(1e-300)` are flushed to `-inf`.
pub const UNDERFLOW_FLOOR: LogProb = -690.775_527_898_213_7;

/// Flushes values under [`UNDERFLOW_FLOOR`] to `-inf`.
#[inline]
pub fn floor(x: LogProb) -> LogProb {
    if x < UNDERFLOW_FLOOR {
        LOG_ZERO
    } else {
        x
    }
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: LogProb, b: LogProb) -> LogProb {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == LOG_ZERO {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(exp(v)))` in subtract-max form; `-inf` for an empty slice.
pub fn logsumexp(values: &[LogProb]) -> LogProb {
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `weight * score` with the convention `0 * -inf = 0`, so a disabled
/// term never poisons a fused score.
#[inline]
pub fn weighted(weight: f64, score: LogProb) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * score
    }
}

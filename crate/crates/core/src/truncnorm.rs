//! Univariate normal draws restricted to a half line.

use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

/// Standardized bounds above which the exponential rejection sampler is used.
const TAIL_START: f64 = 5.0;

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile function.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Log of the standard normal CDF, accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic expansion of the Mills ratio
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Draws `X ~ N(0, 1)` conditioned on `X > lower`.
pub fn std_normal_above<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower > TAIL_START {
        return exponential_tail(lower, rng);
    }
    // invert in the upper tail: -X ~ N(0,1) truncated to (-inf, -lower)
    let mass = norm_cdf(-lower);
    loop {
        let u = 1.0 - rng.random::<f64>(); // (0, 1]
        let x = -norm_quantile(u * mass);
        if x > lower && x.is_finite() {
            return x;
        }
    }
}

/// Robert's exponential rejection sampler for `X > lower` with large `lower`.
fn exponential_tail<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let u = 1.0 - rng.random::<f64>();
        let x = lower - u.ln() / rate;
        let accept = (-(x - rate).powi(2) / 2.0).exp();
        if rng.random::<f64>() <= accept && x > lower {
            return x;
        }
    }
}

/// Draws from `N(mean, sd^2)` restricted to `(0, inf)` when `positive`,
/// otherwise to `(-inf, 0]`. The result always lies in the requested half
/// line.
#[inline]
pub fn sample_signed<R: Rng + ?Sized>(mean: f64, sd: f64, positive: bool, rng: &mut R) -> f64 {
    loop {
        let z = if positive {
            mean + sd * std_normal_above(-mean / sd, rng)
        } else {
            mean - sd * std_normal_above(mean / sd, rng)
        };
        if (positive && z > 0.0) || (!positive && z <= 0.0) {
            return z;
        }
        // rounding in mean + sd * x pushed the draw across zero; redraw
    }
}

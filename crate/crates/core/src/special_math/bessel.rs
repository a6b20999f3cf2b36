//! Bessel functions of the first kind for non-negative integer order.
//!
//! Three regimes: the power series for small arguments, Miller's backward
//! recurrence (normalized by `J0 + 2 sum J_2k = 1`) for moderate arguments,
//! and the Hankel asymptotic expansion followed by upward recurrence for
//! large arguments.

use crate::error::{Error, Result};

/// Largest order accepted by [`bessel_j`].
pub const MAX_BESSEL_ORDER: u32 = 32;

const SERIES_LIMIT: f64 = 5.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

/// `J_order(x)` for `x >= 0`.
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    if order > MAX_BESSEL_ORDER {
        return Err(Error::param(
            "order",
            format!("{order} exceeds the supported maximum {MAX_BESSEL_ORDER}"),
        ));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::param("x", format!("must be finite and non-negative, got {x}")));
    }
    Ok(bessel_pair(order, x).0)
}

/// `(J_n(x), J_{n+1}(x))` without argument validation.
///
/// Callers must pass a finite `x >= 0`.
pub fn bessel_pair(n: u32, x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (if n == 0 { 1.0 } else { 0.0 }, 0.0);
    }
    if x < SERIES_LIMIT {
        (series(n, x), series(n + 1, x))
    } else if x < ASYMPTOTIC_LIMIT || f64::from(n + 1) >= x {
        miller_pair(n, x)
    } else {
        let mut lo = hankel_asymptotic(0.0, x);
        let mut hi = hankel_asymptotic(1.0, x);
        for k in 1..=n {
            let next = 2.0 * f64::from(k) / x * hi - lo;
            lo = hi;
            hi = next;
        }
        (lo, hi)
    }
}

fn series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / f64::from(k);
    }
    let q = -half * half;
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + f64::from(n)));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() || term == 0.0 {
            break;
        }
        k += 1.0;
    }
    sum
}

fn miller_pair(n: u32, x: f64) -> (f64, f64) {
    const BIG: f64 = 1e250;
    const SMALL: f64 = 1e-250;

    let base = f64::from(n + 1).max(x.ceil());
    let mut m = (base + 20.0 + (40.0 * base).sqrt()) as u32;
    m += m % 2;

    let two_over_x = 2.0 / x;
    let mut above = 0.0; // J_{k+1}
    let mut cur = 1e-30; // J_k
    let mut sum = 0.0;
    let mut jn = 0.0;
    let mut jn1 = 0.0;
    if m == n + 1 {
        jn1 = cur;
    }
    for k in (1..=m).rev() {
        let below = f64::from(k) * two_over_x * cur - above;
        above = cur;
        cur = below;
        let idx = k - 1;
        if idx == n + 1 {
            jn1 = cur;
        } else if idx == n {
            jn = cur;
        }
        if idx > 0 && idx % 2 == 0 {
            sum += 2.0 * cur;
        }
        if cur.abs() > BIG {
            cur *= SMALL;
            above *= SMALL;
            sum *= SMALL;
            jn *= SMALL;
            jn1 *= SMALL;
        }
    }
    sum += cur;
    (jn / sum, jn1 / sum)
}

fn hankel_asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term: f64 = 1.0;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut last = f64::INFINITY;
    for k in 1..200u32 {
        let odd = f64::from(2 * k - 1);
        term *= (mu - odd * odd) / (8.0 * f64::from(k) * x);
        let size = term.abs();
        if size >= last {
            break;
        }
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if size < 1e-17 {
            break;
        }
        last = size;
    }
    let chi = x - (0.5 * nu + 0.25) * std::f64::consts::PI;
    let (s, c) = chi.sin_cos();
    (2.0 / (std::f64::consts::PI * x)).sqrt() * (p * c - q * s)
}

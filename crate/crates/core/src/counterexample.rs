//! Gaussian-band counterexample: pasting martingale kernels with growing
//! volatilities produces a measure with infinite first absolute moment.
//!
//! The band integral uses the normalized outer variable `y ~ N(0, 1)` with
//! `omega_t = sqrt(t) y`, so that
//!
//! ```text
//! f_i(sigma) = sigma * int_{E_i} gam(sqrt(t) y / sigma) phi(y) dy
//!            = 2 sigma * int_{i/sqrt(t)}^{(i+1)/sqrt(t)} gam(sqrt(t) y / sigma) phi(y) dy
//! ```
//!
//! where `gam(m) = E|Z + m|` and the second line uses that `gam` is even.

use serde::Serialize;
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::quadrature::integrate;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const MAX_BANDS: usize = 50;
const BISECTION_STEPS: usize = 40;
const WALK_CAP: usize = 200;

fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `E|Z + m|` for a standard normal `Z`.
pub fn gaussian_abs_mean(m: f64) -> f64 {
    m * erf(m / std::f64::consts::SQRT_2) + 2.0 * pdf(m)
}

/// Probability that `|omega_t|` falls in `[i, i+1)`.
pub fn band_mass(i: usize, t: f64) -> f64 {
    let s = (2.0 * t).sqrt();
    erfc(i as f64 / s) - erfc((i + 1) as f64 / s)
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Numerical(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

/// `f_i(sigma)` by adaptive quadrature over the band.
pub fn f_band(i: usize, sigma: f64, t: f64) -> Result<f64> {
    check_positive("sigma", sigma)?;
    check_positive("t", t)?;
    let rt = t.sqrt();
    let a = i as f64 / rt;
    let b = (i + 1) as f64 / rt;
    // factor out phi(a) so far bands keep full relative precision
    let scaled = integrate(
        |y| gaussian_abs_mean(rt * y / sigma) * (-0.5 * (y - a) * (y + a)).exp(),
        a,
        b,
        1e-300,
        1e-13,
    )?;
    Ok(2.0 * sigma * pdf(a) * scaled)
}

/// Smallest power of two with `f_i >= target`, refined by bisection.
pub fn choose_sigma(i: usize, t: f64, target: f64) -> Result<f64> {
    check_positive("target", target)?;
    check_positive("t", t)?;
    let w = band_mass(i, t);
    if !(w > 0.0) {
        return Err(Error::Numerical(format!("band {i} has no representable mass at t = {t}")));
    }
    // f_i(sigma) >= sigma sqrt(2/pi) w_i, so this power of two already suffices
    let mut k = (target / (SQRT_2_OVER_PI * w)).log2().ceil() as i32;
    let mut steps = 0;
    while f_band(i, 2f64.powi(k - 1), t)? >= target {
        k -= 1;
        steps += 1;
        if steps > WALK_CAP {
            return Err(Error::Numerical(format!(
                "no sigma bracket for band {i}: f stays above the target"
            )));
        }
    }
    let (mut lo, mut hi) = (2f64.powi(k - 1), 2f64.powi(k));
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f_band(i, mid, t)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub i: usize,
    pub sigma_i: f64,
    pub f_i: f64,
    pub partial_sum: f64,
}

/// Partial sums of `f_i(sigma_i)` for `i < n`.
pub fn divergence_demo(n: usize, t: f64) -> Result<Vec<DivergenceRow>> {
    if n > MAX_BANDS {
        return Err(Error::Numerical(format!("at most {MAX_BANDS} bands, got {n}")));
    }
    let mut rows = Vec::with_capacity(n);
    let mut sum = 0.0;
    for i in 0..n {
        let sigma = choose_sigma(i, t, 1.0)?;
        let f = f_band(i, sigma, t)?;
        sum += f;
        rows.push(DivergenceRow {
            i,
            sigma_i: sigma,
            f_i: f,
            partial_sum: sum,
        });
    }
    Ok(rows)
}

/// `(|x| min k) * ramp`, with the ramp rising from 0 at `|x| = n` to 1 at `|x| = n + l`.
pub fn phi_trunc(x: f64, n: f64, k: f64, l: f64) -> Result<f64> {
    check_positive("K", k)?;
    check_positive("l", l)?;
    if !(n >= 0.0) {
        return Err(Error::Numerical(format!("level must be nonnegative, got {n}")));
    }
    let a = x.abs();
    // same as ((a - n)^+ - (a - n - l)^+) / l, but monotone under rounding
    let ramp = ((a - n) / l).clamp(0.0, 1.0);
    Ok(a.min(k) * ramp)
}

/// `|x| 1{|x| > n}`, the monotone limit of [`phi_trunc`].
pub fn phi_limit(x: f64, n: f64) -> f64 {
    if x.abs() > n {
        x.abs()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiSweepRow {
    pub x: f64,
    pub k: u32,
    pub cap: f64,
    pub width: f64,
    pub phi: f64,
    pub limit: f64,
    pub error: f64,
}

/// `phi_{2^k, 2^-k}(x)` for `k = 0..=max_k` at `x` in `{n-1, n, n+1e-6, n+5}`.
pub fn phi_sweep(n: f64, max_k: u32) -> Result<Vec<PhiSweepRow>> {
    let mut rows = Vec::new();
    for x in [n - 1.0, n, n + 1e-6, n + 5.0] {
        for k in 0..=max_k {
            let cap = 2f64.powi(k as i32);
            let width = 2f64.powi(-(k as i32));
            let phi = phi_trunc(x, n, cap, width)?;
            let limit = phi_limit(x, n);
            rows.push(PhiSweepRow {
                x,
                k,
                cap,
                width,
                phi,
                limit,
                error: (phi - limit).abs(),
            });
        }
    }
    Ok(rows)
}

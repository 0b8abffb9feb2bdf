//! Moments accountant for the sub-sampled Gaussian mechanism.
//!
//! For sampling ratio `q` and noise multiplier `z`, let `mu0 = N(0, z^2)`,
//! `mu1 = N(1, z^2)` and `mu = (1 - q) mu0 + q mu1`. The log-moment of order
//! `lambda` is `log max(E1, E2)` with
//!
//! ```text
//! E1 = E_{x ~ mu0} [(mu0(x) / mu(x))^lambda]
//! E2 = E_{x ~ mu } [(mu(x) / mu0(x))^lambda]
//! ```
//!
//! Log-moments add up across rounds, and the probability that `eps`-DP is
//! broken is bounded by `min_lambda exp(alpha(lambda) - lambda eps)`.
//!
//! Both expectations are integrated with composite Simpson's rule on a uniform
//! grid. The integrands are evaluated and summed in log space, so moments far
//! beyond the range of `f64` (small `z`, large `lambda`) are still finite.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math::log_add_exp;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA_MAX: u32 = 32;

/// Number of Simpson intervals used by [`log_moment`].
pub const QUADRATURE_INTERVALS: usize = 1 << 17;

/// `sqrt(2 ln 1e16)`: a Gaussian tail beyond this many standard deviations
/// holds less than 1e-16 of the mass.
fn tail_sigmas() -> f64 {
    libm::sqrt(2.0 * libm::log(1e16))
}

fn validate(q: f64, z: f64, lambda: u32) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(alloc::format!(
            "sampling ratio must lie in [0, 1], got {q}"
        )));
    }
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::Config(alloc::format!(
            "noise multiplier must be finite and non-negative, got {z}"
        )));
    }
    if lambda == 0 {
        return Err(Error::Config("moment order must be at least 1".into()));
    }
    Ok(())
}

/// Streaming log-sum-exp accumulator.
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled = self.scaled * libm::exp(self.max - v) + 1.0;
            self.max = v;
        } else {
            self.scaled += libm::exp(v - self.max);
        }
    }

    fn value(&self) -> f64 {
        self.max + libm::log(self.scaled)
    }
}

/// Log-moment of order `lambda` for sampling ratio `q` and noise multiplier `z`.
///
/// Returns `0` for `q = 0` and `+inf` for `z = 0` with `q > 0`.
pub fn log_moment(q: f64, z: f64, lambda: u32) -> Result<f64> {
    log_moment_with_intervals(q, z, lambda, QUADRATURE_INTERVALS)
}

/// [`log_moment`] with an explicit (even) number of Simpson intervals.
pub fn log_moment_with_intervals(q: f64, z: f64, lambda: u32, intervals: usize) -> Result<f64> {
    validate(q, z, lambda)?;
    if intervals < 2 || intervals % 2 != 0 {
        return Err(Error::Config(alloc::format!(
            "Simpson's rule needs a positive even interval count, got {intervals}"
        )));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if z == 0.0 {
        return Ok(f64::INFINITY);
    }
    let overflow = |detail| Error::Overflow {
        q,
        z,
        lambda,
        detail,
    };

    let lam = f64::from(lambda);
    let half_width = lam + 4.0 * z * tail_sigmas();
    let h = 2.0 * half_width / intervals as f64;
    let inv_two_var = 1.0 / (2.0 * z * z);
    if !inv_two_var.is_finite() {
        return Err(overflow("1 / (2 z^2) is not finite"));
    }
    let log_norm = -libm::log(z) - 0.5 * libm::log(2.0 * PI);
    let log_q = libm::log(q);
    let log_keep = libm::log1p(-q);
    let (ln4, ln2) = (libm::log(4.0), libm::log(2.0));

    let mut first = LogSum::new();
    let mut second = LogSum::new();
    for i in 0..=intervals {
        let x = -half_width + i as f64 * h;
        let log_weight = if i == 0 || i == intervals {
            0.0
        } else if i % 2 == 1 {
            ln4
        } else {
            ln2
        };
        let log_mu0 = log_norm - x * x * inv_two_var;
        let log_mu1 = log_norm - (x - 1.0) * (x - 1.0) * inv_two_var;
        let log_mu = log_add_exp(log_keep + log_mu0, log_q + log_mu1);
        first.add(log_weight + (lam + 1.0) * log_mu0 - lam * log_mu);
        second.add(log_weight + (lam + 1.0) * log_mu - lam * log_mu0);
    }
    let log_step = libm::log(h / 3.0);
    let alpha = f64::max(first.value(), second.value()) + log_step;
    if alpha.is_nan() || alpha == f64::INFINITY {
        return Err(overflow("integrand is not finite"));
    }
    Ok(alpha.max(0.0))
}

/// Log-moments for orders `1..=lambda_max`.
pub fn log_moments(q: f64, z: f64, lambda_max: u32) -> Result<Vec<f64>> {
    (1..=lambda_max).map(|l| log_moment(q, z, l)).collect()
}

/// Composes per-round log-moments and converts them to `delta` at a fixed
/// `epsilon`.
///
/// Exactly one owner mutates an accountant; reading `delta` between charges
/// is always allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsAccountant {
    epsilon: f64,
    log_moments: Vec<f64>,
    rounds: u32,
    /// Per-round log-moment vectors already computed, keyed by the bit
    /// patterns of `(q, z)`.
    cache: Vec<((u64, u64), Vec<f64>)>,
}

impl MomentsAccountant {
    pub fn new(epsilon: f64, lambda_max: u32) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(alloc::format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if lambda_max == 0 {
            return Err(Error::Config("lambda_max must be at least 1".into()));
        }
        Ok(Self {
            epsilon,
            log_moments: alloc::vec![0.0; lambda_max as usize],
            rounds: 0,
            cache: Vec::new(),
        })
    }

    /// Rebuilds an accountant from stored state.
    pub fn from_parts(epsilon: f64, log_moments: Vec<f64>, rounds: u32) -> Result<Self> {
        let mut acct = Self::new(epsilon, log_moments.len() as u32)?;
        if log_moments.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Data("log-moments must be non-negative".into()));
        }
        acct.log_moments = log_moments;
        acct.rounds = rounds;
        Ok(acct)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda_max(&self) -> u32 {
        self.log_moments.len() as u32
    }

    /// Cumulative log-moments; entry `i` belongs to order `i + 1`.
    pub fn log_moments(&self) -> &[f64] {
        &self.log_moments
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    fn round_moments(&mut self, q: f64, z: f64) -> Result<Vec<f64>> {
        let key = (q.to_bits(), z.to_bits());
        if let Some((_, m)) = self.cache.iter().find(|(k, _)| *k == key) {
            return Ok(m.clone());
        }
        let m = log_moments(q, z, self.lambda_max())?;
        self.cache.push((key, m.clone()));
        Ok(m)
    }

    /// Charges one round of the sub-sampled Gaussian mechanism.
    pub fn accumulate(&mut self, q: f64, z: f64) -> Result<()> {
        let round = self.round_moments(q, z)?;
        for (total, a) in self.log_moments.iter_mut().zip(round) {
            *total += a;
        }
        self.rounds += 1;
        Ok(())
    }

    /// A copy of the accountant with one more round charged.
    pub fn charged(&self, q: f64, z: f64) -> Result<Self> {
        let mut next = self.clone();
        next.accumulate(q, z)?;
        Ok(next)
    }

    /// `min_lambda exp(alpha(lambda) - lambda eps)`, clamped to `[0, 1]`.
    pub fn delta(&self, epsilon: f64) -> f64 {
        let log_delta = self
            .log_moments
            .iter()
            .zip(1u32..)
            .map(|(&a, l)| a - f64::from(l) * epsilon)
            .fold(f64::INFINITY, f64::min);
        libm::exp(log_delta).clamp(0.0, 1.0)
    }

    /// `delta` at the accountant's own target epsilon.
    pub fn current_delta(&self) -> f64 {
        self.delta(self.epsilon)
    }
}

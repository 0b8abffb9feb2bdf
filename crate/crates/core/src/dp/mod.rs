//! Differential-privacy primitives for client-level aggregation.
//!
//! A round's aggregate is a Gaussian mechanism applied to the sum of client
//! updates, each scaled down to an L2 norm of at most `S`:
//!
//! ```text
//! w_{t+1} = w_t + (sum_k clip(dw_k, S) + N(0, sigma^2 S^2 I)) / m_t
//! ```
//!
//! `S` is the median of the unclipped update norms of the sampled clients.
//! That median is computed on the true norms and is not itself privatized, so
//! it leaks a small amount of information outside the accountant's bound.

mod accountant;

use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::l2_norm;
use crate::{Error, Result};

pub use accountant::{
    log_moment, log_moment_with_intervals, log_moments, MomentsAccountant, DEFAULT_LAMBDA_MAX,
    QUADRATURE_INTERVALS,
};

/// A client's model delta `w_k - w_t` together with its L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub delta: Vec<f64>,
    pub norm: f64,
}

impl ClientUpdate {
    pub fn new(delta: Vec<f64>) -> Self {
        let norm = l2_norm(&delta);
        Self { delta, norm }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

fn check_bound(clip_bound: f64) -> Result<()> {
    if clip_bound > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!(
            "clipping bound must be positive, got {clip_bound}"
        )))
    }
}

#[inline]
fn clip_factor(norm: f64, clip_bound: f64) -> f64 {
    f64::max(1.0, norm / clip_bound)
}

/// `delta / max(1, norm / S)`: unchanged when the norm is within the bound,
/// otherwise rescaled onto the sphere of radius `S`.
pub fn clip_update(update: &ClientUpdate, clip_bound: f64) -> Result<Vec<f64>> {
    check_bound(clip_bound)?;
    let factor = clip_factor(update.norm, clip_bound);
    Ok(update.delta.iter().map(|&x| x / factor).collect())
}

/// Median of the update norms; the mean of the two middle values for an even
/// count. A zero result means every sampled update was zero, which the caller
/// must treat as a degenerate round.
pub fn median_norm(norms: &[f64]) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::Protocol("median of an empty set of norms"));
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Sums the deltas in the given order, dividing each by its clip factor when
/// a bound is supplied.
fn sum_updates<U: Borrow<ClientUpdate>>(
    updates: &[U],
    clip_bound: Option<f64>,
) -> Result<Vec<f64>> {
    let first = updates
        .first()
        .ok_or(Error::Protocol("aggregation over zero updates"))?;
    let dim = first.borrow().len();
    let mut acc = vec![0.0; dim];
    for u in updates {
        let u = u.borrow();
        if u.len() != dim {
            return Err(Error::Shape {
                what: "client update",
                expected: dim,
                actual: u.len(),
            });
        }
        match clip_bound {
            Some(s) => {
                let factor = clip_factor(u.norm, s);
                for (a, &x) in acc.iter_mut().zip(&u.delta) {
                    *a += x / factor;
                }
            }
            None => {
                for (a, &x) in acc.iter_mut().zip(&u.delta) {
                    *a += x;
                }
            }
        }
    }
    Ok(acc)
}

fn divide(mut acc: Vec<f64>, m: usize) -> Vec<f64> {
    let m = m as f64;
    for a in &mut acc {
        *a /= m;
    }
    acc
}

/// Plain arithmetic mean of the deltas (the non-private FedAvg aggregate).
pub fn mean_update<U: Borrow<ClientUpdate>>(updates: &[U]) -> Result<Vec<f64>> {
    Ok(divide(sum_updates(updates, None)?, updates.len()))
}

/// Gaussian-mechanism average: `(sum_k clip(dw_k, S) + n) / m` where every
/// coordinate of `n` is drawn independently from `N(0, (sigma S)^2)`.
///
/// No noise is drawn (and the generator is left untouched) when `sigma` is 0.
pub fn dp_average<U, R>(updates: &[U], clip_bound: f64, sigma: f64, rng: &mut R) -> Result<Vec<f64>>
where
    U: Borrow<ClientUpdate>,
    R: Rng + ?Sized,
{
    check_bound(clip_bound)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(alloc::format!(
            "noise multiplier must be finite and non-negative, got {sigma}"
        )));
    }
    let mut acc = sum_updates(updates, Some(clip_bound))?;
    if sigma > 0.0 {
        let std = sigma * clip_bound;
        for a in &mut acc {
            let n: f64 = rng.sample(StandardNormal);
            *a += std * n;
        }
    }
    Ok(divide(acc, updates.len()))
}

/// Single-query Gaussian mechanism bound `delta <= 0.8 exp(-(sigma eps)^2 / 2)`.
pub fn single_query_delta_bound(sigma: f64, epsilon: f64) -> f64 {
    let s = sigma * epsilon;
    (0.8 * libm::exp(-s * s / 2.0)).clamp(0.0, 1.0)
}

//! Per-round metrics, including the between-clients variance `V_c` and the
//! update scale `U_s` of the participating clients' updates.
//!
//! With `mu_j` the mean over clients of coordinate `j` and `P` the number of
//! coordinates:
//!
//! ```text
//! V_c = (1/P) sum_j (1/m) sum_k (dw_k[j] - mu_j)^2
//! U_s = (1/P) sum_j mu_j^2
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// What happened in one executed communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    /// Test accuracy of the model after this round; `None` when the round was
    /// not evaluated.
    pub accuracy: Option<f64>,
    /// Accountant delta after charging this round; `None` without DP.
    pub delta: Option<f64>,
    /// Clipping bound `S`; `None` without DP.
    pub clip_bound: Option<f64>,
    pub v_c: f64,
    pub u_s: f64,
    pub m_t: usize,
    /// Noise multiplier; `None` without DP.
    pub sigma_t: Option<f64>,
    pub cc_cumulative: u64,
    /// Every sampled update was zero, so the model was left unchanged.
    pub degenerate: bool,
}

fn coordinate_means<V: AsRef<[f64]>>(updates: &[V]) -> Result<Vec<f64>> {
    let first = updates
        .first()
        .ok_or(Error::Protocol("statistics over zero updates"))?;
    let dim = first.as_ref().len();
    let mut mean = vec![0.0; dim];
    for u in updates {
        let u = u.as_ref();
        if u.len() != dim {
            return Err(Error::Shape {
                what: "update",
                expected: dim,
                actual: u.len(),
            });
        }
        for (m, &x) in mean.iter_mut().zip(u) {
            *m += x;
        }
    }
    let n = updates.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// Population variance per coordinate, averaged over coordinates.
pub fn between_clients_variance<V: AsRef<[f64]>>(updates: &[V]) -> Result<f64> {
    let mean = coordinate_means(updates)?;
    if mean.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for u in updates {
        for (&x, &m) in u.as_ref().iter().zip(&mean) {
            total += (x - m) * (x - m);
        }
    }
    Ok(total / (updates.len() as f64 * mean.len() as f64))
}

/// Squared coordinate mean, averaged over coordinates.
pub fn update_scale<V: AsRef<[f64]>>(updates: &[V]) -> Result<f64> {
    let mean = coordinate_means(updates)?;
    if mean.is_empty() {
        return Ok(0.0);
    }
    Ok(mean.iter().map(|m| m * m).sum::<f64>() / mean.len() as f64)
}

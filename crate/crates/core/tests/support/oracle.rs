//! Independent reference computations used by the test suites.
//!
//! Nothing here calls into the crate's quadrature or backpropagation code.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Neumaier-compensated running sum.
#[derive(Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `ln(1 - q + q r)` given `ln r`, stable for very large or small `r`.
fn ln_mixture_ratio(q: f64, ln_r: f64) -> f64 {
    if q >= 1.0 {
        return ln_r;
    }
    let a = (1.0 - q).ln();
    let b = q.ln() + ln_r;
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Reference log-moment: Simpson's rule on a grid ten times finer than the
/// production default, on a wider window, with the integrands written as
/// `mu0 * (1 - q + q r)^p` (`r = mu1 / mu0`) and a compensated linear-space
/// sum after shifting by the largest term.
pub fn refined_log_moment(q: f64, z: f64, lambda: u32) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    let lam = f64::from(lambda);
    let intervals: usize = 10 << 17;
    let half = lam + 1.0 + 40.0 * z;
    let h = 2.0 * half / intervals as f64;
    let ln_norm = -(z * (2.0 * PI).sqrt()).ln();

    let mut e1 = Vec::with_capacity(intervals + 1);
    let mut e2 = Vec::with_capacity(intervals + 1);
    for i in 0..=intervals {
        let x = -half + h * i as f64;
        let ln_mu0 = ln_norm - x * x / (2.0 * z * z);
        let ln_r = (2.0 * x - 1.0) / (2.0 * z * z);
        let ln_mix = ln_mixture_ratio(q, ln_r);
        // E2 = E_mu0[(mu / mu0)^(lambda + 1)], E1 = E_mu0[(mu0 / mu)^lambda].
        e2.push(ln_mu0 + (lam + 1.0) * ln_mix);
        e1.push(ln_mu0 - lam * ln_mix);
    }
    let simpson_ln = |vals: &[f64]| {
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = CompensatedSum::default();
        for (i, v) in vals.iter().enumerate() {
            let w = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc.add(w * (v - max).exp());
        }
        max + (acc.total() * h / 3.0).ln()
    };
    simpson_ln(&e1).max(simpson_ln(&e2)).max(0.0)
}

/// `ln E2` for integer orders from the binomial expansion
/// `sum_k C(l+1, k) q^k (1-q)^(l+1-k) exp(k (k-1) / (2 z^2))`.
pub fn binomial_log_e2(q: f64, z: f64, lambda: u32) -> f64 {
    let n = lambda + 1;
    let mut terms = Vec::new();
    let mut ln_choose = 0.0f64;
    for k in 0..=n {
        if k > 0 {
            ln_choose += (f64::from(n - k + 1)).ln() - f64::from(k).ln();
        }
        let kf = f64::from(k);
        let ln_q_part = if k == 0 { 0.0 } else { kf * q.ln() };
        let ln_keep_part = if k == n {
            0.0
        } else {
            f64::from(n - k) * (1.0 - q).ln()
        };
        terms.push(ln_choose + ln_q_part + ln_keep_part + kf * (kf - 1.0) / (2.0 * z * z));
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Mean softmax cross-entropy of a ReLU MLP, evaluated directly from the
/// layer formula with freshly allocated vectors.
pub fn mlp_loss(arch: &[usize], params: &[f64], features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let mut act = x.clone();
        let mut offset = 0;
        for (l, pair) in arch.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next: Vec<f64> = (0..n_out)
                .map(|j| b[j] + (0..n_in).map(|i| act[i] * w[i * n_out + j]).sum::<f64>())
                .collect();
            if l + 2 < arch.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = next;
        }
        let max = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + act.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - act[y];
    }
    total / labels.len() as f64
}

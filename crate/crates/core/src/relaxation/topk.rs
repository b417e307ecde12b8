//! Gumbel keys and the successive-softmax relaxed top-K.

use rand::Rng;

use crate::error::{Error, Result};

/// Floor applied to `1 - p` before taking the log in the successive-softmax update.
pub const LOG_FLOOR: f64 = 1e-12;

/// Standard Gumbel noise `-ln(-ln u)` for a uniform draw.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Draws `n` Gumbel variates with `u` strictly inside `(0, 1)`.
pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random();
            while u <= 0.0 {
                u = rng.random();
            }
            gumbel_from_uniform(u)
        })
        .collect()
}

/// Perturbed keys `r_j = -ln(-ln u_j) + ln w_j`.
pub fn gumbel_keys<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<f64> {
    let noise = gumbel_noise(weights.len(), rng);
    keys_with_noise(weights, &noise)
}

pub fn keys_with_noise(weights: &[f64], noise: &[f64]) -> Vec<f64> {
    weights.iter().zip(noise).map(|(w, g)| g + w.ln()).collect()
}

fn softmax_scaled(s: &[f64], tau: f64) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| ((x - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Forward pass of the relaxed top-K, keeping what the backward pass needs.
#[derive(Debug, Clone)]
pub struct RelaxedTopK {
    tau: f64,
    /// Softmax output of each round.
    rounds: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl RelaxedTopK {
    pub fn forward(keys: &[f64], k: usize, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Numerical(format!("temperature {tau} must be positive")));
        }
        if k > keys.len() {
            return Err(Error::Numerical(format!("subset size {k} exceeds {} keys", keys.len())));
        }
        if keys.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite relaxed top-k key".into()));
        }
        let mut s = keys.to_vec();
        let mut rounds = Vec::with_capacity(k);
        let mut output = vec![0.0; keys.len()];
        for r in 0..k {
            let p = softmax_scaled(&s, tau);
            for (o, pj) in output.iter_mut().zip(&p) {
                *o += pj;
            }
            if r + 1 < k {
                for (sj, pj) in s.iter_mut().zip(&p) {
                    *sj += (1.0 - pj).max(LOG_FLOOR).ln();
                }
            }
            rounds.push(p);
        }
        Ok(RelaxedTopK { tau, rounds, output })
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }

    /// Pulls `∂L/∂output` back to `∂L/∂keys`.
    pub fn backward(&self, grad_output: &[f64]) -> Vec<f64> {
        let n = grad_output.len();
        // Adjoint of the round-(r+1) scores, flowing into round r.
        let mut grad_s_next = vec![0.0; n];
        for (r, p) in self.rounds.iter().enumerate().rev() {
            let last = r + 1 == self.rounds.len();
            let mut grad_p = grad_output.to_vec();
            if !last {
                for j in 0..n {
                    let one_minus = 1.0 - p[j];
                    if one_minus > LOG_FLOOR {
                        grad_p[j] -= grad_s_next[j] / one_minus;
                    }
                }
            }
            let dot: f64 = grad_p.iter().zip(p).map(|(g, pj)| g * pj).sum();
            let mut grad_s = if last { vec![0.0; n] } else { grad_s_next.clone() };
            for j in 0..n {
                grad_s[j] += p[j] * (grad_p[j] - dot) / self.tau;
            }
            grad_s_next = grad_s;
        }
        grad_s_next
    }
}

/// Relaxed K-hot vector of `keys` at temperature `tau`; entries sum to `k`.
pub fn relaxed_top_k(keys: &[f64], k: usize, tau: f64) -> Result<Vec<f64>> {
    RelaxedTopK::forward(keys, k, tau).map(RelaxedTopK::into_output)
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

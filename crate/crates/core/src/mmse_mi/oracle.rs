use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::{MiResult, ScaledInput};
use crate::error::{Error, Result};

/// Monte-Carlo estimate of `I(x1,x2;y)` with its standard error (bits).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub mi: MiResult,
    pub std_error_bits: f64,
}

fn draw_index(rng: &mut ChaCha20Rng, cumulative: &[f64]) -> usize {
    let u: f64 = rng.gen();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Averages `log f(y|x1,x2) - log f(y)` over `n_samples` draws of
/// `(x1, x2, w)`. Both inputs must be finite alphabets.
pub fn mc_oracle_mi(
    s1: &ScaledInput,
    s2: &ScaledInput,
    n_samples: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    let (c1, c2) = match (s1.input.as_finite(), s2.input.as_finite()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(
                "Monte-Carlo oracle requires finite alphabets".into(),
            ))
        }
    };
    if n_samples < 2 {
        return Err(Error::InvalidArgument("oracle needs at least 2 samples".into()));
    }
    let (g1, g2) = (s1.gain(), s2.gain());
    let mut comps: Vec<(Complex64, f64, f64)> = Vec::new();
    for p in c1.points() {
        for q in c2.points() {
            let prior = p.prior * q.prior;
            if prior > 0.0 {
                comps.push((g1 * p.value + g2 * q.value, prior, prior.ln()));
            }
        }
    }
    let mut acc = 0.0;
    let mut cumulative = Vec::with_capacity(comps.len());
    for c in &comps {
        acc += c.1;
        cumulative.push(acc);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut exps = vec![0.0; comps.len()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let k = draw_index(&mut rng, &cumulative);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let w = Complex64::new(re, im) * scale;
        let y = comps[k].0 + w;
        let mut top = f64::NEG_INFINITY;
        for (e, c) in exps.iter_mut().zip(&comps) {
            *e = c.2 - (y - c.0).norm_sqr();
            top = top.max(*e);
        }
        let lse = top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
        let v = -w.norm_sqr() - lse;
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(OracleEstimate {
        mi: MiResult::from_nats(mean),
        std_error_bits: (var / n).sqrt() / std::f64::consts::LN_2,
    })
}

//! Block-fading Rician channel model and the weighted fading ensemble over
//! which every expectation is taken.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receiver noise variance; the whole model is normalized to it.
pub const NOISE_VARIANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Average power budget P̄ on a linear scale (equal to the SNR since the
    /// noise has unit variance).
    pub avg_power: f64,
    pub bandwidth_hz: f64,
    pub frame_seconds: f64,
}

impl SystemParams {
    pub fn new(avg_power: f64, bandwidth_hz: f64, frame_seconds: f64) -> Result<Self> {
        for (name, v) in [
            ("average power", avg_power),
            ("bandwidth", bandwidth_hz),
            ("frame duration", frame_seconds),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            avg_power,
            bandwidth_hz,
            frame_seconds,
        })
    }

    pub fn from_db(avg_power_db: f64, bandwidth_hz: f64, frame_seconds: f64) -> Result<Self> {
        Self::new(db_to_linear(avg_power_db), bandwidth_hz, frame_seconds)
    }

    /// Symbols per frame, `T·B`.
    pub fn symbols_per_frame(&self) -> f64 {
        self.frame_seconds * self.bandwidth_hz
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicianSpec {
    /// Line-of-sight to scattered power ratio in dB; `-inf` is Rayleigh.
    pub k_factor_db: f64,
    /// `E{|h|²}`.
    pub mean_power: f64,
}

impl RicianSpec {
    pub fn new(k_factor_db: f64, mean_power: f64) -> Result<Self> {
        if !(mean_power > 0.0 && mean_power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mean power must be positive and finite, got {mean_power}"
            )));
        }
        if k_factor_db.is_nan() || k_factor_db == f64::INFINITY {
            return Err(Error::InvalidArgument(format!(
                "K factor must be finite or -inf dB, got {k_factor_db}"
            )));
        }
        Ok(Self {
            k_factor_db,
            mean_power,
        })
    }

    pub fn rayleigh(mean_power: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, mean_power)
    }

    pub fn k_linear(&self) -> f64 {
        if self.k_factor_db == f64::NEG_INFINITY {
            0.0
        } else {
            db_to_linear(self.k_factor_db)
        }
    }

    /// Share of the mean power carried by the line-of-sight component.
    pub fn los_fraction(&self) -> f64 {
        let k = self.k_linear();
        k / (k + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub h1: Complex64,
    pub h2: Complex64,
    pub z1: f64,
    pub z2: f64,
    pub weight: f64,
}

impl ChannelSample {
    pub fn new(h1: Complex64, h2: Complex64, weight: f64) -> Self {
        Self {
            h1,
            h2,
            z1: h1.norm_sqr(),
            z2: h2.norm_sqr(),
            weight,
        }
    }

    pub fn h(&self, user: usize) -> Complex64 {
        if user == 0 {
            self.h1
        } else {
            self.h2
        }
    }

    pub fn z(&self, user: usize) -> f64 {
        if user == 0 {
            self.z1
        } else {
            self.z2
        }
    }

    /// `arg(h2) - arg(h1)`, the phase of transmitter 2 relative to 1.
    pub fn relative_phase(&self) -> f64 {
        (self.h2 * self.h1.conj()).arg()
    }
}

/// Deterministic weighted discretization of the fading space.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingEnsemble {
    samples: Vec<ChannelSample>,
    seed: u64,
    spec1: RicianSpec,
    spec2: RicianSpec,
}

impl FadingEnsemble {
    /// Builds an ensemble from explicit samples; weights are renormalized.
    pub fn from_samples(
        mut samples: Vec<ChannelSample>,
        spec1: RicianSpec,
        spec2: RicianSpec,
        seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one sample".into()));
        }
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        if !(total > 0.0) || samples.iter().any(|s| !(s.weight > 0.0)) {
            return Err(Error::InvalidArgument("sample weights must be positive".into()));
        }
        for s in &mut samples {
            s.weight /= total;
        }
        Ok(Self {
            samples,
            seed,
            spec1,
            spec2,
        })
    }

    pub fn samples(&self) -> &[ChannelSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> (RicianSpec, RicianSpec) {
        (self.spec1, self.spec2)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.weight)
    }

    /// Weighted `q`-quantile (0..=1) of `z_user`.
    pub fn z_quantile(&self, user: usize, q: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.z(user), s.weight)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        for (z, w) in &pairs {
            acc += w;
            if acc >= q {
                return *z;
            }
        }
        pairs.last().map(|p| p.0).unwrap_or(0.0)
    }

    /// CSV: index, re h1, im h1, re h2, im h2, weight.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,re_h1,im_h1,re_h2,im_h2,weight")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(
                out,
                "{i},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                s.h1.re, s.h1.im, s.h2.re, s.h2.im, s.weight
            )?;
        }
        Ok(())
    }
}

fn draw_rician(rng: &mut ChaCha20Rng, spec: &RicianSpec) -> Complex64 {
    let los_phase = rng.gen::<f64>() * 2.0 * PI;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let k = spec.k_linear();
    let los = Complex64::from_polar((spec.mean_power * k / (k + 1.0)).sqrt(), los_phase);
    let scatter = Complex64::new(re, im) * (spec.mean_power / (2.0 * (k + 1.0))).sqrt();
    los + scatter
}

/// Draws `n` independent pairs of Rician coefficients with weight `1/n`.
///
/// Each coefficient gets a uniformly random line-of-sight phase, so the
/// relative phase of the two links is uniform. Every draw consumes the same
/// number of variates regardless of `K`, which keeps ensembles with equal
/// seeds coupled across K values.
pub fn sample_ensemble(
    spec1: RicianSpec,
    spec2: RicianSpec,
    n: usize,
    seed: u64,
) -> Result<FadingEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let weight = 1.0 / n as f64;
    let samples = (0..n)
        .map(|_| {
            let h1 = draw_rician(&mut rng, &spec1);
            let h2 = draw_rician(&mut rng, &spec2);
            ChannelSample::new(h1, h2, weight)
        })
        .collect();
    Ok(FadingEnsemble {
        samples,
        seed,
        spec1,
        spec2,
    })
}

/// `e^{-x} I0(x)` for `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x < 25.0 {
        // Power series; every term is positive so there is no cancellation.
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > sum * 1e-17 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        // Asymptotic expansion; terms (2k-1)!!² / (k! 8^k x^k).
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * x);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// Density of `z = |h|²` for Rician fading (noncentral χ² with two degrees
/// of freedom, scaled to `E{z} = mean_power`).
pub fn rician_pdf(z: f64, spec: &RicianSpec) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return Err(Error::InvalidArgument(format!("z must be nonnegative, got {z}")));
    }
    let k = spec.k_linear();
    let omega = spec.mean_power;
    let rate = (k + 1.0) / omega;
    let arg = 2.0 * (k * (k + 1.0) * z / omega).sqrt();
    Ok(rate * (-k - rate * z + arg).exp() * bessel_i0_scaled(arg))
}

/// `Σ weight·f(sample)` over the ensemble.
pub fn expect<F>(ensemble: &FadingEnsemble, f: F) -> Result<f64>
where
    F: Fn(&ChannelSample) -> f64,
{
    let mut acc = 0.0;
    for (i, s) in ensemble.samples().iter().enumerate() {
        let v = f(s);
        if !v.is_finite() {
            return Err(Error::numeric(
                "channel",
                format!("non-finite integrand {v} at sample {i}"),
            ));
        }
        acc += s.weight * v;
    }
    Ok(acc)
}

//! Gaussian-mixture statistics of `y = g1·x1 + g2·x2 + w`.
//!
//! The received signal is a mixture of unit-variance complex Gaussians
//! centred on the composite symbols. Expectations are taken per conditioning
//! symbol with the quadrature rule recentred on that symbol, and all
//! posterior weights are evaluated in the log domain.

use num_complex::Complex64;

use crate::constellation::{Constellation, InputModel};
use crate::quadrature::ComplexRule;

/// Joint statistics for a pair of inputs at fixed gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    /// `I(x1,x2; y)` in nats.
    pub mi_joint: f64,
    /// `E|x_j - x̂_j(y)|²` with the other input unknown.
    pub mmse: [f64; 2],
    /// `E{x̂1(y)·x̂2(y)*}`.
    pub cross: Complex64,
    /// `E{x1·x2*}`.
    pub mean_product: Complex64,
}

impl PairStats {
    /// `E{x1 x2* - x̂1 x̂2*}`.
    pub fn error_correlation(&self) -> Complex64 {
        self.mean_product - self.cross
    }
}

/// Single-input statistics at SNR `|g|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleStats {
    pub mi: f64,
    pub mmse: f64,
}

struct Component {
    center: Complex64,
    prior: f64,
    x1: Complex64,
    x2: Complex64,
}

struct MixtureMoments {
    mi: f64,
    x1_hat_sq: f64,
    x2_hat_sq: f64,
    cross: Complex64,
}

/// Unit direction `u` with every centre on the line `c_0 + u·ℝ`, if one exists.
fn common_direction(comps: &[Component]) -> Option<Complex64> {
    let active: Vec<Complex64> = comps.iter().filter(|c| c.prior > 0.0).map(|c| c.center).collect();
    let origin = *active.first()?;
    let far = active
        .iter()
        .map(|c| *c - origin)
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))?;
    let scale = far.norm();
    if scale == 0.0 {
        return Some(Complex64::new(1.0, 0.0));
    }
    let u = far / scale;
    let collinear = active
        .iter()
        .all(|c| ((*c - origin) * u.conj()).im.abs() <= 1e-12 * scale);
    collinear.then_some(u)
}

fn mixture_moments(comps: &[Component], rule: &ComplexRule) -> MixtureMoments {
    // Collinear centres make the integrand depend on one projection of the
    // noise only, so a dense 1-D rule replaces the tensor rule.
    let line_points: Vec<(Complex64, f64)>;
    let points: &[(Complex64, f64)] = match common_direction(comps) {
        Some(u) => {
            line_points = rule.line().iter().map(|&(t, w)| (u * t, w)).collect();
            &line_points
        }
        None => rule.points(),
    };
    let m = comps.len();
    let mut diff = vec![Complex64::new(0.0, 0.0); m * m];
    let mut base = vec![f64::NEG_INFINITY; m * m];
    for (k, ck) in comps.iter().enumerate() {
        for (l, cl) in comps.iter().enumerate() {
            let d = ck.center - cl.center;
            diff[k * m + l] = d;
            if cl.prior > 0.0 {
                base[k * m + l] = cl.prior.ln() - d.norm_sqr();
            }
        }
    }

    let mut exponents = vec![0.0; m];
    let mut mi = 0.0;
    let mut x1_sq = 0.0;
    let mut x2_sq = 0.0;
    let mut cross = Complex64::new(0.0, 0.0);
    for (k, ck) in comps.iter().enumerate() {
        if ck.prior <= 0.0 {
            continue;
        }
        let row_d = &diff[k * m..(k + 1) * m];
        let row_b = &base[k * m..(k + 1) * m];
        let mut part_mi = 0.0;
        let mut part_x1 = 0.0;
        let mut part_x2 = 0.0;
        let mut part_cross = Complex64::new(0.0, 0.0);
        for &(w, wt) in points {
            let mut top = f64::NEG_INFINITY;
            for l in 0..m {
                let d = row_d[l];
                let a = row_b[l] - 2.0 * (d.re * w.re + d.im * w.im);
                exponents[l] = a;
                if a > top {
                    top = a;
                }
            }
            let mut sum = 0.0;
            let mut e1 = Complex64::new(0.0, 0.0);
            let mut e2 = Complex64::new(0.0, 0.0);
            for (l, c) in comps.iter().enumerate() {
                let e = (exponents[l] - top).exp();
                sum += e;
                e1 += c.x1 * e;
                e2 += c.x2 * e;
            }
            let lse = top + sum.ln();
            let x1_hat = e1 / sum;
            let x2_hat = e2 / sum;
            part_mi -= wt * lse;
            part_x1 += wt * x1_hat.norm_sqr();
            part_x2 += wt * x2_hat.norm_sqr();
            part_cross += x1_hat * x2_hat.conj() * wt;
        }
        mi += ck.prior * part_mi;
        x1_sq += ck.prior * part_x1;
        x2_sq += ck.prior * part_x2;
        cross += part_cross * ck.prior;
    }
    MixtureMoments {
        mi,
        x1_hat_sq: x1_sq,
        x2_hat_sq: x2_sq,
        cross,
    }
}

/// `I(x; y)` and `MMSE(x; y)` for `y = g·x + w`.
pub fn single_stats(c: &Constellation, gain: Complex64, rule: &ComplexRule) -> SingleStats {
    if gain.norm_sqr() == 0.0 {
        return SingleStats {
            mi: 0.0,
            mmse: c.energy() - c.mean().norm_sqr(),
        };
    }
    let comps: Vec<Component> = c
        .points()
        .iter()
        .map(|p| Component {
            center: gain * p.value,
            prior: p.prior,
            x1: p.value,
            x2: Complex64::new(0.0, 0.0),
        })
        .collect();
    let mom = mixture_moments(&comps, rule);
    SingleStats {
        mi: mom.mi.max(0.0),
        mmse: c.energy() - mom.x1_hat_sq,
    }
}

fn finite_pair(
    c1: &Constellation,
    g1: Complex64,
    c2: &Constellation,
    g2: Complex64,
    rule: &ComplexRule,
) -> PairStats {
    let mean_product = c1.mean() * c2.mean().conj();
    let mut comps = Vec::with_capacity(c1.len() * c2.len());
    for p in c1.points() {
        for q in c2.points() {
            comps.push(Component {
                center: g1 * p.value + g2 * q.value,
                prior: p.prior * q.prior,
                x1: p.value,
                x2: q.value,
            });
        }
    }
    let mom = mixture_moments(&comps, rule);
    PairStats {
        mi_joint: mom.mi.max(0.0),
        mmse: [c1.energy() - mom.x1_hat_sq, c2.energy() - mom.x2_hat_sq],
        cross: mom.cross,
        mean_product,
    }
}

/// Gaussian transmitter `gauss` (gain `gg`) together with a finite one.
/// Treating the Gaussian input as extra Gaussian noise makes every quantity
/// a function of the finite input's single-user curve at SNR
/// `|g_f|²/(1+|g_g|²)`.
fn mixed_pair(
    finite: &Constellation,
    gf: Complex64,
    gg: Complex64,
    finite_is_first: bool,
    rule: &ComplexRule,
) -> PairStats {
    let sg = gg.norm_sqr();
    let scale = (1.0 + sg).sqrt();
    let single = single_stats(finite, gf / scale, rule);
    let sf = gf.norm_sqr();
    let mmse_f = single.mmse;
    let mmse_g = 1.0 / (1.0 + sg) + sg * sf * mmse_f / (1.0 + sg).powi(2);
    // E{x_g x_f*} - E{x̂_g x̂_f*} = -g_g* g_f mmse_f / (1 + s_g).
    let c_gf = -(gg.conj() * gf) * (mmse_f / (1.0 + sg));
    let (mmse, c12) = if finite_is_first {
        ([mmse_f, mmse_g], c_gf.conj())
    } else {
        ([mmse_g, mmse_f], c_gf)
    };
    PairStats {
        mi_joint: (1.0 + sg).ln() + single.mi,
        mmse,
        cross: -c12,
        mean_product: Complex64::new(0.0, 0.0),
    }
}

/// Statistics for any combination of finite and Gaussian inputs.
pub fn pair_stats(
    in1: &InputModel,
    g1: Complex64,
    in2: &InputModel,
    g2: Complex64,
    rule: &ComplexRule,
) -> PairStats {
    match (in1, in2) {
        (InputModel::Finite(c1), InputModel::Finite(c2)) => finite_pair(c1, g1, c2, g2, rule),
        (InputModel::GaussianAnalytic, InputModel::GaussianAnalytic) => {
            let s1 = g1.norm_sqr();
            let s2 = g2.norm_sqr();
            let total = 1.0 + s1 + s2;
            PairStats {
                mi_joint: total.ln(),
                mmse: [(1.0 + s2) / total, (1.0 + s1) / total],
                cross: g1.conj() * g2 / total,
                mean_product: Complex64::new(0.0, 0.0),
            }
        }
        (InputModel::Finite(c1), InputModel::GaussianAnalytic) => mixed_pair(c1, g1, g2, true, rule),
        (InputModel::GaussianAnalytic, InputModel::Finite(c2)) => mixed_pair(c2, g2, g1, false, rule),
    }
}

/// Single-user statistics for any input.
pub fn input_stats(input: &InputModel, gain: Complex64, rule: &ComplexRule) -> SingleStats {
    match input {
        InputModel::Finite(c) => single_stats(c, gain, rule),
        InputModel::GaussianAnalytic => {
            let s = gain.norm_sqr();
            SingleStats {
                mi: s.ln_1p(),
                mmse: 1.0 / (1.0 + s),
            }
        }
    }
}

//! Mutual information, MMSE and the power-share derivatives of the two-user
//! channel `y = g1·x1 + g2·x2 + w`, `w ~ CN(0,1)`.
//!
//! Everything is computed in nats; [`MiResult`] carries the bits value for
//! callers that report in bits. Transmitters are indexed `0` and `1`.

mod mixture;
mod model;
mod oracle;
mod table;

use std::io::Write;

use num_complex::Complex64;

use crate::channel::SystemParams;
use crate::constellation::InputModel;
use crate::error::{Error, Result};
use crate::quadrature::{ComplexRule, IntegrationSpec};

pub use mixture::{input_stats, pair_stats, PairStats, SingleStats};
pub use model::{DirectModel, PairEval, RateModel, SNR_FLOOR};
pub use oracle::{mc_oracle_mi, OracleEstimate};
pub use table::{TableSpec, TabulatedModel};

const MODULE: &str = "mmse_mi";

/// Power shares below this are treated as the right limit `α → 0⁺`.
pub const ALPHA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiResult {
    pub nats: f64,
    pub bits: f64,
}

impl MiResult {
    pub fn from_nats(nats: f64) -> Self {
        Self {
            nats,
            bits: nats / std::f64::consts::LN_2,
        }
    }
}

/// One transmitter's input model together with its channel and power share.
/// The effective amplitude multiplying the symbol is `√(α·P̄)·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledInput {
    pub input: InputModel,
    pub h: Complex64,
    pub alpha: f64,
    pub avg_power: f64,
}

impl ScaledInput {
    pub fn new(input: InputModel, h: Complex64, alpha: f64, avg_power: f64) -> Result<Self> {
        if !(h.re.is_finite() && h.im.is_finite()) {
            return Err(Error::InvalidArgument("channel coefficient must be finite".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("power share must be finite and >= 0, got {alpha}")));
        }
        if !(avg_power.is_finite() && avg_power >= 0.0) {
            return Err(Error::InvalidArgument(format!("average power must be finite and >= 0, got {avg_power}")));
        }
        Ok(Self {
            input,
            h,
            alpha,
            avg_power,
        })
    }

    /// Input seen through a fixed amplitude (`α = P̄ = 1`, `h = gain`).
    pub fn from_gain(input: InputModel, gain: Complex64) -> Self {
        Self {
            input,
            h: gain,
            alpha: 1.0,
            avg_power: 1.0,
        }
    }

    pub fn gain(&self) -> Complex64 {
        self.h * (self.alpha * self.avg_power).sqrt()
    }

    pub fn snr(&self) -> f64 {
        self.gain().norm_sqr()
    }

    fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }
}

fn check_user(j: usize) -> Result<usize> {
    if j > 1 {
        return Err(Error::InvalidArgument(format!("transmitter index must be 0 or 1, got {j}")));
    }
    Ok(1 - j)
}

fn check_gain(s: &ScaledInput) -> Result<()> {
    let g = s.gain();
    if g.re.is_finite() && g.im.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(MODULE, "non-finite effective gain"))
    }
}

/// Runs `f` at the requested node count and at a coarser companion rule;
/// the difference is the error estimate.
fn with_error_check<T, F>(quad: &IntegrationSpec, what: &str, f: F) -> Result<T>
where
    F: Fn(&ComplexRule) -> (T, f64),
{
    if quad.nodes < 2 {
        return Err(Error::InvalidArgument("quadrature needs at least 2 nodes".into()));
    }
    let fine = ComplexRule::get(quad.nodes);
    let coarse = ComplexRule::get(quad.companion_nodes());
    let (value, key) = f(&fine);
    let (_, key_coarse) = f(&coarse);
    let err = (key - key_coarse).abs();
    if !err.is_finite() || err > quad.tolerance {
        return Err(Error::numeric(
            MODULE,
            format!("{what}: quadrature error estimate {err:e} exceeds tolerance {:e}", quad.tolerance),
        ));
    }
    Ok(value)
}

fn needs_quadrature(inputs: &[&InputModel]) -> bool {
    inputs.iter().any(|i| !i.is_gaussian())
}

fn single_checked(s: &ScaledInput, quad: &IntegrationSpec) -> Result<SingleStats> {
    check_gain(s)?;
    let g = s.gain();
    if !needs_quadrature(&[&s.input]) {
        return Ok(input_stats(&s.input, g, &ComplexRule::get(1)));
    }
    with_error_check(quad, "single-user information", |rule| {
        let st = input_stats(&s.input, g, rule);
        (st, st.mi)
    })
}

fn pair_checked(s1: &ScaledInput, s2: &ScaledInput, quad: &IntegrationSpec) -> Result<PairStats> {
    check_gain(s1)?;
    check_gain(s2)?;
    let (g1, g2) = (s1.gain(), s2.gain());
    if !needs_quadrature(&[&s1.input, &s2.input]) {
        return Ok(pair_stats(&s1.input, g1, &s2.input, g2, &ComplexRule::get(1)));
    }
    with_error_check(quad, "joint information", |rule| {
        let st = pair_stats(&s1.input, g1, &s2.input, g2, rule);
        (st, st.mi_joint)
    })
}

/// `I(x; y)` for `y = g·x + w`.
pub fn mi_single(s: &ScaledInput, quad: &IntegrationSpec) -> Result<MiResult> {
    Ok(MiResult::from_nats(single_checked(s, quad)?.mi))
}

/// `I(x1, x2; y)`.
pub fn mi_joint(s1: &ScaledInput, s2: &ScaledInput, quad: &IntegrationSpec) -> Result<MiResult> {
    Ok(MiResult::from_nats(pair_checked(s1, s2, quad)?.mi_joint))
}

/// `I(x_j; y)` with the other transmitter's symbol unknown.
pub fn mi_interference(
    j: usize,
    s1: &ScaledInput,
    s2: &ScaledInput,
    quad: &IntegrationSpec,
) -> Result<MiResult> {
    let m = check_user(j)?;
    let joint = pair_checked(s1, s2, quad)?.mi_joint;
    let other = single_checked([s1, s2][m], quad)?.mi;
    let value = joint - other;
    if value < -10.0 * quad.tolerance {
        return Err(Error::numeric(
            MODULE,
            format!("I(x_{};y) evaluated to {value:e} nats", j + 1),
        ));
    }
    Ok(MiResult::from_nats(value.max(0.0)))
}

/// Posterior mean `E{x_j | y}` for finite alphabets.
pub fn conditional_mean(j: usize, s1: &ScaledInput, s2: &ScaledInput, y: Complex64) -> Result<Complex64> {
    check_user(j)?;
    let (c1, c2) = match (s1.input.as_finite(), s2.input.as_finite()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(
                "conditional mean requires finite alphabets".into(),
            ))
        }
    };
    check_gain(s1)?;
    check_gain(s2)?;
    let (g1, g2) = (s1.gain(), s2.gain());
    let mut terms = Vec::with_capacity(c1.len() * c2.len());
    for p in c1.points().iter().filter(|p| p.prior > 0.0) {
        for q in c2.points().iter().filter(|q| q.prior > 0.0) {
            let a = (p.prior * q.prior).ln() - (y - g1 * p.value - g2 * q.value).norm_sqr();
            terms.push((a, if j == 0 { p.value } else { q.value }));
        }
    }
    let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numeric(MODULE, "output density underflow"));
    }
    let mut sum = 0.0;
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, x) in terms {
        let e = (a - top).exp();
        sum += e;
        acc += x * e;
    }
    Ok(acc / sum)
}

/// `E|x_j - x̂_j(y)|²` with the other transmitter's symbol unknown.
pub fn mmse(j: usize, s1: &ScaledInput, s2: &ScaledInput, quad: &IntegrationSpec) -> Result<f64> {
    check_user(j)?;
    let st = pair_checked(s1, s2, quad)?;
    let value = st.mmse[j];
    let energy = match &[&s1.input, &s2.input][j] {
        InputModel::Finite(c) => c.energy(),
        InputModel::GaussianAnalytic => 1.0,
    };
    let tol = quad.tolerance.max(1e-9);
    if !(value >= -tol && value <= energy + tol) {
        return Err(Error::numeric(MODULE, format!("mmse {value} outside [0, {energy}]")));
    }
    Ok(value.clamp(0.0, energy))
}

/// Derivatives of the information terms with respect to `α_j`, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    /// `dI(x_j; y)/dα_j`.
    pub d_own: f64,
    /// `dI(x_j; y_j)/dα_j`.
    pub d_own_clean: f64,
    pub mmse_joint: f64,
    pub mmse_clean: f64,
    /// `Re(h_j h_m* E{x_j x_m* - x̂_j x̂_m*})`.
    pub cross_term: f64,
    /// `dr_m/dα_j = dI(x_j;y)/dα_j - dI(x_j;y_j)/dα_j` when `m` is decoded
    /// after `j` has been cancelled.
    pub d_cross_rate: f64,
    /// Set when `α_j` was below [`ALPHA_FLOOR`] and the cross term was
    /// evaluated at the floor.
    pub right_limit: bool,
}

/// Closed-form derivative of `I(x_j;y)` and `I(x_j;y_j)` in `α_j`, from
/// the MMSE and the error cross-correlation rather than finite differences.
pub fn derivative_report(
    j: usize,
    s1: &ScaledInput,
    s2: &ScaledInput,
    params: &SystemParams,
    quad: &IntegrationSpec,
) -> Result<DerivativeReport> {
    let m = check_user(j)?;
    let pbar = params.avg_power;
    let mut pair = [
        ScaledInput { avg_power: pbar, ..s1.clone() },
        ScaledInput { avg_power: pbar, ..s2.clone() },
    ];
    let right_limit = pair[j].alpha < ALPHA_FLOOR;
    if right_limit {
        pair[j] = pair[j].with_alpha(ALPHA_FLOOR);
    }
    let alpha_j = pair[j].alpha;
    let alpha_m = pair[m].alpha;
    let stats = pair_checked(&pair[0], &pair[1], quad)?;
    let clean = single_checked(&pair[j], quad)?;
    let c12 = stats.error_correlation();
    let c_jm = if j == 0 { c12 } else { c12.conj() };
    let (hj, hm) = (pair[j].h, pair[m].h);
    let cross_term = (hj * hm.conj() * c_jm).re;
    let zj = hj.norm_sqr();
    let d_own = pbar * zj * stats.mmse[j] + pbar * (alpha_m / alpha_j).sqrt() * cross_term;
    let d_own_clean = pbar * zj * clean.mmse;
    if !(d_own.is_finite() && d_own_clean.is_finite()) {
        return Err(Error::numeric(MODULE, "non-finite derivative"));
    }
    Ok(DerivativeReport {
        d_own,
        d_own_clean,
        mmse_joint: stats.mmse[j],
        mmse_clean: clean.mmse,
        cross_term,
        d_cross_rate: d_own - d_own_clean,
        right_limit,
    })
}

/// Writes the per-node integrand of `I(x1,x2;y)` for one configuration:
/// conditioning symbol pair, node, weight and `log f(y|x) - log f(y)`.
pub fn dump_integrand_csv<W: Write>(
    s1: &ScaledInput,
    s2: &ScaledInput,
    quad: &IntegrationSpec,
    mut out: W,
) -> Result<()> {
    let (c1, c2) = match (s1.input.as_finite(), s2.input.as_finite()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(
                "integrand dump requires finite alphabets".into(),
            ))
        }
    };
    let (g1, g2) = (s1.gain(), s2.gain());
    let rule = ComplexRule::get(quad.nodes);
    let mut comps = Vec::new();
    for (a, p) in c1.points().iter().enumerate() {
        for (b, q) in c2.points().iter().enumerate() {
            comps.push((a, b, g1 * p.value + g2 * q.value, p.prior * q.prior));
        }
    }
    writeln!(out, "symbol1,symbol2,re_w,im_w,weight,log_ratio")?;
    for &(a, b, center, prior) in &comps {
        if prior <= 0.0 {
            continue;
        }
        for (w, wt) in rule.iter() {
            let y = center + w;
            let exps: Vec<f64> = comps
                .iter()
                .filter(|c| c.3 > 0.0)
                .map(|c| c.3.ln() - (y - c.2).norm_sqr())
                .collect();
            let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
            let value = -w.norm_sqr() - lse;
            writeln!(out, "{a},{b},{:.12e},{:.12e},{:.12e},{:.12e}", w.re, w.im, wt, value)?;
        }
    }
    Ok(())
}

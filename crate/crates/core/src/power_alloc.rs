//! Per-sample KKT equalities and the three nested loops that produce the
//! optimal power policy for fixed decoding regions and weights.
//!
//! Rates are in bits/s/Hz. With `c_j = P̄·z_j`, the SNR seen by the model is
//! `s_j = α_j·c_j`, so `dr/dα_j = c_j·dr/ds_j`.

use std::f64::consts::LN_2;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{effective_capacity, log_moment};
use crate::channel::{ChannelSample, FadingEnsemble, SystemParams};
use crate::error::{Error, Result};
use crate::mmse_mi::RateModel;

const MODULE: &str = "power_alloc";
const ALPHA_MAX: f64 = 1e12;

/// QoS exponents (1/bit) and the exponent scale `n = T·B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosSpec {
    pub theta: [f64; 2],
    pub n: f64,
}

impl QosSpec {
    pub fn new(theta1: f64, theta2: f64, params: &SystemParams) -> Result<Self> {
        for t in [theta1, theta2] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("QoS exponent must be >= 0, got {t}")));
            }
        }
        Ok(Self {
            theta: [theta1, theta2],
            n: params.symbols_per_frame(),
        })
    }

    pub fn equal_exponents(&self) -> bool {
        self.theta[0] == self.theta[1]
    }
}

/// Successive decoding order at one fading state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Order (2,1): transmitter 2 is decoded first, transmitter 1 sees no
    /// interference.
    Z,
    /// Order (1,2).
    Zc,
}

impl Region {
    pub fn tag(self) -> &'static str {
        match self {
            Region::Z => "2-1",
            Region::Zc => "1-2",
        }
    }
}

/// Weights `(λ1, λ2)` with `λ1 + λ2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub lambda: [f64; 2],
}

impl Weights {
    pub fn new(lambda1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda1) {
            return Err(Error::InvalidArgument(format!("lambda1 must lie in [0, 1], got {lambda1}")));
        }
        Ok(Self {
            lambda: [lambda1, 1.0 - lambda1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangeState {
    pub epsilon: f64,
    pub psi: [f64; 2],
    /// `ln ψ_j`, kept separately because `ψ_j` underflows for strict QoS.
    pub log_psi: [f64; 2],
}

impl LagrangeState {
    pub fn initial() -> Self {
        Self {
            epsilon: f64::NAN,
            psi: [1.0, 1.0],
            log_psi: [0.0, 0.0],
        }
    }

    fn set_log_psi(&mut self, log_psi: [f64; 2]) {
        self.log_psi = log_psi;
        self.psi = [log_psi[0].exp(), log_psi[1].exp()];
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerPolicy {
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

impl PowerPolicy {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha1: vec![0.0; n],
            alpha2: vec![0.0; n],
        }
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Self {
        Self {
            alpha1: pairs.iter().map(|a| a[0]).collect(),
            alpha2: pairs.iter().map(|a| a[1]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha1.is_empty()
    }

    pub fn alpha(&self, k: usize) -> [f64; 2] {
        [self.alpha1[k], self.alpha2[k]]
    }

    /// `E{α1 + α2}` over the ensemble weights.
    pub fn expected_power(&self, ensemble: &FadingEnsemble) -> f64 {
        ensemble
            .samples()
            .iter()
            .enumerate()
            .map(|(k, s)| s.weight * (self.alpha1[k] + self.alpha2[k]))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateTable {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl RateTable {
    pub fn rates(&self, user: usize) -> &[f64] {
        if user == 0 {
            &self.r1
        } else {
            &self.r2
        }
    }
}

/// Tolerances and iteration caps of the three loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Inner loop stop: change of the second-solved allocation, relative to `1 + α`.
    pub alpha_tol: f64,
    /// Root-find stop: `|residual| ≤ residual_tol·ε`.
    pub residual_tol: f64,
    /// Middle loop stop: `|E{α1+α2} - 1|`.
    pub budget_tol: f64,
    /// Outer loop stop: `|ln ψ - ln ψ*|`.
    pub psi_tol: f64,
    /// Lower end of the ε bracket.
    pub epsilon_floor: f64,
    pub inner_cap: usize,
    pub middle_cap: usize,
    pub outer_cap: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            alpha_tol: 1e-10,
            residual_tol: 1e-9,
            budget_tol: 1e-9,
            psi_tol: 1e-7,
            epsilon_floor: 1e-8,
            inner_cap: 200,
            middle_cap: 100,
            outer_cap: 50,
        }
    }
}

/// One line of the convergence log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub loop_name: &'static str,
    pub iteration: usize,
    pub residual: f64,
}

pub fn write_trace<W: Write>(trace: &[TraceEntry], mut out: W) -> std::io::Result<()> {
    writeln!(out, "loop,iteration,residual")?;
    for t in trace {
        writeln!(out, "{},{},{:.6e}", t.loop_name, t.iteration, t.residual)?;
    }
    Ok(())
}

/// Rates at one state and their derivatives, `grad[j][i] = dr_j/dα_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRates {
    pub rates: [f64; 2],
    pub grad: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy)]
struct Point {
    c: [f64; 2],
    phase: f64,
}

impl Point {
    fn new(sample: &ChannelSample, params: &SystemParams) -> Self {
        Self {
            c: [params.avg_power * sample.z1, params.avg_power * sample.z2],
            phase: sample.relative_phase(),
        }
    }
}

fn sample_rates(model: &dyn RateModel, p: &Point, region: Region, alpha: [f64; 2]) -> SampleRates {
    let e = model.eval([alpha[0] * p.c[0], alpha[1] * p.c[1]], p.phase);
    let [c1, c2] = p.c;
    let (rates, grad) = match region {
        Region::Z => (
            [e.single[0], e.joint - e.single[0]],
            [
                [c1 * e.d_single[0], 0.0],
                [c1 * (e.d_joint[0] - e.d_single[0]), c2 * e.d_joint[1]],
            ],
        ),
        Region::Zc => (
            [e.joint - e.single[1], e.single[1]],
            [
                [c1 * e.d_joint[0], c2 * (e.d_joint[1] - e.d_single[1])],
                [0.0, c2 * e.d_single[1]],
            ],
        ),
    };
    // A silent transmitter carries exactly nothing.
    let live = [alpha[0] * c1 > 0.0, alpha[1] * c2 > 0.0];
    let rate = |j: usize| if live[j] { rates[j].max(0.0) / LN_2 } else { 0.0 };
    SampleRates {
        rates: [rate(0), rate(1)],
        grad: [
            [grad[0][0] / LN_2, grad[0][1] / LN_2],
            [grad[1][0] / LN_2, grad[1][1] / LN_2],
        ],
    }
}

/// Problem data shared by every sample of one `(ε, ψ)` iteration.
#[derive(Clone, Copy)]
pub struct KktContext<'a> {
    pub model: &'a dyn RateModel,
    pub params: &'a SystemParams,
    pub qos: &'a QosSpec,
    pub weights: &'a Weights,
    pub state: &'a LagrangeState,
}

impl KktContext<'_> {
    fn factor(&self, j: usize, rate: f64) -> f64 {
        let lambda = self.weights.lambda[j];
        if lambda == 0.0 {
            return 0.0;
        }
        let theta = self.qos.theta[j];
        let expo = if theta > 0.0 { -theta * self.qos.n * rate } else { 0.0 };
        lambda * (expo - self.state.log_psi[j]).exp()
    }

    fn residuals(&self, p: &Point, region: Region, alpha: [f64; 2]) -> [f64; 2] {
        let sr = sample_rates(self.model, p, region, alpha);
        let f = [self.factor(0, sr.rates[0]), self.factor(1, sr.rates[1])];
        let eps = self.state.epsilon;
        [
            f[0] * sr.grad[0][0] + f[1] * sr.grad[1][0] - eps,
            f[0] * sr.grad[0][1] + f[1] * sr.grad[1][1] - eps,
        ]
    }

    /// KKT residuals at one sample for the given region.
    pub fn residual(&self, sample: &ChannelSample, region: Region, alpha: [f64; 2]) -> Result<[f64; 2]> {
        let r = self.residuals(&Point::new(sample, self.params), region, alpha);
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(Error::numeric(MODULE, "non-finite KKT residual"))
        }
    }

    /// Alternating per-variable root finds; see [`solve_alpha_pair`].
    fn solve_pair(&self, p: &Point, region: Region, warm: [f64; 2], k: usize, settings: &SolverSettings) -> Result<[f64; 2]> {
        let (first, second) = match region {
            Region::Z => (1, 0),
            Region::Zc => (0, 1),
        };
        let mut a = [sanitize(warm[0]), sanitize(warm[1])];
        let mut history = Vec::new();
        for _ in 0..settings.inner_cap {
            a[first] = self.root(p, region, a, first, k, settings)?;
            let new = self.root(p, region, a, second, k, settings)?;
            let change = (new - a[second]).abs();
            a[second] = new;
            if change <= settings.alpha_tol * (1.0 + new) {
                return Ok(a);
            }
            history.push(change);
        }
        Err(Error::Convergence {
            module: MODULE,
            loop_name: "inner",
            iterations: settings.inner_cap,
            residual: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }

    /// Root in `α_i ≥ 0` of the decreasing residual `i`, other allocation fixed.
    fn root(&self, p: &Point, region: Region, a: [f64; 2], i: usize, k: usize, settings: &SolverSettings) -> Result<f64> {
        if p.c[i] == 0.0 {
            return Ok(0.0);
        }
        let f = |x: f64| -> Result<f64> {
            let mut b = a;
            b[i] = x;
            let r = self.residuals(p, region, b)[i];
            if r.is_finite() {
                Ok(r)
            } else {
                Err(Error::numeric(MODULE, format!("non-finite KKT residual at sample {k}")))
            }
        };
        let ftol = settings.residual_tol * self.state.epsilon;
        decreasing_root(f, a[i], ftol, settings.inner_cap).map_err(|e| match e {
            Error::Convergence { history, iterations, residual, .. } => Error::Convergence {
                module: MODULE,
                loop_name: "root",
                iterations,
                residual,
                history,
            },
            other => other,
        })
    }
}

fn sanitize(x: f64) -> f64 {
    if x.is_finite() && x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Root of `f` on `[0, ∞)` reached from `guess` by moving in the direction
/// of the sign of `f`, or 0 when that walk reaches 0 with `f(0) ≤ 0`.
///
/// With `f` a coordinate derivative of a per-sample Lagrangian, the walk
/// only moves uphill, so the alternation cannot cycle between local maxima.
fn decreasing_root<F>(f: F, guess: f64, ftol: f64, cap: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let (mut a, mut fa, mut b, mut fb);
    let x = sanitize(guess);
    let fx = f(x)?;
    if x == 0.0 && fx <= 0.0 {
        return Ok(0.0);
    }
    if fx.abs() <= ftol && x > 0.0 {
        return Ok(x);
    }
    let mut step = 1e-2 * x + 1e-6;
    if fx > 0.0 {
        a = x;
        fa = fx;
        loop {
            b = a + step;
            fb = f(b)?;
            if fb <= 0.0 {
                break;
            }
            a = b;
            fa = fb;
            step *= 4.0;
            if b > ALPHA_MAX {
                return Err(Error::numeric(MODULE, "allocation root not bracketed below 1e12"));
            }
        }
    } else {
        b = x;
        fb = fx;
        loop {
            a = (b - step).max(0.0);
            fa = f(a)?;
            if fa > 0.0 {
                break;
            }
            if a == 0.0 {
                return Ok(0.0);
            }
            b = a;
            fb = fa;
            step *= 4.0;
        }
    }
    // Illinois regula falsi.
    let mut side = 0i8;
    let mut history = Vec::new();
    for _ in 0..cap {
        let mut x = (a * fb - b * fa) / (fb - fa);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let fx = f(x)?;
        if fx.abs() <= ftol || b - a <= 1e-15 * (1.0 + b) {
            return Ok(x);
        }
        if fx > 0.0 {
            a = x;
            fa = fx;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = x;
            fb = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
        history.push(fx);
    }
    Err(Error::Convergence {
        module: MODULE,
        loop_name: "root",
        iterations: cap,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// KKT residuals `(res1, res2)` in region Z at one sample.
pub fn kkt_residual_z(
    model: &dyn RateModel,
    sample: &ChannelSample,
    alpha: [f64; 2],
    state: &LagrangeState,
    weights: &Weights,
    qos: &QosSpec,
    params: &SystemParams,
) -> Result<[f64; 2]> {
    let ctx = KktContext { model, params, qos, weights, state };
    ctx.residual(sample, Region::Z, alpha)
}

/// KKT residuals `(res1, res2)` in region Zc at one sample.
pub fn kkt_residual_zc(
    model: &dyn RateModel,
    sample: &ChannelSample,
    alpha: [f64; 2],
    state: &LagrangeState,
    weights: &Weights,
    qos: &QosSpec,
    params: &SystemParams,
) -> Result<[f64; 2]> {
    let ctx = KktContext { model, params, qos, weights, state };
    ctx.residual(sample, Region::Zc, alpha)
}

/// Solves one sample's KKT pair for fixed `ε` and `ψ`. In Z the allocation
/// of transmitter 2 is solved first, in Zc that of transmitter 1; negative
/// roots are clamped to zero.
pub fn solve_alpha_pair(
    ctx: &KktContext<'_>,
    sample: &ChannelSample,
    region: Region,
    settings: &SolverSettings,
) -> Result<[f64; 2]> {
    if !(ctx.state.epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    ctx.solve_pair(&Point::new(sample, ctx.params), region, [0.0, 0.0], 0, settings)
}

/// Rates of every sample under `policy`.
pub fn rate_table(
    ensemble: &FadingEnsemble,
    regions: &[Region],
    policy: &PowerPolicy,
    model: &dyn RateModel,
    params: &SystemParams,
) -> Result<RateTable> {
    check_lengths(ensemble, regions)?;
    if policy.len() != ensemble.len() {
        return Err(Error::InvalidArgument("policy and ensemble sizes differ".into()));
    }
    let rates: Vec<[f64; 2]> = ensemble
        .samples()
        .par_iter()
        .enumerate()
        .map(|(k, s)| sample_rates(model, &Point::new(s, params), regions[k], policy.alpha(k)).rates)
        .collect();
    Ok(RateTable {
        r1: rates.iter().map(|r| r[0]).collect(),
        r2: rates.iter().map(|r| r[1]).collect(),
    })
}

/// `[C1, C2]` of a rate table.
pub fn capacities(rates: &RateTable, ensemble: &FadingEnsemble, qos: &QosSpec) -> Result<[f64; 2]> {
    let w: Vec<f64> = ensemble.weights().collect();
    Ok([
        effective_capacity(&rates.r1, &w, qos.theta[0], qos.n)?,
        effective_capacity(&rates.r2, &w, qos.theta[1], qos.n)?,
    ])
}

fn check_lengths(ensemble: &FadingEnsemble, regions: &[Region]) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    if regions.len() != ensemble.len() {
        return Err(Error::InvalidArgument(format!(
            "{} region tags for {} samples",
            regions.len(),
            ensemble.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmOutput {
    pub policy: PowerPolicy,
    pub state: LagrangeState,
    pub rates: RateTable,
    pub capacity: [f64; 2],
    pub objective: f64,
    /// The budget was not binding and `ε` sits at its floor.
    pub budget_slack: bool,
    pub outer_iterations: usize,
    pub trace: Vec<TraceEntry>,
}

struct Solver<'a> {
    ensemble: &'a FadingEnsemble,
    regions: &'a [Region],
    points: Vec<Point>,
    model: &'a dyn RateModel,
    params: &'a SystemParams,
    qos: &'a QosSpec,
    weights: &'a Weights,
    settings: &'a SolverSettings,
}

impl Solver<'_> {
    fn solve_all(&self, state: &LagrangeState, warm: &[[f64; 2]]) -> Result<(Vec<[f64; 2]>, f64)> {
        let ctx = KktContext {
            model: self.model,
            params: self.params,
            qos: self.qos,
            weights: self.weights,
            state,
        };
        let alphas: Vec<[f64; 2]> = self
            .points
            .par_iter()
            .enumerate()
            .map(|(k, p)| ctx.solve_pair(p, self.regions[k], warm[k], k, self.settings))
            .collect::<Result<_>>()?;
        let power = self
            .ensemble
            .samples()
            .iter()
            .zip(&alphas)
            .map(|(s, a)| s.weight * (a[0] + a[1]))
            .sum();
        Ok((alphas, power))
    }

    /// Upper end of the ε bracket: no allocation is positive beyond it.
    fn epsilon_ceiling(&self, state: &LagrangeState) -> f64 {
        let mut top: f64 = 0.0;
        for j in 0..2 {
            let zmax = self
                .points
                .iter()
                .map(|p| p.c[j])
                .fold(0.0, f64::max);
            top = top.max(self.weights.lambda[j] * (-state.log_psi[j]).exp() * zmax / LN_2);
        }
        1.01 * top
    }

    /// Middle loop: regula falsi with Illinois weighting on `ln ε`.
    fn search_epsilon(
        &self,
        state: &mut LagrangeState,
        alphas: &mut Vec<[f64; 2]>,
        guess: Option<f64>,
        trace: &mut Vec<TraceEntry>,
    ) -> Result<bool> {
        let s = self.settings;
        let ceiling = self.epsilon_ceiling(state);
        let floor = s.epsilon_floor.min(ceiling * 1e-3);
        if ceiling <= 0.0 {
            state.epsilon = floor;
            alphas.iter_mut().for_each(|a| *a = [0.0, 0.0]);
            return Ok(true);
        }
        let mut evals = 0usize;
        let mut history = Vec::new();
        let mut eval = |x: f64, state: &mut LagrangeState, alphas: &mut Vec<[f64; 2]>| -> Result<f64> {
            state.epsilon = x.exp();
            let (next, power) = self.solve_all(state, alphas)?;
            *alphas = next;
            evals += 1;
            history.push(power - 1.0);
            trace.push(TraceEntry {
                loop_name: "middle",
                iteration: evals,
                residual: power - 1.0,
            });
            Ok(power - 1.0)
        };
        let (lo_x, hi_x) = (floor.ln(), ceiling.ln());
        // Bracket (a, fa > 0) and (b, fb < 0) in ln ε.
        let (mut a, mut fa, mut b, mut fb);
        // Cold starts walk down from the ceiling in coarse steps; evaluating
        // near the floor first would put every sample deep in saturation.
        let (x0, mut step) = match guess.filter(|g| g.is_finite() && *g > 0.0) {
            Some(g) => (g.ln().clamp(lo_x, hi_x - 1e-9), 0.02),
            None => ((hi_x - 1.0).max(lo_x), 1.0),
        };
        let f0 = eval(x0, state, alphas)?;
        if f0.abs() <= s.budget_tol {
            return Ok(false);
        }
        if f0 > 0.0 {
            a = x0;
            fa = f0;
            loop {
                b = (a + step).min(hi_x);
                if b >= hi_x {
                    fb = -1.0;
                    break;
                }
                fb = eval(b, state, alphas)?;
                if fb.abs() <= s.budget_tol {
                    return Ok(false);
                }
                if fb < 0.0 {
                    break;
                }
                a = b;
                fa = fb;
                step *= 3.0;
            }
        } else {
            b = x0;
            fb = f0;
            loop {
                a = (b - step).max(lo_x);
                fa = eval(a, state, alphas)?;
                if fa.abs() <= s.budget_tol {
                    return Ok(false);
                }
                if fa > 0.0 {
                    break;
                }
                if a <= lo_x {
                    return Ok(true);
                }
                b = a;
                fb = fa;
                step *= 3.0;
            }
        }
        let mut side = 0i8;
        for _ in 0..s.middle_cap {
            let mut x = (a * fb - b * fa) / (fb - fa);
            if !(x > a && x < b) {
                x = 0.5 * (a + b);
            }
            let fx = eval(x, state, alphas)?;
            if fx.abs() <= s.budget_tol || b - a <= 1e-13 * (1.0 + x.abs()) {
                return Ok(false);
            }
            if fx > 0.0 {
                a = x;
                fa = fx;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            } else {
                b = x;
                fb = fx;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            }
        }
        let last = history.last().copied().unwrap_or(f64::NAN);
        Err(Error::Convergence {
            module: MODULE,
            loop_name: "middle",
            iterations: s.middle_cap,
            residual: last,
            history,
        })
    }

    fn rates(&self, alphas: &[[f64; 2]]) -> RateTable {
        let rates: Vec<[f64; 2]> = self
            .points
            .par_iter()
            .enumerate()
            .map(|(k, p)| sample_rates(self.model, p, self.regions[k], alphas[k]).rates)
            .collect();
        RateTable {
            r1: rates.iter().map(|r| r[0]).collect(),
            r2: rates.iter().map(|r| r[1]).collect(),
        }
    }
}

/// Runs the outer `ψ` loop, the middle `ε` search and the per-sample inner
/// solves for fixed regions and weights.
///
/// The `ψ` update is the 0.5/0.5 damped fixed-point step in `ln ψ`, replaced
/// per component by a secant step while the fixed-point gap shrinks. Both
/// share the fixed points of the plain iteration.
///
/// `warm` seeds the allocations, `ε` and `ψ`; without it `ψ_j = 1`.
#[allow(clippy::too_many_arguments)]
pub fn run_algorithm1(
    ensemble: &FadingEnsemble,
    regions: &[Region],
    weights: &Weights,
    qos: &QosSpec,
    params: &SystemParams,
    model: &dyn RateModel,
    settings: &SolverSettings,
    warm: Option<(&PowerPolicy, &LagrangeState)>,
) -> Result<AlgorithmOutput> {
    check_lengths(ensemble, regions)?;
    let solver = Solver {
        ensemble,
        regions,
        points: ensemble.samples().iter().map(|s| Point::new(s, params)).collect(),
        model,
        params,
        qos,
        weights,
        settings,
    };
    let w: Vec<f64> = ensemble.weights().collect();
    let (mut alphas, mut state, mut guess) = match warm {
        Some((p, st)) if p.len() == ensemble.len() => {
            let mut s = LagrangeState::initial();
            s.set_log_psi(st.log_psi);
            let pairs = (0..p.len()).map(|k| p.alpha(k)).collect();
            (pairs, s, Some(st.epsilon))
        }
        _ => (vec![[0.0, 0.0]; ensemble.len()], LagrangeState::initial(), None),
    };
    for j in 0..2 {
        if qos.theta[j] <= 0.0 {
            state.log_psi[j] = 0.0;
            state.psi[j] = 1.0;
        }
    }
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut previous: Option<([f64; 2], [f64; 2], [[f64; 2]; 2])> = None;
    for outer in 1..=settings.outer_cap {
        let slack = solver.search_epsilon(&mut state, &mut alphas, guess, &mut trace)?;
        guess = Some(state.epsilon);
        let rates = solver.rates(&alphas);
        let mut target = [0.0; 2];
        for j in 0..2 {
            if qos.theta[j] > 0.0 {
                target[j] = log_moment(rates.rates(j), &w, qos.theta[j], qos.n)?;
            }
        }
        let gap = (0..2)
            .map(|j| (state.log_psi[j] - target[j]).abs())
            .fold(0.0, f64::max);
        trace.push(TraceEntry {
            loop_name: "outer",
            iteration: outer,
            residual: gap,
        });
        history.push(gap);
        if gap <= settings.psi_tol {
            let capacity = capacities(&rates, ensemble, qos)?;
            return Ok(AlgorithmOutput {
                objective: weights.lambda[0] * capacity[0] + weights.lambda[1] * capacity[1],
                capacity,
                policy: PowerPolicy::from_pairs(&alphas),
                state,
                rates,
                budget_slack: slack,
                outer_iterations: outer,
                trace,
            });
        }
        let x = state.log_psi;
        let g = [target[0] - x[0], target[1] - x[1]];
        let mut next = [0.0; 2];
        for j in 0..2 {
            let (x, y) = (x[j], target[j]);
            let m = x.max(y);
            next[j] = m + (0.5 * (x - m).exp() + 0.5 * (y - m).exp()).ln();
        }
        // Broyden step on the gap with an inverse-Jacobian estimate; the
        // damped step above is the fallback and the reset point.
        let mut inv = [[-0.5, 0.0], [0.0, -0.5]];
        if let Some((xp, gp, h)) = previous {
            let gmax = g[0].abs().max(g[1].abs());
            let gpmax = gp[0].abs().max(gp[1].abs());
            // A growing gap restarts from the damped step.
            if gmax < 2.0 * gpmax {
                inv = h;
                let dx = [x[0] - xp[0], x[1] - xp[1]];
                let dg = [g[0] - gp[0], g[1] - gp[1]];
                let norm = dg[0] * dg[0] + dg[1] * dg[1];
                if norm > 0.0 {
                    for r in 0..2 {
                        let u = (dx[r] - inv[r][0] * dg[0] - inv[r][1] * dg[1]) / norm;
                        inv[r][0] += u * dg[0];
                        inv[r][1] += u * dg[1];
                    }
                }
                let step = [
                    -(inv[0][0] * g[0] + inv[0][1] * g[1]),
                    -(inv[1][0] * g[0] + inv[1][1] * g[1]),
                ];
                let cand = [x[0] + step[0], x[1] + step[1]];
                let ok = (0..2).all(|j| {
                    step[j].is_finite() && step[j].abs() <= 100.0 * gmax && cand[j] <= 0.0
                });
                if ok {
                    next = cand;
                } else {
                    inv = [[-0.5, 0.0], [0.0, -0.5]];
                }
            }
        }
        for j in 0..2 {
            if qos.theta[j] <= 0.0 {
                next[j] = 0.0;
            }
        }
        previous = Some((x, g, inv));
        state.set_log_psi(next);
    }
    Err(Error::Convergence {
        module: MODULE,
        loop_name: "outer",
        iterations: settings.outer_cap,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// One transmitter alone with the whole budget.
pub fn solve_single_user(
    ensemble: &FadingEnsemble,
    user: usize,
    qos: &QosSpec,
    params: &SystemParams,
    model: &dyn RateModel,
    settings: &SolverSettings,
) -> Result<SingleUserOutput> {
    if user > 1 {
        return Err(Error::InvalidArgument(format!("transmitter index must be 0 or 1, got {user}")));
    }
    let weights = Weights::new(if user == 0 { 1.0 } else { 0.0 })?;
    // The transmitter decoded last sees no interference.
    let region = if user == 0 { Region::Z } else { Region::Zc };
    let regions = vec![region; ensemble.len()];
    let out = run_algorithm1(ensemble, &regions, &weights, qos, params, model, settings, None)?;
    Ok(SingleUserOutput {
        capacity: out.capacity[user],
        outer_iterations: out.outer_iterations,
        algorithm: out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleUserOutput {
    pub capacity: f64,
    pub outer_iterations: usize,
    pub algorithm: AlgorithmOutput,
}

/// Policy dump: sample index, gains, region tag, allocations and rates.
pub fn write_policy_csv<W: Write>(
    ensemble: &FadingEnsemble,
    regions: &[Region],
    policy: &PowerPolicy,
    rates: &RateTable,
    header: &[String],
    mut out: W,
) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "sample,z1,z2,region,alpha1,alpha2,r1,r2")?;
    for (k, s) in ensemble.samples().iter().enumerate() {
        writeln!(
            out,
            "{k},{:.10e},{:.10e},{},{:.10e},{:.10e},{:.10e},{:.10e}",
            s.z1,
            s.z2,
            regions[k].tag(),
            policy.alpha1[k],
            policy.alpha2[k],
            rates.r1[k],
            rates.r2[k]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;

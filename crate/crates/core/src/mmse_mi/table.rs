//! Interpolated surrogate for [`RateModel`].
//!
//! Finite/finite pairs use a lazily filled grid over `v_j = ln(1 + s_j)` and
//! the relative phase. Each node stores `I` and its two `v`-gradients from the
//! MMSE formulas, so the `(v1, v2)` interpolant is bicubic Hermite; cross
//! derivatives come from central differences of neighbouring gradients. The
//! phase direction is periodic Catmull–Rom. Pairs involving a Gaussian input
//! reduce to the finite input's single-user curve.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::mixture::{input_stats, pair_stats, SingleStats};
use super::model::{PairEval, RateModel, SNR_FLOOR};
use crate::constellation::{Constellation, InputModel};
use crate::quadrature::ComplexRule;

/// Grid resolution of [`TabulatedModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    /// Spacing in `ln(1 + s)` of the pair grid.
    pub step: f64,
    /// Spacing in `ln(1 + s)` of the single-user curves.
    pub single_step: f64,
    /// Largest SNR covered; beyond it values are held constant.
    pub max_snr: f64,
    /// Phase nodes per full turn (at least 8 nodes per period are used).
    pub phase_density: usize,
    /// Gauss–Hermite nodes per dimension for node evaluation.
    pub quad_nodes: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            step: 0.1,
            single_step: 0.05,
            max_snr: 1e4,
            phase_density: 32,
            quad_nodes: 32,
        }
    }
}

/// Cubic Hermite curve of one input's `I(s)` on a uniform `v` grid.
#[derive(Debug)]
struct SingleCurve {
    step: f64,
    /// `(I, dI/dv)` per node.
    nodes: Vec<(f64, f64)>,
}

impl SingleCurve {
    fn build(c: &Constellation, spec: &TableSpec, rule: &ComplexRule) -> Self {
        let v_max = spec.max_snr.ln_1p();
        let n = (v_max / spec.single_step).ceil() as usize + 1;
        let nodes = (0..n)
            .map(|i| {
                let s = (i as f64 * spec.single_step).exp_m1();
                let st = single_raw(c, s, rule);
                (st.mi, (1.0 + s) * st.mmse)
            })
            .collect();
        Self {
            step: spec.single_step,
            nodes,
        }
    }

    /// `(I, dI/ds)`.
    fn eval(&self, s: f64) -> (f64, f64) {
        let s = s.max(0.0);
        let v = s.ln_1p();
        let last = self.nodes.len() - 1;
        let x = v / self.step;
        if x >= last as f64 {
            return (self.nodes[last].0, 0.0);
        }
        let i = (x.floor() as usize).min(last - 1);
        let t = x - i as f64;
        let (f0, d0) = self.nodes[i];
        let (f1, d1) = self.nodes[i + 1];
        let h = self.step;
        let [b00, b10, b01, b11] = hermite(t);
        let [e00, e10, e01, e11] = hermite_dt(t);
        let value = b00 * f0 + b10 * h * d0 + b01 * f1 + b11 * h * d1;
        let dv = (e00 * f0 + e10 * h * d0 + e01 * f1 + e11 * h * d1) / h;
        (value, dv / (1.0 + s))
    }
}

fn single_raw(c: &Constellation, s: f64, rule: &ComplexRule) -> SingleStats {
    input_stats(
        &InputModel::Finite(c.clone()),
        Complex64::new(s.max(0.0).sqrt(), 0.0),
        rule,
    )
}

fn hermite(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    ]
}

fn hermite_dt(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        6.0 * t2 - 6.0 * t,
        3.0 * t2 - 4.0 * t + 1.0,
        -6.0 * t2 + 6.0 * t,
        3.0 * t2 - 2.0 * t,
    ]
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Lazily evaluated `(I, ∂I/∂v1, ∂I/∂v2)` grid for two finite inputs.
#[derive(Debug)]
struct PairGrid {
    c: [Constellation; 2],
    rule: Arc<ComplexRule>,
    step: f64,
    n_v: usize,
    /// Phase nodes per period.
    n_phase: usize,
    period: f64,
    /// Node `k` and `n_phase - k` coincide.
    conjugate: bool,
    /// Swapping the users (and negating the phase) leaves `I` unchanged.
    exchangeable: bool,
    nodes: Vec<OnceLock<[f64; 3]>>,
}

impl PairGrid {
    fn new(c1: &Constellation, c2: &Constellation, spec: &TableSpec, rule: Arc<ComplexRule>) -> Self {
        let r1 = c1.rotation_order().max(1);
        let r2 = c2.rotation_order().max(1);
        let lcm = r1 / gcd(r1, r2) * r2;
        let period = 2.0 * PI / lcm as f64;
        let n_phase = ((spec.phase_density as f64 * period / (2.0 * PI)).ceil() as usize).max(8);
        let conjugate = c1.conjugate_symmetric() && c2.conjugate_symmetric();
        let stored_phase = if conjugate { n_phase / 2 + 1 } else { n_phase };
        let v_max = spec.max_snr.ln_1p();
        let n_v = (v_max / spec.step).ceil() as usize + 1;
        let total = stored_phase * n_v * n_v;
        Self {
            c: [c1.clone(), c2.clone()],
            rule,
            step: spec.step,
            n_v,
            n_phase,
            period,
            conjugate,
            exchangeable: c1 == c2 || (c1.points() == c2.points()),
            nodes: (0..total).map(|_| OnceLock::new()).collect(),
        }
    }

    fn compute(&self, i1: usize, i2: usize, k: usize) -> [f64; 3] {
        let s1 = (i1 as f64 * self.step).exp_m1().max(SNR_FLOOR);
        let s2 = (i2 as f64 * self.step).exp_m1().max(SNR_FLOOR);
        let phase = k as f64 * self.period / self.n_phase as f64;
        let g1 = Complex64::new(s1.sqrt(), 0.0);
        let g2 = Complex64::from_polar(s2.sqrt(), phase);
        let in1 = InputModel::Finite(self.c[0].clone());
        let in2 = InputModel::Finite(self.c[1].clone());
        let st = pair_stats(&in1, g1, &in2, g2, &self.rule);
        let rot = (Complex64::from_polar(1.0, -phase) * st.error_correlation()).re;
        let d1 = st.mmse[0] + (s2 / s1).sqrt() * rot;
        let d2 = st.mmse[1] + (s1 / s2).sqrt() * rot;
        [st.mi_joint, (1.0 + s1) * d1, (1.0 + s2) * d2]
    }

    /// Node with phase index `k` taken modulo the period.
    fn node(&self, i1: usize, i2: usize, k: isize) -> [f64; 3] {
        let n = self.n_phase as isize;
        let mut k = k.rem_euclid(n) as usize;
        if self.exchangeable && i1 > i2 {
            let [f, a, b] = self.node(i2, i1, -(k as isize));
            return [f, b, a];
        }
        if self.conjugate {
            k = k.min(self.n_phase - k);
        }
        let idx = (k * self.n_v + i1) * self.n_v + i2;
        *self.nodes[idx].get_or_init(|| self.compute(i1, i2, k))
    }

    fn cross_derivative(&self, i1: usize, i2: usize, k: isize) -> f64 {
        let last = self.n_v - 1;
        let (a1, b1) = (i1.saturating_sub(1), (i1 + 1).min(last));
        let (a2, b2) = (i2.saturating_sub(1), (i2 + 1).min(last));
        let dx = (self.node(i1, b2, k)[1] - self.node(i1, a2, k)[1]) / ((b2 - a2) as f64 * self.step);
        let dy = (self.node(b1, i2, k)[2] - self.node(a1, i2, k)[2]) / ((b1 - a1) as f64 * self.step);
        0.5 * (dx + dy)
    }

    /// Bicubic Hermite value and `v`-gradient on one phase layer.
    fn layer(&self, i1: usize, i2: usize, t1: f64, t2: f64, k: isize) -> [f64; 3] {
        let h = self.step;
        let b1 = hermite(t1);
        let b2 = hermite(t2);
        let d1 = hermite_dt(t1);
        let d2 = hermite_dt(t2);
        let mut out = [0.0; 3];
        for a in 0..2 {
            for b in 0..2 {
                let [f, fx, fy] = self.node(i1 + a, i2 + b, k);
                let fxy = self.cross_derivative(i1 + a, i2 + b, k);
                // Basis indices: value weight at 2a, slope weight at 2a+1.
                let (p0, p1) = (2 * a, 2 * a + 1);
                let (q0, q1) = (2 * b, 2 * b + 1);
                let coef = |u: &[f64; 4], w: &[f64; 4]| {
                    u[p0] * w[q0] * f + u[p1] * w[q0] * h * fx + u[p0] * w[q1] * h * fy + u[p1] * w[q1] * h * h * fxy
                };
                out[0] += coef(&b1, &b2);
                out[1] += coef(&d1, &b2) / h;
                out[2] += coef(&b1, &d2) / h;
            }
        }
        out
    }

    /// `(I, ∂I/∂v1, ∂I/∂v2)`.
    fn eval(&self, v1: f64, v2: f64, phase: f64) -> [f64; 3] {
        let last = self.n_v - 1;
        let locate = |v: f64| -> (usize, f64, bool) {
            let x = v / self.step;
            if x >= last as f64 {
                (last - 1, 1.0, true)
            } else {
                let i = (x.max(0.0).floor() as usize).min(last - 1);
                (i, x.max(0.0) - i as f64, false)
            }
        };
        let (i1, t1, sat1) = locate(v1);
        let (i2, t2, sat2) = locate(v2);
        let dphi = self.period / self.n_phase as f64;
        let x = phase.rem_euclid(self.period) / dphi;
        let k = (x.floor() as isize).min(self.n_phase as isize - 1);
        let w = catmull_rom(x - k as f64);
        let mut out = [0.0; 3];
        for (o, weight) in w.iter().enumerate() {
            let layer = self.layer(i1, i2, t1, t2, k - 1 + o as isize);
            for c in 0..3 {
                out[c] += weight * layer[c];
            }
        }
        if sat1 {
            out[1] = 0.0;
        }
        if sat2 {
            out[2] = 0.0;
        }
        out
    }
}

#[derive(Debug)]
enum Pair {
    Finite(PairGrid),
    /// `.0` is the Gaussian user.
    Mixed(usize),
    Gaussian,
}

/// Interpolating [`RateModel`]; nodes are filled on first use and shared
/// between threads.
#[derive(Debug)]
pub struct TabulatedModel {
    inputs: [InputModel; 2],
    curves: [Option<SingleCurve>; 2],
    pair: Pair,
}

impl TabulatedModel {
    pub fn new(in1: InputModel, in2: InputModel, spec: &TableSpec) -> Self {
        let rule = ComplexRule::get(spec.quad_nodes.max(2));
        let curve = |i: &InputModel| i.as_finite().map(|c| SingleCurve::build(c, spec, &rule));
        let curves = [curve(&in1), curve(&in2)];
        let pair = match (&in1, &in2) {
            (InputModel::Finite(a), InputModel::Finite(b)) => {
                Pair::Finite(PairGrid::new(a, b, spec, rule.clone()))
            }
            (InputModel::GaussianAnalytic, InputModel::Finite(_)) => Pair::Mixed(0),
            (InputModel::Finite(_), InputModel::GaussianAnalytic) => Pair::Mixed(1),
            _ => Pair::Gaussian,
        };
        Self {
            inputs: [in1, in2],
            curves,
            pair,
        }
    }

    /// Number of pair-grid nodes evaluated so far.
    pub fn filled_nodes(&self) -> usize {
        match &self.pair {
            Pair::Finite(g) => g.nodes.iter().filter(|n| n.get().is_some()).count(),
            _ => 0,
        }
    }

    fn single_eval(&self, j: usize, s: f64) -> (f64, f64) {
        match &self.curves[j] {
            Some(c) => c.eval(s),
            None => {
                let s = s.max(0.0);
                (s.ln_1p(), 1.0 / (1.0 + s))
            }
        }
    }
}

impl RateModel for TabulatedModel {
    fn inputs(&self) -> [&InputModel; 2] {
        [&self.inputs[0], &self.inputs[1]]
    }

    fn eval(&self, snr: [f64; 2], phase: f64) -> PairEval {
        let s = [snr[0].max(0.0), snr[1].max(0.0)];
        let a = self.single_eval(0, s[0]);
        let b = self.single_eval(1, s[1]);
        let (joint, d_joint) = match &self.pair {
            Pair::Finite(grid) => {
                let [f, dv1, dv2] = grid.eval(s[0].ln_1p(), s[1].ln_1p(), phase);
                (f, [dv1 / (1.0 + s[0]), dv2 / (1.0 + s[1])])
            }
            Pair::Mixed(gi) => {
                let fi = 1 - gi;
                let (sg, sf) = (s[*gi], s[fi]);
                let u = sf / (1.0 + sg);
                let (i_f, mmse_f) = self.single_eval(fi, u);
                let mut d = [0.0; 2];
                d[*gi] = 1.0 / (1.0 + sg) - mmse_f * sf / (1.0 + sg).powi(2);
                d[fi] = mmse_f / (1.0 + sg);
                (sg.ln_1p() + i_f, d)
            }
            Pair::Gaussian => {
                let total = 1.0 + s[0] + s[1];
                (total.ln(), [1.0 / total, 1.0 / total])
            }
        };
        PairEval {
            joint,
            d_joint,
            single: [a.0, b.0],
            d_single: [a.1, b.1],
        }
    }

    fn single(&self, j: usize, snr: f64) -> (f64, f64) {
        self.single_eval(j.min(1), snr)
    }
}

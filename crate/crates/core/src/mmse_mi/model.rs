use std::sync::Arc;

use num_complex::Complex64;

use super::mixture::{input_stats, pair_stats};
use crate::constellation::InputModel;
use crate::quadrature::{ComplexRule, IntegrationSpec};

/// SNRs are floored here before the `√(s_m/s_j)` factor is formed.
pub const SNR_FLOOR: f64 = 1e-10;

/// Information terms at one channel state, in nats, as functions of the
/// per-user SNRs `s_j = α_j·P̄·z_j` and the relative phase `arg h2 - arg h1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    /// `I(x1, x2; y)`.
    pub joint: f64,
    /// `∂I(x1,x2;y)/∂s_j`; equals `∂I(x_j;y)/∂s_j`.
    pub d_joint: [f64; 2],
    /// `I(x_j; y_j)`.
    pub single: [f64; 2],
    /// `dI(x_j; y_j)/ds_j`, the interference-free MMSE.
    pub d_single: [f64; 2],
}

/// Source of the information terms used by the power-allocation solver.
pub trait RateModel: Send + Sync {
    fn inputs(&self) -> [&InputModel; 2];

    fn eval(&self, snr: [f64; 2], phase: f64) -> PairEval;

    /// `(I(x_j;y_j), dI/ds_j)` at SNR `s`.
    fn single(&self, j: usize, snr: f64) -> (f64, f64);
}

/// Evaluates every call by quadrature.
#[derive(Debug, Clone)]
pub struct DirectModel {
    inputs: [InputModel; 2],
    rule: Arc<ComplexRule>,
}

impl DirectModel {
    pub fn new(in1: InputModel, in2: InputModel, quad: &IntegrationSpec) -> Self {
        Self {
            inputs: [in1, in2],
            rule: ComplexRule::get(quad.nodes.max(2)),
        }
    }
}

pub(crate) fn pair_eval_from_stats(
    inputs: [&InputModel; 2],
    snr: [f64; 2],
    phase: f64,
    rule: &ComplexRule,
) -> PairEval {
    let s = [snr[0].max(SNR_FLOOR), snr[1].max(SNR_FLOOR)];
    let g1 = Complex64::new(s[0].sqrt(), 0.0);
    let g2 = Complex64::from_polar(s[1].sqrt(), phase);
    let st = pair_stats(inputs[0], g1, inputs[1], g2, rule);
    let rot = (Complex64::from_polar(1.0, -phase) * st.error_correlation()).re;
    let d_joint = [
        st.mmse[0] + (s[1] / s[0]).sqrt() * rot,
        st.mmse[1] + (s[0] / s[1]).sqrt() * rot,
    ];
    let a = input_stats(inputs[0], g1, rule);
    let b = input_stats(inputs[1], g2, rule);
    PairEval {
        joint: st.mi_joint,
        d_joint,
        single: [a.mi, b.mi],
        d_single: [a.mmse, b.mmse],
    }
}

impl RateModel for DirectModel {
    fn inputs(&self) -> [&InputModel; 2] {
        [&self.inputs[0], &self.inputs[1]]
    }

    fn eval(&self, snr: [f64; 2], phase: f64) -> PairEval {
        pair_eval_from_stats(self.inputs(), snr, phase, &self.rule)
    }

    fn single(&self, j: usize, snr: f64) -> (f64, f64) {
        let st = input_stats(
            &self.inputs[j.min(1)],
            Complex64::new(snr.max(0.0).sqrt(), 0.0),
            &self.rule,
        );
        (st.mi, st.mmse)
    }
}

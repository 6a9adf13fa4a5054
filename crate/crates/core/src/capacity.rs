//! Effective capacity of a per-frame service process and the region trace
//! obtained by sweeping the weights `(λ1, λ2)`.

use std::io::Write;

use serde::Serialize;

use crate::channel::{FadingEnsemble, SystemParams};
use crate::constellation::InputModel;
use crate::decoding::{partition_fixed_point, FixedPointOutput, PartitionSettings};
use crate::error::{Error, Result};
use crate::mmse_mi::RateModel;
use crate::power_alloc::{solve_single_user, QosSpec, SolverSettings, Weights};

const MODULE: &str = "effective_capacity";

fn check_rates(rates: &[f64], weights: &[f64]) -> Result<()> {
    if rates.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rates but {} weights",
            rates.len(),
            weights.len()
        )));
    }
    if rates.is_empty() {
        return Err(Error::InvalidArgument("empty rate table".into()));
    }
    if let Some(i) = rates.iter().position(|r| !r.is_finite()) {
        return Err(Error::numeric(MODULE, format!("non-finite rate at sample {i}")));
    }
    Ok(())
}

/// `ln E{e^{-θ·n·r}}` with max-subtraction.
pub fn log_moment(rates: &[f64], weights: &[f64], theta: f64, n: f64) -> Result<f64> {
    check_rates(rates, weights)?;
    let scale = theta * n;
    let top = rates
        .iter()
        .map(|r| -scale * r)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = weights.iter().sum();
    let sum: f64 = rates
        .iter()
        .zip(weights)
        .map(|(r, w)| w * (-scale * r - top).exp())
        .sum();
    Ok(top + (sum / total).ln())
}

/// `E{r}`.
pub fn ergodic_limit(rates: &[f64], weights: &[f64]) -> Result<f64> {
    check_rates(rates, weights)?;
    let total: f64 = weights.iter().sum();
    Ok(rates.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / total)
}

/// `-(1/(θ·n)) ln E{e^{-θ·n·r}}` in the units of `r`; `θ ≤ 0` gives the
/// ergodic mean.
pub fn effective_capacity(rates: &[f64], weights: &[f64], theta: f64, n: f64) -> Result<f64> {
    if theta <= 0.0 {
        return ergodic_limit(rates, weights);
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!("symbols per frame must be positive, got {n}")));
    }
    let value = -log_moment(rates, weights, theta, n)? / (theta * n);
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    pub c1: f64,
    pub c2: f64,
    pub objective: f64,
    pub converged: bool,
}

impl CapacityPoint {
    pub fn new(lambda1: f64, c1: f64, c2: f64, converged: bool) -> Self {
        let lambda2 = 1.0 - lambda1;
        Self {
            lambda1,
            lambda2,
            c1,
            c2,
            objective: lambda1 * c1 + lambda2 * c2,
            converged,
        }
    }

    fn failed(lambda1: f64) -> Self {
        Self {
            lambda1,
            lambda2: 1.0 - lambda1,
            c1: f64::NAN,
            c2: f64::NAN,
            objective: f64::NAN,
            converged: false,
        }
    }
}

/// Per-point diagnostics kept alongside the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub lambda1: f64,
    pub rounds: usize,
    pub outer_iterations: usize,
    pub fallback: bool,
    pub warnings: Vec<String>,
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTrace {
    pub points: Vec<CapacityPoint>,
    pub labels: [String; 2],
    pub reports: Vec<PointReport>,
}

impl RegionTrace {
    pub fn converged_points(&self) -> impl Iterator<Item = &CapacityPoint> {
        self.points.iter().filter(|p| p.converged)
    }

    /// CSV with one row per `λ1`. `header` lines are written as `#` comments.
    pub fn write_csv<W: Write>(&self, header: &[String], mut out: W) -> std::io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "lambda1,c1,c2,objective,converged")?;
        for p in &self.points {
            writeln!(
                out,
                "{:.6},{:.10e},{:.10e},{:.10e},{}",
                p.lambda1, p.c1, p.c2, p.objective, p.converged
            )?;
        }
        Ok(())
    }

    /// Points that fail the convexity spot-check.
    ///
    /// A point fails when another traced point beats it at its own weights
    /// by more than `tol` (relative).
    pub fn convexity_violations(&self, tol: f64) -> Vec<usize> {
        let pts: Vec<&CapacityPoint> = self.converged_points().collect();
        let mut bad = Vec::new();
        for p in &pts {
            let own = p.lambda1 * p.c1 + p.lambda2 * p.c2;
            let slack = tol * own.abs().max(1e-12);
            let beaten = pts
                .iter()
                .any(|q| p.lambda1 * q.c1 + p.lambda2 * q.c2 > own + slack);
            if beaten {
                if let Some(idx) = self.points.iter().position(|x| std::ptr::eq(x, *p)) {
                    bad.push(idx);
                }
            }
        }
        bad
    }
}

/// Settings for [`trace_region`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSettings {
    pub n_lambda: usize,
    pub solver: SolverSettings,
    pub partition: PartitionSettings,
}

/// Sweeps `λ1` over a uniform grid on `[0, 1]`. Interior points run the
/// partition/power alternation; the endpoints are single-user problems.
/// Failed points are reported, not interpolated.
pub fn trace_region(
    ensemble: &FadingEnsemble,
    qos: &QosSpec,
    params: &SystemParams,
    model: &dyn RateModel,
    settings: &TraceSettings,
) -> Result<RegionTrace> {
    if settings.n_lambda < 2 {
        return Err(Error::InvalidArgument("the lambda grid needs at least 2 points".into()));
    }
    let inputs: [&InputModel; 2] = model.inputs();
    let labels = [inputs[0].label().to_string(), inputs[1].label().to_string()];
    let mut points = Vec::with_capacity(settings.n_lambda);
    let mut reports = Vec::with_capacity(settings.n_lambda);
    let mut warm: Option<FixedPointOutput> = None;
    for i in 0..settings.n_lambda {
        let lambda1 = i as f64 / (settings.n_lambda - 1) as f64;
        if i == 0 || i + 1 == settings.n_lambda {
            let user = if i == 0 { 1 } else { 0 };
            match solve_single_user(ensemble, user, qos, params, model, &settings.solver) {
                Ok(out) => {
                    let c = out.capacity;
                    let (c1, c2) = if user == 0 { (c, 0.0) } else { (0.0, c) };
                    points.push(CapacityPoint::new(lambda1, c1, c2, true));
                    reports.push(PointReport {
                        lambda1,
                        rounds: 0,
                        outer_iterations: out.outer_iterations,
                        fallback: false,
                        warnings: Vec::new(),
                        error: None,
                    });
                }
                Err(e) => {
                    points.push(CapacityPoint::failed(lambda1));
                    reports.push(failed_report(lambda1, &e));
                }
            }
            continue;
        }
        let weights = Weights::new(lambda1)?;
        let result = partition_fixed_point(
            ensemble,
            &weights,
            qos,
            params,
            model,
            &settings.solver,
            &settings.partition,
            warm.as_ref(),
        );
        match result {
            Ok(out) => {
                points.push(CapacityPoint::new(lambda1, out.capacity[0], out.capacity[1], true));
                reports.push(PointReport {
                    lambda1,
                    rounds: out.rounds,
                    outer_iterations: out.outer_iterations,
                    fallback: out.fallback,
                    warnings: out.warnings.clone(),
                    error: None,
                });
                warm = Some(out);
            }
            Err(e) => {
                points.push(CapacityPoint::failed(lambda1));
                reports.push(failed_report(lambda1, &e));
            }
        }
    }
    Ok(RegionTrace {
        points,
        labels,
        reports,
    })
}

fn failed_report(lambda1: f64, e: &Error) -> PointReport {
    PointReport {
        lambda1,
        rounds: 0,
        outer_iterations: 0,
        fallback: false,
        warnings: Vec::new(),
        error: Some(e.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rate_is_its_own_capacity() {
        let r = vec![1.7; 10];
        let w = vec![0.1; 10];
        for theta in [1e-6, 0.01, 1.0, 10.0] {
            assert!((effective_capacity(&r, &w, theta, 100.0).unwrap() - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn small_theta_approaches_mean() {
        let r = [0.3, 1.1, 2.0, 0.0];
        let w = [0.25; 4];
        let mean = ergodic_limit(&r, &w).unwrap();
        let c = effective_capacity(&r, &w, 1e-6, 100.0).unwrap();
        assert!((c - mean).abs() < 1e-3);
        let c = effective_capacity(&r, &w, 1e-8, 100.0).unwrap();
        assert!((c - mean).abs() < 1e-6);
    }

    #[test]
    fn two_point_distribution() {
        // θn = 1: -ln((1 + e^{-2})/2).
        let c = effective_capacity(&[0.0, 2.0], &[0.5, 0.5], 0.01, 100.0).unwrap();
        let want = -((1.0 + (-2.0f64).exp()) / 2.0).ln();
        assert!((c - want).abs() < 1e-14);
        assert!((want - 0.566_219_169_516_973_4).abs() < 1e-12);
    }

    #[test]
    fn zero_theta_dispatches_to_mean() {
        let c = effective_capacity(&[1.0, 3.0], &[0.5, 0.5], 0.0, 100.0).unwrap();
        assert_eq!(c, 2.0);
        assert_eq!(effective_capacity(&[0.0, 0.0], &[0.5, 0.5], 0.1, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn capacity_bounded_by_mean_and_monotone_in_theta() {
        let r: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs() * 3.0).collect();
        let w = vec![1.0 / 50.0; 50];
        let mean = ergodic_limit(&r, &w).unwrap();
        let mut prev = mean;
        for theta in [1e-4, 1e-3, 1e-2, 0.1, 1.0] {
            let c = effective_capacity(&r, &w, theta, 100.0).unwrap();
            assert!(c >= 0.0 && c <= mean + 1e-12);
            assert!(c <= prev + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn huge_exponents_do_not_overflow() {
        let c = effective_capacity(&[50.0, 60.0], &[0.5, 0.5], 10.0, 100.0).unwrap();
        assert!((c - 50.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(effective_capacity(&[1.0], &[0.5, 0.5], 0.1, 100.0).is_err());
        assert!(effective_capacity(&[f64::NAN], &[1.0], 0.1, 100.0).is_err());
    }

    #[test]
    fn convexity_check_flags_interior_point() {
        let trace = RegionTrace {
            points: vec![
                CapacityPoint::new(0.0, 0.0, 1.0, true),
                CapacityPoint::new(0.5, 0.3, 0.3, true),
                CapacityPoint::new(1.0, 1.0, 0.0, true),
            ],
            labels: ["a".into(), "b".into()],
            reports: Vec::new(),
        };
        assert_eq!(trace.convexity_violations(1e-9), vec![1]);
        let good = RegionTrace {
            points: vec![
                CapacityPoint::new(0.0, 0.0, 1.0, true),
                CapacityPoint::new(0.5, 0.7, 0.7, true),
                CapacityPoint::new(1.0, 1.0, 0.0, true),
            ],
            ..trace
        };
        assert!(good.convexity_violations(1e-9).is_empty());
    }
}

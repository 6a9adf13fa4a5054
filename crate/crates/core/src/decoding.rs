//! Successive decoding order per fading state and the alternation between
//! the partition and the power policy.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{FadingEnsemble, SystemParams};
use crate::error::{Error, Result};
use crate::mmse_mi::RateModel;
use crate::power_alloc::{
    run_algorithm1, AlgorithmOutput, LagrangeState, PowerPolicy, QosSpec, RateTable, Region,
    SolverSettings, Weights,
};

const PHASES: usize = 8;

/// One solved point of the boundary curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub z1: f64,
    pub z2: f64,
    /// Residual at `z2`, bits.
    pub residual: f64,
    pub multiple_roots: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodingPartition {
    pub order: Vec<Region>,
    pub boundary: Vec<BoundaryPoint>,
}

impl DecodingPartition {
    pub fn count(&self, region: Region) -> usize {
        self.order.iter().filter(|&&r| r == region).count()
    }

    /// Boundary curve as `z1,z2_star,residual`.
    pub fn write_boundary_csv<W: Write>(&self, header: &[String], mut out: W) -> std::io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "z1,z2_star,residual,multiple_roots")?;
        let mut pts = self.boundary.clone();
        pts.sort_by(|a, b| a.z1.total_cmp(&b.z1));
        for p in pts {
            writeln!(out, "{:.10e},{:.10e},{:.6e},{}", p.z1, p.z2, p.residual, p.multiple_roots)?;
        }
        Ok(())
    }
}

/// Allocations and rate model the boundary is evaluated under.
#[derive(Clone, Copy)]
pub struct PolicyContext<'a> {
    pub model: &'a dyn RateModel,
    pub alpha: [f64; 2],
    pub avg_power: f64,
}

/// `I(x;y) - I(x1;y1) - I(x2;y2)` in bits at `(z1, z2)`, averaged over 8
/// equally spaced relative phases.
pub fn boundary_residual(z1: f64, z2: f64, ctx: &PolicyContext<'_>) -> Result<f64> {
    if !(z1 >= 0.0 && z2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("gains must be >= 0, got ({z1}, {z2})")));
    }
    let snr = [ctx.alpha[0] * ctx.avg_power * z1, ctx.alpha[1] * ctx.avg_power * z2];
    if snr[0] == 0.0 || snr[1] == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for k in 0..PHASES {
        let e = ctx.model.eval(snr, 2.0 * PI * k as f64 / PHASES as f64);
        acc += e.joint - e.single[0] - e.single[1];
    }
    let r = acc / PHASES as f64 / LN_2;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::numeric("decoding", format!("non-finite boundary residual at ({z1}, {z2})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySolution {
    pub z2: f64,
    pub residual: f64,
    /// More than one sign change was found; `z2` is the largest root.
    pub multiple_roots: bool,
}

/// Settings of the partition alternation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSettings {
    pub round_cap: usize,
    /// Grid points of the sign-change scan in `z2`.
    pub scan_points: usize,
    /// Root tolerance on the residual, bits.
    pub boundary_tol: f64,
}

impl Default for PartitionSettings {
    fn default() -> Self {
        Self {
            round_cap: 10,
            scan_points: 32,
            boundary_tol: 1e-7,
        }
    }
}

/// Root of [`boundary_residual`] in `z2 ∈ (0, z2_max]`.
///
/// The scan is geometric from `z2_max·1e-4`; the degenerate root at
/// `z2 = 0` is ignored. `None` when no sign change exists.
pub fn solve_boundary(
    z1: f64,
    ctx: &PolicyContext<'_>,
    z2_max: f64,
    settings: &PartitionSettings,
) -> Result<Option<BoundarySolution>> {
    if !(z1 >= 0.0) {
        return Err(Error::InvalidArgument(format!("z1 must be >= 0, got {z1}")));
    }
    if z1 == 0.0 {
        return Ok(Some(BoundarySolution {
            z2: 0.0,
            residual: 0.0,
            multiple_roots: false,
        }));
    }
    if !(z2_max > 0.0) || ctx.alpha[0] == 0.0 || ctx.alpha[1] == 0.0 {
        return Ok(None);
    }
    let n = settings.scan_points.max(2);
    let lo = z2_max * 1e-4;
    let ratio = (z2_max / lo).powf(1.0 / (n - 1) as f64);
    let grid: Vec<f64> = (0..n).map(|i| lo * ratio.powi(i as i32)).collect();
    let values: Vec<f64> = grid
        .iter()
        .map(|&z2| boundary_residual(z1, z2, ctx))
        .collect::<Result<_>>()?;
    let changes: Vec<usize> = (1..n)
        .filter(|&i| (values[i - 1] > 0.0) != (values[i] > 0.0) && values[i - 1] != 0.0 && values[i] != 0.0)
        .collect();
    let Some(&last) = changes.last() else {
        return Ok(None);
    };
    let (mut a, mut fa, mut b, mut fb) = (grid[last - 1], values[last - 1], grid[last], values[last]);
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    for _ in 0..200 {
        if best.1.abs() < settings.boundary_tol || (b - a) <= 1e-14 * b {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = boundary_residual(z1, m, ctx)?;
        if fm.abs() < best.1.abs() {
            best = (m, fm);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    let _ = fb;
    Ok(Some(BoundarySolution {
        z2: best.0,
        residual: best.1,
        multiple_roots: changes.len() > 1,
    }))
}

/// Strongest channel decoded first; ties go to order (1,2).
pub fn partition_ergodic(ensemble: &FadingEnsemble) -> DecodingPartition {
    DecodingPartition {
        order: ensemble
            .samples()
            .iter()
            .map(|s| if s.z2 > s.z1 { Region::Z } else { Region::Zc })
            .collect(),
        boundary: Vec::new(),
    }
}

/// Tags each sample by the boundary solved under its own allocation,
/// falling back to the strongest-first rule where no root exists.
/// Returns the partition and the number of fallback samples.
pub fn partition_from_policy(
    ensemble: &FadingEnsemble,
    policy: &PowerPolicy,
    model: &dyn RateModel,
    params: &SystemParams,
    settings: &PartitionSettings,
) -> Result<(DecodingPartition, usize, usize)> {
    let z2_max = ensemble.z_quantile(1, 0.999);
    let solved: Vec<Option<BoundarySolution>> = ensemble
        .samples()
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let ctx = PolicyContext {
                model,
                alpha: policy.alpha(k),
                avg_power: params.avg_power,
            };
            solve_boundary(s.z1, &ctx, z2_max, settings)
        })
        .collect::<Result<_>>()?;
    let mut order = Vec::with_capacity(ensemble.len());
    let mut boundary = Vec::new();
    let mut fallback = 0;
    let mut multiple = 0;
    for (s, sol) in ensemble.samples().iter().zip(&solved) {
        match sol {
            Some(b) => {
                order.push(if s.z2 > b.z2 { Region::Z } else { Region::Zc });
                multiple += b.multiple_roots as usize;
                boundary.push(BoundaryPoint {
                    z1: s.z1,
                    z2: b.z2,
                    residual: b.residual,
                    multiple_roots: b.multiple_roots,
                });
            }
            None => {
                fallback += 1;
                order.push(if s.z2 > s.z1 { Region::Z } else { Region::Zc });
            }
        }
    }
    Ok((DecodingPartition { order, boundary }, fallback, multiple))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOutput {
    pub partition: DecodingPartition,
    pub policy: PowerPolicy,
    pub state: LagrangeState,
    pub rates: RateTable,
    pub capacity: [f64; 2],
    pub objective: f64,
    /// Objective after each accepted round.
    pub objective_history: Vec<f64>,
    pub rounds: usize,
    pub outer_iterations: usize,
    /// Some samples were tagged by the strongest-first rule.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

impl FixedPointOutput {
    fn new(partition: DecodingPartition, out: AlgorithmOutput, fallback: bool) -> Self {
        Self {
            partition,
            objective_history: vec![out.objective],
            objective: out.objective,
            capacity: out.capacity,
            policy: out.policy,
            state: out.state,
            rates: out.rates,
            rounds: 1,
            outer_iterations: out.outer_iterations,
            fallback,
            warnings: Vec::new(),
        }
    }
}

/// Alternates the power solve and the boundary re-solve until the partition
/// repeats. A round is kept only if it does not lower the objective.
#[allow(clippy::too_many_arguments)]
pub fn partition_fixed_point(
    ensemble: &FadingEnsemble,
    weights: &Weights,
    qos: &QosSpec,
    params: &SystemParams,
    model: &dyn RateModel,
    solver: &SolverSettings,
    settings: &PartitionSettings,
    warm: Option<&FixedPointOutput>,
) -> Result<FixedPointOutput> {
    let mut partition = match warm {
        Some(w) if w.partition.order.len() == ensemble.len() => DecodingPartition {
            order: w.partition.order.clone(),
            boundary: Vec::new(),
        },
        _ => partition_ergodic(ensemble),
    };
    let warm_pair = warm.map(|w| (&w.policy, &w.state));
    let first = run_algorithm1(ensemble, &partition.order, weights, qos, params, model, solver, warm_pair)?;
    let ergodic = qos.theta[0] == 0.0 && qos.theta[1] == 0.0;
    if ergodic || !qos.equal_exponents() {
        let mut out = FixedPointOutput::new(partition_ergodic(ensemble), first, true);
        if warm.is_some() && out.partition.order != partition.order {
            // A warm partition from another weight is not the ergodic one.
            let again = run_algorithm1(ensemble, &out.partition.order, weights, qos, params, model, solver, Some((&out.policy, &out.state)))?;
            out = FixedPointOutput::new(out.partition, again, true);
        }
        if !ergodic {
            out.warnings
                .push("unequal QoS exponents: strongest-first order used as a heuristic".into());
        }
        return Ok(out);
    }
    let mut best = FixedPointOutput::new(partition.clone(), first, false);
    let mut outer = best.outer_iterations;
    for round in 1..=settings.round_cap {
        let (next, fallback, multiple) = partition_from_policy(ensemble, &best.policy, model, params, settings)?;
        best.fallback = fallback > 0;
        if multiple > 0 {
            let msg = format!("{multiple} boundary solves found multiple roots; the largest was used");
            if !best.warnings.contains(&msg) {
                best.warnings.push(msg);
            }
        }
        if next.order == partition.order {
            best.partition = next;
            best.rounds = round;
            best.outer_iterations = outer;
            return Ok(best);
        }
        let cand = run_algorithm1(ensemble, &next.order, weights, qos, params, model, solver, Some((&best.policy, &best.state)))?;
        outer += cand.outer_iterations;
        if cand.objective < best.objective - 1e-12 * best.objective.abs() {
            best.warnings
                .push(format!("round {round} lowered the objective; previous partition kept"));
            best.rounds = round;
            best.outer_iterations = outer;
            return Ok(best);
        }
        let mut history = std::mem::take(&mut best.objective_history);
        let warnings = std::mem::take(&mut best.warnings);
        history.push(cand.objective);
        partition = next.clone();
        best = FixedPointOutput::new(next, cand, fallback > 0);
        best.objective_history = history;
        best.warnings = warnings;
    }
    best.warnings.push(format!(
        "partition still changing after {} rounds; best round returned",
        settings.round_cap
    ));
    best.rounds = settings.round_cap;
    best.outer_iterations = outer;
    Ok(best)
}

//! Buffer simulation driven by a per-frame service process, and the tail
//! decay estimate used to check effective-capacity numbers empirically.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

const BATCHES: usize = 20;
const THRESHOLDS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueTrace {
    /// Occupancy in bits after burn-in.
    pub occupancy: Vec<f64>,
    /// Arrival rate, bits/s/Hz.
    pub arrival_rate: f64,
    pub frames: usize,
    /// Arrivals meet or exceed the mean service rate.
    pub unstable: bool,
    pub warnings: Vec<String>,
}

/// Lindley recursion `Q ← max(Q + (a - r)·n, 0)` with `r` drawn i.i.d. from
/// the weighted rate table. The first 10% of frames are discarded.
pub fn simulate_queue(
    rates: &[f64],
    weights: &[f64],
    arrival_rate: f64,
    frames: usize,
    n: f64,
    seed: u64,
) -> Result<QueueTrace> {
    if rates.is_empty() || rates.len() != weights.len() {
        return Err(Error::InvalidArgument("rate table and weights must be non-empty and equally long".into()));
    }
    if !(arrival_rate > 0.0 && arrival_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("arrival rate must be positive, got {arrival_rate}")));
    }
    if frames < 10_000 {
        return Err(Error::InvalidArgument(format!("need at least 10000 frames, got {frames}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || rates.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("weights must be >= 0 and rates finite".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cumulative.push(acc);
    }
    let mean: f64 = rates.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / total;
    let max_rate = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut warnings = Vec::new();
    let unstable = arrival_rate >= mean;
    if unstable {
        warnings.push(format!(
            "arrival rate {arrival_rate} is not below the mean service rate {mean}; the queue grows without bound"
        ));
    }
    if arrival_rate >= max_rate && rates.iter().all(|r| *r == max_rate) {
        warnings.push("constant service at or below the arrival rate: divergent queue".into());
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let burn = frames / 10;
    let mut q = 0.0f64;
    let mut occupancy = Vec::with_capacity(frames - burn);
    for t in 0..frames {
        let u: f64 = rng.gen();
        let k = cumulative.partition_point(|&c| c <= u).min(rates.len() - 1);
        q = (q + (arrival_rate - rates[k]) * n).max(0.0);
        if t >= burn {
            occupancy.push(q);
        }
    }
    Ok(QueueTrace {
        occupancy,
        arrival_rate,
        frames,
        unstable,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayEstimate {
    pub theta: f64,
    pub std_error: f64,
    /// `(q, ln Pr(Q ≥ q))` over the fit window.
    pub tail: Vec<(f64, f64)>,
}

impl DecayEstimate {
    pub fn write_tail_csv<W: Write>(&self, header: &[String], mut out: W) -> std::io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "q,log_probability")?;
        for (q, lp) in &self.tail {
            writeln!(out, "{q:.6e},{lp:.6e}")?;
        }
        Ok(())
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

/// Least-squares slope of `ln Pr(Q ≥ q)` over `thresholds`; `None` when a
/// threshold has no mass.
fn tail_slope(sorted: &[f64], thresholds: &[f64]) -> Option<(f64, Vec<(f64, f64)>)> {
    let n = sorted.len() as f64;
    let mut pts = Vec::with_capacity(thresholds.len());
    for &q in thresholds {
        let above = sorted.len() - sorted.partition_point(|&x| x < q);
        if above == 0 {
            return None;
        }
        pts.push((q, (above as f64 / n).ln()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some((sxy / sxx, pts))
}

/// Tail decay rate `θ̂` from a stable trace.
///
/// The thresholds are equally spaced between the 50th and 99th percentiles
/// of the positive occupancies. The standard error comes from the spread of
/// the same fit over 20 consecutive batches.
pub fn estimate_decay(trace: &QueueTrace) -> Result<DecayEstimate> {
    let mut positive: Vec<f64> = trace.occupancy.iter().copied().filter(|&q| q > 0.0).collect();
    if positive.len() < 100 {
        return Err(Error::Estimation(format!(
            "only {} positive occupancy samples; at least 100 are needed",
            positive.len()
        )));
    }
    positive.sort_by(f64::total_cmp);
    let lo = percentile(&positive, 0.5);
    let hi = percentile(&positive, 0.99);
    if !(hi > lo) {
        return Err(Error::Estimation("degenerate occupancy tail".into()));
    }
    let thresholds: Vec<f64> = (0..THRESHOLDS)
        .map(|i| lo + (hi - lo) * i as f64 / (THRESHOLDS - 1) as f64)
        .collect();
    let mut all = trace.occupancy.clone();
    all.sort_by(f64::total_cmp);
    let (slope, tail) = tail_slope(&all, &thresholds)
        .ok_or_else(|| Error::Estimation("empty tail threshold".into()))?;
    if !(slope < 0.0) {
        return Err(Error::Estimation(format!("tail does not decay (slope {slope})")));
    }
    let size = trace.occupancy.len() / BATCHES;
    let mut estimates = Vec::with_capacity(BATCHES);
    for b in 0..BATCHES {
        let mut chunk = trace.occupancy[b * size..(b + 1) * size].to_vec();
        chunk.sort_by(f64::total_cmp);
        // Batches that never reach the top threshold use the reachable part.
        let usable: Vec<f64> = thresholds
            .iter()
            .copied()
            .take_while(|&q| chunk.last().is_some_and(|&top| top >= q))
            .collect();
        if usable.len() >= 3 {
            if let Some((s, _)) = tail_slope(&chunk, &usable) {
                estimates.push(-s);
            }
        }
    }
    let std_error = if estimates.len() >= 2 {
        let k = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / k;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        f64::NAN
    };
    Ok(DecayEstimate {
        theta: -slope,
        std_error,
        tail,
    })
}

//! Input signal distributions.
//!
//! Finite constellations are normalized to unit average energy so that the
//! transmit power lives entirely in the power policy. The Gaussian input is a
//! separate variant with closed-form information measures.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the prior sum and average energy.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstellationPoint {
    pub value: Complex64,
    pub prior: f64,
}

impl ConstellationPoint {
    pub fn new(re: f64, im: f64, prior: f64) -> Self {
        Self {
            value: Complex64::new(re, im),
            prior,
        }
    }
}

/// Which constellation invariant failed, with the offending residual.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewPoints(usize),
    NegativePrior { index: usize, prior: f64 },
    NonFinite { index: usize },
    PriorSum { sum: f64 },
    Energy { energy: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewPoints(n) => write!(f, "need at least 2 points, got {n}"),
            Violation::NegativePrior { index, prior } => {
                write!(f, "point {index} has negative prior {prior}")
            }
            Violation::NonFinite { index } => write!(f, "point {index} is not finite"),
            Violation::PriorSum { sum } => {
                write!(f, "priors sum {sum} (residual {:e})", sum - 1.0)
            }
            Violation::Energy { energy } => {
                write!(f, "average energy {energy} (residual {:e})", energy - 1.0)
            }
        }
    }
}

/// Checks the constellation invariants: at least two points, nonnegative
/// priors summing to one, unit average energy.
pub fn validate(points: &[ConstellationPoint]) -> std::result::Result<(), Violation> {
    if points.len() < 2 {
        return Err(Violation::TooFewPoints(points.len()));
    }
    for (index, p) in points.iter().enumerate() {
        if !(p.value.re.is_finite() && p.value.im.is_finite() && p.prior.is_finite()) {
            return Err(Violation::NonFinite { index });
        }
        if p.prior < 0.0 {
            return Err(Violation::NegativePrior {
                index,
                prior: p.prior,
            });
        }
    }
    let sum: f64 = points.iter().map(|p| p.prior).sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Violation::PriorSum { sum });
    }
    let energy: f64 = points.iter().map(|p| p.prior * p.value.norm_sqr()).sum();
    if (energy - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Violation::Energy { energy });
    }
    Ok(())
}

/// A validated finite input alphabet. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constellation {
    points: Vec<ConstellationPoint>,
    label: String,
}

impl Constellation {
    pub fn new(points: Vec<ConstellationPoint>, label: impl Into<String>) -> Result<Self> {
        validate(&points)
            .map_err(|v| Error::InvalidArgument(format!("constellation invariant violated: {v}")))?;
        Ok(Self {
            points,
            label: label.into(),
        })
    }

    pub fn points(&self) -> &[ConstellationPoint] {
        &self.points
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Complex64 {
        self.points.iter().map(|p| p.value * p.prior).sum()
    }

    pub fn energy(&self) -> f64 {
        self.points.iter().map(|p| p.prior * p.value.norm_sqr()).sum()
    }

    /// Largest `k` such that rotating the alphabet by `2π/k` maps it onto
    /// itself with matching priors.
    pub fn rotation_order(&self) -> usize {
        (1..=self.points.len())
            .rev()
            .find(|&k| self.invariant_under(|v| v * Complex64::from_polar(1.0, 2.0 * PI / k as f64)))
            .unwrap_or(1)
    }

    /// Whether the alphabet is closed under complex conjugation.
    pub fn conjugate_symmetric(&self) -> bool {
        self.invariant_under(|v| v.conj())
    }

    /// Whether the alphabet is closed under negation.
    pub fn negation_symmetric(&self) -> bool {
        self.invariant_under(|v| -v)
    }

    fn invariant_under(&self, map: impl Fn(Complex64) -> Complex64) -> bool {
        const TOL: f64 = 1e-9;
        self.points.iter().all(|p| {
            let image = map(p.value);
            self.points
                .iter()
                .any(|q| (q.value - image).norm() < TOL && (q.prior - p.prior).abs() < TOL)
        })
    }
}

fn snap(x: f64) -> f64 {
    if x.abs() < 1e-15 {
        0.0
    } else {
        x
    }
}

/// Equiprobable `order`-PSK on the unit circle, first point at angle 0.
pub fn make_psk(order: usize) -> Result<Constellation> {
    if order < 2 {
        return Err(Error::InvalidArgument(format!(
            "PSK order must be at least 2, got {order}"
        )));
    }
    let prior = 1.0 / order as f64;
    let points = (0..order)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / order as f64;
            ConstellationPoint::new(snap(angle.cos()), snap(angle.sin()), prior)
        })
        .collect();
    let label = if order == 2 {
        "bpsk".to_string()
    } else {
        format!("{order}-psk")
    };
    Constellation::new(points, label)
}

/// Equiprobable square QAM scaled to unit average energy.
pub fn make_qam(order: usize) -> Result<Constellation> {
    let side = (order as f64).sqrt().round() as usize;
    if order < 4 || side * side != order {
        return Err(Error::InvalidArgument(format!(
            "QAM order must be a perfect square of at least 4, got {order}"
        )));
    }
    // Unnormalized levels ±1, ±3, ... have average energy 2(M-1)/3.
    let scale = (1.5 / (order as f64 - 1.0)).sqrt();
    let prior = 1.0 / order as f64;
    let level = |i: usize| (2.0 * i as f64 - side as f64 + 1.0) * scale;
    let mut points = Vec::with_capacity(order);
    for i in 0..side {
        for q in 0..side {
            points.push(ConstellationPoint::new(level(i), level(q), prior));
        }
    }
    Constellation::new(points, format!("{order}-qam"))
}

/// Input signal model of one transmitter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InputModel {
    Finite(Constellation),
    /// Unit-variance circularly symmetric complex Gaussian.
    GaussianAnalytic,
}

impl InputModel {
    pub fn label(&self) -> &str {
        match self {
            InputModel::Finite(c) => c.label(),
            InputModel::GaussianAnalytic => "gaussian",
        }
    }

    pub fn alphabet_size(&self) -> Option<usize> {
        match self {
            InputModel::Finite(c) => Some(c.len()),
            InputModel::GaussianAnalytic => None,
        }
    }

    pub fn as_finite(&self) -> Option<&Constellation> {
        match self {
            InputModel::Finite(c) => Some(c),
            InputModel::GaussianAnalytic => None,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, InputModel::GaussianAnalytic)
    }

    /// Resolves a preset name: `bpsk`, `qpsk`, `N-psk`, `N-qam`, `gaussian`.
    pub fn preset(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        let parse_order = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("unknown input preset `{name}`")))
        };
        match lower.as_str() {
            "gaussian" => Ok(InputModel::GaussianAnalytic),
            "bpsk" => make_psk(2).map(InputModel::Finite),
            "qpsk" => make_psk(4).map(InputModel::Finite),
            _ => {
                if let Some(order) = lower.strip_suffix("-qam").or_else(|| lower.strip_suffix("qam")) {
                    make_qam(parse_order(order)?).map(InputModel::Finite)
                } else if let Some(order) =
                    lower.strip_suffix("-psk").or_else(|| lower.strip_suffix("psk"))
                {
                    make_psk(parse_order(order)?).map(InputModel::Finite)
                } else {
                    Err(Error::InvalidArgument(format!("unknown input preset `{name}`")))
                }
            }
        }
    }
}

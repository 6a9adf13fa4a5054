//! Tensor Gauss–Hermite rules for expectations over circularly symmetric
//! complex Gaussian noise `w ~ CN(0, 1)`.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::hermite::GaussHermite;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Node count and target accuracy (nats) for quadrature-based measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSpec {
    pub nodes: usize,
    pub tolerance: f64,
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        Self {
            nodes: 48,
            tolerance: 1e-4,
        }
    }
}

impl IntegrationSpec {
    pub fn with_nodes(nodes: usize) -> Self {
        Self {
            nodes,
            ..Self::default()
        }
    }

    /// Coarser companion rule used to estimate the integration error.
    pub(crate) fn companion_nodes(&self) -> usize {
        (self.nodes * 3 / 4).max(4)
    }
}

/// Nodes `w` and probability weights for `E{g(w)}`, `w ~ CN(0,1)`.
#[derive(Debug)]
pub struct ComplexRule {
    n: usize,
    points: Vec<(Complex64, f64)>,
    max_radius: f64,
    line: OnceLock<Vec<(f64, f64)>>,
}

/// Tensor nodes whose weight falls below this are dropped.
const PRUNE_WEIGHT: f64 = 1e-16;

/// One-dimensional rule for `t ~ N(0, 1/2)` with `n` nodes, weights summing to 1.
fn hermite_line(n: usize) -> Vec<(f64, f64)> {
    let gh = GaussHermite::new(NonZeroUsize::new(n.max(1)).unwrap());
    // ∫ e^{-t²} g(t) dt ≈ Σ w g(t); Re w and Im w each have density e^{-t²}/√π.
    let mut pts: Vec<(f64, f64)> = gh
        .iter()
        .map(|(x, w)| (*x, *w / std::f64::consts::PI.sqrt()))
        .filter(|p| p.1 > 0.0)
        .collect();
    let total: f64 = pts.iter().map(|p| p.1).sum();
    for p in &mut pts {
        p.1 /= total;
    }
    pts
}

impl ComplexRule {
    fn build(n: usize) -> Self {
        let one_d = hermite_line(n);
        let mut points = Vec::with_capacity(n * n);
        for &(a, wa) in &one_d {
            for &(b, wb) in &one_d {
                let w = wa * wb;
                if w >= PRUNE_WEIGHT {
                    points.push((Complex64::new(a, b), w));
                }
            }
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        for p in &mut points {
            p.1 /= total;
        }
        let max_radius = points.iter().map(|p| p.0.norm()).fold(0.0, f64::max);
        Self {
            n,
            points,
            max_radius,
            line: OnceLock::new(),
        }
    }

    /// Shared rule with `n` nodes per real dimension.
    pub fn get(n: usize) -> Arc<ComplexRule> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ComplexRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(ComplexRule::build(n)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(Complex64, f64)] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = (Complex64, f64)> + '_ {
        self.points.iter().copied()
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn expect<F: FnMut(Complex64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(w, p)| p * f(w)).sum()
    }

    /// Companion rule for integrands that depend on `w` only through one
    /// real projection `Re(ū·w) ~ N(0, 1/2)`. It uses `4n` nodes (between 64
    /// and 1024), which costs far less than the tensor rule.
    pub fn line(&self) -> &[(f64, f64)] {
        self.line.get_or_init(|| hermite_line((4 * self.n).clamp(64, 1024)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_form_probability() {
        let rule = ComplexRule::get(20);
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn low_order_moments_exact() {
        let rule = ComplexRule::get(16);
        assert!((rule.expect(|w| w.norm_sqr()) - 1.0).abs() < 1e-13);
        assert!(rule.expect(|w| w.re).abs() < 1e-14);
        assert!((rule.expect(|w| w.re * w.re) - 0.5).abs() < 1e-13);
        // E|w|⁴ = 2 for CN(0,1).
        assert!((rule.expect(|w| w.norm_sqr().powi(2)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_characteristic_function() {
        // E{cos(a·Re w)} = exp(-a²/4).
        let rule = ComplexRule::get(32);
        for a in [0.5, 1.0, 3.0] {
            let got = rule.expect(|w| (a * w.re).cos());
            assert!((got - (-(a * a) / 4.0f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn cache_returns_same_rule() {
        let a = ComplexRule::get(12);
        let b = ComplexRule::get(12);
        assert!(Arc::ptr_eq(&a, &b));
        assert!(a.len() <= 144 && a.len() > 100);
    }

    #[test]
    fn line_rule_moments() {
        let rule = ComplexRule::get(16);
        let line = rule.line();
        assert_eq!(line.len(), 64);
        let m2: f64 = line.iter().map(|(t, w)| w * t * t).sum();
        let m4: f64 = line.iter().map(|(t, w)| w * t.powi(4)).sum();
        assert!((m2 - 0.5).abs() < 1e-13);
        assert!((m4 - 0.75).abs() < 1e-12);
    }
}

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::channel::{sample_ensemble, RicianSpec};
use crate::constellation::InputModel;
use crate::mmse_mi::DirectModel;
use crate::quadrature::IntegrationSpec;

fn gaussian() -> DirectModel {
    DirectModel::new(InputModel::GaussianAnalytic, InputModel::GaussianAnalytic, &IntegrationSpec::default())
}

fn bpsk() -> DirectModel {
    let b = InputModel::preset("bpsk").unwrap();
    DirectModel::new(b.clone(), b, &IntegrationSpec::with_nodes(16))
}

fn params() -> SystemParams {
    SystemParams::new(1.0, 100.0, 1.0).unwrap()
}

fn state(epsilon: f64) -> LagrangeState {
    LagrangeState {
        epsilon,
        ..LagrangeState::initial()
    }
}

fn sample(z1: f64, z2: f64, phase: f64) -> ChannelSample {
    ChannelSample::new(
        Complex64::new(z1.sqrt(), 0.0),
        Complex64::from_polar(z2.sqrt(), phase),
        1.0,
    )
}

fn small_ensemble(n: usize, seed: u64) -> FadingEnsemble {
    let spec = RicianSpec::new(-6.88, 1.0).unwrap();
    sample_ensemble(spec, spec, n, seed).unwrap()
}

#[test]
fn gaussian_single_user_is_water_filling() {
    let m = gaussian();
    let p = params();
    let qos = QosSpec::new(0.0, 0.0, &p).unwrap();
    let w = Weights::new(1.0).unwrap();
    let st = state(0.5);
    let ctx = KktContext { model: &m, params: &p, qos: &qos, weights: &w, state: &st };
    for z1 in [0.5, 1.0, 3.0, 10.0] {
        let a = solve_alpha_pair(&ctx, &sample(z1, 0.7, 0.3), Region::Z, &SolverSettings::default()).unwrap();
        let want = (1.0 / (0.5 * LN_2) - 1.0 / z1).max(0.0);
        assert!((a[0] - want).abs() < 1e-8, "z1={z1}: {} vs {want}", a[0]);
        assert_eq!(a[1], 0.0);
    }
}

#[test]
fn expensive_power_or_dead_channel_gives_nothing() {
    let m = bpsk();
    let p = params();
    let qos = QosSpec::new(0.01, 0.01, &p).unwrap();
    let w = Weights::new(0.5).unwrap();
    let settings = SolverSettings::default();
    let st = state(10.0);
    let ctx = KktContext { model: &m, params: &p, qos: &qos, weights: &w, state: &st };
    for region in [Region::Z, Region::Zc] {
        assert_eq!(solve_alpha_pair(&ctx, &sample(3.0, 2.0, 0.4), region, &settings).unwrap(), [0.0, 0.0]);
    }
    let st = state(0.01);
    let ctx = KktContext { state: &st, ..ctx };
    assert_eq!(solve_alpha_pair(&ctx, &sample(0.0, 0.0, 0.0), Region::Z, &settings).unwrap(), [0.0, 0.0]);
}

#[test]
fn zero_weight_leaves_only_cross_term() {
    let m = bpsk();
    let p = params();
    let qos = QosSpec::new(0.01, 0.01, &p).unwrap();
    let w = Weights::new(0.0).unwrap();
    let st = state(0.1);
    let s = sample(1.3, 0.8, 0.9);
    let a = [0.4, 0.6];
    let res = kkt_residual_z(&m, &s, a, &st, &w, &qos, &p).unwrap();
    let sr = sample_rates(&m, &Point::new(&s, &p), Region::Z, a);
    let f2 = (-0.01 * 100.0 * sr.rates[1]).exp();
    assert!((res[0] - (f2 * sr.grad[1][0] - 0.1)).abs() < 1e-14);
    assert!(sr.grad[1][0] < 0.0);
}

/// Per-sample objective for fixed `ε`, `ψ` and `θ = 0`.
fn ergodic_lagrangian(m: &dyn RateModel, s: &ChannelSample, region: Region, w: &Weights, eps: f64, a: [f64; 2]) -> f64 {
    let sr = sample_rates(m, &Point::new(s, &params()), region, a);
    w.lambda[0] * sr.rates[0] + w.lambda[1] * sr.rates[1] - eps * (a[0] + a[1])
}

#[test]
fn gaussian_pair_matches_grid_search() {
    let m = gaussian();
    let p = params();
    let qos = QosSpec::new(0.0, 0.0, &p).unwrap();
    let settings = SolverSettings::default();
    let eps = 0.5;
    let st = state(eps);
    for (lambda1, z1, z2) in [(0.5, 1.2, 0.6), (0.5, 0.5, 1.5), (0.3, 1.0, 1.4), (0.7, 2.0, 0.9)] {
        let w = Weights::new(lambda1).unwrap();
        let ctx = KktContext { model: &m, params: &p, qos: &qos, weights: &w, state: &st };
        let s = sample(z1, z2, 0.0);
        for region in [Region::Z, Region::Zc] {
            let a = solve_alpha_pair(&ctx, &s, region, &settings).unwrap();
            let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
            for i in 0..=4000 {
                for j in (0..=4000).step_by(1) {
                    let g = [i as f64 * 1e-3, j as f64 * 1e-3];
                    if (g[0] - a[0]).abs() > 0.05 && (g[1] - a[1]).abs() > 0.05 && (i % 10 != 0 || j % 10 != 0) {
                        continue;
                    }
                    let v = ergodic_lagrangian(&m, &s, region, &w, eps, g);
                    if v > best.0 {
                        best = (v, g);
                    }
                }
            }
            let mine = ergodic_lagrangian(&m, &s, region, &w, eps, a);
            assert!(mine >= best.0 - 1e-6, "{lambda1} {region:?}: {mine} < {}", best.0);
            assert!((a[0] - best.1[0]).abs() <= 2e-3 && (a[1] - best.1[1]).abs() <= 2e-3, "{a:?} vs {:?}", best.1);
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Sweep {
    All,
    /// Only the equalities whose rate is decoded without a weighted cross term.
    Direct,
    /// One transmitter with all the weight and no interference.
    Clean,
}

fn random_residual_sweeps(m: &dyn RateModel, seed: u64, mode: Sweep) -> Option<String> {
    let p = params();
    let qos = QosSpec::new(0.01, 0.01, &p).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let st = LagrangeState {
        epsilon: 0.05,
        psi: [0.6, 0.7],
        log_psi: [0.6f64.ln(), 0.7f64.ln()],
    };
    for _ in 0..100 {
        let s = sample(rng.gen_range(0.05..4.0), rng.gen_range(0.05..4.0), rng.gen_range(0.0..std::f64::consts::TAU));
        let mut w = Weights::new(rng.gen_range(0.0..1.0)).unwrap();
        let other: f64 = rng.gen_range(0.0..3.0);
        let region = if rng.gen_bool(0.5) { Region::Z } else { Region::Zc };
        for i in 0..2 {
            if mode == Sweep::Clean {
                w = Weights::new(if i == 0 { 1.0 } else { 0.0 }).unwrap();
            }
            let region = match mode {
                Sweep::All => region,
                Sweep::Direct => [Region::Zc, Region::Z][i],
                Sweep::Clean => [Region::Z, Region::Zc][i],
            };
            let mut prev = f64::INFINITY;
            for step in 0..60 {
                let x = step as f64 * 0.1;
                let a = if i == 0 { [x, other] } else { [other, x] };
                let ctx = KktContext { model: m, params: &p, qos: &qos, weights: &w, state: &st };
                let r = ctx.residual(&s, region, a).unwrap()[i];
                if r > prev + 1e-9 {
                    return Some(format!("{region:?} user {i} at {x}: {r} > {prev}"));
                }
                prev = r;
            }
        }
    }
    None
}

#[test]
fn residuals_decrease_in_own_allocation() {
    assert_eq!(random_residual_sweeps(&gaussian(), 11, Sweep::Direct), None);
    let b = InputModel::preset("bpsk").unwrap();
    let m = DirectModel::new(b.clone(), b, &IntegrationSpec::with_nodes(32));
    assert_eq!(random_residual_sweeps(&m, 11, Sweep::Clean), None);
}

#[test]
fn finite_alphabet_residuals_can_rise() {
    // The weighted cross term, and for BPSK the collisions between the two
    // images, bend residuals upward in places; the root walk only assumes
    // local brackets.
    assert!(random_residual_sweeps(&gaussian(), 11, Sweep::All).is_some());
    let b = InputModel::preset("bpsk").unwrap();
    let m = DirectModel::new(b.clone(), b, &IntegrationSpec::with_nodes(32));
    assert!(random_residual_sweeps(&m, 11, Sweep::Direct).is_some());
}

#[test]
fn decreasing_root_handles_edges() {
    assert_eq!(decreasing_root(|x| Ok(-1.0 - x), 3.0, 1e-12, 100).unwrap(), 0.0);
    let r = decreasing_root(|x| Ok(2.0 - x), 0.0, 1e-12, 100).unwrap();
    assert!((r - 2.0).abs() < 1e-10);
    let r = decreasing_root(|x| Ok(1.0 / (1.0 + x) - 1e-6), 5.0, 1e-15, 200).unwrap();
    assert!((r - 999_999.0).abs() < 1e-3);
    assert!(decreasing_root(|_| Ok(1.0), 1.0, 1e-12, 100).is_err());
}

#[test]
fn weight_on_one_transmitter_starves_the_other() {
    let m = bpsk();
    let p = params();
    let ens = small_ensemble(40, 3);
    let qos = QosSpec::new(0.01, 0.01, &p).unwrap();
    let regions = vec![Region::Z; ens.len()];
    let out = run_algorithm1(&ens, &regions, &Weights::new(1.0).unwrap(), &qos, &p, &m, &SolverSettings::default(), None).unwrap();
    assert!(out.policy.alpha2.iter().all(|&a| a == 0.0));
    assert!((out.policy.expected_power(&ens) - 1.0).abs() <= 1e-3);
    assert_eq!(out.capacity[1], 0.0);
    assert!(out.capacity[0] > 0.0);
}

#[test]
fn converged_policy_satisfies_kkt_and_beats_baselines() {
    let m = bpsk();
    let p = params();
    let ens = small_ensemble(60, 7);
    let qos = QosSpec::new(0.01, 0.01, &p).unwrap();
    let w = Weights::new(0.5).unwrap();
    let regions: Vec<Region> = ens
        .samples()
        .iter()
        .map(|s| if s.z2 > s.z1 { Region::Z } else { Region::Zc })
        .collect();
    let settings = SolverSettings::default();
    let out = run_algorithm1(&ens, &regions, &w, &qos, &p, &m, &settings, None).unwrap();
    assert!(!out.budget_slack);
    assert!((out.policy.expected_power(&ens) - 1.0).abs() <= 1e-3);
    let eps = out.state.epsilon;
    for (k, s) in ens.samples().iter().enumerate() {
        let a = out.policy.alpha(k);
        let ctx = KktContext { model: &m, params: &p, qos: &qos, weights: &w, state: &out.state };
        let r = ctx.residual(s, regions[k], a).unwrap();
        for i in 0..2 {
            if a[i] > 0.0 {
                assert!(r[i].abs() < 1e-6 * eps, "sample {k} user {i}: {}", r[i] / eps);
            } else {
                assert!(r[i] <= 1e-6 * eps);
            }
        }
    }
    // ψ consistency.
    let wts: Vec<f64> = ens.weights().collect();
    for j in 0..2 {
        let psi = log_moment(out.rates.rates(j), &wts, 0.01, 100.0).unwrap().exp();
        assert!((psi - out.state.psi[j]).abs() < 1e-6);
    }
    let objective = |pol: &PowerPolicy| {
        let rt = rate_table(&ens, &regions, pol, &m, &p).unwrap();
        let c = capacities(&rt, &ens, &qos).unwrap();
        0.5 * c[0] + 0.5 * c[1]
    };
    assert!((objective(&out.policy) - out.objective).abs() < 1e-12);
    let uniform = PowerPolicy {
        alpha1: vec![0.5; ens.len()],
        alpha2: vec![0.5; ens.len()],
    };
    assert!(out.objective >= objective(&uniform));
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..20 {
        let raw: Vec<[f64; 2]> = (0..ens.len()).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let mut pol = PowerPolicy::from_pairs(&raw);
        let total = pol.expected_power(&ens);
        pol.alpha1.iter_mut().chain(pol.alpha2.iter_mut()).for_each(|a| *a /= total);
        assert!(out.objective >= objective(&pol));
    }
}

#[test]
fn warm_start_reaches_the_same_point() {
    let m = bpsk();
    let p = params();
    let ens = small_ensemble(30, 9);
    let qos = QosSpec::new(0.05, 0.05, &p).unwrap();
    let regions = vec![Region::Zc; ens.len()];
    let settings = SolverSettings::default();
    let cold = run_algorithm1(&ens, &regions, &Weights::new(0.4).unwrap(), &qos, &p, &m, &settings, None).unwrap();
    let near = run_algorithm1(&ens, &regions, &Weights::new(0.45).unwrap(), &qos, &p, &m, &settings, None).unwrap();
    let warm = run_algorithm1(
        &ens,
        &regions,
        &Weights::new(0.4).unwrap(),
        &qos,
        &p,
        &m,
        &settings,
        Some((&near.policy, &near.state)),
    )
    .unwrap();
    assert!((cold.objective - warm.objective).abs() < 1e-6);
    for k in 0..ens.len() {
        assert!((cold.policy.alpha1[k] - warm.policy.alpha1[k]).abs() < 1e-4);
    }
}

#[test]
fn single_user_endpoint() {
    let m = gaussian();
    let p = params();
    let ens = small_ensemble(50, 1);
    let qos = QosSpec::new(0.0, 0.0, &p).unwrap();
    let out = solve_single_user(&ens, 1, &qos, &p, &m, &SolverSettings::default()).unwrap();
    // Ergodic water-filling: α = (1/(ε ln 2) - 1/z)+ with E{α} = 1.
    let eps = out.algorithm.state.epsilon;
    let level = 1.0 / (eps * LN_2);
    let power: f64 = ens.samples().iter().map(|s| s.weight * (level - 1.0 / s.z2).max(0.0)).sum();
    assert!((power - 1.0).abs() < 1e-5);
    assert!(out.algorithm.policy.alpha1.iter().all(|&a| a == 0.0));
}

#[test]
fn policy_csv_has_one_row_per_sample() {
    let ens = small_ensemble(5, 2);
    let regions = vec![Region::Z; 5];
    let pol = PowerPolicy::zeros(5);
    let rates = RateTable {
        r1: vec![0.0; 5],
        r2: vec![0.0; 5],
    };
    let mut buf = Vec::new();
    write_policy_csv(&ens, &regions, &pol, &rates, &["fingerprint x".into()], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("# fingerprint x\nsample,z1,z2,region"));
}

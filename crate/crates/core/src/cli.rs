//! Command orchestration behind the `macap` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};

use crate::capacity::{effective_capacity, trace_region, RegionTrace, TraceSettings};
use crate::channel::{sample_ensemble, FadingEnsemble};
use crate::constellation::InputModel;
use crate::decoding::{partition_fixed_point, partition_from_policy};
use crate::error::{Error, Result};
use crate::mmse_mi::TabulatedModel;
use crate::power_alloc::{
    solve_single_user, write_policy_csv, PowerPolicy, QosSpec, RateTable, Region, Weights,
};
use crate::queue::{estimate_decay, simulate_queue};
use crate::scenario::{RunSpec, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Region,
    Boundary,
    Validate,
    Policy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Region => "region",
            Command::Boundary => "boundary",
            Command::Validate => "validate",
            Command::Policy => "policy",
        }
    }
}

/// Files written by [`run`] and the first error met along the way. Runs
/// keep going after a failure so every artifact that can be produced is.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub report: PathBuf,
    pub error: Option<Error>,
}

/// Exit status for an error category.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Parse(_) => 2,
        Error::Convergence { .. } => 3,
        Error::Numeric { .. } => 4,
        Error::Estimation(_) => 5,
        Error::Io(_) => 6,
    }
}

struct Models {
    cache: Vec<([String; 2], Arc<TabulatedModel>)>,
}

impl Models {
    fn get(&mut self, inputs: &[InputModel; 2], scenario: &Scenario) -> Arc<TabulatedModel> {
        let key = [inputs[0].label().to_string(), inputs[1].label().to_string()];
        if let Some((_, m)) = self.cache.iter().find(|(k, _)| *k == key) {
            return m.clone();
        }
        let m = Arc::new(TabulatedModel::new(inputs[0].clone(), inputs[1].clone(), &scenario.table));
        self.cache.push((key, m.clone()));
        m
    }
}

/// Allocation at one weight: single-user at the ends, the partition
/// alternation inside.
struct PointSolution {
    regions: Vec<Region>,
    policy: PowerPolicy,
    rates: RateTable,
    capacity: [f64; 2],
    objective: f64,
    epsilon: f64,
    psi: [f64; 2],
    warnings: Vec<String>,
}

fn solve_point(
    ensemble: &FadingEnsemble,
    spec: &RunSpec,
    qos: &QosSpec,
    model: &TabulatedModel,
    scenario: &Scenario,
) -> Result<PointSolution> {
    let lambda1 = scenario.policy_lambda;
    if lambda1 == 0.0 || lambda1 == 1.0 {
        let user = if lambda1 == 1.0 { 0 } else { 1 };
        let out = solve_single_user(ensemble, user, qos, &spec.params, model, &scenario.solver)?;
        let a = out.algorithm;
        let region = if user == 0 { Region::Z } else { Region::Zc };
        return Ok(PointSolution {
            regions: vec![region; ensemble.len()],
            objective: a.objective,
            epsilon: a.state.epsilon,
            psi: a.state.psi,
            policy: a.policy,
            rates: a.rates,
            capacity: a.capacity,
            warnings: Vec::new(),
        });
    }
    let weights = Weights::new(lambda1)?;
    let out = partition_fixed_point(
        ensemble,
        &weights,
        qos,
        &spec.params,
        model,
        &scenario.solver,
        &scenario.partition,
        None,
    )?;
    Ok(PointSolution {
        regions: out.partition.order,
        objective: out.objective,
        epsilon: out.state.epsilon,
        psi: out.state.psi,
        policy: out.policy,
        rates: out.rates,
        capacity: out.capacity,
        warnings: out.warnings,
    })
}

fn header(scenario: &Scenario, fingerprint: &str, command: Command, spec: &RunSpec) -> Vec<String> {
    vec![
        format!("macap {}", env!("CARGO_PKG_VERSION")),
        format!("scenario {}", scenario.name),
        format!("fingerprint {fingerprint}"),
        format!("command {}", command.name()),
        format!("run {}", spec.label),
        format!(
            "pbar_db {} k_db {} theta {} {} inputs {} {} samples {} seed {}",
            spec.pbar_db,
            spec.links[0].k_factor_db,
            spec.theta[0],
            spec.theta[1],
            spec.inputs[0].label(),
            spec.inputs[1].label(),
            scenario.samples,
            scenario.seed
        ),
    ]
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn error_json(e: &Error) -> Value {
    json!({ "category": e.category(), "module": e.module(), "message": e.to_string() })
}

/// Runs `command` over every configuration of the scenario, writing CSVs
/// and `report.json` into `out_dir`.
pub fn run(scenario: &Scenario, command: Command, out_dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let fingerprint = scenario.fingerprint();
    let started = Instant::now();
    let mut models = Models { cache: Vec::new() };
    let mut files = Vec::new();
    let mut first_error: Option<Error> = None;
    let mut entries = Vec::new();

    for spec in &scenario.runs {
        let t0 = Instant::now();
        let result = run_one(scenario, spec, command, out_dir, &fingerprint, &mut models, &mut files);
        let (mut entry, error) = match result {
            Ok(pair) => pair,
            Err(e) => (json!({}), Some(e)),
        };
        if let Some(e) = error {
            entry["error"] = error_json(&e);
            first_error.get_or_insert(e);
        }
        entry["label"] = json!(spec.label);
        entry["seconds"] = json!(t0.elapsed().as_secs_f64());
        entries.push(entry);
    }

    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario.name,
        "fingerprint": fingerprint,
        "command": command.name(),
        "seed": scenario.seed,
        "samples": scenario.samples,
        "lambda_points": scenario.lambda_points,
        "seconds": started.elapsed().as_secs_f64(),
        "status": match &first_error { None => json!("ok"), Some(e) => error_json(e) },
        "runs": entries,
    });
    let report_path = out_dir.join("report.json");
    let mut w = create(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(Outcome {
        files,
        report: report_path,
        error: first_error,
    })
}

/// Region trace of one configuration, without writing anything.
pub fn trace_run(scenario: &Scenario, spec: &RunSpec) -> Result<RegionTrace> {
    let ensemble = sample_ensemble(spec.links[0], spec.links[1], scenario.samples, scenario.seed)?;
    let qos = QosSpec::new(spec.theta[0], spec.theta[1], &spec.params)?;
    let model = TabulatedModel::new(spec.inputs[0].clone(), spec.inputs[1].clone(), &scenario.table);
    trace_region(&ensemble, &qos, &spec.params, &model, &trace_settings(scenario))
}

fn trace_settings(scenario: &Scenario) -> TraceSettings {
    TraceSettings {
        n_lambda: scenario.lambda_points,
        solver: scenario.solver,
        partition: scenario.partition,
    }
}

fn run_one(
    scenario: &Scenario,
    spec: &RunSpec,
    command: Command,
    out_dir: &Path,
    fingerprint: &str,
    models: &mut Models,
    files: &mut Vec<PathBuf>,
) -> Result<(Value, Option<Error>)> {
    let ensemble = sample_ensemble(spec.links[0], spec.links[1], scenario.samples, scenario.seed)?;
    let qos = QosSpec::new(spec.theta[0], spec.theta[1], &spec.params)?;
    let model = models.get(&spec.inputs, scenario);
    let header = header(scenario, fingerprint, command, spec);

    match command {
        Command::Region => {
            let trace = trace_region(&ensemble, &qos, &spec.params, model.as_ref(), &trace_settings(scenario))?;
            let path = out_dir.join(format!("region_{}.csv", spec.label));
            let mut w = create(&path)?;
            trace.write_csv(&header, &mut w)?;
            w.flush()?;
            files.push(path);
            let points: Vec<Value> = trace
                .points
                .iter()
                .zip(&trace.reports)
                .map(|(p, r)| {
                    json!({
                        "lambda1": p.lambda1,
                        "c1": p.c1,
                        "c2": p.c2,
                        "converged": p.converged,
                        "rounds": r.rounds,
                        "outer_iterations": r.outer_iterations,
                        "fallback": r.fallback,
                        "warnings": r.warnings,
                        "error": r.error.as_ref().map(error_json),
                    })
                })
                .collect();
            let failed: Vec<f64> = trace
                .points
                .iter()
                .filter(|p| !p.converged)
                .map(|p| p.lambda1)
                .collect();
            let v = json!({
                "points": points,
                "failed_lambdas": failed,
                "convexity_violations": trace.convexity_violations(1e-6),
            });
            // Failed points do not stop the trace; the first one sets the exit status.
            let error = trace.reports.iter().find_map(|r| r.error.clone());
            Ok((v, error))
        }
        Command::Policy => {
            let sol = solve_point(&ensemble, spec, &qos, &model, scenario)?;
            let path = out_dir.join(format!("policy_{}.csv", spec.label));
            let mut w = create(&path)?;
            write_policy_csv(&ensemble, &sol.regions, &sol.policy, &sol.rates, &header, &mut w)?;
            w.flush()?;
            files.push(path);
            let v = json!({
                "lambda1": scenario.policy_lambda,
                "capacity": sol.capacity,
                "objective": sol.objective,
                "epsilon": sol.epsilon,
                "psi": sol.psi,
                "expected_power": sol.policy.expected_power(&ensemble),
                "warnings": sol.warnings,
            });
            Ok((v, None))
        }
        Command::Boundary => {
            let sol = solve_point(&ensemble, spec, &qos, &model, scenario)?;
            let (partition, fallback, multiple) =
                partition_from_policy(&ensemble, &sol.policy, model.as_ref(), &spec.params, &scenario.partition)?;
            let path = out_dir.join(format!("boundary_{}.csv", spec.label));
            let mut w = create(&path)?;
            partition.write_boundary_csv(&header, &mut w)?;
            w.flush()?;
            files.push(path);
            let v = json!({
                "lambda1": scenario.policy_lambda,
                "boundary_points": partition.boundary.len(),
                "no_root_samples": fallback,
                "multiple_root_samples": multiple,
                "warnings": sol.warnings,
            });
            Ok((v, None))
        }
        Command::Validate => {
            let sol = solve_point(&ensemble, spec, &qos, &model, scenario)?;
            let weights: Vec<f64> = ensemble.weights().collect();
            let n = spec.params.symbols_per_frame();
            let mut users = Vec::new();
            for user in 0..2 {
                let rates = sol.rates.rates(user);
                let theta = spec.theta[user];
                let capacity = effective_capacity(rates, &weights, theta, n)?;
                if !(capacity > 0.0) {
                    users.push(json!({ "user": user + 1, "skipped": "zero effective capacity" }));
                    continue;
                }
                let arrival = scenario.validate.arrival_fraction * capacity;
                // A stream separate from the one that drew the ensemble.
                let seed = scenario.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(user as u64 + 1));
                let trace = simulate_queue(rates, &weights, arrival, scenario.validate.frames, n, seed)?;
                let est = estimate_decay(&trace)?;
                let path = out_dir.join(format!("queue_{}_user{}.csv", spec.label, user + 1));
                let mut w = create(&path)?;
                est.write_tail_csv(&header, &mut w)?;
                w.flush()?;
                files.push(path);
                users.push(json!({
                    "user": user + 1,
                    "theta": theta,
                    "effective_capacity": capacity,
                    "arrival_rate": arrival,
                    "theta_hat": est.theta,
                    "std_error": est.std_error,
                    "relative_error": (est.theta - theta) / theta,
                    "unstable": trace.unstable,
                    "warnings": trace.warnings,
                }));
            }
            let v = json!({ "lambda1": scenario.policy_lambda, "users": users, "warnings": sol.warnings });
            Ok((v, None))
        }
    }
}

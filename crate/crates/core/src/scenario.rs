//! Scenario files.
//!
//! A scenario is a TOML document with flat top-level keys and four optional
//! tables. Sweepable keys accept a scalar or a list, and the scenario expands
//! into one run per combination:
//!
//! ```toml
//! preset = "fig2"            # optional: fig1, fig2, fig3, fig4
//! pbar_db = [-5.0, 0.0]      # sweep
//! k_db = -6.88               # sweep, same K on both links
//! mean_power = 1.0           # or [m1, m2]
//! theta = 0.01               # sweep with θ1 = θ2
//! # theta_pairs = [[0.01, 0.05]]   # unequal exponents instead of `theta`
//! inputs = ["bpsk", "bpsk"]  # or a list of pairs to sweep
//! bandwidth_hz = 100.0
//! frame_seconds = 1.0
//! samples = 2000
//! seed = 1
//! lambda_points = 21
//! policy_lambda = 0.5        # weight used by `policy`, `boundary`, `validate`
//! output_dir = "out"
//!
//! [[constellation]]          # custom alphabets, referenced by name
//! name = "skewed"
//! points = [[1.0, 0.0], [-1.0, 0.0]]
//! priors = [0.5, 0.5]        # optional, uniform by default
//!
//! [solver]      # SolverSettings fields
//! [partition]   # PartitionSettings fields
//! [table]       # TableSpec fields
//! [validate]    # frames, arrival_fraction
//! ```
//!
//! Unknown keys are rejected. dB values are converted when the file is parsed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{RicianSpec, SystemParams};
use crate::constellation::{Constellation, ConstellationPoint, InputModel};
use crate::decoding::PartitionSettings;
use crate::error::{Error, Result};
use crate::mmse_mi::TableSpec;
use crate::power_alloc::SolverSettings;

pub const DEFAULT_THETA: f64 = 0.01;
pub const DEFAULT_BANDWIDTH_HZ: f64 = 100.0;
pub const DEFAULT_FRAME_SECONDS: f64 = 1.0;
pub const DEFAULT_K_DB: f64 = -6.88;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerLink {
    Same(f64),
    Each([f64; 2]),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InputsField {
    Pair([String; 2]),
    Pairs(Vec<[String; 2]>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstellation {
    name: String,
    points: Vec<[f64; 2]>,
    priors: Option<Vec<f64>>,
}

/// Settings of the `validate` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSettings {
    pub frames: usize,
    /// Arrival rate as a multiple of the effective capacity.
    pub arrival_fraction: f64,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self {
            frames: 1_000_000,
            arrival_fraction: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    preset: Option<String>,
    name: Option<String>,
    pbar_db: Option<OneOrMany<f64>>,
    k_db: Option<OneOrMany<f64>>,
    mean_power: Option<PerLink>,
    theta: Option<OneOrMany<f64>>,
    theta_pairs: Option<Vec<[f64; 2]>>,
    inputs: Option<InputsField>,
    bandwidth_hz: Option<f64>,
    frame_seconds: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    lambda_points: Option<usize>,
    policy_lambda: Option<f64>,
    output_dir: Option<String>,
    #[serde(default)]
    constellation: Vec<RawConstellation>,
    #[serde(default)]
    solver: SolverSettings,
    #[serde(default)]
    partition: PartitionSettings,
    table: Option<TableSpec>,
    #[serde(default)]
    validate: ValidateSettings,
}

/// One fully specified configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    /// File-name safe identifier.
    pub label: String,
    pub pbar_db: f64,
    pub params: SystemParams,
    pub links: [RicianSpec; 2],
    pub theta: [f64; 2],
    pub inputs: [InputModel; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub runs: Vec<RunSpec>,
    pub samples: usize,
    pub seed: u64,
    pub lambda_points: usize,
    pub policy_lambda: f64,
    pub output_dir: String,
    pub solver: SolverSettings,
    pub partition: PartitionSettings,
    pub table: TableSpec,
    pub validate: ValidateSettings,
}

struct Preset {
    pbar_db: Vec<f64>,
    k_db: Vec<f64>,
    theta: Vec<f64>,
    inputs: Vec<[&'static str; 2]>,
}

fn preset(name: &str) -> Result<Preset> {
    let p = match name {
        // K values are the urban, suburban and rural empirical means.
        "fig1" => Preset {
            pbar_db: vec![-5.0, 0.0],
            k_db: vec![-6.88, 4.97, 8.61],
            theta: vec![DEFAULT_THETA],
            inputs: vec![["bpsk", "bpsk"]],
        },
        // The QAM order is not given for these two; 4-QAM is used.
        "fig2" => Preset {
            pbar_db: vec![-5.0, 0.0],
            k_db: vec![DEFAULT_K_DB],
            theta: vec![DEFAULT_THETA],
            inputs: vec![["bpsk", "bpsk"], ["4-qam", "4-qam"], ["gaussian", "gaussian"]],
        },
        "fig3" => Preset {
            pbar_db: vec![5.0],
            k_db: vec![DEFAULT_K_DB],
            theta: vec![0.01, 0.1],
            inputs: vec![["bpsk", "bpsk"], ["4-qam", "4-qam"], ["gaussian", "gaussian"]],
        },
        "fig4" => Preset {
            pbar_db: vec![0.0],
            k_db: vec![DEFAULT_K_DB],
            theta: vec![DEFAULT_THETA],
            inputs: vec![["bpsk", "16-qam"]],
        },
        _ => {
            return Err(Error::Parse(format!(
                "unknown preset `{name}` (expected fig1, fig2, fig3 or fig4)"
            )))
        }
    };
    Ok(p)
}

fn resolve_input(name: &str, custom: &[(String, InputModel)]) -> Result<InputModel> {
    if let Some((_, m)) = custom.iter().find(|(n, _)| n == name) {
        return Ok(m.clone());
    }
    InputModel::preset(name).map_err(|_| Error::Parse(format!("unknown input `{name}`")))
}

fn number_tag(x: f64) -> String {
    format!("{x}")
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;

    let base = raw.preset.as_deref().map(preset).transpose()?;
    let pbar_db = match (raw.pbar_db, &base) {
        (Some(v), _) => v.into_vec(),
        (None, Some(p)) => p.pbar_db.clone(),
        (None, None) => return Err(Error::Parse("missing key `pbar_db`".into())),
    };
    let k_db = match (raw.k_db, &base) {
        (Some(v), _) => v.into_vec(),
        (None, Some(p)) => p.k_db.clone(),
        (None, None) => vec![DEFAULT_K_DB],
    };
    if raw.theta.is_some() && raw.theta_pairs.is_some() {
        return Err(Error::Parse("`theta` and `theta_pairs` are mutually exclusive".into()));
    }
    let theta: Vec<[f64; 2]> = match (raw.theta, raw.theta_pairs, &base) {
        (Some(v), _, _) => v.into_vec().into_iter().map(|t| [t, t]).collect(),
        (None, Some(v), _) => v,
        (None, None, Some(p)) => p.theta.iter().map(|&t| [t, t]).collect(),
        (None, None, None) => vec![[DEFAULT_THETA; 2]],
    };
    let input_names: Vec<[String; 2]> = match (raw.inputs, &base) {
        (Some(InputsField::Pair(p)), _) => vec![p],
        (Some(InputsField::Pairs(v)), _) => v,
        (None, Some(p)) => p
            .inputs
            .iter()
            .map(|[a, b]| [a.to_string(), b.to_string()])
            .collect(),
        (None, None) => return Err(Error::Parse("missing key `inputs`".into())),
    };
    for (key, len) in [
        ("pbar_db", pbar_db.len()),
        ("k_db", k_db.len()),
        ("theta", theta.len()),
        ("inputs", input_names.len()),
    ] {
        if len == 0 {
            return Err(Error::Parse(format!("`{key}` must not be empty")));
        }
    }
    if let Some(t) = theta.iter().flatten().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Parse(format!("theta must be finite and >= 0, got {t}")));
    }

    let mut custom: Vec<(String, InputModel)> = Vec::new();
    for c in raw.constellation {
        if InputModel::preset(&c.name).is_ok() {
            return Err(Error::Parse(format!("constellation `{}` shadows a preset name", c.name)));
        }
        if custom.iter().any(|(n, _)| *n == c.name) {
            return Err(Error::Parse(format!("constellation `{}` defined twice", c.name)));
        }
        let m = c.points.len();
        let priors = c.priors.unwrap_or_else(|| vec![1.0 / m as f64; m]);
        if priors.len() != m {
            return Err(Error::Parse(format!(
                "constellation `{}`: {} points but {} priors",
                c.name,
                m,
                priors.len()
            )));
        }
        let points = c
            .points
            .iter()
            .zip(&priors)
            .map(|(p, &w)| ConstellationPoint::new(p[0], p[1], w))
            .collect();
        let constellation = Constellation::new(points, c.name.clone())
            .map_err(|e| Error::Parse(format!("constellation `{}`: {e}", c.name)))?;
        custom.push((c.name, InputModel::Finite(constellation)));
    }

    let bandwidth = raw.bandwidth_hz.unwrap_or(DEFAULT_BANDWIDTH_HZ);
    let frame = raw.frame_seconds.unwrap_or(DEFAULT_FRAME_SECONDS);
    let mean = match raw.mean_power {
        None => [1.0, 1.0],
        Some(PerLink::Same(m)) => [m, m],
        Some(PerLink::Each(m)) => m,
    };
    let parse_err = |e: Error| Error::Parse(e.to_string());

    let mut runs = Vec::new();
    for &p_db in &pbar_db {
        let params = SystemParams::from_db(p_db, bandwidth, frame).map_err(parse_err)?;
        for &k in &k_db {
            let links = [
                RicianSpec::new(k, mean[0]).map_err(parse_err)?,
                RicianSpec::new(k, mean[1]).map_err(parse_err)?,
            ];
            for &th in &theta {
                for names in &input_names {
                    let inputs = [resolve_input(&names[0], &custom)?, resolve_input(&names[1], &custom)?];
                    let theta_tag = if th[0] == th[1] {
                        number_tag(th[0])
                    } else {
                        format!("{}-{}", number_tag(th[0]), number_tag(th[1]))
                    };
                    let label = format!(
                        "p{}dB_k{}dB_t{}_{}_{}",
                        number_tag(p_db),
                        number_tag(k),
                        theta_tag,
                        inputs[0].label(),
                        inputs[1].label()
                    );
                    runs.push(RunSpec {
                        label,
                        pbar_db: p_db,
                        params,
                        links,
                        theta: th,
                        inputs,
                    });
                }
            }
        }
    }

    let lambda_points = raw.lambda_points.unwrap_or(21);
    if lambda_points < 2 {
        return Err(Error::Parse(format!("lambda_points must be >= 2, got {lambda_points}")));
    }
    let samples = raw.samples.unwrap_or(2000);
    if samples == 0 {
        return Err(Error::Parse("samples must be >= 1".into()));
    }
    let policy_lambda = raw.policy_lambda.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&policy_lambda) {
        return Err(Error::Parse(format!("policy_lambda must lie in [0, 1], got {policy_lambda}")));
    }
    if !(raw.validate.arrival_fraction > 0.0) {
        return Err(Error::Parse("validate.arrival_fraction must be positive".into()));
    }

    Ok(Scenario {
        name: raw
            .name
            .or(raw.preset)
            .unwrap_or_else(|| "scenario".into()),
        runs,
        samples,
        seed: raw.seed.unwrap_or(1),
        lambda_points,
        policy_lambda,
        output_dir: raw.output_dir.unwrap_or_else(|| "out".into()),
        solver: raw.solver,
        partition: raw.partition,
        table: raw.table.unwrap_or_default(),
        validate: raw.validate,
    })
}

impl Scenario {
    /// SHA-256 of the parsed scenario, hex encoded. The output directory
    /// does not enter the hash.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir.clear();
        let json = serde_json::to_string(&canonical).expect("scenario serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

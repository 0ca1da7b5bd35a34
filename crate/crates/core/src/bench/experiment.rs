//! Seeded experiment runs, their output directory layout and verification.
//!
//! A run directory holds:
//!
//! * `metrics.csv`: every [`MetricsRecord`];
//! * `run.cfg`: the resolved configuration;
//! * `<run_id>.alloc`: the allocation behind each run's last record;
//! * `<run_id>.weights`: final actor weights for learning schemes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{parse_config, ConfigError, RunSpec, Scheme};
use super::fsutil::write_atomic;
use super::records::{read_csv, write_csv, MetricsRecord, RecordsError};
use super::weights::{load_weights, save_weights, WeightsError};
use crate::actor::{forward, init_weights, ActorWeights};
use crate::baselines::{abs_policy, ddpg_run, max_power_policy};
use crate::learner::{calibrate_kappa, reward, train, TrainHistory};
use crate::netsim::{build_topology, evaluate, PowerAllocation, Topology};
use crate::observation::observe;
use crate::tensor::Matrix;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "run.cfg";

/// Relative tolerance used by [`verify_run_dir`].
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub run_id: String,
    pub records: Vec<MetricsRecord>,
    pub final_allocation: PowerAllocation,
    pub weights: Option<ActorWeights>,
    pub history: Option<TrainHistory>,
}

pub fn run_id(scheme: Scheme, seed: u64) -> String {
    format!("{scheme}-s{seed}")
}

/// Builds the topology `spec` describes for one seed.
pub fn topology_for(spec: &RunSpec, seed: u64) -> crate::Result<Topology> {
    let mut scenario = spec.scenario.clone();
    scenario.rng_seed = seed;
    build_topology(&scenario)
}

fn static_record(spec: &RunSpec, seed: u64, top: &Topology, alloc: &PowerAllocation) -> crate::Result<MetricsRecord> {
    let m = evaluate(top, alloc)?;
    Ok(MetricsRecord {
        run_id: run_id(spec.scheme, seed),
        seed,
        scheme: spec.scheme,
        iteration: 0,
        eta: m.eta,
        reward: reward(m.eta, spec.learner.gamma, calibrate_kappa(m.eta))?,
        throughput_mbps: m.throughput / 1e6,
        power_w: m.total_power,
        violations: m.violations,
    })
}

fn history_records(spec: &RunSpec, seed: u64, history: &TrainHistory) -> Vec<MetricsRecord> {
    history
        .records
        .iter()
        .map(|r| MetricsRecord {
            run_id: run_id(spec.scheme, seed),
            seed,
            scheme: spec.scheme,
            iteration: r.iteration,
            eta: r.eta,
            reward: r.reward,
            throughput_mbps: r.throughput / 1e6,
            power_w: r.total_power,
            violations: r.violations,
        })
        .collect()
}

/// Runs `spec.scheme` on the topology of one seed.
pub fn run_seed(spec: &RunSpec, seed: u64) -> crate::Result<SeedRun> {
    let top = topology_for(spec, seed)?;
    let (m, l, p_max) = (top.num_sbs(), top.frame_len(), top.p_max_w());
    let id = run_id(spec.scheme, seed);
    let run = match spec.scheme {
        Scheme::MaxPower | Scheme::Abs => {
            let alloc = if spec.scheme == Scheme::MaxPower {
                max_power_policy(m, l, p_max)
            } else {
                abs_policy(&top, &spec.abs, l)?
            };
            SeedRun {
                seed,
                run_id: id,
                records: vec![static_record(spec, seed, &top, &alloc)?],
                final_allocation: alloc,
                weights: None,
                history: None,
            }
        }
        Scheme::Dpt => {
            let w0 = init_weights(m, spec.filters, l, seed);
            let (w, history) = train(&top, &spec.learner, &w0)?;
            let final_allocation = match history.last() {
                Some(r) => r.allocation.clone(),
                None => forward(&observe(&top), &w, p_max)?.0,
            };
            SeedRun {
                seed,
                run_id: id,
                records: history_records(spec, seed, &history),
                final_allocation,
                weights: Some(w),
                history: Some(history),
            }
        }
        Scheme::Ddpg => {
            let run = ddpg_run(&top, &spec.ddpg, seed)?;
            let final_allocation = match run.history.last() {
                Some(r) => r.allocation.clone(),
                None => forward(&observe(&top), &run.actor, p_max)?.0,
            };
            SeedRun {
                seed,
                run_id: id,
                records: history_records(spec, seed, &run.history),
                final_allocation,
                weights: Some(run.actor),
                history: Some(run.history),
            }
        }
    };
    Ok(run)
}

#[derive(Debug, Error)]
#[error("seed {seed}: {source}")]
pub struct ExperimentError {
    pub seed: u64,
    #[source]
    pub source: crate::Error,
    /// Seeds that completed, in seed-list order.
    pub partial: Vec<SeedRun>,
}

/// Runs every seed (in parallel) and returns the runs in seed-list order.
pub fn run_experiment(spec: &RunSpec) -> Result<Vec<SeedRun>, ExperimentError> {
    let results: Vec<crate::Result<SeedRun>> = spec.seeds.par_iter().map(|&s| run_seed(spec, s)).collect();
    let mut done = Vec::with_capacity(results.len());
    let mut failure = None;
    for (seed, res) in spec.seeds.iter().zip(results) {
        match res {
            Ok(run) => done.push(run),
            Err(e) if failure.is_none() => failure = Some((*seed, e)),
            Err(_) => {}
        }
    }
    match failure {
        None => Ok(done),
        Some((seed, source)) => Err(ExperimentError {
            seed,
            source,
            partial: done,
        }),
    }
}

pub fn all_records(runs: &[SeedRun]) -> Vec<MetricsRecord> {
    runs.iter().flat_map(|r| r.records.iter().cloned()).collect()
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: malformed allocation file: {reason}")]
    Allocation { path: PathBuf, reason: String },
    #[error(transparent)]
    Sim(#[from] crate::Error),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn allocation_to_string(alloc: &PowerAllocation) -> String {
    let p = alloc.matrix();
    let mut out = format!("{} {}\n", p.rows(), p.cols());
    for r in 0..p.rows() {
        let row: Vec<String> = p.row(r).iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_allocation(text: &str, p_max: f64) -> Result<PowerAllocation, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| format!("bad dimension `{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [rows, cols] = dims[..] else {
        return Err("header must be `rows cols`".into());
    };
    let values: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|t| t.parse().map_err(|e| format!("bad value `{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    let m = Matrix::from_vec(rows, cols, values).ok_or("value count does not match header")?;
    PowerAllocation::new(m, p_max).map_err(|e| e.to_string())
}

/// Writes metrics, resolved config, allocations and weights into `dir`.
pub fn write_outputs(spec: &RunSpec, runs: &[SeedRun], dir: &Path) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut resolved = spec.clone();
    resolved.output_dir = dir.to_owned();
    resolved.seeds = runs.iter().map(|r| r.seed).collect();
    if resolved.seeds.is_empty() {
        resolved.seeds = spec.seeds.clone();
    }
    let cfg_path = dir.join(CONFIG_FILE);
    write_atomic(&cfg_path, resolved.to_config_string().as_bytes()).map_err(io_error(&cfg_path))?;
    for run in runs {
        let path = dir.join(format!("{}.alloc", run.run_id));
        write_atomic(&path, allocation_to_string(&run.final_allocation).as_bytes())
            .map_err(io_error(&path))?;
        if let Some(w) = &run.weights {
            save_weights(w, &dir.join(format!("{}.weights", run.run_id)))?;
        }
    }
    write_csv(&all_records(runs), &dir.join(METRICS_FILE))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub run_id: String,
    pub recorded_eta: f64,
    pub allocation_eta: f64,
    /// Efficiency of the allocation regenerated from stored weights (DPT only).
    pub weights_eta: Option<f64>,
    pub passed: bool,
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VERIFY_TOLERANCE * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Recomputes the efficiency of every run's last record from the stored
/// allocation (and, for DPT runs, from the stored weights).
pub fn verify_run_dir(csv_path: &Path) -> Result<Vec<VerifyOutcome>, OutputError> {
    let dir = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let spec = parse_config(&dir.join(CONFIG_FILE))?;
    let records = read_csv(csv_path)?;

    let mut finals: Vec<&MetricsRecord> = Vec::new();
    for r in &records {
        match finals.iter_mut().find(|f| f.run_id == r.run_id) {
            Some(f) if f.iteration < r.iteration => *f = r,
            Some(_) => {}
            None => finals.push(r),
        }
    }

    let mut outcomes = Vec::with_capacity(finals.len());
    for rec in finals {
        let mut run_spec = spec.clone();
        run_spec.scheme = rec.scheme;
        let top = topology_for(&run_spec, rec.seed)?;
        let alloc_path = dir.join(format!("{}.alloc", rec.run_id));
        let text = std::fs::read_to_string(&alloc_path).map_err(io_error(&alloc_path))?;
        let alloc = parse_allocation(&text, top.p_max_w()).map_err(|reason| OutputError::Allocation {
            path: alloc_path.clone(),
            reason,
        })?;
        let allocation_eta = evaluate(&top, &alloc)?.eta;
        let mut passed = rel_close(rec.eta, allocation_eta);

        let weights_eta = if rec.scheme == Scheme::Dpt {
            let w = load_weights(&dir.join(format!("{}.weights", rec.run_id)))?;
            let (regen, _) = forward(&observe(&top), &w, top.p_max_w())?;
            let eta = evaluate(&top, &regen)?.eta;
            passed &= rel_close(rec.eta, eta) && regen == alloc;
            Some(eta)
        } else {
            None
        };
        outcomes.push(VerifyOutcome {
            run_id: rec.run_id.clone(),
            recorded_eta: rec.eta,
            allocation_eta,
            weights_eta,
            passed,
        });
    }
    Ok(outcomes)
}

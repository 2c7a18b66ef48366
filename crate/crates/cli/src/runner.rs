//! Experiment dispatch and artifact writing.
//!
//! Every command produces a CSV of raw measurements and a JSON summary. The
//! CSV opens with `#` comment lines carrying the resolved config, its SHA-256
//! and the SHA-256 of the data rows that follow. Column order is fixed per
//! command:
//!
//! - capacity: `seed,m,d_k,d_v,lift,arch,lifted_dim,monomial_dim,effective_dim,rank,residual,fits,retries,iters`
//! - learnability: `seed,setting,optimizer,step,loss`
//! - recall: `seed,rule,map,n_pairs,accuracy,mean_error`
//! - equivalence: `seed,rule,compare,b,c,tokens,max_abs_diff,pass`

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use memlab_core::capacity::{fit_boundary, sweep, CapacityProbe, Fit, Lift};
use memlab_core::chunk::{chunked_run, ChunkPlan};
use memlab_core::harness::{
    run_learnability, run_recall, LearnabilitySetting, LearnerSpec, OnlineTrainer, OptimizerConfig, OptimizerKind,
    RecallTask, SettingKind,
};
use memlab_core::memory_arch::init_memory;
use memlab_core::rules::{random_token_stream, run_sequence};
use memlab_core::{
    Activation, Arch, FeatureMapSpec, GateSource, Gates, Mat, MemoryDims, MemoryState, RuleConfig, RuleKind, UpdatePath,
    Vector,
};

use crate::config::{Command, ExperimentConfig};
use crate::error::{exit, CliError};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "MEMLAB_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Full CSV file contents.
    pub csv: String,
    pub summary: Value,
    pub pass: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            exit::OK
        } else {
            exit::ASSERTION
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn map_spec(name: &str, degree: usize) -> Result<FeatureMapSpec, CliError> {
    let spec = match name {
        "identity" => FeatureMapSpec::identity(),
        "polynomial" => FeatureMapSpec::polynomial(degree),
        "block" => FeatureMapSpec::block(degree),
        "exp_truncated" => FeatureMapSpec::exp_truncated(degree),
        other => return Err(CliError::choice("map", other, crate::config::MAPS)),
    };
    spec.validate()?;
    Ok(spec)
}

fn arch_of(name: &str, depth: usize) -> Result<Arch, CliError> {
    Ok(match name {
        "matrix" => Arch::Matrix,
        "mlp2" => Arch::Mlp2,
        "gated_mlp" => Arch::GatedMlp,
        "stack" => Arch::Stack(depth),
        other => return Err(CliError::choice("arch", other, crate::config::ARCHS)),
    })
}

fn rule_of(name: &str) -> Result<RuleKind, CliError> {
    RuleKind::parse(name).ok_or_else(|| CliError::choice("rule", name, crate::config::RULES))
}

fn csv_document(cfg: &ExperimentConfig, header: &str, rows: &[String]) -> String {
    let mut body = String::new();
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    let echo = cfg.echo();
    format!(
        "# config={echo}\n# config_sha256={}\n# data_sha256={}\n{body}",
        sha256_hex(echo.as_bytes()),
        sha256_hex(body.as_bytes())
    )
}

fn outcome(cfg: &ExperimentConfig, header: &str, rows: Vec<String>, metrics: Value, pass: bool) -> RunOutcome {
    let csv = csv_document(cfg, header, &rows);
    let summary = json!({
        "command": cfg.command.name(),
        "config": cfg.echo_value(),
        "config_sha256": sha256_hex(cfg.echo().as_bytes()),
        "csv_sha256": sha256_hex(csv.as_bytes()),
        "metrics": metrics,
        "pass": pass,
    });
    RunOutcome { csv, summary, pass }
}

fn run_capacity(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let degree = cfg.usize("degree");
    let lift = match cfg.str("map") {
        "block" => Lift::Block(degree),
        name => Lift::Map(map_spec(name, degree)?),
    };
    let arch = arch_of(cfg.str("arch"), cfg.usize("depth"))?;
    let fit = match cfg.str("fit") {
        "pseudoinverse" => Fit::Pseudoinverse,
        _ => Fit::Gd {
            iters: cfg.usize("gd_iters"),
            step: cfg.f64("gd_step"),
        },
    };
    let ms: Vec<usize> = (cfg.usize("m_min")..=cfg.usize("m_max")).collect();
    let seeds = cfg.seeds();
    let per_seed = seeds
        .par_iter()
        .map(|seed| {
            let probe = CapacityProbe {
                d_k: cfg.usize("d_k"),
                d_v: cfg.usize("d_v"),
                m: 1,
                lift: lift.clone(),
                arch,
                hidden: cfg.usize("hidden"),
                fit,
                tol_fit: cfg.f64("tol_fit"),
                unit_keys: cfg.bool("unit_keys"),
                seed: *seed,
            };
            sweep(&probe, &ms)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut boundaries = Vec::new();
    for (seed, reports) in seeds.iter().zip(&per_seed) {
        for r in reports {
            rows.push(format!(
                "{seed},{},{},{},{},{},{},{},{},{},{:e},{},{},{}",
                r.m, r.d_k, r.d_v, r.lift, r.arch, r.lifted_dim, r.monomial_dim, r.effective_dim, r.rank, r.residual, r.fits,
                r.retries, r.iters
            ));
        }
        boundaries.push(json!({"seed": seed, "boundary": fit_boundary(reports)}));
    }
    let first = &per_seed[0][0];
    let metrics = json!({
        "boundaries": boundaries,
        "lifted_dim": first.lifted_dim,
        "monomial_dim": first.monomial_dim,
        "effective_dim": first.effective_dim,
    });
    let header = "seed,m,d_k,d_v,lift,arch,lifted_dim,monomial_dim,effective_dim,rank,residual,fits,retries,iters";
    Ok(outcome(cfg, header, rows, metrics, true))
}

fn run_learnability_cmd(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let kind = OptimizerKind::parse(cfg.str("optimizer"))
        .ok_or_else(|| CliError::choice("optimizer", cfg.str("optimizer"), crate::config::OPTIMIZERS))?;
    let trainer = OnlineTrainer {
        optimizer: OptimizerConfig {
            kind,
            lr: cfg.f64("lr"),
            beta1: cfg.f64("beta1"),
            beta2: cfg.f64("beta2"),
            eps: cfg.f64("eps"),
        },
        learner: LearnerSpec {
            hidden_layers: cfg.usize("hidden_layers"),
            expansion: cfg.usize("expansion"),
            activation: Activation::Gelu,
        },
    };
    let mut jobs = Vec::new();
    for name in cfg.str_list("settings") {
        let kind = SettingKind::parse(&name).ok_or_else(|| CliError::choice("settings", &name, crate::config::SETTINGS))?;
        for seed in cfg.seeds() {
            let mut s = LearnabilitySetting::new(kind, cfg.usize("d"), cfg.usize("t"), seed);
            s.rank = cfg.usize("rank");
            s.swa_window = cfg.usize("swa_window");
            jobs.push(s);
        }
    }
    let steps = cfg.usize("steps");
    let records = jobs
        .par_iter()
        .map(|s| run_learnability(s, &trainer, steps))
        .collect::<Result<Vec<_>, _>>()?;
    let window = cfg.usize("window_mean");
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for r in &records {
        for (j, l) in r.losses.iter().enumerate() {
            rows.push(format!("{},{},{},{j},{l:e}", r.seed, r.setting, r.optimizer));
        }
        finals.push(json!({
            "setting": r.setting,
            "seed": r.seed,
            "final_window_mean": r.final_window_mean(window),
            "unnormalized_steps": r.unnormalized_steps,
        }));
    }
    Ok(outcome(cfg, "seed,setting,optimizer,step,loss", rows, json!({ "runs": finals }), true))
}

fn recall_gates(cfg: &ExperimentConfig) -> GateSource {
    let base = Gates::constant(cfg.f64("alpha"), cfg.f64("eta"), cfg.f64("theta"), cfg.usize("c").max(1), cfg.f64("gamma"));
    match cfg.str("gate") {
        "normalized" => GateSource::NormalizedEta {
            base,
            scale: cfg.f64("eta_scale"),
        },
        _ => GateSource::Constant(base),
    }
}

fn run_recall_cmd(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let rule = rule_of(cfg.str("rule"))?;
    let map = map_spec(cfg.str("map"), cfg.usize("degree"))?;
    let rc = RuleConfig::new(rule, map).with_window(cfg.usize("c"));
    let gates = recall_gates(cfg);
    let ns: Vec<usize> = cfg.u64_list("n_pairs").into_iter().map(|n| n as usize).collect();
    let seeds = cfg.seeds();
    let per_seed = seeds
        .par_iter()
        .map(|seed| {
            ns.iter()
                .map(|n| {
                    let task = RecallTask {
                        n_pairs: *n,
                        d: cfg.usize("d"),
                        distractors: cfg.usize("distractors"),
                        seed: *seed,
                    };
                    run_recall(&task, &rc, &gates)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut per = Vec::new();
    for (seed, reports) in seeds.iter().zip(&per_seed) {
        for r in reports {
            rows.push(format!(
                "{seed},{},{},{},{:e},{:e}",
                rule.name(),
                cfg.str("map"),
                r.n_pairs,
                r.accuracy,
                r.mean_error
            ));
        }
        let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
        per.push(json!({
            "seed": seed,
            "accuracy": accs,
            "non_increasing": accs.windows(2).all(|w| w[1] <= w[0]),
        }));
    }
    Ok(outcome(cfg, "seed,rule,map,n_pairs,accuracy,mean_error", rows, json!({ "seeds": per }), true))
}

fn max_abs_diff(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn run_equivalence(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let rule = rule_of(cfg.str("rule"))?;
    let map = map_spec(cfg.str("map"), cfg.usize("degree"))?;
    let (d_k, d_v) = (cfg.usize("d_k"), cfg.usize("d_v"));
    let lifted = map
        .output_dim(d_k)
        .ok_or_else(|| CliError::Config("field `degree`: lifted dimension too large".into()))?;
    let rc = RuleConfig::new(rule, map)
        .with_window(cfg.usize("c"))
        .with_ns_steps(cfg.usize("ns_steps"));
    rc.validate()?;
    let arch = arch_of(cfg.str("arch"), cfg.usize("depth"))?;
    let compare = cfg.str("compare");
    let b = cfg.usize("b");
    let c = rc.effective_window();
    let tokens = cfg.usize("tokens");
    let tol = cfg.f64("tol");
    let seeds = cfg.seeds();
    let diffs = seeds
        .par_iter()
        .map(|seed| -> Result<f64, CliError> {
            let stream = random_token_stream(*seed, tokens, d_k, d_v, c);
            let memory = if arch == Arch::Matrix {
                MemoryState::from_matrix(Mat::zeros(d_v, lifted))
            } else {
                let dims = MemoryDims {
                    in_dim: lifted,
                    out_dim: d_v,
                    hidden: cfg.usize("hidden"),
                };
                init_memory(arch, dims, Activation::Gelu, *seed)?
            };
            let reference = run_sequence(&rc, memory.clone(), &stream)?;
            let other = match compare {
                "chunk" => chunked_run(&rc, memory, &stream, ChunkPlan::new(b, c)?)?.outputs,
                _ => run_sequence(&rc.clone().with_path(UpdatePath::ClosedForm), memory, &stream)?.outputs,
            };
            Ok(max_abs_diff(&reference.outputs, &other))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let worst = diffs.iter().copied().fold(0.0, f64::max);
    let pass = diffs.iter().all(|d| *d <= tol);
    let rows = seeds
        .iter()
        .zip(&diffs)
        .map(|(s, d)| format!("{s},{},{compare},{b},{c},{tokens},{d:e},{}", rule.name(), *d <= tol))
        .collect();
    let metrics = json!({ "max_abs_diff": worst, "tol": tol });
    Ok(outcome(cfg, "seed,rule,compare,b,c,tokens,max_abs_diff,pass", rows, metrics, pass))
}

/// Runs the experiment in the current rayon pool without touching the disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    if cfg.seeds().is_empty() {
        return Err(CliError::Config("field `seeds` must not be empty".into()));
    }
    match cfg.command {
        Command::Capacity => run_capacity(cfg),
        Command::Learnability => run_learnability_cmd(cfg),
        Command::Recall => run_recall_cmd(cfg),
        Command::Equivalence => run_equivalence(cfg),
    }
}

/// Thread cap from the environment, if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
        },
    }
}

/// Runs inside a pool of `threads` workers (the global pool when `None`).
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutcome, CliError> {
    match threads {
        None => run_experiment(cfg),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build a {n}-thread pool: {e}")))?
            .install(|| run_experiment(cfg)),
    }
}

pub fn write_artifacts(dir: &Path, out: &RunOutcome) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv = dir.join("raw.csv");
    fs::write(&csv, &out.csv).map_err(|e| CliError::io(&csv, e))?;
    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary).expect("summary serializes") + "\n";
    fs::write(&summary, text).map_err(|e| CliError::io(&summary, e))?;
    Ok(())
}

/// Full pipeline used by the binary: run, write, and map to an exit code.
pub fn execute(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let out = run_with_threads(cfg, threads_from_env()?)?;
    write_artifacts(&cfg.out_dir(), &out)?;
    Ok(out.exit_code())
}

//! Command-line front end. [`run`] does all the work and returns the text to
//! print with the process exit code, so the binary stays a thin shell.
//!
//! Exit codes: 0 success, 1 checks failed, 2 model file does not parse,
//! 3 invalid configuration or model, 4 numeric or runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::asymptotics::{excursion_mean, phi_vector, variance_report};
use crate::genfun::{
    extinction_matrix, generation_environment_conjecture, perron_left_vector, survival_probability,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::io::{model_hash, LabeledMatrix, LoadError, ModelFile};
use crate::model::{classify, viability_certificate, TotalState};
use crate::simulate::{monte_carlo, run_stream, Mode, Sampler, DEFAULT_T_MAX, RNG_ALGORITHM};
use crate::validate::{default_suite, SuiteConfig};
use crate::Model;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    Bpme,
    ZValued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Stationary law, mu, criticality, fertility vector, CLT variance, viability
    Analyze,
    /// Extinction matrix, survival probabilities and Perron vector
    Extinction,
    /// Monte Carlo ensemble summary, optionally dumping trajectories
    Simulate,
    /// Run the statistical check suite
    Validate,
    /// Compare f^n(I) with the conjectured generation-environment limit
    Conjecture,
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "bpme", version, about = "Branching processes in a Markovian environment")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Model file (JSON)
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = DEFAULT_T_MAX)]
    pub t_max: usize,
    /// Number of Monte Carlo samples
    #[arg(long, global = true, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Viability search depth (default 3 |S| (max_support + 1))
    #[arg(long, global = true)]
    pub depth_cap: Option<usize>,
    /// Monte Carlo threads (default: all cores); results do not depend on it
    #[arg(long, global = true)]
    #[serde(skip)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, global = true, default_value_t = 2)]
    pub init_population: u64,
    /// Initial state label (default: first state)
    #[arg(long, global = true)]
    pub init_state: Option<String>,
    /// Largest n for survival tables and conjecture iterates
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = SimMode::Bpme)]
    pub mode: SimMode,
    /// Write this many trajectories as CSV (simulate)
    #[arg(long, global = true, default_value_t = 0)]
    pub dump_trajectories: usize,
    #[arg(long, global = true)]
    pub dump_dir: Option<PathBuf>,
}

/// Text for stdout (empty when written to `--out`) and the exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn fail(code: i32, msg: impl Into<String>) -> Self {
        Self { stdout: String::new(), stderr: msg.into(), code }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome { stdout: text, stderr: String::new(), code }
            } else {
                Outcome::fail(code, text)
            };
        }
    };
    execute(&cfg)
}

pub fn execute(cfg: &RunConfig) -> Outcome {
    if let Err(msg) = check_config(cfg) {
        return Outcome::fail(EXIT_CONFIG, msg);
    }
    let path = cfg.model.as_ref().expect("checked");
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => return Outcome::fail(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())),
    };
    let text = String::from_utf8_lossy(&bytes);
    let model: Model = match ModelFile::parse(&text).and_then(ModelFile::into_model) {
        Ok(m) => m,
        Err(e @ LoadError::Parse(_)) => return Outcome::fail(EXIT_PARSE, e.to_string()),
        Err(e @ LoadError::Invalid(_)) => return Outcome::fail(EXIT_CONFIG, e.to_string()),
    };
    let meta = json!({
        "tool": "bpme",
        "version": env!("CARGO_PKG_VERSION"),
        "schema": SCHEMA_VERSION,
        "model_hash": model_hash(&bytes),
        "rng": RNG_ALGORITHM,
        "config": cfg,
    });
    let result = match cfg.command {
        Command::Analyze => analyze(cfg, &model),
        Command::Extinction => extinction(cfg, &model),
        Command::Simulate => simulate(cfg, &model),
        Command::Validate => validate(cfg, &model),
        Command::Conjecture => conjecture(cfg, &model),
    };
    let (body, code) = match result {
        Ok(r) => r,
        Err(o) => return o,
    };
    let rendered = match body {
        Body::Json(report) => {
            let doc = json!({ "meta": meta, "report": report });
            serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
        }
        Body::Csv(s) => s,
    };
    match &cfg.out {
        Some(p) => match fs::write(p, rendered) {
            Ok(()) => Outcome { stdout: String::new(), stderr: String::new(), code },
            Err(e) => Outcome::fail(EXIT_NUMERIC, format!("cannot write {}: {e}", p.display())),
        },
        None => Outcome { stdout: rendered, stderr: String::new(), code },
    }
}

enum Body {
    Json(Value),
    Csv(String),
}

type CmdResult = Result<(Body, i32), Outcome>;

fn check_config(cfg: &RunConfig) -> Result<(), String> {
    if cfg.model.is_none() {
        return Err("--model is required".into());
    }
    let positive = [
        ("--t-max", cfg.t_max),
        ("--samples", cfg.samples),
        ("--max-iter", cfg.max_iter),
        ("--depth-cap", cfg.depth_cap.unwrap_or(1)),
        ("--workers", cfg.workers.unwrap_or(1)),
        ("--n-max", cfg.n_max.unwrap_or(1)),
        ("--init-population", cfg.init_population as usize),
    ];
    for (flag, v) in positive {
        if v == 0 {
            return Err(format!("{flag} must be positive"));
        }
    }
    if !(cfg.tol > 0.0 && cfg.tol.is_finite()) {
        return Err("--tol must be positive".into());
    }
    let csv_ok = matches!(cfg.command, Command::Extinction | Command::Simulate | Command::Conjecture);
    if cfg.format == Format::Csv && !csv_ok {
        return Err("--format csv is only available for extinction, simulate and conjecture".into());
    }
    if cfg.dump_trajectories > 0 && cfg.dump_dir.is_none() {
        return Err("--dump-trajectories needs --dump-dir".into());
    }
    Ok(())
}

fn init_state(cfg: &RunConfig, model: &Model) -> Result<usize, Outcome> {
    match &cfg.init_state {
        None => Ok(0),
        Some(label) => model
            .chain()
            .index_of(label)
            .ok_or_else(|| Outcome::fail(EXIT_CONFIG, format!("unknown --init-state `{label}`"))),
    }
}

fn numeric(e: impl std::fmt::Display) -> Outcome {
    Outcome::fail(EXIT_NUMERIC, e.to_string())
}

fn analyze(cfg: &RunConfig, model: &Model) -> CmdResult {
    let labels = model.chain().labels();
    let phi = phi_vector(model).map_err(numeric)?;
    let variance = variance_report(model, &phi.phi);
    let depth_cap = cfg.depth_cap.unwrap_or_else(|| model.default_depth_cap());
    let per_state: Vec<Value> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            json!({
                "state": l,
                "stationary": model.stationary()[i],
                "offspring_mean": model.offspring()[i].mean(),
                "offspring_variance": model.offspring()[i].variance(),
                "phi": phi.phi[i],
                "excursion_mean": excursion_mean(model, i),
                "viability": viability_certificate(model, i, depth_cap),
            })
        })
        .collect();
    let report = json!({
        "states": labels,
        "stationary": model.stationary(),
        "period": model.chain().period(),
        "mu": model.mu(),
        "max_support": model.max_support(),
        "classification": classify(model),
        "phi": phi.phi,
        "phi_residual": phi.equation_residual(model),
        "variance": variance,
        "depth_cap": depth_cap,
        "per_state": per_state,
    });
    Ok((Body::Json(report), EXIT_OK))
}

fn extinction(cfg: &RunConfig, model: &Model) -> CmdResult {
    let labels = model.chain().labels();
    let res = extinction_matrix(model, cfg.tol, cfg.max_iter);
    let code = if res.converged { EXIT_OK } else { EXIT_NUMERIC };
    let e = LabeledMatrix::new(labels, res.matrix.matrix());
    if cfg.format == Format::Csv {
        let mut buf = Vec::new();
        e.write_csv(&mut buf).expect("write to Vec");
        return Ok((Body::Csv(String::from_utf8(buf).expect("utf8")), code));
    }
    let n_max = cfg.n_max.unwrap_or(10);
    let survival: Vec<Value> = if res.converged {
        (1..=n_max)
            .map(|n| {
                let probs: Vec<f64> =
                    (0..labels.len()).map(|i| survival_probability(&res, n, i).expect("converged")).collect();
                json!({ "n": n, "survival": probs })
            })
            .collect()
    } else {
        Vec::new()
    };
    let perron = match perron_left_vector(&res.matrix) {
        Ok(p) => serde_json::to_value(p).expect("serializes"),
        Err(err) => json!({ "error": err.to_string() }),
    };
    let report = json!({
        "extinction_matrix": e,
        "iterations": res.iterations,
        "newton_steps": res.newton_steps,
        "residual": res.residual,
        "converged": res.converged,
        "monotone": res.monotone,
        "max_clamp": res.max_clamp,
        "survival": survival,
        "perron": perron,
    });
    Ok((Body::Json(report), code))
}

fn simulate(cfg: &RunConfig, model: &Model) -> CmdResult {
    let state = init_state(cfg, model)?;
    let init = TotalState::new(cfg.init_population as i64, state);
    let mode = match cfg.mode {
        SimMode::Bpme => Mode::Bpme,
        SimMode::ZValued => Mode::ZValued,
    };
    let summary = monte_carlo(model, init, mode, cfg.t_max, cfg.samples, cfg.seed, cfg.workers)
        .map_err(|e| Outcome::fail(EXIT_CONFIG, e.to_string()))?;
    if let Some(dir) = &cfg.dump_dir {
        dump_trajectories(cfg, model, init, mode, dir)?;
    }
    if cfg.format == Format::Csv {
        let mut s = String::from("k,population,alive\n");
        for (k, (p, a)) in summary.endpoint_populations.iter().zip(&summary.alive).enumerate() {
            s.push_str(&format!("{k},{p},{a}\n"));
        }
        return Ok((Body::Csv(s), EXIT_OK));
    }
    let mut report = serde_json::to_value(&summary).expect("serializes");
    report["survivor_fraction"] = json!(summary.survivor_fraction());
    Ok((Body::Json(report), EXIT_OK))
}

fn dump_trajectories(cfg: &RunConfig, model: &Model, init: TotalState, mode: Mode, dir: &Path) -> Result<(), Outcome> {
    fs::create_dir_all(dir).map_err(numeric)?;
    let sampler = Sampler::new(model);
    for k in 0..cfg.dump_trajectories.min(cfg.samples) {
        let traj = run_stream(&sampler, init, mode, cfg.t_max, cfg.seed, k as u64).map_err(numeric)?;
        let file = fs::File::create(dir.join(format!("trajectory_{k}.csv"))).map_err(numeric)?;
        traj.write_csv(model.chain().labels(), std::io::BufWriter::new(file)).map_err(numeric)?;
    }
    Ok(())
}

fn validate(cfg: &RunConfig, model: &Model) -> CmdResult {
    let suite = SuiteConfig { t_max: cfg.t_max, samples: cfg.samples, seed: cfg.seed, init_population: cfg.init_population };
    let (checks, skipped) = default_suite(model, suite, cfg.workers).map_err(numeric)?;
    let all_passed = checks.iter().all(|c| c.passed);
    let report = json!({ "all_passed": all_passed, "checks": checks, "skipped": skipped });
    Ok((Body::Json(report), if all_passed { EXIT_OK } else { EXIT_CHECKS_FAILED }))
}

fn conjecture(cfg: &RunConfig, model: &Model) -> CmdResult {
    let n_max = cfg.n_max.unwrap_or(100);
    let rep = generation_environment_conjecture(model, n_max, cfg.tol, cfg.max_iter).map_err(numeric)?;
    if cfg.format == Format::Csv {
        let mut s = String::from("n,gap\n");
        for g in &rep.gaps {
            s.push_str(&format!("{},{}\n", g.n, g.gap));
        }
        return Ok((Body::Csv(s), EXIT_OK));
    }
    let labels = model.chain().labels();
    let report = json!({
        "extinction_matrix": LabeledMatrix::new(labels, rep.extinction.matrix.matrix()),
        "extinction_residual": rep.extinction.residual,
        "perron": rep.perron,
        "conjectured_limit": LabeledMatrix::new(labels, &rep.conjectured_limit),
        "final_iterate": LabeledMatrix::new(labels, &rep.final_iterate),
        "gaps": rep.gaps,
    });
    Ok((Body::Json(report), EXIT_OK))
}

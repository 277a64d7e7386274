use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use shrinkflow::config::{ExperimentConfig, ExperimentKind, ReplaySpec};
use shrinkflow::run::{run, Outcome, EXIT_CONFIG, EXIT_FAIL, EXIT_OK};
use shrinkflow::verify::{Verifier, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "shrinkflow", version, about = "Rescaled mean curvature flow near closed self-shrinkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiments described by JSON configs.
    Run {
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Output directory; with several configs each gets a subdirectory named after its file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed of every config.
        #[arg(long)]
        seed: Option<u64>,
        /// Experiments run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run a check suite: geometry, calculus, flow, spectrum, loja, noreturn, lsreduce or all.
    Verify {
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Override the bound of a check, e.g. `--tol A1.circle=1e-12`.
        #[arg(long = "tol", value_parser = parse_tol)]
        tols: Vec<(String, f64)>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Replay a stored flow run on the comeback schedule.
    Replay {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        b: f64,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true)]
        y0: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (id, v) = s.split_once('=').ok_or("expected ID=VALUE")?;
    let v: f64 = v.parse().map_err(|e| format!("{v}: {e}"))?;
    Ok((id.to_string(), v))
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { configs, out, seed, jobs } => run_configs(&configs, out, seed, jobs),
        Command::Verify { suite, out, seed, tols, jobs } => verify(&suite, out, seed, tols, jobs),
        Command::Replay { traj, t1, t2, b, y0, out } => {
            let y0 = y0.map(|v| [v[0], v[1]]).unwrap_or([0.0, 0.0]);
            let out = out.unwrap_or_else(|| traj.join("replay"));
            let cfg = ExperimentConfig {
                kind: ExperimentKind::Replay,
                base: None,
                perturbation: shrinkflow::config::PerturbationSpec::None,
                seed: 0,
                numerics: Default::default(),
                replay: Some(ReplaySpec {
                    traj,
                    t1,
                    t2,
                    b,
                    y0,
                    n_times: 41,
                }),
                out: None,
            };
            exit(run_one(&cfg, out))
        }
    }
}

fn run_one(cfg: &ExperimentConfig, out: PathBuf) -> i32 {
    match run(cfg, &out) {
        Ok(Outcome::ConfigError(m)) => {
            eprintln!("config error: {m}");
            EXIT_CONFIG
        }
        Ok(Outcome::Finished { status, dir }) => {
            eprintln!("{}: {:?}", dir.display(), status);
            status.exit_code()
        }
        Err(e) => {
            eprintln!("cannot write {}: {e}", out.display());
            EXIT_FAIL
        }
    }
}

fn run_configs(paths: &[PathBuf], out: Option<PathBuf>, seed: Option<u64>, jobs: usize) -> ExitCode {
    // every config is checked before anything runs, so a bad batch writes nothing
    let mut jobs_list = Vec::new();
    for p in paths {
        let mut cfg = match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{}: {e}", p.display());
                return exit(EXIT_CONFIG);
            }
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let dir = match (&out, &cfg.out, paths.len()) {
            (Some(o), _, 1) => o.clone(),
            (Some(o), _, _) => o.join(p.file_stem().unwrap_or_default()),
            (None, Some(o), _) => o.clone(),
            (None, None, _) => {
                eprintln!("{}: no output directory (use --out)", p.display());
                return exit(EXIT_CONFIG);
            }
        };
        jobs_list.push((cfg, dir));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    let codes: Vec<i32> = pool.install(|| jobs_list.par_iter().map(|(cfg, dir)| run_one(cfg, dir.clone())).collect());
    exit(codes.into_iter().max().unwrap_or(EXIT_OK))
}

fn verify(suite: &str, out: Option<PathBuf>, seed: u64, tols: Vec<(String, f64)>, jobs: usize) -> ExitCode {
    let start = Instant::now();
    let overrides: BTreeMap<String, f64> = tols.into_iter().collect();
    let mut v = Verifier::new(seed, overrides);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    if let Err(m) = pool.install(|| v.run_suite(suite)) {
        eprintln!("{m}");
        return exit(EXIT_CONFIG);
    }
    for c in &v.checks {
        let rel = match c.relation {
            shrinkflow::verify::Relation::AtMost => "<=",
            shrinkflow::verify::Relation::AtLeast => ">=",
        };
        println!(
            "{} {:<34} {:>12.4e} {rel} {:<10.3e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.id,
            c.measured,
            c.bound,
            c.description
        );
    }
    let passed = v.passed();
    let failed: Vec<&str> = v.checks.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
    if let Some(dir) = out {
        let mut art = std::mem::take(&mut v.artifacts);
        art.json("summary.json", &v.summary_json());
        match art.write(&dir) {
            Ok(entries) => {
                let manifest = serde_json::json!({
                    "tool": "shrinkflow",
                    "version": env!("CARGO_PKG_VERSION"),
                    "suite": suite,
                    "seed": seed,
                    "passed": passed,
                    "wall_seconds": start.elapsed().as_secs_f64(),
                    "artifacts": entries,
                });
                let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
                body.push('\n');
                if let Err(e) = std::fs::write(dir.join("manifest.json"), body) {
                    eprintln!("cannot write manifest: {e}");
                    return exit(EXIT_FAIL);
                }
            }
            Err(e) => {
                eprintln!("cannot write {}: {e}", dir.display());
                return exit(EXIT_FAIL);
            }
        }
    }
    if passed {
        println!("{} checks passed", v.checks.len());
        exit(EXIT_OK)
    } else {
        println!("failed: {}", failed.join(", "));
        exit(EXIT_FAIL)
    }
}

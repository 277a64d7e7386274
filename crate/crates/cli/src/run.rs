//! `shrinkflow run`: one experiment from a config, written to one directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use shrinkflow_core::flow::{
    gradient_identity_residual, run_graph_flow, stable_manifold_offset, FlowMode, FlowTrajectory, Snapshot,
    Termination,
};
use shrinkflow_core::geometry::{entropy, StateJson};
use shrinkflow_core::graph::{frechet_remainder, q_norm};
use shrinkflow_core::group::{comeback_replay, no_return_experiment, GroupElement, Verdict};
use shrinkflow_core::loja::{drift_bound_check, loja_check, weighted_integral_check};
use shrinkflow_core::reduction::{build_reduction, reduction_ladders, reduced_samples_csv, KernelChoice, EPS_LADDER};
use shrinkflow_core::shrinker::{
    closure_defect_table, eigen_identity_error, group_fields, newton_find_shrinker, seeded_unstable_perturbation,
    shoot_angenent_torus, spectrum, stability_report, NewtonOptions, ShootOptions,
};
use shrinkflow_core::{Error, Surface};

use crate::artifacts::{Artifacts, ManifestEntry};
use crate::config::{BaseSpec, ConfigError, ExperimentConfig, ExperimentKind, Numerics, PerturbationSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERDICT: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    NumericFailure(String),
    /// The run finished but its verdict contradicts the expected behaviour.
    VerdictNegative(String),
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Ok => EXIT_OK,
            RunStatus::NumericFailure(_) => EXIT_NUMERIC,
            RunStatus::VerdictNegative(_) => EXIT_VERDICT,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    seed: u64,
    #[serde(flatten)]
    status: &'a RunStatus,
    wall_seconds: f64,
    artifacts: Vec<ManifestEntry>,
}

/// Trajectory as stored on disk: enough to replay it later.
#[derive(Debug, Serialize, Deserialize)]
pub struct StoredTrajectory {
    pub mode: FlowMode,
    pub reference: StateJson,
    pub termination: Termination,
    pub snapshots: Vec<Snapshot>,
}

impl StoredTrajectory {
    pub fn from_trajectory(tr: &FlowTrajectory) -> Self {
        StoredTrajectory {
            mode: tr.mode,
            reference: tr.reference.to_json(),
            termination: tr.termination,
            snapshots: tr.snapshots.clone(),
        }
    }

    /// Trajectory with snapshots only; the per-step records are not stored.
    pub fn into_trajectory(self) -> shrinkflow_core::Result<FlowTrajectory> {
        Ok(FlowTrajectory {
            mode: self.mode,
            reference: Surface::from_json(&self.reference)?,
            records: Vec::new(),
            snapshots: self.snapshots,
            termination: self.termination,
            detail: None,
        })
    }
}

/// Either a configuration problem (nothing written) or a finished run.
pub enum Outcome {
    ConfigError(String),
    Finished { status: RunStatus, dir: PathBuf },
}

/// Run one experiment and write its artifacts and manifest under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> std::io::Result<Outcome> {
    if let Err(e) = cfg.validate() {
        return Ok(Outcome::ConfigError(e.to_string()));
    }
    let start = Instant::now();
    let mut art = Artifacts::default();
    let base = match cfg.base.as_ref().map(|b| b.build(&cfg.numerics)).transpose() {
        Ok(b) => b,
        Err(e @ (Error::TooFewSamples { .. } | Error::InvalidInput(_))) => {
            return Ok(Outcome::ConfigError(format!("base: {e}")));
        }
        Err(e) => {
            return finish(cfg, out, art, RunStatus::NumericFailure(format!("base: {e}")), start);
        }
    };
    let status = match execute(cfg, base.as_ref(), &mut art) {
        Ok(s) => s,
        Err(RunError::Config(m)) => return Ok(Outcome::ConfigError(m)),
        Err(RunError::Numeric(e)) => RunStatus::NumericFailure(e.to_string()),
    };
    finish(cfg, out, art, status, start)
}

fn finish(cfg: &ExperimentConfig, out: &Path, art: Artifacts, status: RunStatus, start: Instant) -> std::io::Result<Outcome> {
    let entries = art.write(out)?;
    let manifest = Manifest {
        tool: "shrinkflow",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seed: cfg.seed,
        status: &status,
        wall_seconds: start.elapsed().as_secs_f64(),
        artifacts: entries,
    };
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    std::fs::write(out.join("manifest.json"), body)?;
    Ok(Outcome::Finished {
        status,
        dir: out.to_path_buf(),
    })
}

pub enum RunError {
    Config(String),
    Numeric(Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Numeric(e)
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

fn need_base(base: Option<&Surface>) -> Result<&Surface, RunError> {
    base.ok_or_else(|| RunError::Config("this experiment needs a base".into()))
}

/// Initial graph over the base described by the perturbation spec.
pub fn initial_graph(
    cfg: &ExperimentConfig,
    base: &Surface,
) -> Result<(Vec<f64>, serde_json::Value), RunError> {
    let n = base.len();
    let sup_scaled = |f: &[f64], amplitude: f64| -> Vec<f64> {
        let sup = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        f.iter().map(|v| amplitude * v / sup).collect()
    };
    Ok(match &cfg.perturbation {
        PerturbationSpec::None => (vec![0.0; n], json!({})),
        PerturbationSpec::Cosine {
            k,
            amplitude,
            remove_dilation,
        } => {
            let shape: Vec<f64> = base.grid.params().iter().map(|t| amplitude * (*k as f64 * t).cos()).collect();
            if *remove_dilation {
                let (h, _) = group_fields(base);
                let off = stable_manifold_offset(base, &shape, &h, &[4.0, 8.0, 12.0], &cfg.numerics.flow_options())?;
                let u = shape.iter().zip(&h).map(|(s, d)| s + off * d).collect();
                (u, json!({ "dilation_offset": off }))
            } else {
                (shape, json!({}))
            }
        }
        PerturbationSpec::Mode { index, amplitude } => {
            let spec = spectrum(base, cfg.numerics.spectrum_modes.max(index + 1))?;
            let f = spec
                .eigenfields
                .get(*index)
                .ok_or_else(|| RunError::Config(format!("mode {index} is not available")))?;
            (sup_scaled(f, *amplitude), json!({ "eigenvalue": spec.eigenvalues[*index] }))
        }
        PerturbationSpec::Unstable { amplitude, mix } => {
            let spec = spectrum(base, cfg.numerics.spectrum_modes)?;
            let u = seeded_unstable_perturbation(&spec, *amplitude, *mix, cfg.seed)?;
            (u, json!({ "seed": cfg.seed }))
        }
        PerturbationSpec::Translation { amplitude } => {
            let (_, trans) = group_fields(base);
            let f = trans.last().expect("every base has an axial translation field");
            (sup_scaled(f, *amplitude), json!({}))
        }
    })
}

fn run_flow(base: &Surface, u0: &[f64], numerics: &Numerics, art: &mut Artifacts) -> Result<FlowTrajectory, RunError> {
    let tr = run_graph_flow(base, u0, numerics.horizon, &numerics.flow_options(), None)?;
    art.text("trajectory.csv", tr.csv());
    art.json("trajectory.json", &StoredTrajectory::from_trajectory(&tr));
    art.json("states.json", &tr.snapshot_states());
    Ok(tr)
}

fn flow_summary(tr: &FlowTrajectory) -> serde_json::Value {
    let residual = gradient_identity_residual(tr).ok();
    let worst = residual.as_ref().map(|r| r.iter().fold(0.0f64, |a, b| a.max(*b)));
    let monotone = tr.records.windows(2).all(|w| w[1].f_rel <= w[0].f_rel + 1e-12 * w[0].f.abs());
    json!({
        "termination": tr.termination,
        "detail": tr.detail,
        "t_end": tr.last().t,
        "steps": tr.records.len() - 1,
        "F_start": tr.records[0].f,
        "F_end": tr.last().f,
        "F_monotone": monotone,
        "gradient_identity_max_residual": worst,
    })
}

fn execute(cfg: &ExperimentConfig, base: Option<&Surface>, art: &mut Artifacts) -> Result<RunStatus, RunError> {
    let nm = &cfg.numerics;
    match cfg.kind {
        ExperimentKind::Flow => {
            let base = need_base(base)?;
            let (u0, info) = initial_graph(cfg, base)?;
            let tr = run_flow(base, &u0, nm, art)?;
            art.json("report.json", &json!({ "initial": info, "flow": flow_summary(&tr) }));
            Ok(match tr.termination {
                Termination::Blowup => RunStatus::NumericFailure(tr.detail.clone().unwrap_or_default()),
                _ => RunStatus::Ok,
            })
        }
        ExperimentKind::Spectrum => {
            let base = need_base(base)?;
            let spec = spectrum(base, nm.spectrum_modes)?;
            let stab = stability_report(base, &spec);
            let (h, trans) = group_fields(base);
            let dil = eigen_identity_error(base, &h, 1.0)?;
            let tr: Vec<f64> = trans.iter().map(|f| eigen_identity_error(base, f, 0.5)).collect::<Result<_, _>>()?;
            art.text("spectrum.csv", spec.csv());
            art.json(
                "stability.json",
                &json!({
                    "report": stab,
                    "dilation_identity_error": dil,
                    "translation_identity_errors": tr,
                    "orthonormality_residual": spec.orthonormality_residual,
                    "eigen_residual": spec.eigen_residual,
                    "base_residual": spec.base_residual,
                }),
            );
            art.text("geometry.csv", base.geometry_csv());
            Ok(RunStatus::Ok)
        }
        ExperimentKind::Find => {
            let base = need_base(base)?;
            let (u0, _) = initial_graph(cfg, base)?;
            let opts = NewtonOptions {
                tol: nm.newton_tol,
                ..NewtonOptions::default()
            };
            let res = newton_find_shrinker(base, &u0, &opts)?;
            let mut csv = String::from("iteration,residual,ratio\n");
            for (i, r) in res.residuals.iter().enumerate() {
                let ratio = if i == 0 { f64::NAN } else { res.ratios.get(i - 1).copied().unwrap_or(f64::NAN) };
                csv.push_str(&format!("{i},{r:e},{ratio:e}\n"));
            }
            art.text("newton.csv", csv);
            let found = base.normal_graph(&res.u);
            art.json("state.json", &found.to_json());
            art.json(
                "report.json",
                &json!({ "iterations": res.iterations, "final_residual": res.residuals.last(), "F": found.gaussian_area() }),
            );
            Ok(RunStatus::Ok)
        }
        ExperimentKind::Shoot => {
            let Some(BaseSpec::AngenentTorus { bracket, n_samples }) = cfg.base.clone() else {
                return Err(RunError::Config("shoot runs need an angenent-torus base".into()));
            };
            let opts = ShootOptions {
                n_samples,
                ode_tol: nm.ode_tol,
                ..ShootOptions::default()
            };
            let r = shoot_angenent_torus((bracket[0], bracket[1]), &opts)?;
            let table = closure_defect_table(bracket[0], bracket[1], 21, &opts);
            let mut csv = String::from("r0,closure_defect\n");
            for (a, d) in table {
                csv.push_str(&format!("{a:e},{d:e}\n"));
            }
            art.text("closure_defect.csv", csv);
            art.text("geometry.csv", r.surface.geometry_csv());
            art.json("state.json", &r.surface.to_json());
            art.json(
                "shooting.json",
                &json!({
                    "r0": r.r0,
                    "residual_sup": r.residual_sup,
                    "closure_defect": r.closure_defect,
                    "half_length": r.half_length,
                    "iterations": r.iterations,
                    "F": r.surface.gaussian_area(),
                }),
            );
            Ok(RunStatus::Ok)
        }
        ExperimentKind::Entropy => {
            let base = need_base(base)?;
            let (u0, _) = initial_graph(cfg, base)?;
            let m = base.normal_graph(&u0);
            let e = entropy(&m, &nm.entropy_search())?;
            art.json("entropy.json", &json!({ "F": m.gaussian_area(), "entropy": e }));
            Ok(RunStatus::Ok)
        }
        ExperimentKind::Loja => {
            let base = need_base(base)?;
            let (u0, info) = initial_graph(cfg, base)?;
            let tr = run_flow(base, &u0, nm, art)?;
            let fs = base.gaussian_area();
            let loja = loja_check(&tr, fs, nm.beta)?;
            art.text("loja.csv", loja.inequality.csv());
            let weighted = weighted_integral_check(&tr, fs, nm.beta, nm.gamma, 4)?;
            let t_end = tr.last().t;
            let first = 0.3 * t_end;
            let starts: Vec<f64> = (0..9).map(|k| first + 2.0 * k as f64 / 8.0).filter(|t| *t < t_end).collect();
            let drift = drift_bound_check(&tr, &starts, t_end, nm.drift_beta)?;
            let mut csv = String::from("t1,t2,drift,velocity_l1,delta_f\n");
            for s in &drift.samples {
                csv.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", s.t1, s.t2, s.drift, s.velocity_l1, s.delta_f));
            }
            art.text("drift.csv", csv);
            art.json(
                "loja.json",
                &json!({ "initial": info, "flow": flow_summary(&tr), "loja": loja, "weighted": weighted, "drift": drift }),
            );
            Ok(RunStatus::Ok)
        }
        ExperimentKind::Noreturn => {
            let base = need_base(base)?;
            let (u0, info) = initial_graph(cfg, base)?;
            let out = no_return_experiment(base, &u0, &nm.noreturn_config())?;
            art.text("trajectory.csv", out.csv());
            let mut csv = String::from("t,orbit_distance\n");
            for (t, d) in &out.distances {
                csv.push_str(&format!("{t:e},{d:e}\n"));
            }
            art.text("distances.csv", csv);
            art.json("verdict.json", &json!({ "initial": info, "report": out.report }));
            Ok(match out.report.verdict {
                Verdict::Returned => RunStatus::VerdictNegative(format!(
                    "trajectory returned to the orbit neighbourhood at t = {:?}",
                    out.report.t_return
                )),
                _ => RunStatus::Ok,
            })
        }
        ExperimentKind::Lsreduce => {
            let base = need_base(base)?;
            let (mut u, _) = initial_graph(cfg, base)?;
            if u.iter().all(|v| *v == 0.0) {
                return Err(RunError::Config("lsreduce needs a non-zero perturbation direction".into()));
            }
            let norm = q_norm(base, &u)?;
            u.iter_mut().for_each(|v| *v /= norm);
            let mut red = build_reduction(base, KernelChoice::Synthetic(nm.kernel_dim))?;
            let small: Vec<f64> = u.iter().map(|v| 0.01 * v).collect();
            let image = red.extended_operator(&small)?;
            let back = red.psi(&image)?;
            let round_trip = back.iter().zip(&small).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let (lf, lg) = reduction_ladders(&mut red, &u, &EPS_LADDER)?;
            let zero = vec![0.0; base.len()];
            let fr = frechet_remainder(base, &zero, &u, &EPS_LADDER)?;
            let mut dir = red.coordinates(&u)?;
            let dn = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
            if dn > 0.0 {
                dir.iter_mut().for_each(|c| *c /= dn);
            } else if let Some(c) = dir.first_mut() {
                *c = 1.0;
            }
            let radii: Vec<f64> = (-10..=10).map(|k| 0.01 * k as f64).collect();
            art.text("reduced.csv", reduced_samples_csv(&mut red, &dir, &radii)?);
            art.json(
                "lsreduce.json",
                &json!({
                    "kernel_eigenvalues": red.eigenvalues,
                    "psi_round_trip": round_trip,
                    "area_gap": lf,
                    "reduced_gradient": lg,
                    "frechet": fr,
                }),
            );
            Ok(RunStatus::Ok)
        }
        ExperimentKind::Replay => {
            let spec = cfg.replay.as_ref().ok_or_else(|| RunError::Config("missing replay section".into()))?;
            let path = spec.traj.join("trajectory.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
            let stored: StoredTrajectory = serde_json::from_str(&text)
                .map_err(|e| RunError::Config(format!("{} is not a stored trajectory: {e}", path.display())))?;
            let traj = stored.into_trajectory()?;
            let (sched, tr) = comeback_replay(
                &traj,
                spec.t1,
                spec.t2,
                spec.b,
                spec.y0,
                GroupElement::identity(),
                spec.n_times,
            )?;
            let end_error = replay_end_error(&traj, &tr, spec.t2, spec.b, spec.y0)?;
            art.text("replay.csv", tr.csv());
            art.json("replay_states.json", &tr.snapshot_states());
            art.json("schedule.json", &json!({
                    "stored_window": [spec.t1, spec.t2],
                    "schedule": sched,
                    "end_state_sup_error": end_error,
                }));
            Ok(RunStatus::Ok)
        }
    }
}

/// Sup distance between the replay at time 0 and `b (stored(t2) + y0)`,
/// with the stored state at `t2` interpolated from its snapshots.
pub fn replay_end_error(
    stored: &FlowTrajectory,
    replay: &FlowTrajectory,
    t2: f64,
    b: f64,
    y0: [f64; 2],
) -> shrinkflow_core::Result<f64> {
    let (sx, sy) = shrinkflow_core::group::interpolate_points(stored, t2)?;
    let (rx, ry) = replay.snapshot_points(replay.final_snapshot());
    Ok((0..sx.len()).fold(0.0f64, |m, j| {
        let ex = rx[j] - b * (sx[j] + y0[0]);
        let ey = ry[j] - b * (sy[j] + y0[1]);
        m.max(ex.hypot(ey))
    }))
}

//! Time stepping of the rescaled mean curvature flow
//! `x_t = (<x,n>/2 - H) n`, either as a normal graph `u_t = M(u)` over a
//! fixed base or intrinsically on the sample points of a closed loop.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polygon_self_intersects, Kind, StateJson, Surface};
use crate::graph::{flow_operator, graph_diagnostics, q_norm, SecondVariation};
use crate::spectral::{Layout, Parity};

/// RK4 is stable for real negative `lambda * dt` above about -2.78.
const RK4_REAL_STABILITY: f64 = 2.78;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Rk4,
    /// Linear part at the base implicit, remainder explicit.
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Horizon,
    Converged,
    GraphOverflow,
    Blowup,
    SelfIntersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    Graph,
    Intrinsic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowOptions {
    pub scheme: Scheme,
    /// Parabolic safety factor: `dt = cfl * h_min^2`.
    pub cfl: f64,
    /// Fixed step, overriding the CFL rule.
    pub dt: Option<f64>,
    /// Stop once `|M(u)|_Q` falls below this (graph runs only).
    pub converge_tol: f64,
    /// Leave the graphical regime once `sup|u|` exceeds this fraction of the reach.
    pub reach_fraction: f64,
    /// Leave the graphical regime once `sup|u_s|` exceeds this.
    pub max_slope: f64,
    /// Leave the graphical regime once the smallest sample spacing of the
    /// graph falls below this fraction of that of the base.
    pub min_spacing_ratio: f64,
    pub blowup: f64,
    /// Intrinsic runs double their sample count once curvature times sample
    /// spacing exceeds half of this, and stop once it exceeds this.
    pub max_curvature_spacing: f64,
    /// Cap on the sample count reached by doubling in intrinsic runs.
    pub max_samples: usize,
    /// Steps between stored snapshots and probe calls.
    pub snapshot_stride: usize,
    /// Steps between self-intersection checks in intrinsic runs.
    pub intersection_every: usize,
    /// Strength of the tangential term keeping intrinsic samples equally spaced.
    pub tangential_strength: f64,
    pub max_steps: usize,
    /// Time stamp of the initial state.
    pub t0: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            scheme: Scheme::Rk4,
            cfl: 0.2,
            dt: None,
            converge_tol: 1e-9,
            reach_fraction: 0.8,
            max_slope: 2.0,
            min_spacing_ratio: 0.85,
            blowup: 1e6,
            max_curvature_spacing: 0.5,
            max_samples: 1024,
            snapshot_stride: 50,
            intersection_every: 10,
            tangential_strength: 10.0,
            max_steps: 50_000_000,
            t0: 0.0,
        }
    }
}

/// Diagnostics of one accepted state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Gaussian area.
    pub f: f64,
    /// Gaussian area minus that of the base, computed without cancellation
    /// for graph runs; equal to `f` for intrinsic runs.
    pub f_rel: f64,
    /// `int |<x,n>/2 - H|^2 e^{-|x|^2/4}` over the current state.
    pub grad_norm2: f64,
    /// `int |<x,n>/2 - H| e^{-|x|^2/4}` over the current state.
    pub grad_l1: f64,
    pub sup_u: f64,
    pub sup_du: f64,
    pub orbit_dist: f64,
    /// Step that led to this state (0 for the initial state).
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotState {
    Graph(Vec<f64>),
    Points { x: Vec<f64>, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub state: SnapshotState,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub mode: FlowMode,
    /// Base of graph runs; the initial state of intrinsic runs.
    pub reference: Surface,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
    /// Error that ended the run, if any.
    pub detail: Option<String>,
}

impl FlowTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectories hold the initial record")
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectories hold the initial snapshot")
    }

    /// Geometry of a stored snapshot.
    pub fn surface(&self, snap: &Snapshot) -> Surface {
        match &snap.state {
            SnapshotState::Graph(u) => {
                let mut s = self.reference.normal_graph(u);
                s.t = snap.t;
                s
            }
            SnapshotState::Points { x, y } if x.len() == self.reference.len() => {
                self.reference.with_points(x.clone(), y.clone(), snap.t)
            }
            SnapshotState::Points { x, y } => self.reference.resized(x.clone(), y.clone(), snap.t),
        }
    }

    /// Sample points of a snapshot, without recomputing geometry.
    pub fn snapshot_points(&self, snap: &Snapshot) -> (Vec<f64>, Vec<f64>) {
        match &snap.state {
            SnapshotState::Graph(u) => {
                let b = &self.reference;
                let x = (0..u.len()).map(|j| b.x[j] + u[j] * b.normal[j][0]).collect();
                let y = (0..u.len()).map(|j| b.y[j] + u[j] * b.normal[j][1]).collect();
                (x, y)
            }
            SnapshotState::Points { x, y } => (x.clone(), y.clone()),
        }
    }

    /// Columns `t,F,grad_norm2,sup_u,sup_du,orbit_dist,dt,grad_l1,F_rel`.
    pub fn csv(&self) -> String {
        let mut out = String::from("t,F,grad_norm2,sup_u,sup_du,orbit_dist,dt,grad_l1,F_rel\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.t, r.f, r.grad_norm2, r.sup_u, r.sup_du, r.orbit_dist, r.dt, r.grad_l1, r.f_rel
            );
        }
        out
    }

    /// Snapshot states as loadable surface states.
    pub fn snapshot_states(&self) -> Vec<StateJson> {
        self.snapshots
            .iter()
            .map(|s| {
                let (x, y) = self.snapshot_points(s);
                StateJson {
                    kind: self.reference.kind,
                    n_samples: x.len(),
                    points: x.iter().zip(&y).map(|(a, b)| [*a, *b]).collect(),
                    t: s.t,
                    closure: self.reference.closure(),
                }
            })
            .collect()
    }
}

/// Smallest distance between consecutive samples.
pub fn min_spacing(s: &Surface) -> f64 {
    let n = s.len();
    let pairs = match s.closure() {
        Layout::Periodic => n,
        Layout::Polar => n - 1,
    };
    (0..pairs)
        .map(|j| {
            let k = (j + 1) % n;
            (s.x[k] - s.x[j]).hypot(s.y[k] - s.y[j])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest `|lambda|` of the second variation operator.
pub fn spectral_radius(base: &Surface) -> f64 {
    let sv = SecondVariation::new(base);
    let n = base.len();
    let mut m = sv.stiffness.clone();
    for i in 0..n {
        for k in 0..n {
            m[(i, k)] /= (sv.weight[i] * sv.weight[k]).sqrt();
        }
    }
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(0.0, |a: f64, v| a.max(v.abs()))
}

const SPACING_CHECK_EVERY: usize = 10;
const ENERGY_SLACK: f64 = 1e-10;

fn graph_step_size(base: &Surface, opts: &FlowOptions) -> f64 {
    if let Some(dt) = opts.dt {
        return dt;
    }
    let h = min_spacing(base);
    match opts.scheme {
        Scheme::Rk4 => {
            let dt = opts.cfl * h * h;
            // the polar grid has no uniform spacing; also respect the
            // stability interval of the linear part
            let limit = 0.7 * RK4_REAL_STABILITY / spectral_radius(base);
            dt.min(limit)
        }
        Scheme::SemiImplicit => opts.cfl * h,
    }
}

fn axpy(u: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    u.iter().zip(k).map(|(x, y)| x + a * y).collect()
}

/// Factorised `I - dt L` for the semi-implicit scheme.
pub struct ImplicitPart {
    lin: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dt: f64,
}

impl ImplicitPart {
    pub fn new(base: &Surface, dt: f64) -> ImplicitPart {
        let lin = SecondVariation::new(base).operator();
        let n = base.len();
        let a = DMatrix::identity(n, n) - &lin * dt;
        ImplicitPart { lu: a.lu(), lin, dt }
    }
}

/// One step of `u_t = M(u)`.
pub fn step_graph(base: &Surface, u: &[f64], dt: f64, scheme: Scheme) -> Result<Vec<f64>> {
    match scheme {
        Scheme::Rk4 => rk4(base, u, dt),
        Scheme::SemiImplicit => semi_implicit(base, u, &ImplicitPart::new(base, dt)),
    }
}

fn rk4(base: &Surface, u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let k1 = flow_operator(base, u)?;
    let k2 = flow_operator(base, &axpy(u, 0.5 * dt, &k1))?;
    let k3 = flow_operator(base, &axpy(u, 0.5 * dt, &k2))?;
    let k4 = flow_operator(base, &axpy(u, dt, &k3))?;
    Ok((0..u.len())
        .map(|j| u[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect())
}

fn semi_implicit(base: &Surface, u: &[f64], imp: &ImplicitPart) -> Result<Vec<f64>> {
    let m = flow_operator(base, u)?;
    let uv = DVector::from_column_slice(u);
    let lu = &imp.lin * &uv;
    let rhs = DVector::from_iterator(u.len(), (0..u.len()).map(|j| u[j] + imp.dt * (m[j] - lu[j])));
    let sol = imp
        .lu
        .solve(&rhs)
        .ok_or(Error::SingularLinearization { min_singular: 0.0 })?;
    Ok(sol.iter().copied().collect())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, x| a.max(x.abs()))
}

/// Optional observer called on every stored snapshot; its value fills
/// `orbit_dist` of the matching record.
pub type Probe<'a> = &'a mut dyn FnMut(f64, &Surface) -> Option<f64>;

struct Recorder<'a> {
    probe: Option<Probe<'a>>,
    records: Vec<StepRecord>,
    snapshots: Vec<Snapshot>,
}

impl<'a> Recorder<'a> {
    fn snapshot(&mut self, step: usize, t: f64, state: SnapshotState, surface: impl FnOnce() -> Surface) {
        if let Some(p) = self.probe.as_mut() {
            let s = surface();
            if let Some(d) = p(t, &s) {
                if let Some(r) = self.records.last_mut() {
                    r.orbit_dist = d;
                }
            }
        }
        self.snapshots.push(Snapshot { step, t, state });
    }
}

fn graph_record(base: &Surface, u: &[f64], t: f64, dt: f64, f_base: f64) -> Result<(StepRecord, Vec<f64>)> {
    let (d, flow) = graph_diagnostics(base, u)?;
    let (us, _) = base.d_arclength(u);
    Ok((
        StepRecord {
            t,
            f: f_base + d.f_rel,
            f_rel: d.f_rel,
            grad_norm2: d.grad_norm2,
            grad_l1: d.grad_l1,
            sup_u: sup(u),
            sup_du: sup(&us),
            orbit_dist: f64::NAN,
            dt,
        },
        flow,
    ))
}

/// Evolve `u_t = M(u)` from `u0` until `horizon` (absolute time), convergence
/// or loss of the graphical regime.
pub fn run_graph_flow(
    base: &Surface,
    u0: &[f64],
    horizon: f64,
    opts: &FlowOptions,
    probe: Option<Probe<'_>>,
) -> Result<FlowTrajectory> {
    base.check_field(u0)?;
    let limit = opts.reach_fraction * base.reach();
    if sup(u0) >= limit {
        return Err(Error::GraphOverflow {
            sup_u: sup(u0),
            limit,
        });
    }
    let f_base = base.gaussian_area();
    let dt0 = graph_step_size(base, opts);
    let imp = match opts.scheme {
        Scheme::SemiImplicit => Some(ImplicitPart::new(base, dt0)),
        Scheme::Rk4 => None,
    };
    let h_base = min_spacing(base);
    let stride = opts.snapshot_stride.max(1);
    let mut rec = Recorder {
        probe,
        records: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut u = u0.to_vec();
    let mut t = opts.t0;
    let (r0, mut flow) = graph_record(base, &u, t, 0.0, f_base)?;
    rec.records.push(r0);
    rec.snapshot(0, t, SnapshotState::Graph(u.clone()), || base.normal_graph(&u));

    let mut termination = Termination::Horizon;
    let mut detail = None;
    let mut step = 0usize;
    let mut last_snap = 0usize;
    loop {
        if q_norm(base, &flow)? < opts.converge_tol {
            termination = Termination::Converged;
            break;
        }
        if t >= horizon - 1e-12 * horizon.abs().max(1.0) || step >= opts.max_steps {
            break;
        }
        if step % SPACING_CHECK_EVERY == 0 {
            // the step was sized for the base; a contracted graph needs a
            // smaller one, so hand over to the intrinsic solver instead
            let ratio = min_spacing(&base.normal_graph(&u)) / h_base;
            if ratio < opts.min_spacing_ratio {
                termination = Termination::GraphOverflow;
                detail = Some(format!("sample spacing contracted to {ratio:.4} of the base spacing"));
                break;
            }
        }
        let mut dt = dt0;
        if t + dt > horizon {
            dt = horizon - t;
        }
        let next = match (&imp, opts.scheme) {
            (Some(imp), _) if dt == dt0 => semi_implicit(base, &u, imp),
            (Some(_), _) => semi_implicit(base, &u, &ImplicitPart::new(base, dt)),
            (None, _) => rk4(base, &u, dt),
        };
        let next = match next {
            Ok(v) => v,
            Err(e) => {
                termination = match e {
                    Error::GraphOverflow { .. } => Termination::GraphOverflow,
                    _ => Termination::Blowup,
                };
                detail = Some(e.to_string());
                break;
            }
        };
        if next.iter().any(|v| !v.is_finite()) || sup(&next) > opts.blowup {
            termination = Termination::Blowup;
            detail = Some("non-finite or huge graph".into());
            break;
        }
        let (us, _) = base.d_arclength(&next);
        if sup(&next) > limit || sup(&us) > opts.max_slope {
            termination = Termination::GraphOverflow;
            detail = Some(format!("sup|u| = {:.4e}, sup|u_s| = {:.4e}", sup(&next), sup(&us)));
            break;
        }
        u = next;
        t += dt;
        step += 1;
        let (r, f) = graph_record(base, &u, t, dt, f_base)?;
        flow = f;
        rec.records.push(r);
        if step % stride == 0 {
            last_snap = step;
            rec.snapshot(step, t, SnapshotState::Graph(u.clone()), || base.normal_graph(&u));
        }
    }
    if last_snap != step {
        rec.snapshot(step, t, SnapshotState::Graph(u.clone()), || base.normal_graph(&u));
    }
    Ok(FlowTrajectory {
        mode: FlowMode::Graph,
        reference: base.clone(),
        records: rec.records,
        snapshots: rec.snapshots,
        termination,
        detail,
    })
}

/// Resample a periodic loop at equal arclength, keeping the first sample.
pub fn reparametrize_equal_arclength(s: &Surface) -> Result<Surface> {
    resample_equal_arclength(s, s.len())
}

/// Equal-arclength resampling onto `m` samples by spectral interpolation.
pub fn resample_equal_arclength(s: &Surface, m: usize) -> Result<Surface> {
    if s.closure() != Layout::Periodic {
        return Err(Error::Unsupported("equal-arclength resampling needs a periodic loop".into()));
    }
    let n = s.len();
    let grid = &s.grid;
    let (cum, total) = grid.cumulative_integral(&s.g);
    let two_pi = 2.0 * std::f64::consts::PI;
    let slope = total / two_pi;
    let params = grid.params();
    let periodic_part: Vec<f64> = (0..n).map(|j| cum[j] - slope * params[j]).collect();
    let sp = grid.interpolant(&periodic_part, Parity::Even);
    let gi = grid.interpolant(&s.g, Parity::Even);
    let xi = grid.interpolant(&s.x, Parity::Even);
    let yi = grid.interpolant(&s.y, Parity::Even);
    let mut x = Vec::with_capacity(m);
    let mut y = Vec::with_capacity(m);
    for j in 0..m {
        let target = total * j as f64 / m as f64;
        let mut th = two_pi * j as f64 / m as f64;
        for _ in 0..50 {
            let f = slope * th + sp.eval(th) - target;
            let step = f / gi.eval(th);
            th -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        x.push(xi.eval(th));
        y.push(yi.eval(th));
    }
    if m == n {
        Ok(s.with_points(x, y, s.t))
    } else {
        Ok(s.resized(x, y, s.t))
    }
}

/// Normal speed `<x,n>/2 - H` of an intrinsic state.
fn normal_speed(s: &Surface) -> Vec<f64> {
    s.shrinker_residual().iter().map(|r| -r).collect()
}

/// Velocity of the samples: normal speed plus a tangential term driving the
/// speed `|x_theta|` toward its mean.
fn intrinsic_velocity(s: &Surface, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let n = s.len();
    let v = normal_speed(s);
    let gkv: Vec<f64> = (0..n).map(|j| s.g[j] * s.k1[j] * v[j]).collect();
    let mean_gkv = gkv.iter().sum::<f64>() / n as f64;
    let mean_g = s.g.iter().sum::<f64>() / n as f64;
    let tau_theta: Vec<f64> = (0..n)
        .map(|j| mean_gkv - gkv[j] + alpha * (mean_g - s.g[j]))
        .collect();
    let (tau, _) = s.grid.cumulative_integral(&tau_theta);
    let mean_tau = tau.iter().sum::<f64>() / n as f64;
    let vx = (0..n)
        .map(|j| v[j] * s.normal[j][0] + (tau[j] - mean_tau) * s.tangent[j][0])
        .collect();
    let vy = (0..n)
        .map(|j| v[j] * s.normal[j][1] + (tau[j] - mean_tau) * s.tangent[j][1])
        .collect();
    (vx, vy)
}

fn intrinsic_record(s: &Surface, t: f64, dt: f64) -> StepRecord {
    let v = normal_speed(s);
    let f = s.gaussian_area();
    StepRecord {
        t,
        f,
        f_rel: f,
        grad_norm2: (0..s.len()).map(|j| s.weight[j] * v[j] * v[j]).sum(),
        grad_l1: (0..s.len()).map(|j| s.weight[j] * v[j].abs()).sum(),
        sup_u: f64::NAN,
        sup_du: f64::NAN,
        orbit_dist: f64::NAN,
        dt,
    }
}

enum IntrinsicFailure {
    Blowup(String),
    Axis,
}

fn curvature_spacing(s: &Surface) -> f64 {
    let kmax = s.k1.iter().chain(&s.k2).fold(0.0, |a: f64, k| a.max(k.abs()));
    kmax * min_spacing(s)
}

fn intrinsic_check(s: &Surface, opts: &FlowOptions, h: f64) -> std::result::Result<(), IntrinsicFailure> {
    let finite = s.x.iter().chain(&s.y).all(|v| v.is_finite());
    if !finite {
        return Err(IntrinsicFailure::Blowup("non-finite samples".into()));
    }
    let far = s.x.iter().zip(&s.y).any(|(a, b)| a.hypot(*b) > opts.blowup);
    if far {
        return Err(IntrinsicFailure::Blowup("samples escaped".into()));
    }
    let kmax = s.k1.iter().chain(&s.k2).fold(0.0, |a: f64, k| a.max(k.abs()));
    if !kmax.is_finite() || kmax * h > opts.max_curvature_spacing {
        return Err(IntrinsicFailure::Blowup(format!("curvature {kmax:.3e} unresolved")));
    }
    if s.kind == Kind::Revolution && s.x.iter().any(|r| *r <= 0.0) {
        return Err(IntrinsicFailure::Axis);
    }
    Ok(())
}

/// Evolve a closed periodic loop (a plane curve or a torus-type profile) by
/// moving its samples.
pub fn run_curve_flow(
    curve0: &Surface,
    horizon: f64,
    opts: &FlowOptions,
    probe: Option<Probe<'_>>,
) -> Result<FlowTrajectory> {
    let start = reparametrize_equal_arclength(curve0)?;
    let h0 = min_spacing(&start);
    let dt0 = opts.dt.unwrap_or(opts.cfl * h0 * h0);
    let alpha = opts.tangential_strength;
    let stride = opts.snapshot_stride.max(1);
    let check_every = opts.intersection_every.max(1);
    let mut rec = Recorder {
        probe,
        records: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut s = start.clone();
    let mut t = opts.t0;
    s.t = t;
    rec.records.push(intrinsic_record(&s, t, 0.0));
    let snap = |s: &Surface| SnapshotState::Points {
        x: s.x.clone(),
        y: s.y.clone(),
    };
    rec.snapshot(0, t, snap(&s), || s.clone());

    let mut termination = Termination::Horizon;
    let mut detail = None;
    let mut step = 0usize;
    let mut last_snap = 0usize;
    let mut f_prev = rec.records[0].f;
    let mut dt_cap = 2.0 * dt0;
    while t < horizon - 1e-12 * horizon.abs().max(1.0) && step < opts.max_steps {
        while 2 * s.len() <= opts.max_samples && curvature_spacing(&s) > 0.5 * opts.max_curvature_spacing {
            s = resample_equal_arclength(&s, 2 * s.len())?;
            f_prev = s.gaussian_area();
            let h = min_spacing(&s);
            dt_cap = 2.0 * opts.cfl * h * h;
        }
        let n = s.len();
        let h = min_spacing(&s);
        let mut dt = opts.dt.unwrap_or(opts.cfl * h * h).min(dt_cap);
        if t + dt > horizon {
            dt = horizon - t;
        }
        let stage = |base: &Surface, kx: &[f64], ky: &[f64], a: f64| {
            base.with_points(axpy(&s.x, a, kx), axpy(&s.y, a, ky), t)
        };
        let (k1x, k1y) = intrinsic_velocity(&s, alpha);
        let s2 = stage(&s, &k1x, &k1y, 0.5 * dt);
        let (k2x, k2y) = intrinsic_velocity(&s2, alpha);
        let s3 = stage(&s, &k2x, &k2y, 0.5 * dt);
        let (k3x, k3y) = intrinsic_velocity(&s3, alpha);
        let s4 = stage(&s, &k3x, &k3y, dt);
        let (k4x, k4y) = intrinsic_velocity(&s4, alpha);
        let x: Vec<f64> = (0..n)
            .map(|j| s.x[j] + dt / 6.0 * (k1x[j] + 2.0 * k2x[j] + 2.0 * k3x[j] + k4x[j]))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|j| s.y[j] + dt / 6.0 * (k1y[j] + 2.0 * k2y[j] + 2.0 * k3y[j] + k4y[j]))
            .collect();
        let next = s.with_points(x, y, t + dt);
        let failure = [&s2, &s3, &s4, &next]
            .iter()
            .find_map(|c| intrinsic_check(c, opts, min_spacing(&next)).err());
        match failure {
            Some(IntrinsicFailure::Blowup(msg)) => {
                termination = Termination::Blowup;
                detail = Some(msg);
                break;
            }
            Some(IntrinsicFailure::Axis) => {
                termination = Termination::SelfIntersection;
                detail = Some(format!("profile touches the axis at t = {:.6}", t + dt));
                break;
            }
            None => {}
        }
        step += 1;
        if step % check_every == 0 && polygon_self_intersects(&next.points()) {
            termination = Termination::SelfIntersection;
            detail = Some(Error::SelfIntersection { t: t + dt }.to_string());
            break;
        }
        let record = intrinsic_record(&next, t + dt, dt);
        if record.f > f_prev + ENERGY_SLACK * f_prev.abs() {
            // the area cannot grow along the flow; the discretization has failed
            termination = Termination::Blowup;
            detail = Some(format!("Gaussian area increased at t = {:.6}", t + dt));
            break;
        }
        f_prev = record.f;
        s = next;
        t += dt;
        rec.records.push(record);
        if step % stride == 0 {
            last_snap = step;
            rec.snapshot(step, t, snap(&s), || s.clone());
        }
    }
    if last_snap != step {
        rec.snapshot(step, t, snap(&s), || s.clone());
    }
    Ok(FlowTrajectory {
        mode: FlowMode::Intrinsic,
        reference: start,
        records: rec.records,
        snapshots: rec.snapshots,
        termination,
        detail,
    })
}

/// Relative mismatch between the centred difference of `F` and minus the
/// recorded squared gradient norm at every interior step.
pub fn gradient_identity_residual(traj: &FlowTrajectory) -> Result<Vec<f64>> {
    let r = &traj.records;
    if r.len() < 3 {
        return Err(Error::InvalidInput("need at least three records".into()));
    }
    let value = |k: usize| match traj.mode {
        FlowMode::Graph => r[k].f_rel,
        FlowMode::Intrinsic => r[k].f,
    };
    Ok((1..r.len() - 1)
        .map(|k| {
            let h1 = r[k].t - r[k - 1].t;
            let h2 = r[k + 1].t - r[k].t;
            let df = (h1 * h1 * value(k + 1) - h2 * h2 * value(k - 1) - (h1 * h1 - h2 * h2) * value(k))
                / (h1 * h2 * (h1 + h2));
            let g = r[k].grad_norm2;
            if df.abs() < 1e-12 && g < 1e-12 {
                0.0
            } else {
                (df + g).abs() / df.abs().max(g)
            }
        })
        .collect())
}

/// Relative rate `d/dt log |u|_Q` measured between two records by the
/// stored snapshots.
pub fn log_rate(traj: &FlowTrajectory, a: &Snapshot, b: &Snapshot) -> Result<f64> {
    let (SnapshotState::Graph(ua), SnapshotState::Graph(ub)) = (&a.state, &b.state) else {
        return Err(Error::Unsupported("log rate needs graph snapshots".into()));
    };
    let na = q_norm(&traj.reference, ua)?;
    let nb = q_norm(&traj.reference, ub)?;
    Ok((nb / na).ln() / (b.t - a.t))
}

/// Component of `u` along `dir` in the Q inner product.
fn q_component(base: &Surface, u: &[f64], dir: &[f64]) -> Result<f64> {
    Ok(crate::graph::q_inner(base, u, dir)? / crate::graph::q_inner(base, dir, dir)?)
}

/// Offset `c` such that `shape + c * dir` flows toward the base, where `dir`
/// spans the single unstable direction excited by `shape` (typically the
/// dilation mode). Secant iterations on the component along `dir` after
/// successively longer horizons.
pub fn stable_manifold_offset(
    base: &Surface,
    shape: &[f64],
    dir: &[f64],
    horizons: &[f64],
    opts: &FlowOptions,
) -> Result<f64> {
    base.check_field(shape)?;
    base.check_field(dir)?;
    let mut quiet = opts.clone();
    quiet.converge_tol = 0.0;
    quiet.snapshot_stride = usize::MAX;
    let end_component = |c: f64, horizon: f64| -> Result<f64> {
        let u0 = axpy(shape, c, dir);
        let tr = run_graph_flow(base, &u0, horizon, &quiet, None)?;
        let SnapshotState::Graph(u) = &tr.final_snapshot().state else {
            unreachable!("graph runs store graph snapshots")
        };
        let p = q_component(base, u, dir)?;
        if tr.termination == Termination::Horizon {
            Ok(p)
        } else {
            // escaped early: extrapolate with the linear growth rate
            Ok(p * (horizon - tr.last().t).exp())
        }
    };
    let mut c = 0.0;
    for &horizon in horizons {
        let mut h = 1e-4 * (-horizon).exp().max(1e-12);
        let mut p = end_component(c, horizon)?;
        for _ in 0..4 {
            let p2 = end_component(c + h, horizon)?;
            let slope = (p2 - p) / h;
            if !(slope.abs() > 0.0) {
                break;
            }
            let dc = -p / slope;
            c += dc;
            p = end_component(c, horizon)?;
            if dc.abs() <= 1e-15 * (1.0 + c.abs()) {
                break;
            }
            h = dc.abs().max(1e-14);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_circle, build_sphere};
    use std::f64::consts::SQRT_2;

    fn field(s: &Surface, f: impl Fn(f64) -> f64) -> Vec<f64> {
        s.grid.params().iter().map(|t| f(*t)).collect()
    }

    #[test]
    fn fixed_point_stays_put() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let u = step_graph(&c, &vec![0.0; 64], 1e-3, Scheme::Rk4).unwrap();
        assert!(sup(&u) < 1e-12);
        let u = step_graph(&c, &vec![0.0; 64], 1e-3, Scheme::SemiImplicit).unwrap();
        assert!(sup(&u) < 1e-12);
    }

    #[test]
    fn single_steps_follow_linear_rates() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let eps = 1e-6;
        let dt = 1e-3;
        let u = field(&c, |t| eps * (2.0 * t).cos());
        let v = step_graph(&c, &u, dt, Scheme::Rk4).unwrap();
        let ratio = q_norm(&c, &v).unwrap() / q_norm(&c, &u).unwrap();
        assert!((ratio - (-dt).exp()).abs() < 1e-8, "{ratio}");
        let u = vec![eps; 64];
        let v = step_graph(&c, &u, dt, Scheme::Rk4).unwrap();
        assert!((v[0] / eps - dt.exp()).abs() < 1e-8);
    }

    #[test]
    fn decaying_mode_converges_monotonically() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let shape = field(&c, |t| 0.05 * (2.0 * t).cos());
        let one = vec![1.0; 64];
        let opts = FlowOptions {
            converge_tol: 1e-6,
            ..FlowOptions::default()
        };
        let off = stable_manifold_offset(&c, &shape, &one, &[4.0, 8.0, 12.0], &opts).unwrap();
        let u0 = axpy(&shape, off, &one);
        let tr = run_graph_flow(&c, &u0, 30.0, &opts, None).unwrap();
        assert_eq!(tr.termination, Termination::Converged);
        for w in tr.records.windows(2) {
            assert!(w[1].f <= w[0].f + 1e-10 * (1.0 + w[0].f.abs()));
        }
        let res = gradient_identity_residual(&tr).unwrap();
        let worst = res.iter().fold(0.0, |a: f64, b| a.max(*b));
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn dilation_mode_leaves_neighbourhood() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let tr = run_graph_flow(&c, &vec![0.05; 64], 20.0, &FlowOptions::default(), None).unwrap();
        assert_eq!(tr.termination, Termination::GraphOverflow);
    }

    #[test]
    fn zero_graph_converges_immediately() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let tr = run_graph_flow(&c, &vec![0.0; 64], 1.0, &FlowOptions::default(), None).unwrap();
        assert_eq!(tr.termination, Termination::Converged);
        assert_eq!(tr.records.len(), 1);
    }

    #[test]
    fn sphere_graph_flow_is_stable() {
        let s = build_sphere(2.0, 48).unwrap();
        let u0 = field(&s, |t| 0.01 * (1.5 * t.cos() * t.cos() - 0.5));
        let tr = run_graph_flow(&s, &u0, 2.0, &FlowOptions::default(), None).unwrap();
        assert_eq!(tr.termination, Termination::Horizon);
        let SnapshotState::Graph(u) = &tr.final_snapshot().state else { panic!() };
        // the P2 mode has eigenvalue 1 - 6/4 = -1/2
        let ratio = q_norm(&s, u).unwrap() / q_norm(&s, &u0).unwrap();
        assert!((ratio - (-1.0f64).exp()).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn equal_arclength_resampling() {
        let e = crate::geometry::build_ellipse(2.0, 1.0, 128).unwrap();
        let r = reparametrize_equal_arclength(&e).unwrap();
        let mean = r.g.iter().sum::<f64>() / 128.0;
        assert!(r.g.iter().all(|g| (g - mean).abs() < 1e-8 * mean));
        assert!((r.gaussian_area() - e.gaussian_area()).abs() < 1e-10);
    }

    #[test]
    fn intrinsic_circle_radius_one_grows() {
        let c = build_circle(1.0, 64).unwrap();
        let tr = run_curve_flow(&c, 0.5, &FlowOptions::default(), None).unwrap();
        assert_eq!(tr.termination, Termination::Horizon);
        let s = tr.surface(tr.final_snapshot());
        let r = s.x.iter().zip(&s.y).map(|(a, b)| a.hypot(*b)).sum::<f64>() / 64.0;
        // r' = r/2 - 1/r, solved in r^2: r^2 = 2 - (2 - 1) e^{t}
        let exact = (2.0 - (0.5f64).exp()).sqrt();
        assert!((r - exact).abs() < 1e-6, "{r} {exact}");
    }
}

//! Rigid motions and dilations acting on states, the distance from a state
//! to the orbit of a shrinker, replays of a stored flow under the group, and
//! the no-return experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    run_curve_flow, run_graph_flow, FlowMode, FlowOptions, FlowTrajectory, Snapshot, SnapshotState, StepRecord,
    Termination,
};
use crate::geometry::{Kind, Surface};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::spectral::Layout;

/// `x -> scale * (R x + translation)` with `R` a rotation by `angle`,
/// preceded by the reflection `y -> -y` when `flip` is set. For surfaces of
/// revolution only `angle = 0` and axial translations are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub angle: f64,
    pub flip: bool,
    pub translation: [f64; 2],
    pub scale: f64,
}

impl Default for GroupElement {
    fn default() -> Self {
        GroupElement::identity()
    }
}

impl GroupElement {
    pub fn identity() -> Self {
        GroupElement {
            angle: 0.0,
            flip: false,
            translation: [0.0, 0.0],
            scale: 1.0,
        }
    }

    pub fn dilation(a: f64) -> Self {
        GroupElement {
            scale: a,
            ..GroupElement::identity()
        }
    }

    pub fn translation(v: [f64; 2]) -> Self {
        GroupElement {
            translation: v,
            ..GroupElement::identity()
        }
    }

    fn rotate(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let y = if self.flip { -p[1] } else { p[1] };
        [c * p[0] - s * y, s * p[0] + c * y]
    }

    fn rotate_inverse(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let x = c * p[0] + s * p[1];
        let y = -s * p[0] + c * p[1];
        [x, if self.flip { -y } else { y }]
    }

    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.rotate(p);
        [
            self.scale * (q[0] + self.translation[0]),
            self.scale * (q[1] + self.translation[1]),
        ]
    }

    /// `self` after `other`: `(g h)(x) = g(h(x))`.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        let angle = if self.flip {
            self.angle - other.angle
        } else {
            self.angle + other.angle
        };
        let rt = self.rotate(other.translation);
        GroupElement {
            angle,
            flip: self.flip != other.flip,
            translation: [
                rt[0] + self.translation[0] / other.scale,
                rt[1] + self.translation[1] / other.scale,
            ],
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        let t = self.rotate_inverse(self.translation);
        let angle = if self.flip { self.angle } else { -self.angle };
        GroupElement {
            angle,
            flip: self.flip,
            translation: [-self.scale * t[0], -self.scale * t[1]],
            scale: 1.0 / self.scale,
        }
    }

    fn check_for(&self, kind: Kind) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidInput(format!("scale must be positive, got {}", self.scale)));
        }
        if kind == Kind::Revolution && (self.angle != 0.0 || self.translation[0] != 0.0) {
            return Err(Error::InvalidInput(
                "surfaces of revolution admit only axial translations and the reflection z -> -z".into(),
            ));
        }
        Ok(())
    }
}

/// Image of a state under `g`, with geometry recomputed.
pub fn apply_group(g: &GroupElement, m: &Surface) -> Result<Surface> {
    g.check_for(m.kind)?;
    let pts: Vec<[f64; 2]> = m.points().iter().map(|p| g.apply_point(*p)).collect();
    Surface::from_points(m.kind, m.closure(), &pts, m.t)
}

fn segment_distance2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let (px, py) = (p[0] - a[0], p[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (px - t * dx, py - t * dy);
    ex * ex + ey * ey
}

/// Mean squared distance from `points` to the closed polygon `poly`.
fn mean_distance2(points: &[[f64; 2]], poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut total = 0.0;
    for p in points {
        let mut best = f64::INFINITY;
        for j in 0..n {
            best = best.min(segment_distance2(*p, poly[j], poly[(j + 1) % n]));
        }
        total += best;
    }
    total / points.len() as f64
}

/// Root of the symmetric mean squared nearest-point distance between two
/// sampled states.
pub fn symmetric_distance(a: &Surface, b: &Surface) -> f64 {
    let la = a.planar_loop();
    let lb = b.planar_loop();
    (0.5 * (mean_distance2(&a.points(), &lb) + mean_distance2(&b.points(), &la))).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrbitOptions {
    pub x_tol: f64,
    pub max_evals: usize,
    /// Rotation seeds for plane curves.
    pub angle_seeds: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            x_tol: 1e-10,
            max_evals: 4000,
            angle_seeds: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitFit {
    pub distance: f64,
    /// Best element with `m ~ g(base)`.
    pub g: GroupElement,
    pub converged: bool,
}

struct OrbitProblem<'a> {
    kind: Kind,
    points: Vec<[f64; 2]>,
    base_loop: Vec<[f64; 2]>,
    base_points: Vec<[f64; 2]>,
    polar: bool,
    _m: &'a Surface,
}

impl<'a> OrbitProblem<'a> {
    fn new(m: &'a Surface, base: &Surface) -> Self {
        OrbitProblem {
            kind: base.kind,
            points: m.points(),
            base_loop: base.planar_loop(),
            base_points: base.points(),
            polar: m.closure() == Layout::Polar,
            _m: m,
        }
    }

    /// `h` maps the state onto the base frame.
    fn element(&self, x: &[f64], flip: bool) -> GroupElement {
        match self.kind {
            Kind::Curve => GroupElement {
                angle: x[1],
                flip,
                translation: [x[2], x[3]],
                scale: x[0].exp(),
            },
            Kind::Revolution => GroupElement {
                angle: 0.0,
                flip,
                translation: [0.0, x[1]],
                scale: x[0].exp(),
            },
        }
    }

    fn transformed(&self, h: &GroupElement) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let pts: Vec<[f64; 2]> = self.points.iter().map(|p| h.apply_point(*p)).collect();
        let poly = if self.polar {
            let mut l = pts.clone();
            l.extend(pts.iter().rev().map(|p| [-p[0], p[1]]));
            l
        } else {
            pts.clone()
        };
        (pts, poly)
    }

    fn objective(&self, h: &GroupElement) -> f64 {
        let (pts, poly) = self.transformed(h);
        0.5 * (mean_distance2(&pts, &self.base_loop) + mean_distance2(&self.base_points, &poly))
    }

    fn moments(points: &[[f64; 2]], polar: bool) -> ([f64; 2], f64) {
        let n = points.len() as f64;
        let mut c = [0.0, 0.0];
        for p in points {
            c[0] += p[0] / n;
            c[1] += p[1] / n;
        }
        if polar {
            c[0] = 0.0;
        }
        let rms = (points
            .iter()
            .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        (c, rms)
    }

    fn seeds(&self, opts: &OrbitOptions) -> Vec<(Vec<f64>, bool)> {
        let (cm, rm) = Self::moments(&self.points, self.polar);
        let (cb, rb) = Self::moments(&self.base_points, self.polar);
        let a = rb / rm;
        let mut out = Vec::new();
        match self.kind {
            Kind::Curve => {
                for k in 0..opts.angle_seeds.max(1) {
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / opts.angle_seeds.max(1) as f64;
                    let g = GroupElement {
                        angle,
                        flip: false,
                        translation: [0.0, 0.0],
                        scale: 1.0,
                    };
                    let rc = g.rotate(cm);
                    out.push((vec![a.ln(), angle, cb[0] / a - rc[0], cb[1] / a - rc[1]], false));
                }
            }
            Kind::Revolution => {
                for flip in [false, true] {
                    let zc = if flip { -cm[1] } else { cm[1] };
                    out.push((vec![a.ln(), cb[1] / a - zc], flip));
                }
            }
        }
        out
    }

    fn fit(&self, extra: Option<&GroupElement>, opts: &OrbitOptions) -> OrbitFit {
        let mut starts = self.seeds(opts);
        if let Some(h) = extra {
            let x = match self.kind {
                Kind::Curve => vec![h.scale.ln(), h.angle, h.translation[0], h.translation[1]],
                Kind::Revolution => vec![h.scale.ln(), h.translation[1]],
            };
            starts.insert(0, (x, h.flip));
        }
        let nm = NelderMeadOptions {
            x_tol: opts.x_tol,
            f_tol: 0.0,
            max_evals: opts.max_evals,
        };
        let step = |x: &[f64]| -> Vec<f64> {
            match self.kind {
                Kind::Curve => vec![0.05, 0.2, 0.05 * (1.0 + x[2].abs()), 0.05 * (1.0 + x[3].abs())],
                Kind::Revolution => vec![0.05, 0.05 * (1.0 + x[1].abs())],
            }
        };
        // coarse pass from every seed, full refinement from the best one
        let coarse = NelderMeadOptions {
            x_tol: 1e-4,
            f_tol: 0.0,
            max_evals: 300,
        };
        let mut best: Option<(Vec<f64>, bool, f64)> = None;
        for (x0, flip) in &starts {
            let m = nelder_mead(|x| self.objective(&self.element(x, *flip)), x0, &step(x0), coarse);
            if best.as_ref().map_or(true, |b| m.f < b.2) {
                best = Some((m.x, *flip, m.f));
            }
        }
        let (x0, flip, _) = best.expect("at least one seed");
        let m = nelder_mead(|x| self.objective(&self.element(x, flip)), &x0, &step(&x0), nm);
        // restart once to escape a collapsed simplex
        let small: Vec<f64> = step(&m.x).iter().map(|s| s * 1e-3).collect();
        let m2 = nelder_mead(|x| self.objective(&self.element(x, flip)), &m.x, &small, nm);
        let fin = if m2.f <= m.f { m2 } else { m };
        let h = self.element(&fin.x, flip);
        OrbitFit {
            distance: fin.f.max(0.0).sqrt(),
            g: h.inverse(),
            converged: fin.converged,
        }
    }
}

/// Distance from `m` to the orbit of `base`: the smallest symmetric RMS
/// nearest-point distance between `h(m)` and `base` over group elements `h`,
/// measured in the frame of the base.
pub fn orbit_distance(m: &Surface, base: &Surface, opts: &OrbitOptions) -> Result<OrbitFit> {
    orbit_distance_from(m, base, None, opts)
}

/// As [`orbit_distance`], additionally seeding the search with `guess`
/// (an element with `m ~ guess(base)`).
pub fn orbit_distance_from(
    m: &Surface,
    base: &Surface,
    guess: Option<&GroupElement>,
    opts: &OrbitOptions,
) -> Result<OrbitFit> {
    if m.kind != base.kind {
        return Err(Error::InvalidInput("state and base differ in kind".into()));
    }
    let p = OrbitProblem::new(m, base);
    let h = guess.map(|g| g.inverse());
    Ok(p.fit(h.as_ref(), opts))
}

/// Parameters of the replay that brings a returning flow back near the base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComebackSchedule {
    pub t1: f64,
    pub t2: f64,
    pub b: f64,
    pub y0: [f64; 2],
    pub g: GroupElement,
    pub t0: f64,
    pub a: f64,
    /// Left end of the replay window `[t_bar, 0]`.
    pub t_bar: f64,
}

impl ComebackSchedule {
    /// Flow time `a^{-2}(t0 - e^{-t})` matching replay time `t`.
    pub fn correspondence(&self, t: f64) -> f64 {
        // (1 - e^{-t}) / b^2 - e^{-t2}, free of cancellation
        -(-t).exp_m1() / (self.a * self.a) - (-self.t2).exp()
    }
}

pub fn comeback_schedule(t1: f64, t2: f64, b: f64, y0: [f64; 2], g: GroupElement) -> Result<ComebackSchedule> {
    if !(t1 < t2) {
        return Err(Error::InvalidInput(format!("need t1 < t2, got {t1} >= {t2}")));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidInput(format!("need b > 0, got {b}")));
    }
    // 1 - b^2 (e^{-t2} - e^{-t1}) = 1 + x
    let x = b * b * ((-t1).exp() - (-t2).exp());
    if !(1.0 + x > 0.0) {
        return Err(Error::InvalidWindow(1.0 + x));
    }
    Ok(ComebackSchedule {
        t1,
        t2,
        b,
        y0,
        g,
        t0: 1.0 - b * b * (-t2).exp(),
        a: b,
        t_bar: -x.ln_1p(),
    })
}

/// Sample positions of a stored trajectory at rescaled time `s`, linear in
/// time between snapshots.
pub fn interpolate_points(traj: &FlowTrajectory, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let snaps = &traj.snapshots;
    let lo = snaps.first().map(|x| x.t).unwrap_or(f64::NAN);
    let hi = snaps.last().map(|x| x.t).unwrap_or(f64::NAN);
    let slack = 1e-12 * (1.0 + hi.abs());
    if !(s >= lo - slack && s <= hi + slack) {
        return Err(Error::RangeError { t: s, lo, hi });
    }
    let k = snaps.partition_point(|x| x.t <= s).clamp(1, snaps.len().max(2) - 1);
    if snaps.len() == 1 {
        return Ok(traj.snapshot_points(&snaps[0]));
    }
    let (a, b) = (&snaps[k - 1], &snaps[k]);
    let w = ((s - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
    let (xa, ya) = traj.snapshot_points(a);
    let (xb, yb) = traj.snapshot_points(b);
    if xa.len() != xb.len() {
        return Err(Error::GridMismatch {
            expected: xa.len(),
            got: xb.len(),
        });
    }
    let x = xa.iter().zip(&xb).map(|(p, q)| p + w * (q - p)).collect();
    let y = ya.iter().zip(&yb).map(|(p, q)| p + w * (q - p)).collect();
    Ok((x, y))
}

fn point_record(surf: &Surface, dt: f64) -> StepRecord {
    let v: Vec<f64> = surf.shrinker_residual().iter().map(|q| -q).collect();
    let f = surf.gaussian_area();
    StepRecord {
        t: surf.t,
        f,
        f_rel: f,
        grad_norm2: (0..v.len()).map(|j| surf.weight[j] * v[j] * v[j]).sum(),
        grad_l1: (0..v.len()).map(|j| surf.weight[j] * v[j].abs()).sum(),
        sup_u: f64::NAN,
        sup_du: f64::NAN,
        orbit_dist: f64::NAN,
        dt,
    }
}

/// Replay of a stored rescaled flow under `(x0, t0, a)`:
/// `a e^{t/2} (M_{a^{-2}(t0 - e^{-t})} + x0)`, where the underlying flow is
/// `M_tau = sqrt(-tau) * stored(clock_shift - log(-tau))`. The stored flow
/// itself is recovered by `(0, 0, 1)` with no clock shift.
pub fn renormalized_flow(
    traj: &FlowTrajectory,
    x0: [f64; 2],
    t0: f64,
    a: f64,
    clock_shift: f64,
    times: &[f64],
) -> Result<FlowTrajectory> {
    if !(a > 0.0) {
        return Err(Error::InvalidInput("scale must be positive".into()));
    }
    if traj.reference.kind == Kind::Revolution && x0[0] != 0.0 {
        return Err(Error::InvalidInput("surfaces of revolution admit only axial translations".into()));
    }
    let lo = traj.snapshots.first().map(|s| s.t).unwrap_or(f64::NAN);
    let hi = traj.snapshots.last().map(|s| s.t).unwrap_or(f64::NAN);
    let mut records = Vec::with_capacity(times.len());
    let mut snapshots = Vec::with_capacity(times.len());
    let mut reference = None;
    for (i, &t) in times.iter().enumerate() {
        let tau = (t0 - (-t).exp()) / (a * a);
        if !(tau < 0.0) {
            return Err(Error::RangeError { t, lo, hi });
        }
        let s = clock_shift - (-tau).ln();
        let (px, py) = interpolate_points(traj, s).map_err(|_| Error::RangeError { t: s, lo, hi })?;
        let f = a * (t / 2.0).exp();
        let r = (-tau).sqrt();
        let x: Vec<f64> = px.iter().map(|p| f * (r * p + x0[0])).collect();
        let y: Vec<f64> = py.iter().map(|p| f * (r * p + x0[1])).collect();
        let surf = traj.reference.resized(x.clone(), y.clone(), t);
        records.push(point_record(&surf, if i == 0 { 0.0 } else { t - times[i - 1] }));
        snapshots.push(Snapshot {
            step: i,
            t,
            state: SnapshotState::Points { x, y },
        });
        if reference.is_none() {
            reference = Some(surf);
        }
    }
    Ok(FlowTrajectory {
        mode: FlowMode::Intrinsic,
        reference: reference.ok_or(Error::InvalidInput("no replay times".into()))?,
        records,
        snapshots,
        termination: Termination::Horizon,
        detail: None,
    })
}

/// Replay of a stored flow that returns near the base at rescaled time `t2`
/// after being at time `t1`: the result at replay time 0 is
/// `g(b (stored(t2) + y0))` and at its left end it is a rescaling of the
/// stored state at `t1`. The stored clock is shifted so that the return time
/// sits at 0, which makes the normalization of the schedule consistent with
/// the stored (rather than unscaled) state at `t2`.
pub fn comeback_replay(
    traj: &FlowTrajectory,
    t1: f64,
    t2: f64,
    b: f64,
    y0: [f64; 2],
    g: GroupElement,
    n_times: usize,
) -> Result<(ComebackSchedule, FlowTrajectory)> {
    let sched = comeback_schedule(t1 - t2, 0.0, b, y0, g)?;
    g.check_for(traj.reference.kind)?;
    let n = n_times.max(2);
    let times: Vec<f64> = (0..n)
        .map(|i| if i + 1 == n { 0.0 } else { sched.t_bar * (1.0 - i as f64 / (n - 1) as f64) })
        .collect();
    let mut tr = renormalized_flow(traj, y0, sched.t0, sched.a, t2, &times)?;
    if g != GroupElement::identity() {
        let snaps = std::mem::take(&mut tr.snapshots);
        for (k, snap) in snaps.into_iter().enumerate() {
            let (x, y) = tr.snapshot_points(&snap);
            let (gx, gy): (Vec<f64>, Vec<f64>) = x
                .iter()
                .zip(&y)
                .map(|(a, c)| {
                    let p = g.apply_point([*a, *c]);
                    (p[0], p[1])
                })
                .unzip();
            let surf = tr.reference.with_points(gx.clone(), gy.clone(), snap.t);
            tr.records[k] = point_record(&surf, tr.records[k].dt);
            tr.snapshots.push(Snapshot {
                state: SnapshotState::Points { x: gx, y: gy },
                ..snap
            });
        }
    }
    Ok((sched, tr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    NoReturn,
    Returned,
    NeverLeft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoReturnConfig {
    pub delta1: f64,
    pub delta2: f64,
    pub horizon: f64,
    pub flow: FlowOptions,
    pub orbit: OrbitOptions,
}

impl Default for NoReturnConfig {
    fn default() -> Self {
        NoReturnConfig {
            delta1: 0.05,
            delta2: 0.1,
            horizon: 40.0,
            flow: FlowOptions::default(),
            orbit: OrbitOptions::default(),
        }
    }
}

/// Verdict record; the verdict is evidence from a sampled minimization over
/// the group, not a certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictReport {
    pub verdict: Verdict,
    pub t_exit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_return: Option<f64>,
    pub min_dist_after_exit: Option<f64>,
    pub max_dist: f64,
    pub max_graph_sup: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub termination: Termination,
    /// End of the graphical phase, when the run continued intrinsically.
    pub graph_phase_end: Option<f64>,
    pub t_end: f64,
    pub note: String,
}

pub struct NoReturnOutcome {
    pub report: VerdictReport,
    pub graph_phase: FlowTrajectory,
    pub intrinsic_phase: Option<FlowTrajectory>,
    /// `(t, orbit distance)` at every probe.
    pub distances: Vec<(f64, f64)>,
}

impl NoReturnOutcome {
    /// Trajectory CSV of both phases in time order.
    pub fn csv(&self) -> String {
        let mut out = self.graph_phase.csv();
        if let Some(tr) = &self.intrinsic_phase {
            let body = tr.csv();
            out.extend(body.lines().skip(2).map(|l| format!("{l}\n")));
        }
        out
    }
}

pub fn classify(distances: &[(f64, f64)], delta1: f64, delta2: f64) -> (Verdict, Option<f64>, Option<f64>, Option<f64>) {
    let exit = distances.iter().position(|(_, d)| *d > delta2);
    match exit {
        None => (Verdict::NeverLeft, None, None, None),
        Some(k) => {
            let after = &distances[k..];
            let min = after.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
            let ret = after.iter().find(|(_, d)| *d < delta1).map(|(t, _)| *t);
            let v = if ret.is_some() {
                Verdict::Returned
            } else {
                Verdict::NoReturn
            };
            (v, Some(distances[k].0), ret, Some(min))
        }
    }
}

/// Flow `base + u0` (graphically while possible, then intrinsically for
/// periodic loops) and watch its distance to the orbit of the base.
pub fn no_return_experiment(base: &Surface, u0: &[f64], cfg: &NoReturnConfig) -> Result<NoReturnOutcome> {
    if !(cfg.delta1 < cfg.delta2) {
        return Err(Error::InvalidInput("need delta1 < delta2".into()));
    }
    let mut distances: Vec<(f64, f64)> = Vec::new();
    let mut guess: Option<GroupElement> = None;
    let mut probe_fn = |t: f64, s: &Surface| -> Option<f64> {
        let fit = orbit_distance_from(s, base, guess.as_ref(), &cfg.orbit).ok()?;
        guess = Some(fit.g);
        distances.push((t, fit.distance));
        Some(fit.distance)
    };
    let mut flow_opts = cfg.flow.clone();
    flow_opts.converge_tol = flow_opts.converge_tol.min(1e-12);
    let graph = run_graph_flow(base, u0, cfg.horizon, &flow_opts, Some(&mut probe_fn))?;
    let mut intrinsic = None;
    let mut graph_phase_end = None;
    let periodic = base.closure() == Layout::Periodic;
    if graph.termination == Termination::GraphOverflow && periodic {
        let t_end = graph.last().t;
        graph_phase_end = Some(t_end);
        let start = graph.surface(graph.final_snapshot());
        let mut opts = flow_opts.clone();
        opts.t0 = t_end;
        let tr = run_curve_flow(&start, cfg.horizon, &opts, Some(&mut probe_fn))?;
        intrinsic = Some(tr);
    }
    let last = intrinsic.as_ref().unwrap_or(&graph);
    let termination = last.termination;
    let t_end = last.last().t;
    let (verdict, t_exit, t_return, min_after) = classify(&distances, cfg.delta1, cfg.delta2);
    let max_dist = distances.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    let max_graph_sup = graph.records.iter().map(|r| r.sup_u).fold(0.0, f64::max);
    let note = format!(
        "orbit distance from a sampled minimization over rigid motions and dilations; run ended by {:?} at t = {:.6}",
        termination, t_end
    );
    Ok(NoReturnOutcome {
        report: VerdictReport {
            verdict,
            t_exit,
            t_return,
            min_dist_after_exit: min_after,
            max_dist,
            max_graph_sup,
            delta1: cfg.delta1,
            delta2: cfg.delta2,
            termination,
            graph_phase_end,
            t_end,
            note,
        },
        graph_phase: graph,
        intrinsic_phase: intrinsic,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_circle, build_sphere};
    use std::f64::consts::SQRT_2;

    fn sample() -> GroupElement {
        GroupElement {
            angle: 0.7,
            flip: true,
            translation: [0.3, -0.2],
            scale: 1.3,
        }
    }

    #[test]
    fn composition_and_inverse() {
        let g = sample();
        let h = GroupElement {
            angle: -1.1,
            flip: false,
            translation: [0.1, 0.5],
            scale: 0.8,
        };
        let p = [0.4, -1.7];
        let a = g.compose(&h).apply_point(p);
        let b = g.apply_point(h.apply_point(p));
        assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        let back = g.inverse().apply_point(g.apply_point(p));
        assert!((back[0] - p[0]).abs() < 1e-14 && (back[1] - p[1]).abs() < 1e-14);
    }

    #[test]
    fn identity_is_bitwise() {
        let c = build_circle(SQRT_2, 32).unwrap();
        let d = apply_group(&GroupElement::identity(), &c).unwrap();
        assert_eq!(c.x, d.x);
        assert_eq!(c.y, d.y);
    }

    #[test]
    fn dilation_halves_curvature() {
        let c = build_circle(SQRT_2, 32).unwrap();
        let d = apply_group(&GroupElement::dilation(2.0), &c).unwrap();
        assert!(d.h.iter().all(|h| (h - 0.5 / SQRT_2).abs() < 1e-12));
    }

    #[test]
    fn orbit_distance_recovers_element() {
        let e = crate::geometry::build_ellipse(1.6, 1.2, 64).unwrap();
        assert!(orbit_distance(&e, &e, &OrbitOptions::default()).unwrap().distance < 1e-7);
        let g = GroupElement {
            angle: 0.5,
            flip: false,
            translation: [0.4, -0.3],
            scale: 1.2,
        };
        let m = apply_group(&g, &e).unwrap();
        let fit = orbit_distance(&m, &e, &OrbitOptions::default()).unwrap();
        assert!(fit.distance < 1e-6, "{}", fit.distance);
        assert!((fit.g.scale - 1.2).abs() < 1e-5);
    }

    #[test]
    fn sphere_orbit_ignores_translation() {
        let s = build_sphere(2.0, 48).unwrap();
        let g = GroupElement {
            translation: [0.0, 0.3],
            scale: 0.9,
            ..GroupElement::identity()
        };
        let m = apply_group(&g, &s).unwrap();
        assert!(orbit_distance(&m, &s, &OrbitOptions::default()).unwrap().distance < 1e-6);
    }

    #[test]
    fn schedule_identities() {
        let s = comeback_schedule(1.0, 2.0, 1.0, [0.0, 0.0], GroupElement::identity()).unwrap();
        assert!((s.t0 - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((s.t_bar + (1.0 + (-1.0f64).exp() - (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert!((s.correspondence(0.0) + (-2.0f64).exp()).abs() < 1e-15);
        assert!((s.correspondence(s.t_bar) + (-1.0f64).exp()).abs() < 1e-15);
        assert!(comeback_schedule(2.0, 1.0, 1.0, [0.0; 2], GroupElement::identity()).is_err());
    }

    #[test]
    fn classification() {
        let d = [(0.0, 0.01), (1.0, 0.2), (2.0, 0.07)];
        assert_eq!(classify(&d, 0.05, 0.1).0, Verdict::NoReturn);
        let d = [(0.0, 0.01), (1.0, 0.2), (2.0, 0.03)];
        let c = classify(&d, 0.05, 0.1);
        assert_eq!(c.0, Verdict::Returned);
        assert_eq!(c.2, Some(2.0));
        assert_eq!(classify(&[(0.0, 0.01)], 0.05, 0.1).0, Verdict::NeverLeft);
    }
}

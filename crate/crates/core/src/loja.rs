//! Quantitative inequalities along flows: the Lojasiewicz-type gap/gradient
//! inequality, the ODE comparison bound, the dyadic geometric series bound,
//! time-weighted gradient integrals and the drift bound for graphical runs.
//!
//! Every constant reported here is fitted from data; nothing is taken from
//! the (non-constructive) analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowMode, FlowTrajectory, SnapshotState};

/// Per-sample sides of an inequality `lhs <= rhs` with the constants that
/// went into them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub constants: BTreeMap<String, f64>,
    pub violations: usize,
    /// Largest `lhs / rhs` over the samples that were tested.
    pub worst_ratio: f64,
}

impl InequalityReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,lhs,rhs\n");
        for i in 0..self.times.len() {
            out.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", self.times[i], self.lhs[i], self.rhs[i]));
        }
        out
    }
}

/// Least-squares line `y = slope * x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Gap `F - F_sigma` per record, free of cancellation for graph runs whose
/// base is the critical point itself.
pub fn energy_gap(traj: &FlowTrajectory, f_sigma: f64) -> Vec<f64> {
    match traj.mode {
        FlowMode::Graph => {
            let offset = traj.reference.gaussian_area() - f_sigma;
            traj.records.iter().map(|r| offset + r.f_rel).collect()
        }
        FlowMode::Intrinsic => traj.records.iter().map(|r| r.f - f_sigma).collect(),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LojaOptions {
    /// Tail: samples whose gap is at most this fraction of the largest gap.
    pub tail_fraction: f64,
    /// Gaps below this (relative to `F_sigma`) are treated as roundoff.
    pub noise_floor: f64,
}

impl Default for LojaOptions {
    fn default() -> Self {
        LojaOptions {
            tail_fraction: 1e-2,
            noise_floor: 1e-13,
        }
    }
}

/// Result of the gap/gradient inequality `|F - F_sigma|^{2-beta} <= |grad F|^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LojaReport {
    pub inequality: InequalityReport,
    pub loja_beta: f64,
    /// Slope of `log|F - F_sigma|` against `log |grad F|^2` on the tail.
    pub slope: f64,
    pub intercept: f64,
    pub tail_samples: usize,
    /// Largest `|F - F_sigma| / |grad F|^2` on the tail.
    pub ratio_constant: f64,
    /// Gap below which the inequality is asserted: `ratio_constant^{-1/(1-beta)}`.
    pub threshold: f64,
    /// Exponents `beta` for which the fitted power law implies the inequality
    /// asymptotically: `(0, beta_max)`.
    pub beta_max: f64,
    pub tested: usize,
}

pub fn loja_check(traj: &FlowTrajectory, f_sigma: f64, beta: f64) -> Result<LojaReport> {
    loja_check_with(traj, f_sigma, beta, &LojaOptions::default())
}

pub fn loja_check_with(traj: &FlowTrajectory, f_sigma: f64, beta: f64, opts: &LojaOptions) -> Result<LojaReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1), got {beta}")));
    }
    let gap: Vec<f64> = energy_gap(traj, f_sigma).iter().map(|g| g.abs()).collect();
    let grad: Vec<f64> = traj.records.iter().map(|r| r.grad_norm2).collect();
    let times = traj.times();
    let floor = opts.noise_floor * f_sigma.abs().max(1.0);
    let gmax = gap.iter().cloned().fold(0.0, f64::max);
    let tail: Vec<usize> = (0..gap.len())
        .filter(|&i| gap[i] > floor && grad[i] > 0.0 && gap[i] <= opts.tail_fraction * gmax)
        .collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = tail.iter().map(|&i| (grad[i].ln(), gap[i].ln())).unzip();
    let (slope, intercept) = fit_line(&lx, &ly).unwrap_or((f64::NAN, f64::NAN));
    let ratio_constant = tail.iter().map(|&i| gap[i] / grad[i]).fold(0.0, f64::max);
    let threshold = if ratio_constant > 0.0 {
        ratio_constant.powf(-1.0 / (1.0 - beta))
    } else {
        f64::INFINITY
    };
    let lhs: Vec<f64> = gap.iter().map(|g| g.powf(2.0 - beta)).collect();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    for i in 0..gap.len() {
        if gap[i] >= threshold {
            continue;
        }
        tested += 1;
        if lhs[i] > 0.0 {
            let r = if grad[i] > 0.0 { lhs[i] / grad[i] } else { f64::INFINITY };
            worst = worst.max(r);
            if r > 1.0 + 1e-12 {
                violations += 1;
            }
        }
    }
    let beta_max = if slope.is_finite() && slope > 0.0 {
        (2.0 - 1.0 / slope).min(1.0)
    } else {
        f64::NAN
    };
    let mut constants = BTreeMap::new();
    constants.insert("loja_beta".into(), beta);
    constants.insert("f_sigma".into(), f_sigma);
    constants.insert("threshold".into(), threshold);
    constants.insert("ratio_constant".into(), ratio_constant);
    constants.insert("slope".into(), slope);
    Ok(LojaReport {
        inequality: InequalityReport {
            name: "gap^(2-beta) <= |grad F|^2".into(),
            times,
            lhs,
            rhs: grad,
            constants,
            violations,
            worst_ratio: worst,
        },
        loja_beta: beta,
        slope,
        intercept,
        tail_samples: tail.len(),
        ratio_constant,
        threshold,
        beta_max,
        tested,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `G' <= 0`; the bound runs forward from `G(0)`.
    Decreasing,
    /// `G' >= 0`; the bound runs backward from `G(T)`.
    Increasing,
}

/// Comparison bound for `G >= 0` with `G^{2-beta} <= |G'|`:
/// `(G_ref^{beta-1} + (1-beta) * elapsed)^{-1/(1-beta)}`, where `G_ref` is the
/// value at the start (decreasing case) or the end (increasing case) and
/// `elapsed` the time since, respectively until, that endpoint.
pub fn decay_bound(g_ref: f64, beta: f64, elapsed: f64) -> f64 {
    if g_ref <= 0.0 {
        return 0.0;
    }
    let q = 1.0 - beta;
    (g_ref.powf(-q) + q * elapsed).powf(-1.0 / q)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub direction: Direction,
    pub loja_beta: f64,
    pub bound: Vec<f64>,
    /// Largest `G / bound - 1`; non-positive up to `tol` when the conclusion holds.
    pub worst_excess: f64,
    pub holds: bool,
}

/// Test the hypothesis on a sampled series (through the mean value theorem on
/// every interval) and then the conclusion at every sample.
pub fn check_decay(times: &[f64], g: &[f64], beta: f64, direction: Direction, tol: f64) -> Result<DecayReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1), got {beta}")));
    }
    let n = g.len();
    if times.len() != n || n < 2 {
        return Err(Error::InvalidInput("need matching series with at least two samples".into()));
    }
    for i in 0..n - 1 {
        if g[i] < 0.0 {
            return Err(Error::HypothesisFail {
                index: i,
                detail: "negative value".into(),
            });
        }
        let dt = times[i + 1] - times[i];
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("times must increase".into()));
        }
        let dg = g[i + 1] - g[i];
        let wrong_sign = match direction {
            Direction::Decreasing => dg > 0.0,
            Direction::Increasing => dg < 0.0,
        };
        if wrong_sign {
            return Err(Error::HypothesisFail {
                index: i,
                detail: format!("{direction:?} series changes direction"),
            });
        }
        let need = g[i].min(g[i + 1]).powf(2.0 - beta);
        if dg.abs() / dt < need * (1.0 - tol) {
            return Err(Error::HypothesisFail {
                index: i,
                detail: format!("|dG/dt| = {:.6e} < G^(2-beta) = {:.6e}", dg.abs() / dt, need),
            });
        }
    }
    let bound: Vec<f64> = match direction {
        Direction::Decreasing => times.iter().map(|t| decay_bound(g[0], beta, t - times[0])).collect(),
        Direction::Increasing => times.iter().map(|t| decay_bound(g[n - 1], beta, times[n - 1] - t)).collect(),
    };
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n {
        let e = if bound[i] > 0.0 {
            g[i] / bound[i] - 1.0
        } else if g[i] > 0.0 {
            f64::INFINITY
        } else {
            -1.0
        };
        worst = worst.max(e);
    }
    Ok(DecayReport {
        direction,
        loja_beta: beta,
        bound,
        worst_excess: worst,
        holds: worst <= tol,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeometricSeries {
    pub partial: f64,
    /// Majorant of the terms beyond the partial sum.
    pub tail: f64,
    /// `2 (2 + c1)^{gamma - p} / (p - gamma)` with `p = 1/(1-beta)`, the value
    /// of the comparison integral.
    pub rhs: f64,
    /// `2 (p - gamma) (2 + c1)^{gamma - p}`: the same with the factor
    /// `p - gamma` in the numerator. Reported, not asserted; it fails for
    /// many admissible parameters.
    pub rhs_inverted_factor: f64,
    pub holds: bool,
}

/// `sum_{j >= 1} 2^{gamma j} (c1 + 2^{j+1})^{-p}` against its integral bound.
pub fn geometric_series_bound(beta: f64, gamma: f64, c1: f64, j_max: usize) -> Result<GeometricSeries> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1), got {beta}")));
    }
    let p = 1.0 / (1.0 - beta);
    if !(gamma > 1.0 && gamma < p) {
        return Err(Error::InvalidInput(format!("gamma must lie in (1, {p}), got {gamma}")));
    }
    if !(c1 > 0.0) {
        return Err(Error::InvalidInput(format!("c1 must be positive, got {c1}")));
    }
    let ln2 = std::f64::consts::LN_2;
    let term = |j: usize| -> f64 {
        let j = j as f64;
        // log(c1 + 2^{j+1}) without overflow
        let a = (j + 1.0) * ln2;
        let lc = c1.ln();
        let log_sum = a.max(lc) + (-(a - lc).abs()).exp().ln_1p();
        (gamma * j * ln2 - p * log_sum).exp()
    };
    let j_max = j_max.max(1);
    let partial: f64 = (1..=j_max).map(term).sum();
    // beyond j_max: c1 + 2^{j+1} > 2^{j+1}, a geometric series of ratio 2^{gamma - p}
    let tail = (-p * ln2).exp() * (((j_max + 1) as f64) * (gamma - p) * ln2).exp() / (-((gamma - p) * ln2).exp_m1());
    let rhs = 2.0 * (2.0 + c1).powf(gamma - p) / (p - gamma);
    Ok(GeometricSeries {
        partial,
        tail,
        rhs,
        rhs_inverted_factor: 2.0 * (p - gamma) * (2.0 + c1).powf(gamma - p),
        holds: partial + tail <= rhs,
    })
}

/// Trapezoidal integral of `f(t)` over the recorded grid restricted to `[a, b]`
/// (values at the window ends by linear interpolation).
pub fn trapezoid_window(t: &[f64], f: &[f64], a: f64, b: f64) -> f64 {
    if !(b > a) || t.len() < 2 {
        return 0.0;
    }
    let interp = |x: f64| -> f64 {
        let k = t.partition_point(|v| *v <= x).clamp(1, t.len() - 1);
        let w = ((x - t[k - 1]) / (t[k] - t[k - 1])).clamp(0.0, 1.0);
        f[k - 1] + w * (f[k] - f[k - 1])
    };
    let mut pts = vec![(a, interp(a))];
    for i in 0..t.len() {
        if t[i] > a && t[i] < b {
            pts.push((t[i], f[i]));
        }
    }
    pts.push((b, interp(b)));
    pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedIntegralReport {
    /// Switching time: `F >= F_sigma` before, `F <= F_sigma` after.
    pub split: f64,
    pub gamma: f64,
    pub loja_beta: f64,
    /// Before the split: prefix ends `s`, the weighted integral
    /// `int_1^s r^gamma |grad F|^2 dr` and `(F(0) - F(s))^{1 - gamma (1-beta)}`.
    pub forward: InequalityReport,
    /// After the split: window starts, `int_s^{T-1} (T-r)^gamma |grad F|^2 dr`
    /// and `(F(s) - F(T))^{1 - gamma (1-beta)}`.
    pub backward: InequalityReport,
    /// `max C / min C` over the prefixes with a nonzero integral.
    pub forward_spread: f64,
    pub backward_spread: f64,
}

fn spread(c: &[f64]) -> f64 {
    let pos: Vec<f64> = c.iter().cloned().filter(|v| *v > 0.0 && v.is_finite()).collect();
    if pos.is_empty() {
        return 1.0;
    }
    pos.iter().cloned().fold(0.0, f64::max) / pos.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Time-weighted gradient integrals over prefixes of the run, with the
/// constant fitted as the largest ratio over `n_prefix` prefixes.
pub fn weighted_integral_check(
    traj: &FlowTrajectory,
    f_sigma: f64,
    beta: f64,
    gamma: f64,
    n_prefix: usize,
) -> Result<WeightedIntegralReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (0, 1), got {beta}")));
    }
    let p = 1.0 / (1.0 - beta);
    if !(gamma > 1.0 && gamma < p) {
        return Err(Error::InvalidInput(format!("gamma must lie in (1, {p}), got {gamma}")));
    }
    let t: Vec<f64> = traj.times();
    let gap = energy_gap(traj, f_sigma);
    let g2: Vec<f64> = traj.records.iter().map(|r| r.grad_norm2).collect();
    let t0 = t[0];
    let t_end = *t.last().unwrap();
    let split = t
        .iter()
        .zip(&gap)
        .find(|(_, g)| **g < 0.0)
        .map(|(t, _)| *t)
        .unwrap_or(t_end);
    let exponent = 1.0 - gamma * (1.0 - beta);
    let gap_at = |x: f64| {
        let k = t.partition_point(|v| *v <= x).clamp(1, t.len() - 1);
        let w = ((x - t[k - 1]) / (t[k] - t[k - 1])).clamp(0.0, 1.0);
        gap[k - 1] + w * (gap[k] - gap[k - 1])
    };
    let n = n_prefix.max(1);

    let mut fwd = (Vec::new(), Vec::new(), Vec::new());
    if split - t0 > 1.0 {
        let wf: Vec<f64> = t.iter().zip(&g2).map(|(r, g)| (r - t0).powf(gamma) * g).collect();
        for k in 1..=n {
            let s = t0 + 1.0 + (split - t0 - 1.0) * k as f64 / n as f64;
            fwd.0.push(s);
            fwd.1.push(trapezoid_window(&t, &wf, t0 + 1.0, s));
            // F(0) - F(s) as a difference of gaps
            fwd.2.push((gap[0] - gap_at(s)).max(0.0).powf(exponent));
        }
    }
    let mut bwd = (Vec::new(), Vec::new(), Vec::new());
    if t_end - split > 1.0 {
        let wb: Vec<f64> = t.iter().zip(&g2).map(|(r, g)| (t_end - r).powf(gamma) * g).collect();
        for k in 1..=n {
            let s = t_end - 1.0 - (t_end - 1.0 - split) * k as f64 / n as f64;
            bwd.0.push(s);
            bwd.1.push(trapezoid_window(&t, &wb, s, t_end - 1.0));
            bwd.2.push((gap_at(s) - gap[gap.len() - 1]).max(0.0).powf(exponent));
        }
    }
    let build = |name: &str, (s, l, r): (Vec<f64>, Vec<f64>, Vec<f64>)| -> (InequalityReport, f64) {
        let ratios: Vec<f64> = l
            .iter()
            .zip(&r)
            .map(|(a, b)| if *a == 0.0 { 0.0 } else { a / b })
            .collect();
        let c = ratios.iter().cloned().fold(0.0, f64::max);
        let rhs: Vec<f64> = r.iter().map(|v| c * v).collect();
        let violations = l.iter().zip(&rhs).filter(|(a, b)| **a > **b * (1.0 + 1e-12)).count();
        let mut constants = BTreeMap::new();
        constants.insert("C".into(), c);
        constants.insert("gamma".into(), gamma);
        constants.insert("loja_beta".into(), beta);
        constants.insert("exponent".into(), exponent);
        (
            InequalityReport {
                name: name.into(),
                times: s,
                lhs: l,
                rhs,
                constants,
                violations,
                worst_ratio: if c > 0.0 { 1.0 } else { 0.0 },
            },
            spread(&ratios),
        )
    };
    let (forward, forward_spread) = build("int_1^s r^gamma |grad F|^2 <= C (F(0) - F(s))^e", fwd);
    let (backward, backward_spread) = build("int_s^{T-1} (T-r)^gamma |grad F|^2 <= C (F(s) - F(T))^e", bwd);
    Ok(WeightedIntegralReport {
        split,
        gamma,
        loja_beta: beta,
        forward,
        backward,
        forward_spread,
        backward_spread,
    })
}

/// One window of the drift bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriftSample {
    pub t1: f64,
    pub t2: f64,
    /// `int_Sigma |u(t2) - u(t1)|` in the area measure of the base.
    pub drift: f64,
    /// `int_{t1}^{t2} int |<x,n>/2 - H| e^{-|x|^2/4} dr`.
    pub velocity_l1: f64,
    /// `F(t1) - F(t2)`.
    pub delta_f: f64,
}

fn graph_at(traj: &FlowTrajectory, t: f64) -> Result<Vec<f64>> {
    let snaps = &traj.snapshots;
    let lo = snaps.first().map(|s| s.t).unwrap_or(f64::NAN);
    let hi = snaps.last().map(|s| s.t).unwrap_or(f64::NAN);
    if !(t >= lo - 1e-12 && t <= hi + 1e-12) {
        return Err(Error::RangeError { t, lo, hi });
    }
    let k = snaps.partition_point(|s| s.t <= t).clamp(1, snaps.len().max(2) - 1);
    let get = |i: usize| match &snaps[i].state {
        SnapshotState::Graph(u) => Ok(u.clone()),
        SnapshotState::Points { .. } => Err(Error::NotGraphical),
    };
    if snaps.len() == 1 {
        return get(0);
    }
    let (a, b) = (get(k - 1)?, get(k)?);
    let w = ((t - snaps[k - 1].t) / (snaps[k].t - snaps[k - 1].t)).clamp(0.0, 1.0);
    Ok(a.iter().zip(&b).map(|(x, y)| x + w * (y - x)).collect())
}

pub fn drift_sample(traj: &FlowTrajectory, t1: f64, t2: f64) -> Result<DriftSample> {
    if traj.mode != FlowMode::Graph {
        return Err(Error::NotGraphical);
    }
    if !(t2 >= t1) {
        return Err(Error::InvalidInput("need t1 <= t2".into()));
    }
    let u1 = graph_at(traj, t1)?;
    let u2 = graph_at(traj, t2)?;
    let base = &traj.reference;
    let drift = (0..u1.len()).map(|j| base.measure[j] * (u2[j] - u1[j]).abs()).sum();
    let t = traj.times();
    let l1: Vec<f64> = traj.records.iter().map(|r| r.grad_l1).collect();
    let fr: Vec<f64> = traj.records.iter().map(|r| r.f_rel).collect();
    let f_at = |x: f64| {
        let k = t.partition_point(|v| *v <= x).clamp(1, t.len() - 1);
        let w = ((x - t[k - 1]) / (t[k] - t[k - 1])).clamp(0.0, 1.0);
        fr[k - 1] + w * (fr[k] - fr[k - 1])
    };
    Ok(DriftSample {
        t1,
        t2,
        drift,
        velocity_l1: trapezoid_window(&t, &l1, t1, t2),
        delta_f: f_at(t1) - f_at(t2),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    pub samples: Vec<DriftSample>,
    /// Exponent of `F(t1) - F(t2)` in the asserted bound.
    pub drift_beta: f64,
    /// Fitted `C` with `drift <= C * delta_f^{drift_beta}` and its spread
    /// (max/min of the per-window ratio).
    pub c_energy: f64,
    pub spread_energy: f64,
    /// Fitted `C` with `drift <= C * velocity_l1` and its spread.
    pub c_velocity: f64,
    pub spread_velocity: f64,
    /// Least-squares slope of `log drift` against `log delta_f`.
    pub fitted_exponent: f64,
    pub violations: usize,
}

/// Drift bound over nested windows `[t1_k, t2]`.
pub fn drift_bound_check(traj: &FlowTrajectory, starts: &[f64], t2: f64, drift_beta: f64) -> Result<DriftReport> {
    let samples = starts
        .iter()
        .map(|t1| drift_sample(traj, *t1, t2))
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<&DriftSample> = samples.iter().filter(|s| s.drift > 0.0 && s.delta_f > 0.0).collect();
    let re: Vec<f64> = used.iter().map(|s| s.drift / s.delta_f.powf(drift_beta)).collect();
    let rv: Vec<f64> = used.iter().map(|s| s.drift / s.velocity_l1).collect();
    let c_energy = re.iter().cloned().fold(0.0, f64::max);
    let c_velocity = rv.iter().cloned().fold(0.0, f64::max);
    let (lx, ly): (Vec<f64>, Vec<f64>) = used.iter().map(|s| (s.delta_f.ln(), s.drift.ln())).unzip();
    let fitted_exponent = fit_line(&lx, &ly).map(|f| f.0).unwrap_or(f64::NAN);
    let violations = samples
        .iter()
        .filter(|s| {
            s.drift > c_energy * s.delta_f.max(0.0).powf(drift_beta) * (1.0 + 1e-12)
                || s.drift > c_velocity * s.velocity_l1 * (1.0 + 1e-12)
        })
        .count();
    Ok(DriftReport {
        samples,
        drift_beta,
        c_energy,
        spread_energy: spread(&re),
        c_velocity,
        spread_velocity: spread(&rv),
        fitted_exponent,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_bound_equality_case() {
        // G' = -G^{3/2}, G(0) = 1 solves to (1 + t/2)^{-2}
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let g: Vec<f64> = t.iter().map(|x| (1.0 + x / 2.0).powi(-2)).collect();
        let r = check_decay(&t, &g, 0.5, Direction::Decreasing, 1e-12).unwrap();
        assert!(r.worst_excess.abs() < 1e-12, "{}", r.worst_excess);
        assert!(r.holds);
    }

    #[test]
    fn decay_bound_mirror_case() {
        let big_t = 4.0;
        let t: Vec<f64> = (0..81).map(|i| i as f64 * 0.05).collect();
        let g: Vec<f64> = t.iter().map(|x| (1.0 + (big_t - x) / 2.0).powi(-2)).collect();
        let r = check_decay(&t, &g, 0.5, Direction::Increasing, 1e-12).unwrap();
        assert!(r.worst_excess.abs() < 1e-12);
    }

    #[test]
    fn zero_series_satisfies_bound() {
        let r = check_decay(&[0.0, 1.0], &[0.0, 0.0], 0.5, Direction::Decreasing, 0.0).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn slow_series_fails_hypothesis() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g: Vec<f64> = t.iter().map(|x| 1.0 - 0.01 * x).collect();
        assert!(matches!(
            check_decay(&t, &g, 0.5, Direction::Decreasing, 0.0),
            Err(Error::HypothesisFail { .. })
        ));
    }

    #[test]
    fn geometric_series_example() {
        let g = geometric_series_bound(0.5, 1.5, 1.0, 60).unwrap();
        assert!((g.partial + g.tail - 0.4977).abs() < 1e-3, "{}", g.partial);
        assert!((g.rhs_inverted_factor - 3f64.powf(-0.5)).abs() < 1e-15);
        assert!(g.holds);
        assert!(geometric_series_bound(0.5, 2.0, 1.0, 60).is_err());
    }

    #[test]
    fn tail_majorant_dominates() {
        let short = geometric_series_bound(0.3, 1.2, 5.0, 10).unwrap();
        let long = geometric_series_bound(0.3, 1.2, 5.0, 400).unwrap();
        assert!(short.partial + short.tail >= long.partial + long.tail);
        assert!(long.tail < 1e-12 * long.partial);
    }

    #[test]
    fn trapezoid_window_is_exact_for_lines() {
        let t = [0.0, 0.3, 1.0, 1.7, 2.0];
        let f: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        let v = trapezoid_window(&t, &f, 0.5, 1.9);
        assert!((v - (1.9f64.powi(2) + 1.9 - 0.25 - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn line_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 1.0).collect();
        let (s, i) = fit_line(&x, &y).unwrap();
        assert!((s - 0.5).abs() < 1e-15 && (i + 1.0).abs() < 1e-15);
    }
}

//! Normal graphs `p + u(p) n(p)` over a base hypersurface: area element,
//! speed and support functions, the flow operator, the gradient of the
//! Gaussian area and its linearization, and the weighted inner products.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Kind, Surface};
use crate::jet::{Jet, Real};
use crate::spectral::{Layout, Parity};

/// Pointwise base data entering the graph formulas.
#[derive(Debug, Clone, Copy)]
struct BasePoint {
    k1: f64,
    k1_s: f64,
    pn: f64,
    pt: f64,
    /// `(r, n_r, T_r)` for surfaces of revolution.
    rev: Option<(f64, f64, f64)>,
}

impl BasePoint {
    fn at(base: &Surface, j: usize) -> BasePoint {
        BasePoint {
            k1: base.k1[j],
            k1_s: base.k1_s[j],
            pn: base.xdotn[j],
            pt: base.xdott[j],
            rev: match base.kind {
                Kind::Curve => None,
                Kind::Revolution => Some((base.x[j], base.normal[j][0], base.tangent[j][0])),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Local<T> {
    nu: T,
    w: T,
    eta: T,
    h: T,
    zeta: T,
    flow: T,
    grad: T,
}

/// Graph quantities at one point as functions of `(s, y, q) = (u, u', u'')`
/// with derivatives taken in base arclength.
fn local<T: Real>(p: BasePoint, s: T, y: T, q: T) -> Local<T> {
    let a = s * p.k1 + 1.0;
    let b = y;
    let m = (a * a + b * b).sqrt();
    let w = m / a;
    let a_s = y * p.k1 + s * p.k1_s;
    let k1 = (a * (a * p.k1 - q) + b * (a_s + b * p.k1)) / (m * m * m);
    let (nu, k2) = match p.rev {
        None => (m, T::cst(0.0)),
        Some((r, nr, tr)) => {
            let rr = s * nr + r;
            (m * rr / r, ((a * nr - b * tr) / m) / rr)
        }
    };
    let h = k1 + k2;
    let eta = (a * (s + p.pn) - b * p.pt) / m;
    let flow = w * (eta * 0.5 - h);
    let zeta = nu / (w * w) * (-(s * (2.0 * p.pn) + s * s) / 4.0).exp();
    Local {
        nu,
        w,
        eta,
        h,
        zeta,
        flow,
        grad: zeta * flow,
    }
}

/// `zeta w^2 - 1`, the relative Gaussian area element of the graph minus
/// one, evaluated without cancellation.
fn area_excess(p: BasePoint, s: f64, y: f64) -> f64 {
    let sk = s * p.k1;
    let a = 1.0 + sk;
    let m = (a * a + y * y).sqrt();
    let m1 = (sk * (2.0 + sk) + y * y) / (m + 1.0);
    let nu1 = match p.rev {
        None => m1,
        Some((r, nr, _)) => {
            let c = s * nr / r;
            m1 * (1.0 + c) + c
        }
    };
    let e1 = (-(2.0 * s * p.pn + s * s) / 4.0).exp_m1();
    nu1 * (1.0 + e1) + e1
}

/// Per-state diagnostics of a graph: Gaussian area relative to the base,
/// the squared gradient norm `int |H - <x,n>/2|^2 e^{-|x|^2/4}` and its L1
/// counterpart, all over the graph itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub f_rel: f64,
    pub grad_norm2: f64,
    pub grad_l1: f64,
}

pub fn graph_diagnostics(base: &Surface, u: &[f64]) -> Result<(GraphDiagnostics, Vec<f64>)> {
    check_graph(base, u)?;
    let (us, uss) = base.d_arclength(u);
    let mut d = GraphDiagnostics {
        f_rel: 0.0,
        grad_norm2: 0.0,
        grad_l1: 0.0,
    };
    let mut flow = Vec::with_capacity(u.len());
    for j in 0..u.len() {
        let p = BasePoint::at(base, j);
        let l = local(p, u[j], us[j], uss[j]);
        let wt = base.weight[j];
        d.f_rel += wt * area_excess(p, u[j], us[j]);
        d.grad_norm2 += wt * l.zeta * l.flow * l.flow;
        d.grad_l1 += wt * l.zeta * l.flow.abs() / l.w;
        flow.push(l.flow);
    }
    Ok((d, flow))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphQuantities {
    pub nu: Vec<f64>,
    pub w: Vec<f64>,
    pub eta: Vec<f64>,
    pub h: Vec<f64>,
    pub zeta: Vec<f64>,
}

fn check_graph(base: &Surface, u: &[f64]) -> Result<()> {
    base.check_field(u)?;
    let sup = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !sup.is_finite() || sup >= base.reach() {
        return Err(Error::GraphOverflow {
            sup_u: sup,
            limit: base.reach(),
        });
    }
    Ok(())
}

fn locals(base: &Surface, u: &[f64]) -> Result<Vec<Local<f64>>> {
    check_graph(base, u)?;
    let (us, uss) = base.d_arclength(u);
    Ok((0..base.len())
        .map(|j| local(BasePoint::at(base, j), u[j], us[j], uss[j]))
        .collect())
}

pub fn graph_quantities(base: &Surface, u: &[f64]) -> Result<GraphQuantities> {
    let l = locals(base, u)?;
    Ok(GraphQuantities {
        nu: l.iter().map(|v| v.nu).collect(),
        w: l.iter().map(|v| v.w).collect(),
        eta: l.iter().map(|v| v.eta).collect(),
        h: l.iter().map(|v| v.h).collect(),
        zeta: l.iter().map(|v| v.zeta).collect(),
    })
}

/// Normal speed of the rescaled flow written as an equation for the graph
/// height: `w (eta/2 - H_u)`.
pub fn flow_operator(base: &Surface, u: &[f64]) -> Result<Vec<f64>> {
    Ok(locals(base, u)?.iter().map(|v| v.flow).collect())
}

/// Negative Q-gradient of the Gaussian area at the graph of `u`.
pub fn gradient_operator(base: &Surface, u: &[f64]) -> Result<Vec<f64>> {
    Ok(locals(base, u)?.iter().map(|v| v.grad).collect())
}

/// Second variation operator in divergence form,
/// `e^{|x|^2/4} div(e^{-|x|^2/4} grad u) + (|A|^2 + 1/2) u`.
///
/// `stiffness` is the symmetric matrix `S` with `Q(Lu, v) = v^T S u`, so that
/// `L = diag(weight)^{-1} S`.
#[derive(Debug, Clone)]
pub struct SecondVariation {
    pub stiffness: DMatrix<f64>,
    pub weight: Vec<f64>,
}

impl SecondVariation {
    pub fn new(base: &Surface) -> SecondVariation {
        let n = base.len();
        let grid = &base.grid;
        let two_pi = 2.0 * std::f64::consts::PI;
        // coefficient of the Dirichlet part, per unit parameter length
        let coeff: Vec<f64> = (0..n)
            .map(|j| match base.kind {
                Kind::Curve => base.rho[j] / base.g[j],
                Kind::Revolution => two_pi * base.rho[j] * base.x[j] / base.g[j],
            })
            .collect();
        let (d, quad): (DMatrix<f64>, Vec<f64>) = match base.closure() {
            Layout::Periodic => {
                let d = grid.operator_matrix(n, |f| grid.d1_to_midpoints(f));
                let mid = grid.to_midpoints(&coeff);
                let h = grid.step();
                (d, mid.iter().map(|a| a * h).collect())
            }
            Layout::Polar => {
                let d = grid.operator_matrix(n, |f| grid.d1(f, Parity::Even));
                let q = grid.quadrature_weights();
                (d, (0..n).map(|j| coeff[j] * q[j]).collect())
            }
        };
        let mut scaled = d.clone();
        for (i, a) in quad.iter().enumerate() {
            scaled.row_mut(i).scale_mut(*a);
        }
        let mut stiffness = -(d.transpose() * scaled);
        for j in 0..n {
            stiffness[(j, j)] += base.weight[j] * (base.a2[j] + 0.5);
        }
        // remove rounding asymmetry
        let st = stiffness.transpose();
        stiffness = (stiffness + st) * 0.5;
        SecondVariation {
            stiffness,
            weight: base.weight.clone(),
        }
    }

    /// `L` as a plain matrix acting on grid fields.
    pub fn operator(&self) -> DMatrix<f64> {
        let mut l = self.stiffness.clone();
        for (i, w) in self.weight.iter().enumerate() {
            l.row_mut(i).scale_mut(1.0 / w);
        }
        l
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let v = &self.stiffness * nalgebra::DVector::from_column_slice(u);
        v.iter().zip(&self.weight).map(|(a, w)| a / w).collect()
    }
}

/// Jacobian of the gradient operator at `u`. At `u = 0` this is the
/// divergence-form second variation operator; elsewhere it is the exact
/// derivative of the discrete gradient operator.
pub fn linearization(base: &Surface, u: &[f64]) -> Result<DMatrix<f64>> {
    check_graph(base, u)?;
    if u.iter().all(|v| *v == 0.0) {
        return Ok(SecondVariation::new(base).operator());
    }
    linearization_exact(base, u)
}

/// Exact Jacobian of the discrete gradient operator, at any `u`.
pub fn linearization_exact(base: &Surface, u: &[f64]) -> Result<DMatrix<f64>> {
    check_graph(base, u)?;
    let n = base.len();
    let (us, uss) = base.d_arclength(u);
    let mut cs = vec![0.0; n];
    let mut cy = vec![0.0; n];
    let mut cq = vec![0.0; n];
    for j in 0..n {
        let l = local(
            BasePoint::at(base, j),
            Jet::var(u[j], 0),
            Jet::var(us[j], 1),
            Jet::var(uss[j], 2),
        );
        cs[j] = l.grad.d[0];
        cy[j] = l.grad.d[1];
        cq[j] = l.grad.d[2];
    }
    let grid = &base.grid;
    let dt = grid.operator_matrix(n, |f| grid.d1(f, Parity::Even));
    let dtt = grid.operator_matrix(n, |f| grid.d2(f, Parity::Even));
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let g = base.g[i];
        let ay = cy[i] / g - cq[i] * base.g_theta[i] / (g * g * g);
        let aq = cq[i] / (g * g);
        for k in 0..n {
            l[(i, k)] = ay * dt[(i, k)] + aq * dtt[(i, k)];
        }
        l[(i, i)] += cs[i];
    }
    Ok(l)
}

pub fn q_inner(base: &Surface, u: &[f64], v: &[f64]) -> Result<f64> {
    base.check_field(u)?;
    base.check_field(v)?;
    Ok((0..u.len()).map(|j| base.weight[j] * u[j] * v[j]).sum())
}

pub fn q_norm(base: &Surface, u: &[f64]) -> Result<f64> {
    Ok(q_inner(base, u, u)?.max(0.0).sqrt())
}

/// Gaussian-weighted W^{2,2} norm.
pub fn q2_norm(base: &Surface, u: &[f64]) -> Result<f64> {
    base.check_field(u)?;
    let (us, uss) = base.d_arclength(u);
    let s: f64 = (0..u.len())
        .map(|j| base.weight[j] * (u[j] * u[j] + us[j] * us[j] + base.hessian_norm2(j, us[j], uss[j])))
        .sum();
    Ok(s.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub eps: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Largest ratio between consecutive entries of `ratios`.
    pub max_growth: f64,
    pub bounded: bool,
}

/// `||N(u + eps v) - N(u) - eps L_u v||_Q / eps^2` along a ladder of `eps`.
pub fn frechet_remainder(base: &Surface, u: &[f64], v: &[f64], eps: &[f64]) -> Result<RemainderReport> {
    base.check_field(v)?;
    let n0 = gradient_operator(base, u)?;
    let l = linearization(base, u)?;
    let lv = &l * nalgebra::DVector::from_column_slice(v);
    let mut ratios = Vec::with_capacity(eps.len());
    for &e in eps {
        let ue: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + e * b).collect();
        let ne = gradient_operator(base, &ue)?;
        let r: Vec<f64> = (0..u.len()).map(|j| ne[j] - n0[j] - e * lv[j]).collect();
        ratios.push(q_norm(base, &r)? / (e * e));
    }
    let mut max_growth: f64 = 0.0;
    for w in ratios.windows(2) {
        let g = if w[0] == 0.0 {
            if w[1] == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            w[1] / w[0]
        };
        max_growth = max_growth.max(g);
    }
    Ok(RemainderReport {
        eps: eps.to_vec(),
        ratios,
        max_growth,
        bounded: max_growth <= 2.0,
    })
}

/// Graph quantities at one point with a two-component gradient `y`
/// expressed in the principal frame (`y[1]` is the rotational direction).
/// Used for the Taylor table, where mixed `y` derivatives are needed.
fn principal_local(p: BasePoint, k2: f64, s: f64, y: [f64; 2]) -> (f64, f64, f64) {
    let a1 = 1.0 + s * p.k1;
    let a2 = 1.0 + s * k2;
    let z = [y[0] / a1, y[1] / a2];
    let w = (1.0 + z[0] * z[0] + z[1] * z[1]).sqrt();
    let nu = match p.rev {
        None => a1 * (1.0 + z[0] * z[0]).sqrt(),
        Some(_) => a1 * a2 * w,
    };
    // the tangential part of p has no rotational component
    let eta = (p.pn + s - z[0] * p.pt) / w;
    (w, nu, eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorEntry {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub entries: Vec<TaylorEntry>,
}

impl TaylorReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_error))
    }
}

fn richardson_d1(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn richardson_d2(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    let f0 = f(0.0);
    let d = |h: f64| (f(h) - 2.0 * f0 + f(-h)) / (h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn richardson_mixed(f: &dyn Fn(f64, f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Finite-difference check of the Taylor coefficients of `w`, `nu` and `eta`
/// at `(p, 0, 0)`, evaluated from the graph formulas at every sample.
pub fn taylor_check(base: &Surface) -> TaylorReport {
    let h = 1e-2;
    let dims = base.kind.dim() as usize;
    let mut err = [0.0_f64; 8];
    let names = [
        "ds_w", "dy_w", "dyy_w", "ds_nu", "dss_nu", "dyy_nu", "ds_eta", "dy_eta",
    ];
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
    for j in 0..base.len() {
        let p = BasePoint::at(base, j);
        let k2 = base.k2[j];
        let hj = base.h[j];
        let a2 = base.a2[j];
        let at = |s: f64, y: [f64; 2]| principal_local(p, k2, s, y);
        // s derivatives
        err[0] = err[0].max(rel(richardson_d1(&|s| at(s, [0.0; 2]).0, h), 0.0));
        err[3] = err[3].max(rel(richardson_d1(&|s| at(s, [0.0; 2]).1, h), hj));
        err[4] = err[4].max(rel(richardson_d2(&|s| at(s, [0.0; 2]).1, h), hj * hj - a2));
        err[6] = err[6].max(rel(richardson_d1(&|s| at(s, [0.0; 2]).2, h), 1.0));
        for al in 0..dims {
            let ya = |t: f64| {
                let mut y = [0.0; 2];
                y[al] = t;
                y
            };
            let tangential = if al == 0 { p.pt } else { 0.0 };
            err[1] = err[1].max(rel(richardson_d1(&|t| at(0.0, ya(t)).0, h), 0.0));
            err[7] = err[7].max(rel(richardson_d1(&|t| at(0.0, ya(t)).2, h), -tangential));
            for be in 0..dims {
                let delta = if al == be { 1.0 } else { 0.0 };
                let (dw, dnu) = if al == be {
                    (
                        richardson_d2(&|t| at(0.0, ya(t)).0, h),
                        richardson_d2(&|t| at(0.0, ya(t)).1, h),
                    )
                } else {
                    let yy = |a: f64, b: f64| {
                        let mut y = [0.0; 2];
                        y[al] = a;
                        y[be] = b;
                        y
                    };
                    (
                        richardson_mixed(&|a, b| at(0.0, yy(a, b)).0, h),
                        richardson_mixed(&|a, b| at(0.0, yy(a, b)).1, h),
                    )
                };
                err[2] = err[2].max(rel(dw, delta));
                err[5] = err[5].max(rel(dnu, delta));
            }
        }
    }
    TaylorReport {
        entries: names
            .iter()
            .zip(err)
            .map(|(n, e)| TaylorEntry {
                name: n.to_string(),
                max_rel_error: e,
            })
            .collect(),
    }
}

/// Dense matrix as CSV, one row per line.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.15e}", m[(i, k)]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_circle, build_sphere};
    use std::f64::consts::SQRT_2;

    #[test]
    fn zero_graph_quantities() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let q = graph_quantities(&c, &vec![0.0; 64]).unwrap();
        for j in 0..64 {
            assert!((q.nu[j] - 1.0).abs() < 1e-14);
            assert!((q.w[j] - 1.0).abs() < 1e-14);
            assert!((q.eta[j] - SQRT_2).abs() < 1e-13);
            assert!((q.zeta[j] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_graph_on_circle() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let s = 0.3;
        let q = graph_quantities(&c, &vec![s; 64]).unwrap();
        let r = SQRT_2 + s;
        let m = flow_operator(&c, &vec![s; 64]).unwrap();
        for j in 0..64 {
            assert!((q.w[j] - 1.0).abs() < 1e-13);
            assert!((q.h[j] - 1.0 / r).abs() < 1e-12);
            assert!((q.nu[j] - r / SQRT_2).abs() < 1e-13);
            assert!((m[j] - (r / 2.0 - 1.0 / r)).abs() < 1e-12);
        }
    }

    #[test]
    fn overflow_at_reach() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let u = vec![c.reach(); 64];
        assert!(matches!(graph_quantities(&c, &u), Err(Error::GraphOverflow { .. })));
    }

    #[test]
    fn second_variation_on_circle_modes() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let sv = SecondVariation::new(&c);
        let th = c.grid.params();
        let one = vec![1.0; 64];
        let cos1: Vec<f64> = th.iter().map(|t| t.cos()).collect();
        let l1 = sv.apply(&one);
        let lc = sv.apply(&cos1);
        for j in 0..64 {
            assert!((l1[j] - 1.0).abs() < 1e-12);
            assert!((lc[j] - 0.5 * cos1[j]).abs() < 1e-12);
        }
        let s = &sv.stiffness;
        assert!((s - s.transpose()).amax() < 1e-15);
    }

    #[test]
    fn exact_jacobian_matches_divergence_form_at_zero() {
        let s = build_sphere(2.0, 48).unwrap();
        let z = vec![0.0; 48];
        let a = linearization_exact(&s, &z).unwrap();
        let b = linearization(&s, &z).unwrap();
        let th = s.grid.params();
        let v: Vec<f64> = th.iter().map(|t| (2.0 * t).cos()).collect();
        let va = &a * nalgebra::DVector::from_column_slice(&v);
        let vb = &b * nalgebra::DVector::from_column_slice(&v);
        let exact: Vec<f64> = th.iter().map(|t| -t.cos().powi(2)).collect();
        let ea = va.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let eb = vb.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(ea < 1e-9 && eb < 1e-9, "{ea} {eb}");
    }

    #[test]
    fn diagnostics_match_rebuilt_graph() {
        let c = build_circle(SQRT_2, 128).unwrap();
        let u: Vec<f64> = c.grid.params().iter().map(|t| 0.05 * (2.0 * t).cos() + 0.02 * t.sin()).collect();
        let (d, _) = graph_diagnostics(&c, &u).unwrap();
        let g = c.normal_graph(&u);
        assert!((c.gaussian_area() + d.f_rel - g.gaussian_area()).abs() < 1e-12);
        let res = g.shrinker_residual();
        let gn: f64 = g.weight.iter().zip(&res).map(|(w, r)| w * r * r).sum();
        assert!((gn - d.grad_norm2).abs() < 1e-12 * (1.0 + gn));
    }

    #[test]
    fn gradient_is_minus_area_variation() {
        let s = build_sphere(2.0, 48).unwrap();
        let th = s.grid.params();
        let u: Vec<f64> = th.iter().map(|t| 0.03 * (2.0 * t).cos() + 0.01).collect();
        let phi: Vec<f64> = th.iter().map(|t| t.cos().powi(3)).collect();
        let nu = gradient_operator(&s, &u).unwrap();
        let lhs = q_inner(&s, &nu, &phi).unwrap();
        let h = 1e-5;
        let area = |e: f64| {
            let v: Vec<f64> = u.iter().zip(&phi).map(|(a, b)| a + e * b).collect();
            s.normal_graph(&v).gaussian_area()
        };
        let dfds = (area(h) - area(-h)) / (2.0 * h);
        assert!((lhs + dfds).abs() < 1e-8, "{lhs} {dfds}");
    }

    #[test]
    fn taylor_table_on_sphere() {
        let s = build_sphere(2.0, 48).unwrap();
        let r = taylor_check(&s);
        assert!(r.max_error() < 1e-6, "{r:?}");
    }
}

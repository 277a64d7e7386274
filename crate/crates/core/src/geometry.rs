//! Sampled closed hypersurfaces: plane curves and axisymmetric surfaces given
//! by their profile in the `(r, z)` half-plane.
//!
//! Conventions: the unit normal points outward and `H = div n`, so a round
//! sphere of radius `R` in `R^3` has `H = 2/R`. Loops are stored
//! counter-clockwise; sphere-type profiles run from the south pole to the
//! north pole on Gauss–Legendre nodes, so no sample sits on the axis.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};
use crate::spectral::{Layout, Parity, SpectralGrid};

pub const MIN_CURVE_SAMPLES: usize = 16;
pub const MIN_SPHERE_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "curve-in-plane")]
    Curve,
    #[serde(rename = "revolution-surface")]
    Revolution,
}

impl Kind {
    /// Dimension of the hypersurface.
    pub fn dim(self) -> i32 {
        match self {
            Kind::Curve => 1,
            Kind::Revolution => 2,
        }
    }
}

/// A sampled closed hypersurface with cached pointwise geometry.
///
/// For curves `(x, y)` are Cartesian coordinates; for surfaces of revolution
/// they are `(r, z)`.
#[derive(Debug, Clone)]
pub struct Surface {
    pub kind: Kind,
    pub grid: SpectralGrid,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Speed `|dx/dtheta|`.
    pub g: Vec<f64>,
    pub g_theta: Vec<f64>,
    pub tangent: Vec<[f64; 2]>,
    pub normal: Vec<[f64; 2]>,
    /// Curvature of the curve or profile.
    pub k1: Vec<f64>,
    /// Arclength derivative of `k1`.
    pub k1_s: Vec<f64>,
    /// Rotational principal curvature (zero for curves).
    pub k2: Vec<f64>,
    pub h: Vec<f64>,
    pub a2: Vec<f64>,
    pub xdotn: Vec<f64>,
    pub xdott: Vec<f64>,
    /// Gaussian density `exp(-|x|^2/4)`.
    pub rho: Vec<f64>,
    /// Area quadrature weights.
    pub measure: Vec<f64>,
    /// Gaussian-weighted quadrature weights.
    pub weight: Vec<f64>,
    reach: OnceLock<f64>,
}

/// A base hypersurface over which normal graphs are taken.
pub type BaseShrinker = Surface;
/// An evolving hypersurface.
pub type ImmersedState = Surface;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    pub kind: Kind,
    pub n_samples: usize,
    pub points: Vec<[f64; 2]>,
    pub t: f64,
    #[serde(default = "default_closure")]
    pub closure: Layout,
}

fn default_closure() -> Layout {
    Layout::Periodic
}

impl Surface {
    /// Build a surface from sample points, validating and orienting them.
    pub fn from_points(kind: Kind, closure: Layout, points: &[[f64; 2]], t: f64) -> Result<Surface> {
        let n = points.len();
        if n < MIN_CURVE_SAMPLES {
            return Err(Error::TooFewSamples {
                got: n,
                min: MIN_CURVE_SAMPLES,
            });
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        if closure == Layout::Polar && kind == Kind::Curve {
            return Err(Error::InvalidInput("polar closure requires a surface of revolution".into()));
        }
        if kind == Kind::Revolution && points.iter().any(|p| p[0] <= 0.0) {
            return Err(Error::InvalidInput("profile must lie in r > 0".into()));
        }
        let mut x: Vec<f64> = points.iter().map(|p| p[0]).collect();
        let mut y: Vec<f64> = points.iter().map(|p| p[1]).collect();
        match closure {
            Layout::Periodic => {
                let area: f64 = (0..n)
                    .map(|j| {
                        let k = (j + 1) % n;
                        x[j] * y[k] - x[k] * y[j]
                    })
                    .sum();
                if area.abs() < 1e-300 {
                    return Err(Error::InvalidInput("degenerate loop".into()));
                }
                if area < 0.0 {
                    x = (0..n).map(|j| x[(n - j) % n]).collect();
                    y = (0..n).map(|j| y[(n - j) % n]).collect();
                }
            }
            Layout::Polar => {
                if y[0] > y[n - 1] {
                    x.reverse();
                    y.reverse();
                }
            }
        }
        let s = Surface::assemble(kind, SpectralGrid::new(n, closure), x, y, t);
        if !s.is_simple() {
            return Err(Error::InvalidInput("samples do not form a simple loop".into()));
        }
        if !(s.reach() > 0.0) {
            return Err(Error::InvalidInput("non-positive reach".into()));
        }
        Ok(s)
    }

    /// Recompute geometry for new sample positions on the same grid. The
    /// orientation is assumed to be preserved and simplicity is not checked.
    pub fn with_points(&self, x: Vec<f64>, y: Vec<f64>, t: f64) -> Surface {
        Surface::assemble(self.kind, self.grid.clone(), x, y, t)
    }

    /// Like [`Surface::with_points`] on a fresh grid sized to the input.
    pub fn resized(&self, x: Vec<f64>, y: Vec<f64>, t: f64) -> Surface {
        let grid = SpectralGrid::new(x.len(), self.grid.layout());
        Surface::assemble(self.kind, grid, x, y, t)
    }

    fn assemble(kind: Kind, grid: SpectralGrid, x: Vec<f64>, y: Vec<f64>, t: f64) -> Surface {
        let n = grid.len();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        let (px, py) = match grid.layout() {
            Layout::Periodic => (Parity::Even, Parity::Even),
            Layout::Polar => (Parity::Odd, Parity::Even),
        };
        let (xt, xtt) = grid.d12(&x, px);
        let (yt, ytt) = grid.d12(&y, py);
        let g: Vec<f64> = (0..n).map(|j| xt[j].hypot(yt[j])).collect();
        let g_theta = grid.d1(&g, Parity::Even);
        let tangent: Vec<[f64; 2]> = (0..n).map(|j| [xt[j] / g[j], yt[j] / g[j]]).collect();
        let normal: Vec<[f64; 2]> = tangent.iter().map(|t| [t[1], -t[0]]).collect();
        let k1: Vec<f64> = (0..n)
            .map(|j| (xt[j] * ytt[j] - yt[j] * xtt[j]) / g[j].powi(3))
            .collect();
        let k1_s: Vec<f64> = grid
            .d1(&k1, Parity::Even)
            .iter()
            .zip(&g)
            .map(|(d, gj)| d / gj)
            .collect();
        let k2: Vec<f64> = match kind {
            Kind::Curve => vec![0.0; n],
            Kind::Revolution => (0..n).map(|j| normal[j][0] / x[j]).collect(),
        };
        let h: Vec<f64> = (0..n).map(|j| k1[j] + k2[j]).collect();
        let a2: Vec<f64> = (0..n).map(|j| k1[j] * k1[j] + k2[j] * k2[j]).collect();
        let xdotn: Vec<f64> = (0..n).map(|j| x[j] * normal[j][0] + y[j] * normal[j][1]).collect();
        let xdott: Vec<f64> = (0..n).map(|j| x[j] * tangent[j][0] + y[j] * tangent[j][1]).collect();
        let rho: Vec<f64> = (0..n).map(|j| (-(x[j] * x[j] + y[j] * y[j]) / 4.0).exp()).collect();
        let q = grid.quadrature_weights();
        let measure: Vec<f64> = match kind {
            Kind::Curve => (0..n).map(|j| g[j] * q[j]).collect(),
            Kind::Revolution => (0..n).map(|j| 2.0 * PI * x[j] * g[j] * q[j]).collect(),
        };
        let weight: Vec<f64> = (0..n).map(|j| measure[j] * rho[j]).collect();
        let s = Surface {
            kind,
            grid,
            t,
            x,
            y,
            g,
            g_theta,
            tangent,
            normal,
            k1,
            k1_s,
            k2,
            h,
            a2,
            xdotn,
            xdott,
            rho,
            measure,
            weight,
            reach: OnceLock::new(),
        };
        s
    }

    /// Half-width of a tubular neighbourhood in which normal graphs are
    /// unambiguous: the smaller of the focal distance and half the bottleneck
    /// distance between samples far apart along the loop. Computed on first
    /// use.
    pub fn reach(&self) -> f64 {
        *self.reach.get_or_init(|| self.compute_reach())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn closure(&self) -> Layout {
        self.grid.layout()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.x.iter().zip(&self.y).map(|(a, b)| [*a, *b]).collect()
    }

    pub fn check_field(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// `H - <x,n>/2` at every sample.
    pub fn shrinker_residual(&self) -> Vec<f64> {
        self.h.iter().zip(&self.xdotn).map(|(h, p)| h - 0.5 * p).collect()
    }

    pub fn gaussian_area(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// `F(t0 * M + x0)` without rebuilding the geometry.
    pub fn gaussian_area_transformed(&self, t0: f64, x0: [f64; 2]) -> f64 {
        let scale = t0.powi(self.kind.dim());
        (0..self.len())
            .map(|j| {
                let a = t0 * self.x[j] + x0[0];
                let b = t0 * self.y[j] + x0[1];
                self.measure[j] * (-(a * a + b * b) / 4.0).exp()
            })
            .sum::<f64>()
            * scale
    }

    /// Integral of a field against the Gaussian-weighted measure.
    pub fn integrate_weighted(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weight).map(|(a, w)| a * w).sum()
    }

    /// Arclength derivatives `(u_s, u_ss)` of a field.
    pub fn d_arclength(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (ut, utt) = self.grid.d12(u, Parity::Even);
        let n = self.len();
        let us: Vec<f64> = (0..n).map(|j| ut[j] / self.g[j]).collect();
        let uss: Vec<f64> = (0..n)
            .map(|j| (utt[j] - self.g_theta[j] / self.g[j] * ut[j]) / (self.g[j] * self.g[j]))
            .collect();
        (us, uss)
    }

    /// Squared norm of the Hessian of an axially symmetric field, given its
    /// arclength derivatives.
    pub fn hessian_norm2(&self, j: usize, us: f64, uss: f64) -> f64 {
        match self.kind {
            Kind::Curve => uss * uss,
            Kind::Revolution => {
                let c = self.tangent[j][0] / self.x[j] * us;
                uss * uss + c * c
            }
        }
    }

    /// Arclength of every sample measured from the first sample (periodic) or
    /// from the south pole (polar), together with the total length.
    pub fn arclength(&self) -> (Vec<f64>, f64) {
        self.grid.cumulative_integral(&self.g)
    }

    /// Sample points of the closed planar loop traced by the profile. Polar
    /// profiles are doubled by reflection through the axis.
    pub fn planar_loop(&self) -> Vec<[f64; 2]> {
        let mut pts = self.points();
        if self.closure() == Layout::Polar {
            let n = self.len();
            for k in 0..n {
                let j = n - 1 - k;
                pts.push([-self.x[j], self.y[j]]);
            }
        }
        pts
    }

    fn compute_reach(&self) -> f64 {
        let kmax = self
            .k1
            .iter()
            .chain(self.k2.iter())
            .fold(0.0_f64, |m, k| m.max(k.abs()));
        let mut reach = if kmax > 0.0 { 1.0 / kmax } else { f64::INFINITY };
        if self.kind == Kind::Revolution && self.closure() == Layout::Periodic {
            reach = reach.min(self.x.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        // global bottleneck: distances between samples far apart along the loop
        let pts = self.planar_loop();
        let (s_half, total_half) = self.arclength();
        let (s, total): (Vec<f64>, f64) = match self.closure() {
            Layout::Periodic => (s_half, total_half),
            Layout::Polar => {
                let mut s = s_half.clone();
                let n = s_half.len();
                for k in 0..n {
                    s.push(2.0 * total_half - s_half[n - 1 - k]);
                }
                (s, 2.0 * total_half)
            }
        };
        let sep = if kmax > 0.0 { PI / kmax } else { 0.0 };
        let m = pts.len();
        let mut dmin = f64::INFINITY;
        for i in 0..m {
            for j in (i + 1)..m {
                let ds = (s[j] - s[i]).abs();
                let ds = ds.min(total - ds);
                if ds > sep {
                    let d = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
                    dmin = dmin.min(d);
                }
            }
        }
        reach.min(0.5 * dmin)
    }

    /// Whether the sample polygon is free of crossings (the reflected loop
    /// for polar profiles).
    pub fn is_simple(&self) -> bool {
        let pts = self.planar_loop();
        !polygon_self_intersects(&pts)
    }

    /// The normal graph `p + u(p) n(p)` as a new surface on the same grid.
    pub fn normal_graph(&self, u: &[f64]) -> Surface {
        let n = self.len();
        let x: Vec<f64> = (0..n).map(|j| self.x[j] + u[j] * self.normal[j][0]).collect();
        let y: Vec<f64> = (0..n).map(|j| self.y[j] + u[j] * self.normal[j][1]).collect();
        self.with_points(x, y, self.t)
    }

    pub fn to_json(&self) -> StateJson {
        StateJson {
            kind: self.kind,
            n_samples: self.len(),
            points: self.points(),
            t: self.t,
            closure: self.closure(),
        }
    }

    pub fn from_json(state: &StateJson) -> Result<Surface> {
        if state.points.len() != state.n_samples {
            return Err(Error::GridMismatch {
                expected: state.n_samples,
                got: state.points.len(),
            });
        }
        Surface::from_points(state.kind, state.closure, &state.points, state.t)
    }

    /// Per-sample geometry as CSV.
    pub fn geometry_csv(&self) -> String {
        let (s, _) = self.arclength();
        let mut out = String::new();
        match self.kind {
            Kind::Curve => out.push_str("s,x,y,H,A2,xdotn,weight\n"),
            Kind::Revolution => out.push_str("s,r,z,H,A2,xdotn,weight\n"),
        }
        for j in 0..self.len() {
            let _ = writeln!(
                out,
                "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
                s[j], self.x[j], self.y[j], self.h[j], self.a2[j], self.xdotn[j], self.rho[j]
            );
        }
        out
    }
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Brute-force check for crossings between non-adjacent edges of a closed
/// polygon.
pub fn polygon_self_intersects(pts: &[[f64; 2]]) -> bool {
    let m = pts.len();
    if m < 4 {
        return false;
    }
    // bounding boxes first: cheap rejection
    let boxes: Vec<[f64; 4]> = (0..m)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % m];
            [a[0].min(b[0]), a[0].max(b[0]), a[1].min(b[1]), a[1].max(b[1])]
        })
        .collect();
    for i in 0..m {
        for j in (i + 2)..m {
            if i == 0 && j == m - 1 {
                continue;
            }
            let (bi, bj) = (boxes[i], boxes[j]);
            if bi[1] < bj[0] || bj[1] < bi[0] || bi[3] < bj[2] || bj[3] < bi[2] {
                continue;
            }
            if segments_cross(pts[i], pts[(i + 1) % m], pts[j], pts[(j + 1) % m]) {
                return true;
            }
        }
    }
    false
}

pub fn build_circle(radius: f64, n_samples: usize) -> Result<Surface> {
    if n_samples < MIN_CURVE_SAMPLES {
        return Err(Error::TooFewSamples {
            got: n_samples,
            min: MIN_CURVE_SAMPLES,
        });
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    build_ellipse(radius, radius, n_samples)
}

/// Axis-aligned ellipse centred at the origin, sampled uniformly in the
/// angle parameter.
pub fn build_ellipse(a: f64, b: f64, n_samples: usize) -> Result<Surface> {
    if n_samples < MIN_CURVE_SAMPLES {
        return Err(Error::TooFewSamples {
            got: n_samples,
            min: MIN_CURVE_SAMPLES,
        });
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidInput("semi-axes must be positive".into()));
    }
    let grid = SpectralGrid::new(n_samples, Layout::Periodic);
    let th = grid.params();
    let x = th.iter().map(|t| a * t.cos()).collect();
    let y = th.iter().map(|t| b * t.sin()).collect();
    Ok(Surface::assemble(Kind::Curve, grid, x, y, 0.0))
}

/// Round sphere as a surface of revolution, sampled in polar angle.
pub fn build_sphere(radius: f64, n_samples: usize) -> Result<Surface> {
    if n_samples < MIN_SPHERE_SAMPLES {
        return Err(Error::TooFewSamples {
            got: n_samples,
            min: MIN_SPHERE_SAMPLES,
        });
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let grid = SpectralGrid::new(n_samples, Layout::Polar);
    let th = grid.params();
    let r = th.iter().map(|t| radius * t.sin()).collect();
    let z = th.iter().map(|t| -radius * t.cos()).collect();
    Ok(Surface::assemble(Kind::Revolution, grid, r, z, 0.0))
}

/// Round torus of revolution with tube centre at distance `major` from the
/// axis.
pub fn build_round_torus(major: f64, minor: f64, n_samples: usize) -> Result<Surface> {
    if !(major > minor && minor > 0.0) {
        return Err(Error::InvalidInput("need major > minor > 0".into()));
    }
    let grid = SpectralGrid::new(n_samples, Layout::Periodic);
    let pts: Vec<[f64; 2]> = grid
        .params()
        .iter()
        .map(|t| [major + minor * t.cos(), minor * t.sin()])
        .collect();
    Surface::from_points(Kind::Revolution, Layout::Periodic, &pts, 0.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EntropySearchConfig {
    pub log_t0_min: f64,
    pub log_t0_max: f64,
    pub x0_bound: f64,
    pub grid_points: usize,
    pub x_tol: f64,
}

impl Default for EntropySearchConfig {
    fn default() -> Self {
        EntropySearchConfig {
            log_t0_min: -3.0,
            log_t0_max: 3.0,
            x0_bound: 5.0,
            grid_points: 11,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EntropyResult {
    pub lambda: f64,
    pub t0: f64,
    pub x0: [f64; 2],
    /// False when the local refinement hit its evaluation cap; the best value
    /// found is still returned.
    pub converged: bool,
}

/// Supremum of `F(t0 M + x0)` over dilations and translations. Surfaces of
/// revolution are only translated along the axis.
pub fn entropy(m: &Surface, cfg: &EntropySearchConfig) -> Result<EntropyResult> {
    if cfg.grid_points < 2 || !(cfg.log_t0_max > cfg.log_t0_min) || !(cfg.x0_bound > 0.0) {
        return Err(Error::InvalidInput("bad entropy search region".into()));
    }
    let axial = m.kind == Kind::Revolution;
    let unpack = |p: &[f64]| -> (f64, [f64; 2]) {
        let t0 = p[0].exp();
        if axial {
            (t0, [0.0, p[1]])
        } else {
            (t0, [p[1], p[2]])
        }
    };
    let objective = |p: &[f64]| {
        let (t0, x0) = unpack(p);
        -m.gaussian_area_transformed(t0, x0)
    };
    let d = if axial { 2 } else { 3 };
    let k = cfg.grid_points;
    let node = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (k - 1) as f64;
    let mut best = (f64::INFINITY, vec![0.0; d]);
    let total = k.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = vec![0.0; d];
        for (c, v) in p.iter_mut().enumerate() {
            let i = rem % k;
            rem /= k;
            *v = if c == 0 {
                node(i, cfg.log_t0_min, cfg.log_t0_max)
            } else {
                node(i, -cfg.x0_bound, cfg.x0_bound)
            };
        }
        let f = objective(&p);
        if f < best.0 {
            best = (f, p);
        }
    }
    let step_t = (cfg.log_t0_max - cfg.log_t0_min) / (k - 1) as f64;
    let step_x = 2.0 * cfg.x0_bound / (k - 1) as f64;
    let mut steps = vec![step_x * 0.5; d];
    steps[0] = step_t * 0.5;
    let opts = NelderMeadOptions {
        x_tol: cfg.x_tol,
        f_tol: 0.0,
        max_evals: 20_000,
    };
    let mut min = nelder_mead(objective, &best.1, &steps, opts);
    // restart once from the optimum to shake off a collapsed simplex
    let small: Vec<f64> = steps.iter().map(|s| s * 0.01).collect();
    let again = nelder_mead(objective, &min.x, &small, opts);
    if again.f <= min.f {
        min = Minimum {
            converged: again.converged && min.converged,
            ..again
        };
    }
    let (t0, x0) = unpack(&min.x);
    Ok(EntropyResult {
        lambda: -min.f,
        t0,
        x0,
        converged: min.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupNorms {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Hoelder seminorm of the field itself.
    pub holder: f64,
    /// Hoelder seminorm of the second arclength derivative.
    pub holder2: f64,
}

/// Derivative sup-norms and Hoelder seminorms of a field on the grid of `base`.
pub fn sup_norms(base: &Surface, u: &[f64], alpha: f64) -> Result<SupNorms> {
    base.check_field(u)?;
    let (us, uss) = base.d_arclength(u);
    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    Ok(SupNorms {
        c0: sup(u),
        c1: sup(&us),
        c2: sup(&uss),
        holder: holder_seminorm(base, u, alpha),
        holder2: holder_seminorm(base, &uss, alpha),
    })
}

/// `sup |f(p) - f(q)| / d(p, q)^alpha` over all sample pairs, with `d` the
/// intrinsic (arclength) distance.
pub fn holder_seminorm(base: &Surface, f: &[f64], alpha: f64) -> f64 {
    let (s, total) = base.arclength();
    let periodic = base.closure() == Layout::Periodic;
    let n = f.len();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d = (s[j] - s[i]).abs();
            if periodic {
                d = d.min(total - d);
            }
            if d > 0.0 {
                best = best.max((f[i] - f[j]).abs() / d.powf(alpha));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::SQRT_2;

    #[test]
    fn circle_geometry_and_area() {
        let c = build_circle(SQRT_2, 256).unwrap();
        for j in 0..c.len() {
            assert_relative_eq!(c.h[j], 1.0 / SQRT_2, epsilon = 1e-10);
            assert_relative_eq!(c.xdotn[j], SQRT_2, epsilon = 1e-10);
        }
        let exact = 2.0 * SQRT_2 * PI * (-0.5f64).exp();
        assert_relative_eq!(c.gaussian_area(), exact, max_relative = 1e-13);
        assert!((c.reach() - SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn unit_circle_residual() {
        let c = build_circle(1.0, 256).unwrap();
        for r in c.shrinker_residual() {
            assert!((r - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(build_circle(SQRT_2, 8), Err(Error::TooFewSamples { .. })));
        assert!(matches!(build_sphere(2.0, 4), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn sphere_geometry_and_area() {
        let s = build_sphere(2.0, 128).unwrap();
        for j in 0..s.len() {
            assert!((s.h[j] - 1.0).abs() < 1e-10);
            assert!((s.a2[j] - 0.5).abs() < 1e-10);
        }
        assert_relative_eq!(s.gaussian_area(), 16.0 * PI / 1f64.exp(), max_relative = 1e-13);
        let u = build_sphere(1.0, 128).unwrap();
        for r in u.shrinker_residual() {
            assert!((r - 1.5).abs() < 1e-10);
        }
        let (_, len) = s.arclength();
        assert!((len - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn orientation_is_normalised() {
        let grid = SpectralGrid::new(64, Layout::Periodic);
        let pts: Vec<[f64; 2]> = grid.params().iter().map(|t| [2.0 * t.cos(), -t.sin()]).collect();
        let c = Surface::from_points(Kind::Curve, Layout::Periodic, &pts, 0.0).unwrap();
        assert!(c.xdotn.iter().all(|v| *v > 0.0));
        assert!(c.h.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn figure_eight_is_rejected() {
        let grid = SpectralGrid::new(64, Layout::Periodic);
        let pts: Vec<[f64; 2]> = grid
            .params()
            .iter()
            .map(|t| [t.sin(), (2.0 * t).sin() + 0.1 * t.cos()])
            .collect();
        assert!(Surface::from_points(Kind::Curve, Layout::Periodic, &pts, 0.0).is_err());
    }

    #[test]
    fn entropy_of_circles() {
        let cfg = EntropySearchConfig::default();
        let exact = 2.0 * SQRT_2 * PI * (-0.5f64).exp();
        let c = build_circle(1.0, 128).unwrap();
        let e = entropy(&c, &cfg).unwrap();
        assert!((e.lambda - exact).abs() < 1e-10);
        assert!((e.t0 - SQRT_2).abs() < 1e-5);
    }

    #[test]
    fn json_round_trip() {
        let s = build_sphere(2.0, 40).unwrap();
        let js = serde_json::to_string(&s.to_json()).unwrap();
        let back: StateJson = serde_json::from_str(&js).unwrap();
        let s2 = Surface::from_json(&back).unwrap();
        assert_eq!(s2.points(), s.points());
        assert!(js.contains("revolution-surface"));
    }

    #[test]
    fn norms_of_cosine() {
        let c = build_circle(1.0, 128).unwrap();
        let u: Vec<f64> = c.grid.params().iter().map(|t| t.cos()).collect();
        let n = sup_norms(&c, &u, 0.5).unwrap();
        assert!((n.c0 - 1.0).abs() < 1e-12);
        assert!((n.c1 - 1.0).abs() < 1e-3);
        let z = sup_norms(&c, &vec![0.0; 128], 0.5).unwrap();
        assert_eq!(z.c0 + z.c1 + z.c2 + z.holder, 0.0);
    }
}

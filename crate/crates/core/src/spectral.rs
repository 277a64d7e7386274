//! Spectral calculus on the parameter grids of sampled profiles.
//!
//! [`Layout::Periodic`] samples a closed loop at `theta_j = 2 pi j / n` and
//! differentiates with the FFT. [`Layout::Polar`] samples a profile running
//! from axis to axis: nodes are the Gauss–Legendre points in `xi = -cos theta`,
//! so no node sits on the axis. Axially even fields are smooth functions of
//! `xi`; odd fields (the distance to the axis) are `sin theta` times one.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Periodic,
    Polar,
}

/// Symmetry of a field under reflection through the axis. Ignored on
/// periodic grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Clone)]
struct Fourier {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

#[derive(Debug, Clone)]
pub struct Legendre {
    xi: Vec<f64>,
    w: Vec<f64>,
    sin: Vec<f64>,
    cos: Vec<f64>,
    bary: Vec<f64>,
    d: DMatrix<f64>,
}

#[derive(Clone)]
enum Backend {
    Fourier(Fourier),
    Legendre(Arc<Legendre>),
}

#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    backend: Backend,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("layout", &self.layout())
            .finish()
    }
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (z * p1 - p0) / (z * z - 1.0))
}

impl Legendre {
    fn new(n: usize) -> Legendre {
        let (xi, w) = gauss_legendre(n);
        let sin: Vec<f64> = xi.iter().map(|x| (1.0 - x * x).sqrt()).collect();
        let cos: Vec<f64> = xi.iter().map(|x| -x).collect();
        let bary: Vec<f64> = (0..n)
            .map(|j| {
                let s = (w[j] * (1.0 - xi[j] * xi[j])).sqrt();
                if j % 2 == 0 {
                    s
                } else {
                    -s
                }
            })
            .collect();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = bary[j] / bary[i] / (xi[i] - xi[j]);
                    d[(i, j)] = v;
                    diag -= v;
                }
            }
            d[(i, i)] = diag;
        }
        Legendre {
            xi,
            w,
            sin,
            cos,
            bary,
            d,
        }
    }

    fn dxi(&self, f: &[f64]) -> Vec<f64> {
        (&self.d * DVector::from_column_slice(f)).iter().cloned().collect()
    }

    /// Derivatives in `theta` of a field of the given parity.
    fn d12(&self, f: &[f64], parity: Parity) -> (Vec<f64>, Vec<f64>) {
        let n = f.len();
        match parity {
            Parity::Even => {
                let f1 = self.dxi(f);
                let f2 = self.dxi(&f1);
                let a = (0..n).map(|j| self.sin[j] * f1[j]).collect();
                let b = (0..n)
                    .map(|j| self.cos[j] * f1[j] + self.sin[j] * self.sin[j] * f2[j])
                    .collect();
                (a, b)
            }
            Parity::Odd => {
                let g: Vec<f64> = (0..n).map(|j| f[j] / self.sin[j]).collect();
                let g1 = self.dxi(&g);
                let g2 = self.dxi(&g1);
                let a = (0..n)
                    .map(|j| self.cos[j] * g[j] + self.sin[j] * self.sin[j] * g1[j])
                    .collect();
                let b = (0..n)
                    .map(|j| {
                        let (s, c) = (self.sin[j], self.cos[j]);
                        -s * g[j] + 3.0 * s * c * g1[j] + s * s * s * g2[j]
                    })
                    .collect();
                (a, b)
            }
        }
    }

    fn eval_xi(&self, f: &[f64], x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.xi.len() {
            let dx = x - self.xi[j];
            if dx == 0.0 {
                return f[j];
            }
            let c = self.bary[j] / dx;
            num += c * f[j];
            den += c;
        }
        num / den
    }
}

impl SpectralGrid {
    pub fn new(n: usize, layout: Layout) -> Self {
        let backend = match layout {
            Layout::Periodic => {
                let mut planner = FftPlanner::new();
                Backend::Fourier(Fourier {
                    fwd: planner.plan_fft_forward(n),
                    inv: planner.plan_fft_inverse(n),
                })
            }
            Layout::Polar => Backend::Legendre(Arc::new(Legendre::new(n))),
        };
        SpectralGrid { n, backend }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn layout(&self) -> Layout {
        match self.backend {
            Backend::Fourier(_) => Layout::Periodic,
            Backend::Legendre(_) => Layout::Polar,
        }
    }

    /// Uniform parameter spacing of the periodic layout.
    pub fn step(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn param(&self, j: usize) -> f64 {
        match &self.backend {
            Backend::Fourier(_) => self.step() * j as f64,
            Backend::Legendre(l) => l.cos[j].acos(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.param(j)).collect()
    }

    fn fourier(&self) -> &Fourier {
        match &self.backend {
            Backend::Fourier(f) => f,
            Backend::Legendre(_) => panic!("operation requires the periodic layout"),
        }
    }

    fn wavenumber(&self, idx: usize) -> i64 {
        if 2 * idx < self.n {
            idx as i64
        } else {
            idx as i64 - self.n as i64
        }
    }

    fn is_nyquist(&self, idx: usize) -> bool {
        self.n % 2 == 0 && 2 * idx == self.n
    }

    fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n, "field length does not match grid");
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fourier().fwd.process(&mut buf);
        buf
    }

    fn backward(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.fourier().inv.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    fn multiply(&self, spec: &[Complex64], mult: impl Fn(i64, bool) -> Complex64) -> Vec<Complex64> {
        spec.iter()
            .enumerate()
            .map(|(idx, c)| c * mult(self.wavenumber(idx), self.is_nyquist(idx)))
            .collect()
    }

    /// First parameter derivative.
    pub fn d1(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        match &self.backend {
            Backend::Fourier(_) => {
                let spec = self.forward(f);
                self.backward(self.multiply(&spec, first_derivative))
            }
            Backend::Legendre(l) => l.d12(f, parity).0,
        }
    }

    /// Second parameter derivative.
    pub fn d2(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        self.d12(f, parity).1
    }

    /// First and second parameter derivatives.
    pub fn d12(&self, f: &[f64], parity: Parity) -> (Vec<f64>, Vec<f64>) {
        match &self.backend {
            Backend::Fourier(_) => {
                let spec = self.forward(f);
                let a = self.backward(self.multiply(&spec, first_derivative));
                let b = self.backward(self.multiply(&spec, second_derivative));
                (a, b)
            }
            Backend::Legendre(l) => {
                assert_eq!(f.len(), self.n, "field length does not match grid");
                l.d12(f, parity)
            }
        }
    }

    /// Integral of an axially even (or periodic) field from the start of the
    /// parameter domain to every node, and over the whole domain.
    pub fn cumulative_integral(&self, f: &[f64]) -> (Vec<f64>, f64) {
        match &self.backend {
            Backend::Fourier(_) => {
                let mean = f.iter().sum::<f64>() / self.n as f64;
                let centred: Vec<f64> = f.iter().map(|v| v - mean).collect();
                let spec = self.forward(&centred);
                let anti = self.backward(self.multiply(&spec, |k, nyq| {
                    if k == 0 || nyq {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(0.0, -1.0 / k as f64)
                    }
                }));
                let s = (0..self.n)
                    .map(|j| mean * self.param(j) + anti[j] - anti[0])
                    .collect();
                (s, 2.0 * PI * mean)
            }
            Backend::Legendre(l) => {
                let (gx, gw) = gauss_legendre(8);
                let piece = |a: f64, b: f64| -> f64 {
                    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
                    gx.iter()
                        .zip(&gw)
                        .map(|(x, w)| {
                            let th = c + h * x;
                            w * h * l.eval_xi(f, -th.cos())
                        })
                        .sum()
                };
                let mut s = Vec::with_capacity(self.n);
                let mut acc = 0.0;
                let mut prev = 0.0;
                for j in 0..self.n {
                    let th = self.param(j);
                    acc += piece(prev, th);
                    s.push(acc);
                    prev = th;
                }
                let total = acc + piece(prev, PI);
                (s, total)
            }
        }
    }

    /// Trigonometric interpolant shifted by half a step (periodic layout).
    pub fn to_midpoints(&self, f: &[f64]) -> Vec<f64> {
        let h = self.step();
        let spec = self.forward(f);
        self.backward(self.multiply(&spec, |k, nyq| {
            if nyq {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(1.0, 0.5 * h * k as f64)
            }
        }))
    }

    /// First derivative evaluated half a step ahead of each node (periodic
    /// layout). Unlike the collocated derivative this does not annihilate the
    /// highest resolved mode.
    pub fn d1_to_midpoints(&self, f: &[f64]) -> Vec<f64> {
        let h = self.step();
        let nf = self.n as f64;
        let spec = self.forward(f);
        self.backward(self.multiply(&spec, |k, nyq| {
            if nyq {
                Complex64::new(-0.5 * nf, 0.0)
            } else {
                Complex64::new(0.0, k as f64) * Complex64::from_polar(1.0, 0.5 * h * k as f64)
            }
        }))
    }

    /// Interpolant of `f` at arbitrary parameter values.
    pub fn interpolant(&self, f: &[f64], parity: Parity) -> Interpolant {
        match &self.backend {
            Backend::Fourier(_) => {
                let spec = self.forward(f);
                let scale = 1.0 / self.n as f64;
                let coeffs = spec
                    .iter()
                    .enumerate()
                    .map(|(idx, c)| (self.wavenumber(idx), self.is_nyquist(idx), c * scale))
                    .collect();
                Interpolant::Fourier { coeffs }
            }
            Backend::Legendre(l) => {
                let vals: Vec<f64> = match parity {
                    Parity::Even => f.to_vec(),
                    Parity::Odd => f.iter().zip(&l.sin).map(|(a, s)| a / s).collect(),
                };
                let dvals = l.dxi(&vals);
                Interpolant::Legendre {
                    grid: l.clone(),
                    vals,
                    dvals,
                    odd: parity == Parity::Odd,
                }
            }
        }
    }

    /// Dense matrix of a linear operator on grid fields, assembled column by
    /// column.
    pub fn operator_matrix(&self, rows: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e[j] = 1.0;
            let col = op(&e);
            debug_assert_eq!(col.len(), rows);
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
            e[j] = 0.0;
        }
        m
    }

    /// Quadrature weights for integrals over the parameter domain. On the
    /// polar layout they integrate `sin(theta)` times smooth functions of
    /// `cos(theta)`, which is the form every area integral takes there.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match &self.backend {
            Backend::Fourier(_) => vec![self.step(); self.n],
            Backend::Legendre(l) => l.w.iter().zip(&l.sin).map(|(w, s)| w / s).collect(),
        }
    }
}

fn first_derivative(k: i64, nyq: bool) -> Complex64 {
    if nyq {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(0.0, k as f64)
    }
}

fn second_derivative(k: i64, _nyq: bool) -> Complex64 {
    Complex64::new(-((k * k) as f64), 0.0)
}

#[derive(Debug, Clone)]
pub enum Interpolant {
    Fourier {
        coeffs: Vec<(i64, bool, Complex64)>,
    },
    Legendre {
        grid: Arc<Legendre>,
        vals: Vec<f64>,
        dvals: Vec<f64>,
        odd: bool,
    },
}

impl Interpolant {
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            Interpolant::Fourier { coeffs } => coeffs
                .iter()
                .map(|(k, nyq, c)| {
                    if *nyq {
                        c.re * (*k as f64 * theta).cos()
                    } else {
                        (c * Complex64::from_polar(1.0, *k as f64 * theta)).re
                    }
                })
                .sum(),
            Interpolant::Legendre { grid, vals, odd, .. } => {
                let v = grid.eval_xi(vals, -theta.cos());
                if *odd {
                    v * theta.sin()
                } else {
                    v
                }
            }
        }
    }

    pub fn eval_d1(&self, theta: f64) -> f64 {
        match self {
            Interpolant::Fourier { coeffs } => coeffs
                .iter()
                .map(|(k, nyq, c)| {
                    let kf = *k as f64;
                    if *nyq {
                        -c.re * kf * (kf * theta).sin()
                    } else {
                        (c * Complex64::new(0.0, kf) * Complex64::from_polar(1.0, kf * theta)).re
                    }
                })
                .sum(),
            Interpolant::Legendre {
                grid,
                vals,
                dvals,
                odd,
            } => {
                let x = -theta.cos();
                let (s, c) = theta.sin_cos();
                let d = grid.eval_xi(dvals, x);
                if *odd {
                    c * grid.eval_xi(vals, x) + s * s * d
                } else {
                    s * d
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn periodic_derivatives_are_spectral() {
        let g = SpectralGrid::new(64, Layout::Periodic);
        let th = g.params();
        let f: Vec<f64> = th.iter().map(|t| (t.sin()).exp()).collect();
        let df: Vec<f64> = th.iter().map(|t| t.cos() * t.sin().exp()).collect();
        let d2f: Vec<f64> = th
            .iter()
            .map(|t| (t.cos().powi(2) - t.sin()) * t.sin().exp())
            .collect();
        let (a, b) = g.d12(&f, Parity::Even);
        assert!(max_err(&a, &df) < 1e-12);
        assert!(max_err(&b, &d2f) < 1e-11);
    }

    #[test]
    fn gauss_legendre_rule() {
        let (x, w) = gauss_legendre(10);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((i - 2.0 / 19.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn polar_derivatives_respect_parity() {
        let g = SpectralGrid::new(40, Layout::Polar);
        let th = g.params();
        let f: Vec<f64> = th.iter().map(|t| (2.0 * t).cos() + t.cos()).collect();
        let df: Vec<f64> = th.iter().map(|t| -2.0 * (2.0 * t).sin() - t.sin()).collect();
        let d2f: Vec<f64> = th.iter().map(|t| -4.0 * (2.0 * t).cos() - t.cos()).collect();
        let (a, b) = g.d12(&f, Parity::Even);
        assert!(max_err(&a, &df) < 1e-12);
        assert!(max_err(&b, &d2f) < 1e-11);
        let r: Vec<f64> = th.iter().map(|t| t.sin() * (1.0 + 0.2 * t.cos())).collect();
        let dr: Vec<f64> = th
            .iter()
            .map(|t| t.cos() * (1.0 + 0.2 * t.cos()) - 0.2 * t.sin() * t.sin())
            .collect();
        let d2r: Vec<f64> = th
            .iter()
            .map(|t| -t.sin() - 0.4 * (2.0 * t).sin())
            .collect();
        let (a, b) = g.d12(&r, Parity::Odd);
        assert!(max_err(&a, &dr) < 1e-12);
        assert!(max_err(&b, &d2r) < 1e-11);
    }

    #[test]
    fn polar_quadrature_integrates_sine_weighted_cosines() {
        let g = SpectralGrid::new(32, Layout::Polar);
        let q = g.quadrature_weights();
        let th = g.params();
        let i1: f64 = th.iter().zip(&q).map(|(t, w)| w * t.sin()).sum();
        assert!((i1 - 2.0).abs() < 1e-14);
        let i2: f64 = th.iter().zip(&q).map(|(t, w)| w * t.sin() * t.cos().powi(2)).sum();
        assert!((i2 - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn cumulative_integrals() {
        let g = SpectralGrid::new(32, Layout::Polar);
        let f: Vec<f64> = g.params().iter().map(|t| 1.0 + t.cos().powi(2)).collect();
        let (s, total) = g.cumulative_integral(&f);
        assert!((total - 1.5 * PI).abs() < 1e-12);
        for (j, t) in g.params().iter().enumerate() {
            let exact = 1.5 * t + 0.25 * (2.0 * t).sin();
            assert!((s[j] - exact).abs() < 1e-12);
        }
        let p = SpectralGrid::new(32, Layout::Periodic);
        let f: Vec<f64> = p.params().iter().map(|t| 2.0 + t.cos()).collect();
        let (s, total) = p.cumulative_integral(&f);
        assert!((total - 4.0 * PI).abs() < 1e-12);
        for (j, t) in p.params().iter().enumerate() {
            assert!((s[j] - (2.0 * t + t.sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn staggered_derivative_hits_nyquist_mode() {
        let n = 16;
        let g = SpectralGrid::new(n, Layout::Periodic);
        let alt: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = g.d1_to_midpoints(&alt);
        for (j, v) in d.iter().enumerate() {
            let expected = -(n as f64 / 2.0) * if j % 2 == 0 { 1.0 } else { -1.0 };
            assert!((v - expected).abs() < 1e-12);
        }
        let th = g.params();
        let f: Vec<f64> = th.iter().map(|t| (3.0 * t).cos()).collect();
        let mid = g.d1_to_midpoints(&f);
        let h = g.step();
        for (j, v) in mid.iter().enumerate() {
            let t = th[j] + 0.5 * h;
            assert!((v + 3.0 * (3.0 * t).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolant_reproduces_smooth_data() {
        let g = SpectralGrid::new(24, Layout::Periodic);
        let f: Vec<f64> = g.params().iter().map(|t| (2.0 * t).sin() + 0.3 * (5.0 * t).cos()).collect();
        let it = g.interpolant(&f, Parity::Even);
        let t = 0.123;
        assert!((it.eval(t) - ((2.0 * t).sin() + 0.3 * (5.0 * t).cos())).abs() < 1e-13);
        assert!((it.eval_d1(t) - (2.0 * (2.0 * t).cos() - 1.5 * (5.0 * t).sin())).abs() < 1e-12);

        let p = SpectralGrid::new(24, Layout::Polar);
        let r: Vec<f64> = p.params().iter().map(|t| t.sin() * (2.0 + t.cos())).collect();
        let it = p.interpolant(&r, Parity::Odd);
        let t = 0.01;
        assert!((it.eval(t) - t.sin() * (2.0 + t.cos())).abs() < 1e-13);
        assert!((it.eval_d1(t) - (t.cos() * (2.0 + t.cos()) - t.sin().powi(2))).abs() < 1e-12);
    }
}

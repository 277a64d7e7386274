//! Discrete Lyapunov–Schmidt reduction at a shrinker: projection onto a
//! (possibly synthetic) kernel, inversion of `projection + gradient operator`
//! by Newton's method, and the reduced function on the kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Surface;
use crate::graph::{gradient_operator, graph_diagnostics, linearization, q_inner, q_norm};
use crate::shrinker::spectrum;

/// How the kernel directions are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    /// Eigenfields whose eigenvalue is below the tolerance in modulus.
    Tolerance(f64),
    /// The `m` eigenfields of smallest `|lambda|`, whatever their size.
    /// Exercises the machinery on bases whose true kernel is trivial.
    Synthetic(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PsiOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Inputs with larger Q-norm are rejected as outside the Newton basin.
    pub max_input: f64,
}

impl Default for PsiOptions {
    fn default() -> Self {
        PsiOptions {
            tol: 1e-10,
            max_iter: 30,
            max_input: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub base: Surface,
    pub choice: KernelChoice,
    /// Q-orthonormal kernel basis.
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Matrix of the Q-orthogonal projection onto the kernel.
    pub projection: DMatrix<f64>,
    pub options: PsiOptions,
    f_base: f64,
    cache: Vec<(Vec<f64>, Vec<f64>)>,
}

const CACHE_LIMIT: usize = 64;

pub fn build_reduction(base: &Surface, choice: KernelChoice) -> Result<Reduction> {
    let n = base.len();
    let spec = spectrum(base, n)?;
    let mut order: Vec<usize> = (0..spec.eigenvalues.len()).collect();
    order.sort_by(|a, b| spec.eigenvalues[*a].abs().total_cmp(&spec.eigenvalues[*b].abs()));
    let picked: Vec<usize> = match &choice {
        KernelChoice::Tolerance(tol) => order
            .iter()
            .cloned()
            .filter(|&i| spec.eigenvalues[i].abs() < *tol)
            .collect(),
        KernelChoice::Synthetic(m) => {
            if *m > n {
                return Err(Error::InvalidInput(format!("kernel dimension {m} exceeds {n}")));
            }
            order.iter().cloned().take(*m).collect()
        }
    };
    let basis: Vec<Vec<f64>> = picked.iter().map(|&i| spec.eigenfields[i].clone()).collect();
    let eigenvalues: Vec<f64> = picked.iter().map(|&i| spec.eigenvalues[i]).collect();
    // P = sum_i phi_i (W phi_i)^T
    let mut projection = DMatrix::zeros(n, n);
    for phi in &basis {
        for r in 0..n {
            for c in 0..n {
                projection[(r, c)] += phi[r] * base.weight[c] * phi[c];
            }
        }
    }
    Ok(Reduction {
        base: base.clone(),
        choice,
        basis,
        eigenvalues,
        projection,
        options: PsiOptions::default(),
        f_base: base.gaussian_area(),
        cache: Vec::new(),
    })
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().cloned().collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReducedSample {
    pub f: f64,
    /// Euclidean gradient in kernel coordinates, which is the Q-gradient of
    /// the reduced function since the basis is Q-orthonormal.
    pub grad_norm: f64,
}

impl Reduction {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        if self.basis.is_empty() {
            return vec![0.0; u.len()];
        }
        mat_vec(&self.projection, u)
    }

    /// Kernel coordinates `Q(u, phi_i)`.
    pub fn coordinates(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.basis.iter().map(|phi| q_inner(&self.base, u, phi)).collect()
    }

    pub fn from_coordinates(&self, c: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.base.len()];
        for (ci, phi) in c.iter().zip(&self.basis) {
            for (a, b) in u.iter_mut().zip(phi) {
                *a += ci * b;
            }
        }
        u
    }

    /// `projection(u) + N(u)` where `N` is the negative gradient of the
    /// Gaussian area.
    pub fn extended_operator(&self, u: &[f64]) -> Result<Vec<f64>> {
        let g = gradient_operator(&self.base, u)?;
        let p = self.project(u);
        Ok(g.iter().zip(&p).map(|(a, b)| a + b).collect())
    }

    /// Graph `u` with `extended_operator(u) = v`, by Newton's method from 0
    /// with the linearization recomputed at every iterate.
    pub fn psi(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.base.check_field(v)?;
        if let Some((_, u)) = self.cache.iter().find(|(k, _)| k.as_slice() == v) {
            return Ok(u.clone());
        }
        let size = q_norm(&self.base, v)?;
        if size > self.options.max_input {
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: size,
            });
        }
        let n = v.len();
        let mut u = vec![0.0; n];
        let mut res = f64::INFINITY;
        for it in 0..=self.options.max_iter {
            let r: Vec<f64> = self
                .extended_operator(&u)?
                .iter()
                .zip(v)
                .map(|(a, b)| a - b)
                .collect();
            res = q_norm(&self.base, &r)?;
            if res < self.options.tol {
                if self.cache.len() == CACHE_LIMIT {
                    self.cache.remove(0);
                }
                self.cache.push((v.to_vec(), u.clone()));
                return Ok(u);
            }
            if it == self.options.max_iter {
                break;
            }
            let jac = linearization(&self.base, &u)? + &self.projection;
            let lu = jac.clone().lu();
            let step = lu.solve(&DVector::from_column_slice(&r)).ok_or_else(|| {
                let sv = jac.singular_values();
                Error::SingularLinearization {
                    min_singular: sv.iter().cloned().fold(f64::INFINITY, f64::min),
                }
            })?;
            for (a, d) in u.iter_mut().zip(step.iter()) {
                *a -= d;
            }
        }
        Err(Error::NoConvergence {
            iterations: self.options.max_iter,
            residual: res,
        })
    }

    /// Largest Q-norm residual of `extended_operator(psi(v)) - v` over the cache.
    pub fn cache_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (v, u) in &self.cache {
            let r: Vec<f64> = self
                .extended_operator(u)?
                .iter()
                .zip(v)
                .map(|(a, b)| a - b)
                .collect();
            worst = worst.max(q_norm(&self.base, &r)?);
        }
        Ok(worst)
    }

    /// Gaussian area of the graph of `u`.
    pub fn area(&self, u: &[f64]) -> Result<f64> {
        Ok(self.f_base + graph_diagnostics(&self.base, u)?.0.f_rel)
    }

    /// Area of the graph of `u` minus that of the base, without cancellation.
    pub fn area_excess(&self, u: &[f64]) -> Result<f64> {
        Ok(graph_diagnostics(&self.base, u)?.0.f_rel)
    }

    /// Reduced function at kernel coordinates `c`, relative to the base value,
    /// together with its gradient by centred differences of step `h`.
    pub fn reduced_function(&mut self, c: &[f64], h: f64) -> Result<ReducedSample> {
        let f = self.area_excess_at(c)?;
        let mut g2 = 0.0;
        for i in 0..c.len() {
            let mut cp = c.to_vec();
            let mut cm = c.to_vec();
            cp[i] += h;
            cm[i] -= h;
            let d = (self.area_excess_at(&cp)? - self.area_excess_at(&cm)?) / (2.0 * h);
            g2 += d * d;
        }
        Ok(ReducedSample { f, grad_norm: g2.sqrt() })
    }

    fn area_excess_at(&mut self, c: &[f64]) -> Result<f64> {
        let v = self.from_coordinates(c);
        let u = self.psi(&v)?;
        self.area_excess(&u)
    }

    /// `|F(u) - f(projection(u))| / ||N(u)||_Q^2` (0 when both vanish).
    pub fn area_gap_ratio(&mut self, u: &[f64], h: f64) -> Result<f64> {
        let c = self.coordinates(u)?;
        let reduced = self.reduced_function(&c, h)?.f;
        let lhs = (self.area_excess(u)? - reduced).abs();
        let rhs = q_norm(&self.base, &gradient_operator(&self.base, u)?)?.powi(2);
        Ok(ratio(lhs, rhs))
    }

    /// `|grad f|(projection(u)) / ||N(u)||_Q` (0 when both vanish).
    pub fn reduced_gradient_ratio(&mut self, u: &[f64], h: f64) -> Result<f64> {
        let c = self.coordinates(u)?;
        let lhs = self.reduced_function(&c, h)?.grad_norm;
        let rhs = q_norm(&self.base, &gradient_operator(&self.base, u)?)?;
        Ok(ratio(lhs, rhs))
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderReport {
    pub eps: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `max / min` over the ladder.
    pub spread: f64,
}

fn ladder(eps: &[f64], ratios: Vec<f64>) -> LadderReport {
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    LadderReport {
        eps: eps.to_vec(),
        spread: if min > 0.0 { max / min } else { f64::INFINITY },
        ratios,
    }
}

pub const EPS_LADDER: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// Both reduction ratios along `eps * u`.
pub fn reduction_ladders(red: &mut Reduction, u: &[f64], eps: &[f64]) -> Result<(LadderReport, LadderReport)> {
    let mut rf = Vec::with_capacity(eps.len());
    let mut rg = Vec::with_capacity(eps.len());
    for &e in eps {
        let ue: Vec<f64> = u.iter().map(|v| e * v).collect();
        // difference step proportional to the size of the kernel part
        let h = 1e-3 * e;
        rf.push(red.area_gap_ratio(&ue, h)?);
        rg.push(red.reduced_gradient_ratio(&ue, h)?);
    }
    Ok((ladder(eps, rf), ladder(eps, rg)))
}

/// Samples of the reduced function along the ray `r * dir` in kernel
/// coordinates, as CSV rows `r,c...,f,grad_norm`.
pub fn reduced_samples_csv(red: &mut Reduction, dir: &[f64], radii: &[f64]) -> Result<String> {
    let mut out = String::from("r");
    for i in 0..dir.len() {
        out.push_str(&format!(",c{i}"));
    }
    out.push_str(",f_minus_base,grad_norm\n");
    for &r in radii {
        let c: Vec<f64> = dir.iter().map(|d| r * d).collect();
        let s = red.reduced_function(&c, 1e-4 * r.abs().max(1e-3))?;
        out.push_str(&format!("{r:.17e}"));
        for v in &c {
            out.push_str(&format!(",{v:.17e}"));
        }
        out.push_str(&format!(",{:.17e},{:.17e}\n", s.f, s.grad_norm));
    }
    Ok(out)
}

//! Finding shrinkers and classifying their stability: Newton iteration on
//! the gradient operator, the spectrum of the second variation operator, and
//! the Angenent torus profile by shooting.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Kind, Surface};
use crate::graph::{gradient_operator, linearization_exact, q_inner, q_norm, SecondVariation};
use crate::ode::{dp_step, integrate, State};
use crate::spectral::Layout;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest admissible singular value of the linearization.
    pub singular_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 30,
            singular_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewtonResult {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// `|N(u_k)|_Q` for every iterate, starting with the initial guess.
    pub residuals: Vec<f64>,
    /// `e_{k+1} / e_k^2` for consecutive residuals.
    pub ratios: Vec<f64>,
}

/// Newton iteration `u <- u - L_u^{-1} N(u)` for a critical point of the
/// Gaussian area among normal graphs over `base`.
pub fn newton_find_shrinker(base: &Surface, u0: &[f64], opts: &NewtonOptions) -> Result<NewtonResult> {
    base.check_field(u0)?;
    let mut u = u0.to_vec();
    let mut nu = gradient_operator(base, &u)?;
    let mut residuals = vec![q_norm(base, &nu)?];
    let mut iterations = 0;
    while residuals[iterations] >= opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: residuals[iterations],
            });
        }
        let jac = linearization_exact(base, &u)?;
        let smin = jac.clone().singular_values().min();
        if smin < opts.singular_tol {
            return Err(Error::SingularLinearization { min_singular: smin });
        }
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&nu))
            .ok_or(Error::SingularLinearization { min_singular: smin })?;
        for (a, d) in u.iter_mut().zip(step.iter()) {
            *a -= d;
        }
        nu = gradient_operator(base, &u)?;
        residuals.push(q_norm(base, &nu)?);
        iterations += 1;
    }
    let ratios = residuals.windows(2).map(|w| w[1] / (w[0] * w[0])).collect();
    Ok(NewtonResult {
        u,
        iterations,
        residuals,
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeMarker {
    Dilation,
    Translation,
    Other,
}

impl ModeMarker {
    fn label(self) -> &'static str {
        match self {
            ModeMarker::Dilation => "dilation",
            ModeMarker::Translation => "translation",
            ModeMarker::Other => "",
        }
    }
}

/// Eigenpairs of the second variation operator, eigenvalues descending and
/// eigenfields orthonormal in the Gaussian inner product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<Vec<f64>>,
    pub markers: Vec<ModeMarker>,
    /// Squared Q-projection of each eigenfield on the dilation and
    /// translation fields.
    pub group_overlap: Vec<f64>,
    /// `max |Q(phi_i, phi_j) - delta_ij|`.
    pub orthonormality_residual: f64,
    /// `max_i |L phi_i - lambda_i phi_i|_Q`.
    pub eigen_residual: f64,
    /// Sup of the base's shrinker residual; large values mean the spectrum
    /// is only approximate.
    pub base_residual: f64,
}

impl SpectralDecomposition {
    /// Columns `index,eigenvalue,marker`.
    pub fn csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,marker\n");
        for (i, (l, m)) in self.eigenvalues.iter().zip(&self.markers).enumerate() {
            let _ = writeln!(out, "{i},{l},{}", m.label());
        }
        out
    }
}

/// Dilation field `H` and translation fields `<n, e_i>` of the base. Only
/// the axial translation exists among axisymmetric fields.
pub fn group_fields(base: &Surface) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nx: Vec<f64> = base.normal.iter().map(|n| n[0]).collect();
    let ny: Vec<f64> = base.normal.iter().map(|n| n[1]).collect();
    let trans = match base.kind {
        Kind::Curve => vec![nx, ny],
        Kind::Revolution => vec![ny],
    };
    (base.h.clone(), trans)
}

/// Q-orthonormal basis of the span of `fields`, dropping dependent ones.
pub fn q_orthonormalize(base: &Surface, fields: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for f in fields {
        let mut v = f.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = q_inner(base, &v, b)?;
                for (a, bb) in v.iter_mut().zip(b) {
                    *a -= c * bb;
                }
            }
        }
        let n = q_norm(base, &v)?;
        if n > 1e-10 * q_norm(base, f)?.max(1e-300) {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    Ok(basis)
}

fn projection_norm2(base: &Surface, f: &[f64], basis: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    for b in basis {
        s += q_inner(base, f, b)?.powi(2);
    }
    Ok(s)
}

/// Top `k_max` eigenpairs of the Q-symmetric discrete second variation
/// operator at `u = 0`.
pub fn spectrum(base: &Surface, k_max: usize) -> Result<SpectralDecomposition> {
    let sv = SecondVariation::new(base);
    let n = base.len();
    let sq: Vec<f64> = sv.weight.iter().map(|w| w.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, k| sv.stiffness[(i, k)] / (sq[i] * sq[k]));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let k = k_max.min(n);
    let (hfield, trans) = group_fields(base);
    let dil_basis = q_orthonormalize(base, &[hfield])?;
    let trans_basis = q_orthonormalize(base, &trans)?;
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenfields = Vec::with_capacity(k);
    let mut markers = Vec::with_capacity(k);
    let mut group_overlap = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let v = eig.eigenvectors.column(i);
        let mut phi: Vec<f64> = (0..n).map(|j| v[j] / sq[j]).collect();
        // fix the sign so that the largest entry is positive
        let big = phi
            .iter()
            .copied()
            .fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if big < 0.0 {
            phi.iter_mut().for_each(|a| *a = -*a);
        }
        let lambda = eig.eigenvalues[i];
        let od = projection_norm2(base, &phi, &dil_basis)?;
        let ot = projection_norm2(base, &phi, &trans_basis)?;
        let marker = if od > 0.5 && (lambda - 1.0).abs() < 1e-3 {
            ModeMarker::Dilation
        } else if ot > 0.5 && (lambda - 0.5).abs() < 1e-3 {
            ModeMarker::Translation
        } else {
            ModeMarker::Other
        };
        eigenvalues.push(lambda);
        eigenfields.push(phi);
        markers.push(marker);
        group_overlap.push(od + ot);
    }
    let mut orth: f64 = 0.0;
    for a in 0..k {
        for b in a..k {
            let q = q_inner(base, &eigenfields[a], &eigenfields[b])?;
            let target = if a == b { 1.0 } else { 0.0 };
            orth = orth.max((q - target).abs());
        }
    }
    let mut eres: f64 = 0.0;
    for (phi, l) in eigenfields.iter().zip(&eigenvalues) {
        let lphi = sv.apply(phi);
        let d: Vec<f64> = lphi.iter().zip(phi).map(|(a, b)| a - l * b).collect();
        eres = eres.max(q_norm(base, &d)?);
    }
    let base_residual = base.shrinker_residual().iter().fold(0.0, |a: f64, r| a.max(r.abs()));
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenfields,
        markers,
        group_overlap,
        orthonormality_residual: orth,
        eigen_residual: eres,
        base_residual,
    })
}

/// `|L f - lambda f|_Q / |f|_Q`.
pub fn eigen_identity_error(base: &Surface, f: &[f64], lambda: f64) -> Result<f64> {
    let lf = SecondVariation::new(base).apply(f);
    let d: Vec<f64> = lf.iter().zip(f).map(|(a, b)| a - lambda * b).collect();
    Ok(q_norm(base, &d)? / q_norm(base, f)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityVerdict {
    /// Only dilation and translation modes are positive.
    StableModuloGroup,
    Unstable,
    /// Some eigenvalue sits too close to 0, 1/2 or 1 to decide.
    Ambiguous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub verdict: StabilityVerdict,
    pub positive: usize,
    pub group_modes: usize,
    /// Positive eigenvalues whose eigenfields are Q-orthogonal to the group
    /// fields.
    pub index: usize,
    pub unstable_eigenvalues: Vec<f64>,
    /// Largest squared overlap of an unstable eigenfield with the group fields.
    pub unstable_overlap: f64,
    /// Which perturbations were considered.
    pub sector: String,
    pub ambiguous_eigenvalues: Vec<f64>,
}

pub const AMBIGUITY_TOL: f64 = 1e-6;

pub fn stability_report(base: &Surface, spec: &SpectralDecomposition) -> StabilityReport {
    let mut positive = 0;
    let mut group_modes = 0;
    let mut unstable = Vec::new();
    let mut unstable_overlap: f64 = 0.0;
    let mut ambiguous = Vec::new();
    for ((l, m), ov) in spec.eigenvalues.iter().zip(&spec.markers).zip(&spec.group_overlap) {
        if l.abs() < AMBIGUITY_TOL {
            ambiguous.push(*l);
            continue;
        }
        if *m == ModeMarker::Other && ((l - 0.5).abs() < AMBIGUITY_TOL || (l - 1.0).abs() < AMBIGUITY_TOL) {
            ambiguous.push(*l);
        }
        if *l > 0.0 {
            positive += 1;
            if *m == ModeMarker::Other {
                unstable.push(*l);
                unstable_overlap = unstable_overlap.max(*ov);
            } else {
                group_modes += 1;
            }
        }
    }
    let verdict = if !ambiguous.is_empty() {
        StabilityVerdict::Ambiguous
    } else if unstable.is_empty() {
        StabilityVerdict::StableModuloGroup
    } else {
        StabilityVerdict::Unstable
    };
    let sector = match base.kind {
        Kind::Curve => "all normal variations".to_string(),
        Kind::Revolution => "axisymmetric normal variations only".to_string(),
    };
    StabilityReport {
        verdict,
        positive,
        group_modes,
        index: unstable.len(),
        unstable_eigenvalues: unstable,
        unstable_overlap,
        sector,
        ambiguous_eigenvalues: ambiguous,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShootOptions {
    pub ode_tol: f64,
    /// Samples of the closed profile (even).
    pub n_samples: usize,
    /// Target for the closure defect.
    pub defect_tol: f64,
    pub max_iter: usize,
    /// Give up if the profile has not returned to the symmetry line by this
    /// arclength.
    pub max_length: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            ode_tol: 1e-13,
            n_samples: 192,
            defect_tol: 1e-12,
            max_iter: 200,
            max_length: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub r0: f64,
    pub surface: Surface,
    pub residual_sup: f64,
    pub closure_defect: f64,
    /// Arclength of the upper half of the profile.
    pub half_length: f64,
    pub iterations: usize,
}

/// Arclength-parametrised profile of a surface of revolution with
/// `H = <x,n>/2`: state `(r, z, angle of the tangent)`.
fn profile_rhs(y: &State) -> State {
    let (r, z, phi) = (y[0], y[1], y[2]);
    let (s, c) = phi.sin_cos();
    [c, s, 0.5 * (r * s - z * c) - s / r]
}

/// Launch vertically from `(r0, 0)` and follow the profile until it returns
/// to `z = 0`. Returns the state there and the arclength travelled.
fn shoot_half(r0: f64, opts: &ShootOptions) -> Result<(State, f64)> {
    // Fixed Dormand-Prince steps small enough for the tolerance; the
    // crossing is then located by a secant on the length of the last step.
    let mut y: State = [r0, 0.0, FRAC_PI_2];
    let mut s = 0.0;
    let mut h: f64 = 1e-3;
    loop {
        if s > opts.max_length {
            return Err(Error::InvalidInput(format!("profile from r0 = {r0} does not return")));
        }
        let (next, err) = dp_step(&profile_rhs, &y, h);
        if !(err <= opts.ode_tol) || !next.iter().all(|v| v.is_finite()) {
            h *= if err > 0.0 && err.is_finite() { (0.9 * (opts.ode_tol / err).powf(0.2)).max(0.1) } else { 0.1 };
            if h < 1e-12 {
                return Err(Error::StiffOde { s });
            }
            continue;
        }
        if next[0] <= 0.0 {
            return Err(Error::StiffOde { s });
        }
        if y[1] > 0.0 && next[1] <= 0.0 {
            let (mut a, mut za) = (0.0, y[1]);
            let (mut b, mut zb) = (h, next[1]);
            let mut hit = next;
            let mut hh = h;
            for _ in 0..100 {
                hh = b - zb * (b - a) / (zb - za);
                hit = dp_step(&profile_rhs, &y, hh).0;
                if hit[1] == 0.0 || (b - a).abs() < 1e-16 {
                    break;
                }
                if hit[1] > 0.0 {
                    a = hh;
                    za = hit[1];
                } else {
                    b = hh;
                    zb = hit[1];
                }
            }
            return Ok((hit, s + hh));
        }
        y = next;
        s += h;
        let grow = if err > 0.0 { (0.9 * (opts.ode_tol / err).powf(0.2)).min(2.0) } else { 2.0 };
        h = (h * grow).min(0.05);
    }
}

/// Horizontal component of the tangent where the profile launched from
/// `r0` first returns to `z = 0`; zero when it returns orthogonally.
pub fn closure_defect(r0: f64, opts: &ShootOptions) -> Result<f64> {
    let (y, _) = shoot_half(r0, opts)?;
    Ok(y[2].cos())
}

/// `(r0, defect)` on a uniform grid over the bracket.
pub fn closure_defect_table(lo: f64, hi: f64, n: usize, opts: &ShootOptions) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let r0 = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (r0, closure_defect(r0, opts).unwrap_or(f64::NAN))
        })
        .collect()
}

/// Close the profile of the Angenent torus by shooting on the launch radius.
pub fn shoot_angenent_torus(bracket: (f64, f64), opts: &ShootOptions) -> Result<ShootingResult> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi < 2.0 * std::f64::consts::SQRT_2) {
        return Err(Error::InvalidInput(format!("bracket ({lo}, {hi}) must lie in (0, 2 sqrt 2)")));
    }
    if opts.n_samples % 2 != 0 {
        return Err(Error::InvalidInput("profile sample count must be even".into()));
    }
    let fail = Error::BracketFailure { lo, hi };
    let mut flo = closure_defect(lo, opts).map_err(|_| fail.clone())?;
    let mut fhi = closure_defect(hi, opts).map_err(|_| fail.clone())?;
    if flo * fhi > 0.0 {
        return Err(fail);
    }
    // Illinois variant of regula falsi
    let mut r0 = lo;
    let mut f0 = flo;
    let mut side = 0i32;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        r0 = (lo * fhi - hi * flo) / (fhi - flo);
        f0 = closure_defect(r0, opts)?;
        if f0.abs() < opts.defect_tol || (hi - lo) < 1e-15 {
            break;
        }
        if f0 * fhi < 0.0 {
            lo = hi;
            flo = fhi;
            hi = r0;
            fhi = f0;
            side = 0;
        } else {
            hi = r0;
            fhi = f0;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    let (_, half) = shoot_half(r0, opts)?;
    let n = opts.n_samples;
    let m = n / 2;
    let mut upper = vec![[r0, 0.0]; m + 1];
    let mut y: State = [r0, 0.0, FRAC_PI_2];
    let mut h = 1e-3;
    for j in 1..=m {
        let s0 = half * (j - 1) as f64 / m as f64;
        let s1 = half * j as f64 / m as f64;
        y = integrate(&profile_rhs, &y, s0, s1, opts.ode_tol, &mut h)?;
        upper[j] = [y[0], y[1]];
    }
    // the end point lies on the symmetry line by construction
    upper[m][1] = 0.0;
    let mut pts = upper.clone();
    for j in (1..m).rev() {
        pts.push([upper[j][0], -upper[j][1]]);
    }
    let surface = Surface::from_points(Kind::Revolution, Layout::Periodic, &pts, 0.0)?;
    let residual_sup = surface
        .shrinker_residual()
        .iter()
        .fold(0.0, |a: f64, r| a.max(r.abs()));
    Ok(ShootingResult {
        r0,
        surface,
        residual_sup,
        closure_defect: f0,
        half_length: half,
        iterations,
    })
}

/// Seeded perturbation along the leading unstable mode: a random sign times
/// that eigenfield plus `mix` times a random unit combination of the other
/// non-group modes, scaled to sup norm `amplitude`.
pub fn seeded_unstable_perturbation(
    spec: &SpectralDecomposition,
    amplitude: f64,
    mix: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let lead = (0..spec.eigenvalues.len())
        .find(|&i| spec.markers[i] == ModeMarker::Other && spec.eigenvalues[i] > 0.0)
        .ok_or_else(|| Error::InvalidInput("no unstable mode outside the group directions".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut u: Vec<f64> = spec.eigenfields[lead].iter().map(|v| sign * v).collect();
    let others: Vec<usize> = (0..spec.eigenvalues.len())
        .filter(|&i| i != lead && spec.markers[i] == ModeMarker::Other)
        .collect();
    let coeffs: Vec<f64> = others.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (i, c) in others.iter().zip(&coeffs) {
            for (uj, fj) in u.iter_mut().zip(&spec.eigenfields[*i]) {
                *uj += mix * c / norm * fj;
            }
        }
    }
    let sup = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(u.iter().map(|v| amplitude * v / sup).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_circle, build_sphere};
    use std::f64::consts::SQRT_2;

    #[test]
    fn newton_from_constant_offset() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let r = newton_find_shrinker(&c, &vec![0.1; 64], &NewtonOptions::default()).unwrap();
        assert!(r.u.iter().all(|v| v.abs() < 1e-10));
        assert!(*r.residuals.last().unwrap() < 1e-10);
        let zero = newton_find_shrinker(&c, &vec![0.0; 64], &NewtonOptions::default()).unwrap();
        assert_eq!(zero.iterations, 0);
    }

    #[test]
    fn circle_spectrum() {
        let c = build_circle(SQRT_2, 64).unwrap();
        let s = spectrum(&c, 9).unwrap();
        let expected = [1.0, 0.5, 0.5, -1.0, -1.0, -3.5, -3.5, -7.0, -7.0];
        for (l, e) in s.eigenvalues.iter().zip(expected) {
            assert!((l - e).abs() < 1e-9, "{l} {e}");
        }
        assert_eq!(s.markers[0], ModeMarker::Dilation);
        assert_eq!(s.markers[1], ModeMarker::Translation);
        assert_eq!(s.markers[2], ModeMarker::Translation);
        assert!(s.orthonormality_residual < 1e-10);
        assert!(s.eigen_residual < 1e-8);
        let rep = stability_report(&c, &s);
        assert_eq!(rep.verdict, StabilityVerdict::StableModuloGroup);
    }

    #[test]
    fn sphere_spectrum() {
        let sp = build_sphere(2.0, 48).unwrap();
        let s = spectrum(&sp, 5).unwrap();
        for (k, l) in s.eigenvalues.iter().enumerate() {
            let e = 1.0 - (k * (k + 1)) as f64 / 4.0;
            assert!((l - e).abs() < 1e-8, "{k} {l}");
        }
        assert_eq!(stability_report(&sp, &s).verdict, StabilityVerdict::StableModuloGroup);
    }

    #[test]
    fn bracket_without_sign_change_fails() {
        let e = shoot_angenent_torus((2.5, 2.7), &ShootOptions::default()).unwrap_err();
        assert!(matches!(e, Error::BracketFailure { .. }), "{e}");
    }

    #[test]
    fn torus_closes() {
        let r = shoot_angenent_torus((0.4, 0.5), &ShootOptions::default()).unwrap();
        assert!(r.residual_sup < 1e-5, "{}", r.residual_sup);
        assert!(r.surface.gaussian_area() > 16.0 * std::f64::consts::PI / 1f64.exp());
    }
}

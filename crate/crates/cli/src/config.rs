//! Experiment configuration. Every default lives in [`Numerics::default`]
//! and the `default_*` functions next to it; the README reproduces the table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use shrinkflow_core::flow::FlowOptions;
use shrinkflow_core::geometry::{build_circle, build_ellipse, build_round_torus, build_sphere, EntropySearchConfig};
use shrinkflow_core::group::{NoReturnConfig, OrbitOptions};
use shrinkflow_core::shrinker::{shoot_angenent_torus, ShootOptions};
use shrinkflow_core::Surface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Flow,
    Spectrum,
    Find,
    Shoot,
    Entropy,
    Loja,
    Noreturn,
    Lsreduce,
    Replay,
}

/// The base hypersurface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseSpec {
    Circle { radius: f64, n_samples: usize },
    Ellipse { a: f64, b: f64, n_samples: usize },
    Sphere { radius: f64, n_samples: usize },
    /// Round torus profile, a starting point for shrinker searches.
    RoundTorus { major: f64, minor: f64, n_samples: usize },
    /// Angenent torus by shooting inside the bracket of launch radii.
    AngenentTorus { bracket: [f64; 2], n_samples: usize },
}

impl BaseSpec {
    pub fn n_samples(&self) -> usize {
        match *self {
            BaseSpec::Circle { n_samples, .. }
            | BaseSpec::Ellipse { n_samples, .. }
            | BaseSpec::Sphere { n_samples, .. }
            | BaseSpec::RoundTorus { n_samples, .. }
            | BaseSpec::AngenentTorus { n_samples, .. } => n_samples,
        }
    }

    pub fn build(&self, numerics: &Numerics) -> shrinkflow_core::Result<Surface> {
        match *self {
            BaseSpec::Circle { radius, n_samples } => build_circle(radius, n_samples),
            BaseSpec::Ellipse { a, b, n_samples } => build_ellipse(a, b, n_samples),
            BaseSpec::Sphere { radius, n_samples } => build_sphere(radius, n_samples),
            BaseSpec::RoundTorus { major, minor, n_samples } => build_round_torus(major, minor, n_samples),
            BaseSpec::AngenentTorus { bracket, n_samples } => {
                let opts = ShootOptions {
                    n_samples,
                    ode_tol: numerics.ode_tol,
                    ..ShootOptions::default()
                };
                Ok(shoot_angenent_torus((bracket[0], bracket[1]), &opts)?.surface)
            }
        }
    }
}

/// Initial normal graph over the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationSpec {
    None,
    /// `amplitude * cos(k theta)` in the grid parameter.
    Cosine {
        k: u32,
        amplitude: f64,
        /// Shift by the dilation field so that the flow converges back to the base.
        #[serde(default)]
        remove_dilation: bool,
    },
    /// Eigenfield `index` of the second variation operator, scaled to sup norm `amplitude`.
    Mode { index: usize, amplitude: f64 },
    /// Random sign times the leading unstable eigenfield plus `mix` times a
    /// random combination of the other modes, drawn from the seed.
    Unstable { amplitude: f64, mix: f64 },
    /// Translation field along the axis (`<n, e_z>` or `<n, e_y>`), scaled to sup norm `amplitude`.
    Translation { amplitude: f64 },
}

/// Numeric settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Parabolic safety factor `dt = cfl * h^2`.
    pub cfl: f64,
    pub horizon: f64,
    pub converge_tol: f64,
    pub snapshot_stride: usize,
    pub newton_tol: f64,
    pub ode_tol: f64,
    pub spectrum_modes: usize,
    pub delta1: f64,
    pub delta2: f64,
    /// Lojasiewicz exponent.
    pub beta: f64,
    /// Weight exponent of the weighted integrals.
    pub gamma: f64,
    /// Exponent of the energy drop in the drift bound.
    pub drift_beta: f64,
    /// Dimension of the kernel used by the reduction.
    pub kernel_dim: usize,
    pub entropy_grid: usize,
    pub orbit_tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            cfl: 0.2,
            horizon: 30.0,
            converge_tol: 1e-7,
            snapshot_stride: 20,
            newton_tol: 1e-10,
            ode_tol: 1e-13,
            spectrum_modes: 12,
            delta1: 0.05,
            delta2: 0.1,
            beta: 0.5,
            gamma: 1.5,
            drift_beta: 0.25,
            kernel_dim: 2,
            entropy_grid: 11,
            orbit_tol: 1e-10,
        }
    }
}

impl Numerics {
    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            cfl: self.cfl,
            converge_tol: self.converge_tol,
            snapshot_stride: self.snapshot_stride,
            ..FlowOptions::default()
        }
    }

    pub fn orbit_options(&self) -> OrbitOptions {
        OrbitOptions {
            x_tol: self.orbit_tol,
            ..OrbitOptions::default()
        }
    }

    pub fn noreturn_config(&self) -> NoReturnConfig {
        NoReturnConfig {
            delta1: self.delta1,
            delta2: self.delta2,
            horizon: self.horizon,
            flow: self.flow_options(),
            orbit: self.orbit_options(),
        }
    }

    pub fn entropy_search(&self) -> EntropySearchConfig {
        EntropySearchConfig {
            grid_points: self.entropy_grid,
            ..EntropySearchConfig::default()
        }
    }
}

/// Inputs of a replay run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    /// Output directory of an earlier flow run.
    pub traj: PathBuf,
    pub t1: f64,
    pub t2: f64,
    pub b: f64,
    #[serde(default)]
    pub y0: [f64; 2],
    #[serde(default = "default_replay_times")]
    pub n_times: usize,
}

fn default_replay_times() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Required by every kind except replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseSpec>,
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplaySpec>,
    /// Output directory; the command line takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_perturbation() -> PerturbationSpec {
    PerturbationSpec::None
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let n = &self.numerics;
        let positive = [
            ("cfl", n.cfl),
            ("horizon", n.horizon),
            ("converge_tol", n.converge_tol),
            ("newton_tol", n.newton_tol),
            ("ode_tol", n.ode_tol),
            ("delta1", n.delta1),
            ("delta2", n.delta2),
            ("gamma", n.gamma),
            ("orbit_tol", n.orbit_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if n.delta1 >= n.delta2 {
            return bad("delta1 must be smaller than delta2");
        }
        if !(n.beta > 0.0 && n.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(n.drift_beta > 0.0 && n.drift_beta < 1.0) {
            return bad("drift_beta must lie in (0, 1)");
        }
        if n.snapshot_stride == 0 || n.spectrum_modes == 0 || n.entropy_grid < 2 {
            return bad("snapshot_stride and spectrum_modes must be positive, entropy_grid at least 2");
        }
        let positive_geometry = match self.base {
            None => self.kind == ExperimentKind::Replay,
            Some(BaseSpec::Circle { radius, .. } | BaseSpec::Sphere { radius, .. }) => radius > 0.0,
            Some(BaseSpec::Ellipse { a, b, .. }) => a > 0.0 && b > 0.0,
            Some(BaseSpec::RoundTorus { major, minor, .. }) => minor > 0.0 && major > minor,
            Some(BaseSpec::AngenentTorus { bracket, .. }) => bracket[0] > 0.0 && bracket[0] < bracket[1],
        };
        if !positive_geometry {
            return bad("missing base, or non-positive base dimensions (torus: major > minor, ordered bracket)");
        }
        let amplitude = match self.perturbation {
            PerturbationSpec::None => 0.0,
            PerturbationSpec::Cosine { amplitude, .. }
            | PerturbationSpec::Mode { amplitude, .. }
            | PerturbationSpec::Unstable { amplitude, .. }
            | PerturbationSpec::Translation { amplitude } => amplitude,
        };
        if !amplitude.is_finite() {
            return bad("perturbation amplitude must be finite");
        }
        match (&self.kind, &self.replay) {
            (ExperimentKind::Replay, None) => return bad("replay runs need a replay section"),
            (ExperimentKind::Replay, Some(r)) => {
                if !(r.t1 < r.t2 && r.b > 0.0) {
                    return bad("replay needs t1 < t2 and b > 0");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            kind: ExperimentKind::Flow,
            base: Some(BaseSpec::Circle {
                radius: std::f64::consts::SQRT_2,
                n_samples: 128,
            }),
            perturbation: PerturbationSpec::Cosine {
                k: 2,
                amplitude: 0.05,
                remove_dilation: true,
            },
            seed: 7,
            numerics: Numerics {
                converge_tol: 0.1 + 0.2,
                ..Numerics::default()
            },
            replay: None,
            out: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let text = c.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.numerics.converge_tol.to_bits(), c.numerics.converge_tol.to_bits());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let c = ExperimentConfig::from_json(r#"{"kind":"spectrum","base":{"shape":"sphere","radius":2,"n_samples":48}}"#)
            .unwrap();
        assert_eq!(c.numerics, Numerics::default());
        assert_eq!(c.perturbation, PerturbationSpec::None);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = sample();
        c.numerics.delta1 = 0.2;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.numerics.converge_tol = -1.0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.kind = ExperimentKind::Replay;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json("{not json").is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind":"flow","base":{"shape":"circle","radius":1,"n_samples":64},"bogus":1}"#).is_err());
    }
}

//! Numerical laboratory for rescaled mean curvature flow near closed
//! self-shrinkers.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod graph;
pub mod group;
pub mod jet;
pub mod loja;
pub mod ode;
pub mod optim;
pub mod reduction;
pub mod shrinker;
pub mod spectral;

pub use error::{Error, Result};
pub use geometry::{build_circle, build_ellipse, build_sphere, BaseShrinker, ImmersedState, Kind, Surface};
pub use spectral::{Layout, Parity, SpectralGrid};

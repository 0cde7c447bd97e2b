//! Perturbed Feller semigroups on a 1-D grid.
//!
//! A translation-invariant base semigroup `T` (heat, stable, Cauchy or a custom
//! Lévy exponent) is perturbed by a Lévy-type operator with measurable
//! coefficients; the perturbed semigroup is built from the Dyson–Phillips
//! series and checked against property tests and Monte Carlo simulation.

pub mod basesg;
pub mod dyson;
pub mod error;
pub mod gridfn;
pub mod levyop;
pub mod mcsim;
pub mod parallel;
pub mod props;
pub mod quad;

pub use basesg::{BaseSemigroup, LevyExponent};
pub use dyson::{DysonConfig, Engine, OperatorMatrix, Perturbation};
pub use error::{Error, Result};
pub use gridfn::{Extension, Grid, GridFunction, Kernel};
pub use levyop::{apply_perturbation, Atom, Cutoff, JumpDensity, LevyCharacteristics};
pub use mcsim::{MCResult, SdeSpec};
pub use props::{PropertyReport, Thresholds, Verdict};

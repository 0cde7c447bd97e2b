//! Scenario configuration (JSON, `"schema": 1`).

use std::path::Path;
use std::sync::Arc;

use feller_core::levyop::RealFn;
use feller_core::mcsim::{Driver, Secondary, SecondaryDriver};
use feller_core::props::{mollified_sign, sign};
use feller_core::{
    Atom, DysonConfig, Grid, GridFunction, JumpDensity, LevyCharacteristics, LevyExponent, Perturbation, SdeSpec,
    Thresholds,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema: u32,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let c: ConfigFile = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if c.schema != SCHEMA {
            return Err(CliError::Config(format!("unsupported schema {} (expected {SCHEMA})", c.schema)));
        }
        for s in &c.scenarios {
            s.validate()?;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseSpec {
    Heat,
    Cauchy,
    Stable { alpha: f64 },
}

/// `{"kind": "heat" | "cauchy" | "stable", "alpha"?, "killing"?}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBase", into = "RawBase")]
pub struct BaseConfig {
    pub law: BaseSpec,
    pub killing: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BaseKind {
    Heat,
    Cauchy,
    Stable,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    kind: BaseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default)]
    killing: f64,
}

impl TryFrom<RawBase> for BaseConfig {
    type Error = String;

    fn try_from(r: RawBase) -> Result<Self, String> {
        let law = match (r.kind, r.alpha) {
            (BaseKind::Heat, None) => BaseSpec::Heat,
            (BaseKind::Cauchy, None) => BaseSpec::Cauchy,
            (BaseKind::Stable, Some(alpha)) => BaseSpec::Stable { alpha },
            (BaseKind::Stable, None) => return Err("stable base needs alpha".into()),
            _ => return Err("alpha is only allowed for kind = stable".into()),
        };
        Ok(Self { law, killing: r.killing })
    }
}

impl From<BaseConfig> for RawBase {
    fn from(b: BaseConfig) -> Self {
        let (kind, alpha) = match b.law {
            BaseSpec::Heat => (BaseKind::Heat, None),
            BaseSpec::Cauchy => (BaseKind::Cauchy, None),
            BaseSpec::Stable { alpha } => (BaseKind::Stable, Some(alpha)),
        };
        RawBase {
            kind,
            alpha,
            killing: b.killing,
        }
    }
}

impl BaseConfig {
    pub fn exponent(&self) -> Result<LevyExponent, CliError> {
        let e = match self.law {
            BaseSpec::Heat => LevyExponent::heat(),
            BaseSpec::Cauchy => LevyExponent::cauchy(),
            BaseSpec::Stable { alpha } => LevyExponent::stable(alpha)?,
        };
        Ok(e.with_killing(self.killing)?)
    }

    /// Index of the driving Lévy process.
    pub fn alpha(&self) -> f64 {
        match self.law {
            BaseSpec::Heat => 2.0,
            BaseSpec::Cauchy => 1.0,
            BaseSpec::Stable { alpha } => alpha,
        }
    }
}

/// A coefficient `x ↦ value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `scale · sign(x)`.
    Sign { scale: f64 },
    /// `scale · (sign * Gaussian mollifier of width 1/n)`.
    MollifiedSign { scale: f64, n: f64 },
    /// `lo` for x < 0, `hi` for x ≥ 0.
    Step { lo: f64, hi: f64 },
}

impl Profile {
    pub fn build(&self) -> RealFn {
        match *self {
            Profile::Constant { value } => Arc::new(move |_| value),
            Profile::Sign { scale } => Arc::new(move |x| scale * sign(x)),
            Profile::MollifiedSign { scale, n } => {
                let m = mollified_sign(1.0 / n);
                Arc::new(move |x| scale * m(x))
            }
            Profile::Step { lo, hi } => Arc::new(move |x| if x < 0.0 { lo } else { hi }),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match *self {
            Profile::Constant { value } => value.abs(),
            Profile::Sign { scale } | Profile::MollifiedSign { scale, .. } => scale.abs(),
            Profile::Step { lo, hi } => lo.abs().max(hi.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// `c |y|^{-1-α}` on `|y| < radius`.
    TruncatedStable { alpha: f64, c: f64, radius: f64 },
    /// Jumps of `κ(x)·L` for a symmetric α-stable `L` with exponent `|ξ|^α`.
    ScaledStable { alpha: f64, kappa: Profile },
}

impl DensitySpec {
    fn build(&self) -> JumpDensity {
        match *self {
            DensitySpec::TruncatedStable { alpha, c, radius } => JumpDensity::truncated_stable(alpha, c, radius),
            DensitySpec::ScaledStable { alpha, kappa } => {
                JumpDensity::scaled_stable(alpha, JumpDensity::stable_constant(alpha), kappa.build())
            }
        }
    }
}

/// `w · δ_{-x}`, optionally with the jump clamped to `[-clamp, clamp]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToOriginAtom {
    pub weight: f64,
    #[serde(default)]
    pub clamp: Option<f64>,
}

impl ToOriginAtom {
    fn build(&self) -> Atom {
        let w = self.weight;
        match self.clamp {
            Some(c) => Atom::new(move |x: f64| (-x).clamp(-c, c), move |_| w),
            None => Atom::new(|x: f64| -x, move |_| w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    Zero,
    /// `B̂f = weight · f(point) · 𝟙`.
    RankOne { point: f64, weight: f64 },
    Levy {
        #[serde(default)]
        drift: Option<Profile>,
        #[serde(default)]
        density: Option<DensitySpec>,
        #[serde(default)]
        atom: Option<ToOriginAtom>,
        #[serde(default)]
        beta: Option<f64>,
    },
}

impl PerturbationSpec {
    pub fn levy(&self) -> Result<Option<LevyCharacteristics>, CliError> {
        match *self {
            PerturbationSpec::Levy {
                drift,
                density,
                atom,
                beta,
            } => {
                let mut b = LevyCharacteristics::zero();
                if let Some(d) = drift {
                    let f = d.build();
                    b = b.with_drift(move |x| f(x));
                }
                if let Some(d) = density {
                    b = b.with_density(d.build());
                }
                if let Some(a) = atom {
                    b = b.with_atom(a.build());
                }
                if let Some(beta) = beta {
                    b = b.with_beta(beta)?;
                }
                Ok(Some(b))
            }
            _ => Ok(None),
        }
    }

    pub fn build(&self) -> Result<Perturbation, CliError> {
        Ok(match *self {
            PerturbationSpec::Zero => Perturbation::Zero,
            PerturbationSpec::RankOne { point, weight } => Perturbation::RankOne { point, weight },
            PerturbationSpec::Levy { .. } => Perturbation::Levy(self.levy()?.expect("levy")),
        })
    }

    /// The same family with the drift replaced.
    pub fn with_drift(&self, p: Profile) -> Self {
        match *self {
            PerturbationSpec::Levy {
                density, atom, beta, ..
            } => PerturbationSpec::Levy {
                drift: Some(p),
                density,
                atom,
                beta,
            },
            _ => PerturbationSpec::Levy {
                drift: Some(p),
                density: None,
                atom: None,
                beta: None,
            },
        }
    }

    /// The same family with the atom clamped.
    pub fn clamped(&self, c: f64) -> Option<Self> {
        match *self {
            PerturbationSpec::Levy {
                drift,
                density,
                atom: Some(a),
                beta,
            } => Some(PerturbationSpec::Levy {
                drift,
                density,
                atom: Some(ToOriginAtom { clamp: Some(c), ..a }),
                beta,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    One,
    Indicator { a: f64, b: f64 },
    Bump { center: f64, radius: f64 },
    Step { a: f64 },
}

impl FunctionSpec {
    pub fn build(&self, grid: Grid) -> GridFunction {
        match *self {
            FunctionSpec::One => GridFunction::one(grid),
            FunctionSpec::Indicator { a, b } => GridFunction::indicator(grid, a, b),
            FunctionSpec::Bump { center, radius } => GridFunction::bump(grid, center, radius),
            FunctionSpec::Step { a } => GridFunction::step(grid, a),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            FunctionSpec::One => "one".into(),
            FunctionSpec::Indicator { a, b } => format!("indicator({a},{b})"),
            FunctionSpec::Bump { center, radius } => format!("bump({center},{radius})"),
            FunctionSpec::Step { a } => format!("step({a})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    /// One-step matrix: min entry and row sums.
    Submarkov,
    /// One-step matrix: |row sum − 1|.
    Conservative,
    /// Modulus table of `S(t)𝟙_[0,∞)`.
    StrongFeller,
    /// Tail sup of `S(t)f` at the last time.
    Cinfty,
    /// Tail sup against the clamped-atom variant.
    CinftyDichotomy,
    /// `S(t)f = T(t)f + (∫_0^t e^{t−s}(T(s)f)(point) ds) weight 𝟙`.
    RankOneOracle,
    /// `sup|S(t)f| ≤ (1 + 1e-6) sup|f|` and `S(t)f ≥ 0` for `f ≥ 0`.
    Contractivity,
    /// Neumann series against the Laplace transform of the propagated semigroup.
    ResolventTwoRoute,
    /// ‖B̂R(λ)‖ estimates strictly decreasing over λ ∈ {1, 10, 100}.
    BrNormDecreasing,
    /// Monte Carlo against the engine (or against itself at dt/2).
    Mc,
    /// Mollified-drift sequence converging to the scenario drift.
    Convergence,
    /// Fitted Hölder-norm exponents of the base semigroups.
    Regularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = Grid::standard();
        Self {
            x_min: g.x_min(),
            x_max: g.x_max(),
            n: g.n(),
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid, CliError> {
        Ok(Grid::new(self.x_min, self.x_max, self.n)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub dyson: DysonConfig,
    pub thresholds: Thresholds,
    /// Two-route resolvent agreement.
    pub resolvent: f64,
    /// Rank-one closed-form oracle.
    pub oracle: f64,
    /// |z| bound for MC comparisons.
    pub z: f64,
    /// Neumann series stopping tolerance.
    pub neumann: f64,
    /// Final convergence error.
    pub convergence: f64,
    /// Slope tolerance of the regularity fit.
    pub slope: f64,
    /// Minimum tail ratio for the C∞ dichotomy.
    pub dichotomy: f64,
    /// Relative slack of `sup|S(t)f| ≤ sup|f|`.
    pub contractivity: f64,
    /// Relative error of the Cauchy gradient integral against 2/π.
    pub gradient_integral: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            dyson: DysonConfig::default(),
            thresholds: Thresholds::default(),
            resolvent: 1e-3,
            oracle: 1e-3,
            z: 3.0,
            neumann: 1e-10,
            convergence: 2e-2,
            slope: 0.05,
            dichotomy: 100.0,
            contractivity: 1e-6,
            gradient_integral: 0.02,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), CliError> {
        self.dyson.validate()?;
        self.thresholds.validate()?;
        let all = [
            self.resolvent,
            self.oracle,
            self.z,
            self.neumann,
            self.convergence,
            self.slope,
            self.dichotomy,
            self.contractivity,
            self.gradient_integral,
        ];
        if all.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum McDriver {
    /// Engine comparison with the driver matching the base semigroup.
    Engine,
    /// MC-only dt/2 self-consistency with a Hölder diffusion coefficient σ(x) ∈ [lo, hi].
    HolderSelf { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub x0: f64,
    pub t: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// Index into `functions`.
    #[serde(default)]
    pub function: usize,
    #[serde(default = "default_driver")]
    pub mode: McDriver,
}

fn default_driver() -> McDriver {
    McDriver::Engine
}

impl McConfig {
    /// SDE whose generator is the base plus the scenario perturbation.
    pub fn sde(&self, base: &BaseConfig, pert: &PerturbationSpec, seed: u64) -> Result<SdeSpec, CliError> {
        if base.killing != 0.0 {
            return Err(CliError::Config("MC does not simulate killed bases".into()));
        }
        let primary = match base.law {
            BaseSpec::Heat => Driver::Brownian,
            BaseSpec::Cauchy => Driver::Stable(1.0),
            BaseSpec::Stable { alpha } => Driver::Stable(alpha),
        };
        let (drift, secondary) = match *pert {
            PerturbationSpec::Zero => (Profile::Constant { value: 0.0 }.build(), None),
            PerturbationSpec::Levy {
                drift,
                density,
                atom: None,
                ..
            } => {
                let d = drift.unwrap_or(Profile::Constant { value: 0.0 }).build();
                let s = match density {
                    None => None,
                    Some(DensitySpec::ScaledStable { alpha, kappa }) => Some(Secondary {
                        kappa: kappa.build(),
                        driver: SecondaryDriver::Stable(alpha),
                    }),
                    Some(_) => {
                        return Err(CliError::Config(
                            "MC supports scaled-stable jump densities only".into(),
                        ))
                    }
                };
                (d, s)
            }
            _ => return Err(CliError::Config("perturbation has no SDE form for MC".into())),
        };
        let diffusion: RealFn = match self.mode {
            McDriver::Engine => Arc::new(|_| 1.0),
            McDriver::HolderSelf { lo, hi } => {
                let (m, a) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                Arc::new(move |x: f64| m + a * sign(x) * x.abs().min(1.0).sqrt())
            }
        };
        Ok(SdeSpec {
            drift,
            diffusion,
            primary,
            secondary,
            x0: self.x0,
            t_end: self.t,
            dt: self.dt,
            n_paths: self.n_paths,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Mollification indices n (width 1/n).
    pub ns: Vec<f64>,
    pub t: f64,
    /// Compact set K.
    #[serde(default = "default_k")]
    pub k: (f64, f64),
}

fn default_k() -> (f64, f64) {
    (-5.0, 5.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    pub bases: Vec<BaseConfig>,
    pub times: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub base: BaseConfig,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub functions: Vec<FunctionSpec>,
    #[serde(default)]
    pub checks: Vec<CheckName>,
    #[serde(default)]
    pub expected_fail: Vec<CheckName>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub regularity: Option<RegularityConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Steps of the one-step matrix used by the strong Feller check.
    #[serde(default = "default_sf_steps")]
    pub strong_feller_steps: usize,
    /// Clamp radius of the comparison run in the C∞ dichotomy.
    #[serde(default = "default_clamp")]
    pub clamp: f64,
}

fn default_sf_steps() -> usize {
    5
}

fn default_clamp() -> f64 {
    2.0
}

impl Scenario {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(format!("scenario {}: {m}", self.name)));
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        self.tolerances.validate()?;
        self.grid.build()?;
        self.base.exponent()?;
        if self.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("times must be positive".into());
        }
        for c in &self.expected_fail {
            if !self.checks.contains(c) {
                return bad(format!("expected_fail names {c:?}, which is not among the checks"));
            }
        }
        let needs_fn = [CheckName::Cinfty, CheckName::CinftyDichotomy, CheckName::RankOneOracle, CheckName::Contractivity];
        if self.checks.iter().any(|c| needs_fn.contains(c)) && (self.functions.is_empty() || self.times.is_empty()) {
            return bad("checks on S(t)f need at least one function and one time".into());
        }
        if self.checks.contains(&CheckName::Mc) {
            match &self.mc {
                None => return bad("check mc needs an mc block".into()),
                Some(m) if m.function >= self.functions.len() => {
                    return bad(format!("mc.function = {} out of range", m.function))
                }
                _ => {}
            }
        }
        if self.checks.contains(&CheckName::Convergence) && self.convergence.is_none() {
            return bad("check convergence needs a convergence block".into());
        }
        if self.checks.contains(&CheckName::Regularity) && self.regularity.is_none() {
            return bad("check regularity needs a regularity block".into());
        }
        if self.checks.contains(&CheckName::RankOneOracle) && !matches!(self.perturbation, PerturbationSpec::RankOne { .. }) {
            return bad("rank_one_oracle needs a rank_one perturbation".into());
        }
        if self.checks.contains(&CheckName::RankOneOracle) && self.base.killing != 0.0 {
            return bad("rank_one_oracle needs a conservative base".into());
        }
        if self.checks.contains(&CheckName::Convergence)
            && !matches!(self.perturbation, PerturbationSpec::Levy { drift: Some(Profile::Sign { .. }), .. })
        {
            return bad("convergence needs a sign drift to mollify".into());
        }
        if self.checks.contains(&CheckName::CinftyDichotomy) && self.perturbation.clamped(self.clamp).is_none() {
            return bad("cinfty_dichotomy needs an atom".into());
        }
        Ok(())
    }
}

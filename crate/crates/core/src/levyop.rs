//! Lévy-type perturbations with measurable coefficients:
//!
//! ```text
//! B̂f(x) = b(x) f'(x) [rho > 1] + ∫ (f(x+y) - f(x) - y f'(x) χ(y) [rho > 1]) μ(x, dy)
//! ```
//!
//! with `μ(x, dy) = m(x, y) dy + Σ w_k(x) δ_{l_k(x)}`. On a grid the operator is
//! assembled row by row as a sparse matrix plus two extension weights: jumps
//! shorter than the grid spacing are replaced by their second-order Taylor
//! term, longer ones are projected onto the hat functions of the grid, and
//! mass landing outside the window is credited to the extension value.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basesg::LevyExponent;
use crate::error::{Error, Result};
use crate::gridfn::{Extension, Grid, GridFunction};
use crate::parallel;
use crate::quad::{integrate_to_infinity, integrate_to_zero, rule8};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Compensator switch χ: 1 on |y| ≤ 1, 0 on |y| ≥ 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// C^∞ transition on 1 < |y| < 2.
    #[default]
    Smooth,
    /// 𝟙_{(0,1)}(|y|).
    Sharp,
}

impl Cutoff {
    pub fn chi(&self, y: f64) -> f64 {
        let a = y.abs();
        match self {
            Cutoff::Sharp => {
                if a < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Cutoff::Smooth => {
                if a <= 1.0 {
                    1.0
                } else if a >= 2.0 {
                    0.0
                } else {
                    let u = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
                    let p = u(2.0 - a);
                    p / (p + u(a - 1.0))
                }
            }
        }
    }
}

/// Absolutely continuous part `m(x, y)` of the jump kernel.
#[derive(Clone)]
pub struct JumpDensity {
    f: KernelFn,
    /// m(x, y) = 0 for |y| > radius (may be infinite).
    radius: f64,
    /// |y|-positions where m may be discontinuous or kinked.
    breakpoints: Vec<f64>,
    /// Restriction to band.0 < |y| <= band.1.
    band: (f64, f64),
}

impl fmt::Debug for JumpDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpDensity")
            .field("radius", &self.radius)
            .field("breakpoints", &self.breakpoints)
            .field("band", &self.band)
            .finish()
    }
}

impl JumpDensity {
    pub fn new<F>(f: F, radius: f64) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            radius,
            breakpoints: Vec::new(),
            band: (0.0, f64::INFINITY),
        }
    }

    pub fn with_breakpoints(mut self, points: &[f64]) -> Self {
        self.breakpoints.extend(points.iter().map(|p| p.abs()));
        self
    }

    /// `c |y|^{-1-α}` on `0 < |y| < radius`.
    pub fn truncated_stable(alpha: f64, c: f64, radius: f64) -> Self {
        Self::new(move |_, y| c * y.abs().powf(-1.0 - alpha), radius).with_breakpoints(&[radius])
    }

    /// `c κ(x)^α |y|^{-1-α}`: the image of `c|u|^{-1-α}du` under `y = κ(x) u`.
    pub fn scaled_stable(alpha: f64, c: f64, kappa: RealFn) -> Self {
        Self::new(
            move |x, y| c * kappa(x).abs().powf(alpha) * y.abs().powf(-1.0 - alpha),
            f64::INFINITY,
        )
    }

    /// Lévy density of the stable law with exponent `|ξ|^α`.
    pub fn stable_constant(alpha: f64) -> f64 {
        libm::tgamma(1.0 + alpha) * (PI * alpha / 2.0).sin() / PI
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let a = y.abs();
        if a <= self.band.0 || a > self.band.1 || a > self.radius || a == 0.0 {
            0.0
        } else {
            (self.f)(x, y)
        }
    }

    fn restricted(&self, lo: f64, hi: f64) -> Self {
        let mut d = self.clone();
        d.band = (self.band.0.max(lo), self.band.1.min(hi));
        d
    }

    fn upper(&self) -> f64 {
        self.radius.min(self.band.1)
    }

    fn cuts(&self) -> Vec<f64> {
        let mut v = vec![1.0, 2.0, self.band.0, self.band.1, self.radius];
        v.extend(&self.breakpoints);
        v.retain(|p| p.is_finite() && *p > 0.0);
        v
    }
}

/// A jump of size `location(x)` with intensity `weight(x)`.
#[derive(Clone)]
pub struct Atom {
    pub location: RealFn,
    pub weight: RealFn,
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Atom")
    }
}

impl Atom {
    pub fn new<L, W>(location: L, weight: W) -> Self
    where
        L: Fn(f64) -> f64 + Send + Sync + 'static,
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            location: Arc::new(location),
            weight: Arc::new(weight),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    pub b_sup: f64,
    pub mu_beta: f64,
}

/// Symbol value `p(x, ξ)` (or `q = ψ + p` with a base).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolEval {
    pub x: f64,
    pub xi: f64,
    pub value: Complex64,
}

type PrepKey = (u64, u64, usize, bool);

/// Drift, jump kernel, cutoff and order of a Lévy-type perturbation.
#[derive(Clone)]
pub struct LevyCharacteristics {
    drift: Option<RealFn>,
    density: Option<JumpDensity>,
    atoms: Vec<Atom>,
    cutoff: Cutoff,
    beta: f64,
    bounds: Option<DeclaredBounds>,
    prepared: Arc<Mutex<HashMap<PrepKey, Arc<Prepared>>>>,
}

impl fmt::Debug for LevyCharacteristics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyCharacteristics")
            .field("drift", &self.drift.is_some())
            .field("density", &self.density)
            .field("atoms", &self.atoms.len())
            .field("cutoff", &self.cutoff)
            .field("beta", &self.beta)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl Default for LevyCharacteristics {
    fn default() -> Self {
        Self::zero()
    }
}

impl LevyCharacteristics {
    pub fn zero() -> Self {
        Self {
            drift: None,
            density: None,
            atoms: Vec::new(),
            cutoff: Cutoff::Smooth,
            beta: 0.0,
            bounds: None,
            prepared: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    fn fresh(mut self) -> Self {
        self.prepared = Arc::new(Mutex::new(HashMap::new()));
        self
    }

    pub fn with_drift<F>(mut self, b: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.drift = Some(Arc::new(b));
        self.fresh()
    }

    pub fn with_density(mut self, d: JumpDensity) -> Self {
        self.density = Some(d);
        self.fresh()
    }

    pub fn with_atom(mut self, atom: Atom) -> Self {
        self.atoms.push(atom);
        self.fresh()
    }

    pub fn with_cutoff(mut self, c: Cutoff) -> Self {
        self.cutoff = c;
        self.fresh()
    }

    /// Order β of the jump part (Σ ∫ min(|y|^β, 1) μ(x, dy) < ∞).
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(0.0..2.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0,2), got {beta}")));
        }
        self.beta = beta;
        Ok(self.fresh())
    }

    pub fn with_bounds(mut self, b_sup: f64, mu_beta: f64) -> Self {
        self.bounds = Some(DeclaredBounds { b_sup, mu_beta });
        self.fresh()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }
    pub fn declared_bounds(&self) -> Option<DeclaredBounds> {
        self.bounds
    }
    pub fn density(&self) -> Option<&JumpDensity> {
        self.density.as_ref()
    }
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
    pub fn has_jumps(&self) -> bool {
        self.density.is_some() || !self.atoms.is_empty()
    }
    pub fn is_zero(&self) -> bool {
        self.drift.is_none() && !self.has_jumps()
    }

    #[inline]
    pub fn drift_at(&self, x: f64) -> f64 {
        self.drift.as_ref().map_or(0.0, |b| b(x))
    }

    /// ∫_{lo < |y| <= hi} g(y) m(x, y) dy.
    pub fn integrate_density<G: Fn(f64) -> f64>(&self, x: f64, lo: f64, hi: f64, max_width: f64, g: G) -> f64 {
        let Some(d) = &self.density else { return 0.0 };
        let mut total = 0.0;
        for sigma in [1.0, -1.0] {
            total += integrate_side(d, x, sigma, lo, hi, max_width, |u| g(sigma * u));
        }
        total
    }

    /// ∫ g dμ(x, ·) including atoms.
    pub fn integrate_measure<G: Fn(f64) -> f64>(&self, x: f64, g: G) -> f64 {
        let mut total = self.integrate_density(x, 0.0, f64::INFINITY, 4.0, &g);
        for a in &self.atoms {
            let w = (a.weight)(x);
            let y = (a.location)(x);
            if w != 0.0 && y != 0.0 {
                total += w * g(y);
            }
        }
        total
    }

    /// μ(x, {|y| > r}).
    pub fn tail_mass(&self, x: f64, r: f64) -> f64 {
        let mut total = self.integrate_density(x, r, f64::INFINITY, f64::INFINITY, |_| 1.0);
        for a in &self.atoms {
            if (a.location)(x).abs() > r {
                total += (a.weight)(x);
            }
        }
        total
    }

    /// b(x) - ∫ y χ(y) μ(x, dy).
    pub fn compensated_drift_at(&self, x: f64) -> f64 {
        let chi = self.cutoff;
        let comp = self.integrate_measure(x, |y| y * chi.chi(y));
        self.drift_at(x) - comp
    }

    /// The compensated drift on the grid nodes.
    pub fn compensated_drift(&self, grid: &Grid) -> GridFunction {
        let values = parallel::map_indexed(grid.n(), |i| self.compensated_drift_at(grid.node(i)));
        GridFunction::from_parts(*grid, values, Extension::Zero)
    }

    /// sup over nodes of ∫ min(|y|^β, 1) μ(x, dy).
    pub fn beta_moment(&self, grid: &Grid, beta_query: f64) -> f64 {
        self.g_norm(grid, |y| y.abs().powf(beta_query).min(1.0))
    }

    /// sup over nodes of ∫ g dμ(x, ·).
    pub fn g_norm<G: Fn(f64) -> f64 + Sync>(&self, grid: &Grid, g: G) -> f64 {
        if !self.has_jumps() {
            return 0.0;
        }
        parallel::map_indexed(grid.n(), |i| self.integrate_measure(grid.node(i), &g))
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// sup over nodes of μ(x, {|y| > R}) for each R.
    pub fn tightness_profile(&self, grid: &Grid, radii: &[f64]) -> Vec<f64> {
        self.tightness_on(grid, 0..grid.n(), radii)
    }

    fn tightness_on(&self, grid: &Grid, nodes: std::ops::Range<usize>, radii: &[f64]) -> Vec<f64> {
        let idx: Vec<usize> = nodes.collect();
        radii
            .iter()
            .map(|&r| {
                parallel::map_slice(&idx, |&i| self.tail_mass(grid.node(i), r))
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Small jumps (|y| <= 1) with the full drift, and large jumps with no drift.
    pub fn split_jumps(&self) -> (LevyCharacteristics, LevyCharacteristics) {
        let mut small = self.clone().fresh();
        let mut large = self.clone().fresh();
        large.drift = None;
        small.density = self.density.as_ref().map(|d| d.restricted(0.0, 1.0));
        large.density = self.density.as_ref().map(|d| d.restricted(1.0, f64::INFINITY));
        let split = |keep_small: bool| -> Vec<Atom> {
            self.atoms
                .iter()
                .map(|a| {
                    let loc = a.location.clone();
                    let w = a.weight.clone();
                    Atom {
                        location: loc.clone(),
                        weight: Arc::new(move |x| {
                            if (loc(x).abs() <= 1.0) == keep_small {
                                w(x)
                            } else {
                                0.0
                            }
                        }),
                    }
                })
                .collect()
        };
        small.atoms = split(true);
        large.atoms = split(false);
        (small, large)
    }

    /// `p(x, ξ) = -i b(x) ξ + ∫ (1 - e^{iyξ} + i y ξ χ(y)) μ(x, dy)`, plus `ψ(ξ)` when a base is given.
    pub fn symbol(&self, base: Option<&LevyExponent>, x: f64, xi: f64) -> SymbolEval {
        let mut v = Complex64::new(0.0, -self.drift_at(x) * xi);
        if xi != 0.0 {
            let chi = self.cutoff;
            let width = (0.5f64).min(1.0 / xi.abs());
            let re = self.integrate_density(x, 0.0, f64::INFINITY, width, |y| {
                let s = 0.5 * y * xi;
                2.0 * s.sin() * s.sin()
            });
            let im = self.integrate_density(x, 0.0, f64::INFINITY, width, |y| {
                -(y * xi).sin() + y * xi * chi.chi(y)
            });
            v += Complex64::new(re, im);
            for a in &self.atoms {
                let w = (a.weight)(x);
                let y = (a.location)(x);
                if w != 0.0 {
                    v += w * Complex64::new(1.0 - (y * xi).cos(), -(y * xi).sin() + y * xi * chi.chi(y));
                }
            }
        }
        if let Some(b) = base {
            v += b.psi(xi);
        }
        SymbolEval { x, xi, value: v }
    }

    /// Measured sup of |b| and the β-moment on the grid.
    pub fn measured_bounds(&self, grid: &Grid) -> DeclaredBounds {
        let b_sup = match &self.drift {
            Some(b) => grid.nodes().iter().map(|x| b(*x).abs()).fold(0.0, f64::max),
            None => 0.0,
        };
        // |∫| so a (deliberately invalid) negative kernel still gets a usable bound
        let beta = self.beta;
        let mu_beta = if self.has_jumps() {
            parallel::map_indexed(grid.n(), |i| {
                self.integrate_measure(grid.node(i), |y| y.abs().powf(beta).min(1.0)).abs()
            })
            .into_iter()
            .fold(0.0, f64::max)
        } else {
            0.0
        };
        DeclaredBounds { b_sup, mu_beta }
    }

    /// Declared bounds after spot-checking them on the grid (measured ones if none declared).
    pub fn checked_bounds(&self, grid: &Grid) -> Result<DeclaredBounds> {
        let m = self.measured_bounds(grid);
        match self.bounds {
            None => Ok(m),
            Some(d) => {
                if m.b_sup > d.b_sup * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::BoundViolated(format!(
                        "sup|b| = {} exceeds declared {}",
                        m.b_sup, d.b_sup
                    )));
                }
                if m.mu_beta > d.mu_beta * (1.0 + 1e-6) + 1e-12 {
                    return Err(Error::BoundViolated(format!(
                        "beta-moment {} exceeds declared {}",
                        m.mu_beta, d.mu_beta
                    )));
                }
                Ok(d)
            }
        }
    }

    /// Checks the preconditions of [`apply_perturbation`] at order `rho`.
    pub fn check_order(&self, grid: &Grid, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho < 2.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0,2), got {rho}")));
        }
        if rho <= self.beta {
            return Err(Error::OrderTooLow { rho, beta: self.beta });
        }
        if rho <= 1.0 {
            let cd = self.compensated_drift(grid);
            let max_abs = cd.sup_norm();
            let scale = 1.0 + self.bounds.map_or(0.0, |b| b.b_sup);
            if max_abs > 1e-8 * scale {
                return Err(Error::CompensatedDriftNonzero { max_abs });
            }
        }
        Ok(())
    }

    /// The assembled operator for this grid and order (memoised).
    pub fn prepare(&self, grid: &Grid, rho: f64) -> Result<Arc<Prepared>> {
        if grid.h() > 1.0 {
            return Err(Error::InvalidGrid("grid spacing must not exceed 1".into()));
        }
        let key = (grid.x_min().to_bits(), grid.x_max().to_bits(), grid.n(), rho > 1.0);
        if let Some(p) = self.prepared.lock().expect("prepared cache").get(&key) {
            return Ok(p.clone());
        }
        let rows = parallel::map_indexed(grid.n(), |i| self.row(grid, rho, i).compress());
        let p = Arc::new(Prepared {
            grid: *grid,
            rows,
            output: None,
        });
        let mut cache = self.prepared.lock().expect("prepared cache");
        Ok(cache.entry(key).or_insert(p).clone())
    }

    /// B̂f at the single node `i` without assembling the full operator.
    pub fn apply_at(&self, f: &GridFunction, rho: f64, i: usize) -> Result<f64> {
        self.check_order(f.grid(), rho)?;
        Ok(self.row(f.grid(), rho, i).compress().dot(f))
    }

    fn row(&self, grid: &Grid, rho: f64, i: usize) -> DenseRow {
        let n = grid.n();
        let h = grid.h();
        let x = grid.node(i);
        let mut row = DenseRow::new(n);
        let compensate = rho > 1.0;
        let chi = self.cutoff;
        let mut grad = 0.0;
        let mut curv = 0.0;
        let mut lost = 0.0;
        if let Some(d) = &self.density {
            let r = h;
            for sigma in [1.0f64, -1.0] {
                // inner: f(x+y) - f(x) [- y f'] ≈ (y f' [if uncompensated]) + ½ y² f''
                curv += 0.5 * integrate_side(d, x, sigma, 0.0, r, 1.0, |u| u * u);
                if !compensate {
                    grad += integrate_side(d, x, sigma, 0.0, r, 1.0, |u| sigma * u);
                } else {
                    grad -= integrate_side(d, x, sigma, r, 2.0, 0.5, |u| sigma * u * chi.chi(sigma * u));
                }
                lost += project_side(d, grid, i, sigma, &mut row);
            }
        }
        for a in &self.atoms {
            let w = (a.weight)(x);
            let loc = (a.location)(x);
            // a jump of size zero does nothing
            if w == 0.0 || loc == 0.0 {
                continue;
            }
            if compensate {
                grad -= w * loc * chi.chi(loc);
            }
            let q = i as f64 + loc / h;
            let j = q.floor();
            let th = q - j;
            row.add(j as isize, w * (1.0 - th));
            row.add(j as isize + 1, w * th);
            lost += w;
        }
        if compensate {
            grad += self.drift_at(x);
        }
        row.add(i as isize, -lost);
        // gradient stencil: central, one-sided second order at the ends
        if grad != 0.0 {
            let c = grad / (2.0 * h);
            if i == 0 {
                row.add(0, -3.0 * c);
                row.add(1, 4.0 * c);
                row.add(2, -c);
            } else if i == n - 1 {
                row.add(i as isize, 3.0 * c);
                row.add(i as isize - 1, -4.0 * c);
                row.add(i as isize - 2, c);
            } else {
                row.add(i as isize + 1, c);
                row.add(i as isize - 1, -c);
            }
        }
        if curv != 0.0 {
            let c = curv / (h * h);
            row.add(i as isize + 1, c);
            row.add(i as isize - 1, c);
            row.add(i as isize, -2.0 * c);
        }
        row
    }
}

/// Hat-project the density on one side (|y| > h) into `row`; returns the mass distributed.
fn project_side(d: &JumpDensity, grid: &Grid, i: usize, sigma: f64, row: &mut DenseRow) -> f64 {
    let n = grid.n() as isize;
    let h = grid.h();
    let x = grid.node(i);
    let upper = d.upper();
    let cuts = d.cuts();
    let rule = rule8();
    let mut total = 0.0;
    // cells u ∈ [m h, (m+1) h] feed nodes i + σm and i + σ(m+1)
    let mut m = 1isize;
    loop {
        let a = m as f64 * h;
        if a >= upper {
            break;
        }
        let j0 = i as isize + sigma as isize * m;
        if j0 < -1 || j0 > n {
            // everything further out lands beyond the first virtual node
            let rest = integrate_side(d, x, sigma, a, f64::INFINITY, f64::INFINITY, |_| 1.0);
            if sigma > 0.0 {
                row.right += rest;
            } else {
                row.left += rest;
            }
            total += rest;
            break;
        }
        let b = ((m + 1) as f64 * h).min(upper);
        let mut lo = a;
        let mut w0 = 0.0;
        let mut w1 = 0.0;
        let mut pieces: Vec<f64> = cuts.iter().cloned().filter(|c| *c > a && *c < b).collect();
        pieces.sort_by(|p, q| p.partial_cmp(q).unwrap());
        pieces.push(b);
        for hi in pieces {
            let len = hi - lo;
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                let u = lo + len * t;
                let v = d.eval(x, sigma * u) * w * len;
                let th = u / h - m as f64;
                w0 += v * (1.0 - th);
                w1 += v * th;
            }
            lo = hi;
        }
        row.add(j0, w0);
        row.add(j0 + sigma as isize, w1);
        total += w0 + w1;
        m += 1;
    }
    total
}

/// ∫_{lo < u <= hi} g(u) m(x, σu) du with panels split at the density's cut points.
fn integrate_side<G: Fn(f64) -> f64>(
    d: &JumpDensity,
    x: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    max_width: f64,
    g: G,
) -> f64 {
    let lo = lo.max(d.band.0);
    let hi = hi.min(d.upper());
    if hi <= lo {
        return 0.0;
    }
    let f = |u: f64| g(u) * d.eval(x, sigma * u);
    let mut pts: Vec<f64> = d.cuts().into_iter().filter(|c| *c > lo && *c < hi).collect();
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.dedup();
    let mut edges = vec![lo];
    edges.extend(pts);
    edges.push(hi);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        total += if a == 0.0 {
            let c = b.min(max_width);
            integrate_to_zero(c, &f) + if c < b { panels(c, b, max_width, &f) } else { 0.0 }
        } else if b.is_infinite() {
            integrate_to_infinity(a, max_width, &f)
        } else {
            panels(a, b, max_width, &f)
        };
    }
    total
}

/// Gauss–Legendre over [a, b], a > 0, with geometric panels and a width cap.
fn panels<F: Fn(f64) -> f64>(a: f64, b: f64, max_width: f64, f: &F) -> f64 {
    let rule = rule8();
    let mut total = 0.0;
    let mut lo = a;
    while lo < b {
        let hi = (2.0 * lo).min(b);
        let pieces = (((hi - lo) / max_width).ceil() as usize).max(1);
        let w = (hi - lo) / pieces as f64;
        for p in 0..pieces {
            let s = lo + p as f64 * w;
            total += rule.integrate(s, s + w, f);
        }
        lo = hi;
    }
    total
}

/// Row builder with virtual-node handling.
struct DenseRow {
    vals: Vec<f64>,
    left: f64,
    right: f64,
}

impl DenseRow {
    fn new(n: usize) -> Self {
        Self {
            vals: vec![0.0; n],
            left: 0.0,
            right: 0.0,
        }
    }

    #[inline]
    fn add(&mut self, j: isize, v: f64) {
        if j < 0 {
            self.left += v;
        } else if j as usize >= self.vals.len() {
            self.right += v;
        } else {
            self.vals[j as usize] += v;
        }
    }

    fn compress(self) -> SparseRow {
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (j, v) in self.vals.into_iter().enumerate() {
            if v != 0.0 {
                cols.push(j as u32);
                vals.push(v);
            }
        }
        SparseRow {
            cols,
            vals,
            left: self.left,
            right: self.right,
        }
    }
}

/// One row of an assembled operator: `Σ vals[k] f[cols[k]] + left f(-1) + right f(n)`,
/// where `f(-1)`, `f(n)` are the extension values.
#[derive(Debug, Clone)]
pub struct SparseRow {
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
    pub left: f64,
    pub right: f64,
}

impl SparseRow {
    #[inline]
    fn dot(&self, f: &GridFunction) -> f64 {
        let v = f.values();
        let mut acc = 0.0;
        for (c, w) in self.cols.iter().zip(&self.vals) {
            acc += w * v[*c as usize];
        }
        let n = v.len() as isize;
        acc + self.left * f.extended(-1) + self.right * f.extended(n)
    }

    /// Σ |entries| including extension weights.
    pub fn abs_sum(&self) -> f64 {
        self.vals.iter().map(|v| v.abs()).sum::<f64>() + self.left.abs() + self.right.abs()
    }
}

/// A perturbation operator assembled on a grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    grid: Grid,
    rows: Vec<SparseRow>,
    /// Fixed output extension (rank-one functionals produce constants); None keeps the input's.
    output: Option<Extension>,
}

impl Prepared {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// `B̂f = λ f(point) 𝟙` by linear interpolation at `point`.
    pub fn rank_one(grid: &Grid, point: f64, weight: f64) -> Self {
        let n = grid.n();
        let q = grid.position(point);
        let j = q.floor() as isize;
        let th = q - j as f64;
        let mut row = DenseRow::new(n);
        row.add(j, weight * (1.0 - th));
        row.add(j + 1, weight * th);
        let row = row.compress();
        Self {
            grid: *grid,
            rows: vec![row; n],
            output: Some(Extension::Constant),
        }
    }

    pub fn zero(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            rows: vec![
                SparseRow {
                    cols: Vec::new(),
                    vals: Vec::new(),
                    left: 0.0,
                    right: 0.0
                };
                grid.n()
            ],
            output: None,
        }
    }

    pub fn output_extension(&self, input: Extension) -> Extension {
        self.output.unwrap_or(input)
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        let values: Vec<f64> = self.rows.iter().map(|r| r.dot(f)).collect();
        GridFunction::from_parts(self.grid, values, self.output_extension(f.extension()))
    }

    /// max_i Σ_j |B_ij| — the sup-norm operator norm of the assembled matrix.
    pub fn norm_inf(&self) -> f64 {
        self.rows.iter().map(|r| r.abs_sum()).fold(0.0, f64::max)
    }
}

/// B̂f at order `rho`, with precondition checks and the a-priori bound
/// `‖B̂f‖_∞ ≤ (sup|b| + 2‖μ‖_β) ‖f‖_{C^ρ}` asserted.
pub fn apply_perturbation(b: &LevyCharacteristics, f: &GridFunction, rho: f64) -> Result<GridFunction> {
    let grid = f.grid();
    b.check_order(grid, rho)?;
    let bounds = b.checked_bounds(grid)?;
    let out = b.prepare(grid, rho)?.apply(f);
    let hn = f.holder_norm(rho)?;
    let bound = (bounds.b_sup + 2.0 * bounds.mu_beta) * hn;
    let s = out.sup_norm();
    if s > bound * (1.0 + 1e-6) + 1e-10 {
        return Err(Error::BoundViolated(format!(
            "‖B̂f‖ = {s:.6e} exceeds (b_sup + 2 mu_beta)·‖f‖_C^rho = {bound:.6e}"
        )));
    }
    Ok(out)
}

/// Moduli for the continuity conditions of the characteristics on a compact K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub interval: (f64, f64),
    /// max |b(x_{i+1}) - b(x_i)|
    pub drift_jump: f64,
    /// max over test functions of the adjacent-node variation of ∫φ dμ(x, ·)
    pub vague_jump: f64,
    /// (R, sup_K μ(x, {|y| > R}))
    pub tightness: Vec<(f64, f64)>,
    /// (r, sup_K ∫_{|y|<=r} y² μ(x, dy))
    pub small_jump_moments: Vec<(f64, f64)>,
    /// (ξ, max adjacent |p(x_{i+1}, ξ) - p(x_i, ξ)|)
    pub symbol_jump: Vec<(f64, f64)>,
}

/// A test function on ℝ∖{0} supported in `inner <= |y| <= outer`.
#[derive(Clone)]
pub struct TestFn {
    pub f: RealFn,
    pub inner: f64,
    pub outer: f64,
}

impl TestFn {
    /// Tent peaked at `center` with half-width `width` (supported away from 0).
    pub fn tent(center: f64, width: f64) -> Self {
        Self {
            f: Arc::new(move |y| (1.0 - (y - center).abs() / width).max(0.0)),
            inner: (center.abs() - width).max(0.0),
            outer: center.abs() + width,
        }
    }
}

pub fn continuity_diagnostics(
    b: &LevyCharacteristics,
    grid: &Grid,
    k: (f64, f64),
    probe_xi: &[f64],
    probe_test_fns: &[TestFn],
) -> ContinuityReport {
    let idx: Vec<usize> = grid.indices_in(k.0, k.1).collect();
    let xs: Vec<f64> = idx.iter().map(|&i| grid.node(i)).collect();
    let adjacent = |vals: &[f64]| vals.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let drift: Vec<f64> = xs.iter().map(|x| b.drift_at(*x)).collect();
    let mut vague_jump = 0.0f64;
    for tf in probe_test_fns {
        let vals = parallel::map_slice(&xs, |&x| {
            let mut v = b.integrate_density(x, tf.inner, tf.outer, 0.05, |y| (tf.f)(y));
            for a in &b.atoms {
                v += (a.weight)(x) * (tf.f)((a.location)(x));
            }
            v
        });
        vague_jump = vague_jump.max(adjacent(&vals));
    }
    let radii = [1.0, 2.0, 4.0, 8.0, 16.0];
    let range = idx.first().copied().unwrap_or(0)..idx.last().map_or(0, |l| l + 1);
    let tightness = radii
        .iter()
        .cloned()
        .zip(b.tightness_on(grid, range, &radii))
        .collect();
    let small_jump_moments = (0..11)
        .map(|k| {
            let r = 0.5f64.powi(k);
            let v = parallel::map_slice(&xs, |&x| {
                let mut v = b.integrate_density(x, 0.0, r, 0.5, |y| y * y);
                for a in &b.atoms {
                    let l = (a.location)(x);
                    if l.abs() <= r {
                        v += (a.weight)(x) * l * l;
                    }
                }
                v
            })
            .into_iter()
            .fold(0.0, f64::max);
            (r, v)
        })
        .collect();
    let symbol_jump = probe_xi
        .iter()
        .map(|&xi| {
            let vals: Vec<Complex64> = parallel::map_slice(&xs, |&x| b.symbol(None, x, xi).value);
            let j = vals.windows(2).map(|w| (w[1] - w[0]).norm()).fold(0.0, f64::max);
            (xi, j)
        })
        .collect();
    ContinuityReport {
        interval: k,
        drift_jump: adjacent(&drift),
        vague_jump,
        tightness,
        small_jump_moments,
        symbol_jump,
    }
}

//! Translation-invariant base semigroups: heat, symmetric stable, Cauchy and
//! user-supplied Lévy exponents. Kernels are tabulated on the displacement
//! grid and memoised per time.

mod stable;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::{self, Grid, GridFunction, Kernel};
use crate::quad::rule16;

pub(crate) use stable::UnitLaw;

/// Threshold on `exp(-t Re ψ(π/h))`-type aliasing below which point samples
/// of the density represent the kernel faithfully.
const POINT_SAMPLING_LIMIT: f64 = 2.5e-7;

pub type PsiFn = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

#[derive(Clone)]
pub enum ExponentKind {
    /// ψ(ξ) = ξ², generator d²/dx².
    Heat,
    /// ψ(ξ) = |ξ|^α, α ∈ (0, 2].
    Stable { alpha: f64 },
    /// ψ(ξ) = |ξ|.
    Cauchy,
    /// User-supplied exponent with its declared regularising order
    /// (the `s` in ‖T(t)f‖_{C^ρ} ≲ t^{-ρ/s}‖f‖).
    Custom { psi: PsiFn, index: f64 },
}

impl fmt::Debug for ExponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExponentKind::Heat => write!(f, "Heat"),
            ExponentKind::Stable { alpha } => write!(f, "Stable({alpha})"),
            ExponentKind::Cauchy => write!(f, "Cauchy"),
            ExponentKind::Custom { index, .. } => write!(f, "Custom(index = {index})"),
        }
    }
}

/// Lévy exponent of a symmetric base, optionally with a killing rate κ ≥ 0
/// (the semigroup is then `e^{-κt}` times the conservative one).
#[derive(Clone, Debug)]
pub struct LevyExponent {
    kind: ExponentKind,
    killing: f64,
}

impl LevyExponent {
    pub fn heat() -> Self {
        Self {
            kind: ExponentKind::Heat,
            killing: 0.0,
        }
    }

    pub fn cauchy() -> Self {
        Self {
            kind: ExponentKind::Cauchy,
            killing: 0.0,
        }
    }

    pub fn stable(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::InvalidExponent(format!("stable index {alpha} outside (0, 2]")));
        }
        Ok(Self {
            kind: ExponentKind::Stable { alpha },
            killing: 0.0,
        })
    }

    pub fn custom<F>(psi: F, index: f64) -> Result<Self>
    where
        F: Fn(f64) -> Complex64 + Send + Sync + 'static,
    {
        if !(index > 0.0 && index <= 2.0) {
            return Err(Error::InvalidExponent(format!("regularising index {index} outside (0, 2]")));
        }
        let e = Self {
            kind: ExponentKind::Custom {
                psi: Arc::new(psi),
                index,
            },
            killing: 0.0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_killing(mut self, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidExponent(format!("killing rate {kappa} must be >= 0")));
        }
        self.killing = kappa;
        Ok(self)
    }

    pub fn kind(&self) -> &ExponentKind {
        &self.kind
    }

    pub fn killing(&self) -> f64 {
        self.killing
    }

    /// ψ(ξ), excluding the killing rate.
    pub fn psi(&self, xi: f64) -> Complex64 {
        match &self.kind {
            ExponentKind::Heat => Complex64::new(xi * xi, 0.0),
            ExponentKind::Stable { alpha } => Complex64::new(xi.abs().powf(*alpha), 0.0),
            ExponentKind::Cauchy => Complex64::new(xi.abs(), 0.0),
            ExponentKind::Custom { psi, .. } => psi(xi),
        }
    }

    /// Self-similarity / regularising index `s`: 2 for heat, α for stable laws.
    pub fn index(&self) -> f64 {
        match &self.kind {
            ExponentKind::Heat => 2.0,
            ExponentKind::Stable { alpha } => *alpha,
            ExponentKind::Cauchy => 1.0,
            ExponentKind::Custom { index, .. } => *index,
        }
    }

    /// Checks ψ(0) = 0, Re ψ ≥ 0, conjugate symmetry on probe points and the
    /// Hartman–Wintner growth `Re ψ(ξ) / log ξ` increasing over 10², 10³, 10⁴.
    pub fn validate(&self) -> Result<()> {
        let p0 = self.psi(0.0);
        if p0.norm() > 1e-12 {
            return Err(Error::InvalidExponent(format!("psi(0) = {p0}, expected 0")));
        }
        let mut xi = 1e-3;
        while xi <= 1e5 {
            let p = self.psi(xi);
            let m = self.psi(-xi);
            if !(p.re.is_finite() && p.im.is_finite()) {
                return Err(Error::InvalidExponent(format!("psi({xi}) is not finite")));
            }
            if p.re < -1e-12 * (1.0 + p.norm()) {
                return Err(Error::InvalidExponent(format!("Re psi({xi}) = {} < 0", p.re)));
            }
            if (m - p.conj()).norm() > 1e-10 * (1.0 + p.norm()) {
                return Err(Error::InvalidExponent(format!(
                    "psi(-xi) != conj(psi(xi)) at xi = {xi}"
                )));
            }
            xi *= 3.7;
        }
        let hw: Vec<f64> = [1e2, 1e3, 1e4]
            .iter()
            .map(|x: &f64| self.psi(*x).re / x.ln())
            .collect();
        if !(hw[0] < hw[1] && hw[1] < hw[2]) {
            return Err(Error::InvalidExponent(
                "Re psi(xi)/log|xi| is not increasing (Hartman-Wintner growth fails)".into(),
            ));
        }
        Ok(())
    }
}

/// A power-law majorant `φ(t) = constant · t^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Majorant {
    pub constant: f64,
    pub exponent: f64,
}

impl Majorant {
    pub fn eval(&self, t: f64) -> f64 {
        self.constant * t.powf(self.exponent)
    }

    /// ∫_0^t φ; infinite when the exponent is ≤ -1.
    pub fn integral(&self, t: f64) -> f64 {
        if self.exponent <= -1.0 {
            f64::INFINITY
        } else {
            self.constant * t.powf(self.exponent + 1.0) / (self.exponent + 1.0)
        }
    }
}

/// Log-log least-squares fit of a norm against time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityFit {
    pub exponent: f64,
    pub constant: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
}

enum Law {
    Unit(UnitLaw),
    Custom(PsiFn),
}

/// Translation-invariant Feller semigroup on the grid.
pub struct BaseSemigroup {
    exponent: LevyExponent,
    grid: Grid,
    law: Law,
    cache: Mutex<HashMap<String, Arc<Kernel>>>,
    resolvents: Mutex<HashMap<String, Arc<Kernel>>>,
}

impl fmt::Debug for BaseSemigroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BaseSemigroup")
            .field("exponent", &self.exponent)
            .field("grid", &self.grid)
            .finish()
    }
}

fn time_key(t: f64) -> String {
    format!("{t:.11e}")
}

pub fn build_base(exponent: LevyExponent, grid: Grid) -> Result<BaseSemigroup> {
    BaseSemigroup::new(exponent, grid)
}

pub fn apply_base(base: &BaseSemigroup, t: f64, f: &GridFunction) -> Result<GridFunction> {
    base.apply(t, f)
}

pub fn base_resolvent(base: &BaseSemigroup, lambda: f64, f: &GridFunction) -> Result<GridFunction> {
    base.resolvent(lambda, f)
}

pub fn estimate_regularity(base: &BaseSemigroup, rho: f64, times: &[f64]) -> Result<RegularityFit> {
    base.estimate_regularity(rho, times)
}

impl BaseSemigroup {
    pub fn new(exponent: LevyExponent, grid: Grid) -> Result<Self> {
        exponent.validate()?;
        let law = match exponent.kind() {
            ExponentKind::Heat => Law::Unit(UnitLaw::Gauss),
            ExponentKind::Cauchy => Law::Unit(UnitLaw::Cauchy),
            ExponentKind::Stable { alpha } => Law::Unit(UnitLaw::for_index(*alpha)),
            ExponentKind::Custom { psi, .. } => Law::Custom(psi.clone()),
        };
        Ok(Self {
            exponent,
            grid,
            law,
            cache: Mutex::new(HashMap::new()),
            resolvents: Mutex::new(HashMap::new()),
        })
    }

    pub fn exponent(&self) -> &LevyExponent {
        &self.exponent
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Largest usable Hölder order.
    pub fn rho_max(&self) -> f64 {
        self.exponent.index()
    }

    pub fn index(&self) -> f64 {
        self.exponent.index()
    }

    /// Point density `p_t(x)` (killing included).
    pub fn density(&self, t: f64, x: f64) -> Result<f64> {
        check_time(t)?;
        let kill = (-self.exponent.killing * t).exp();
        match &self.law {
            Law::Unit(u) => {
                let s = u.scale(t);
                Ok(kill * u.density(x / s) / s)
            }
            Law::Custom(_) => {
                let k = self.kernel(t)?;
                let h = self.grid.h();
                let n = self.grid.n() as isize;
                let p = x / h;
                let i = p.floor() as isize;
                let fr = p - i as f64;
                let w = |k_: isize| if k_.abs() < n { k.weight(k_) / h } else { 0.0 };
                Ok(w(i) * (1.0 - fr) + w(i + 1) * fr)
            }
        }
    }

    /// The kernel table at time `t`, memoised.
    pub fn kernel(&self, t: f64) -> Result<Arc<Kernel>> {
        check_time(t)?;
        let key = time_key(t);
        if let Some(k) = self.cache.lock().expect("kernel cache").get(&key) {
            return Ok(k.clone());
        }
        let k = Arc::new(self.build_kernel(t)?);
        let mut cache = self.cache.lock().expect("kernel cache");
        Ok(cache.entry(key).or_insert(k).clone())
    }

    pub fn cached_tables(&self) -> usize {
        self.cache.lock().expect("kernel cache").len()
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("kernel cache").clear();
        self.resolvents.lock().expect("resolvent cache").clear();
    }

    fn build_kernel(&self, t: f64) -> Result<Kernel> {
        let kill = (-self.exponent.killing * t).exp();
        let (mut w, mut tl, mut tr) = match &self.law {
            Law::Unit(u) => unit_kernel(u, t, &self.grid),
            Law::Custom(psi) => custom_kernel(psi.as_ref(), t, &self.grid)?,
        };
        if kill != 1.0 {
            w.iter_mut().for_each(|v| *v *= kill);
            tl *= kill;
            tr *= kill;
        }
        Kernel::from_weights(&self.grid, w, tl, tr)
    }

    /// T(t)f; the identity at t = 0.
    pub fn apply(&self, t: f64, f: &GridFunction) -> Result<GridFunction> {
        if f.grid() != &self.grid {
            return Err(Error::LengthMismatch {
                expected: self.grid.n(),
                got: f.grid().n(),
            });
        }
        let k = self.kernel(t)?;
        Ok(gridfn::convolve_unchecked(f, &k))
    }

    /// The kernel at `t`, taken from the cache if present but never inserted.
    pub(crate) fn kernel_transient(&self, t: f64) -> Result<Arc<Kernel>> {
        check_time(t)?;
        if let Some(k) = self.cache.lock().expect("kernel cache").get(&time_key(t)) {
            return Ok(k.clone());
        }
        Ok(Arc::new(self.build_kernel(t)?))
    }

    /// R(λ)f = ∫_0^∞ e^{-λt} T(t)f dt.
    ///
    /// The resolvent kernel is the Laplace transform of the kernel tables,
    /// computed with `t = v²` and Gauss–Legendre on geometric v-panels over
    /// `(0, 40/λ]`; it is memoised per λ.
    pub fn resolvent(&self, lambda: f64, f: &GridFunction) -> Result<GridFunction> {
        let k = self.resolvent_kernel(lambda)?;
        Ok(gridfn::convolve_unchecked(f, &k).scale(1.0 / lambda))
    }

    /// λ R(λ) as a kernel (sub-probability).
    pub fn resolvent_kernel(&self, lambda: f64) -> Result<Arc<Kernel>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        let key = time_key(lambda);
        if let Some(k) = self.resolvents.lock().expect("resolvent cache").get(&key) {
            return Ok(k.clone());
        }
        let len = 2 * self.grid.n() - 1;
        let mut w = vec![0.0; len];
        let (mut tl, mut tr) = (0.0, 0.0);
        for (t, q) in laplace_nodes(lambda) {
            // λ e^{-λt} dt, pre-multiplied
            let c = lambda * q;
            let kt = self.build_kernel(t)?;
            for (a, b) in w.iter_mut().zip(kt.weights()) {
                *a += c * b;
            }
            let (l, r) = kt.tails();
            tl += c * l;
            tr += c * r;
        }
        let k = Arc::new(Kernel::build(&self.grid, w, tl, tr));
        let mut cache = self.resolvents.lock().expect("resolvent cache");
        Ok(cache.entry(key).or_insert(k).clone())
    }

    /// Fits `log(‖T(t)f‖_{C^ρ} - ‖T(t)f‖_∞)` against `log t` for f = 𝟙_{[-1,1]}.
    ///
    /// The sup-norm part is bounded by 1 and only dilutes the power law, so
    /// the fit uses the seminorm part of the Hölder norm.
    pub fn estimate_regularity(&self, rho: f64, times: &[f64]) -> Result<RegularityFit> {
        if times.len() < 4 {
            return Err(Error::InvalidParameter(format!(
                "need at least 4 times, got {}",
                times.len()
            )));
        }
        // rho = rho_max is admitted: the gradient bound of the Cauchy kernel
        // (rho = alpha = 1) is the classical borderline case
        if !(rho > 0.0 && rho <= self.rho_max() && rho < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "rho = {rho} must lie in (0, {}]",
                self.rho_max()
            )));
        }
        if times.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidParameter("times must lie in (0, 1)".into()));
        }
        let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = times.iter().cloned().fold(0.0, f64::max);
        if hi / lo < 10.0 - 1e-9 {
            return Err(Error::InvalidParameter("times must span at least a decade".into()));
        }
        let f = GridFunction::indicator(self.grid, -1.0, 1.0);
        let mut norms = Vec::with_capacity(times.len());
        for &t in times {
            let u = self.apply(t, &f)?;
            norms.push(u.holder_norm(rho)? - u.sup_norm());
        }
        let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = norms.iter().map(|v| v.max(1e-300).ln()).collect();
        let (slope, intercept) = least_squares(&xs, &ys);
        Ok(RegularityFit {
            exponent: slope,
            constant: intercept.exp(),
            times: times.to_vec(),
            norms,
        })
    }

    /// Majorant `‖T(t)f‖_{C^ρ} ≤ φ(t)‖f‖_∞` valid for `t ≤ 1`.
    ///
    /// Built-in laws use the kernel-moment bound (interpolating between
    /// `∫|p_t|`, `∫|p_t'|` and `∫|p_t''|`); custom exponents use a fit with a
    /// safety factor of two.
    pub fn phi(&self, rho: f64) -> Result<Majorant> {
        if !(rho > 0.0 && rho < 2.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0,2), got {rho}")));
        }
        let s = self.index();
        match &self.law {
            Law::Unit(u) => {
                let g1 = u.gradient_mass();
                let c = if rho < 1.0 {
                    1.0 + 2f64.powf(1.0 - rho) * g1.powf(rho)
                } else {
                    let g2 = curvature_mass(u);
                    1.0 + g1 + 2f64.powf(2.0 - rho) * g1.powf(2.0 - rho) * g2.powf(rho - 1.0)
                };
                Ok(Majorant {
                    constant: c,
                    exponent: -rho / s,
                })
            }
            Law::Custom(_) => {
                let rho_fit = rho.min(0.99 * s);
                let fit = self.estimate_regularity(rho_fit, &[0.01, 0.02, 0.04, 0.08, 0.16])?;
                Ok(Majorant {
                    constant: 1.0 + 2.0 * fit.constant,
                    exponent: -rho / s,
                })
            }
        }
    }

    /// Point densities of p_t on the displacement grid.
    pub fn density_table(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.grid.n() as isize;
        let h = self.grid.h();
        (-(n - 1)..n).map(|k| self.density(t, k as f64 * h)).collect()
    }

    /// Write `x,p_t(x)` for the tabulated kernel at time t.
    pub fn write_table_csv<W: Write>(&self, t: f64, out: W) -> Result<()> {
        let k = self.kernel(t)?;
        k.write_csv(out)
            .map_err(|e| Error::InvalidParameter(format!("write failed: {e}")))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be > 0, got {t}")));
    }
    Ok(())
}

pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// (t, weight) pairs for ∫_0^{40/λ} e^{-λt} g(t) dt, weight including e^{-λt}.
fn laplace_nodes(lambda: f64) -> Vec<(f64, f64)> {
    let vmax = (40.0 / lambda).sqrt();
    let rule = rule16();
    let mut out = Vec::new();
    let mut push = |a: f64, b: f64| {
        let len = b - a;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let v = a + len * x;
            let t = v * v;
            out.push((t, (-lambda * t).exp() * 2.0 * v * w * len));
        }
    };
    const LEVELS: i32 = 24;
    push(0.0, vmax * 2f64.powi(-LEVELS));
    for j in (0..LEVELS).rev() {
        push(vmax * 2f64.powi(-j - 1), vmax * 2f64.powi(-j));
    }
    out
}

/// ∫|p_1''| = 4 max|p_1'| for bell-shaped densities.
fn curvature_mass(u: &UnitLaw) -> f64 {
    let du = 1e-3;
    let mut best = 0.0f64;
    let mut x = du;
    while x < 10.0 {
        let d = (u.density(x - du) - u.density(x + du)) / (2.0 * du);
        best = best.max(d.abs());
        x += du;
    }
    4.0 * best
}

/// Kernel weights plus tails for a self-similar symmetric law.
fn unit_kernel(u: &UnitLaw, t: f64, grid: &Grid) -> (Vec<f64>, f64, f64) {
    let n = grid.n();
    let h = grid.h();
    let s = u.scale(t);
    let nn = n as isize;
    let mut w = vec![0.0; 2 * n - 1];
    let freq = 2.0 * std::f64::consts::PI / h;
    let aliasing = (-t * freq.powf(u.index())).exp();
    if aliasing <= POINT_SAMPLING_LIMIT {
        for k in 0..nn {
            let v = h * u.density(k as f64 * h / s) / s;
            w[(nn - 1 + k) as usize] = v;
            w[(nn - 1 - k) as usize] = v;
        }
        let tail = u.tail(((n - 1) as f64 + 0.5) * h / s);
        let sum: f64 = w.iter().sum();
        let target = (1.0 - 2.0 * tail).max(0.0);
        if sum > 0.0 {
            let c = target / sum;
            w.iter_mut().for_each(|v| *v *= c);
        }
        (w, tail, tail)
    } else {
        // Exact projection onto hat functions: w_k = E[Λ(X/h - k)].
        let far = u.far_field();
        let g = |z: f64| u.second_antiderivative(z);
        let rule = crate::quad::rule8();
        for k in 0..nn {
            let kf = k as f64;
            let v = if (kf - 1.0) * h / s < far {
                s / h * (g((kf + 1.0) * h / s) - 2.0 * g(kf * h / s) + g((kf - 1.0) * h / s))
            } else {
                // smooth far field: integrate the point density against the hat
                let mut acc = 0.0;
                for (x, wq) in rule.nodes.iter().zip(&rule.weights) {
                    let yl = (kf - 1.0 + x) * h;
                    let yr = (kf + x) * h;
                    acc += wq * (u.density(yl / s) * x + u.density(yr / s) * (1.0 - x));
                }
                acc * h / s
            };
            let v = v.max(0.0);
            w[(nn - 1 + k) as usize] = v;
            w[(nn - 1 - k) as usize] = v;
        }
        let half: f64 = 0.5 * w[n - 1] + w[n..].iter().sum::<f64>();
        let tail = (0.5 - half).max(0.0);
        (w, tail, tail)
    }
}

/// Kernel weights for a user exponent by FFT inversion of `exp(-t ψ)`.
///
/// Both the x-resolution (oversampling `r`) and the period of the implied
/// periodisation are doubled until the table changes by less than 1e-8 of its
/// maximum; heavy-tailed laws need long periods to suppress image mass.
fn custom_kernel(psi: &(dyn Fn(f64) -> Complex64 + Send + Sync), t: f64, grid: &Grid) -> Result<(Vec<f64>, f64, f64)> {
    const MAX_LEN: usize = 1 << 22;
    let n = grid.n();
    let h = grid.h();
    let freq = 2.0 * std::f64::consts::PI / h;
    let point_mode = (-t * psi(freq).re).exp() <= POINT_SAMPLING_LIMIT;
    let converged = |a: &[f64], b: &[f64]| {
        let scale = b.iter().cloned().fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-8 * scale)
    };
    let mut r = 1usize;
    let mut periods = 4usize;
    // resolution first, at the shortest period
    let mut w = fft_table(psi, t, grid, r, periods, point_mode);
    while r < 64 && 4 * n * r * periods <= MAX_LEN {
        let next = fft_table(psi, t, grid, 2 * r, periods, point_mode);
        r *= 2;
        let done = converged(&w, &next);
        w = next;
        if done {
            break;
        }
    }
    while 2 * n * r * periods * 2 <= MAX_LEN {
        let next = fft_table(psi, t, grid, r, 2 * periods, point_mode);
        periods *= 2;
        let done = converged(&w, &next);
        w = next;
        if done {
            break;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum > 1.0 {
        w.iter_mut().for_each(|v| *v /= sum);
    }
    let rest = (1.0 - sum).max(0.0);
    Ok((w, 0.5 * rest, 0.5 * rest))
}

/// One FFT inversion with spacing `h / r` and period `periods · n · h`.
fn fft_table(
    psi: &(dyn Fn(f64) -> Complex64 + Send + Sync),
    t: f64,
    grid: &Grid,
    r: usize,
    periods: usize,
    point_mode: bool,
) -> Vec<f64> {
    let n = grid.n();
    let h = grid.h();
    let nn = n as isize;
    let dx = h / r as f64;
    let len = n * r * periods;
    let period = len as f64 * dx;
    let mut buf: Vec<Complex64> = (0..len)
        .map(|m| {
            let mi = if m <= len / 2 { m as f64 } else { m as f64 - len as f64 };
            let xi = 2.0 * std::f64::consts::PI * mi / period;
            (-t * psi(xi)).exp()
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_inverse(len).process(&mut buf);
    let dens = |j: isize| -> f64 {
        let idx = j.rem_euclid(len as isize) as usize;
        (buf[idx].re / period).max(0.0)
    };
    let ri = r as isize;
    (-(nn - 1)..nn)
        .map(|k| {
            if point_mode {
                h * dens(k * ri)
            } else {
                let mut acc = 0.0;
                for j in -ri + 1..ri {
                    acc += (1.0 - (j as f64 / r as f64).abs()) * dens(k * ri + j);
                }
                acc * dx
            }
        })
        .collect()
}

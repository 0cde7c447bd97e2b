//! Uniform 1-D grids, sampled functions with an off-grid extension policy,
//! sup and Hölder norms, and FFT-based kernel convolution.

use std::cell::RefCell;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `x_i = x_min + i h`, `h = (x_max - x_min) / (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::InvalidGrid(format!(
                "bounds must satisfy x_min < x_max (got {x_min}, {x_max})"
            )));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "node count must be a power of two >= 8 (got {n})"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n,
            h: (x_max - x_min) / (n - 1) as f64,
        })
    }

    /// Default window [-20, 20] with 1024 nodes.
    pub fn standard() -> Self {
        Self::new(-20.0, 20.0, 1024).expect("valid default grid")
    }

    #[inline]
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Fractional index of `x`: `(x - x_min) / h`.
    #[inline]
    pub fn position(&self, x: f64) -> f64 {
        (x - self.x_min) / self.h
    }

    /// Index of the node closest to `x`, clamped to the window.
    pub fn nearest(&self, x: f64) -> usize {
        let p = self.position(x).round();
        p.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Indices of nodes inside the closed interval [a, b].
    pub fn indices_in(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let lo = self.position(a).ceil().max(0.0) as usize;
        let hi = (self.position(b).floor() + 1.0).clamp(0.0, self.n as f64) as usize;
        lo.min(hi)..hi
    }
}

/// Values a grid function takes at virtual nodes outside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    Zero,
    /// Extend by the boundary value on each side.
    Constant,
}

/// A real function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
    extension: Extension,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>, extension: Extension) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::LengthMismatch {
                expected: grid.n(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            grid,
            values,
            extension,
        })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>, extension: Extension) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self {
            grid,
            values,
            extension,
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, extension: Extension, f: F) -> Result<Self> {
        Self::new(grid, (0..grid.n()).map(|i| f(grid.node(i))).collect(), extension)
    }

    pub fn zeros(grid: Grid, extension: Extension) -> Self {
        Self::from_parts(grid, vec![0.0; grid.n()], extension)
    }

    /// The constant `c`, extended by `c` outside the window.
    pub fn constant(grid: Grid, c: f64) -> Self {
        Self::from_parts(grid, vec![c; grid.n()], Extension::Constant)
    }

    pub fn one(grid: Grid) -> Self {
        Self::constant(grid, 1.0)
    }

    /// Cell-averaged indicator of [a, b]: node `i` carries the fraction of its
    /// dual cell `[x_i - h/2, x_i + h/2]` covered by the interval.
    pub fn indicator(grid: Grid, a: f64, b: f64) -> Self {
        let h = grid.h();
        let values = (0..grid.n())
            .map(|i| {
                let x = grid.node(i);
                let lo = (x - 0.5 * h).max(a);
                let hi = (x + 0.5 * h).min(b);
                ((hi - lo) / h).clamp(0.0, 1.0)
            })
            .collect();
        Self::from_parts(grid, values, Extension::Zero)
    }

    /// Cell-averaged indicator of [a, ∞), extended by 1 on the right and 0 on the left.
    pub fn step(grid: Grid, a: f64) -> Self {
        let h = grid.h();
        let values = (0..grid.n())
            .map(|i| {
                let x = grid.node(i);
                ((x + 0.5 * h - a) / h).clamp(0.0, 1.0)
            })
            .collect();
        Self::from_parts(grid, values, Extension::Constant)
    }

    /// Smooth compactly supported bump `exp(1 - 1/(1 - r²))`, `r = (x - center)/radius`,
    /// with peak value 1 at `center`.
    pub fn bump(grid: Grid, center: f64, radius: f64) -> Self {
        let values = (0..grid.n())
            .map(|i| bump_value((grid.node(i) - center) / radius))
            .collect();
        Self::from_parts(grid, values, Extension::Zero)
    }

    pub fn gaussian(grid: Grid, center: f64, width: f64) -> Self {
        let values = (0..grid.n())
            .map(|i| {
                let z = (grid.node(i) - center) / width;
                (-z * z).exp()
            })
            .collect();
        Self::from_parts(grid, values, Extension::Zero)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    #[inline]
    pub fn extension(&self) -> Extension {
        self.extension
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    /// Value at the virtual node `i` (may lie outside the window).
    #[inline]
    pub fn extended(&self, i: isize) -> f64 {
        let n = self.values.len() as isize;
        if i >= 0 && i < n {
            self.values[i as usize]
        } else {
            match self.extension {
                Extension::Zero => 0.0,
                Extension::Constant => {
                    if i < 0 {
                        self.values[0]
                    } else {
                        self.values[n as usize - 1]
                    }
                }
            }
        }
    }

    /// Linear interpolation of the extended node sequence.
    pub fn eval(&self, x: f64) -> f64 {
        let p = self.grid.position(x);
        let lo = p.floor();
        let frac = p - lo;
        let i = lo as isize;
        let a = self.extended(i);
        if frac == 0.0 {
            return a;
        }
        a + frac * (self.extended(i + 1) - a)
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn holder_norm(&self, rho: f64) -> Result<f64> {
        holder_norm(self, rho)
    }

    /// Second-order central difference, one-sided second-order at the boundary nodes.
    pub fn derivative(&self) -> Vec<f64> {
        central_difference(&self.values, self.grid.h())
    }

    /// `self + alpha * other`, keeping the extension of `self` unless `self`
    /// is zero-extended and `other` is not.
    pub fn axpy(&self, alpha: f64, other: &GridFunction) -> GridFunction {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        GridFunction::from_parts(self.grid, values, combine_ext(self.extension, other.extension))
    }

    pub fn add_assign(&mut self, other: &GridFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self.extension = combine_ext(self.extension, other.extension);
    }

    pub fn scale(&self, alpha: f64) -> GridFunction {
        GridFunction::from_parts(
            self.grid,
            self.values.iter().map(|v| alpha * v).collect(),
            self.extension,
        )
    }

    /// max |self - other| over nodes.
    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Write `x,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.grid.node(i), v)?;
        }
        Ok(())
    }
}

pub(crate) fn combine_ext(a: Extension, b: Extension) -> Extension {
    if a == Extension::Constant || b == Extension::Constant {
        Extension::Constant
    } else {
        Extension::Zero
    }
}

pub(crate) fn bump_value(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

pub fn sup_norm(f: &GridFunction) -> f64 {
    f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn central_difference(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    d
}

fn holder_seminorm(v: &[f64], h: f64, order: f64) -> f64 {
    let reach = ((1.0 / h).floor() as usize).max(1);
    let n = v.len();
    let mut best = 0.0f64;
    for i in 0..n {
        let hi = (i + reach).min(n - 1);
        for j in i + 1..=hi {
            let dist = (j - i) as f64 * h;
            let q = (v[j] - v[i]).abs() / dist.powf(order);
            if q > best {
                best = q;
            }
        }
    }
    best
}

/// `C_b^rho` norm proxy on the grid; see the module docs.
///
/// For `rho < 1`: sup norm plus the Hölder-`rho` seminorm over node pairs at
/// distance at most 1. For `rho ∈ [1, 2)`: sup norm plus sup of the central
/// difference `Df` plus the Hölder-`(rho - 1)` seminorm of `Df`.
pub fn holder_norm(f: &GridFunction, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 2.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0,2), got {rho}")));
    }
    let h = f.grid.h();
    let sup = sup_norm(f);
    if rho < 1.0 {
        Ok(sup + holder_seminorm(&f.values, h, rho))
    } else {
        let d = f.derivative();
        let dsup = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(sup + dsup + holder_seminorm(&d, h, rho - 1.0))
    }
}

/// A convolution kernel on the displacement grid `k h`, `|k| <= n - 1`.
///
/// `weights[k + n - 1]` is the mass the kernel assigns to displacement `k h`
/// (i.e. `h * density`). Mass beyond the table is kept in `tail_left` /
/// `tail_right` so that constant extensions stay exact.
#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    h: f64,
    weights: Vec<f64>,
    tail_left: f64,
    tail_right: f64,
    /// prefix[k] = sum of weights[0..k]
    prefix: Vec<f64>,
    spectrum: Vec<Complex64>,
}

impl Kernel {
    /// Build from masses on the displacement grid; rejects negative entries and
    /// total mass above 1 + 1e-6.
    pub fn from_weights(grid: &Grid, weights: Vec<f64>, tail_left: f64, tail_right: f64) -> Result<Self> {
        let n = grid.n();
        if weights.len() != 2 * n - 1 {
            return Err(Error::LengthMismatch {
                expected: 2 * n - 1,
                got: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidKernel(format!(
                "weight at displacement {} is {}",
                i as isize - (n as isize - 1),
                weights[i]
            )));
        }
        if tail_left < 0.0 || tail_right < 0.0 {
            return Err(Error::InvalidKernel("negative tail mass".into()));
        }
        let mass: f64 = weights.iter().sum::<f64>() + tail_left + tail_right;
        if mass > 1.0 + 1e-6 {
            return Err(Error::InvalidKernel(format!("total mass {mass} exceeds 1")));
        }
        Ok(Self::build(grid, weights, tail_left, tail_right))
    }

    /// Build from density values sampled at the displacement nodes.
    pub fn from_density(grid: &Grid, density: &[f64]) -> Result<Self> {
        let h = grid.h();
        Self::from_weights(grid, density.iter().map(|d| d * h).collect(), 0.0, 0.0)
    }

    /// Unit mass at displacement 0.
    pub fn delta(grid: &Grid) -> Self {
        let n = grid.n();
        let mut w = vec![0.0; 2 * n - 1];
        w[n - 1] = 1.0;
        Self::build(grid, w, 0.0, 0.0)
    }

    pub(crate) fn build(grid: &Grid, weights: Vec<f64>, tail_left: f64, tail_right: f64) -> Self {
        let n = grid.n();
        let mut prefix = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for w in &weights {
            acc += w;
            prefix.push(acc);
        }
        // Circular layout of length 2n for correlation: out[i] = sum_k w_k f[i + k].
        // With F = FFT(f) and K = FFT(c) where c[m] = w_{-m mod 2n}, out = IFFT(F K).
        let len = 2 * n;
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (idx, w) in weights.iter().enumerate() {
            let k = idx as isize - (n as isize - 1);
            let m = (-k).rem_euclid(len as isize) as usize;
            buf[m] = Complex64::new(*w, 0.0);
        }
        fft_plan(len, false).process(&mut buf);
        Self {
            n,
            h: grid.h(),
            weights,
            tail_left,
            tail_right,
            prefix,
            spectrum: buf,
        }
    }

    #[inline]
    pub fn weight(&self, k: isize) -> f64 {
        let idx = k + self.n as isize - 1;
        if idx < 0 || idx as usize >= self.weights.len() {
            0.0
        } else {
            self.weights[idx as usize]
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Density values `weight / h` on the displacement grid.
    pub fn density(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.h).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.prefix[self.weights.len()] + self.tail_left + self.tail_right
    }

    pub fn tails(&self) -> (f64, f64) {
        (self.tail_left, self.tail_right)
    }

    /// Mass at displacements strictly below `k` (including the left tail).
    #[inline]
    fn mass_below(&self, k: isize) -> f64 {
        let idx = (k + self.n as isize - 1).clamp(0, self.weights.len() as isize) as usize;
        self.tail_left + self.prefix[idx]
    }

    /// Mass at displacements strictly above `k` (including the right tail).
    #[inline]
    fn mass_above(&self, k: isize) -> f64 {
        let idx = (k + self.n as isize).clamp(0, self.weights.len() as isize) as usize;
        self.tail_right + (self.prefix[self.weights.len()] - self.prefix[idx])
    }

    /// Write `x,density` rows for the displacement grid.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,density")?;
        for (idx, w) in self.weights.iter().enumerate() {
            let k = idx as isize - (self.n as isize - 1);
            writeln!(out, "{:.16e},{:.16e}", k as f64 * self.h, w / self.h)?;
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// `out(x_i) = sum_k w_k f(x_i + k h)`, zero-padded so there is no wrap-around.
///
/// With `Extension::Constant`, kernel mass that leaves the window is credited
/// with the boundary value on that side. The output keeps `f`'s extension.
pub fn fft_convolve(f: &GridFunction, kernel: &Kernel) -> Result<GridFunction> {
    let n = f.grid.n();
    if kernel.n != n {
        return Err(Error::LengthMismatch {
            expected: 2 * n - 1,
            got: kernel.weights.len(),
        });
    }
    Ok(convolve_unchecked(f, kernel))
}

pub(crate) fn convolve_unchecked(f: &GridFunction, kernel: &Kernel) -> GridFunction {
    let n = f.grid.n();
    let len = 2 * n;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (b, v) in buf.iter_mut().zip(&f.values) {
        b.re = *v;
    }
    fft_plan(len, false).process(&mut buf);
    for (b, k) in buf.iter_mut().zip(&kernel.spectrum) {
        *b *= k;
    }
    fft_plan(len, true).process(&mut buf);
    let scale = 1.0 / len as f64;
    let mut out: Vec<f64> = buf[..n].iter().map(|c| c.re * scale).collect();
    if f.extension == Extension::Constant {
        let left = f.values[0];
        let right = f.values[n - 1];
        for (i, o) in out.iter_mut().enumerate() {
            let i = i as isize;
            // f at virtual node i + k is `left` when i + k < 0, `right` when i + k > n - 1.
            *o += left * kernel.mass_below(-i) + right * kernel.mass_above(n as isize - 1 - i);
        }
    }
    GridFunction::from_parts(f.grid, out, f.extension)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_construction() {
        let g = Grid::new(-20.0, 20.0, 1024).unwrap();
        assert_eq!(g.h(), 40.0 / 1023.0);
        let g = Grid::new(0.0, 1.0, 8).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes[0], 0.0);
        assert_relative_eq!(nodes[1], 1.0 / 7.0, epsilon = 1e-15);
        assert_eq!(nodes[7], 1.0);
        assert!(Grid::new(1.0, 0.0, 8).is_err());
        assert!(Grid::new(0.0, 1.0, 12).is_err());
        assert!(Grid::new(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn norms_on_simple_functions() {
        let g = Grid::new(0.0, 1.0, 64).unwrap();
        let one = GridFunction::one(g);
        assert_eq!(one.sup_norm(), 1.0);
        assert_eq!(GridFunction::zeros(g, Extension::Zero).sup_norm(), 0.0);
        let lin = GridFunction::from_fn(g, Extension::Zero, |x| x).unwrap();
        assert_eq!(lin.sup_norm(), 1.0);
        assert_relative_eq!(lin.holder_norm(1.0).unwrap(), 2.0, epsilon = 1e-12);
        for rho in [0.3, 0.9, 1.0, 1.7] {
            assert_relative_eq!(one.holder_norm(rho).unwrap(), 1.0);
        }
        assert!(lin.holder_norm(2.0).is_err());
        assert!(lin.holder_norm(0.0).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = Grid::new(0.0, 1.0, 8).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert_eq!(
            GridFunction::new(g, v, Extension::Zero).unwrap_err(),
            Error::NonFinite { index: 3 }
        );
    }

    #[test]
    fn delta_kernel_is_identity_and_markov_kernel_preserves_constants() {
        let g = Grid::new(-5.0, 5.0, 128).unwrap();
        let f = GridFunction::bump(g, 0.3, 2.0);
        let out = fft_convolve(&f, &Kernel::delta(&g)).unwrap();
        assert!(out.max_abs_diff(&f) < 1e-14);

        // A lopsided sub-probability kernel with total mass one (tails included).
        let n = g.n();
        let mut w = vec![0.0; 2 * n - 1];
        w[n - 1] = 0.5;
        w[n + 3] = 0.2;
        w[n - 20] = 0.1;
        let k = Kernel::from_weights(&g, w, 0.15, 0.05).unwrap();
        let one = fft_convolve(&GridFunction::one(g), &k).unwrap();
        for v in one.values() {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn convolve_length_mismatch() {
        let g = Grid::new(-5.0, 5.0, 128).unwrap();
        let g2 = Grid::new(-5.0, 5.0, 64).unwrap();
        let f = GridFunction::one(g);
        assert!(matches!(
            fft_convolve(&f, &Kernel::delta(&g2)),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(Kernel::from_density(&g, &[1.0; 10]).is_err());
    }

    #[test]
    fn eval_uses_extension() {
        let g = Grid::new(0.0, 1.0, 8).unwrap();
        let f = GridFunction::from_fn(g, Extension::Constant, |x| 1.0 + x).unwrap();
        assert_eq!(f.eval(-3.0), 1.0);
        assert_eq!(f.eval(5.0), 2.0);
        assert_relative_eq!(f.eval(0.5), 1.5, epsilon = 1e-14);
        let z = f.clone().with_extension(Extension::Zero);
        assert_eq!(z.eval(-3.0), 0.0);
    }
}

//! Dyson–Phillips engine for `S = T + ∫ S B̂ T`.
//!
//! Terms are computed in Volterra form `S_{n+1}(t)f = ∫_0^t T(t-s) B̂ S_n(s)f ds`
//! on the graded mesh `s_j = t (j/M)^p`, stepping `u(s_{k+1}) = T(δ_k) u(s_k) + I_k`.
//! The first term uses the midpoint product rule with `T(m_k)f` evaluated exactly
//! (its integrand is singular at 0); later terms use the trapezoid rule.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::basesg::BaseSemigroup;
use crate::error::{Error, Result};
use crate::gridfn::{combine_ext, convolve_unchecked, Extension, Grid, GridFunction, Kernel};
use crate::levyop::{LevyCharacteristics, Prepared};
use crate::parallel;
use crate::quad::rule8;

/// The perturbation B̂ handed to the engine.
#[derive(Debug, Clone)]
pub enum Perturbation {
    Zero,
    Levy(LevyCharacteristics),
    /// `B̂f = weight · f(point) · 𝟙` (not of Lévy type; conservative only if weight = 0).
    RankOne { point: f64, weight: f64 },
}

impl From<LevyCharacteristics> for Perturbation {
    fn from(b: LevyCharacteristics) -> Self {
        Perturbation::Levy(b)
    }
}

impl Perturbation {
    pub fn beta(&self) -> f64 {
        match self {
            Perturbation::Levy(b) => b.beta(),
            _ => 0.0,
        }
    }

    /// Whether B̂𝟙 = 0.
    pub fn annihilates_constants(&self) -> bool {
        match self {
            Perturbation::RankOne { weight, .. } => *weight == 0.0,
            _ => true,
        }
    }

    /// A default order: a tenth of the way from the smallest admissible order to the base index.
    pub fn default_rho(&self, base_index: f64) -> Result<f64> {
        match self {
            Perturbation::Levy(b) => {
                let mut lo = b.beta();
                if b.drift_at(0.0) != 0.0 || b.compensated_drift_at(0.0) != 0.0 || b.beta() >= 1.0 {
                    lo = lo.max(1.0);
                }
                let top = base_index.min(1.999);
                if top <= lo {
                    return Err(Error::InvalidParameter(format!(
                        "no admissible order: need rho in ({lo}, {top})"
                    )));
                }
                Ok(lo + 0.1 * (top - lo))
            }
            _ => Ok((0.5 * base_index).min(1.0)),
        }
    }

    pub fn prepare(&self, grid: &Grid, rho: f64) -> Result<Arc<Prepared>> {
        match self {
            Perturbation::Zero => Ok(Arc::new(Prepared::zero(grid))),
            Perturbation::RankOne { point, weight } => {
                if *point < grid.x_min() || *point > grid.x_max() {
                    return Err(Error::InvalidParameter(format!("point {point} outside the window")));
                }
                Ok(Arc::new(Prepared::rank_one(grid, *point, *weight)))
            }
            Perturbation::Levy(b) => {
                b.check_order(grid, rho)?;
                b.checked_bounds(grid)?;
                b.prepare(grid, rho)
            }
        }
    }

    /// C with ‖B̂g‖_∞ ≤ C ‖g‖_{C^ρ}.
    pub fn bound_constant(&self, grid: &Grid) -> Result<f64> {
        match self {
            Perturbation::Zero => Ok(0.0),
            Perturbation::RankOne { weight, .. } => Ok(weight.abs()),
            Perturbation::Levy(b) => {
                let d = b.checked_bounds(grid)?;
                Ok(d.b_sup + 2.0 * d.mu_beta)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DysonConfig {
    pub series_tol: f64,
    /// M, number of mesh intervals per step.
    pub time_nodes: usize,
    /// p of the graded mesh; `ceil(1/(1-ρ/s)) + 1` when unset.
    pub grading_power: Option<f64>,
    pub max_order: usize,
    /// Δ.
    pub step: f64,
    /// Perturbation order ρ; chosen from β and the base index when unset.
    pub rho: Option<f64>,
    /// Largest quadrature residual accepted for an assembled matrix.
    pub residual_tol: f64,
}

impl Default for DysonConfig {
    fn default() -> Self {
        Self {
            series_tol: 1e-8,
            time_nodes: 64,
            grading_power: None,
            max_order: 30,
            step: 0.05,
            rho: None,
            residual_tol: 1e-3,
        }
    }
}

impl DysonConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.series_tol > 0.0) {
            return bad(format!("series_tol must be > 0, got {}", self.series_tol));
        }
        if self.time_nodes < 4 || self.time_nodes % 2 != 0 {
            return bad(format!("time_nodes must be even and >= 4, got {}", self.time_nodes));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be > 0, got {}", self.step));
        }
        if !(self.residual_tol > 0.0) {
            return bad(format!("residual_tol must be > 0, got {}", self.residual_tol));
        }
        if self.max_order == 0 {
            return bad("max_order must be >= 1".into());
        }
        if let Some(p) = self.grading_power {
            if !(p >= 1.0) {
                return bad(format!("grading_power must be >= 1, got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub t: Option<f64>,
    pub lambda: Option<f64>,
    pub truncation_order: usize,
    pub residual: f64,
    /// Measured ∫_0^Δ ‖B̂T(s)‖ ds.
    pub contraction: f64,
    pub rho: f64,
    pub grading_power: f64,
    pub time_nodes: usize,
}

/// Terms `S_0(t)f … S_N(t)f` and their sup norms.
#[derive(Debug, Clone)]
pub struct DysonTerms {
    pub terms: Vec<GridFunction>,
    pub norms: Vec<f64>,
}

impl DysonTerms {
    pub fn sum(&self) -> GridFunction {
        let mut acc = self.terms[0].clone();
        for t in &self.terms[1..] {
            acc = acc.axpy(1.0, t);
        }
        acc
    }

    /// Largest ratio ‖S_{n+1}‖/‖S_n‖ over n ≥ 1.
    pub fn decay_ratio(&self) -> f64 {
        self.norms
            .windows(2)
            .skip(1)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

/// `S(t)f` with bookkeeping.
#[derive(Debug, Clone)]
pub struct Solution {
    pub value: GridFunction,
    pub residual: f64,
    pub steps: usize,
    pub max_order: usize,
}

#[derive(Debug, Clone)]
pub struct ResolventOutcome {
    pub value: GridFunction,
    pub terms: usize,
    /// Last observed ‖g_{k+1}‖/‖g_k‖.
    pub ratio: f64,
}

struct Mesh {
    delta: Vec<f64>,
    step: Vec<Arc<Kernel>>,
    half: Vec<Arc<Kernel>>,
    mid: Vec<Arc<Kernel>>,
    full: Arc<Kernel>,
    coarse: Option<Box<Mesh>>,
}

/// Result of one series evaluation.
struct SeriesOut {
    sum: Vec<f64>,
    ext: Extension,
    terms: Vec<GridFunction>,
    norms: Vec<f64>,
    order: usize,
    residual: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Order {
    Adaptive,
    Fixed(usize),
}

/// Base semigroup, prepared perturbation and configuration.
pub struct Engine<'a> {
    base: &'a BaseSemigroup,
    pert: Perturbation,
    rho: f64,
    cfg: DysonConfig,
    grading: f64,
    op: Arc<Prepared>,
    contraction: f64,
    meshes: Mutex<HashMap<(u64, bool), Arc<Mesh>>>,
}

impl<'a> Engine<'a> {
    pub fn new(base: &'a BaseSemigroup, pert: Perturbation, cfg: DysonConfig) -> Result<Self> {
        cfg.validate()?;
        let s = base.index();
        let rho = match cfg.rho {
            Some(r) => r,
            None => pert.default_rho(s)?,
        };
        if matches!(pert, Perturbation::Levy(_)) && !(rho > pert.beta() && rho <= base.rho_max() && rho < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "rho = {rho} must lie in (beta, rho_max] = ({}, {}]",
                pert.beta(),
                base.rho_max()
            )));
        }
        let grading = match cfg.grading_power {
            Some(p) => p,
            None => {
                let r = (rho / s).min(0.95);
                (1.0 / (1.0 - r)).ceil() + 1.0
            }
        };
        let op = pert.prepare(base.grid(), rho)?;
        let mut e = Self {
            base,
            pert,
            rho,
            cfg,
            grading,
            op,
            contraction: 0.0,
            meshes: Mutex::new(HashMap::new()),
        };
        e.contraction = e.measure_contraction(cfg.step)?;
        if e.contraction >= 1.0 {
            return Err(Error::SeriesContraction {
                estimate: e.contraction,
                step: cfg.step,
            });
        }
        Ok(e)
    }

    pub fn base(&self) -> &BaseSemigroup {
        self.base
    }
    pub fn perturbation(&self) -> &Perturbation {
        &self.pert
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn config(&self) -> &DysonConfig {
        &self.cfg
    }
    pub fn grading_power(&self) -> f64 {
        self.grading
    }
    pub fn operator(&self) -> &Prepared {
        &self.op
    }
    /// Measured ∫_0^Δ ‖B̂T(s)‖ ds at the configured step (≥ ½ is a warning sign).
    pub fn contraction(&self) -> f64 {
        self.contraction
    }
    fn grid(&self) -> &Grid {
        self.base.grid()
    }

    fn mesh(&self, t: f64, coarse: bool) -> Result<Arc<Mesh>> {
        let key = (t.to_bits(), coarse);
        if let Some(m) = self.meshes.lock().expect("mesh cache").get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(self.build_mesh(t, self.cfg.time_nodes, coarse)?);
        let mut cache = self.meshes.lock().expect("mesh cache");
        if cache.len() >= 24 {
            cache.clear();
        }
        Ok(cache.entry(key).or_insert(m).clone())
    }

    fn build_mesh(&self, t: f64, m: usize, coarse: bool) -> Result<Mesh> {
        let p = self.grading;
        let s: Vec<f64> = (0..=m).map(|j| t * (j as f64 / m as f64).powf(p)).collect();
        let delta: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
        let kern = |tt: f64| self.base.kernel_transient(tt);
        let triples: Vec<Result<(Arc<Kernel>, Arc<Kernel>, Arc<Kernel>)>> = parallel::map_indexed(m, |k| {
            let d = delta[k];
            Ok((kern(d)?, kern(0.5 * d)?, kern(s[k] + 0.5 * d)?))
        });
        let mut step = Vec::with_capacity(m);
        let mut half = Vec::with_capacity(m);
        let mut mid = Vec::with_capacity(m);
        for r in triples {
            let (a, b, c) = r?;
            step.push(a);
            half.push(b);
            mid.push(c);
        }
        let coarse = if coarse {
            Some(Box::new(self.build_mesh(t, m / 2, false)?))
        } else {
            None
        };
        Ok(Mesh {
            delta,
            step,
            half,
            mid,
            full: self.base.kernel(t)?,
            coarse,
        })
    }

    #[inline]
    fn conv(&self, k: &Kernel, v: &[f64], ext: Extension) -> Vec<f64> {
        convolve_unchecked(&GridFunction::from_parts(*self.grid(), v.to_vec(), ext), k).into_values()
    }

    #[inline]
    fn bhat(&self, v: &[f64], ext: Extension) -> Vec<f64> {
        self.op
            .apply(&GridFunction::from_parts(*self.grid(), v.to_vec(), ext))
            .into_values()
    }

    /// First term on a mesh: values at every mesh node.
    fn first_term(&self, mesh: &Mesh, f: &GridFunction, ext: Extension) -> Vec<Vec<f64>> {
        let n = self.grid().n();
        let mut nodes = Vec::with_capacity(mesh.delta.len() + 1);
        let mut w = vec![0.0; n];
        nodes.push(w.clone());
        for k in 0..mesh.delta.len() {
            let d = mesh.delta[k];
            let g = convolve_unchecked(f, &mesh.mid[k]);
            let b = self.bhat(g.values(), g.extension());
            let inc = self.conv(&mesh.half[k], &b, ext);
            w = self.conv(&mesh.step[k], &w, ext);
            for (a, c) in w.iter_mut().zip(&inc) {
                *a += d * c;
            }
            nodes.push(w.clone());
        }
        nodes
    }

    fn series(&self, t: f64, f: &GridFunction, order: Order, want_residual: bool, keep_terms: bool) -> Result<SeriesOut> {
        let mesh = self.mesh(t, want_residual)?;
        let s0 = convolve_unchecked(f, &mesh.full);
        let mut ext = s0.extension();
        let mut sum = s0.values().to_vec();
        let mut norms = vec![s0.sup_norm()];
        let mut terms = Vec::new();
        if keep_terms {
            terms.push(s0);
        }
        let target = match order {
            Order::Fixed(n) => n,
            Order::Adaptive => self.cfg.max_order,
        };
        if target == 0 || matches!(self.pert, Perturbation::Zero) {
            if let Order::Fixed(n) = order {
                for _ in 0..n {
                    norms.push(0.0);
                    if keep_terms {
                        terms.push(GridFunction::zeros(*self.grid(), ext));
                    }
                }
            }
            return Ok(SeriesOut {
                sum,
                ext,
                terms,
                norms,
                order: 0,
                residual: 0.0,
            });
        }
        let term_ext = self.op.output_extension(f.extension());
        let mut nodes = self.first_term(&mesh, f, term_ext);
        let mut quad_err = 0.0;
        if let Some(c) = &mesh.coarse {
            let coarse = self.first_term(c, f, term_ext);
            let fine = nodes.last().expect("mesh nodes");
            let rough = coarse.last().expect("mesh nodes");
            quad_err = fine
                .iter()
                .zip(rough)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / 3.0;
        }
        let mut n_done = 1;
        loop {
            let last = nodes.last().expect("mesh nodes");
            let norm = last.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ext = combine_ext(ext, term_ext);
            for (a, b) in sum.iter_mut().zip(last) {
                *a += b;
            }
            norms.push(norm);
            if keep_terms {
                terms.push(GridFunction::from_parts(*self.grid(), last.clone(), term_ext));
            }
            let done = match order {
                Order::Fixed(k) => n_done >= k,
                Order::Adaptive => norm < self.cfg.series_tol,
            };
            if done {
                break;
            }
            if n_done >= target {
                return Err(Error::NonConvergent {
                    max_order: target,
                    last_norm: norm,
                });
            }
            let bu: Vec<Vec<f64>> = nodes.iter().map(|v| self.bhat(v, term_ext)).collect();
            let n = self.grid().n();
            let mut next = Vec::with_capacity(nodes.len());
            let mut w = vec![0.0; n];
            next.push(w.clone());
            for k in 0..mesh.delta.len() {
                let hd = 0.5 * mesh.delta[k];
                for (a, b) in w.iter_mut().zip(&bu[k]) {
                    *a += hd * b;
                }
                w = self.conv(&mesh.step[k], &w, term_ext);
                for (a, b) in w.iter_mut().zip(&bu[k + 1]) {
                    *a += hd * b;
                }
                next.push(w.clone());
            }
            nodes = next;
            n_done += 1;
        }
        let k = norms.len() - 1;
        let last = norms[k];
        let trunc = if k >= 2 && norms[k - 1] > 0.0 && last < norms[k - 1] {
            let q = last / norms[k - 1];
            last * q / (1.0 - q)
        } else {
            last
        };
        let higher: f64 = if norms[1] > 0.0 {
            norms[1..].iter().sum::<f64>() / norms[1]
        } else {
            1.0
        };
        Ok(SeriesOut {
            sum,
            ext,
            terms,
            norms,
            order: n_done,
            residual: trunc + quad_err * higher,
        })
    }

    /// B̂T(s)f with the bound ‖B̂T(s)f‖ ≤ C φ(s) ‖f‖ asserted.
    pub fn bt_apply(&self, s: f64, f: &GridFunction) -> Result<GridFunction> {
        let g = self.base.apply(s, f)?;
        let out = match &self.pert {
            Perturbation::Levy(b) => crate::levyop::apply_perturbation(b, &g, self.rho)?,
            _ => self.op.apply(&g),
        };
        let c = self.pert.bound_constant(self.grid())?;
        let phi = match &self.pert {
            Perturbation::Levy(_) => self.base.phi(self.rho)?.eval(s),
            _ => 1.0,
        };
        let bound = c * phi * f.sup_norm();
        if out.sup_norm() > bound * (1.0 + 1e-6) + 1e-12 {
            return Err(Error::BoundViolated(format!(
                "‖B̂T(s)f‖ = {:.6e} exceeds C·φ(s)·‖f‖ = {bound:.6e} at s = {s}",
                out.sup_norm()
            )));
        }
        Ok(out)
    }

    /// `S_0(t)f … S_N(t)f` for t up to the configured step.
    pub fn terms(&self, t: f64, f: &GridFunction, n: usize) -> Result<DysonTerms> {
        self.check_fn(f)?;
        if !(t > 0.0) || t > self.cfg.step * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "series time {t} must lie in (0, step = {}]",
                self.cfg.step
            )));
        }
        let out = self.series(t, f, Order::Fixed(n), false, true)?;
        Ok(DysonTerms {
            terms: out.terms,
            norms: out.norms,
        })
    }

    fn check_fn(&self, f: &GridFunction) -> Result<()> {
        if f.grid() != self.grid() {
            return Err(Error::LengthMismatch {
                expected: self.grid().n(),
                got: f.grid().n(),
            });
        }
        Ok(())
    }

    /// One series step of length `t <= Δ`, summed until the next term is below tolerance.
    pub fn step(&self, t: f64, f: &GridFunction) -> Result<Solution> {
        self.check_fn(f)?;
        let out = self.series(t, f, Order::Adaptive, true, false)?;
        Ok(Solution {
            value: GridFunction::from_parts(*self.grid(), out.sum, out.ext),
            residual: out.residual,
            steps: 1,
            max_order: out.order,
        })
    }

    /// S(t)f: `ceil(t/Δ)` equal series steps.
    pub fn solve(&self, t: f64, f: &GridFunction) -> Result<Solution> {
        self.check_fn(f)?;
        if t < 0.0 || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(Solution {
                value: f.clone(),
                residual: 0.0,
                steps: 0,
                max_order: 0,
            });
        }
        let m = ((t / self.cfg.step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let tau = t / m as f64;
        let mut g = f.clone();
        let mut residual = 0.0;
        let mut max_order = 0;
        for _ in 0..m {
            let s = self.step(tau, &g)?;
            residual += s.residual;
            max_order = max_order.max(s.max_order);
            g = s.value;
        }
        Ok(Solution {
            value: g,
            residual,
            steps: m,
            max_order,
        })
    }

    /// Matrix of S(Δ) on nodal hat functions plus the two constant-correction columns.
    pub fn one_step_matrix(&self) -> Result<OperatorMatrix> {
        let grid = *self.grid();
        let n = grid.n();
        let delta = self.cfg.step;
        let samples = [n / 8, 3 * n / 8, 5 * n / 8, 7 * n / 8];
        let cols: Vec<Result<(Vec<f64>, usize, f64)>> = parallel::map_indexed(n, |j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let f = GridFunction::from_parts(grid, e, Extension::Zero);
            let r = samples.contains(&j);
            let out = self.series(delta, &f, Order::Adaptive, r, false)?;
            Ok((out.sum, out.order, out.residual))
        });
        let mut entries = vec![0.0; n * n];
        let mut order = 0;
        let mut residual: f64 = 0.0;
        for (j, c) in cols.into_iter().enumerate() {
            let (v, o, r) = c?;
            order = order.max(o);
            residual = residual.max(r);
            for (i, x) in v.into_iter().enumerate() {
                entries[i * n + j] = x;
            }
        }
        let half = n / 2;
        let left_fn = GridFunction::from_parts(
            grid,
            (0..n).map(|i| if i < half { 1.0 } else { 0.0 }).collect(),
            Extension::Constant,
        );
        let right_fn = GridFunction::from_parts(
            grid,
            (0..n).map(|i| if i < half { 0.0 } else { 1.0 }).collect(),
            Extension::Constant,
        );
        let sl = self.series(delta, &left_fn, Order::Adaptive, true, false)?;
        let sr = self.series(delta, &right_fn, Order::Adaptive, true, false)?;
        residual = residual.max(sl.residual).max(sr.residual);
        order = order.max(sl.order).max(sr.order);
        if residual > self.cfg.residual_tol {
            return Err(Error::ResidualTooLarge {
                residual,
                tol: self.cfg.residual_tol,
            });
        }
        let corr = |s: &[f64], lo: usize, hi: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let row = &entries[i * n..(i + 1) * n];
                    s[i] - row[lo..hi].iter().sum::<f64>()
                })
                .collect()
        };
        let corr_left = corr(&sl.sum, 0, half);
        let corr_right = corr(&sr.sum, half, n);
        Ok(OperatorMatrix {
            grid,
            entries,
            corr_left,
            corr_right,
            constant_output: self.op.output_extension(Extension::Zero) == Extension::Constant,
            meta: StepMeta {
                t: Some(delta),
                lambda: None,
                truncation_order: order,
                residual,
                contraction: self.contraction,
                rho: self.rho,
                grading_power: self.grading,
                time_nodes: self.cfg.time_nodes,
            },
        })
    }

    /// (λ - (Â+B̂))^{-1} f = R(λ) Σ_k (B̂R(λ))^k f.
    pub fn resolvent(&self, lambda: f64, f: &GridFunction, tol: f64) -> Result<ResolventOutcome> {
        self.check_fn(f)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
        }
        let mut g = f.clone();
        let mut acc = f.clone();
        let mut prev = f.sup_norm();
        let mut growing = 0;
        let mut ratio = 0.0;
        let mut terms = 0;
        if prev > 0.0 && !matches!(self.pert, Perturbation::Zero) {
            for _ in 0..10_000 {
                g = self.op.apply(&self.base.resolvent(lambda, &g)?);
                terms += 1;
                let nk = g.sup_norm();
                acc = acc.axpy(1.0, &g);
                ratio = nk / prev;
                if ratio >= 1.0 {
                    growing += 1;
                    if growing >= 3 {
                        return Err(Error::NeumannDivergence { lambda, ratio });
                    }
                } else {
                    growing = 0;
                }
                if nk == 0.0 || nk < tol * (1.0 - ratio.min(0.99)) {
                    break;
                }
                prev = nk;
            }
        }
        Ok(ResolventOutcome {
            value: self.base.resolvent(lambda, &acc)?,
            terms,
            ratio,
        })
    }

    /// max over probes of ‖B̂R(λ)p‖/‖p‖.
    pub fn br_norm(&self, lambda: f64, probes: &[GridFunction]) -> Result<f64> {
        let mut best: f64 = 0.0;
        for p in probes {
            self.check_fn(p)?;
            let s = p.sup_norm();
            if s == 0.0 {
                return Err(Error::InvalidParameter("probe functions must be nonzero".into()));
            }
            let v = self.op.apply(&self.base.resolvent(lambda, p)?).sup_norm() / s;
            best = best.max(v);
        }
        Ok(best)
    }

    /// ∫_0^∞ e^{-λt} S(t)f dt from the trajectory: S(kΔ)f by the matrix (or series steps),
    /// Gauss–Legendre within each step, dyadic refinement towards t = 0.
    pub fn laplace_transform(&self, lambda: f64, f: &GridFunction, matrix: Option<&OperatorMatrix>) -> Result<GridFunction> {
        self.check_fn(f)?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        let delta = matrix.and_then(|m| m.meta.t).unwrap_or(self.cfg.step);
        let k_max = ((1.0 / (1e-8 * lambda)).ln().max(1.0) / (lambda * delta)).ceil() as usize;
        let rule = rule8();
        let grid = *self.grid();
        let run = |tau: f64, g: &GridFunction| -> Result<GridFunction> {
            let out = self.series(tau, g, Order::Adaptive, false, false)?;
            Ok(GridFunction::from_parts(grid, out.sum, out.ext))
        };
        let mut acc = GridFunction::zeros(grid, f.extension());
        // first interval: dyadic panels [Δ 2^{-l-1}, Δ 2^{-l}]
        let levels = 12;
        let eps = delta * 0.5f64.powi(levels);
        acc = acc.axpy(eps, f);
        for l in 0..levels {
            let hi = delta * 0.5f64.powi(l);
            let lo = 0.5 * hi;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let tau = lo + (hi - lo) * x;
                let s = run(tau, f)?;
                acc = acc.axpy(w * (hi - lo) * (-lambda * tau).exp(), &s);
            }
        }
        let mut g = f.clone();
        for k in 1..k_max {
            g = match matrix {
                Some(m) => m.apply(&g),
                None => run(delta, &g)?,
            };
            let t0 = k as f64 * delta;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let tau = delta * x;
                let s = run(tau, &g)?;
                acc = acc.axpy(w * delta * (-lambda * (t0 + tau)).exp(), &s);
            }
        }
        Ok(acc)
    }

    /// ∫_0^Δ max_i ‖(B̂T(s))_{i·}‖_1 ds over sampled rows.
    fn measure_contraction(&self, delta: f64) -> Result<f64> {
        if matches!(self.pert, Perturbation::Zero) {
            return Ok(0.0);
        }
        let grid = *self.grid();
        let n = grid.n();
        let picks: Vec<usize> = (0..17).map(|k| (k * (n - 1)) / 16).collect();
        let rows: Vec<(Vec<f64>, f64)> = picks
            .iter()
            .map(|&i| {
                let r = &self.op.rows()[i];
                // reversed row so that correlation with the kernel gives r·P
                let mut v = vec![0.0; n];
                for (c, w) in r.cols.iter().zip(&r.vals) {
                    v[n - 1 - *c as usize] = *w;
                }
                (v, r.left.abs() + r.right.abs())
            })
            .collect();
        let m = self.cfg.time_nodes;
        let p = self.grading;
        let s: Vec<f64> = (0..=m).map(|j| delta * (j as f64 / m as f64).powf(p)).collect();
        let parts: Vec<Result<f64>> = parallel::map_indexed(m, |k| {
            let d = s[k + 1] - s[k];
            let kern = self.base.kernel_transient(s[k] + 0.5 * d)?;
            let worst = rows
                .iter()
                .map(|(v, ext)| {
                    let c = convolve_unchecked(&GridFunction::from_parts(grid, v.clone(), Extension::Zero), &kern);
                    c.values().iter().map(|x| x.abs()).sum::<f64>() + ext
                })
                .fold(0.0, f64::max);
            Ok(d * worst)
        });
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }
}

/// Dense one-step operator: `out = M v + v(-1) c_L + v(n) c_R`, where the
/// correction columns carry the action on the extension of `v` (Constant extension only).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    grid: Grid,
    entries: Vec<f64>,
    corr_left: Vec<f64>,
    corr_right: Vec<f64>,
    constant_output: bool,
    pub meta: StepMeta,
}

impl OperatorMatrix {
    /// Identity (the t → 0 limit).
    pub fn identity(grid: &Grid) -> Self {
        let n = grid.n();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            grid: *grid,
            entries,
            corr_left: vec![0.0; n],
            corr_right: vec![0.0; n],
            constant_output: false,
            meta: StepMeta {
                t: Some(0.0),
                lambda: None,
                truncation_order: 0,
                residual: 0.0,
                contraction: 0.0,
                rho: 0.0,
                grading_power: 1.0,
                time_nodes: 0,
            },
        }
    }

    /// Matrix of the base semigroup at `t` (no perturbation).
    pub fn from_base(base: &BaseSemigroup, t: f64) -> Result<Self> {
        let grid = *base.grid();
        let n = grid.n();
        let k = base.kernel(t)?;
        let mut m = Self::identity(&grid);
        for i in 0..n {
            for j in 0..n {
                m.entries[i * n + j] = k.weight(j as isize - i as isize);
            }
        }
        let half = n / 2;
        let side = |left: bool| -> Vec<f64> {
            let f = GridFunction::from_parts(
                grid,
                (0..n).map(|i| if (i < half) == left { 1.0 } else { 0.0 }).collect(),
                Extension::Constant,
            );
            let s = convolve_unchecked(&f, &k);
            (0..n)
                .map(|i| {
                    let row = &m.entries[i * n..(i + 1) * n];
                    let part: f64 = if left { row[..half].iter().sum() } else { row[half..].iter().sum() };
                    s.values()[i] - part
                })
                .collect()
        };
        m.corr_left = side(true);
        m.corr_right = side(false);
        m.meta.t = Some(t);
        Ok(m)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn n(&self) -> usize {
        self.grid.n()
    }
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n() + j]
    }
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.entries[i * n..(i + 1) * n]
    }
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
    pub fn corrections(&self) -> (&[f64], &[f64]) {
        (&self.corr_left, &self.corr_right)
    }
    pub fn constant_output(&self) -> bool {
        self.constant_output
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        let n = self.n();
        let v = f.values();
        let constant = f.extension() == Extension::Constant;
        let (l, r) = (f.extended(-1), f.extended(n as isize));
        let out = parallel::map_indexed(n, |i| {
            let row = self.row(i);
            let mut acc: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            if constant {
                acc += l * self.corr_left[i] + r * self.corr_right[i];
            }
            acc
        });
        let ext = if constant || self.constant_output {
            Extension::Constant
        } else {
            Extension::Zero
        };
        GridFunction::from_parts(self.grid, out, ext)
    }

    /// Row sums including both correction columns, i.e. the image of 𝟙.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.row(i).iter().sum::<f64>() + self.corr_left[i] + self.corr_right[i])
            .collect()
    }

    /// Smallest entry, correction columns included.
    pub fn min_entry(&self) -> f64 {
        self.entries
            .iter()
            .chain(&self.corr_left)
            .chain(&self.corr_right)
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV dump: `#` header with the step metadata, then one row per node
    /// (`n` entries followed by the left and right correction).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let meta = serde_json::to_string(&self.meta).map_err(std::io::Error::other)?;
        writeln!(out, "# n={} x_min={} x_max={} meta={}", self.n(), self.grid.x_min(), self.grid.x_max(), meta)?;
        for i in 0..self.n() {
            let mut line = String::with_capacity(self.n() * 24);
            for v in self.row(i) {
                line.push_str(&format!("{v:.17e},"));
            }
            line.push_str(&format!("{:.17e},{:.17e}", self.corr_left[i], self.corr_right[i]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"FELLMAT1";

    /// Little-endian binary dump: magic, n, window, metadata JSON, entries, corrections.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        out.write_all(Self::MAGIC)?;
        out.write_all(&(self.n() as u64).to_le_bytes())?;
        out.write_all(&self.grid.x_min().to_le_bytes())?;
        out.write_all(&self.grid.x_max().to_le_bytes())?;
        out.write_all(&[self.constant_output as u8])?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        for v in self.entries.iter().chain(&self.corr_left).chain(&self.corr_right) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::InvalidParameter(format!("matrix dump: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(Error::InvalidParameter("not a matrix dump".into()));
        }
        let mut b8 = [0u8; 8];
        let mut u64_ = |inp: &mut R| -> Result<u64> {
            inp.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = u64_(&mut input)? as usize;
        let x_min = f64::from_bits(u64_(&mut input)?);
        let x_max = f64::from_bits(u64_(&mut input)?);
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag).map_err(io)?;
        let len = u64_(&mut input)? as usize;
        let mut meta = vec![0u8; len];
        input.read_exact(&mut meta).map_err(io)?;
        let meta: StepMeta =
            serde_json::from_slice(&meta).map_err(|e| Error::InvalidParameter(format!("matrix dump meta: {e}")))?;
        let grid = Grid::new(x_min, x_max, n)?;
        let mut vals = vec![0.0; n * n + 2 * n];
        for v in vals.iter_mut() {
            *v = f64::from_bits(u64_(&mut input)?);
        }
        let corr_right = vals.split_off(n * n + n);
        let corr_left = vals.split_off(n * n);
        Ok(Self {
            grid,
            entries: vals,
            corr_left,
            corr_right,
            constant_output: flag[0] != 0,
            meta,
        })
    }
}

fn engine<'a>(b: &Perturbation, t: &'a BaseSemigroup, cfg: &DysonConfig) -> Result<Engine<'a>> {
    Engine::new(t, b.clone(), *cfg)
}

/// B̂T(s)f.
pub fn bt_apply(b: &Perturbation, t: &BaseSemigroup, s: f64, f: &GridFunction, rho: f64) -> Result<GridFunction> {
    let cfg = DysonConfig {
        rho: Some(rho),
        ..DysonConfig::default()
    };
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("s must be > 0, got {s}")));
    }
    engine(b, t, &cfg)?.bt_apply(s, f)
}

pub fn dyson_phillips_terms(
    b: &Perturbation,
    t: &BaseSemigroup,
    time: f64,
    f: &GridFunction,
    n: usize,
    cfg: &DysonConfig,
) -> Result<DysonTerms> {
    engine(b, t, cfg)?.terms(time, f, n)
}

pub fn duhamel_solve(b: &Perturbation, t: &BaseSemigroup, time: f64, f: &GridFunction, cfg: &DysonConfig) -> Result<Solution> {
    engine(b, t, cfg)?.solve(time, f)
}

pub fn one_step_matrix(b: &Perturbation, t: &BaseSemigroup, delta: f64, cfg: &DysonConfig) -> Result<OperatorMatrix> {
    let cfg = DysonConfig { step: delta, ..*cfg };
    engine(b, t, &cfg)?.one_step_matrix()
}

/// M^m f, with the constant correction applied at every step.
pub fn propagate(m: &OperatorMatrix, steps: usize, f: &GridFunction) -> Result<GridFunction> {
    if steps == 0 {
        return Err(Error::InvalidParameter("propagate needs m >= 1".into()));
    }
    if f.grid() != m.grid() {
        return Err(Error::LengthMismatch {
            expected: m.n(),
            got: f.grid().n(),
        });
    }
    let mut g = m.apply(f);
    for _ in 1..steps {
        g = m.apply(&g);
    }
    Ok(g)
}

pub fn perturbed_resolvent(
    b: &Perturbation,
    t: &BaseSemigroup,
    lambda: f64,
    f: &GridFunction,
    tol: f64,
    cfg: &DysonConfig,
) -> Result<GridFunction> {
    Ok(engine(b, t, cfg)?.resolvent(lambda, f, tol)?.value)
}

pub fn estimate_br_norm(
    b: &Perturbation,
    t: &BaseSemigroup,
    lambda: f64,
    probes: &[GridFunction],
    cfg: &DysonConfig,
) -> Result<f64> {
    engine(b, t, cfg)?.br_norm(lambda, probes)
}

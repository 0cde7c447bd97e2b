//! Euler–Maruyama Monte Carlo for `dX = b(X)dt + σ(X)dL + κ(X)dM`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::distributions::{Distribution, Open01};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::{Extension, GridFunction};
use crate::levyop::RealFn;
use crate::parallel;

const CHUNK: usize = 1024;

/// Symmetric α-stable variate with characteristic function `exp(-|ξ|^α)` (Chambers–Mallows–Stuck).
pub fn sample_stable(alpha: f64, u1: f64, u2: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if !(u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0) {
        return Err(Error::InvalidParameter("uniforms must lie in (0, 1)".into()));
    }
    Ok(cms(alpha, u1, u2))
}

#[inline]
fn cms(alpha: f64, u1: f64, u2: f64) -> f64 {
    let v = PI * (u1 - 0.5);
    let w = -u2.ln();
    if alpha == 1.0 {
        return v.tan();
    }
    if alpha == 2.0 {
        return 2.0 * v.sin() * w.sqrt();
    }
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Driver {
    /// Generator d²/dx² (variance 2t).
    Brownian,
    Stable(f64),
}

impl Driver {
    fn alpha(&self) -> f64 {
        match self {
            Driver::Brownian => 2.0,
            Driver::Stable(a) => *a,
        }
    }
}

#[derive(Clone)]
pub enum SecondaryDriver {
    Stable(f64),
    /// Jumps arrive at `rate`; sizes are `quantile(U)`.
    CompoundPoisson { rate: f64, quantile: RealFn },
}

#[derive(Clone)]
pub struct Secondary {
    pub kappa: RealFn,
    pub driver: SecondaryDriver,
}

#[derive(Clone)]
pub struct SdeSpec {
    pub drift: RealFn,
    pub diffusion: RealFn,
    pub primary: Driver,
    pub secondary: Option<Secondary>,
    pub x0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl std::fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeSpec")
            .field("primary", &self.primary)
            .field("secondary", &self.secondary.is_some())
            .field("x0", &self.x0)
            .field("t_end", &self.t_end)
            .field("dt", &self.dt)
            .field("n_paths", &self.n_paths)
            .field("seed", &self.seed)
            .finish()
    }
}

impl SdeSpec {
    /// `dX = b dt + dL` with unit diffusion.
    pub fn new(drift: RealFn, primary: Driver) -> Self {
        Self {
            drift,
            diffusion: Arc::new(|_| 1.0),
            primary,
            secondary: None,
            x0: 0.0,
            t_end: 1.0,
            dt: 1e-3,
            n_paths: 100_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be > 0, got {}", self.t_end));
        }
        if self.n_paths < 1000 {
            return bad(format!("n_paths must be >= 1000, got {}", self.n_paths));
        }
        if !self.x0.is_finite() {
            return bad("x0 must be finite".into());
        }
        let a = self.primary.alpha();
        if !(a > 0.0 && a <= 2.0) {
            return bad(format!("alpha must lie in (0, 2], got {a}"));
        }
        if let Some(s) = &self.secondary {
            match &s.driver {
                SecondaryDriver::Stable(a2) if !(*a2 > 0.0 && *a2 <= 2.0) => {
                    return bad(format!("secondary alpha must lie in (0, 2], got {a2}"));
                }
                SecondaryDriver::CompoundPoisson { rate, .. } if !(*rate >= 0.0 && rate.is_finite()) => {
                    return bad(format!("jump rate must be >= 0, got {rate}"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Number of steps and the step actually used (`t_end / steps`).
    pub fn steps(&self) -> (usize, f64) {
        let m = ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (m, self.t_end / m as f64)
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// Seconds.
    pub elapsed: f64,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    Open01.sample(rng)
}

/// One path; symmetric drivers need no compensation drift, for any α.
fn path(spec: &SdeSpec, p: usize, m: usize, dt: f64) -> Result<f64> {
    // symmetric stable drivers carry no compensator, so α ≤ 1 needs no extra drift
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2 * p as u64);
    let mut rng2 = ChaCha8Rng::seed_from_u64(spec.seed);
    rng2.set_stream(2 * p as u64 + 1);
    let alpha = spec.primary.alpha();
    let scale = dt.powf(1.0 / alpha);
    let (sec_scale, poisson) = match spec.secondary.as_ref().map(|s| &s.driver) {
        Some(SecondaryDriver::Stable(a2)) => (dt.powf(1.0 / a2), None),
        Some(SecondaryDriver::CompoundPoisson { rate, .. }) => (
            1.0,
            if *rate > 0.0 {
                Some(Poisson::new(rate * dt).map_err(|e| Error::InvalidParameter(e.to_string()))?)
            } else {
                None
            },
        ),
        None => (0.0, None),
    };
    let mut x = spec.x0;
    for k in 0..m {
        let z = cms(alpha, uniform(&mut rng), uniform(&mut rng));
        let mut next = x + (spec.drift)(x) * dt + (spec.diffusion)(x) * scale * z;
        if let Some(s) = &spec.secondary {
            let kick = match &s.driver {
                SecondaryDriver::Stable(a2) => sec_scale * cms(*a2, uniform(&mut rng2), uniform(&mut rng2)),
                SecondaryDriver::CompoundPoisson { quantile, .. } => {
                    let count = poisson.as_ref().map_or(0.0, |d| d.sample(&mut rng2));
                    (0..count as usize).map(|_| quantile(uniform(&mut rng2))).sum()
                }
            };
            next += (s.kappa)(x) * kick;
        }
        if !next.is_finite() {
            return Err(Error::NonFinitePath { path: p, step: k });
        }
        x = next;
    }
    Ok(x)
}

/// Terminal states of all paths, in path order.
pub fn terminal_states(spec: &SdeSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (m, dt) = spec.steps();
    let chunks = spec.n_paths.div_ceil(CHUNK);
    let out: Vec<Result<Vec<f64>>> = parallel::map_indexed(chunks, |c| {
        (c * CHUNK..((c + 1) * CHUNK).min(spec.n_paths))
            .map(|p| path(spec, p, m, dt))
            .collect()
    });
    let mut xs = Vec::with_capacity(spec.n_paths);
    for c in out {
        xs.extend(c?);
    }
    Ok(xs)
}

fn stats(values: &[f64], started: Instant) -> Result<MCResult> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let stderr = (var / n as f64).sqrt();
    if !mean.is_finite() || !stderr.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    Ok(MCResult {
        mean,
        stderr,
        n,
        elapsed: started.elapsed().as_secs_f64(),
    })
}

fn observe(f: &GridFunction) -> GridFunction {
    f.clone().with_extension(Extension::Constant)
}

/// Mean and standard error of `f(X_{t_end})`, f interpolated on its grid with Constant extension.
pub fn simulate_sde(spec: &SdeSpec, f: &GridFunction) -> Result<MCResult> {
    let started = Instant::now();
    let f = observe(f);
    let values: Vec<f64> = terminal_states(spec)?.into_iter().map(|x| f.eval(x)).collect();
    stats(&values, started)
}

/// As [`simulate_sde`], streaming `path,x,f` rows to `out`.
pub fn simulate_sde_csv<W: Write>(spec: &SdeSpec, f: &GridFunction, mut out: W) -> Result<MCResult> {
    let started = Instant::now();
    let f = observe(f);
    let xs = terminal_states(spec)?;
    let io = |e: std::io::Error| Error::InvalidParameter(format!("path csv: {e}"));
    writeln!(out, "path,x,f").map_err(io)?;
    let mut values = Vec::with_capacity(xs.len());
    for (p, x) in xs.iter().enumerate() {
        let v = f.eval(*x);
        writeln!(out, "{p},{x:.17e},{v:.17e}").map_err(io)?;
        values.push(v);
    }
    stats(&values, started)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub z_score: f64,
    pub mc: MCResult,
    pub engine_value: f64,
    /// Same estimate at dt/2 (seed + 1).
    pub half_dt: MCResult,
    /// `2·mean(dt/2) − mean(dt)`.
    pub richardson: f64,
    /// `(mean(dt/2) − mean(dt))` over its combined standard error.
    pub dt_z: f64,
}

impl Comparison {
    pub fn consistent(&self) -> bool {
        self.z_score.abs() <= 3.0
    }
}

/// z-score of the Monte Carlo estimate against `engine_result(x0)`, with a dt-halving re-run.
pub fn compare_mc_pde(spec: &SdeSpec, f: &GridFunction, engine_result: &GridFunction, x0: f64) -> Result<Comparison> {
    let spec = SdeSpec { x0, ..spec.clone() };
    let mc = simulate_sde(&spec, f)?;
    if mc.stderr == 0.0 {
        return Err(Error::ZeroStdErr);
    }
    let half = SdeSpec {
        dt: 0.5 * spec.steps().1,
        seed: spec.seed.wrapping_add(1),
        ..spec.clone()
    };
    let half_dt = simulate_sde(&half, f)?;
    let engine_value = engine_result.eval(x0);
    Ok(Comparison {
        z_score: (mc.mean - engine_value) / mc.stderr,
        mc,
        engine_value,
        half_dt,
        richardson: 2.0 * half_dt.mean - mc.mean,
        dt_z: (half_dt.mean - mc.mean) / mc.stderr.hypot(half_dt.stderr),
    })
}

/// MC-only check: estimates at dt and dt/2 agree within noise.
pub fn dt_self_consistency(spec: &SdeSpec, f: &GridFunction) -> Result<Comparison> {
    let mc = simulate_sde(spec, f)?;
    if mc.stderr == 0.0 {
        return Err(Error::ZeroStdErr);
    }
    let half = SdeSpec {
        dt: 0.5 * spec.steps().1,
        seed: spec.seed.wrapping_add(1),
        ..spec.clone()
    };
    let half_dt = simulate_sde(&half, f)?;
    let dt_z = (half_dt.mean - mc.mean) / mc.stderr.hypot(half_dt.stderr);
    Ok(Comparison {
        z_score: dt_z,
        mc,
        engine_value: half_dt.mean,
        half_dt,
        richardson: 2.0 * half_dt.mean - mc.mean,
        dt_z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakDiff {
    /// |E_n f(X_t) − E_∞ f(X_t)|.
    pub diff: f64,
    /// Standard error of the coupled pathwise difference.
    pub stderr: f64,
}

/// `|E_n[f(X_t)] − E_∞[f(X_t)]|` for each spec, coupled to the limit through common random numbers.
pub fn weak_convergence_study(specs: &[SdeSpec], limit: &SdeSpec, f: &GridFunction) -> Result<Vec<WeakDiff>> {
    let f = observe(f);
    let lim: Vec<f64> = terminal_states(limit)?.into_iter().map(|x| f.eval(x)).collect();
    specs
        .iter()
        .map(|s| {
            if s.n_paths != limit.n_paths || s.seed != limit.seed {
                return Err(Error::InvalidParameter(
                    "sequence members must share n_paths and seed with the limit".into(),
                ));
            }
            let started = Instant::now();
            let d: Vec<f64> = terminal_states(s)?
                .into_iter()
                .zip(&lim)
                .map(|(x, l)| f.eval(x) - l)
                .collect();
            let r = stats(&d, started)?;
            Ok(WeakDiff {
                diff: r.mean.abs(),
                stderr: r.stderr,
            })
        })
        .collect()
}

/// Trend over the last three points: the last is no larger than the others beyond 3 standard errors.
pub fn decreasing_beyond_noise(d: &[WeakDiff]) -> bool {
    let tail = &d[d.len().saturating_sub(3)..];
    match tail.last() {
        None => false,
        Some(last) => tail.iter().all(|p| last.diff <= p.diff + 3.0 * last.stderr.hypot(p.stderr)),
    }
}

/// Draws a standard uniform in (0, 1) from a seeded stream; exposed for sampler tests.
pub fn uniforms(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(Open01)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cms_special_cases() {
        assert!((cms(1.0, 0.75, 0.3) - 1.0).abs() < 1e-14);
        assert_eq!(cms(2.0, 0.5, 0.3), 0.0);
        // the general formula reduces continuously to the special cases
        assert!((cms(1.999999, 0.6, 0.4) - cms(2.0, 0.6, 0.4)).abs() < 1e-4);
        assert!((cms(1.000001, 0.6, 0.4) - cms(1.0, 0.6, 0.4)).abs() < 1e-4);
        assert!(sample_stable(2.5, 0.5, 0.5).is_err());
        assert!(sample_stable(1.0, 0.0, 0.5).is_err());
    }
}

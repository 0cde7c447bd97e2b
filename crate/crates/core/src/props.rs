//! Numerical property checks on assembled operators and computed semigroups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basesg::BaseSemigroup;
use crate::dyson::{propagate, DysonConfig, Engine, OperatorMatrix, Perturbation};
use crate::error::{Error, Result};
use crate::gridfn::{Grid, GridFunction};
use crate::levyop::{DeclaredBounds, LevyCharacteristics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// One verdict together with the number and threshold it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub value: f64,
    pub threshold: f64,
    /// A declared expected failure: the raw outcome is inverted in `verdict`.
    #[serde(default)]
    pub expected_fail: bool,
    /// Outcome before the expected-fail inversion.
    pub raw: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `min_entry ≥ -submarkov_min`.
    pub submarkov_min: f64,
    /// `max row sum ≤ 1 + row_sum`.
    pub row_sum: f64,
    /// `max |row sum - 1| ≤ conservative`.
    pub conservative: f64,
    pub tail_fraction: f64,
    /// `tail sup ≤ tail` counts as C∞ decay.
    pub tail: f64,
    /// Largest accepted growth of `modulus(h)/√h` from 4h to h (an unsmoothed jump gives 2).
    pub sf_growth: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            submarkov_min: 1e-8,
            row_sum: 1e-6,
            conservative: 1e-6,
            tail_fraction: 0.1,
            tail: 1e-3,
            sf_growth: 1.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.submarkov_min,
            self.row_sum,
            self.conservative,
            self.tail,
            self.sf_growth,
        ];
        if all.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("thresholds must be positive and finite".into()));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "tail_fraction must lie in (0, 1/2), got {}",
                self.tail_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubMarkov {
    pub min_entry: f64,
    pub max_row_sum: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusEntry {
    pub h: f64,
    pub modulus: f64,
}

/// Outcome of a coefficient-convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// sup_K |S_n(t)f - S_∞(t)f|.
    pub semigroup: Vec<f64>,
    /// sup_K |R_n(λ)f - R_∞(λ)f|.
    pub resolvent: Vec<f64>,
    pub lambda: f64,
}

impl Convergence {
    pub fn semigroup_decreasing(&self) -> bool {
        eventually_decreasing(&self.semigroup)
    }
    pub fn resolvent_decreasing(&self) -> bool {
        eventually_decreasing(&self.resolvent)
    }
}

/// Positive, finite, and the last value is the minimum of the last three.
pub fn eventually_decreasing(v: &[f64]) -> bool {
    if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return false;
    }
    let tail = &v[v.len().saturating_sub(3)..];
    let last = *tail.last().unwrap();
    tail.iter().all(|x| last <= *x)
}

pub fn check_submarkov(m: &OperatorMatrix, th: &Thresholds) -> SubMarkov {
    let min_entry = m.min_entry();
    let max_row_sum = m.row_sums().into_iter().fold(f64::NEG_INFINITY, f64::max);
    SubMarkov {
        min_entry,
        max_row_sum,
        pass: min_entry >= -th.submarkov_min && max_row_sum <= 1.0 + th.row_sum,
    }
}

/// max_i |row sum_i - 1| (correction columns included).
pub fn check_conservative(m: &OperatorMatrix) -> f64 {
    m.row_sums().into_iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max)
}

/// sup |f| over the outer `tail_fraction` of the window on each side.
pub fn check_cinfty_decay(f: &GridFunction, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "tail_fraction must lie in (0, 1/2), got {tail_fraction}"
        )));
    }
    let n = f.grid().n();
    let k = ((tail_fraction * n as f64).ceil() as usize).max(1);
    let v = f.values();
    Ok(v[..k].iter().chain(&v[n - k..]).map(|x| x.abs()).fold(0.0, f64::max))
}

/// Largest difference of `f` over node pairs at distance `kh`, k ∈ {1, 2, 4}.
pub fn modulus_table(f: &GridFunction) -> Vec<ModulusEntry> {
    let h = f.grid().h();
    let v = f.values();
    [1usize, 2, 4]
        .iter()
        .map(|&k| ModulusEntry {
            h: k as f64 * h,
            modulus: v.windows(k + 1).map(|w| (w[k] - w[0]).abs()).fold(0.0, f64::max),
        })
        .collect()
}

/// Modulus table of `M f_disc`.
pub fn strong_feller_modulus(m: &OperatorMatrix, f_disc: &GridFunction) -> Vec<ModulusEntry> {
    modulus_table(&m.apply(f_disc))
}

/// `[modulus(h)/√h] / [modulus(4h)/√(4h)]`.
pub fn modulus_growth(table: &[ModulusEntry]) -> f64 {
    let first = table.first().expect("modulus table");
    let last = table.last().expect("modulus table");
    let a = first.modulus / first.h.sqrt();
    let b = last.modulus / last.h.sqrt();
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Uses the default 𝟙_[0,∞).
pub fn default_discontinuous(grid: Grid) -> GridFunction {
    GridFunction::step(grid, 0.0)
}

/// sup over nodes of ∫ g dμ(x, ·).
pub fn g_norm<G: Fn(f64) -> f64 + Sync>(b: &LevyCharacteristics, grid: &Grid, g: G) -> f64 {
    b.g_norm(grid, g)
}

/// g_norm with `g = min(|y|^β, 1)`, asserted equal to the β-moment.
pub fn beta_g_norm(b: &LevyCharacteristics, grid: &Grid, beta: f64) -> f64 {
    let v = g_norm(b, grid, |y| y.abs().powf(beta).min(1.0));
    let m = b.beta_moment(grid, beta);
    assert!((v - m).abs() <= 1e-12 * (1.0 + m.abs()), "g_norm {v} != beta_moment {m}");
    v
}

/// sign with sign(0) = 0.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sign * φ_ε` for the Gaussian mollifier of standard deviation ε: `erf(x / (ε√2))`.
pub fn mollified_sign(eps: f64) -> impl Fn(f64) -> f64 + Send + Sync + Clone + 'static {
    move |x| libm::erf(x / (eps * std::f64::consts::SQRT_2))
}

/// Non-increasing in R.
pub fn tightness_monotone(profile: &[f64]) -> bool {
    profile.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15)
}

fn sup_on(f: &GridFunction, k: (f64, f64)) -> impl Fn(&GridFunction) -> f64 + '_ {
    let range = f.grid().indices_in(k.0, k.1);
    move |g: &GridFunction| {
        range
            .clone()
            .map(|i| (g.values()[i] - f.values()[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// `sup_K |S_n(t)f - S_∞(t)f|` and `sup_K |R_n(λ)f - R_∞(λ)f|` for each member of the sequence.
pub fn convergence_experiment(
    base: &BaseSemigroup,
    seq: &[LevyCharacteristics],
    limit: &LevyCharacteristics,
    t: f64,
    f: &GridFunction,
    k: (f64, f64),
    dominating: DeclaredBounds,
    cfg: &DysonConfig,
) -> Result<Convergence> {
    let grid = base.grid();
    let lambda = 10.0;
    for (i, b) in seq.iter().enumerate() {
        let m = b.measured_bounds(grid);
        if m.b_sup > dominating.b_sup * (1.0 + 1e-9) + 1e-12 || m.mu_beta > dominating.mu_beta * (1.0 + 1e-6) + 1e-12
        {
            return Err(Error::UniformBound {
                index: i,
                detail: format!(
                    "sup|b| = {}, beta-moment = {} against ({}, {})",
                    m.b_sup, m.mu_beta, dominating.b_sup, dominating.mu_beta
                ),
            });
        }
    }
    let run = |b: &LevyCharacteristics| -> Result<(GridFunction, GridFunction)> {
        let e = Engine::new(base, Perturbation::Levy(b.clone()), *cfg)?;
        Ok((e.solve(t, f)?.value, e.resolvent(lambda, f, 1e-10)?.value))
    };
    let (s_lim, r_lim) = run(limit)?;
    let ds = sup_on(&s_lim, k);
    let dr = sup_on(&r_lim, k);
    let mut semigroup = Vec::with_capacity(seq.len());
    let mut resolvent = Vec::with_capacity(seq.len());
    for b in seq {
        let (s, r) = run(b)?;
        semigroup.push(ds(&s));
        resolvent.push(dr(&r));
    }
    Ok(Convergence {
        semigroup,
        resolvent,
        lambda,
    })
}

/// Numeric fields and verdicts of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub scenario: String,
    pub min_entry: Option<f64>,
    pub max_row_sum_deviation: Option<f64>,
    pub tail_sup: Option<f64>,
    pub sf_modulus: Vec<ModulusEntry>,
    pub thresholds: Thresholds,
    pub verdicts: BTreeMap<String, CheckOutcome>,
}

impl PropertyReport {
    pub fn new(scenario: impl Into<String>, thresholds: Thresholds) -> Self {
        Self {
            scenario: scenario.into(),
            min_entry: None,
            max_row_sum_deviation: None,
            tail_sup: None,
            sf_modulus: Vec::new(),
            thresholds,
            verdicts: BTreeMap::new(),
        }
    }

    /// Records a verdict; pass iff `value ≤ threshold` (or `≥` when `at_least`).
    pub fn record(&mut self, name: &str, value: f64, threshold: f64, at_least: bool) -> Verdict {
        let ok = value.is_finite() && if at_least { value >= threshold } else { value <= threshold };
        self.record_verdict(name, Verdict::from_bool(ok), value, threshold)
    }

    pub fn record_verdict(&mut self, name: &str, raw: Verdict, value: f64, threshold: f64) -> Verdict {
        self.verdicts.insert(
            name.to_string(),
            CheckOutcome {
                verdict: raw,
                value,
                threshold,
                expected_fail: false,
                raw,
            },
        );
        raw
    }

    /// Turns a failure of `name` into a pass and a pass into a failure.
    pub fn expect_fail(&mut self, name: &str) {
        if let Some(c) = self.verdicts.get_mut(name) {
            c.expected_fail = true;
            c.verdict = match c.raw {
                Verdict::Pass => Verdict::Fail,
                Verdict::Fail => Verdict::Pass,
                Verdict::NotApplicable => Verdict::NotApplicable,
            };
        }
    }

    pub fn submarkov(&mut self, m: &OperatorMatrix) -> SubMarkov {
        let s = check_submarkov(m, &self.thresholds);
        self.min_entry = Some(s.min_entry);
        self.record("submarkov_min_entry", s.min_entry, -self.thresholds.submarkov_min, true);
        self.record("submarkov_row_sum", s.max_row_sum, 1.0 + self.thresholds.row_sum, false);
        s
    }

    pub fn conservative(&mut self, m: &OperatorMatrix) -> f64 {
        let d = check_conservative(m);
        self.max_row_sum_deviation = Some(d);
        self.record("conservative", d, self.thresholds.conservative, false);
        d
    }

    pub fn cinfty(&mut self, f: &GridFunction) -> Result<f64> {
        let v = check_cinfty_decay(f, self.thresholds.tail_fraction)?;
        self.tail_sup = Some(v);
        self.record("cinfty_decay", v, self.thresholds.tail, false);
        Ok(v)
    }

    /// Modulus of `M^steps f_disc`; n/a for the identity surrogate (no smoothing at t = 0).
    pub fn strong_feller(&mut self, m: &OperatorMatrix, steps: usize, f_disc: &GridFunction) -> Result<Vec<ModulusEntry>> {
        let g = propagate(m, steps, f_disc)?;
        let table = modulus_table(&g);
        let growth = modulus_growth(&table);
        self.sf_modulus = table.clone();
        if m.meta.t == Some(0.0) {
            self.record_verdict("strong_feller", Verdict::NotApplicable, growth, self.thresholds.sf_growth);
        } else {
            self.record("strong_feller", growth, self.thresholds.sf_growth, false);
        }
        Ok(table)
    }

    /// Pass if every verdict is pass or n/a.
    pub fn all_pass(&self) -> bool {
        self.verdicts.values().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.verdicts
            .iter()
            .filter(|(_, c)| c.verdict == Verdict::Fail)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

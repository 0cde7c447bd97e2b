//! Executes one scenario: checks, report.json and functions.csv.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use feller_core::dyson::StepMeta;
use feller_core::levyop::DeclaredBounds;
use feller_core::mcsim::{compare_mc_pde, dt_self_consistency, Comparison};
use feller_core::props::{convergence_experiment, default_discontinuous, Convergence};
use feller_core::quad::gauss_legendre;
use feller_core::basesg::RegularityFit;
use feller_core::{BaseSemigroup, Engine, Grid, GridFunction, OperatorMatrix, PropertyReport, Verdict};
use serde::{Deserialize, Serialize};

use crate::config::{
    BaseConfig, BaseSpec, CheckName, GridConfig, McDriver, PerturbationSpec, Profile, Scenario, Tolerances,
};
use crate::{is_divergence, CliError};

/// λ of the two-route resolvent comparison.
pub const RESOLVENT_LAMBDA: f64 = 10.0;
/// λ grid of the ‖B̂R(λ)‖ monotonicity check.
pub const BR_LAMBDAS: [f64; 3] = [1.0, 10.0, 100.0];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub grid_points: Option<usize>,
    pub series_tol: Option<f64>,
    pub dump_matrix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub function: String,
    pub t: f64,
    pub sup: f64,
    pub residual: f64,
    pub steps: usize,
    pub max_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventRecord {
    pub lambda: f64,
    pub neumann_terms: usize,
    pub neumann_ratio: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityRecord {
    pub base: String,
    pub expected_exponent: f64,
    pub fit: RegularityFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub scenario: String,
    pub description: String,
    pub seed: u64,
    pub passed: bool,
    pub exit_code: i32,
    pub error: Option<String>,
    pub parallel: bool,
    pub grid: GridConfig,
    pub tolerances: Tolerances,
    pub rho: Option<f64>,
    pub contraction: Option<f64>,
    pub grading_power: Option<f64>,
    pub matrix: Option<StepMeta>,
    pub properties: PropertyReport,
    pub solutions: Vec<SolutionRecord>,
    pub mc: Option<Comparison>,
    pub resolvent: Option<ResolventRecord>,
    pub br_norms: Vec<(f64, f64)>,
    pub convergence: Option<Convergence>,
    pub regularity: Vec<RegularityRecord>,
    pub gradient_integral: Option<f64>,
    pub config: Scenario,
}

fn base_label(b: &BaseConfig) -> String {
    let law = match b.law {
        BaseSpec::Heat => "heat".to_string(),
        BaseSpec::Cauchy => "cauchy".to_string(),
        BaseSpec::Stable { alpha } => format!("stable({alpha})"),
    };
    if b.killing != 0.0 {
        format!("{law}+killing({})", b.killing)
    } else {
        law
    }
}

/// Applies the command-line overrides.
pub fn effective(s: &Scenario, opts: &RunOptions) -> Result<Scenario, CliError> {
    let mut s = s.clone();
    if let Some(n) = opts.grid_points {
        s.grid.n = n;
    }
    if let Some(t) = opts.series_tol {
        s.tolerances.dyson.series_tol = t;
    }
    s.validate()?;
    Ok(s)
}

struct Ctx<'a> {
    s: &'a Scenario,
    grid: Grid,
    base: &'a BaseSemigroup,
    engine: Option<Engine<'a>>,
    functions: Vec<GridFunction>,
    solutions: Vec<Vec<Option<GridFunction>>>,
    records: Vec<SolutionRecord>,
    matrix: Option<OperatorMatrix>,
    report: RunReport,
    seed: u64,
}

impl<'a> Ctx<'a> {
    fn engine(&self) -> Result<&Engine<'a>, CliError> {
        self.engine
            .as_ref()
            .ok_or_else(|| CliError::Config("check needs a perturbation engine".into()))
    }

    fn solution(&mut self, fi: usize, ti: usize) -> Result<GridFunction, CliError> {
        if let Some(v) = &self.solutions[fi][ti] {
            return Ok(v.clone());
        }
        let t = self.s.times[ti];
        let f = &self.functions[fi];
        let sol = match &self.engine {
            Some(e) => e.solve(t, f)?,
            None => feller_core::dyson::Solution {
                value: self.base.apply(t, f)?,
                residual: 0.0,
                steps: 0,
                max_order: 0,
            },
        };
        self.records.push(SolutionRecord {
            function: self.s.functions[fi].label(),
            t,
            sup: sol.value.sup_norm(),
            residual: sol.residual,
            steps: sol.steps,
            max_order: sol.max_order,
        });
        self.solutions[fi][ti] = Some(sol.value.clone());
        Ok(sol.value)
    }

    fn matrix(&mut self) -> Result<&OperatorMatrix, CliError> {
        if self.matrix.is_none() {
            let m = self.engine()?.one_step_matrix()?;
            self.report.matrix = Some(m.meta.clone());
            self.matrix = Some(m);
        }
        Ok(self.matrix.as_ref().expect("built"))
    }

    fn props(&mut self) -> &mut PropertyReport {
        &mut self.report.properties
    }

    /// Runs `c`; verdicts it produced are inverted when `c` is an expected failure.
    fn run_with_expectation(&mut self, c: CheckName) -> Result<(), CliError> {
        let before: BTreeSet<String> = self.report.properties.verdicts.keys().cloned().collect();
        self.run_check(c)?;
        if self.s.expected_fail.contains(&c) {
            let new: Vec<String> = self
                .report
                .properties
                .verdicts
                .keys()
                .filter(|k| !before.contains(*k))
                .cloned()
                .collect();
            for k in new {
                self.report.properties.expect_fail(&k);
            }
        }
        Ok(())
    }

    fn run_check(&mut self, c: CheckName) -> Result<(), CliError> {
        let tol = self.s.tolerances;
        match c {
            CheckName::Submarkov => {
                let m = self.matrix()?.clone();
                self.props().submarkov(&m);
            }
            CheckName::Conservative => {
                let m = self.matrix()?.clone();
                self.props().conservative(&m);
            }
            CheckName::StrongFeller => {
                let m = self.matrix()?.clone();
                let steps = self.s.strong_feller_steps;
                let f = default_discontinuous(self.grid);
                self.props().strong_feller(&m, steps, &f)?;
            }
            CheckName::Cinfty => {
                let v = self.solution(0, self.s.times.len() - 1)?;
                self.props().cinfty(&v)?;
            }
            CheckName::CinftyDichotomy => {
                let wide = self.solution(0, self.s.times.len() - 1)?;
                let frac = tol.thresholds.tail_fraction;
                let wide_tail = feller_core::props::check_cinfty_decay(&wide, frac)?;
                let clamped = self.s.perturbation.clamped(self.s.clamp).expect("validated").build()?;
                let e = Engine::new(self.base, clamped, tol.dyson)?;
                let t = *self.s.times.last().expect("validated");
                let tight = e.solve(t, &self.functions[0])?.value;
                let tight_tail = feller_core::props::check_cinfty_decay(&tight, frac)?;
                let p = self.props();
                p.record("cinfty_clamped", tight_tail, tol.thresholds.tail, false);
                let ratio = if tight_tail > 0.0 { wide_tail / tight_tail } else { f64::INFINITY };
                // an infinite ratio (clamped tail exactly zero) still passes
                let v = if ratio >= tol.dichotomy { Verdict::Pass } else { Verdict::Fail };
                p.record_verdict("cinfty_dichotomy_ratio", v, ratio, tol.dichotomy);
            }
            CheckName::RankOneOracle => {
                let (point, weight) = match self.s.perturbation {
                    PerturbationSpec::RankOne { point, weight } => (point, weight),
                    _ => unreachable!("validated"),
                };
                let mut worst: f64 = 0.0;
                for ti in 0..self.s.times.len() {
                    let t = self.s.times[ti];
                    let got = self.solution(0, ti)?;
                    let f = &self.functions[0];
                    let c = rank_one_correction(self.base, f, t, point, weight)?;
                    let want = self.base.apply(t, f)?;
                    let err = got
                        .values()
                        .iter()
                        .zip(want.values())
                        .map(|(g, w)| (g - w - c).abs())
                        .fold(0.0, f64::max);
                    worst = worst.max(err);
                }
                self.props().record("rank_one_oracle", worst, tol.oracle, false);
            }
            CheckName::Contractivity => {
                let mut ratio: f64 = 0.0;
                let mut min_nonneg = f64::INFINITY;
                for fi in 0..self.functions.len() {
                    let sup = self.functions[fi].sup_norm();
                    let nonneg = self.functions[fi].values().iter().all(|v| *v >= 0.0);
                    for ti in 0..self.s.times.len() {
                        let v = self.solution(fi, ti)?;
                        if sup > 0.0 {
                            ratio = ratio.max(v.sup_norm() / sup - 1.0);
                        }
                        if nonneg {
                            min_nonneg = min_nonneg.min(v.values().iter().cloned().fold(f64::INFINITY, f64::min));
                        }
                    }
                }
                let th = tol.thresholds.submarkov_min;
                let p = self.props();
                p.record("contractivity", ratio, tol.contractivity, false);
                if min_nonneg.is_finite() {
                    p.record("positivity", min_nonneg, -th, true);
                }
            }
            CheckName::ResolventTwoRoute => {
                let lambda = RESOLVENT_LAMBDA;
                let f = self.functions[0].clone();
                let neumann = self.engine()?.resolvent(lambda, &f, tol.neumann)?;
                let laplace = self.engine()?.laplace_transform(lambda, &f, self.matrix.as_ref())?;
                let diff = neumann.value.max_abs_diff(&laplace);
                self.report.resolvent = Some(ResolventRecord {
                    lambda,
                    neumann_terms: neumann.terms,
                    neumann_ratio: neumann.ratio,
                    max_abs_diff: diff,
                });
                self.props().record("resolvent_two_route", diff, tol.resolvent, false);
            }
            CheckName::BrNormDecreasing => {
                let probes = self.functions.clone();
                let mut norms = Vec::new();
                for l in BR_LAMBDAS {
                    norms.push((l, self.engine()?.br_norm(l, &probes)?));
                }
                let worst = norms
                    .windows(2)
                    .map(|w| if w[0].1 > 0.0 { w[1].1 / w[0].1 } else { f64::INFINITY })
                    .fold(0.0, f64::max);
                let v = if worst < 1.0 { Verdict::Pass } else { Verdict::Fail };
                self.report.br_norms = norms;
                self.props().record_verdict("br_norm_decreasing", v, worst, 1.0);
            }
            CheckName::Mc => {
                let mc = self.s.mc.expect("validated");
                let spec = mc.sde(&self.s.base, &self.s.perturbation, self.seed)?;
                let f = self.functions[mc.function].clone();
                let cmp = match mc.mode {
                    McDriver::Engine => {
                        let value = match &self.engine {
                            Some(e) => e.solve(mc.t, &f)?.value,
                            None => self.base.apply(mc.t, &f)?,
                        };
                        let c = compare_mc_pde(&spec, &f, &value, mc.x0)?;
                        self.props().record("mc_z", c.z_score.abs(), tol.z, false);
                        c
                    }
                    McDriver::HolderSelf { .. } => {
                        let c = dt_self_consistency(&spec, &f)?;
                        self.props().record("mc_dt_z", c.z_score.abs(), tol.z, false);
                        c
                    }
                };
                self.report.mc = Some(cmp);
            }
            CheckName::Convergence => {
                let cc = self.s.convergence.clone().expect("validated");
                let scale = match self.s.perturbation {
                    PerturbationSpec::Levy {
                        drift: Some(Profile::Sign { scale }),
                        ..
                    } => scale,
                    _ => unreachable!("validated"),
                };
                let lim = self.s.perturbation.levy()?.expect("levy");
                let seq = cc
                    .ns
                    .iter()
                    .map(|&n| {
                        let p = self.s.perturbation.with_drift(Profile::MollifiedSign { scale, n });
                        Ok(p.levy()?.expect("levy"))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                let dom = DeclaredBounds {
                    b_sup: scale.abs(),
                    mu_beta: lim.measured_bounds(&self.grid).mu_beta,
                };
                let f = self.functions[0].clone();
                let c = convergence_experiment(self.base, &seq, &lim, cc.t, &f, cc.k, dom, &tol.dyson)?;
                let p = self.props();
                let last = c.semigroup.last().copied().unwrap_or(f64::NAN);
                p.record("convergence_final", last, tol.convergence, false);
                let dec = |b: bool| if b { Verdict::Pass } else { Verdict::Fail };
                p.record_verdict(
                    "convergence_semigroup_decreasing",
                    dec(c.semigroup_decreasing()),
                    f64::from(c.semigroup_decreasing() as u8),
                    1.0,
                );
                p.record_verdict(
                    "convergence_resolvent_decreasing",
                    dec(c.resolvent_decreasing()),
                    f64::from(c.resolvent_decreasing() as u8),
                    1.0,
                );
                self.report.convergence = Some(c);
            }
            CheckName::Regularity => {
                let rc = self.s.regularity.clone().expect("validated");
                for b in &rc.bases {
                    let sg = BaseSemigroup::new(b.exponent()?, self.grid)?;
                    let fit = sg.estimate_regularity(rc.rho, &rc.times)?;
                    let expected = -rc.rho / b.alpha();
                    let label = base_label(b);
                    self.props().record(
                        &format!("regularity_{label}"),
                        (fit.exponent - expected).abs(),
                        tol.slope,
                        false,
                    );
                    self.report.regularity.push(RegularityRecord {
                        base: label,
                        expected_exponent: expected,
                        fit,
                    });
                    if b.law == BaseSpec::Cauchy && b.killing == 0.0 {
                        // total variation of p_1 over the wide window; should be 2 p_1(0) = 2/π
                        let wide = BaseSemigroup::new(b.exponent()?, Grid::standard())?;
                        let p = wide.density_table(1.0)?;
                        let tv: f64 = p.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
                        let want = 2.0 / std::f64::consts::PI;
                        self.report.gradient_integral = Some(tv);
                        self.props().record(
                            "cauchy_gradient_integral",
                            (tv - want).abs() / want,
                            tol.gradient_integral,
                            false,
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

/// `weight · ∫_0^t e^{weight(t−s)} (T(s)f)(point) ds` by panelled Gauss–Legendre.
pub fn rank_one_correction(base: &BaseSemigroup, f: &GridFunction, t: f64, point: f64, weight: f64) -> Result<f64, CliError> {
    let (x, w) = gauss_legendre(8);
    let panels = 32;
    let h = t / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        for (xi, wi) in x.iter().zip(&w) {
            let s = p as f64 * h + 0.5 * h * (xi + 1.0);
            acc += 0.5 * h * wi * (weight * (t - s)).exp() * base.apply(s, f)?.eval(point);
        }
    }
    Ok(weight * acc)
}

fn write_functions_csv(path: &Path, grid: &Grid, s: &Scenario, sols: &[Vec<Option<GridFunction>>]) -> std::io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let mut cols = Vec::new();
    write!(out, "x")?;
    for (fi, row) in sols.iter().enumerate() {
        for (ti, v) in row.iter().enumerate() {
            if let Some(v) = v {
                write!(out, ",\"S(t)f f={} t={}\"", s.functions[fi].label(), s.times[ti])?;
                cols.push(v);
            }
        }
    }
    writeln!(out)?;
    for i in 0..grid.n() {
        write!(out, "{}", grid.node(i))?;
        for v in &cols {
            write!(out, ",{}", v.values()[i])?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Runs `scenario` and writes `report.json` and `functions.csv` into `out`.
///
/// Numerical divergence inside a check is reported with exit code 3; bad input is an `Err`.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions, out: &Path) -> Result<RunReport, CliError> {
    let s = effective(scenario, opts)?;
    let grid = s.grid.build()?;
    let base = BaseSemigroup::new(s.base.exponent()?, grid)?;
    let engine = match s.perturbation {
        PerturbationSpec::Zero => None,
        _ => Some(Engine::new(&base, s.perturbation.build()?, s.tolerances.dyson)?),
    };
    let functions: Vec<GridFunction> = s.functions.iter().map(|f| f.build(grid)).collect();
    let report = RunReport {
        schema: crate::config::SCHEMA,
        scenario: s.name.clone(),
        description: s.description.clone(),
        seed: opts.seed,
        passed: false,
        exit_code: 0,
        error: None,
        parallel: feller_core::parallel::is_parallel(),
        grid: s.grid,
        tolerances: s.tolerances,
        rho: engine.as_ref().map(|e| e.rho()),
        contraction: engine.as_ref().map(|e| e.contraction()),
        grading_power: engine.as_ref().map(|e| e.grading_power()),
        matrix: None,
        properties: PropertyReport::new(s.name.clone(), s.tolerances.thresholds),
        solutions: Vec::new(),
        mc: None,
        resolvent: None,
        br_norms: Vec::new(),
        convergence: None,
        regularity: Vec::new(),
        gradient_integral: None,
        config: s.clone(),
    };
    let mut ctx = Ctx {
        s: &s,
        grid,
        base: &base,
        engine,
        solutions: vec![vec![None; s.times.len()]; functions.len()],
        functions,
        records: Vec::new(),
        matrix: None,
        report,
        seed: opts.seed,
    };

    let mut failure = None;
    let mut seen = BTreeSet::new();
    for &c in &s.checks {
        if !seen.insert(c) {
            continue;
        }
        match ctx.run_with_expectation(c) {
            Ok(()) => {}
            Err(CliError::Core(e)) if is_divergence(&e) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    // every requested (function, time) pair ends up in functions.csv
    if failure.is_none() {
        for fi in 0..ctx.functions.len() {
            for ti in 0..s.times.len() {
                match ctx.solution(fi, ti) {
                    Ok(_) => {}
                    Err(CliError::Core(e)) if is_divergence(&e) => {
                        failure = Some(e);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    fs::create_dir_all(out)?;
    if opts.dump_matrix && failure.is_none() {
        match ctx.matrix() {
            Ok(m) => m.write_csv(BufWriter::new(fs::File::create(out.join("matrix.csv"))?))?,
            Err(CliError::Core(e)) if is_divergence(&e) => failure = Some(e),
            Err(e) => return Err(e),
        }
    }
    write_functions_csv(&out.join("functions.csv"), &grid, &s, &ctx.solutions)?;

    let mut report = ctx.report;
    report.solutions = ctx.records;
    report.passed = failure.is_none() && report.properties.all_pass();
    report.exit_code = match &failure {
        Some(_) => 3,
        None if report.passed => 0,
        None => 1,
    };
    report.error = failure.map(|e| e.to_string());
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(out.join("report.json"), json + "\n")?;
    Ok(report)
}

/// Output directory of one scenario when several run at once.
pub fn scenario_dir(out: &Path, name: &str, many: bool) -> PathBuf {
    if many {
        out.join(name)
    } else {
        out.to_path_buf()
    }
}

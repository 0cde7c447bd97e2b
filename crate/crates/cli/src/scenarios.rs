//! Built-in scenarios and the registry merged with user configs.

use crate::config::{
    BaseConfig, BaseSpec, CheckName, ConfigFile, ConvergenceConfig, DensitySpec, FunctionSpec, GridConfig, McConfig,
    McDriver, PerturbationSpec, Profile, RegularityConfig, Scenario, ToOriginAtom, Tolerances,
};

fn heat() -> BaseConfig {
    BaseConfig {
        law: BaseSpec::Heat,
        killing: 0.0,
    }
}

fn stable(alpha: f64) -> BaseConfig {
    BaseConfig {
        law: BaseSpec::Stable { alpha },
        killing: 0.0,
    }
}

fn with_rho(rho: f64) -> Tolerances {
    let mut t = Tolerances::default();
    t.dyson.rho = Some(rho);
    t
}

fn sign_drift() -> PerturbationSpec {
    PerturbationSpec::Levy {
        drift: Some(Profile::Sign { scale: 1.0 }),
        density: None,
        atom: None,
        beta: None,
    }
}

fn blank(name: &str, description: &str, base: BaseConfig, perturbation: PerturbationSpec) -> Scenario {
    Scenario {
        name: name.into(),
        description: description.into(),
        base,
        perturbation,
        times: Vec::new(),
        functions: Vec::new(),
        checks: Vec::new(),
        expected_fail: Vec::new(),
        mc: None,
        convergence: None,
        regularity: None,
        grid: GridConfig::default(),
        tolerances: Tolerances::default(),
        strong_feller_steps: 5,
        clamp: 2.0,
    }
}

pub fn builtins() -> Vec<Scenario> {
    use CheckName::*;
    let bump = FunctionSpec::Bump {
        center: 0.0,
        radius: 1.0,
    };
    let ind = FunctionSpec::Indicator { a: -1.0, b: 1.0 };
    let mc = |x0: f64| McConfig {
        x0,
        t: 0.5,
        dt: 1e-3,
        n_paths: 100_000,
        function: 0,
        mode: McDriver::Engine,
    };

    let heat_signdrift = Scenario {
        times: vec![0.25, 0.5],
        functions: vec![bump],
        checks: vec![Submarkov, Conservative, StrongFeller, Contractivity, ResolventTwoRoute, BrNormDecreasing, Mc],
        mc: Some(mc(0.5)),
        tolerances: with_rho(1.1),
        ..blank(
            "heat_signdrift",
            "heat base + drift sign(x): sub-Markov, conservative, strong Feller, two-route resolvent, MC",
            heat(),
            sign_drift(),
        )
    };

    let heat_rank_one = Scenario {
        times: vec![0.25, 1.0],
        functions: vec![ind],
        checks: vec![RankOneOracle, Cinfty],
        expected_fail: vec![Cinfty],
        tolerances: with_rho(1.0),
        ..blank(
            "heat_rank_one",
            "heat base + Bf = f(0)·1: closed-form Duhamel solution; leaves C∞ (expected fail)",
            heat(),
            PerturbationSpec::RankOne {
                point: 0.0,
                weight: 1.0,
            },
        )
    };

    let delta_minus_x = Scenario {
        times: vec![1.0],
        functions: vec![ind],
        checks: vec![Cinfty, CinftyDichotomy, Contractivity],
        expected_fail: vec![Cinfty],
        tolerances: with_rho(1.1),
        ..blank(
            "delta_minus_x",
            "heat base + jump kernel δ_{-x} (jump to the origin): not C∞, tightness-clamped variant is",
            heat(),
            PerturbationSpec::Levy {
                drift: None,
                density: None,
                atom: Some(ToOriginAtom {
                    weight: 1.0,
                    clamp: None,
                }),
                beta: None,
            },
        )
    };

    let stable_drift = Scenario {
        times: vec![0.25, 0.5],
        functions: vec![bump],
        checks: vec![Submarkov, Conservative, StrongFeller, Contractivity, Mc],
        mc: Some(mc(0.5)),
        tolerances: with_rho(1.1),
        ..blank(
            "stable_drift",
            "1.5-stable base + drift sign(x): dX = sign(X)dt + dL",
            stable(1.5),
            sign_drift(),
        )
    };

    let stable_plus_stable = Scenario {
        times: vec![0.5],
        functions: vec![bump],
        checks: vec![Contractivity, Mc],
        mc: Some(McConfig {
            x0: 0.3,
            dt: 2e-3,
            ..mc(0.3)
        }),
        ..blank(
            "stable_plus_stable",
            "1.5-stable base + κ(x)-scaled 0.75-stable jumps, κ a step: dX = dL + κ(X)dM",
            stable(1.5),
            PerturbationSpec::Levy {
                drift: None,
                density: Some(DensitySpec::ScaledStable {
                    alpha: 0.75,
                    kappa: Profile::Step { lo: 0.5, hi: 1.0 },
                }),
                atom: None,
                beta: Some(0.9),
            },
        )
    };

    let mollify_convergence = Scenario {
        times: vec![0.5],
        functions: vec![FunctionSpec::Bump {
            center: 0.5,
            radius: 1.5,
        }],
        checks: vec![Convergence],
        convergence: Some(ConvergenceConfig {
            ns: vec![4.0, 16.0, 64.0],
            t: 0.5,
            k: (-5.0, 5.0),
        }),
        tolerances: with_rho(1.1),
        ..blank(
            "mollify_convergence",
            "mollified drifts sign * φ_{1/n} → sign: semigroups and resolvents converge on compacts",
            heat(),
            sign_drift(),
        )
    };

    let regularity_fit = Scenario {
        checks: vec![Regularity],
        regularity: Some(RegularityConfig {
            bases: vec![
                heat(),
                BaseConfig {
                    law: BaseSpec::Cauchy,
                    killing: 0.0,
                },
            ],
            times: vec![0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64],
            rho: 1.0,
        }),
        grid: GridConfig {
            x_min: -8.0,
            x_max: 8.0,
            n: 8192,
        },
        ..blank(
            "regularity_fit",
            "C¹-norm decay exponents of heat (−1/2) and Cauchy (−1) semigroups; Cauchy gradient integral 2/π",
            heat(),
            PerturbationSpec::Zero,
        )
    };

    vec![
        heat_signdrift,
        heat_rank_one,
        delta_minus_x,
        stable_drift,
        stable_plus_stable,
        mollify_convergence,
        regularity_fit,
    ]
}

/// Built-ins, with user scenarios appended (a user scenario replaces a built-in of the same name).
pub fn registry(user: Option<&ConfigFile>) -> Vec<Scenario> {
    let mut all = builtins();
    if let Some(c) = user {
        for s in &c.scenarios {
            match all.iter_mut().find(|b| b.name == s.name) {
                Some(b) => *b = s.clone(),
                None => all.push(s.clone()),
            }
        }
    }
    all
}

pub fn find(user: Option<&ConfigFile>, name: &str) -> Option<Scenario> {
    registry(user).into_iter().find(|s| s.name == name)
}

use feller_core::basesg::LevyExponent;
use feller_core::dyson::propagate;
use feller_core::levyop::DeclaredBounds;
use feller_core::props::{
    beta_g_norm, check_cinfty_decay, check_conservative, check_submarkov, convergence_experiment,
    default_discontinuous, g_norm, modulus_table, mollified_sign, sign, strong_feller_modulus, Thresholds,
};
use feller_core::quad::gauss_legendre;
use feller_core::{
    Atom, BaseSemigroup, DysonConfig, Engine, Grid, GridFunction, JumpDensity, LevyCharacteristics, OperatorMatrix,
    Perturbation,
};

fn cfg(rho: f64) -> DysonConfig {
    DysonConfig {
        rho: Some(rho),
        ..Default::default()
    }
}

fn small_grid() -> Grid {
    Grid::new(-8.0, 8.0, 256).unwrap()
}

fn sign_drift() -> LevyCharacteristics {
    LevyCharacteristics::zero().with_drift(|x: f64| sign(x))
}

fn matrix(base: &BaseSemigroup, p: Perturbation, rho: f64) -> OperatorMatrix {
    Engine::new(base, p, cfg(rho)).unwrap().one_step_matrix().unwrap()
}

#[test]
fn submarkov_cases() {
    let g = small_grid();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let th = Thresholds::default();

    let heat = OperatorMatrix::from_base(&base, 0.05).unwrap();
    let s = check_submarkov(&heat, &th);
    // correction columns come from an FFT: rounding only
    assert!(s.pass && s.min_entry >= -1e-14, "{s:?}");
    assert!(check_conservative(&heat) < 1e-6);

    let s = check_submarkov(&matrix(&base, sign_drift().into(), 1.1), &th);
    assert!(s.pass, "{s:?}");

    let flipped = LevyCharacteristics::zero()
        .with_density(JumpDensity::truncated_stable(0.5, -1.0, 1.0))
        .with_beta(0.75)
        .unwrap();
    let s = check_submarkov(&matrix(&base, flipped.into(), 0.9), &th);
    assert!(!s.pass && s.min_entry < -1e-3, "{s:?}");
}

#[test]
fn conservativeness_cases() {
    let g = small_grid();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let m = matrix(&base, sign_drift().into(), 1.1);
    assert!(check_conservative(&m) <= 1e-6);

    let r1 = matrix(
        &base,
        Perturbation::RankOne {
            point: 0.0,
            weight: 1.0,
        },
        1.0,
    );
    let d = check_conservative(&r1);
    let expect = 0.05f64.exp_m1();
    assert!((d - expect).abs() < 1e-4 * expect, "{d} vs {expect}");

    let kappa = 0.5;
    let killed = BaseSemigroup::new(LevyExponent::heat().with_killing(kappa).unwrap(), g).unwrap();
    let d = check_conservative(&matrix(&killed, Perturbation::Zero, 1.0));
    let expect = -(-kappa * 0.05f64).exp_m1();
    assert!((d - expect).abs() < 1e-8, "{d} vs {expect}");
}

fn oracle_lower_bound(base: &BaseSemigroup, f: &GridFunction, t: f64) -> f64 {
    let (x, w) = gauss_legendre(16);
    let panels = 64;
    let h = t / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        for (xi, wi) in x.iter().zip(&w) {
            let s = p as f64 * h + 0.5 * h * (xi + 1.0);
            acc += 0.5 * h * wi * (t - s).exp() * base.apply(s, f).unwrap().eval(0.0);
        }
    }
    acc
}

#[test]
fn cinfty_dichotomy() {
    let g = Grid::standard();
    assert_eq!(check_cinfty_decay(&GridFunction::bump(g, 0.0, 2.0), 0.1).unwrap(), 0.0);
    assert!(check_cinfty_decay(&GridFunction::one(g), 0.6).is_err());

    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let f = GridFunction::indicator(g, -1.0, 1.0);
    let to_origin = LevyCharacteristics::zero().with_atom(Atom::new(|x: f64| -x, |_| 1.0));
    let clamped = LevyCharacteristics::zero().with_atom(Atom::new(|x: f64| (-x).clamp(-2.0, 2.0), |_| 1.0));
    let solve = |b: LevyCharacteristics| {
        Engine::new(&base, b.into(), cfg(1.1)).unwrap().solve(1.0, &f).unwrap().value
    };
    let wide = check_cinfty_decay(&solve(to_origin), 0.1).unwrap();
    let tight = check_cinfty_decay(&solve(clamped), 0.1).unwrap();
    let bound = oracle_lower_bound(&base, &f, 1.0);
    assert!(wide >= 0.1 * bound, "{wide} vs {bound}");
    assert!(tight < 1e-3, "{tight}");
    assert!(wide >= 100.0 * tight);
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[test]
fn strong_feller_tables() {
    let g = small_grid();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let step = default_discontinuous(g);
    let heat = OperatorMatrix::from_base(&base, 0.05).unwrap();
    let t: f64 = 0.25;
    let smoothed = propagate(&heat, 5, &step).unwrap();
    let table = modulus_table(&smoothed);
    let exact = GridFunction::from_fn(g, feller_core::Extension::Constant, |x| normal_cdf(x / (2.0 * t).sqrt())).unwrap();
    for (a, b) in table.iter().zip(modulus_table(&exact)) {
        assert!((a.modulus / b.modulus - 1.0).abs() < 0.1, "{a:?} {b:?}");
    }

    let m = matrix(&base, sign_drift().into(), 1.1);
    let perturbed = modulus_table(&propagate(&m, 5, &step).unwrap());
    for (a, b) in perturbed.iter().zip(&table) {
        assert!(a.modulus.is_finite() && a.modulus <= 3.0 * b.modulus && a.modulus > b.modulus / 3.0);
    }

    let id = strong_feller_modulus(&OperatorMatrix::identity(&g), &step);
    assert!((id[0].modulus - 1.0).abs() < 1e-12);
}

#[test]
fn g_norm_identities() {
    let g = Grid::new(-10.0, 10.0, 512).unwrap();
    let none = LevyCharacteristics::zero();
    assert_eq!(g_norm(&none, &g, |_| 0.0), 0.0);
    let b = LevyCharacteristics::zero().with_density(JumpDensity::truncated_stable(0.5, 1.0, 1.0));
    assert_eq!(g_norm(&b, &g, |_| 0.0), 0.0);
    let v = beta_g_norm(&b, &g, 1.0);
    assert!((v - 4.0).abs() < 1e-8, "{v}");
    let atom = LevyCharacteristics::zero().with_atom(Atom::new(|_| 0.5, |_| 3.0));
    let v = g_norm(&atom, &g, |y| y * y);
    assert!((v - 0.75).abs() < 1e-14);
}

#[test]
fn convergence_studies() {
    let g = Grid::standard();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let f = GridFunction::bump(g, 0.5, 1.5);
    let lim = sign_drift();
    let same = convergence_experiment(
        &base,
        &[lim.clone(), lim.clone()],
        &lim,
        0.5,
        &f,
        (-5.0, 5.0),
        DeclaredBounds {
            b_sup: 1.0,
            mu_beta: 0.0,
        },
        &cfg(1.1),
    )
    .unwrap();
    assert!(same.semigroup.iter().chain(&same.resolvent).all(|v| *v == 0.0));

    let seq: Vec<_> = [4.0, 16.0, 64.0]
        .iter()
        .map(|&n| {
            let m = mollified_sign(1.0 / n);
            LevyCharacteristics::zero().with_drift(move |x| m(x))
        })
        .collect();
    let c = convergence_experiment(
        &base,
        &seq,
        &lim,
        0.5,
        &f,
        (-5.0, 5.0),
        DeclaredBounds {
            b_sup: 1.0,
            mu_beta: 0.0,
        },
        &cfg(1.1),
    )
    .unwrap();
    assert!(c.semigroup.windows(2).all(|w| w[1] < w[0]), "{c:?}");
    assert!(c.resolvent.windows(2).all(|w| w[1] < w[0]), "{c:?}");
    assert!(c.semigroup[2] <= 2e-2);

    // too large a drift for the declared bound
    let err = convergence_experiment(
        &base,
        &[LevyCharacteristics::zero().with_drift(|x: f64| 2.0 * sign(x))],
        &lim,
        0.5,
        &f,
        (-5.0, 5.0),
        DeclaredBounds {
            b_sup: 1.0,
            mu_beta: 0.0,
        },
        &cfg(1.1),
    );
    assert!(matches!(err, Err(feller_core::Error::UniformBound { index: 0, .. })));
}

#[test]
fn jump_density_sequence() {
    let g = Grid::new(-10.0, 10.0, 512).unwrap();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let f = GridFunction::bump(g, 0.0, 1.5);
    let alpha = 0.5;
    let full = JumpDensity::truncated_stable(alpha, 1.0, 1.0);
    let lim = LevyCharacteristics::zero().with_density(full).with_beta(0.75).unwrap();
    let dom = lim.measured_bounds(&g);
    let seq: Vec<_> = [2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&n| {
            let cut = 1.0 / n;
            let d = JumpDensity::new(
                move |_, y: f64| {
                    let a = y.abs();
                    if a > cut {
                        a.powf(-1.0 - alpha)
                    } else {
                        0.0
                    }
                },
                1.0,
            )
            .with_breakpoints(&[cut, 1.0]);
            LevyCharacteristics::zero().with_density(d).with_beta(0.75).unwrap()
        })
        .collect();
    let c = convergence_experiment(&base, &seq, &lim, 0.5, &f, (-5.0, 5.0), dom, &cfg(0.9)).unwrap();
    assert!(c.resolvent.windows(2).all(|w| w[1] < w[0]), "{c:?}");
    assert!(c.semigroup.windows(2).all(|w| w[1] < w[0]), "{c:?}");
}

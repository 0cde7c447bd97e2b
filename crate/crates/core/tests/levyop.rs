use std::sync::Arc;

use feller_core::levyop::{continuity_diagnostics, TestFn};
use feller_core::{apply_perturbation, Atom, Error, Extension, Grid, GridFunction, JumpDensity, LevyCharacteristics};

// adaptive Simpson on [a, b]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn truncated_half() -> LevyCharacteristics {
    LevyCharacteristics::zero()
        .with_density(JumpDensity::truncated_stable(0.5, 1.0, 1.0))
        .with_beta(0.6)
        .unwrap()
}

#[test]
fn constants_are_annihilated() {
    let g = Grid::new(-6.0, 6.0, 512).unwrap();
    let one = GridFunction::one(g);
    let full = LevyCharacteristics::zero()
        .with_drift(|x: f64| x.sin())
        .with_density(JumpDensity::scaled_stable(1.2, 0.3, Arc::new(|x: f64| 1.0 + 0.5 * x.cos())))
        .with_atom(Atom::new(|x: f64| -x.clamp(-2.0, 2.0) - 0.1, |x: f64| 1.0 / (1.0 + x * x)))
        .with_beta(1.3)
        .unwrap();
    let out = apply_perturbation(&full, &one, 1.5).unwrap();
    assert!(out.sup_norm() < 1e-10, "{}", out.sup_norm());
    let out = apply_perturbation(&truncated_half(), &one, 0.8).unwrap();
    assert!(out.sup_norm() < 1e-10, "{}", out.sup_norm());
}

#[test]
fn pure_drift_on_linear_function() {
    let g = Grid::new(-3.0, 3.0, 256).unwrap();
    let f = GridFunction::from_fn(g, Extension::Constant, |x| x).unwrap();
    let b = LevyCharacteristics::zero().with_drift(|_| 0.7);
    let out = apply_perturbation(&b, &f, 1.5).unwrap();
    for v in out.values() {
        assert!((v - 0.7).abs() < 1e-12);
    }
}

#[test]
fn atom_at_minus_x() {
    let g = Grid::new(-8.0, -8.0 + 1023.0 / 64.0, 1024).unwrap();
    let f = GridFunction::bump(g, 0.0, 0.5);
    let b = LevyCharacteristics::zero().with_atom(Atom::new(|x: f64| -x, |_| 1.0));
    let out = apply_perturbation(&b, &f, 1.5).unwrap();
    let i = g.nearest(5.0);
    assert!((g.node(i) - 5.0).abs() < 1e-12);
    assert!((out.values()[i] - 1.0).abs() < 1e-12);
    // no compensator at rho <= 1 means the drift x χ(x) must vanish, which it does not
    let err = apply_perturbation(&b, &f, 0.5).unwrap_err();
    assert!(matches!(err, Error::CompensatedDriftNonzero { .. }));
}

#[test]
fn truncated_stable_matches_quadrature_oracle() {
    let g = Grid::new(-4.0, 4.0, 1 << 17).unwrap();
    let f = |x: f64| (-x * x).exp();
    let gf = GridFunction::from_fn(g, Extension::Zero, f).unwrap();
    let b = truncated_half();
    for x0 in [0.0, 0.3, -1.1] {
        let i = g.nearest(x0);
        let x = g.node(i);
        // u = v²: ∫_0^1 (f(x+u)+f(x-u)-2f(x)) u^{-3/2} du = ∫_0^1 2 (…)/v² dv
        let integrand = |v: f64| {
            if v == 0.0 {
                let fpp = (4.0 * x * x - 2.0) * f(x);
                return 2.0 * fpp;
            }
            let u = v * v;
            2.0 * (f(x + u) + f(x - u) - 2.0 * f(x)) / (v * v)
        };
        let oracle = simpson(&integrand, 0.0, 1.0, 1e-10);
        for rho in [0.8, 1.5] {
            let got = b.apply_at(&gf, rho, i).unwrap();
            assert!((got - oracle).abs() < 1e-6, "x={x} rho={rho}: {got} vs {oracle}");
        }
    }
}

#[test]
fn precondition_errors() {
    let g = Grid::new(-4.0, 4.0, 256).unwrap();
    let f = GridFunction::gaussian(g, 0.0, 1.0);
    let b = truncated_half();
    assert!(matches!(apply_perturbation(&b, &f, 0.55), Err(Error::OrderTooLow { .. })));
    let drifted = LevyCharacteristics::zero().with_drift(|_| 1.0);
    assert!(matches!(
        apply_perturbation(&drifted, &f, 0.9),
        Err(Error::CompensatedDriftNonzero { .. })
    ));
    let lying = LevyCharacteristics::zero().with_drift(|_| 1.0).with_bounds(0.5, 0.0);
    assert!(matches!(apply_perturbation(&lying, &f, 1.5), Err(Error::BoundViolated(_))));
}

#[test]
fn positive_maximum_principle() {
    let g = Grid::new(-6.0, 6.0, 1024).unwrap();
    let x0 = g.node(550);
    let f = GridFunction::from_fn(g, Extension::Zero, |x| {
        let z = x - x0;
        (-z * z).exp() * (1.0 + 0.3 * (3.0 * z).cos())
    })
    .unwrap();
    let b = LevyCharacteristics::zero()
        .with_drift(|x: f64| 2.0 * x.cos())
        .with_density(JumpDensity::truncated_stable(1.4, 0.8, 3.0))
        .with_atom(Atom::new(|_| -1.3, |_| 0.7))
        .with_beta(1.5)
        .unwrap();
    let out = apply_perturbation(&b, &f, 1.7).unwrap();
    let imax = (0..g.n()).max_by(|&a, &c| f.values()[a].partial_cmp(&f.values()[c]).unwrap()).unwrap();
    assert_eq!(imax, 550);
    assert!(out.values()[imax] <= 1e-10, "{}", out.values()[imax]);
}

#[test]
fn symbol_values() {
    let b = LevyCharacteristics::zero().with_drift(|x: f64| x.signum());
    let s = b.symbol(None, -2.0, 3.0).value;
    assert!((s.re).abs() < 1e-15 && (s.im - 3.0).abs() < 1e-15);

    let t = truncated_half();
    assert_eq!(t.symbol(None, 0.4, 0.0).value.norm(), 0.0);
    for xi in [0.5, 3.0, 17.0] {
        let p = t.symbol(None, 0.1, xi).value;
        let m = t.symbol(None, 0.1, -xi).value;
        assert!((p - m.conj()).norm() < 1e-13 * p.norm());
        let integrand = |v: f64| {
            if v == 0.0 {
                return 2.0 * 2.0 * 0.5 * xi * xi;
            }
            let u = v * v;
            2.0 * 2.0 * (1.0 - (u * xi).cos()) / (v * v)
        };
        let oracle = simpson(&integrand, 0.0, 1.0, 1e-10);
        assert!((p.re - oracle).abs() < 1e-6, "xi={xi}: {} vs {oracle}", p.re);
        assert!(p.im.abs() < 1e-12);
    }
}

#[test]
fn beta_moments() {
    let g = Grid::new(-2.0, 2.0, 64).unwrap();
    assert!((truncated_half().beta_moment(&g, 1.0) - 4.0).abs() < 1e-6);
    let atom = LevyCharacteristics::zero().with_atom(Atom::new(|_| 3.0, |_| 0.25));
    assert!((atom.beta_moment(&g, 0.5) - 0.25).abs() < 1e-15);
    assert_eq!(LevyCharacteristics::zero().beta_moment(&g, 1.0), 0.0);
}

#[test]
fn tightness() {
    let g = Grid::new(-20.0, 20.0, 512).unwrap();
    assert_eq!(truncated_half().tightness_profile(&g, &[1.0, 2.0]), vec![0.0, 0.0]);
    let minus_x = LevyCharacteristics::zero().with_atom(Atom::new(|x: f64| -x, |_| 1.0));
    assert_eq!(minus_x.tightness_profile(&g, &[10.0]), vec![1.0]);

    let alpha = 1.5;
    let stable = LevyCharacteristics::zero().with_density(JumpDensity::new(
        move |_, y: f64| y.abs().powf(-1.0 - alpha),
        f64::INFINITY,
    ));
    let radii = [1.0, 2.0, 4.0, 8.0, 16.0];
    let prof = stable.tightness_profile(&g, &radii);
    assert!(prof.windows(2).all(|w| w[1] <= w[0]));
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = prof.iter().map(|p| p.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    assert!((slope + alpha).abs() < 0.05, "{slope}");
    assert!((prof[0] - 2.0 / alpha).abs() < 1e-6);
}

#[test]
fn small_and_large_jumps() {
    let g = Grid::new(-6.0, 6.0, 512).unwrap();
    let f = GridFunction::bump(g, 0.3, 1.5);

    let (_, large) = truncated_half().split_jumps();
    assert!(apply_perturbation(&large, &f, 0.8).unwrap().sup_norm() == 0.0);

    let far = LevyCharacteristics::zero().with_atom(Atom::new(|_| 3.0, |_| 0.5));
    let (small, large) = far.split_jumps();
    assert_eq!(apply_perturbation(&small, &f, 1.5).unwrap().sup_norm(), 0.0);
    assert!(apply_perturbation(&large, &f, 1.5).unwrap().sup_norm() > 0.1);

    let b = LevyCharacteristics::zero()
        .with_drift(|x: f64| 0.5 * x.tanh())
        .with_density(JumpDensity::truncated_stable(1.2, 1.0, 2.5))
        .with_atom(Atom::new(|_| 3.0, |_| 0.5))
        .with_beta(1.3)
        .unwrap();
    let (small, large) = b.split_jumps();
    let whole = apply_perturbation(&b, &f, 1.5).unwrap();
    let sum = apply_perturbation(&small, &f, 1.5)
        .unwrap()
        .axpy(1.0, &apply_perturbation(&large, &f, 1.5).unwrap());
    assert!(whole.max_abs_diff(&sum) < 1e-10, "{}", whole.max_abs_diff(&sum));
}

#[test]
fn continuity_moduli() {
    let tests = [TestFn::tent(0.5, 0.2), TestFn::tent(-0.3, 0.1)];
    let b = truncated_half().with_drift(|x: f64| x.sin());
    let coarse = Grid::new(-4.0, 4.0, 256).unwrap();
    let fine = Grid::new(-4.0, 4.0, 512).unwrap();
    let rc = continuity_diagnostics(&b, &coarse, (-2.0, 2.0), &[3.0], &tests);
    let rf = continuity_diagnostics(&b, &fine, (-2.0, 2.0), &[3.0], &tests);
    let ratio = rc.drift_jump / rf.drift_jump;
    assert!((1.0..=4.0).contains(&ratio) && ratio > 1.8, "{ratio}");
    assert!(rf.vague_jump < 1e-12);
    assert!(rc.small_jump_moments.windows(2).all(|w| w[1].1 <= w[0].1));
    assert!(rc.tightness.iter().all(|t| t.1 == 0.0));

    let sign = LevyCharacteristics::zero().with_drift(|x: f64| x.signum());
    let g = Grid::new(-1.0, 1.0, 64).unwrap();
    let r = continuity_diagnostics(&sign, &g, (-1.0, 1.0), &[3.0], &[]);
    assert!((r.drift_jump - 2.0).abs() < 1e-12);
    assert!((r.symbol_jump[0].1 - 6.0).abs() < 1e-12);

    let z = continuity_diagnostics(&LevyCharacteristics::zero(), &g, (-1.0, 1.0), &[3.0], &tests);
    assert_eq!(z.drift_jump, 0.0);
    assert_eq!(z.vague_jump, 0.0);
    assert!(z.small_jump_moments.iter().all(|m| m.1 == 0.0));
    assert_eq!(z.symbol_jump[0].1, 0.0);
}

#[test]
fn compensated_drift_cases() {
    let g = Grid::new(-3.0, 3.0, 128).unwrap();
    assert!(truncated_half().compensated_drift(&g).sup_norm() < 1e-12);
    let one = LevyCharacteristics::zero().with_drift(|_| 1.0).compensated_drift(&g);
    assert!(one.values().iter().all(|v| *v == 1.0));
}


use std::sync::Arc;

use feller_core::basesg::LevyExponent;
use feller_core::mcsim::{
    compare_mc_pde, decreasing_beyond_noise, dt_self_consistency, sample_stable, simulate_sde, simulate_sde_csv,
    uniforms, weak_convergence_study, Driver, Secondary, SecondaryDriver,
};
use feller_core::props::{mollified_sign, sign};
use feller_core::{BaseSemigroup, Extension, Grid, GridFunction, SdeSpec};

fn draws(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
    let u = uniforms(seed, 2 * n);
    u.chunks(2).map(|p| sample_stable(alpha, p[0], p[1]).unwrap()).collect()
}

#[test]
fn sampler_gaussian_variance() {
    let n = 100_000;
    let x = draws(2.0, n, 1);
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let m = sq.iter().sum::<f64>() / n as f64;
    let sd = (sq.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!((m - 2.0).abs() <= 3.0 * sd / (n as f64).sqrt(), "{m}");
}

#[test]
fn sampler_cauchy_cdf_and_median() {
    let n = 100_000;
    let x = draws(1.0, n, 2);
    let p = x.iter().filter(|v| **v <= 1.0).count() as f64 / n as f64;
    let se = (0.75 * 0.25 / n as f64).sqrt();
    assert!((p - 0.75).abs() <= 3.0 * se, "{p}");

    let mut y = draws(0.5, n, 3);
    y.sort_by(f64::total_cmp);
    let median = 0.5 * (y[n / 2 - 1] + y[n / 2]);
    // density at 0 is Γ(1 + 1/α)/π = 2/π
    let se = 1.0 / (2.0 * (2.0 / std::f64::consts::PI) * (n as f64).sqrt());
    assert!(median.abs() <= 3.0 * se, "{median}");
}

fn spec(drift: impl Fn(f64) -> f64 + Send + Sync + 'static, driver: Driver, t: f64, dt: f64, n: usize) -> SdeSpec {
    SdeSpec {
        t_end: t,
        dt,
        n_paths: n,
        seed: 7,
        ..SdeSpec::new(Arc::new(drift), driver)
    }
}

#[test]
fn moment_oracles() {
    let g = Grid::standard();
    let sq = GridFunction::from_fn(g, Extension::Constant, |x| (x * x).min(100.0)).unwrap();
    let r = simulate_sde(&spec(|_| 0.0, Driver::Brownian, 1.0, 0.01, 100_000), &sq).unwrap();
    assert!((r.mean - 2.0).abs() <= 3.0 * r.stderr, "{r:?}");

    let lin = GridFunction::from_fn(g, Extension::Constant, |x| x).unwrap();
    let r = simulate_sde(&spec(|_| 1.0, Driver::Brownian, 1.0, 0.01, 100_000), &lin).unwrap();
    assert!((r.mean - 1.0).abs() <= 3.0 * r.stderr, "{r:?}");

    let ind = GridFunction::indicator(g, -1.0, 1.0);
    let r = simulate_sde(&spec(|_| 0.0, Driver::Stable(1.0), 1.0, 0.01, 100_000), &ind).unwrap();
    assert!((r.mean - 0.5).abs() <= 3.0 * r.stderr, "{r:?}");
}

#[test]
fn reproducibility_and_scaling() {
    let g = Grid::standard();
    let f = GridFunction::bump(g, 0.0, 2.0);
    let s = spec(|x| sign(x), Driver::Stable(1.5), 0.2, 0.01, 4000);
    let a = simulate_sde(&s, &f).unwrap();
    let b = simulate_sde(&s, &f).unwrap();
    assert_eq!((a.mean, a.stderr), (b.mean, b.stderr));
    let big = simulate_sde(&SdeSpec { n_paths: 8000, ..s.clone() }, &f).unwrap();
    let ratio = a.stderr / big.stderr;
    assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() < 0.1, "{ratio}");

    let mut csv = Vec::new();
    let c = simulate_sde_csv(&s, &f, &mut csv).unwrap();
    assert_eq!(c.mean, a.mean);
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4001);

    assert!(simulate_sde(&SdeSpec { n_paths: 10, ..s.clone() }, &f).is_err());
    let blow = spec(|x| x * x * 1e3, Driver::Brownian, 1.0, 0.1, 1000);
    assert!(matches!(
        simulate_sde(&SdeSpec { x0: 5.0, ..blow }, &f),
        Err(feller_core::Error::NonFinitePath { .. })
    ));
}

#[test]
fn heat_answers_match_the_base_semigroup() {
    let g = Grid::standard();
    let base = BaseSemigroup::new(LevyExponent::heat(), g).unwrap();
    let f = GridFunction::bump(g, 0.3, 1.0);
    let t = 0.5;
    let tf = base.apply(t, &f).unwrap();
    for x0 in [0.0, 0.8] {
        let c = compare_mc_pde(&spec(|_| 0.0, Driver::Brownian, t, 0.05, 100_000), &f, &tf, x0).unwrap();
        assert!(c.consistent(), "{c:?}");
        assert!(c.dt_z.abs() <= 3.0);
    }
}

#[test]
fn holder_diffusion_self_consistency() {
    let g = Grid::standard();
    let f = GridFunction::bump(g, 0.0, 1.5);
    let s = SdeSpec {
        diffusion: Arc::new(|x: f64| 1.5 + 0.5 * sign(x) * x.abs().min(1.0).sqrt()),
        x0: 0.2,
        ..spec(|x| sign(x), Driver::Stable(1.5), 0.5, 0.01, 100_000)
    };
    let c = dt_self_consistency(&s, &f).unwrap();
    assert!(c.z_score.abs() <= 3.0, "{c:?}");
}

fn with_kappa(base: &SdeSpec, kappa: impl Fn(f64) -> f64 + Send + Sync + 'static) -> SdeSpec {
    SdeSpec {
        secondary: Some(Secondary {
            kappa: Arc::new(kappa),
            driver: SecondaryDriver::Stable(1.2),
        }),
        ..base.clone()
    }
}

#[test]
fn weak_convergence() {
    let g = Grid::standard();
    let f = GridFunction::bump(g, 0.0, 1.5);
    let base = spec(|_| 0.0, Driver::Brownian, 0.5, 0.01, 20_000);
    let kappa = |x: f64| 0.5 + 0.25 * x.sin();
    let lim = with_kappa(&base, kappa);

    let same = weak_convergence_study(&[lim.clone()], &lim, &f).unwrap();
    assert!(same[0].diff <= 3.0 * same[0].stderr + 1e-15);

    let ns = [1.0, 2.0, 4.0, 8.0];
    let seq: Vec<_> = ns
        .iter()
        .map(|&n| with_kappa(&base, move |x| kappa(x) * (1.0 + 1.0 / n)))
        .collect();
    let d = weak_convergence_study(&seq, &lim, &f).unwrap();
    assert!(decreasing_beyond_noise(&d));
    for (w, n) in d.iter().zip(ns) {
        let scaled = w.diff * n;
        let first = d[0].diff;
        assert!((scaled / first - 1.0).abs() < 0.25, "{d:?}");
    }

    let step = |x: f64| if x > 0.0 { 1.0 } else { 0.25 };
    let lim = with_kappa(&base, step);
    let seq: Vec<_> = [2.0, 8.0, 32.0]
        .iter()
        .map(|&n| {
            let m = mollified_sign(1.0 / n);
            with_kappa(&base, move |x| 0.625 + 0.375 * m(x))
        })
        .collect();
    let d = weak_convergence_study(&seq, &lim, &f).unwrap();
    assert!(decreasing_beyond_noise(&d), "{d:?}");
    assert!(d.windows(2).all(|w| w[1].diff < w[0].diff), "{d:?}");
}

#[test]
fn compound_poisson_secondary() {
    let g = Grid::standard();
    let lin = GridFunction::from_fn(g, Extension::Constant, |x| x).unwrap();
    let s = SdeSpec {
        secondary: Some(Secondary {
            kappa: Arc::new(|_| 1.0),
            driver: SecondaryDriver::CompoundPoisson {
                rate: 2.0,
                quantile: Arc::new(|u| u),
            },
        }),
        ..spec(|_| 0.0, Driver::Brownian, 1.0, 0.01, 100_000)
    };
    // E = rate · t · E[jump] = 1
    let r = simulate_sde(&s, &lin).unwrap();
    assert!((r.mean - 1.0).abs() <= 3.0 * r.stderr, "{r:?}");
}

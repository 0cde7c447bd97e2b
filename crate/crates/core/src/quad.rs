//! Gauss-Legendre rules and panel helpers used by the jump-integral and
//! resolvent quadratures.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached rule with points on [0, 1].
pub struct UnitRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnitRule {
    fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        Self {
            nodes: x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
            weights: w.iter().map(|v| 0.5 * v).collect(),
        }
    }

    /// Integrate `f` over [a, b].
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let len = b - a;
        let mut acc = 0.0;
        for (u, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(a + len * u);
        }
        acc * len
    }
}

pub fn rule4() -> &'static UnitRule {
    static R: OnceLock<UnitRule> = OnceLock::new();
    R.get_or_init(|| UnitRule::new(4))
}

pub fn rule8() -> &'static UnitRule {
    static R: OnceLock<UnitRule> = OnceLock::new();
    R.get_or_init(|| UnitRule::new(8))
}

pub fn rule16() -> &'static UnitRule {
    static R: OnceLock<UnitRule> = OnceLock::new();
    R.get_or_init(|| UnitRule::new(16))
}

/// Integral of `f` over (0, r] for integrands that may be singular at 0.
///
/// Uses dyadic panels [r 2^{-k-1}, r 2^{-k}] until the panel contribution is
/// negligible, then extrapolates the remaining geometric tail. Returns
/// `f64::INFINITY` when panel contributions stop shrinking.
pub fn integrate_to_zero<F: FnMut(f64) -> f64>(r: f64, mut f: F) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let rule = rule8();
    let mut total = 0.0;
    let mut hi = r;
    let mut prev: Option<f64> = None;
    let mut prev_ratio: Option<f64> = None;
    let mut growing = 0;
    for _ in 0..200 {
        let lo = 0.5 * hi;
        let part = rule.integrate(lo, hi, &mut f);
        total += part;
        if let Some(p) = prev {
            let ratio = if p != 0.0 { (part / p).abs() } else { 0.0 };
            if ratio >= 0.999 && part.abs() > 1e-300 {
                growing += 1;
                if growing >= 12 {
                    return f64::INFINITY;
                }
            } else {
                growing = 0;
            }
            if part.abs() <= 1e-17 * total.abs().max(1e-300) || part == 0.0 {
                if ratio < 1.0 && ratio > 0.0 {
                    total += part * ratio / (1.0 - ratio);
                }
                return total;
            }
            // power-law singularities: geometric extrapolation once the ratio has settled
            if let Some(r0) = prev_ratio {
                if ratio < 0.999 && (ratio - r0).abs() <= 1e-9 * ratio {
                    return total + part * ratio / (1.0 - ratio);
                }
            }
            prev_ratio = Some(ratio);
        }
        prev = Some(part);
        hi = lo;
        if hi < 1e-280 {
            break;
        }
    }
    total
}

/// Integral of `f` over [r, ∞) using geometrically growing panels,
/// subdivided so that no sub-panel is wider than `max_width`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(r: f64, max_width: f64, mut f: F) -> f64 {
    let rule = rule8();
    let mut total = 0.0;
    let mut lo = r.max(1e-300);
    let mut prev: Option<f64> = None;
    let mut prev_ratio: Option<f64> = None;
    for _ in 0..400 {
        let hi = 2.0 * lo;
        let pieces = (((hi - lo) / max_width).ceil() as usize).clamp(1, 4096);
        let w = (hi - lo) / pieces as f64;
        let mut part = 0.0;
        for p in 0..pieces {
            let a = lo + p as f64 * w;
            part += rule.integrate(a, a + w, &mut f);
        }
        total += part;
        if let Some(pv) = prev {
            let ratio = if pv != 0.0 { (part / pv).abs() } else { 0.0 };
            if part.abs() <= 1e-17 * total.abs().max(1e-300) || part == 0.0 {
                if ratio > 0.0 && ratio < 1.0 {
                    total += part * ratio / (1.0 - ratio);
                }
                return total;
            }
            // power-law tails: geometric extrapolation once the ratio has settled
            if let Some(r0) = prev_ratio {
                if ratio < 0.9 && (ratio - r0).abs() <= 1e-9 * ratio {
                    return total + part * ratio / (1.0 - ratio);
                }
            }
            prev_ratio = Some(ratio);
            if lo > 1e12 {
                if ratio < 1.0 {
                    total += part * ratio / (1.0 - ratio);
                    return total;
                }
                return f64::INFINITY;
            }
        }
        prev = Some(part);
        lo = hi;
    }
    total
}

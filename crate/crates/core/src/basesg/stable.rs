//! Unit-time laws of the symmetric self-similar bases.
//!
//! For exponent `|ξ|^s` the law at time `t` is the unit law dilated by
//! `t^{1/s}`, so tables for every `t` come from three functions of the unit
//! law: the density `p_1`, the centred distribution `F_1 - 1/2` and its
//! antiderivative `G_1(u) = ∫_0^u (F_1 - 1/2)`, used for exact hat projections.

use std::f64::consts::PI;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::quad::rule16;

#[derive(Debug, Clone)]
pub(crate) enum UnitLaw {
    /// N(0, 2): exponent ξ².
    Gauss,
    /// Cauchy: exponent |ξ|.
    Cauchy,
    /// General symmetric α-stable, tabulated.
    Stable(Arc<StableTable>),
}

impl UnitLaw {
    pub(crate) fn for_index(alpha: f64) -> Self {
        if (alpha - 2.0).abs() < 1e-15 {
            UnitLaw::Gauss
        } else if (alpha - 1.0).abs() < 1e-15 {
            UnitLaw::Cauchy
        } else {
            UnitLaw::Stable(StableTable::shared(alpha))
        }
    }

    /// Self-similarity index: the scale at time t is `t^{1/index}`.
    pub(crate) fn index(&self) -> f64 {
        match self {
            UnitLaw::Gauss => 2.0,
            UnitLaw::Cauchy => 1.0,
            UnitLaw::Stable(s) => s.alpha,
        }
    }

    pub(crate) fn scale(&self, t: f64) -> f64 {
        t.powf(1.0 / self.index())
    }

    pub(crate) fn density(&self, u: f64) -> f64 {
        let u = u.abs();
        match self {
            UnitLaw::Gauss => (-0.25 * u * u).exp() / (4.0 * PI).sqrt(),
            UnitLaw::Cauchy => 1.0 / (PI * (1.0 + u * u)),
            UnitLaw::Stable(s) => s.density(u),
        }
    }

    /// P(X > u) for u >= 0.
    pub(crate) fn tail(&self, u: f64) -> f64 {
        let u = u.abs();
        match self {
            UnitLaw::Gauss => 0.5 * libm::erfc(0.5 * u),
            UnitLaw::Cauchy => {
                if u > 1e8 {
                    1.0 / (PI * u)
                } else {
                    0.5 - u.atan() / PI
                }
            }
            UnitLaw::Stable(s) => s.tail(u),
        }
    }

    /// G(u) = ∫_0^u (F(v) - 1/2) dv; even in u.
    pub(crate) fn second_antiderivative(&self, u: f64) -> f64 {
        let u = u.abs();
        match self {
            UnitLaw::Gauss => {
                // variance 2: G = u (F - 1/2) + 2 (p(u) - p(0))
                let p0 = 1.0 / (4.0 * PI).sqrt();
                u * 0.5 * libm::erf(0.5 * u) + 2.0 * (self.density(u) - p0)
            }
            UnitLaw::Cauchy => (u * u.atan() - 0.5 * (u * u).ln_1p()) / PI,
            UnitLaw::Stable(s) => s.second_antiderivative(u),
        }
    }

    /// Beyond this unit-scale distance, point densities are smooth on any
    /// grid cell and the hat projection is computed from point values.
    pub(crate) fn far_field(&self) -> f64 {
        match self {
            UnitLaw::Gauss => 12.0,
            UnitLaw::Cauchy => 50.0,
            UnitLaw::Stable(s) => s.switch,
        }
    }

    /// ∫|p_1'| = 2 p_1(0) for symmetric unimodal laws.
    pub(crate) fn gradient_mass(&self) -> f64 {
        2.0 * self.density(0.0)
    }
}

/// Tabulated unit α-stable law (exponent |ξ|^α) with series continuation.
#[derive(Debug, Clone)]
pub(crate) struct StableTable {
    pub(crate) alpha: f64,
    switch: f64,
    points: usize,
    du: f64,
    p_tab: Vec<f64>,
    g_tab: Vec<f64>,
    f_tab: Vec<f64>,
    /// density series coefficients: p(u) ~ Σ c_k u^{-αk-1}
    coeffs: Vec<f64>,
}

impl StableTable {
    /// Tables are expensive; share one per index across the process.
    fn shared(alpha: f64) -> Arc<Self> {
        static TABLES: OnceLock<Mutex<HashMap<u64, Arc<StableTable>>>> = OnceLock::new();
        let map = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = map.lock().expect("stable tables").get(&alpha.to_bits()) {
            return t.clone();
        }
        let t = Arc::new(Self::new(alpha));
        map.lock()
            .expect("stable tables")
            .entry(alpha.to_bits())
            .or_insert(t)
            .clone()
    }

    pub(crate) fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 2.0);
        // below α = 1 the series converges everywhere and the Fourier
        // integrals are long, so switch to the series early
        let (switch, points) = if alpha >= 1.0 { (30.0, 4096) } else { (4.0, 1024) };
        let du = switch / points as f64;
        let xi_max = 40.0f64.powf(1.0 / alpha);
        let rows = crate::parallel::map_indexed(points + 3, |i| {
            fourier_triplet(alpha, i as f64 * du, xi_max)
        });
        let p_tab = rows.iter().map(|r| r.0).collect();
        let f_tab = rows.iter().map(|r| r.1).collect();
        let g_tab = rows.iter().map(|r| r.2).collect();
        let mut coeffs = Vec::new();
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let kf = k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let sn = (PI * kf * alpha / 2.0).sin();
            let sn = if sn.abs() < 1e-12 { 0.0 } else { sn };
            let c = sign * libm::tgamma(alpha * kf + 1.0) / libm::tgamma(kf + 1.0) * sn / PI;
            let term = (c * switch.powf(-alpha * kf - 1.0)).abs();
            if !c.is_finite() || (alpha > 1.0 && term > prev && term > 0.0) {
                break;
            }
            coeffs.push(c);
            if term > 0.0 {
                prev = term;
                if term < 1e-19 {
                    break;
                }
            }
        }
        Self {
            alpha,
            switch,
            points,
            du,
            p_tab,
            g_tab,
            f_tab,
            coeffs,
        }
    }

    fn interp(&self, tab: &[f64], u: f64, even: bool) -> f64 {
        let p = u / self.du;
        let i = (p.floor() as isize).clamp(1, self.points as isize);
        let s = p - i as f64;
        let at = |j: isize| -> f64 {
            if j < 0 {
                if even {
                    tab[(-j) as usize]
                } else {
                    -tab[(-j) as usize]
                }
            } else {
                tab[j as usize]
            }
        };
        let (y0, y1, y2, y3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        // 4-point Lagrange on nodes -1, 0, 1, 2
        let l0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
        let l1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
        let l2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
        let l3 = (s + 1.0) * s * (s - 1.0) / 6.0;
        y0 * l0 + y1 * l1 + y2 * l2 + y3 * l3
    }

    pub(crate) fn density(&self, u: f64) -> f64 {
        if u < self.switch {
            self.interp(&self.p_tab, u, true).max(0.0)
        } else {
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * u.powf(-self.alpha * (k as f64 + 1.0) - 1.0))
                .sum::<f64>()
                .max(0.0)
        }
    }

    fn series_tail(&self, u: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let ak = self.alpha * (k as f64 + 1.0);
                c * u.powf(-ak) / ak
            })
            .sum()
    }

    pub(crate) fn tail(&self, u: f64) -> f64 {
        if u < self.switch {
            (0.5 - self.interp(&self.f_tab, u, false)).max(0.0)
        } else {
            self.series_tail(u).max(0.0)
        }
    }

    pub(crate) fn second_antiderivative(&self, u: f64) -> f64 {
        if u < self.switch {
            return self.interp(&self.g_tab, u, true);
        }
        let u0 = self.switch;
        let g0 = self.g_tab[self.points];
        // G' = 1/2 - tail; integrate the series of the tail termwise from u0.
        let mut acc = g0 + 0.5 * (u - u0);
        for (k, c) in self.coeffs.iter().enumerate() {
            let ak = self.alpha * (k as f64 + 1.0);
            let a = c / ak;
            let e = 1.0 - ak;
            if e.abs() < 1e-12 {
                acc -= a * (u / u0).ln();
            } else {
                acc -= a * (u.powf(e) - u0.powf(e)) / e;
            }
        }
        acc
    }
}

/// (p(u), F(u) - 1/2, G(u)) for the unit law with exponent |ξ|^α.
fn fourier_triplet(alpha: f64, u: f64, xi_max: f64) -> (f64, f64, f64) {
    let rule = rule16();
    let mut p = 0.0;
    let mut f = 0.0;
    let mut g = 0.0;
    let mut acc = |a: f64, b: f64| {
        let len = b - a;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let xi = a + len * x;
            let e = (-xi.powf(alpha)).exp() * w * len;
            let (s, c) = (u * xi).sin_cos();
            p += e * c;
            f += e * sinc_over(u, xi, s);
            let half = (0.5 * u * xi).sin();
            g += e * if xi > 0.0 { 2.0 * half * half / (xi * xi) } else { 0.5 * u * u };
        }
    };
    // dyadic panels near 0 where ξ^α is not smooth
    let mut hi = 1.0f64.min(xi_max);
    let mut lo = hi * 0.5;
    let mut panels = Vec::new();
    for _ in 0..40 {
        panels.push((lo, hi));
        hi = lo;
        lo *= 0.5;
    }
    panels.push((0.0, hi));
    for (a, b) in panels {
        acc(a, b);
    }
    let width = (PI / (u + 1.0)).min(0.5);
    let mut a = 1.0f64;
    while a < xi_max {
        let b = (a + width).min(xi_max);
        acc(a, b);
        a = b;
    }
    (p / PI, f / PI, g / PI)
}

#[inline]
fn sinc_over(u: f64, xi: f64, s: f64) -> f64 {
    if xi == 0.0 {
        u
    } else {
        s / xi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_table_reproduces_cauchy_closed_forms() {
        // Tabulate α = 1 through the general route and compare with the closed forms.
        let t = StableTable::new(1.0);
        let c = UnitLaw::Cauchy;
        for u in [0.0, 0.37, 1.0, 2.5, 11.0, 29.9, 30.1, 80.0, 1e4] {
            let (a, b) = (t.density(u), c.density(u));
            assert!((a - b).abs() < 1e-9 * b.max(1e-3), "density at {u}: {a} vs {b}");
            let (a, b) = (t.tail(u), c.tail(u));
            assert!((a - b).abs() < 1e-9, "tail at {u}: {a} vs {b}");
            let (a, b) = (t.second_antiderivative(u), c.second_antiderivative(u));
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "G at {u}: {a} vs {b}");
        }
    }

    #[test]
    fn stable_three_halves_is_normalised_and_continuous() {
        let t = StableTable::new(1.5);
        // p(0) = Γ(1 + 1/α) / π
        let p0 = libm::tgamma(1.0 + 1.0 / 1.5) / PI;
        assert!((t.density(0.0) - p0).abs() < 1e-10);
        assert!((t.tail(0.0) - 0.5).abs() < 1e-10);
        let s = t.switch;
        assert!((t.density(s - 1e-9) - t.density(s + 1e-9)).abs() < 1e-9 * t.density(s));
        assert!((t.tail(s - 1e-9) - t.tail(s + 1e-9)).abs() < 1e-10);
        let (a, b) = (
            t.second_antiderivative(s - 1e-9),
            t.second_antiderivative(s + 1e-9),
        );
        assert!((a - b).abs() < 1e-8);
    }
}

//! Antiderivative of SiLU, the potential behind the gated-MLP energy.

use std::f64::consts::PI;

use crate::tensor::softplus;

/// Lower end of the integral; `phi(PHI_REFERENCE) == 0`.
pub const PHI_REFERENCE: f64 = -30.0;

const PI2_6: f64 = PI * PI / 6.0;

/// Real dilogarithm `Li₂(x) = -∫₀ˣ ln(1-t)/t dt` for `x ≤ 1`.
pub fn dilog(x: f64) -> f64 {
    assert!(x <= 1.0 && !x.is_nan(), "dilog is real only for x <= 1, got {x}");
    if x == 1.0 {
        PI2_6
    } else if x > 0.5 {
        PI2_6 - x.ln() * (-x).ln_1p() - dilog_series(1.0 - x)
    } else if x >= 0.0 {
        dilog_series(x)
    } else if x >= -1.0 {
        // Landen: maps [-1, 0) onto (0, 1/2].
        let l = (-x).ln_1p();
        -dilog_series(x / (x - 1.0)) - 0.5 * l * l
    } else {
        let l = (-x).ln();
        -PI2_6 - 0.5 * l * l - dilog(1.0 / x)
    }
}

/// `Σ yᵏ/k²`, converging geometrically for `0 ≤ y ≤ 1/2`.
fn dilog_series(y: f64) -> f64 {
    let mut total = 0.0;
    let mut pow = y;
    let mut k = 1.0_f64;
    while pow > 1e-18 * k * k {
        total += pow / (k * k);
        pow *= y;
        k += 1.0;
    }
    total
}

/// `z·softplus(z) + Li₂(-eᶻ)`, which vanishes as `z → -∞`.
fn silu_integral_from_neg_infinity(z: f64) -> f64 {
    if z <= 0.0 {
        z * softplus(z) + dilog(-z.exp())
    } else {
        // Inversion of Li₂(-eᶻ) keeps the argument inside [-1, 0).
        z * softplus(z) - PI2_6 - 0.5 * z * z - dilog(-(-z).exp())
    }
}

/// `φ(z) = ∫_{-30}^{z} SiLU(t) dt`.
pub fn phi(z: f64) -> f64 {
    silu_integral_from_neg_infinity(z) - silu_integral_from_neg_infinity(PHI_REFERENCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::silu;

    /// Composite Gauss–Legendre (5 nodes) on `n` panels.
    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let h = (b - a) / n as f64;
        (0..n)
            .map(|i| {
                let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                X.iter().zip(W).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
            })
            .sum()
    }

    #[test]
    fn dilog_known_values() {
        assert!((dilog(0.0)).abs() < 1e-16);
        assert!((dilog(-1.0) + PI * PI / 12.0).abs() < 1e-14);
        assert!((dilog(0.5) - (PI * PI / 12.0 - 0.5 * 2f64.ln().powi(2))).abs() < 1e-14);
        assert!((dilog(1.0) - PI2_6).abs() < 1e-15);
    }

    #[test]
    fn phi_differences_match_quadrature() {
        for &(a, b) in &[(-5.0, 3.0), (-1.0, 1.0), (0.2, 7.5), (-12.0, -2.0), (2.0, 30.0)] {
            let exact = quad(silu, a, b, 400);
            assert!((phi(b) - phi(a) - exact).abs() < 1e-8, "[{a}, {b}]");
        }
        assert!((phi(0.0) - quad(silu, PHI_REFERENCE, 0.0, 2000)).abs() < 1e-8);
        assert_eq!(phi(PHI_REFERENCE), 0.0);
    }

    #[test]
    fn derivative_is_silu() {
        let h = 1e-5;
        for i in -40..=40 {
            let z = i as f64 * 0.25;
            let d = (phi(z + h) - phi(z - h)) / (2.0 * h);
            assert!((d - silu(z)).abs() < 1e-6, "z = {z}");
        }
        assert!(((phi(1e-5) - phi(-1e-5)) / 2e-5).abs() < 1e-6);
    }

    #[test]
    fn monotone_for_nonnegative_arguments() {
        let mut prev = phi(0.0);
        for i in 1..=400 {
            let cur = phi(i as f64 * 0.05);
            assert!(cur >= prev);
            prev = cur;
        }
    }
}

//! Special functions used by the variational updates and the lower bound.
//!
//! The checked entry points (`digamma`, `log_gamma`, `log_normalize`) reject
//! inputs outside their domain. The inference loop calls the unchecked
//! `psi`/`lgamma` variants on values it already guarantees to be positive.

use crate::error::{HdspError, Result};

/// B_{2k} / (2k) for k = 1..7, the coefficients of the digamma asymptotic series.
const DIGAMMA_ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Argument above which the asymptotic series is accurate to well below 1e-12.
const DIGAMMA_ASYMPTOTIC_FROM: f64 = 6.0;

// Lanczos approximation, Pugh (2004), r = 10.900511, 11 terms.
const LANCZOS_R: f64 = 10.900511;
const LANCZOS_DK: [f64; 11] = [
    2.485_740_891_387_535_5e-5,
    1.051_423_785_817_219_7,
    -3.456_870_972_220_162_5,
    4.512_277_094_668_948,
    -2.982_852_253_235_766_4,
    1.056_397_115_771_267,
    -1.954_287_731_916_458_7e-1,
    1.709_705_434_044_412e-2,
    -5.719_261_174_043_057e-4,
    4.633_994_733_599_057e-6,
    -2.719_949_084_886_077_2e-9,
];
/// ln(2 sqrt(e / pi))
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_2;

fn check_positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(HdspError::Domain(format!(
            "{what} requires a finite, strictly positive argument (got {x})"
        )))
    }
}

/// Digamma function ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    Ok(psi(x))
}

/// Natural log of the gamma function for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma")?;
    Ok(lgamma(x))
}

/// Digamma without argument checks. `x` must be finite and positive.
#[inline]
pub fn psi(mut x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite(), "psi({x})");
    let mut shift = 0.0;
    while x < DIGAMMA_ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_ASYMPTOTIC {
        series += c * pow;
        pow *= inv2;
    }
    shift + x.ln() - 0.5 / x - series
}

/// ln Γ(x) without argument checks. `x` must be finite and positive.
#[inline]
pub fn lgamma(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite(), "lgamma({x})");
    if x < 0.5 {
        // Γ(x) = Γ(x + 1) / x keeps us away from the reflection formula.
        return lgamma(x + 1.0) - x.ln();
    }
    let s = LANCZOS_DK
        .iter()
        .enumerate()
        .skip(1)
        .fold(LANCZOS_DK[0], |s, (i, d)| s + d / (x + i as f64 - 1.0));
    s.ln() + LN_2_SQRT_E_OVER_PI + (x - 0.5) * ((x - 0.5 + LANCZOS_R).ln() - 1.0)
}

/// ln Σ exp(v_i), computed with the max shift.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Turns unnormalized log weights into a probability vector.
pub fn log_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(HdspError::Domain("log_normalize of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(HdspError::Domain(format!(
            "log_normalize requires finite inputs (got {bad})"
        )));
    }
    let mut out = v.to_vec();
    log_normalize_in_place(&mut out);
    Ok(out)
}

/// In-place variant used on the hot path; inputs must be finite.
#[inline]
pub fn log_normalize_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with mpmath at 40 digits.
    const DIGAMMA_REF: [(f64, f64); 10] = [
        (1e-6, -1000000.5772140199687),
        (0.1, -10.423754940411076795),
        (0.5, -1.9635100260214234794),
        (1.0, -0.57721566490153286061),
        (2.5, 0.70315664064524318723),
        (6.0, 1.7061176684318004727),
        (10.0, 2.2517525890667211076),
        (123.456, 4.8118293238289853873),
        (1e4, 9.2102903711428494036),
        (1e8, 18.420680738952365464),
    ];

    const LGAMMA_REF: [(f64, f64); 8] = [
        (1e-6, 13.815509980749431669),
        (0.1, 2.2527126517342059599),
        (0.5, 0.57236494292470008707),
        (2.5, 0.28468287047291915963),
        (6.0, 4.7874917427820459942),
        (10.0, 12.801827480081469611),
        (123.456, 469.60554712992946873),
        (1e4, 82099.717496442377273),
    ];

    #[test]
    fn digamma_matches_reference() {
        for (x, want) in DIGAMMA_REF {
            let got = digamma(x).unwrap();
            assert!((got - want).abs() <= 1e-10, "psi({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn digamma_small_examples() {
        assert_eq!(digamma(2.0).unwrap() - digamma(1.0).unwrap(), 1.0);
        let e1 = (digamma(1.0).unwrap() + 0.5772156649015329).abs();
        assert!(e1 < 1e-12, "{e1}");
        let e2 = (digamma(0.5).unwrap() + 1.9635100260214235).abs();
        assert!(e2 < 1e-12, "{e2}");
    }

    #[test]
    fn log_gamma_matches_reference() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-15);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-15);
        for (x, want) in LGAMMA_REF {
            let got = log_gamma(x).unwrap();
            assert!(
                ((got - want) / want).abs() <= 1e-12,
                "lgamma({x}) = {got}, want {want}"
            );
        }
        assert!((log_gamma(0.5).unwrap() - 0.5723649429247001).abs() < 1e-15);
        let big = log_gamma(1e8).unwrap();
        assert!(((big - 1742068066.1038347093) / big).abs() < 1e-12);
    }

    #[test]
    fn recurrences() {
        for x in [0.1, 1.0, 10.0, 1000.0] {
            assert!((psi(x + 1.0) - psi(x) - 1.0 / x).abs() < 1e-10, "psi at {x}");
            assert!((lgamma(x + 1.0) - lgamma(x) - x.ln()).abs() < 1e-10, "lgamma at {x}");
        }
    }

    #[test]
    fn domain_errors() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(digamma(bad), Err(HdspError::Domain(_))));
            assert!(matches!(log_gamma(bad), Err(HdspError::Domain(_))));
        }
        assert!(matches!(log_normalize(&[]), Err(HdspError::Domain(_))));
        assert!(log_normalize(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn log_normalize_examples() {
        assert_eq!(log_normalize(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let big = log_normalize(&[1000.0; 3]).unwrap();
        for p in big {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let q = log_normalize(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((q[0] - 0.25).abs() < 1e-15 && (q[1] - 0.75).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn log_normalize_is_shift_invariant(
                v in prop::collection::vec(-50.0f64..50.0, 1..12),
                c in -500.0f64..500.0,
            ) {
                let a = log_normalize(&v).unwrap();
                let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
                let b = log_normalize(&shifted).unwrap();
                prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}

//! Standard normal, half-normal and centered truncated-normal functions.
//!
//! CDFs go through `erfc` so that tail probabilities keep full relative
//! precision; the block-maximum law raises the half-normal CDF to powers in
//! the thousands, which amplifies any absolute error near 1.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_780_329_736_406;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub(crate) fn normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x).
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Φ(b) − Φ(a) for a ≤ b without cancellation in either tail.
pub(crate) fn normal_interval_mass(a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        0.5 * (libm::erfc(-b * FRAC_1_SQRT_2) - libm::erfc(-a * FRAC_1_SQRT_2))
    } else if a >= 0.0 {
        0.5 * (libm::erfc(a * FRAC_1_SQRT_2) - libm::erfc(b * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * libm::erfc(-a * FRAC_1_SQRT_2) - 0.5 * libm::erfc(b * FRAC_1_SQRT_2)
    }
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    Ok(ppnd16(p))
}

// Wichura's AS 241 (PPND16), relative accuracy about 1e-16.
fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2_509.080_928_730_122_7 * r + 33_430.575_583_588_128) * r
            + 67_265.770_927_008_700)
            * r
            + 45_921.953_931_549_871)
            * r
            + 13_731.693_765_509_461)
            * r
            + 1_971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_6;
        let den = ((((((5_226.495_278_852_545_9 * r + 28_729.085_735_721_943) * r
            + 39_307.895_800_092_711)
            * r
            + 21_213.794_301_586_596)
            * r
            + 5_394.196_021_424_751_1)
            * r
            + 687.187_007_492_057_91)
            * r
            + 42.313_330_701_600_911)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_185) * r
            + 0.241_780_725_177_450_61)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_6)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_6;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_07)
            * r
            + 0.689_767_334_985_100_0)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8;
        let den = ((((((2.044_263_103_389_939_8e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_7e-5)
            * r
            + 7.868_691_311_456_132_6e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_81)
            * r
            + 0.599_832_206_555_887_94)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Þ(m) = 2Φ(m) − 1, the CDF of |Z|.
pub fn halfnormal_cdf(m: f64) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::domain(format!(
            "half-normal CDF needs m >= 0, got {m}"
        )));
    }
    Ok(libm::erf(m * FRAC_1_SQRT_2))
}

/// ln Þ(m), switching to `ln_1p(-erfc)` once Þ is close to 1.
pub(crate) fn halfnormal_log_cdf(m: f64) -> f64 {
    if m < 1.0 {
        libm::erf(m * FRAC_1_SQRT_2).ln()
    } else {
        (-libm::erfc(m * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// Þ⁻¹(p) for 0 ≤ p < 1.
pub fn halfnormal_quantile(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain(format!(
            "half-normal quantile needs 0 <= p < 1, got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(halfnormal_quantile_upper(1.0 - p))
}

/// Þ⁻¹(1 − tail) for 0 < tail ≤ 1, keeping precision when `tail` is tiny.
pub(crate) fn halfnormal_quantile_upper(tail: f64) -> f64 {
    debug_assert!(tail > 0.0 && tail <= 1.0);
    if tail >= 1.0 {
        return 0.0;
    }
    -ppnd16(0.5 * tail)
}

/// Ψ(x; m, 1): CDF of N(0, 1) truncated to [−m, m].
pub fn trunc_normal_cdf(x: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::domain(format!(
            "truncation limit must be positive, got {m}"
        )));
    }
    if x.is_nan() {
        return Err(Error::domain("truncated normal CDF at NaN"));
    }
    Ok(trunc_normal_cdf_unchecked(
        x,
        m,
        libm::erf(m * FRAC_1_SQRT_2),
    ))
}

/// Ψ(x; m, 1) given the normalizer `z = Φ(m) − Φ(−m)`. Exactly antisymmetric
/// about 1/2.
#[inline]
pub(crate) fn trunc_normal_cdf_unchecked(x: f64, m: f64, z: f64) -> f64 {
    if x <= -m {
        0.0
    } else if x >= m {
        1.0
    } else if x <= 0.0 {
        normal_interval_mass(-m, x) / z
    } else {
        1.0 - normal_interval_mass(-m, -x) / z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Maclaurin series for erf; converges for every finite x and is
    // evaluated with compensated summation for |x| ≤ 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut comp = 0.0;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            let y = add - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum * 2.0 / PI.sqrt()
    }

    #[test]
    fn cdf_against_series_oracle() {
        for i in -30..=30 {
            let x = i as f64 * 0.1;
            let oracle = 0.5 * (1.0 + erf_series(x * FRAC_1_SQRT_2));
            assert!(
                (normal_cdf(x) - oracle).abs() < 1e-14,
                "x = {x}: {} vs {}",
                normal_cdf(x),
                oracle
            );
        }
    }

    #[test]
    fn named_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // erf-series oracle, 1.15 / sqrt(2)
        assert!((normal_cdf(1.15) - 0.874_928_064_362_849_8).abs() < 1e-12);
        let delta = 0.5 * (1.0 / 32.0 + 1.0 / 30.0);
        let q = normal_quantile(1.0 - delta).unwrap();
        assert!((q - 1.848).abs() < 1e-3, "{q}");
        assert_eq!(halfnormal_cdf(0.0).unwrap(), 0.0);
        let m = halfnormal_quantile(0.5f64.powf(1.0 / 4096.0)).unwrap();
        assert!((m - 3.76).abs() < 0.01, "{m}");
        let m32 = halfnormal_quantile(2f64.powf(-1.0 / 32.0)).unwrap();
        // scipy: halfnorm.ppf(2**(-1/32)) = 2.300358146983088
        assert!((m32 - 2.300_358_146_983_088).abs() < 1e-12, "{m32}");
    }

    #[test]
    fn quantile_reference_values() {
        // 60-digit mpmath root of Φ(x) = p
        let cases = [
            (1e-20, -9.262340089798407),
            (1e-6, -4.753424308822899),
            (0.025, -1.9599639845400543),
            (0.3, -0.5244005127080408),
            (0.5, 0.0),
            (0.9, 1.2815515655446006),
            (0.999, 3.090232306167813),
        ];
        for (p, expect) in cases {
            let q = normal_quantile(p).unwrap();
            assert!(
                (q - expect).abs() <= 1e-14 * expect.abs().max(1.0),
                "p = {p}: {q} vs {expect}"
            );
        }
    }

    #[test]
    fn quantile_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(normal_quantile(p), Err(Error::Domain(_))));
        }
        assert!(matches!(halfnormal_cdf(-1e-9), Err(Error::Domain(_))));
        assert!(matches!(halfnormal_quantile(1.0), Err(Error::Domain(_))));
        assert_eq!(halfnormal_quantile(0.0).unwrap(), 0.0);
    }

    #[test]
    fn truncated_normal_values() {
        assert_eq!(trunc_normal_cdf(0.0, 0.7).unwrap(), 0.5);
        assert_eq!(trunc_normal_cdf(-2.0, 2.0).unwrap(), 0.0);
        assert_eq!(trunc_normal_cdf(2.0, 2.0).unwrap(), 1.0);
        let tail = 1.0 - trunc_normal_cdf(0.65 * 3.76, 3.76).unwrap();
        assert!((tail - 0.007).abs() < 5e-4, "{tail}");
        // (Φ(1.15) − Φ(−2.3005)) / (Φ(2.3005) − Φ(−2.3005)) from series values
        let oracle = {
            let phi = |x: f64| 0.5 * (1.0 + erf_series(x * FRAC_1_SQRT_2));
            (phi(1.15) - phi(-2.3005)) / (phi(2.3005) - phi(-2.3005))
        };
        let v = trunc_normal_cdf(1.15, 2.3005).unwrap();
        assert!((v - oracle).abs() < 1e-13);
        assert!((v - 0.8831).abs() < 1e-4, "{v}");
        assert!(trunc_normal_cdf(0.0, 0.0).is_err());
    }

    #[test]
    fn log_cdf_branches_agree() {
        for m in [0.5, 0.99, 1.0, 1.01, 2.0, 5.0] {
            let direct = libm::erf(m * FRAC_1_SQRT_2).ln();
            assert!((halfnormal_log_cdf(m) - direct).abs() < 1e-14);
        }
    }
}

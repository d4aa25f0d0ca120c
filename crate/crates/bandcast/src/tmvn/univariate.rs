//! Univariate normal machinery with full tail accuracy.
//!
//! Everything downstream (sequential proposals, Gibbs conditionals,
//! acceptance ratios) works in log probability space so that truncation
//! regions hundreds of standard deviations out remain representable. The
//! building blocks:
//!
//! - `erfcx(x) = exp(x^2) erfc(x)`, overflow-free for large `x`;
//! - `ln_phi_tail(x) = ln P(Z > x)`, exact far past where `erfc` underflows;
//! - `ln_normal_prob(a, b) = ln P(a < Z < b)` via the cancellation-safe
//!   three-case split;
//! - `inv_phi`, the Wichura rational approximation of the normal quantile;
//! - `trunc_norm_icdf`, an inverse-CDF truncated-normal draw that switches to
//!   survival-function form whenever the interval sits in a tail.

// Rational-approximation coefficients are transcribed digit-for-digit from the
// published tables, some past f64 resolution.
#![allow(clippy::excessive_precision)]

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal log density.
#[inline]
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Scaled complementary error function `exp(x^2) erfc(x)` for `x >= 0`.
///
/// Below 20 the direct product is exact to rounding; beyond that `erfc`
/// approaches the subnormal range, so the asymptotic expansion
/// `erfcx(x) ~ (x sqrt(pi))^{-1} sum_k (-1)^k (2k-1)!! / (2x^2)^k`
/// takes over (its truncation error at `x = 20` is far below one ulp).
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 20.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        let inv2x2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=10u32 {
            term *= -((2 * k - 1) as f64) * inv2x2;
            sum += term;
        }
        sum / (x * std::f64::consts::PI.sqrt())
    }
}

/// `ln P(Z > x)` for any finite `x`; handles `x = +-inf` too.
pub fn ln_phi_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x >= 0.0 {
        // P(Z > x) = 0.5 erfcx(x/sqrt2) exp(-x^2/2)
        -0.5 * x * x - std::f64::consts::LN_2 + erfcx(x / SQRT_2).ln()
    } else {
        // P(Z > x) = 1 - P(Z > -x)
        (-(ln_phi_tail(-x).exp())).ln_1p()
    }
}

/// `ln P(a < Z < b)` computed without cancellation in either tail.
/// Returns `-inf` when the interval carries no representable mass.
pub fn ln_normal_prob(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b || (a.is_nan() || b.is_nan()));
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // Both bounds in the upper tail: difference of survival functions.
        let pa = ln_phi_tail(a);
        let pb = ln_phi_tail(b);
        pa + (-((pb - pa).exp())).ln_1p()
    } else if b < 0.0 {
        // Mirror image in the lower tail.
        let pa = ln_phi_tail(-a);
        let pb = ln_phi_tail(-b);
        pb + (-((pa - pb).exp())).ln_1p()
    } else {
        // Interval straddles zero: both tail masses are at most one half.
        let lower = if a == f64::NEG_INFINITY {
            0.0
        } else {
            0.5 * libm::erfc(-a / SQRT_2)
        };
        let upper = if b == f64::INFINITY {
            0.0
        } else {
            0.5 * libm::erfc(b / SQRT_2)
        };
        (-(lower + upper)).ln_1p()
    }
}

/// Normal quantile (Wichura's rational approximations), accurate to within a
/// few ulps across (0, 1).
pub fn inv_phi(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
                + 6.726_577_092_700_870_1e4)
                * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946_1e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5);
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let ln_r = r.ln();
    let s = (-ln_r).sqrt();
    let x = if s <= 5.0 {
        let t = s - 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * t + 2.272_384_498_926_918_4e-2) * t
            + 2.417_807_251_774_506e-1)
            * t
            + 1.270_458_252_452_368_4)
            * t
            + 3.647_848_324_763_204_5)
            * t
            + 5.769_497_221_460_691)
            * t
            + 4.630_337_846_156_545)
            * t
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * t + 5.475_938_084_995_345e-4) * t
            + 1.519_866_656_361_645_7e-2)
            * t
            + 1.481_039_764_274_800_8e-1)
            * t
            + 6.897_673_349_851e-1)
            * t
            + 1.676_384_830_183_803_8)
            * t
            + 2.053_191_626_637_759)
            * t
            + 1.0;
        num / den
    } else {
        let t = s - 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * t + 2.711_555_568_743_487_6e-5) * t
            + 1.242_660_947_388_078_4e-3)
            * t
            + 2.653_218_952_657_612_4e-2)
            * t
            + 2.965_605_718_285_048_7e-1)
            * t
            + 1.784_826_539_917_291_3)
            * t
            + 5.463_784_911_164_114)
            * t
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * t + 1.421_511_758_316_446e-7) * t
            + 1.846_318_317_510_054_8e-5)
            * t
            + 7.868_691_311_456_133e-4)
            * t
            + 1.487_536_129_085_061_5e-2)
            * t
            + 1.369_298_809_227_358_1e-1)
            * t
            + 5.998_322_065_558_879e-1)
            * t
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Inverse survival function from a log probability: the `x` with
/// `ln P(Z > x) = ln_q`, valid for `ln_q <= ln(1/2)` and arbitrarily
/// negative `ln_q`.
pub fn inv_phi_tail_from_ln(ln_q: f64) -> f64 {
    debug_assert!(ln_q <= std::f64::consts::LN_2.mul_add(-1.0, f64::EPSILON));
    if ln_q == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let mut x = if ln_q > -600.0 {
        // Within double range: reuse the quantile approximation.
        -inv_phi(ln_q.exp())
    } else {
        // Asymptotic seed: ln q ~ -x^2/2 - ln(x sqrt(2 pi)).
        let mut x0 = (-2.0 * ln_q).sqrt();
        for _ in 0..4 {
            x0 = (-2.0 * (ln_q + x0.ln() + LN_SQRT_2PI)).sqrt();
        }
        x0
    };
    // Newton polish on f(x) = ln_phi_tail(x) - ln_q with
    // f'(x) = -exp(norm_logpdf(x) - ln_phi_tail(x)); converges quadratically
    // and is stable in log space.
    for _ in 0..4 {
        let f = ln_phi_tail(x) - ln_q;
        let fp = -(norm_logpdf(x) - ln_phi_tail(x)).exp();
        let step = f / fp;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Inverse-CDF draw from the standard normal truncated to `[a, b]` at
/// uniform `u` in (0, 1). Intervals lying in a tail are handled in survival
/// space so accuracy holds arbitrarily far out.
pub fn trunc_norm_icdf(a: f64, b: f64, u: f64) -> f64 {
    debug_assert!(a < b);
    debug_assert!(u > 0.0 && u < 1.0);
    if a >= 0.0 {
        right_tail_icdf(a, b, u)
    } else if b <= 0.0 {
        // Mirrored interval: the reflection reverses quantile orientation.
        -right_tail_icdf(-b, -a, 1.0 - u)
    } else {
        // Interval straddles zero: plain probability space is accurate here.
        let pa = phi_cdf(a);
        let pb = phi_cdf(b);
        let x = inv_phi(pa + u * (pb - pa));
        x.clamp(a, b)
    }
}

fn right_tail_icdf(a: f64, b: f64, u: f64) -> f64 {
    let lpa = ln_phi_tail(a);
    let lpb = ln_phi_tail(b);
    // Survival at the draw: q = pa + u (pb - pa), in log space.
    let ln_q = lpa + (u * (lpb - lpa).exp_m1()).ln_1p();
    inv_phi_tail_from_ln(ln_q).clamp(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Mills-ratio continued fraction: an oracle for ln P(Z > x) at large x,
    /// independent of the implementations above.
    fn ln_tail_via_mills(x: f64) -> f64 {
        let mut cf = 0.0;
        for k in (1..=60u32).rev() {
            cf = k as f64 / (x + cf);
        }
        norm_logpdf(x) - (x + cf).ln()
    }

    fn tail_via_mills(x: f64) -> f64 {
        ln_tail_via_mills(x).exp()
    }

    #[test]
    fn erfcx_matches_direct_product_below_switch() {
        for &x in &[0.0, 0.3, 1.0, 2.5, 5.0, 10.0, 19.9] {
            assert_relative_eq!(
                erfcx(x),
                (x * x).exp() * libm::erfc(x),
                max_relative = 1e-13
            );
        }
        assert_relative_eq!(erfcx(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn erfcx_is_continuous_at_the_switch_and_decreasing() {
        // Independently computed value at the branch switch.
        assert_relative_eq!(
            erfcx(20.0),
            0.028_174_348_741_051_32,
            max_relative = 1e-13
        );
        let below = erfcx(20.0 - 1e-10);
        let above = erfcx(20.0 + 1e-10);
        assert_relative_eq!(below, above, max_relative = 1e-10);
        let mut prev = erfcx(0.5);
        for i in 1..200 {
            let x = 0.5 + i as f64 * 0.5;
            let v = erfcx(x);
            assert!(v < prev, "erfcx must decrease, failed at {x}");
            prev = v;
        }
    }

    #[test]
    fn ln_phi_tail_matches_mills_oracle() {
        for &x in &[3.0, 5.0, 8.0, 12.0, 20.0, 35.0, 50.0, 100.0] {
            assert_relative_eq!(ln_phi_tail(x), ln_tail_via_mills(x), max_relative = 1e-12);
        }
        // Moderate arguments against erfc directly.
        for &x in &[-8.0, -3.0, -1.0, 0.0, 1.0, 2.0] {
            assert_relative_eq!(
                ln_phi_tail(x),
                (0.5 * libm::erfc(x / SQRT_2)).ln(),
                max_relative = 1e-12
            );
        }
        assert_eq!(ln_phi_tail(f64::INFINITY), f64::NEG_INFINITY);
        assert_eq!(ln_phi_tail(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn ln_normal_prob_is_consistent_across_cases() {
        // Moderate interval: direct CDF difference.
        for &(a, b) in &[(-1.0, 2.0), (-0.5, 0.5), (-3.0, -1.0), (1.0, 3.0)] {
            let direct = (phi_cdf(b) - phi_cdf(a)).ln();
            assert_relative_eq!(ln_normal_prob(a, b), direct, max_relative = 1e-10);
        }
        // Deep tail against the Mills oracle.
        let ours = ln_normal_prob(30.0, 31.0);
        let oracle = (tail_via_mills(30.0) - tail_via_mills(31.0)).ln();
        assert_relative_eq!(ours, oracle, max_relative = 1e-10);
        // Symmetric under reflection.
        assert_relative_eq!(
            ln_normal_prob(-31.0, -30.0),
            ln_normal_prob(30.0, 31.0),
            max_relative = 1e-13
        );
        // Half-infinite intervals.
        assert_relative_eq!(
            ln_normal_prob(0.0, f64::INFINITY),
            (0.5f64).ln(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            ln_normal_prob(f64::NEG_INFINITY, f64::INFINITY),
            0.0,
            epsilon = 1e-14
        );
        // Region far beyond double range still has a finite log mass.
        let extreme = ln_normal_prob(60.0, 61.0);
        assert!(extreme.is_finite() && extreme < -1700.0);
    }

    #[test]
    fn inv_phi_round_trips_through_the_cdf() {
        for &p in &[
            1e-300, 1e-100, 1e-30, 1e-10, 1e-4, 0.025, 0.3, 0.5, 0.7, 0.975, 1.0 - 1e-10,
        ] {
            let x = inv_phi(p);
            // Evaluate the CDF in whichever tail keeps precision.
            let back = if x <= 0.0 {
                ln_phi_tail(-x).exp()
            } else {
                1.0 - ln_phi_tail(x).exp()
            };
            assert_relative_eq!(back, p, max_relative = 5e-12);
        }
        assert_relative_eq!(inv_phi(0.975), 1.959_963_984_540_054, max_relative = 1e-12);
        assert_eq!(inv_phi(0.5), 0.0);
        assert_relative_eq!(inv_phi(0.25), -inv_phi(0.75), max_relative = 1e-13);
    }

    #[test]
    fn inv_phi_tail_from_ln_handles_extreme_logs() {
        for &x in &[0.5, 2.0, 8.0, 20.0, 38.0, 60.0, 200.0] {
            let ln_q = ln_phi_tail(x);
            assert_relative_eq!(inv_phi_tail_from_ln(ln_q), x, max_relative = 1e-12);
        }
        // Far beyond representable probabilities.
        let x = inv_phi_tail_from_ln(-1e6);
        assert_relative_eq!(ln_phi_tail(x), -1e6, max_relative = 1e-10);
    }

    #[test]
    fn trunc_norm_icdf_inverts_the_truncated_cdf() {
        let cases = [
            (-1.0, 2.0),
            (-0.3, 0.1),
            (0.0, f64::INFINITY),
            (2.0, 3.0),
            (8.0, 9.0),
            (35.0, 36.0),
            (-36.0, -35.0),
            (f64::NEG_INFINITY, -4.0),
            (f64::NEG_INFINITY, f64::INFINITY),
        ];
        for &(a, b) in &cases {
            let lpa = ln_phi_tail(a);
            let lpb = ln_phi_tail(b);
            for &u in &[1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
                let x = trunc_norm_icdf(a, b, u);
                assert!(x >= a && x <= b, "draw {x} outside [{a}, {b}]");
                // Recover the quantile from survival logs; the ratio of
                // expm1 terms keeps full precision even deep in a tail.
                let u_hat = (ln_phi_tail(x) - lpa).exp_m1() / (lpb - lpa).exp_m1();
                assert!(
                    (u_hat - u).abs() < 1e-9,
                    "[{a}, {b}] u {u}: recovered {u_hat} from draw {x}"
                );
            }
        }
    }

    #[test]
    fn trunc_norm_icdf_median_of_symmetric_interval_is_zero() {
        let x = trunc_norm_icdf(-1.5, 1.5, 0.5);
        assert!(x.abs() < 1e-12);
    }
}

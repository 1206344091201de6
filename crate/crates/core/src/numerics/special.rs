//! Scalar special functions: normal and Student-t distributions, the Riemann
//! zeta function and Euler's totient.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Complementary error function (Cody's rational Chebyshev approximations),
/// accurate to a few ulps over the whole real line.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    let r = if y <= 0.5 {
        return 1.0 - erf_small(x);
    } else if y <= 4.0 {
        const C: [f64; 9] = [
            5.641_884_969_886_700_9e-1,
            8.883_149_794_388_376,
            6.611_919_063_714_163e1,
            2.986_351_381_974_001_3e2,
            8.819_522_212_417_691e2,
            1.712_047_612_634_070_6e3,
            2.051_078_377_826_071_5e3,
            1.230_339_354_797_997_2e3,
            2.153_115_354_744_038_5e-8,
        ];
        const D: [f64; 8] = [
            1.574_492_611_070_983_5e1,
            1.176_939_508_913_125e2,
            5.371_811_018_620_099e2,
            1.621_389_574_566_690_2e3,
            3.290_799_235_733_459_6e3,
            4.362_619_090_143_247e3,
            3.439_367_674_143_721_6e3,
            1.230_339_354_803_749_4e3,
        ];
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else if y < 26.7 {
        const P: [f64; 6] = [
            3.053_266_349_612_323_4e-1,
            3.603_448_999_498_044_4e-1,
            1.257_817_261_112_292_5e-1,
            1.608_378_514_874_227_7e-2,
            6.587_491_615_298_378e-4,
            1.631_538_713_730_209_8e-2,
        ];
        const Q: [f64; 5] = [
            2.568_520_192_289_822,
            1.872_952_849_923_467_3,
            5.279_051_029_514_284e-1,
            6.051_834_131_244_132e-2,
            2.335_204_976_268_691_8e-3,
        ];
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let v = z * (num + P[4]) / (den + Q[4]);
        (FRAC_1_SQRT_PI - v) / y
    } else {
        0.0
    };
    // exp(-y²) split so the rounding of y² does not leak into the result.
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    let r = (-ysq * ysq).exp() * (-del).exp() * r;
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6,
        1.138_641_541_510_501_6e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_4e3,
        1.857_777_061_846_031_5e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412e1,
        2.440_246_379_344_441_7e2,
        1.282_616_526_077_372_3e3,
        2.844_236_833_439_170_6e3,
    ];
    let z = x * x;
    let mut num = A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + A[i]) * z;
        den = (den + B[i]) * z;
    }
    x * (num + A[3]) / (den + B[3])
}

pub fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / SQRT_2PI
}

pub fn normal_ln_pdf(t: f64) -> f64 {
    -0.5 * t * t - LN_SQRT_2PI
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

/// Upper tail `1 - Φ(t)` without cancellation.
pub fn normal_sf(t: f64) -> f64 {
    0.5 * erfc(t / SQRT_2)
}

/// Inverse of [`normal_cdf`].
///
/// A rational approximation (Acklam) seeds two Halley steps on the lower
/// tail, which brings the round-trip error to the level of `erfc` itself.
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            what: "normal_quantile",
            value: u,
            domain: "(0, 1)",
        });
    }
    Ok(normal_quantile_unchecked(u))
}

pub(crate) fn normal_quantile_unchecked(u: f64) -> f64 {
    // Work on the lower tail; the upper tail follows by symmetry.
    let (p, sign) = if u <= 0.5 { (u, 1.0) } else { (1.0 - u, -1.0) };
    if p == 0.5 {
        return 0.0;
    }
    let mut x = acklam_lower(p);
    for _ in 0..2 {
        let e = normal_cdf(x) - p;
        let t = e * SQRT_2PI * (0.5 * x * x).exp();
        x -= t / (1.0 + 0.5 * x * t);
    }
    sign * x
}

fn acklam_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

fn check_dof(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "degrees of freedom",
            value: nu,
            domain: "(0, inf)",
        })
    }
}

/// Log of the normalising constant `Γ((ν+1)/2) / (√(νπ) Γ(ν/2))`.
pub fn t_ln_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

pub fn t_ln_pdf(t: f64, nu: f64) -> f64 {
    t_ln_norm(nu) - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()
}

pub fn t_pdf(t: f64, nu: f64) -> f64 {
    t_ln_pdf(t, nu).exp()
}

/// `P(T <= -|t|)`, the lower tail mass, computed without cancellation.
fn t_lower_tail(t: f64, nu: f64) -> f64 {
    let x = nu / (nu + t * t);
    0.5 * beta_reg(0.5 * nu, 0.5, x)
}

pub fn t_cdf(t: f64, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    if t.is_nan() {
        return Err(Error::NonFinite("t_cdf"));
    }
    Ok(t_cdf_unchecked(t, nu))
}

pub(crate) fn t_cdf_unchecked(t: f64, nu: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = t_lower_tail(t, nu);
    if t <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Inverse of [`t_cdf`].
///
/// Seeded by a Cornish-Fisher expansion (or the power-law tail when that is
/// more extreme) and refined by Newton's method on the lower tail. The lower
/// tail is convex, so Newton iterates clipped at zero converge monotonically.
pub fn t_quantile(u: f64, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            what: "t_quantile",
            value: u,
            domain: "(0, 1)",
        });
    }
    Ok(t_quantile_unchecked(u, nu))
}

pub(crate) fn t_quantile_unchecked(u: f64, nu: f64) -> f64 {
    let (p, sign) = if u <= 0.5 { (u, 1.0) } else { (1.0 - u, -1.0) };
    if p == 0.5 {
        return 0.0;
    }
    let z = normal_quantile_unchecked(p);
    let cf = cornish_fisher(z, nu);
    let ln_c = t_ln_norm(nu) + 0.5 * (nu - 1.0) * nu.ln();
    let tail = -((ln_c - p.ln()) / nu).exp();
    let mut t = cf.min(0.0);
    if tail.is_finite() && tail < t && !(cf < 0.0 && nu > 4.0 && p > 1e-6) {
        t = tail;
    }
    if !t.is_finite() || t >= 0.0 {
        t = -1.0;
    }

    for _ in 0..200 {
        let f = t_lower_tail(t, nu) - p;
        let d = t_pdf(t, nu);
        if d <= 0.0 || !d.is_finite() {
            break;
        }
        let mut next = t - f / d;
        if next > 0.0 {
            next = 0.0;
        }
        let done = (next - t).abs() <= 1e-15 * (1.0 + t.abs());
        t = next;
        if done {
            break;
        }
    }
    sign * t
}

fn cornish_fisher(z: f64, nu: f64) -> f64 {
    let z2 = z * z;
    let g1 = (z2 + 1.0) * z / 4.0;
    let g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
    let g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
    let g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0;
    z + g1 / nu + g2 / nu.powi(2) + g3 / nu.powi(3) + g4 / nu.powi(4)
}

/// Riemann zeta function for real `x > 1` by Euler-Maclaurin summation.
pub fn riemann_zeta(x: f64) -> Result<f64> {
    if !(x > 1.0) || !x.is_finite() {
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        return Err(Error::Domain {
            what: "riemann_zeta",
            value: x,
            domain: "(1, inf)",
        });
    }
    // B_{2j} / (2j)!
    const BERN: [f64; 7] = [
        1.0 / 6.0 / 2.0,
        -1.0 / 30.0 / 24.0,
        1.0 / 42.0 / 720.0,
        -1.0 / 30.0 / 40_320.0,
        5.0 / 66.0 / 3_628_800.0,
        -691.0 / 2730.0 / 479_001_600.0,
        7.0 / 6.0 / 87_178_291_200.0,
    ];
    const K: f64 = 16.0;
    let head: f64 = (1..16).map(|k| (k as f64).powf(-x)).sum();
    let mut sum = head + K.powf(1.0 - x) / (x - 1.0) + 0.5 * K.powf(-x);
    // rising factorial x (x+1) ... (x+2j-2), times K^{-x-2j+1}
    let mut rising = x;
    let mut kpow = K.powf(-x - 1.0);
    for (j, b) in BERN.iter().enumerate() {
        sum += b * rising * kpow;
        let a = x + (2 * j + 1) as f64;
        rising *= a * (a + 1.0);
        kpow /= K * K;
    }
    Ok(sum)
}

/// Euler's totient: the number of `1 <= i <= n-1` coprime to `n`.
///
/// `n = 1` has no such `i`, so the result is 0.
pub fn euler_totient(n: u64) -> u64 {
    if n <= 1 {
        return 0;
    }
    let mut m = n;
    let mut phi = n;
    let mut p = 2u64;
    while p * p <= m {
        if m % p == 0 {
            while m % p == 0 {
                m /= p;
            }
            phi -= phi / p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if m > 1 {
        phi -= phi / m;
    }
    phi
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

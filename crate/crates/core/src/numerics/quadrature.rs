//! Globally adaptive Gauss-Kronrod (7/15) quadrature on finite and infinite
//! intervals.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Numerical tolerances shared by quadrature, differentiation and optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub quad_abs_tol: f64,
    pub quad_rel_tol: f64,
    pub opt_grad_tol: f64,
    /// Relative finite-difference step; the absolute step is `fd_step·(1+‖x‖)`.
    pub fd_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            quad_abs_tol: 1e-12,
            quad_rel_tol: 1e-10,
            opt_grad_tol: 1e-10,
            fd_step: 1e-5,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("quad_abs_tol", self.quad_abs_tol),
            ("quad_rel_tol", self.quad_rel_tol),
            ("opt_grad_tol", self.opt_grad_tol),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.fd_step * self.fd_step <= f64::EPSILON {
            return Err(Error::config(format!(
                "fd_step {} is too small: its square is below machine epsilon",
                self.fd_step
            )));
        }
        Ok(())
    }

    pub fn with_quad(mut self, abs: f64, rel: f64) -> Self {
        self.quad_abs_tol = abs;
        self.quad_rel_tol = rel;
        self
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 20_000;

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<Segment> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut finite = fc.is_finite();
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        finite &= s.is_finite();
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    if !finite {
        return Err(Error::NonFinite("quadrature integrand"));
    }
    Ok(Segment {
        a,
        b,
        value: k * h,
        error: ((k - g) * h).abs(),
    })
}

/// Adaptive integration on a finite interval seeded with the given cut points.
fn adapt(f: &dyn Fn(f64) -> f64, cuts: &[f64], tol: &Tolerances) -> Result<f64> {
    let mut heap = BinaryHeap::new();
    let mut frozen_value = 0.0;
    let mut frozen_error = 0.0;
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(f, w[0], w[1])?);
        }
    }
    let mut intervals = heap.len();
    let mut value: f64 = heap.iter().map(|s| s.value).sum();
    let mut error: f64 = heap.iter().map(|s| s.error).sum();
    loop {
        if error <= tol.quad_abs_tol.max(tol.quad_rel_tol * value.abs()) {
            // Running sums drift; confirm with exact totals.
            value = frozen_value + heap.iter().map(|s| s.value).sum::<f64>();
            error = frozen_error + heap.iter().map(|s| s.error).sum::<f64>();
            if error <= tol.quad_abs_tol.max(tol.quad_rel_tol * value.abs()) {
                return Ok(value);
            }
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::Quadrature {
                estimate: value,
                error,
                context: String::new(),
            });
        };
        let mid = 0.5 * (worst.a + worst.b);
        if intervals >= MAX_INTERVALS || !(mid > worst.a && mid < worst.b) {
            // Cannot refine further; keep its contribution and report.
            if intervals >= MAX_INTERVALS {
                return Err(Error::Quadrature {
                    estimate: value,
                    error,
                    context: String::new(),
                });
            }
            frozen_value += worst.value;
            frozen_error += worst.error;
            continue;
        }
        let left = kronrod(f, worst.a, mid)?;
        let right = kronrod(f, mid, worst.b)?;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        intervals += 1;
    }
}

/// `∫_a^b f(t) dt` where either end may be infinite.
///
/// ```
/// use rqmc_is::numerics::{integrate_1d, Tolerances};
/// let v = integrate_1d(|t| (-0.5 * t * t).exp(), f64::NEG_INFINITY, f64::INFINITY,
///                      &Tolerances::default()).unwrap();
/// assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
/// ```
pub fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: &Tolerances) -> Result<f64> {
    integrate_1d_with_breaks(f, a, b, &[], tol)
}

/// As [`integrate_1d`], with interior points where `f` has kinks or peaks.
pub fn integrate_1d_with_breaks(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: &Tolerances,
) -> Result<f64> {
    integrate_dyn(&f, a, b, breaks, tol)
}

fn integrate_dyn(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: &Tolerances) -> Result<f64> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::NonFinite("integration limits"));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate_dyn(f, b, a, breaks, tol).map(|v| -v);
    }
    let inner: Vec<f64> = {
        let mut v: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&t| t.is_finite() && t > a && t < b)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };

    match (a.is_finite(), b.is_finite()) {
        (true, true) => {
            let mut cuts = vec![a];
            cuts.extend(&inner);
            cuts.push(b);
            adapt(f, &cuts, tol)
        }
        (false, false) => {
            // t = u / (1 - u²) on (-1, 1)
            let g = |u: f64| {
                let d = 1.0 - u * u;
                let t = u / d;
                let v = f(t);
                if v == 0.0 {
                    0.0
                } else {
                    v * (1.0 + u * u) / (d * d)
                }
            };
            let to_u = |t: f64| 2.0 * t / (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mut cuts = vec![-1.0];
            cuts.extend(inner.iter().map(|&t| to_u(t)));
            cuts.push(1.0);
            adapt(&g, &cuts, tol)
        }
        (true, false) => {
            // t = a + u / (1 - u) on [0, 1)
            let g = |u: f64| {
                let d = 1.0 - u;
                let v = f(a + u / d);
                if v == 0.0 {
                    0.0
                } else {
                    v / (d * d)
                }
            };
            let mut cuts = vec![0.0];
            cuts.extend(inner.iter().map(|&t| (t - a) / (1.0 + t - a)));
            cuts.push(1.0);
            adapt(&g, &cuts, tol)
        }
        (false, true) => integrate_dyn(
            &|t| f(-t),
            -b,
            f64::INFINITY,
            &inner.iter().map(|t| -t).collect::<Vec<_>>(),
            tol,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::normal_cdf;
    use std::f64::consts::PI;

    #[test]
    fn constant_and_gaussian() {
        let tol = Tolerances::default();
        assert!((integrate_1d(|_| 1.0, 0.0, 1.0, &tol).unwrap() - 1.0).abs() < 1e-15);
        let g = integrate_1d(|t| (-0.5 * t * t).exp(), f64::NEG_INFINITY, f64::INFINITY, &tol).unwrap();
        assert!((g - (2.0 * PI).sqrt()).abs() < 1e-10);
        let half = integrate_1d(|t| (-t).exp(), 0.0, f64::INFINITY, &tol).unwrap();
        assert!((half - 1.0).abs() < 1e-10);
        let left = integrate_1d(|t| t.exp(), f64::NEG_INFINITY, 0.0, &tol).unwrap();
        assert!((left - 1.0).abs() < 1e-10);
        let rev = integrate_1d(|t| t, 1.0, 0.0, &tol).unwrap();
        assert!((rev + 0.5).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_against_dense_trapezoid() {
        let f = |t: f64| (-0.5 * t * t).exp() * (PI * 3.0 * normal_cdf(t)).sin().powi(2);
        let v = integrate_1d(f, f64::NEG_INFINITY, f64::INFINITY, &Tolerances::default()).unwrap();
        // 10^7-node trapezoid on [-12, 12]; the integrand is below 1e-31 outside.
        let m = 10_000_000usize;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / m as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..m {
            s += f(lo + i as f64 * h);
        }
        assert!((v - s * h).abs() < 1e-8, "{v} vs {}", s * h);
    }

    #[test]
    fn breakpoints_handle_kinks() {
        let tol = Tolerances::default();
        let v = integrate_1d_with_breaks(|t: f64| (t - 0.3).abs(), 0.0, 1.0, &[0.3], &tol).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-14);
        let w = integrate_1d_with_breaks(
            |t: f64| (t - 1.0).abs() * (-t * t).exp(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &[1.0],
            &tol,
        )
        .unwrap();
        // ∫|t-1|e^{-t²} = ∫(1-t)e^{-t²} + 2∫_1^∞ (t-1) e^{-t²}
        let tail = integrate_1d(|t| (t - 1.0) * (-t * t).exp(), 1.0, f64::INFINITY, &tol).unwrap();
        assert!((w - (PI.sqrt() + 2.0 * tail)).abs() < 1e-10);
    }

    #[test]
    fn nonconvergence_reports_estimate() {
        let tol = Tolerances::default().with_quad(1e-300, 1e-300);
        let f = |t: f64| (t - 1.0 / 3.0).abs().sqrt().recip().min(1e12);
        let exact = 2.0 * (1.0f64 / 3.0).sqrt() + 2.0 * (2.0f64 / 3.0).sqrt();
        match integrate_1d(f, 0.0, 1.0, &tol) {
            Err(Error::Quadrature { estimate, .. }) => assert!((estimate - exact).abs() < 1e-2),
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerances::default().validate().is_ok());
        let mut t = Tolerances::default();
        t.fd_step = 1e-9;
        assert!(t.validate().is_err());
        t.fd_step = 1e-5;
        t.quad_abs_tol = 0.0;
        assert!(t.validate().is_err());
    }
}

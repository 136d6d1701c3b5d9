//! One-dimensional quadrature: adaptive Gauss-Kronrod (7/15) and fixed
//! Gauss-Legendre rules for tensor-product integration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::Real;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<T> {
    pub value: T,
    pub abs_error: T,
    pub evaluations: usize,
}

/// Single 15-point Kronrod panel with its embedded 7-point Gauss estimate.
fn gk15<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let x = half_len * T::lit(XGK[j]);
        let sum = f(center - x) + f(center + x);
        kronrod = kronrod + T::lit(WGK[j]) * sum;
        // Gauss nodes sit at the odd Kronrod abscissae.
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * sum;
        }
    }
    let value = kronrod * half_len;
    let err = ((kronrod - gauss) * half_len).abs();
    (value, err)
}

struct Panel<T> {
    a: T,
    b: T,
    value: T,
    err: T,
}

impl<T: Real> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<T: Real> Eq for Panel<T> {}
impl<T: Real> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Equal)
    }
}

/// Globally adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate drops below `abs_tol` or `max_panels` is reached. The returned
/// error is the sum of the per-panel `|K15 - G7|` estimates, which is
/// conservative for smooth integrands.
pub fn integrate_adaptive<T: Real, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    abs_tol: T,
    max_panels: usize,
) -> Integral<T> {
    let mut heap = BinaryHeap::new();
    let (value, err) = gk15(&f, a, b);
    heap.push(Panel { a, b, value, err });
    let mut total_err = err;
    let mut panels = 1;

    while total_err > abs_tol && panels < max_panels {
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let mid = T::lit(0.5) * (worst.a + worst.b);
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        total_err = total_err - worst.err + le + re;
        heap.push(Panel { a: worst.a, b: mid, value: lv, err: le });
        heap.push(Panel { a: mid, b: worst.b, value: rv, err: re });
        panels += 1;
    }

    // Re-sum to shed drift from the running updates.
    let (value, abs_error) = heap
        .iter()
        .fold((T::zero(), T::zero()), |(v, e), p| (v + p.value, e + p.err));
    Integral {
        value,
        abs_error,
        evaluations: 15 * (2 * panels - 1),
    }
}

/// Nodes and weights of the `order`-point Gauss-Legendre rule on `[-1, 1]`,
/// found by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre<T: Real>(order: usize) -> Vec<(T, T)> {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let n = order;
    let nf = T::from_usize_lossy(n);
    let mut rule = vec![(T::zero(), T::zero()); n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess for the i-th root.
        let mut x = (T::PI() * (T::from_usize_lossy(i) + T::lit(0.75)) / (nf + T::lit(0.5))).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x = x - dx;
            if dx.abs() <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != T::zero() {
            dp = d;
        }
        let w = T::lit(2.0) / ((T::one() - x * x) * dp * dp);
        rule[i] = (-x, w);
        rule[n - 1 - i] = (x, w);
    }
    rule
}

fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    if n == 0 {
        return (p0, T::zero());
    }
    for k in 2..=n {
        let kf = T::from_usize_lossy(k);
        let p2 = ((T::lit(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = T::from_usize_lossy(n);
    let d = nf * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// Composite Gauss-Legendre abscissae and weights on `[a, b]` split into
/// `panels` equal pieces.
pub fn composite_rule<T: Real>(base: &[(T, T)], a: T, b: T, panels: usize) -> Vec<(T, T)> {
    let width = (b - a) / T::from_usize_lossy(panels);
    let half = width * T::lit(0.5);
    let mut out = Vec::with_capacity(base.len() * panels);
    for p in 0..panels {
        let center = a + width * T::from_usize_lossy(p) + half;
        out.extend(base.iter().map(|&(x, w)| (center + half * x, half * w)));
    }
    out
}

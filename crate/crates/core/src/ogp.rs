//! First-moment exponents, OGP thresholds and the grid scans built on them.
//!
//! Entropies, free energies and `Upsilon` are in bits. The small-`kappa`
//! threshold `alpha_OGP` is exposed under both logarithm conventions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::mvn::{box_probability_equicorrelated, normal_interval};
use crate::scalar::Real;

#[inline]
fn h<T: Real>(p: T) -> T {
    if p <= T::zero() || p >= T::one() {
        T::zero()
    } else {
        -(p * p.log2() + (T::one() - p) * (T::one() - p).log2())
    }
}

/// `h(p) = -p log2 p - (1 - p) log2(1 - p)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy<T: Real>(p: T) -> Result<T> {
    check_range("p", p.to_f64_lossy(), p >= T::zero() && p <= T::one(), "[0, 1]")?;
    Ok(h(p))
}

/// Critical density `-1 / log2 P(|Z| <= kappa)`.
pub fn alpha_c<T: Real>(kappa: T) -> Result<T> {
    check_range("kappa", kappa.to_f64_lossy(), kappa > T::zero(), "(0, inf)")?;
    Ok(-T::one() / normal_interval(-kappa, kappa).log2())
}

fn check_small_kappa<T: Real>(kappa: T) -> Result<()> {
    check_range("kappa", kappa.to_f64_lossy(), kappa > T::zero() && kappa < T::one(), "(0, 1)")
}

/// `10 kappa^2 ln(1/kappa)`.
pub fn alpha_ogp<T: Real>(kappa: T) -> Result<T> {
    check_small_kappa(kappa)?;
    Ok(T::lit(10.0) * kappa * kappa * (-kappa.ln()))
}

/// `10 kappa^2 log2(1/kappa)`; the base-2 reading of [`alpha_ogp`].
pub fn alpha_ogp_log2<T: Real>(kappa: T) -> Result<T> {
    check_small_kappa(kappa)?;
    Ok(T::lit(10.0) * kappa * kappa * (-kappa.log2()))
}

/// One evaluation of `f1`, `f2` or `f3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint<T> {
    pub abscissa: T,
    pub alpha: T,
    pub value: T,
    pub counting_part: T,
    pub probability_part: T,
    /// The box probability entering `log2`.
    pub probability: T,
    pub prob_error: T,
}

impl<T: Real> ThresholdPoint<T> {
    /// Uncertainty of `value` from the probability error, `alpha err / (p ln 2)`;
    /// never smaller than `alpha err` since `p <= 1`.
    pub fn uncertainty(&self) -> T {
        if self.probability <= T::zero() {
            return T::infinity();
        }
        self.alpha * self.prob_error / (self.probability * T::LN_2())
    }

    fn assemble(abscissa: T, alpha: T, counting_part: T, m: usize, beta: T) -> Result<Self> {
        let p = box_probability_equicorrelated(m, beta, T::one())?;
        let probability_part = alpha * p.value.log2();
        Ok(Self {
            abscissa,
            alpha,
            value: counting_part + probability_part,
            counting_part,
            probability_part,
            probability: p.value,
            prob_error: p.abs_error_estimate,
        })
    }
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    let a = alpha.to_f64_lossy();
    check_range("alpha", a, a >= 0.0 && a.is_finite(), "[0, inf)")
}

fn check_open_unit<T: Real>(name: &'static str, x: T) -> Result<()> {
    check_range(name, x.to_f64_lossy(), x > T::zero() && x < T::one(), "(0, 1)")
}

/// `1 + h(Delta) + alpha log2 P(|Z1| <= 1, |Z2| <= 1)`, correlation `1 - Delta`.
pub fn f1<T: Real>(delta: T, alpha: T) -> Result<ThresholdPoint<T>> {
    check_open_unit("delta", delta)?;
    check_alpha(alpha)?;
    ThresholdPoint::assemble(delta, alpha, T::one() + h(delta), 2, T::one() - delta)
}

/// `1 + h((1 - beta)/2) + alpha log2 P(|Z1| <= 1, |Z2| <= 1)`, correlation `beta`.
pub fn f2<T: Real>(beta: T, alpha: T) -> Result<ThresholdPoint<T>> {
    check_open_unit("beta", beta)?;
    check_alpha(alpha)?;
    let half = T::lit(0.5);
    ThresholdPoint::assemble(beta, alpha, T::one() + h(half * (T::one() - beta)), 2, beta)
}

/// `phi_Count(beta, 0) + alpha log2 P(|Z_i| <= 1, i <= 3)`, pairwise correlation `beta`.
pub fn f3<T: Real>(beta: T, alpha: T) -> Result<ThresholdPoint<T>> {
    check_open_unit("beta", beta)?;
    check_alpha(alpha)?;
    ThresholdPoint::assemble(beta, alpha, count_exponent(beta, T::zero()), 3, beta)
}

fn count_exponent<T: Real>(beta: T, eta: T) -> T {
    let (one, two) = (T::one(), T::lit(2.0));
    let spread = (one - beta + eta) / two;
    one + h(spread) + spread + (one + beta) / two * h((one - beta + two * eta) / (two * (one + beta)))
}

/// Triple-counting exponent
/// `1 + h((1-b+e)/2) + (1-b+e)/2 + ((1+b)/2) h((1-b+2e)/(2(1+b)))`.
pub fn phi_count<T: Real>(beta: T, eta: T) -> Result<T> {
    if !(eta >= T::zero() && eta < beta && beta < T::one()) {
        return Err(Error::OutOfRange {
            name: "(beta, eta)",
            value: eta.to_f64_lossy(),
            range: "0 <= eta < beta < 1",
        });
    }
    Ok(count_exponent(beta, eta))
}

/// `h((1-b)/2) - (a/2) log2(2 pi) + a log2(2 kappa) - (a/2) log2(1-b)`.
pub fn upsilon<T: Real>(beta: T, alpha: T, kappa: T) -> Result<T> {
    check_range("beta", beta.to_f64_lossy(), beta < T::one() && beta > -T::one(), "(-1, 1)")?;
    check_alpha(alpha)?;
    check_range("kappa", kappa.to_f64_lossy(), kappa > T::zero(), "(0, inf)")?;
    let (one, two, half) = (T::one(), T::lit(2.0), T::lit(0.5));
    Ok(h(half * (one - beta)) - half * alpha * (two * T::PI()).log2() + alpha * (two * kappa).log2()
        - half * alpha * (one - beta).log2())
}

/// Evaluation of the free energy at `eta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyPoint<T> {
    pub c: T,
    pub beta: T,
    pub eta: T,
    pub m: usize,
    pub alpha: T,
    pub kappa: T,
    /// `counting_part + probability_part`.
    pub value: T,
    /// `1 + cm + m h((1-b)/2)`.
    pub counting_part: T,
    /// The `alpha` terms, with `log2 |Sigma| = (m-1) log2(1-b) + log2(1-b+bm)`.
    pub probability_part: T,
    /// `m (1/m - (a/2m) log2(1-b+bm) + c + Upsilon)`, never below `value`.
    pub upper_bound: T,
}

pub fn psi_free_energy<T: Real>(c: T, beta: T, m: usize, alpha: T, kappa: T) -> Result<FreeEnergyPoint<T>> {
    check_range("c", c.to_f64_lossy(), c >= T::zero(), "[0, inf)")?;
    check_open_unit("beta", beta)?;
    if m < 2 {
        return Err(Error::Sizing(format!("free energy needs m >= 2, got {m}")));
    }
    let ups = upsilon(beta, alpha, kappa)?;
    let (one, two, half) = (T::one(), T::lit(2.0), T::lit(0.5));
    let mf = T::from_usize_lossy(m);
    let top = one - beta + beta * mf;
    let counting_part = one + c * mf + mf * h(half * (one - beta));
    let probability_part = -half * alpha * mf * (two * T::PI()).log2() + alpha * mf * (two * kappa).log2()
        - half * alpha * (mf - one) * (one - beta).log2()
        - half * alpha * top.log2();
    let upper_bound = mf * (one / mf - alpha / (two * mf) * top.log2() + c + ups);
    Ok(FreeEnergyPoint {
        c,
        beta,
        eta: T::zero(),
        m,
        alpha,
        kappa,
        value: counting_part + probability_part,
        counting_part,
        probability_part,
        upper_bound,
    })
}

/// Pick `c` and the smallest power-of-two `m` making the free energy
/// negative once `Upsilon(beta, alpha) < 0`; `None` if `Upsilon >= 0`.
pub fn negative_free_energy_witness<T: Real>(beta: T, alpha: T, kappa: T, max_m: usize) -> Result<Option<FreeEnergyPoint<T>>> {
    let ups = upsilon(beta, alpha, kappa)?;
    if ups >= T::zero() {
        return Ok(None);
    }
    let c = -ups / T::lit(4.0);
    let mut m = 2usize;
    while m <= max_m {
        let p = psi_free_energy(c, beta, m, alpha, kappa)?;
        if p.upper_bound < T::zero() {
            return Ok(Some(p));
        }
        m = m.saturating_mul(2);
    }
    Ok(None)
}

/// `1/m + h(5 kappa^2 / 2) + alpha log2(2 kappa / sqrt(2 pi))`.
pub fn chaos_exponent<T: Real>(kappa: T, alpha: T, m: usize) -> Result<T> {
    let q = T::lit(2.5) * kappa * kappa;
    check_range("5 kappa^2 / 2", q.to_f64_lossy(), kappa > T::zero() && q < T::one(), "(0, 1)")?;
    check_alpha(alpha)?;
    if m == 0 {
        return Err(Error::Sizing("m must be at least 1".into()));
    }
    let two = T::lit(2.0);
    Ok(T::one() / T::from_usize_lossy(m) + h(q) + alpha * (two * kappa / (two * T::PI()).sqrt()).log2())
}

/// One row of the small-`kappa` necessity table at `delta = C kappa^2`,
/// `beta = 1 - 2 delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NecessityRow<T> {
    pub c: T,
    pub delta: T,
    pub beta: T,
    /// `h(delta)`.
    pub entropy: T,
    /// `2 C kappa^2 log2(1/kappa)`.
    pub entropy_kappa_term: T,
    /// `C kappa^2 log2(1/C)`.
    pub entropy_c_term: T,
    /// Smallest `alpha` with `Upsilon < 0`; infinite when `pi C <= 1`.
    pub alpha_floor: T,
    /// `-(alpha/2) log2 C` at the floor.
    pub alpha_c_term: T,
    /// `-(alpha/2) log2 pi` at the floor.
    pub alpha_pi_term: T,
    /// `alpha_floor / (kappa^2 log2(1/kappa))`.
    pub floor_ratio: T,
}

/// With `delta = C kappa^2`, `Upsilon = h(delta) - (alpha/2) log2(pi C)`, so
/// `Upsilon < 0` exactly when `alpha > h(delta) / ((1/2) log2(pi C))`.
pub fn necessity_scan<T: Real>(kappa: T, c_grid: &[T]) -> Result<Vec<NecessityRow<T>>> {
    check_small_kappa(kappa)?;
    let (two, half) = (T::lit(2.0), T::lit(0.5));
    let k2 = kappa * kappa;
    let log_inv_kappa = -kappa.log2();
    c_grid
        .iter()
        .map(|&c| {
            let delta = c * k2;
            check_range("C kappa^2", delta.to_f64_lossy(), c > T::zero() && delta < T::one(), "(0, 1)")?;
            let entropy = h(delta);
            let slope = half * (T::PI() * c).log2();
            let alpha_floor = if slope > T::zero() { entropy / slope } else { T::infinity() };
            Ok(NecessityRow {
                c,
                delta,
                beta: T::one() - two * delta,
                entropy,
                entropy_kappa_term: two * delta * log_inv_kappa,
                entropy_c_term: -delta * c.log2(),
                alpha_floor,
                alpha_c_term: -half * alpha_floor * c.log2(),
                alpha_pi_term: -half * alpha_floor * T::PI().log2(),
                floor_ratio: alpha_floor / (k2 * log_inv_kappa),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    F1,
    F2,
    F3,
}

impl Threshold {
    pub fn eval<T: Real>(self, x: T, alpha: T) -> Result<ThresholdPoint<T>> {
        match self {
            Threshold::F1 => f1(x, alpha),
            Threshold::F2 => f2(x, alpha),
            Threshold::F3 => f3(x, alpha),
        }
    }

    /// Reference grid `(lo, hi, step)`.
    pub fn default_grid(self) -> (f64, f64, f64) {
        match self {
            Threshold::F1 => (1e-5, 0.1, 1e-4),
            Threshold::F2 | Threshold::F3 => (0.9, 0.999, 1e-3),
        }
    }

    /// Density at which the function is known to dip below zero.
    pub fn reference_alpha(self) -> f64 {
        match self {
            Threshold::F1 => 1.77,
            Threshold::F2 => 1.71,
            Threshold::F3 => 1.667,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Threshold::F1 => "f1",
            Threshold::F2 => "f2",
            Threshold::F3 => "f3",
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Threshold::F1),
            "f2" => Ok(Threshold::F2),
            "f3" => Ok(Threshold::F3),
            other => Err(Error::Format(format!("unknown threshold function '{other}'"))),
        }
    }
}

/// `lo, lo + step, ...` up to `hi` inclusive (with a relative slack of
/// `1e-9 step` so a decimal endpoint is not lost to rounding).
// Negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn grid<T: Real>(lo: T, hi: T, step: T) -> Result<Vec<T>> {
    if !(step > T::zero()) || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Sizing(format!(
            "empty grid lo = {}, hi = {}, step = {}",
            lo.to_f64_lossy(),
            hi.to_f64_lossy(),
            step.to_f64_lossy()
        )));
    }
    let count = ((hi - lo) / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    Ok((0..count).map(|k| lo + step * T::from_usize_lossy(k)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult<T> {
    pub which: Threshold,
    pub alpha: T,
    pub grid: Vec<T>,
    pub values: Vec<T>,
    pub points: Vec<ThresholdPoint<T>>,
    /// Grid points with `value + uncertainty < 0`.
    pub negative_set: Vec<T>,
    pub argmin: T,
    pub min_value: T,
    pub prob_error_max: T,
    pub uncertainty_max: T,
}

impl<T: Real> ScanResult<T> {
    pub fn negative_interval(&self) -> Option<(T, T)> {
        Some((*self.negative_set.first()?, *self.negative_set.last()?))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["abscissa", "value", "counting_part", "probability_part", "prob_error"])?;
        for p in &self.points {
            out.write_record(
                [p.abscissa, p.value, p.counting_part, p.probability_part, p.prob_error]
                    .map(|x| format!("{:e}", x.to_f64_lossy())),
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        let f = |x: T| x.to_f64_lossy();
        serde_json::json!({
            "function": self.which.name(),
            "alpha": f(self.alpha),
            "grid_points": self.grid.len(),
            "argmin": f(self.argmin),
            "min_value": f(self.min_value),
            "negative_count": self.negative_set.len(),
            "negative_interval": self.negative_interval().map(|(a, b)| [f(a), f(b)]),
            "prob_error_max": f(self.prob_error_max),
            "uncertainty_max": f(self.uncertainty_max),
        })
    }
}

/// Evaluate `which(., alpha)` over `lo:step:hi`.
pub fn scan_negativity<T: Real>(which: Threshold, alpha: T, lo: T, hi: T, step: T) -> Result<ScanResult<T>> {
    let grid = grid(lo, hi, step)?;
    let points = grid
        .par_iter()
        .map(|&x| which.eval(x, alpha))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<T> = points.iter().map(|p| p.value).collect();
    let (mut argmin, mut min_value) = (grid[0], values[0]);
    for (&x, &v) in grid.iter().zip(&values) {
        if v < min_value {
            argmin = x;
            min_value = v;
        }
    }
    let negative_set = points
        .iter()
        .filter(|p| p.value + p.uncertainty() < T::zero())
        .map(|p| p.abscissa)
        .collect();
    let prob_error_max = points.iter().fold(T::zero(), |a, p| a.max(p.prob_error));
    let uncertainty_max = points.iter().fold(T::zero(), |a, p| a.max(p.uncertainty()));
    Ok(ScanResult { which, alpha, grid, values, points, negative_set, argmin, min_value, prob_error_max, uncertainty_max })
}

/// Bisect on `alpha` in `[lo, hi]` for the sign change of the grid minimum
/// of `which(., alpha)`, to absolute width `tol`.
pub fn threshold_crossing<T: Real>(which: Threshold, lo: T, hi: T, tol: T) -> Result<T> {
    let (glo, ghi, gstep) = which.default_grid();
    let min_at = |a: T| -> Result<T> { Ok(scan_negativity(which, a, T::lit(glo), T::lit(ghi), T::lit(gstep))?.min_value) };
    let (mut a, mut b) = (lo, hi);
    if min_at(a)? < T::zero() || min_at(b)? >= T::zero() {
        return Err(Error::OutOfRange {
            name: "alpha bracket",
            value: lo.to_f64_lossy(),
            range: "a bracket whose minimum changes sign",
        });
    }
    while b - a > tol {
        let mid = T::lit(0.5) * (a + b);
        if min_at(mid)? < T::zero() {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(T::lit(0.5) * (a + b))
}

/// Rows of the necessity table as CSV.
pub fn write_necessity_csv<T: Real, W: Write>(w: W, rows: &[NecessityRow<T>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "c",
        "delta",
        "beta",
        "entropy",
        "entropy_kappa_term",
        "entropy_c_term",
        "alpha_floor",
        "alpha_c_term",
        "alpha_pi_term",
        "floor_ratio",
    ])?;
    for r in rows {
        out.write_record(
            [
                r.c,
                r.delta,
                r.beta,
                r.entropy,
                r.entropy_kappa_term,
                r.entropy_c_term,
                r.alpha_floor,
                r.alpha_c_term,
                r.alpha_pi_term,
                r.floor_ratio,
            ]
            .map(|x| format!("{:e}", x.to_f64_lossy())),
        )?;
    }
    out.flush()?;
    Ok(())
}

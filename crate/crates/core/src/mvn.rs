//! Gaussian probability kernels.
//!
//! Scalar CDF, bivariate quadrant probability and conditional mean, and the
//! symmetric box probability `P(|Z_i| <= kappa for all i)` for
//! `Z ~ N(0, Sigma)`. The equicorrelated case `Sigma = (1-b) I + b ee^T` is
//! reduced to a single integral over the common factor; perturbed
//! covariances go through sequential conditioning on a tensor grid (m <= 3)
//! or Monte-Carlo (m > 3).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::quad::{gauss_legendre, integrate_adaptive};
use crate::rng;
use crate::scalar::Real;

/// Half-width of the factor integration window; the normal mass outside
/// `[-8, 8]` is below `1.3e-15`.
const FACTOR_WINDOW: f64 = 8.0;
const FACTOR_TAIL_MASS: f64 = 1.3e-15;
const MC_MAX_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbMethod {
    Analytic,
    FactorQuadrature,
    TensorQuadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbResult<T> {
    pub value: T,
    pub abs_error_estimate: T,
    pub method: ProbMethod,
}

impl<T: Real> ProbResult<T> {
    fn clamped(value: T, abs_error_estimate: T, method: ProbMethod) -> Self {
        Self {
            value: value.max(T::zero()).min(T::one()),
            abs_error_estimate,
            method,
        }
    }
}

/// Standard normal CDF `Phi(t)`, via `erfc` so both tails keep full
/// relative precision.
#[inline]
pub fn std_normal_cdf<T: Real>(t: T) -> T {
    T::lit(0.5) * (-t / T::SQRT_2()).erfc()
}

/// Upper tail `1 - Phi(t)`.
#[inline]
pub fn std_normal_sf<T: Real>(t: T) -> T {
    T::lit(0.5) * (t / T::SQRT_2()).erfc()
}

#[inline]
pub fn std_normal_pdf<T: Real>(t: T) -> T {
    (-T::lit(0.5) * t * t).exp() / (T::TAU()).sqrt()
}

/// `P(lo <= Z <= hi)` for a standard normal `Z`, evaluated on whichever
/// tail avoids cancellation.
pub fn normal_interval<T: Real>(lo: T, hi: T) -> T {
    if hi <= lo {
        return T::zero();
    }
    let p = if lo >= T::zero() {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else if hi <= T::zero() {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    } else {
        T::one() - std_normal_cdf(lo) - std_normal_sf(hi)
    };
    p.max(T::zero())
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step against `erfc`.
pub fn std_normal_quantile<T: Real>(p: T) -> T {
    if p <= T::zero() {
        return T::neg_infinity();
    }
    if p >= T::one() {
        return T::infinity();
    }
    let a = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    let b = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    let c = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    let d = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let pf = p.to_f64_lossy();
    let lower = 0.02425;
    let x = if pf < lower {
        let q = (-2.0 * pf.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if pf <= 1.0 - lower {
        let q = pf - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - pf).ln()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    };
    let mut x = T::lit(x);
    let e = std_normal_cdf(x) - p;
    let u = e * T::TAU().sqrt() * (x * x / T::lit(2.0)).exp();
    x = x - u / (T::one() + x * u / T::lit(2.0));
    x
}

/// `P(X >= 0, Y >= 0) = 1/4 + asin(rho) / (2 pi)` for a standard bivariate
/// normal with correlation `rho`.
pub fn quadrant_probability<T: Real>(rho: T) -> Result<T> {
    check_range("rho", rho.to_f64_lossy(), rho.abs() <= T::one(), "[-1, 1]")?;
    Ok(T::lit(0.25) + rho.asin() / (T::lit(2.0) * T::PI()))
}

/// `E[Z1 | Z2 >= 0] = rho * sqrt(2 / pi)`.
pub fn conditional_mean<T: Real>(rho: T) -> T {
    rho * T::FRAC_2_PI().sqrt()
}

/// Box probability for `Sigma = (1 - beta) I + beta ee^T` via the
/// one-factor representation `Z_i = sqrt(beta) W + sqrt(1 - beta) G_i`:
///
/// `P = ∫ phi(w) [Phi((k - sqrt(b) w)/sqrt(1-b)) - Phi((-k - sqrt(b) w)/sqrt(1-b))]^m dw`.
pub fn box_probability_equicorrelated<T: Real>(m: usize, beta: T, kappa: T) -> Result<ProbResult<T>> {
    if m == 0 {
        return Err(Error::Sizing("box dimension must be at least 1".into()));
    }
    check_range("beta", beta.to_f64_lossy(), beta >= T::zero() && beta < T::one(), "[0, 1)")?;
    check_range("kappa", kappa.to_f64_lossy(), kappa >= T::zero(), "[0, inf)")?;

    let single = normal_interval(-kappa, kappa);
    if kappa == T::zero() {
        return Ok(ProbResult::clamped(T::zero(), T::zero(), ProbMethod::Analytic));
    }
    if m == 1 || beta == T::zero() {
        let value = single.powi(m as i32);
        return Ok(ProbResult::clamped(value, T::epsilon() * T::lit(m as f64), ProbMethod::Analytic));
    }

    let load = beta.sqrt();
    let spread = (T::one() - beta).sqrt();
    let mi = m as i32;
    let integrand = |w: T| {
        let shift = load * w;
        std_normal_pdf(w) * normal_interval((-kappa - shift) / spread, (kappa - shift) / spread).powi(mi)
    };
    let window = T::lit(FACTOR_WINDOW);
    let r = integrate_adaptive(integrand, -window, window, T::quad_tolerance(), 4000);
    Ok(ProbResult::clamped(
        r.value,
        r.abs_error + T::lit(FACTOR_TAIL_MASS),
        ProbMethod::FactorQuadrature,
    ))
}

/// Covariance `Sigma = (1 - beta) I + beta ee^T + E` with `E` symmetric,
/// zero on the diagonal and entries in `[-eta, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec<T> {
    dim: usize,
    beta: T,
    perturbation: Vec<T>,
    eta_bound: T,
}

impl<T: Real> CovarianceSpec<T> {
    pub fn new(dim: usize, beta: T, perturbation: Vec<T>, eta_bound: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Sizing("covariance dimension must be at least 1".into()));
        }
        check_range("beta", beta.to_f64_lossy(), beta > T::zero() && beta < T::one(), "(0, 1)")?;
        check_range("eta", eta_bound.to_f64_lossy(), eta_bound >= T::zero(), "[0, inf)")?;
        if perturbation.len() != dim * dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim}x{dim} perturbation"),
                got: format!("{} entries", perturbation.len()),
            });
        }
        let tol = T::epsilon() * T::lit(16.0);
        for i in 0..dim {
            if perturbation[i * dim + i] != T::zero() {
                return Err(Error::Format("perturbation must vanish on the diagonal".into()));
            }
            for j in 0..i {
                let (a, b) = (perturbation[i * dim + j], perturbation[j * dim + i]);
                if (a - b).abs() > tol {
                    return Err(Error::Format("perturbation must be symmetric".into()));
                }
                if a > T::zero() || a < -eta_bound - tol {
                    return Err(Error::OutOfRange {
                        name: "perturbation entry",
                        value: a.to_f64_lossy(),
                        range: "[-eta, 0]",
                    });
                }
            }
        }
        Ok(Self { dim, beta, perturbation, eta_bound })
    }

    pub fn equicorrelated(dim: usize, beta: T) -> Result<Self> {
        Self::new(dim, beta, vec![T::zero(); dim * dim], T::zero())
    }

    /// Every off-diagonal entry shifted down by `eta`.
    pub fn uniform_shift(dim: usize, beta: T, eta: T) -> Result<Self> {
        let mut e = vec![-eta; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = T::zero();
        }
        Self::new(dim, beta, e, eta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn eta_bound(&self) -> T {
        self.eta_bound
    }

    /// Row-major dense `Sigma`.
    pub fn matrix(&self) -> Vec<T> {
        let m = self.dim;
        let mut s = vec![T::zero(); m * m];
        for i in 0..m {
            for j in 0..m {
                s[i * m + j] = if i == j { T::one() } else { self.beta + self.perturbation[i * m + j] };
            }
        }
        s
    }

    /// Lower Cholesky factor, row-major; fails when `Sigma` is not PD.
    pub fn cholesky(&self) -> Result<Vec<T>> {
        cholesky(&self.matrix(), self.dim)
    }

    pub fn log_det(&self) -> Result<T> {
        let l = self.cholesky()?;
        Ok((0..self.dim).map(|i| l[i * self.dim + i].ln()).sum::<T>() * T::lit(2.0))
    }

    /// Sufficient PD condition `eta < (1 - beta) / m` from the smallest
    /// eigenvalue of the unperturbed part.
    pub fn guaranteed_pd(&self) -> bool {
        self.eta_bound < (T::one() - self.beta) / T::from_usize_lossy(self.dim)
    }
}

pub(crate) fn cholesky<T: Real>(a: &[T], m: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for k in 0..j {
                s = s - l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Ok(l)
}

/// Node and sample budget for [`box_probability_general`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBudget {
    /// Largest Gauss-Legendre order per axis tried during refinement.
    pub max_nodes_per_axis: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for BoxBudget {
    fn default() -> Self {
        Self { max_nodes_per_axis: 512, mc_samples: 1_000_000, seed: 0 }
    }
}

/// Refinement stops once successive tensor estimates agree to this.
const TENSOR_TOL: f64 = 1e-9;

/// Box probability for a general [`CovarianceSpec`].
///
/// For `m <= 3` the coordinates are conditioned one after another along the
/// Cholesky factor, which turns the box into a product of one-dimensional
/// normal intervals on `[0, 1]^(m-1)`; that cube is integrated on a tensor
/// Gauss-Legendre grid whose order doubles until two successive estimates
/// differ by less than `1e-9`. The reported error is that difference. For
/// `m > 3` a Monte-Carlo estimate is returned with three standard errors.
pub fn box_probability_general<T: Real>(
    cov: &CovarianceSpec<T>,
    kappa: T,
    budget: BoxBudget,
) -> Result<ProbResult<T>> {
    check_range("kappa", kappa.to_f64_lossy(), kappa >= T::zero(), "[0, inf)")?;
    let l = cov.cholesky()?;
    let m = cov.dim;
    if kappa == T::zero() {
        return Ok(ProbResult::clamped(T::zero(), T::zero(), ProbMethod::Analytic));
    }
    if m == 1 {
        return Ok(ProbResult::clamped(normal_interval(-kappa, kappa), T::epsilon(), ProbMethod::Analytic));
    }
    if m <= 3 {
        return Ok(tensor_box(&l, m, kappa, budget.max_nodes_per_axis));
    }
    box_probability_monte_carlo(cov, kappa, budget.mc_samples, budget.seed)
}

/// Sequential-conditioning integrand on the unit cube: the product of the
/// conditional interval masses given the earlier (transformed) coordinates.
fn conditioned_mass<T: Real>(l: &[T], m: usize, kappa: T, u: &[T]) -> T {
    let mut y = [T::zero(); 3];
    let mut mass = T::one();
    for i in 0..m {
        let shift = (0..i).map(|j| l[i * m + j] * y[j]).sum::<T>();
        let diag = l[i * m + i];
        let lo = (-kappa - shift) / diag;
        let hi = (kappa - shift) / diag;
        let width = normal_interval(lo, hi);
        mass = mass * width;
        if i + 1 == m || mass == T::zero() {
            break;
        }
        // Invert the CDF on whichever side of zero keeps precision.
        y[i] = if lo >= T::zero() {
            let tail = std_normal_sf(lo) - u[i] * width;
            -std_normal_quantile(tail)
        } else {
            std_normal_quantile(std_normal_cdf(lo) + u[i] * width)
        };
    }
    mass
}

fn tensor_box<T: Real>(l: &[T], m: usize, kappa: T, max_order: usize) -> ProbResult<T> {
    let half = T::lit(0.5);
    let estimate = |order: usize| -> T {
        let rule: Vec<(T, T)> = gauss_legendre::<T>(order)
            .into_iter()
            .map(|(x, w)| (half * (x + T::one()), half * w))
            .collect();
        match m {
            2 => rule.iter().map(|&(u, w)| w * conditioned_mass(l, m, kappa, &[u])).sum(),
            _ => rule
                .par_iter()
                .map(|&(u1, w1)| {
                    w1 * rule
                        .iter()
                        .map(|&(u2, w2)| w2 * conditioned_mass(l, m, kappa, &[u1, u2]))
                        .sum::<T>()
                })
                .collect::<Vec<T>>()
                .into_iter()
                .sum(),
        }
    };
    let mut order = 8;
    let mut prev = estimate(order);
    let mut err = T::infinity();
    while order * 2 <= max_order.max(16) {
        order *= 2;
        let next = estimate(order);
        err = (next - prev).abs();
        prev = next;
        if err < T::lit(TENSOR_TOL) {
            break;
        }
    }
    ProbResult::clamped(prev, err, ProbMethod::TensorQuadrature)
}

const MC_CHUNK: usize = 1 << 14;

/// Hit-or-miss Monte-Carlo estimate of the box probability. Samples are
/// drawn in fixed chunks keyed by `(seed, chunk)`, so the estimate does not
/// depend on the thread count.
pub fn box_probability_monte_carlo<T: Real>(
    cov: &CovarianceSpec<T>,
    kappa: T,
    samples: usize,
    seed: u64,
) -> Result<ProbResult<T>> {
    let m = cov.dim;
    if m > MC_MAX_DIM {
        return Err(Error::Unsupported(format!("Monte-Carlo box dimension {m} > {MC_MAX_DIM}")));
    }
    if samples == 0 {
        return Err(Error::Sizing("Monte-Carlo needs at least one sample".into()));
    }
    let l = cov.cholesky()?;
    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, &[0x006d_766e, c as u64]);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut g = vec![T::zero(); m];
            let mut hit = 0;
            for _ in 0..count {
                for gi in g.iter_mut() {
                    *gi = T::lit(rng.sample::<f64, _>(StandardNormal));
                }
                let inside = (0..m).all(|i| {
                    let z = (0..=i).map(|j| l[i * m + j] * g[j]).sum::<T>();
                    z.abs() <= kappa
                });
                hit += inside as usize;
            }
            hit
        })
        .sum();
    let n = samples as f64;
    let p = hits as f64 / n;
    let se = (p * (1.0 - p) / n).sqrt();
    Ok(ProbResult::clamped(T::lit(p), T::lit((3.0 * se).max(1.0 / n)), ProbMethod::MonteCarlo))
}

/// `(2 pi)^{-m/2} |Sigma|^{-1/2} (2 kappa)^m`, the box volume times the peak
/// density.
pub fn box_probability_upper_bound<T: Real>(cov: &CovarianceSpec<T>, kappa: T) -> Result<T> {
    check_range("kappa", kappa.to_f64_lossy(), kappa >= T::zero(), "[0, inf)")?;
    let log_det = cov.log_det()?;
    let m = T::from_usize_lossy(cov.dim);
    let log2_bound = -m / T::lit(2.0) * T::TAU().log2() - log_det / (T::lit(2.0) * T::LN_2())
        + m * (T::lit(2.0) * kappa).log2();
    Ok(log2_bound.exp2())
}

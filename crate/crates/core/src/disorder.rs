//! Disorder matrices and their correlated variants.
//!
//! A [`DisorderMatrix`] holds the `M x n` constraint system of one perceptron
//! instance, `M = floor(alpha n)`. Entry `(r, c)` of replica `i` is the
//! `c`-th draw of the stream keyed by `(seed, i, r)`, so any row of any
//! replica can be regenerated on its own.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::rng;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"PDM1";
const RESAMPLE_KEY: u64 = 0x7265_7361_6d70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Gaussian,
    Rademacher,
}

impl Distribution {
    fn tag(self) -> u64 {
        match self {
            Distribution::Gaussian => 0,
            Distribution::Rademacher => 1,
        }
    }

    fn from_tag(tag: u64) -> Result<Self> {
        match tag {
            0 => Ok(Distribution::Gaussian),
            1 => Ok(Distribution::Rademacher),
            t => Err(Error::Format(format!("unknown distribution tag {t}"))),
        }
    }

    /// Fill `out` with i.i.d. draws of this law from `rng`.
    pub fn fill<T: Real, R: Rng>(self, rng: &mut R, out: &mut [T]) {
        match self {
            Distribution::Gaussian => {
                for x in out.iter_mut() {
                    *x = T::lit(rng.sample::<f64, _>(StandardNormal));
                }
            }
            Distribution::Rademacher => {
                for chunk in out.chunks_mut(64) {
                    let bits: u64 = rng.random();
                    for (k, x) in chunk.iter_mut().enumerate() {
                        *x = if (bits >> k) & 1 == 1 { -T::one() } else { T::one() };
                    }
                }
            }
        }
    }
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            "rademacher" => Ok(Distribution::Rademacher),
            other => Err(Error::Format(format!("unknown distribution '{other}'"))),
        }
    }
}

/// Number of constraints `floor(alpha n)`.
pub fn constraint_count(n: usize, alpha: f64) -> usize {
    // Guard against alpha * n landing a hair under an integer.
    let x = alpha * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<T>,
    dist: Distribution,
    seed: u64,
}

impl<T: Real> DisorderMatrix<T> {
    /// `floor(alpha n) x n` matrix with i.i.d. entries of `dist`.
    pub fn sample(n: usize, alpha: f64, dist: Distribution, seed: u64) -> Result<Self> {
        Self::sample_replica(n, alpha, dist, seed, 0)
    }

    /// Replica `replica` of the family rooted at `seed`; replica 0 is what
    /// [`DisorderMatrix::sample`] returns.
    pub fn sample_replica(n: usize, alpha: f64, dist: Distribution, seed: u64, replica: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Sizing("n must be at least 1".into()));
        }
        check_range("alpha", alpha, alpha > 0.0 && alpha.is_finite(), "(0, inf)")?;
        let rows = constraint_count(n, alpha);
        if rows == 0 {
            return Err(Error::Sizing(format!("floor(alpha * n) = 0 for alpha = {alpha}, n = {n}")));
        }
        Ok(Self::sample_shape(rows, n, dist, seed, replica))
    }

    /// Sample with an explicit row count (used for `M = 0`-free shapes that
    /// do not come from a density).
    pub fn sample_shape(rows: usize, cols: usize, dist: Distribution, seed: u64, replica: u64) -> Self {
        let mut entries = vec![T::zero(); rows * cols];
        if cols > 0 {
            entries.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
                let mut s = rng::stream(seed, &[replica, r as u64]);
                dist.fill(&mut s, row);
            });
        }
        Self { rows, cols, entries, dist, seed }
    }

    /// Wrap explicit row-major entries.
    pub fn from_rows(rows: usize, cols: usize, entries: Vec<T>, dist: Distribution) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                got: format!("{} entries", entries.len()),
            });
        }
        Ok(Self { rows, cols, entries, dist, seed: 0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dist(&self) -> Distribution {
        self.dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Density `rows / cols`.
    pub fn alpha(&self) -> f64 {
        self.rows as f64 / self.cols as f64
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.entries[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.entries.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Column sums `sum_i M_ic`.
    pub fn column_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for row in self.row_iter() {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s = *s + x;
            }
        }
        sums
    }

    /// Entrywise negation, used by oddness checks.
    pub fn negated(&self) -> Self {
        Self { entries: self.entries.iter().map(|&x| -x).collect(), ..self.clone() }
    }

    /// Restriction to the first `k` columns.
    pub fn column_prefix(&self, k: usize) -> Self {
        let k = k.min(self.cols);
        let mut entries = Vec::with_capacity(self.rows * k);
        for row in self.row_iter() {
            entries.extend_from_slice(&row[..k]);
        }
        Self { rows: self.rows, cols: k, entries, dist: self.dist, seed: self.seed }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols || self.dist != other.dist {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} {:?}", self.rows, self.cols, self.dist),
                got: format!("{}x{} {:?}", other.rows, other.cols, other.dist),
            });
        }
        Ok(())
    }

    /// `cos(tau) base + sin(tau) replica`. Gaussian disorder only.
    pub fn interpolate(base: &Self, replica: &Self, tau: T) -> Result<Self> {
        base.check_same_shape(replica)?;
        if base.dist != Distribution::Gaussian {
            return Err(Error::Unsupported("interpolation is defined for gaussian disorder only".into()));
        }
        let half_pi = T::FRAC_PI_2();
        check_range("tau", tau.to_f64_lossy(), tau >= T::zero() && tau <= half_pi, "[0, pi/2]")?;
        if tau == T::zero() {
            return Ok(base.clone());
        }
        if tau == half_pi {
            return Ok(Self { seed: base.seed, ..replica.clone() });
        }
        let (s, c) = tau.sin_cos();
        let entries = base
            .entries
            .iter()
            .zip(&replica.entries)
            .map(|(&b, &r)| c * b + s * r)
            .collect();
        Ok(Self { entries, ..base.clone() })
    }

    /// Keep the first `n - floor(delta n)` columns and redraw the rest from
    /// the stream keyed by `seed`.
    pub fn resample_columns(&self, delta: f64, seed: u64) -> Result<Self> {
        check_range("delta", delta, delta > 0.0 && delta < 0.5, "(0, 1/2)")?;
        let fresh = (delta * self.cols as f64).floor() as usize;
        if fresh == 0 {
            return Err(Error::Sizing(format!(
                "floor(delta * n) = 0 for delta = {delta}, n = {}",
                self.cols
            )));
        }
        let keep = self.cols - fresh;
        let mut out = self.clone();
        out.entries.par_chunks_mut(self.cols).enumerate().for_each(|(r, row)| {
            let mut s = rng::stream(seed, &[RESAMPLE_KEY, r as u64]);
            self.dist.fill(&mut s, &mut row[keep..]);
        });
        Ok(out)
    }

    /// `(M, M_rho)` with entrywise correlation `rho`, realised as the
    /// interpolation at `tau = acos(rho)` between two independent draws.
    pub fn correlated_pair(n: usize, alpha: f64, rho: T, seed: u64) -> Result<(Self, Self)> {
        check_range("rho", rho.to_f64_lossy(), rho >= T::zero() && rho <= T::one(), "[0, 1]")?;
        let base = Self::sample_replica(n, alpha, Distribution::Gaussian, seed, 0)?;
        if rho == T::one() {
            return Ok((base.clone(), base));
        }
        let other = Self::sample_replica(n, alpha, Distribution::Gaussian, seed, 1)?;
        let tau = if rho == T::zero() { T::FRAC_PI_2() } else { rho.acos() };
        let partner = Self::interpolate(&base, &other, tau)?;
        Ok((base, partner))
    }

    /// Binary dump: `PDM1`, then rows, cols, dist tag, seed as little-endian
    /// `u64`, then row-major little-endian `f64` entries.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for field in [self.rows as u64, self.cols as u64, self.dist.tag(), self.seed] {
            w.write_all(&field.to_le_bytes())?;
        }
        for &x in &self.entries {
            w.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, expected PDM1".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [rows, cols, tag, seed] = header;
        let (rows, cols) = (rows as usize, cols as usize);
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            entries.push(T::lit(f64::from_le_bytes(word)));
        }
        Ok(Self { rows, cols, entries, dist: Distribution::from_tag(tag)?, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Base matrix, independent replicas and the angle grid along which they are
/// blended: replica `i` at step `k` is `cos(tau_k) base + sin(tau_k) replica_i`.
#[derive(Debug, Clone)]
pub struct InterpolatedEnsemble<T> {
    pub base: DisorderMatrix<T>,
    pub replicas: Vec<DisorderMatrix<T>>,
    pub tau_grid: Vec<T>,
}

impl<T: Real> InterpolatedEnsemble<T> {
    pub fn new(base: DisorderMatrix<T>, replicas: Vec<DisorderMatrix<T>>, tau_grid: Vec<T>) -> Result<Self> {
        for r in &replicas {
            base.check_same_shape(r)?;
        }
        if tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("tau grid must be strictly increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (tau_grid.first(), tau_grid.last()) {
            check_range("tau", first.to_f64_lossy(), first >= T::zero(), "[0, pi/2]")?;
            check_range("tau", last.to_f64_lossy(), last <= T::FRAC_PI_2(), "[0, pi/2]")?;
        }
        Ok(Self { base, replicas, tau_grid })
    }

    /// `count` gaussian replicas (keys 1..=count) of the base (key 0).
    pub fn sample(n: usize, alpha: f64, count: usize, tau_grid: Vec<T>, seed: u64) -> Result<Self> {
        let base = DisorderMatrix::sample_replica(n, alpha, Distribution::Gaussian, seed, 0)?;
        let replicas = (1..=count as u64)
            .map(|i| DisorderMatrix::sample_replica(n, alpha, Distribution::Gaussian, seed, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(base, replicas, tau_grid)
    }

    /// The uniform trajectory grid `tau_k = k pi / (2Q)`, `k = 0..=Q`.
    pub fn trajectory_grid(steps: usize) -> Vec<T> {
        let q = T::from_usize_lossy(steps.max(1));
        (0..=steps)
            .map(|k| {
                if k == steps {
                    T::FRAC_PI_2()
                } else {
                    T::FRAC_PI_2() * T::from_usize_lossy(k) / q
                }
            })
            .collect()
    }

    /// `M_i(tau)` for replica index `i` (0-based into `replicas`).
    pub fn at(&self, replica: usize, tau: T) -> Result<DisorderMatrix<T>> {
        DisorderMatrix::interpolate(&self.base, &self.replicas[replica], tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        cov / (va * vb).sqrt()
    }

    #[test]
    fn shapes_and_support() {
        let m = DisorderMatrix::<f64>::sample(10, 0.5, Distribution::Rademacher, 7).unwrap();
        assert_eq!((m.rows(), m.cols()), (5, 10));
        assert!(m.entries().iter().all(|&x| x == 1.0 || x == -1.0));
        let g = DisorderMatrix::<f64>::sample(10, 1.8159, Distribution::Gaussian, 1).unwrap();
        assert_eq!((g.rows(), g.cols()), (18, 10));
        assert!(DisorderMatrix::<f64>::sample(0, 1.0, Distribution::Gaussian, 1).is_err());
        assert!(DisorderMatrix::<f64>::sample(10, 0.05, Distribution::Gaussian, 1).is_err());
    }

    #[test]
    fn column_means_concentrate() {
        let n = 10_000;
        let m = DisorderMatrix::<f64>::sample(n, 1.0, Distribution::Gaussian, 3).unwrap();
        let sums = m.column_sums();
        let close = sums.iter().filter(|&&s| (s / m.rows() as f64).abs() <= 0.04).count();
        assert!(close as f64 >= 0.99 * n as f64, "{close}");
    }

    #[test]
    fn interpolation_endpoints_and_correlation() {
        let a = DisorderMatrix::<f64>::sample_replica(400, 1.0, Distribution::Gaussian, 5, 0).unwrap();
        let b = DisorderMatrix::<f64>::sample_replica(400, 1.0, Distribution::Gaussian, 5, 1).unwrap();
        assert_eq!(DisorderMatrix::interpolate(&a, &b, 0.0).unwrap().entries(), a.entries());
        let end = DisorderMatrix::interpolate(&a, &b, std::f64::consts::FRAC_PI_2).unwrap();
        assert_eq!(end.entries(), b.entries());
        let mid = DisorderMatrix::interpolate(&a, &b, std::f64::consts::FRAC_PI_4).unwrap();
        assert!((mid.get(3, 7) - (a.get(3, 7) + b.get(3, 7)) / 2f64.sqrt()).abs() < 1e-12);
        let rho = correlation(mid.entries(), a.entries());
        assert!((rho - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.02, "{rho}");
        let var = mid.entries().iter().map(|x| x * x).sum::<f64>() / mid.entries().len() as f64;
        assert!((var - 1.0).abs() < 0.03, "{var}");
        assert!(DisorderMatrix::interpolate(&a, &b, 1.6).is_err());
        let short = DisorderMatrix::<f64>::sample_replica(399, 1.0, Distribution::Gaussian, 5, 1).unwrap();
        assert!(DisorderMatrix::interpolate(&a, &short, 0.3).is_err());
        let rad = DisorderMatrix::<f64>::sample(400, 1.0, Distribution::Rademacher, 5).unwrap();
        assert!(matches!(DisorderMatrix::interpolate(&rad, &rad, 0.3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn resampling_keeps_prefix() {
        let m = DisorderMatrix::<f64>::sample(10, 1.0, Distribution::Gaussian, 2).unwrap();
        let r = m.resample_columns(0.3, 11).unwrap();
        for row in 0..m.rows() {
            assert_eq!(&r.row(row)[..7], &m.row(row)[..7]);
            assert!(r.row(row)[7..].iter().zip(&m.row(row)[7..]).all(|(a, b)| a != b));
        }
        assert!(m.resample_columns(0.05, 1).is_err());
        assert!(m.resample_columns(0.5, 1).is_err());

        let big = DisorderMatrix::<f64>::sample(1000, 0.5, Distribution::Gaussian, 4).unwrap();
        let fresh = big.resample_columns(0.2, 8).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for row in 0..big.rows() {
            a.extend_from_slice(&big.row(row)[800..]);
            b.extend_from_slice(&fresh.row(row)[800..]);
        }
        assert!(a.len() >= 100_000);
        assert!(correlation(&a, &b).abs() < 0.05);
    }

    #[test]
    fn correlated_pairs() {
        let (a, b) = DisorderMatrix::<f64>::correlated_pair(50, 1.0, 1.0, 3).unwrap();
        assert_eq!(a, b);
        let (a, b) = DisorderMatrix::<f64>::correlated_pair(50, 1.0, 0.0, 3).unwrap();
        assert_eq!(b.entries(), DisorderMatrix::<f64>::sample_replica(50, 1.0, Distribution::Gaussian, 3, 1).unwrap().entries());
        assert_ne!(a, b);
        let rho = (std::f64::consts::PI / 20.0).cos();
        let (a, b) = DisorderMatrix::<f64>::correlated_pair(1000, 1.0, rho, 9).unwrap();
        let est = correlation(a.entries(), b.entries());
        assert!((est - rho).abs() < 0.01, "{est} vs {rho}");
    }

    #[test]
    fn binary_roundtrip_and_header() {
        let m = DisorderMatrix::<f64>::sample(6, 0.5, Distribution::Gaussian, 42).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PDM1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 6);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 0);
        assert_eq!(u64::from_le_bytes(buf[28..36].try_into().unwrap()), 42);
        assert_eq!(buf.len(), 36 + 8 * 18);
        let back = DisorderMatrix::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(back, m);
        buf[0] = b'X';
        assert!(DisorderMatrix::<f64>::read_from(&buf[..]).is_err());
    }

    #[test]
    fn trajectory_grid_endpoints() {
        let g = InterpolatedEnsemble::<f64>::trajectory_grid(10);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], std::f64::consts::FRAC_PI_2);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #[test]
        fn sampling_is_deterministic(n in 1usize..40, seed in any::<u64>(), rad in any::<bool>()) {
            let dist = if rad { Distribution::Rademacher } else { Distribution::Gaussian };
            let a = DisorderMatrix::<f64>::sample(n, 1.5, dist, seed).unwrap();
            let b = DisorderMatrix::<f64>::sample(n, 1.5, dist, seed).unwrap();
            prop_assert_eq!(a.entries(), b.entries());
        }

        #[test]
        fn resampling_commutes_with_prefix(n in 4usize..60, seed in any::<u64>(), delta in 0.1f64..0.49) {
            let m = DisorderMatrix::<f64>::sample(n, 1.0, Distribution::Gaussian, seed).unwrap();
            prop_assume!((delta * n as f64).floor() >= 1.0);
            let keep = n - (delta * n as f64).floor() as usize;
            let r = m.resample_columns(delta, seed ^ 1).unwrap();
            prop_assert_eq!(r.column_prefix(keep), m.column_prefix(keep));
        }
    }
}

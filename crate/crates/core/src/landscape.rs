//! Exhaustive ground truth on small cubes: solution sets, discrepancy and
//! overlap-constrained tuple counts.
//!
//! Sign vectors are bit-packed with coordinate `j` at bit `n - 1 - j` of the
//! code and a set bit meaning `-1`. Increasing codes therefore list vectors in
//! lexicographic order with `+1 < -1`, and code 0 is the all-plus vector.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use fixedbitset::FixedBitSet;
use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderMatrix, InterpolatedEnsemble};
use crate::error::{check_range, Error, Result};
use crate::scalar::Real;

pub const DEFAULT_SOLUTION_CAP: usize = 25;
/// Largest cube the bit-code scanners address.
const MAX_CODE_BITS: usize = 40;
/// Largest tuple list [`enumerate_forbidden_tuples`] materialises.
pub const TUPLE_LIST_LIMIT: u128 = 1 << 22;
const GRAY_BITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignVector {
    n: usize,
    limbs: Vec<u64>,
}

impl SignVector {
    pub fn all_plus(n: usize) -> Self {
        Self { n, limbs: vec![0; n.div_ceil(64).max(1)] }
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        let mut v = Self::all_plus(signs.len());
        for (j, &s) in signs.iter().enumerate() {
            match s {
                1 => {}
                -1 => v.set(j, -1),
                other => return Err(Error::Format(format!("sign {other} at coordinate {j}"))),
            }
        }
        Ok(v)
    }

    /// Vector with the given code; `n <= 64`.
    pub fn from_code(n: usize, code: u64) -> Self {
        assert!(n <= 64, "codes address at most 64 coordinates");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Self { n, limbs: vec![code & mask] }
    }

    /// The code of a vector of length at most 64.
    pub fn code(&self) -> Option<u64> {
        (self.n <= 64).then(|| self.limbs[0])
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut v = Self::all_plus(n);
        for (i, limb) in v.limbs.iter_mut().enumerate() {
            let width = (n - 64 * i).min(64);
            let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
            *limb = rng.random::<u64>() & mask;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn slot(&self, j: usize) -> (usize, u32) {
        let p = self.n - 1 - j;
        (p / 64, (p % 64) as u32)
    }

    #[inline]
    pub fn get(&self, j: usize) -> i8 {
        let (l, b) = self.slot(j);
        if (self.limbs[l] >> b) & 1 == 1 {
            -1
        } else {
            1
        }
    }

    pub fn set(&mut self, j: usize, s: i8) {
        let (l, b) = self.slot(j);
        if s < 0 {
            self.limbs[l] |= 1 << b;
        } else {
            self.limbs[l] &= !(1 << b);
        }
    }

    pub fn flip(&mut self, j: usize) {
        let (l, b) = self.slot(j);
        self.limbs[l] ^= 1 << b;
    }

    pub fn negated(&self) -> Self {
        let mut v = self.clone();
        for j in 0..self.n {
            v.flip(j);
        }
        v
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.n).map(|j| self.get(j)).collect()
    }

    pub fn to_real<T: Real>(&self) -> Vec<T> {
        (0..self.n)
            .map(|j| if self.get(j) < 0 { -T::one() } else { T::one() })
            .collect()
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch {
                expected: format!("length {}", self.n),
                got: format!("length {}", other.n),
            });
        }
        Ok(())
    }

    pub fn hamming(&self, other: &Self) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .limbs
            .iter()
            .zip(&other.limbs)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// `<self, other> = n - 2 d_H`.
    pub fn dot(&self, other: &Self) -> Result<i64> {
        Ok(self.n as i64 - 2 * self.hamming(other)? as i64)
    }

    /// `<M_r, sigma>` for every row of `m`.
    pub fn image<T: Real>(&self, m: &DisorderMatrix<T>) -> Result<Vec<T>> {
        if m.cols() != self.n {
            return Err(Error::ShapeMismatch {
                expected: format!("{} columns", self.n),
                got: format!("{} columns", m.cols()),
            });
        }
        Ok(m.row_iter().map(|row| self.signed_sum(row)).collect())
    }

    fn signed_sum<T: Real>(&self, row: &[T]) -> T {
        row.iter()
            .enumerate()
            .fold(T::zero(), |acc, (j, &x)| if self.get(j) < 0 { acc - x } else { acc + x })
    }
}

impl Ord for SignVector {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then_with(|| self.limbs.iter().rev().cmp(other.limbs.iter().rev()))
    }
}

impl PartialOrd for SignVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.n {
            f.write_str(if self.get(j) < 0 { "-" } else { "+" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for SignVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let signs = s
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::Format(format!("unexpected '{other}' in sign vector"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::from_signs(&signs)
    }
}

/// `n^{-1} <a, b>`.
pub fn overlap(a: &SignVector, b: &SignVector) -> Result<f64> {
    Ok(a.dot(b)? as f64 / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `|<M_r, sigma>| <= kappa sqrt(n)` for every row.
    Symmetric,
    /// `<M_r, sigma> >= kappa sqrt(n)` for every row.
    Asymmetric,
}

impl Variant {
    #[inline]
    fn holds<T: Real>(self, y: T, thr: T) -> bool {
        match self {
            Variant::Symmetric => y.abs() <= thr,
            Variant::Asymmetric => y >= thr,
        }
    }

    #[inline]
    fn margin<T: Real>(self, y: T, thr: T) -> T {
        match self {
            Variant::Symmetric => (thr - y.abs()).abs(),
            Variant::Asymmetric => (y - thr).abs(),
        }
    }
}

fn threshold<T: Real>(kappa: T, n: usize) -> T {
    kappa * T::from_usize_lossy(n).sqrt()
}

fn check_kappa<T: Real>(kappa: T, variant: Variant) -> Result<()> {
    let k = kappa.to_f64_lossy();
    match variant {
        Variant::Symmetric => check_range("kappa", k, !k.is_nan() && k >= 0.0, "[0, inf]"),
        Variant::Asymmetric => check_range("kappa", k, !k.is_nan(), "a real number"),
    }
}

pub fn is_solution<T: Real>(m: &DisorderMatrix<T>, sigma: &SignVector, kappa: T, variant: Variant) -> Result<bool> {
    check_kappa(kappa, variant)?;
    let thr = threshold(kappa, sigma.len());
    Ok(sigma.image(m)?.into_iter().all(|y| variant.holds(y, thr)))
}

/// `||M sigma||_inf`.
pub fn sup_norm<T: Real>(m: &DisorderMatrix<T>, sigma: &SignVector) -> Result<T> {
    Ok(sigma.image(m)?.into_iter().fold(T::zero(), |acc, y| acc.max(y.abs())))
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap || n > MAX_CODE_BITS {
        return Err(Error::CapExceeded { n, cap: cap.min(MAX_CODE_BITS) });
    }
    Ok(())
}

/// Gray-code walker over blocks of `2^low` consecutive codes.
///
/// `y = M sigma` is updated by one column per step; rows whose running value
/// lands within the drift slack of the threshold are re-evaluated directly, so
/// the accepted set equals the one [`is_solution`] would give.
struct Walker<'a, T> {
    m: &'a DisorderMatrix<T>,
    cols: Vec<Vec<T>>,
    slack: Vec<T>,
    n: usize,
}

impl<'a, T: Real> Walker<'a, T> {
    fn new(m: &'a DisorderMatrix<T>, thr: T) -> Self {
        let n = m.cols();
        let cols = (0..n).map(|c| m.column(c)).collect();
        let tol = T::epsilon().sqrt();
        let slack = m
            .row_iter()
            .map(|row| tol * (row.iter().fold(T::zero(), |a, &x| a + x.abs()) + thr.abs() + T::one()))
            .collect();
        Self { m, cols, slack, n }
    }

    fn direct(&self, r: usize, code: u64) -> T {
        let row = self.m.row(r);
        (0..self.n).fold(T::zero(), |acc, j| {
            if (code >> (self.n - 1 - j)) & 1 == 1 {
                acc - row[j]
            } else {
                acc + row[j]
            }
        })
    }

    /// Visit every code in `[base, base + 2^low)` with its (approximate)
    /// image; `base` must have its low `low` bits clear.
    fn walk(&self, base: u64, low: usize, mut visit: impl FnMut(u64, &[T])) {
        let rows = self.m.rows();
        let mut y: Vec<T> = (0..rows).map(|r| self.direct(r, base)).collect();
        let mut code = base;
        visit(code, &y);
        for step in 1u64..(1u64 << low) {
            let bit = step.trailing_zeros() as usize;
            code ^= 1 << bit;
            let col = &self.cols[self.n - 1 - bit];
            let two = T::lit(2.0);
            if (code >> bit) & 1 == 1 {
                for (v, &x) in y.iter_mut().zip(col) {
                    *v = *v - two * x;
                }
            } else {
                for (v, &x) in y.iter_mut().zip(col) {
                    *v = *v + two * x;
                }
            }
            visit(code, &y);
        }
    }

    fn accepts(&self, code: u64, y: &[T], thr: T, variant: Variant) -> bool {
        for (r, &v) in y.iter().enumerate() {
            let ok = if variant.margin(v, thr) <= self.slack[r] {
                variant.holds(self.direct(r, code), thr)
            } else {
                variant.holds(v, thr)
            };
            if !ok {
                return false;
            }
        }
        true
    }
}

fn blocks(free_bits: usize) -> (usize, u64) {
    let low = free_bits.min(GRAY_BITS);
    (low, 1u64 << (free_bits - low))
}

/// Codes of all solutions, ascending.
fn solution_codes<T: Real>(m: &DisorderMatrix<T>, kappa: T, variant: Variant) -> Vec<u64> {
    let n = m.cols();
    let thr = threshold(kappa, n);
    let walker = Walker::new(m, thr);
    let (low, count) = blocks(n);
    let per_block: Vec<Vec<u64>> = (0..count)
        .into_par_iter()
        .map(|b| {
            let mut hits = Vec::new();
            walker.walk(b << low, low, |code, y| {
                if walker.accepts(code, y, thr, variant) {
                    hits.push(code);
                }
            });
            hits.sort_unstable();
            hits
        })
        .collect();
    per_block.concat()
}

/// All satisfying sign vectors in lexicographic order.
pub fn enumerate_solutions<T: Real>(
    m: &DisorderMatrix<T>,
    kappa: T,
    variant: Variant,
    n_cap: usize,
) -> Result<Vec<SignVector>> {
    check_kappa(kappa, variant)?;
    let n = m.cols();
    check_cap(n, n_cap)?;
    Ok(solution_codes(m, kappa, variant)
        .into_iter()
        .map(|c| SignVector::from_code(n, c))
        .collect())
}

/// Lexicographically first solution, scanning blocks in order.
pub fn first_solution<T: Real>(
    m: &DisorderMatrix<T>,
    kappa: T,
    variant: Variant,
    n_cap: usize,
) -> Result<Option<SignVector>> {
    check_kappa(kappa, variant)?;
    let n = m.cols();
    check_cap(n, n_cap)?;
    let thr = threshold(kappa, n);
    let walker = Walker::new(m, thr);
    let (low, count) = blocks(n);
    let code = (0..count).into_par_iter().find_map_first(|b| {
        let mut best: Option<u64> = None;
        walker.walk(b << low, low, |code, y| {
            if best.is_none_or(|c| code < c) && walker.accepts(code, y, thr, variant) {
                best = Some(code);
            }
        });
        best
    });
    Ok(code.map(|c| SignVector::from_code(n, c)))
}

pub fn count_solutions<T: Real>(m: &DisorderMatrix<T>, kappa: T, variant: Variant, n_cap: usize) -> Result<u64> {
    check_kappa(kappa, variant)?;
    check_cap(m.cols(), n_cap)?;
    Ok(solution_codes(m, kappa, variant).len() as u64)
}

/// Solution set as a bitset indexed by code.
pub fn solution_set<T: Real>(m: &DisorderMatrix<T>, kappa: T, variant: Variant, n_cap: usize) -> Result<FixedBitSet> {
    check_kappa(kappa, variant)?;
    let n = m.cols();
    check_cap(n, n_cap)?;
    let mut set = FixedBitSet::with_capacity(1usize << n);
    for c in solution_codes(m, kappa, variant) {
        set.insert(c as usize);
    }
    Ok(set)
}

/// `min_sigma ||M sigma||_inf` and its lexicographically first minimiser.
///
/// Only `sigma_1 = +1` is scanned since `||M(-sigma)|| = ||M sigma||`.
pub fn discrepancy<T: Real>(m: &DisorderMatrix<T>, n_cap: usize) -> Result<(T, SignVector)> {
    let n = m.cols();
    check_cap(n, n_cap)?;
    let walker = Walker::new(m, T::zero());
    let (low, count) = blocks(n - 1);
    let best = (0..count)
        .into_par_iter()
        .map(|b| {
            let mut best: Option<(T, u64)> = None;
            walker.walk(b << low, low, |code, y| {
                let v = y.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
                if best.is_none_or(|(bv, _)| v < bv) {
                    best = Some((v, code));
                }
            });
            let (_, code) = best.expect("non-empty block");
            let exact = (0..m.rows()).fold(T::zero(), |a, r| a.max(walker.direct(r, code).abs()));
            (exact, code)
        })
        .reduce_with(|a, b| match a.0.partial_cmp(&b.0) {
            Some(Ordering::Less) => a,
            Some(Ordering::Greater) => b,
            _ => {
                if a.1 <= b.1 {
                    a
                } else {
                    b
                }
            }
        })
        .expect("at least one block");
    Ok((best.0, SignVector::from_code(n, best.1)))
}

/// Closed overlap window `[beta - eta, beta]` held as integer bounds on
/// `<a, b> = n O(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapBand {
    pub n: usize,
    pub lo_dot: i64,
    pub hi_dot: i64,
}

impl OverlapBand {
    /// Endpoints `(beta - eta) n` and `beta n` rounded to the nearest integer.
    pub fn from_real(n: usize, beta: f64, eta: f64) -> Result<Self> {
        check_range("beta", beta, (-1.0..=1.0).contains(&beta), "[-1, 1]")?;
        check_range("eta", eta, eta > 0.0 && eta <= 2.0, "(0, 2]")?;
        let nf = n as f64;
        Ok(Self { n, lo_dot: ((beta - eta) * nf).round() as i64, hi_dot: (beta * nf).round() as i64 })
    }

    /// Exact endpoints; `beta n` and `eta n` must be integers.
    pub fn from_rational(n: usize, beta: Ratio<i64>, eta: Ratio<i64>) -> Result<Self> {
        let nr = Ratio::from_integer(n as i64);
        let (bn, en) = (beta * nr, eta * nr);
        if !bn.is_integer() || !en.is_integer() {
            return Err(Error::Format(format!("beta n = {bn} and eta n = {en} must be integers")));
        }
        Self::from_real(n, beta.to_f64().unwrap_or(f64::NAN), eta.to_f64().unwrap_or(f64::NAN))?;
        Ok(Self { n, lo_dot: (bn - en).to_integer(), hi_dot: bn.to_integer() })
    }

    #[inline]
    pub fn contains_dot(&self, dot: i64) -> bool {
        self.lo_dot <= dot && dot <= self.hi_dot
    }

    #[inline]
    pub fn contains_distance(&self, d: usize) -> bool {
        self.contains_dot(self.n as i64 - 2 * d as i64)
    }

    /// Inclusive range of Hamming distances inside the band.
    pub fn distance_range(&self) -> Option<(usize, usize)> {
        let n = self.n as i64;
        let lo = (n - self.hi_dot + 1).div_euclid(2).max(0);
        let hi = (n - self.lo_dot).div_euclid(2).min(n);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

/// Membership test for overlap-constrained tuples of feasible vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleQuery<T> {
    pub kappa: T,
    pub alpha: f64,
    pub m: usize,
    pub beta: f64,
    pub eta: f64,
    pub tau_set: Vec<T>,
    /// Exact `(beta, eta)`; when set, the band is built without rounding.
    #[serde(skip)]
    pub exact: Option<(Ratio<i64>, Ratio<i64>)>,
}

impl<T: Real> TupleQuery<T> {
    pub fn new(kappa: T, alpha: f64, m: usize, beta: f64, eta: f64, tau_set: Vec<T>) -> Result<Self> {
        let k = kappa.to_f64_lossy();
        check_range("kappa", k, k > 0.0, "(0, inf]")?;
        check_range("alpha", alpha, alpha > 0.0 && alpha.is_finite(), "(0, inf)")?;
        if m == 0 {
            return Err(Error::Sizing("m must be at least 1".into()));
        }
        check_range("beta", beta, (-1.0..=1.0).contains(&beta), "[-1, 1]")?;
        check_range("eta", eta, eta > 0.0 && eta <= 2.0, "(0, 2]")?;
        if tau_set.is_empty() {
            return Err(Error::Sizing("tau set must be non-empty".into()));
        }
        for &t in &tau_set {
            check_range("tau", t.to_f64_lossy(), t >= T::zero() && t <= T::FRAC_PI_2(), "[0, pi/2]")?;
        }
        Ok(Self { kappa, alpha, m, beta, eta, tau_set, exact: None })
    }

    pub fn exact(kappa: T, alpha: f64, m: usize, beta: Ratio<i64>, eta: Ratio<i64>, tau_set: Vec<T>) -> Result<Self> {
        let to = |r: Ratio<i64>| r.to_f64().unwrap_or(f64::NAN);
        let mut q = Self::new(kappa, alpha, m, to(beta), to(eta), tau_set)?;
        q.exact = Some((beta, eta));
        Ok(q)
    }

    pub fn band(&self, n: usize) -> Result<OverlapBand> {
        match self.exact {
            Some((b, e)) => OverlapBand::from_rational(n, b, e),
            None => OverlapBand::from_real(n, self.beta, self.eta),
        }
    }
}

/// Default exhaustive cap for `m`-tuples.
pub fn default_tuple_cap(m: usize) -> usize {
    if m <= 3 {
        14
    } else {
        12
    }
}

/// Feasible sets and neighbour bitsets shared by tuple counting and listing.
struct TupleIndex {
    m: usize,
    feasible: Vec<FixedBitSet>,
    neighbours: Vec<Option<FixedBitSet>>,
}

impl TupleIndex {
    fn build<T: Real>(q: &TupleQuery<T>, ens: &InterpolatedEnsemble<T>, n_cap: usize) -> Result<Self> {
        let n = ens.base.cols();
        check_cap(n, n_cap)?;
        if ens.replicas.len() < q.m {
            return Err(Error::Sizing(format!("{} replicas for {}-tuples", ens.replicas.len(), q.m)));
        }
        let rows = crate::disorder::constraint_count(n, q.alpha);
        if rows != ens.base.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows} rows for alpha = {}", q.alpha),
                got: format!("{} rows", ens.base.rows()),
            });
        }
        let band = q.band(n)?;
        let size = 1usize << n;
        let feasible = (0..q.m)
            .map(|i| {
                let mut set = FixedBitSet::with_capacity(size);
                for &tau in &q.tau_set {
                    set.union_with(&solution_set(&ens.at(i, tau)?, q.kappa, Variant::Symmetric, n_cap)?);
                }
                Ok(set)
            })
            .collect::<Result<Vec<_>>>()?;

        let offsets: Vec<usize> = (0..size).filter(|&x| band.contains_distance(x.count_ones() as usize)).collect();
        let mut needed = FixedBitSet::with_capacity(size);
        for f in feasible.iter().take(q.m - 1) {
            needed.union_with(f);
        }
        let neighbours = (0..size)
            .into_par_iter()
            .map(|a| {
                needed.contains(a).then(|| {
                    let mut set = FixedBitSet::with_capacity(size);
                    for &x in &offsets {
                        set.insert(a ^ x);
                    }
                    set
                })
            })
            .collect();
        Ok(Self { m: q.m, feasible, neighbours })
    }

    fn neighbours(&self, code: usize) -> &FixedBitSet {
        self.neighbours[code].as_ref().expect("neighbour set built for feasible code")
    }

    fn count_below(&self, level: usize, running: &FixedBitSet) -> u128 {
        if level + 1 == self.m {
            return running.intersection_count(&self.feasible[level]) as u128;
        }
        let mut candidates = running.clone();
        candidates.intersect_with(&self.feasible[level]);
        candidates
            .ones()
            .map(|c| {
                let mut next = running.clone();
                next.intersect_with(self.neighbours(c));
                self.count_below(level + 1, &next)
            })
            .sum()
    }

    fn count(&self) -> u128 {
        if self.m == 1 {
            return self.feasible[0].count_ones(..) as u128;
        }
        let firsts: Vec<usize> = self.feasible[0].ones().collect();
        firsts.par_iter().map(|&c| self.count_below(1, self.neighbours(c))).sum()
    }

    fn list_below(&self, level: usize, running: &FixedBitSet, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        let mut candidates = running.clone();
        candidates.intersect_with(&self.feasible[level]);
        for c in candidates.ones() {
            prefix.push(c as u64);
            if level + 1 == self.m {
                out.push(prefix.clone());
            } else {
                let mut next = running.clone();
                next.intersect_with(self.neighbours(c));
                self.list_below(level + 1, &next, prefix, out);
            }
            prefix.pop();
        }
    }

    fn list(&self) -> Vec<Vec<u64>> {
        let firsts: Vec<usize> = self.feasible[0].ones().collect();
        let parts: Vec<Vec<Vec<u64>>> = firsts
            .par_iter()
            .map(|&c| {
                let mut out = Vec::new();
                if self.m == 1 {
                    out.push(vec![c as u64]);
                } else {
                    self.list_below(1, self.neighbours(c), &mut vec![c as u64], &mut out);
                }
                out
            })
            .collect();
        parts.concat()
    }
}

/// Number of ordered tuples `(sigma_1, ..., sigma_m)` with every pairwise
/// overlap in the band and `sigma_i` feasible for `M_i(tau)` at some `tau` in
/// the query's set.
pub fn count_forbidden_tuples<T: Real>(q: &TupleQuery<T>, ens: &InterpolatedEnsemble<T>, n_cap: usize) -> Result<u128> {
    Ok(TupleIndex::build(q, ens, n_cap)?.count())
}

/// The tuples counted by [`count_forbidden_tuples`], lexicographically
/// ordered. Refuses to materialise more than [`TUPLE_LIST_LIMIT`] tuples.
pub fn enumerate_forbidden_tuples<T: Real>(
    q: &TupleQuery<T>,
    ens: &InterpolatedEnsemble<T>,
    n_cap: usize,
) -> Result<Vec<Vec<SignVector>>> {
    let index = TupleIndex::build(q, ens, n_cap)?;
    let total = index.count();
    if total > TUPLE_LIST_LIMIT {
        return Err(Error::Sizing(format!(
            "{total} tuples exceed the listing limit of {TUPLE_LIST_LIMIT}; count them instead"
        )));
    }
    let n = ens.base.cols();
    Ok(index
        .list()
        .into_iter()
        .map(|t| t.into_iter().map(|c| SignVector::from_code(n, c)).collect())
        .collect())
}

fn binomial_row(n: usize) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(n + 1);
    let mut c = BigUint::one();
    row.push(c.clone());
    for k in 0..n {
        c = c * BigUint::from(n - k) / BigUint::from(k + 1);
        row.push(c.clone());
    }
    row
}

/// Exact number of ordered `m`-tuples of the cube with every pairwise overlap
/// in `band`, for `m` in {2, 3}.
///
/// Pairs: `2^n sum_{d in D} C(n, d)`. Triples: with `d(s1, s2) = k`, a third
/// vector flipping `x` of the `n - k` agreeing and `y` of the `k` disagreeing
/// coordinates sits at distances `x + y` and `x + k - y`, giving
/// `2^n sum_k C(n, k) sum_x C(n - k, x) sum_y C(k, y)` over in-band distances.
pub fn count_overlap_tuples_exact(band: &OverlapBand, m: usize) -> Result<BigUint> {
    let n = band.n;
    let Some((dlo, dhi)) = band.distance_range() else {
        return Ok(BigUint::zero());
    };
    let cube = BigUint::one() << n;
    match m {
        2 => {
            let row = binomial_row(n);
            Ok(cube * row[dlo..=dhi].iter().sum::<BigUint>())
        }
        3 => {
            let row_n = binomial_row(n);
            let total: BigUint = (dlo..=dhi)
                .into_par_iter()
                .map(|k| {
                    let row_k = binomial_row(k);
                    let mut prefix = Vec::with_capacity(k + 2);
                    prefix.push(BigUint::zero());
                    for c in &row_k {
                        let next = prefix.last().expect("seeded") + c;
                        prefix.push(next);
                    }
                    let rest = n - k;
                    let mut inner = BigUint::zero();
                    let mut c = BigUint::one();
                    for x in 0..=rest.min(dhi) {
                        if x > 0 {
                            c = c * BigUint::from(rest - x + 1) / BigUint::from(x);
                        }
                        let lo = dlo.saturating_sub(x).max((x + k).saturating_sub(dhi));
                        let hi = k.min(dhi.saturating_sub(x)).min((x + k).saturating_sub(dlo));
                        if x > dhi || lo > hi || x + k < dlo {
                            continue;
                        }
                        inner += &c * (&prefix[hi + 1] - &prefix[lo]);
                    }
                    &row_n[k] * inner
                })
                .sum();
            Ok(cube * total)
        }
        other => Err(Error::Unsupported(format!("exact tuple counts for m = {other}"))),
    }
}

/// One line of the tuple-count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleCountRow {
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub eta: f64,
    pub kappa: f64,
    pub tau_set_id: String,
    pub count: String,
    pub seconds: f64,
}

pub fn write_tuple_counts<W: Write>(w: W, rows: &[TupleCountRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

//! Constructive solvers: the Kim-Roche multi-stage majority for the
//! asymmetric model, plain majority, online column-by-column signers and
//! exhaustive search.

use serde::{Deserialize, Serialize};

use crate::disorder::DisorderMatrix;
use crate::error::{check_range, Error, Result};
use crate::landscape::{first_solution, SignVector, Variant};
use crate::scalar::Real;

/// Divisor in the first-round row count used by the original analysis.
pub const PAPER_D1: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KimRocheConfig {
    /// `C` in `N = ceil(C log10 log10 n)`.
    pub c_rounds: f64,
    /// `d1` in `k_1 = 2 floor(n / (2 d1)) + 1`.
    pub d1: f64,
    /// Exponent `e` in `k_s = 2 floor(n f_s^e / 2) + 1` for `s >= 2`.
    pub k_exponent: f64,
    /// Fixes `N` instead of deriving it from `c_rounds`.
    pub rounds: Option<usize>,
}

impl Default for KimRocheConfig {
    fn default() -> Self {
        Self { c_rounds: 4.0, d1: 1e3, k_exponent: 3.0, rounds: None }
    }
}

impl KimRocheConfig {
    pub fn paper() -> Self {
        Self { d1: PAPER_D1, ..Self::default() }
    }
}

/// Round parameters for `n` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KimRocheSchedule {
    pub n: usize,
    /// `N` before rounds with empty blocks are dropped.
    pub nominal_rounds: usize,
    /// Index of the last round kept.
    pub rounds: usize,
    pub f: Vec<f64>,
    /// Rows voting in round `j`; round 0 votes with every row and stores 0.
    pub k: Vec<usize>,
    pub n_blocks: Vec<usize>,
    /// `sum_j f_j` over the rounds before truncation.
    pub a: f64,
    pub config: KimRocheConfig,
}

fn odd_floor(x: f64) -> usize {
    2 * (0.5 * x).floor().max(0.0) as usize + 1
}

impl KimRocheSchedule {
    pub fn new(n: usize, config: KimRocheConfig) -> Result<Self> {
        check_range("c_rounds", config.c_rounds, config.c_rounds >= 0.0, "[0, inf)")?;
        check_range("d1", config.d1, config.d1 > 0.0, "(0, inf)")?;
        check_range("k_exponent", config.k_exponent, config.k_exponent > 0.0, "(0, inf)")?;
        let nominal = match config.rounds {
            Some(r) => r,
            None => {
                let ll = (n as f64).log10().log10();
                if ll.is_finite() {
                    (config.c_rounds * ll).ceil().max(0.0) as usize
                } else {
                    0
                }
            }
        };
        let f: Vec<f64> = (0..=nominal)
            .map(|j| match j {
                0 => 1.0,
                1 => 1.0 / 200.0,
                j => 10f64.powf(-(2f64.powi(j as i32))),
            })
            .collect();
        let a: f64 = f.iter().sum();
        let nf = n as f64;
        let scale = nf / a;
        let mut cumulative = 0.0;
        let mut previous = 0usize;
        let mut n_blocks = Vec::with_capacity(f.len());
        for &fj in &f {
            cumulative += fj;
            let upto = ((scale * cumulative).floor() as usize).min(n);
            n_blocks.push(upto - previous);
            previous = upto;
        }
        if n_blocks[0] == 0 {
            return Err(Error::Sizing(format!("n = {n} leaves the first round empty")));
        }
        let kept = n_blocks.iter().position(|&b| b == 0).unwrap_or(n_blocks.len());
        n_blocks.truncate(kept);
        let mut f = f;
        f.truncate(kept);
        let assigned: usize = n_blocks.iter().sum();
        *n_blocks.last_mut().expect("round 0 kept") += n - assigned;
        let k = (0..kept)
            .map(|j| match j {
                0 => 0,
                1 => odd_floor(nf / config.d1),
                s => odd_floor(nf * f[s].powf(config.k_exponent)),
            })
            .collect();
        Ok(Self { n, nominal_rounds: nominal, rounds: kept - 1, f, k, n_blocks, a, config })
    }

    /// The schedule with a single majority round.
    pub fn single_round(n: usize) -> Result<Self> {
        Self::new(n, KimRocheConfig { rounds: Some(0), ..KimRocheConfig::default() })
    }

    pub fn round_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.n_blocks.len());
        let mut s = 0;
        for &b in &self.n_blocks {
            starts.push(s);
            s += b;
        }
        starts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub j: usize,
    /// Rows that voted, after clamping to the matrix height.
    pub k_j: usize,
    pub n_j: usize,
    pub start: usize,
    /// Voting rows in ascending order; empty for round 0, which uses all rows.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub index_set: Vec<usize>,
    /// Rows with a negative partial inner product after this round.
    pub violated_rows_after: usize,
    pub nonneg_fraction_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KimRocheRun {
    pub sigma: SignVector,
    pub rounds: Vec<RoundTrace>,
}

impl KimRocheRun {
    pub fn trace_json(&self) -> serde_json::Value {
        serde_json::json!({ "rounds": self.rounds })
    }
}

fn check_cols<T: Real>(m: &DisorderMatrix<T>, n: usize) -> Result<()> {
    if m.cols() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} columns"),
            got: format!("{} columns", m.cols()),
        });
    }
    Ok(())
}

fn vote<T: Real>(m: &DisorderMatrix<T>, rows: Option<&[usize]>, col: usize) -> (i8, bool) {
    let s = match rows {
        Some(rs) => rs.iter().fold(T::zero(), |a, &r| a + m.get(r, col)),
        None => (0..m.rows()).fold(T::zero(), |a, r| a + m.get(r, col)),
    };
    if s < T::zero() {
        (-1, false)
    } else {
        (1, s == T::zero())
    }
}

/// Multi-stage majority aiming at `M sigma >= 0` entrywise.
///
/// Round `j >= 1` picks the `k_j` rows with the smallest partial inner
/// products (ties by row index) and sets the next `n_j` coordinates by their
/// column-wise majority. `k_j` is clamped to the largest odd count not
/// exceeding the number of rows.
pub fn kim_roche_solve<T: Real>(m: &DisorderMatrix<T>, schedule: &KimRocheSchedule) -> Result<KimRocheRun> {
    check_cols(m, schedule.n)?;
    let rows = m.rows();
    let mut sigma = SignVector::all_plus(schedule.n);
    let mut partial = vec![T::zero(); rows];
    let mut trace = Vec::with_capacity(schedule.n_blocks.len());
    for (j, (&n_j, start)) in schedule.n_blocks.iter().zip(schedule.round_starts()).enumerate() {
        let (k_j, index_set) = if j == 0 {
            (rows, Vec::new())
        } else {
            let cap = if rows % 2 == 1 { rows } else { rows.saturating_sub(1) };
            let k_j = schedule.k[j].min(cap);
            let mut order: Vec<usize> = (0..rows).collect();
            order.sort_by(|&a, &b| partial[a].partial_cmp(&partial[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            order.truncate(k_j);
            order.sort_unstable();
            (k_j, order)
        };
        for c in start..start + n_j {
            let (s, _) = vote(m, (j > 0).then_some(index_set.as_slice()), c);
            sigma.set(c, s);
            for (r, p) in partial.iter_mut().enumerate() {
                let x = m.get(r, c);
                *p = if s < 0 { *p - x } else { *p + x };
            }
        }
        let violated = partial.iter().filter(|&&p| p < T::zero()).count();
        trace.push(RoundTrace {
            j,
            k_j,
            n_j,
            start,
            index_set,
            violated_rows_after: violated,
            nonneg_fraction_after: if rows == 0 { 1.0 } else { 1.0 - violated as f64 / rows as f64 },
        });
    }
    Ok(KimRocheRun { sigma, rounds: trace })
}

/// `sigma_j = sgn(sum_i M_ij)` with zero sums sent to `+1`, and the number of
/// such ties.
pub fn majority_solve_counted<T: Real>(m: &DisorderMatrix<T>) -> (SignVector, usize) {
    let sums = m.column_sums();
    let mut sigma = SignVector::all_plus(m.cols());
    let mut ties = 0;
    for (c, &s) in sums.iter().enumerate() {
        if s < T::zero() {
            sigma.set(c, -1);
        } else if s == T::zero() {
            ties += 1;
        }
    }
    (sigma, ties)
}

pub fn majority_solve<T: Real>(m: &DisorderMatrix<T>) -> SignVector {
    majority_solve_counted(m).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineStrategy {
    /// Minimise `||x + s C_t||_inf`.
    GreedyMinimax,
    /// Minimise `sum_r cosh(lambda (x + s C_t)_r)`, `lambda = kappa / (2 sqrt n)`.
    /// A standard exponential-potential balancer, not a published
    /// algorithm's exact potential.
    ExpPotential,
}

impl std::str::FromStr for OnlineStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" | "greedy_minimax" | "greedy-minimax" => Ok(OnlineStrategy::GreedyMinimax),
            "exp" | "exp_potential" | "exp-potential" => Ok(OnlineStrategy::ExpPotential),
            other => Err(Error::Format(format!("unknown online strategy '{other}'"))),
        }
    }
}

/// Column-streaming signer: `push` sees each column once, in order, and
/// commits to its sign before the next column exists.
#[derive(Debug, Clone)]
pub struct OnlineSigner<T> {
    strategy: OnlineStrategy,
    lambda: T,
    partial: Vec<T>,
}

impl<T: Real> OnlineSigner<T> {
    pub fn new(rows: usize, n: usize, kappa: T, strategy: OnlineStrategy) -> Self {
        let lambda = kappa / (T::lit(2.0) * T::from_usize_lossy(n.max(1)).sqrt());
        Self { strategy, lambda, partial: vec![T::zero(); rows] }
    }

    fn greedy(&self, col: &[T]) -> i8 {
        let (mut plus, mut minus) = (T::zero(), T::zero());
        for (&x, &c) in self.partial.iter().zip(col) {
            plus = plus.max((x + c).abs());
            minus = minus.max((x - c).abs());
        }
        if minus < plus {
            -1
        } else {
            1
        }
    }

    pub fn push(&mut self, col: &[T]) -> i8 {
        assert_eq!(col.len(), self.partial.len(), "column height");
        let s = match self.strategy {
            OnlineStrategy::GreedyMinimax => self.greedy(col),
            OnlineStrategy::ExpPotential => {
                // cosh(a + b) - cosh(a - b) = 2 sinh(a) sinh(b).
                let l = self.lambda;
                let score = self
                    .partial
                    .iter()
                    .zip(col)
                    .fold(T::zero(), |acc, (&x, &c)| acc + (l * x).sinh() * (l * c).sinh());
                if !score.is_finite() {
                    self.greedy(col)
                } else if score > T::zero() {
                    -1
                } else {
                    1
                }
            }
        };
        for (x, &c) in self.partial.iter_mut().zip(col) {
            *x = if s < 0 { *x - c } else { *x + c };
        }
        s
    }

    pub fn partial(&self) -> &[T] {
        &self.partial
    }

    pub fn max_abs_partial(&self) -> T {
        self.partial.iter().fold(T::zero(), |a, &x| a.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRun<T> {
    pub sigma: SignVector,
    /// `max_r |sum_{c <= t} sigma_c M_rc|` after each step `t`.
    pub max_abs_partial: Vec<T>,
}

pub fn online_solve<T: Real>(m: &DisorderMatrix<T>, kappa: T, strategy: OnlineStrategy) -> Result<OnlineRun<T>> {
    check_range("kappa", kappa.to_f64_lossy(), kappa > T::zero(), "(0, inf)")?;
    let n = m.cols();
    let mut signer = OnlineSigner::new(m.rows(), n, kappa, strategy);
    let mut sigma = SignVector::all_plus(n);
    let mut trace = Vec::with_capacity(n);
    for c in 0..n {
        let col = m.column(c);
        if signer.push(&col) < 0 {
            sigma.set(c, -1);
        }
        trace.push(signer.max_abs_partial());
    }
    Ok(OnlineRun { sigma, max_abs_partial: trace })
}

/// Lexicographically first solution, if any.
pub fn exhaustive_solve<T: Real>(
    m: &DisorderMatrix<T>,
    kappa: T,
    variant: Variant,
    n_cap: usize,
) -> Result<Option<SignVector>> {
    first_solution(m, kappa, variant, n_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::Distribution;
    use crate::landscape::{enumerate_solutions, is_solution};
    use proptest::prelude::*;

    #[test]
    fn reference_schedule_arithmetic() {
        let s = KimRocheSchedule::new(200_000_000, KimRocheConfig::paper()).unwrap();
        assert_eq!(s.k[1], 3);
        let two = KimRocheSchedule::new(10_000, KimRocheConfig { rounds: Some(2), ..Default::default() }).unwrap();
        assert!((two.a - 1.0051).abs() < 1e-12);
        let ratio = s.n_blocks[0] as f64 / s.n as f64;
        assert!((ratio - 0.995).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn schedule_invariants_at_desk_scale() {
        for n in [100usize, 5000, 10_000, 100_000] {
            let s = KimRocheSchedule::new(n, KimRocheConfig::default()).unwrap();
            assert_eq!(s.n_blocks.iter().sum::<usize>(), n);
            assert!(s.k[1..].iter().all(|k| k % 2 == 1));
            assert!((2..=4).contains(&s.nominal_rounds), "n = {n}: {s:?}");
            assert!(s.rounds <= s.nominal_rounds);
            assert_eq!(s.f.len(), s.n_blocks.len());
            assert!(s.n_blocks.iter().all(|&b| b > 0));
        }
        assert!(KimRocheSchedule::new(0, KimRocheConfig::default()).is_err());
    }

    #[test]
    fn single_round_is_majority() {
        let m = DisorderMatrix::<f64>::sample(300, 0.1, Distribution::Gaussian, 5).unwrap();
        let s = KimRocheSchedule::single_round(300).unwrap();
        let run = kim_roche_solve(&m, &s).unwrap();
        assert_eq!(run.sigma, majority_solve(&m));
        assert_eq!(run.rounds.len(), 1);
    }

    #[test]
    fn rounds_partition_coordinates() {
        let m = DisorderMatrix::<f64>::sample(5000, 0.001, Distribution::Gaussian, 3).unwrap();
        let s = KimRocheSchedule::new(5000, KimRocheConfig::default()).unwrap();
        let run = kim_roche_solve(&m, &s).unwrap();
        let mut next = 0;
        for (t, &nb) in run.rounds.iter().zip(&s.n_blocks) {
            assert_eq!(t.start, next);
            assert_eq!(t.n_j, nb);
            if t.j > 0 {
                assert_eq!(t.index_set.len(), t.k_j);
                assert_eq!(t.k_j % 2, 1);
            }
            next += nb;
        }
        assert_eq!(next, 5000);
        assert!(run.trace_json()["rounds"][0]["violated_rows_after"].is_u64());
    }

    #[test]
    fn majority_examples() {
        let m = DisorderMatrix::<f64>::from_rows(2, 3, vec![1.0, -1.0, 1.0, 2.0, -3.0, -1.0], Distribution::Gaussian).unwrap();
        let (s, ties) = majority_solve_counted(&m);
        assert_eq!(s.signs(), vec![1, -1, 1]);
        assert_eq!(ties, 1);
        let neg = majority_solve(&m.negated());
        assert_eq!(neg.signs(), vec![-1, 1, 1]);
        let g = DisorderMatrix::<f64>::sample(2000, 0.05, Distribution::Gaussian, 9).unwrap();
        assert_eq!(majority_solve_counted(&g).1, 0);
        assert_eq!(majority_solve(&g.negated()), majority_solve(&g).negated());
    }

    #[test]
    fn greedy_single_row_stays_bounded() {
        let m = DisorderMatrix::<f64>::sample_shape(1, 500, Distribution::Gaussian, 2, 0);
        let top = m.entries().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let run = online_solve(&m, 1.0, OnlineStrategy::GreedyMinimax).unwrap();
        assert!(run.max_abs_partial.iter().all(|&p| p <= top + 1e-12));
    }

    #[test]
    fn online_outputs_only_depend_on_prefix() {
        let m = DisorderMatrix::<f64>::sample(40, 0.5, Distribution::Gaussian, 1).unwrap();
        let r = m.resample_columns(0.25, 2).unwrap();
        for strategy in [OnlineStrategy::GreedyMinimax, OnlineStrategy::ExpPotential] {
            let a = online_solve(&m, 1.0, strategy).unwrap().sigma;
            let b = online_solve(&r, 1.0, strategy).unwrap().sigma;
            assert_eq!(a.signs()[..30], b.signs()[..30]);
        }
    }

    #[test]
    fn exhaustive_baseline() {
        let empty = DisorderMatrix::<f64>::from_rows(0, 5, vec![], Distribution::Gaussian).unwrap();
        assert_eq!(exhaustive_solve(&empty, 1.0, Variant::Symmetric, 25).unwrap(), Some(SignVector::all_plus(5)));
        for seed in 0..10 {
            let m = DisorderMatrix::<f64>::sample(14, 1.2, Distribution::Gaussian, seed).unwrap();
            let head = enumerate_solutions(&m, 1.0, Variant::Symmetric, 25).unwrap().into_iter().next();
            let first = exhaustive_solve(&m, 1.0, Variant::Symmetric, 25).unwrap();
            assert_eq!(first, head);
            if let Some(s) = first {
                assert!(is_solution(&m, &s, 1.0, Variant::Symmetric).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn schedules_partition_n(n in 20usize..2_000_000, c in 0.5f64..6.0, d1 in 1.0f64..1e6) {
            let cfg = KimRocheConfig { c_rounds: c, d1, ..Default::default() };
            if let Ok(s) = KimRocheSchedule::new(n, cfg) {
                prop_assert_eq!(s.n_blocks.iter().sum::<usize>(), n);
                prop_assert!(s.k[1..].iter().all(|k| k % 2 == 1));
                prop_assert!(s.a >= s.f.iter().sum::<f64>() - 1e-12);
            }
        }

        #[test]
        fn kim_roche_assigns_every_coordinate(seed in any::<u64>(), n in 50usize..400) {
            let m = DisorderMatrix::<f64>::sample(n, 0.05, Distribution::Gaussian, seed).unwrap();
            let s = KimRocheSchedule::new(n, KimRocheConfig { d1: 10.0, ..Default::default() }).unwrap();
            let run = kim_roche_solve(&m, &s).unwrap();
            prop_assert_eq!(run.rounds.iter().map(|t| t.n_j).sum::<usize>(), n);
            for t in &run.rounds[1..] {
                prop_assert_eq!(t.index_set.len(), t.k_j);
                prop_assert!(t.index_set.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}

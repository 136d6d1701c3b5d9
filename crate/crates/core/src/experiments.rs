//! Monte-Carlo harnesses: stability laws, interpolation trajectories, the
//! online-failure census and the gaussian/rademacher universality gap.
//!
//! Trials are keyed by `(seed, trial)` and evaluated in parallel; results are
//! collected in trial order, so every aggregate is independent of the thread
//! count.

use std::f64::consts::{FRAC_PI_2, PI};

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderMatrix, Distribution, InterpolatedEnsemble};
use crate::error::{check_range, Error, Result};
use crate::landscape::{is_solution, overlap, solution_set, SignVector, Variant};
use crate::rng::{derive_seed, stream};
use crate::solvers::{kim_roche_solve, majority_solve, online_solve, KimRocheConfig, KimRocheSchedule, OnlineStrategy};

const MAJORITY_KEY: u64 = 0x4d41_4a53;
const KIM_ROCHE_KEY: u64 = 0x4b52_5354;
const CENSUS_KEY: u64 = 0x4345_4e53;
const UNIVERSALITY_KEY: u64 = 0x554e_4956;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub statistic_name: String,
    pub mean: f64,
    /// Standard error of the mean; zero for a single trial.
    pub std_error: f64,
    /// Unbiased sample variance; zero for a single trial.
    pub variance: f64,
    pub per_trial: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrialSummary {
    pub fn from_values(statistic_name: &str, values: &[f64], seed: u64, keep: bool) -> Self {
        let t = values.len();
        let mean = if t == 0 { 0.0 } else { values.iter().sum::<f64>() / t as f64 };
        let variance = if t < 2 {
            0.0
        } else {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64
        };
        let std_error = if t == 0 { 0.0 } else { (variance / t as f64).sqrt() };
        Self {
            trials: t,
            statistic_name: statistic_name.to_owned(),
            mean,
            std_error,
            variance,
            per_trial: keep.then(|| values.to_vec()),
            seed,
        }
    }
}

/// Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> WilsonInterval {
    if trials == 0 {
        return WilsonInterval { estimate: 0.0, lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // lo <= p <= hi holds exactly; the clamps absorb rounding at p = 0 or 1.
    WilsonInterval { estimate: p, lo: (centre - half).clamp(0.0, p), hi: (centre + half).clamp(p, 1.0) }
}

fn check_tau(tau: f64) -> Result<()> {
    check_range("tau", tau, (0.0..=FRAC_PI_2).contains(&tau), "[0, pi/2]")
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::Sizing("trials must be at least 1".into()));
    }
    Ok(())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let t = v.len();
    match t {
        0 => f64::NAN,
        _ if t % 2 == 1 => v[t / 2],
        _ => 0.5 * (v[t / 2 - 1] + v[t / 2]),
    }
}

/// Majority outputs on `(M, M(tau))` for `k x n` gaussian matrices, against
/// the law `d_H ~ Bin(n, tau / pi)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MajorityStability {
    pub n: usize,
    pub k: usize,
    pub tau: f64,
    /// `tau / pi`.
    pub p: f64,
    pub expected_mean: f64,
    pub expected_variance: f64,
    pub summary: TrialSummary,
    /// `(mean - n p) / std_error`; zero when both vanish.
    pub z_mean: f64,
    /// Sample variance over `n p (1 - p)`.
    pub variance_ratio: f64,
    pub distances: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceRow {
    pub trial: usize,
    pub d_h: usize,
    pub fraction: f64,
}

impl MajorityStability {
    pub fn rows(&self) -> Vec<DistanceRow> {
        self.distances
            .iter()
            .enumerate()
            .map(|(trial, &d)| DistanceRow { trial, d_h: d, fraction: d as f64 / self.n as f64 })
            .collect()
    }
}

pub fn majority_stability_trial(n: usize, k: usize, tau: f64, trials: usize, seed: u64) -> Result<MajorityStability> {
    check_tau(tau)?;
    check_trials(trials)?;
    if n == 0 || k == 0 {
        return Err(Error::Sizing(format!("need n, k >= 1, got n = {n}, k = {k}")));
    }
    let distances = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, &[MAJORITY_KEY, t as u64]);
            let base = DisorderMatrix::<f64>::sample_shape(k, n, Distribution::Gaussian, s, 0);
            let other = DisorderMatrix::<f64>::sample_shape(k, n, Distribution::Gaussian, s, 1);
            let moved = DisorderMatrix::interpolate(&base, &other, tau)?;
            majority_solve(&base).hamming(&majority_solve(&moved))
        })
        .collect::<Result<Vec<usize>>>()?;
    let values: Vec<f64> = distances.iter().map(|&d| d as f64).collect();
    let summary = TrialSummary::from_values("d_hamming", &values, seed, true);
    let p = tau / PI;
    let nf = n as f64;
    let expected_mean = nf * p;
    let expected_variance = nf * p * (1.0 - p);
    let diff = summary.mean - expected_mean;
    let z_mean = if diff == 0.0 { 0.0 } else { diff / summary.std_error };
    let variance_ratio = summary.variance / expected_variance;
    Ok(MajorityStability { n, k, tau, p, expected_mean, expected_variance, summary, z_mean, variance_ratio, distances })
}

/// One row per `(trial, round)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KimRocheRoundRow {
    pub trial: usize,
    pub round: usize,
    pub k_j: usize,
    /// Disagreeing coordinates among those fixed in rounds `0..=round`.
    pub disagreements: usize,
    /// `|I cap I'| / k_j`; one for round 0, which uses every row.
    pub index_agreement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KimRocheRoundStats {
    pub round: usize,
    pub mean_disagreements: f64,
    pub mean_index_agreement: f64,
    pub min_index_agreement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KimRocheStability {
    pub n: usize,
    pub alpha: f64,
    pub tau: f64,
    pub threshold: f64,
    pub schedule: KimRocheSchedule,
    pub rounds: Vec<KimRocheRoundStats>,
    pub rows: Vec<KimRocheRoundRow>,
    /// Final `d_H / n` per trial.
    pub final_fraction: TrialSummary,
    pub median_final: f64,
    /// Fraction of trials with final `d_H / n <= threshold`.
    pub fraction_below: f64,
}

pub fn kim_roche_stability_trial(
    n: usize,
    alpha: f64,
    tau: f64,
    config: KimRocheConfig,
    trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<KimRocheStability> {
    check_tau(tau)?;
    check_trials(trials)?;
    let schedule = KimRocheSchedule::new(n, config)?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, &[KIM_ROCHE_KEY, t as u64]);
            let base = DisorderMatrix::<f64>::sample_replica(n, alpha, Distribution::Gaussian, s, 0)?;
            let other = DisorderMatrix::<f64>::sample_replica(n, alpha, Distribution::Gaussian, s, 1)?;
            let moved = DisorderMatrix::interpolate(&base, &other, tau)?;
            let a = kim_roche_solve(&base, &schedule)?;
            let b = kim_roche_solve(&moved, &schedule)?;
            let mut rows = Vec::with_capacity(a.rounds.len());
            let mut disagreements = 0;
            for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
                disagreements += (ra.start..ra.start + ra.n_j).filter(|&c| a.sigma.get(c) != b.sigma.get(c)).count();
                let index_agreement = if ra.j == 0 || ra.index_set.is_empty() {
                    1.0
                } else {
                    let shared = ra.index_set.iter().filter(|i| rb.index_set.binary_search(i).is_ok()).count();
                    shared as f64 / ra.index_set.len() as f64
                };
                rows.push(KimRocheRoundRow { trial: t, round: ra.j, k_j: ra.k_j, disagreements, index_agreement });
            }
            Ok((rows, disagreements as f64 / n as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<f64> = per_trial.iter().map(|(_, f)| *f).collect();
    let rows: Vec<KimRocheRoundRow> = per_trial.into_iter().flat_map(|(r, _)| r).collect();
    let rounds = (0..schedule.n_blocks.len())
        .map(|j| {
            let of_round: Vec<&KimRocheRoundRow> = rows.iter().filter(|r| r.round == j).collect();
            let t = of_round.len() as f64;
            KimRocheRoundStats {
                round: j,
                mean_disagreements: of_round.iter().map(|r| r.disagreements as f64).sum::<f64>() / t,
                mean_index_agreement: of_round.iter().map(|r| r.index_agreement).sum::<f64>() / t,
                min_index_agreement: of_round.iter().map(|r| r.index_agreement).fold(1.0, f64::min),
            }
        })
        .collect();
    let below = finals.iter().filter(|&&f| f <= threshold).count();
    Ok(KimRocheStability {
        n,
        alpha,
        tau,
        threshold,
        schedule,
        rounds,
        rows,
        median_final: median(&finals),
        fraction_below: below as f64 / trials as f64,
        final_fraction: TrialSummary::from_values("final_hamming_fraction", &finals, seed, true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySolver {
    Majority,
    KimRoche,
    OnlineGreedy,
    OnlineExp,
}

impl std::str::FromStr for TrajectorySolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "majority" => Ok(Self::Majority),
            "kim_roche" => Ok(Self::KimRoche),
            "online_greedy" => Ok(Self::OnlineGreedy),
            "online_exp" => Ok(Self::OnlineExp),
            _ => Err(Error::Format(format!("unknown solver {s:?}"))),
        }
    }
}

/// Overlaps `O_ij(tau_k)` of solver outputs along `M_i(tau) = cos(tau) M +
/// sin(tau) M_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapTrajectory {
    pub t: usize,
    pub q: usize,
    pub n: usize,
    pub solver: TrajectorySolver,
    pub tau_grid: Vec<f64>,
    /// Row-major `T x T x (Q+1)`.
    pub values: Vec<f64>,
    /// Row-major `T x (Q+1)`: `||M_i(tau_k) sigma_i(tau_k)||_inf <= kappa sqrt(n)`.
    pub feasible: Vec<bool>,
    /// Row-major `T x Q`: `d_H(sigma_i(tau_k), sigma_i(tau_{k+1}))`.
    pub step_distances: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapRow {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub tau: f64,
    pub overlap: f64,
}

impl OverlapTrajectory {
    pub fn overlap(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.t + j) * (self.q + 1) + k]
    }

    pub fn is_feasible(&self, i: usize, k: usize) -> bool {
        self.feasible[i * (self.q + 1) + k]
    }

    pub fn step_distance(&self, i: usize, k: usize) -> usize {
        self.step_distances[i * self.q + k]
    }

    /// Mean of `O_ij(tau_k)` over `i < j`; one when `T = 1`.
    pub fn mean_off_diagonal(&self, k: usize) -> f64 {
        let (mut s, mut c) = (0.0, 0usize);
        for i in 0..self.t {
            for j in i + 1..self.t {
                s += self.overlap(i, j, k);
                c += 1;
            }
        }
        if c == 0 {
            1.0
        } else {
            s / c as f64
        }
    }

    /// `max_{i,j} |O_ij(tau_{k+1}) - O_ij(tau_k)|`.
    pub fn max_increment(&self, k: usize) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.t {
            for j in 0..self.t {
                m = m.max((self.overlap(i, j, k + 1) - self.overlap(i, j, k)).abs());
            }
        }
        m
    }

    pub fn feasible_fraction(&self) -> f64 {
        self.feasible.iter().filter(|&&f| f).count() as f64 / self.feasible.len() as f64
    }

    pub fn rows(&self) -> Vec<OverlapRow> {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 0..self.t {
            for j in 0..self.t {
                for (k, &tau) in self.tau_grid.iter().enumerate() {
                    out.push(OverlapRow { i, j, k, tau, overlap: self.overlap(i, j, k) });
                }
            }
        }
        out
    }
}

pub fn overlap_trajectory(
    n: usize,
    alpha: f64,
    kappa: f64,
    solver: TrajectorySolver,
    t: usize,
    q: usize,
    seed: u64,
) -> Result<OverlapTrajectory> {
    check_range("kappa", kappa, kappa > 0.0, "(0, inf)")?;
    if t == 0 || q == 0 {
        return Err(Error::Sizing(format!("need T, Q >= 1, got T = {t}, Q = {q}")));
    }
    let grid = InterpolatedEnsemble::<f64>::trajectory_grid(q);
    let ens = InterpolatedEnsemble::sample(n, alpha, t, grid.clone(), seed)?;
    let schedule = match solver {
        TrajectorySolver::KimRoche => Some(KimRocheSchedule::new(n, KimRocheConfig::default())?),
        _ => None,
    };
    let cells: Vec<(usize, usize)> = (0..t).flat_map(|i| (0..=q).map(move |k| (i, k))).collect();
    let solved = cells
        .par_iter()
        .map(|&(i, k)| {
            let m = ens.at(i, grid[k])?;
            let sigma = match solver {
                TrajectorySolver::Majority => majority_solve(&m),
                TrajectorySolver::KimRoche => kim_roche_solve(&m, schedule.as_ref().expect("built above"))?.sigma,
                TrajectorySolver::OnlineGreedy => online_solve(&m, kappa, OnlineStrategy::GreedyMinimax)?.sigma,
                TrajectorySolver::OnlineExp => online_solve(&m, kappa, OnlineStrategy::ExpPotential)?.sigma,
            };
            let ok = is_solution(&m, &sigma, kappa, Variant::Symmetric)?;
            Ok((sigma, ok))
        })
        .collect::<Result<Vec<(SignVector, bool)>>>()?;
    let sigma = |i: usize, k: usize| &solved[i * (q + 1) + k].0;
    let mut values = vec![0.0; t * t * (q + 1)];
    for i in 0..t {
        for j in 0..t {
            for k in 0..=q {
                values[(i * t + j) * (q + 1) + k] = overlap(sigma(i, k), sigma(j, k))?;
            }
        }
    }
    let mut step_distances = Vec::with_capacity(t * q);
    for i in 0..t {
        for k in 0..q {
            step_distances.push(sigma(i, k).hamming(sigma(i, k + 1))?);
        }
    }
    Ok(OverlapTrajectory {
        t,
        q,
        n,
        solver,
        tau_grid: grid,
        values,
        feasible: solved.iter().map(|s| s.1).collect(),
        step_distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensusMode {
    /// Decide `Xi(delta) != empty` by enumerating both solution sets.
    Exhaustive { n_cap: usize },
    /// Run an online solver on `M` and `M_delta` and test the produced pair.
    Solver(OnlineStrategy),
}

/// Per-trial indicator of a pair `(sigma, sigma')` with both feasible for the
/// symmetric problem at width `kappa` and `d_H <= floor(delta n)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusResult {
    pub n: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub delta: f64,
    pub mode: CensusMode,
    pub summary: TrialSummary,
    pub successes: usize,
    pub wilson: WilsonInterval,
    /// Solver mode: trials whose outputs differ on the first `n - floor(delta n)`
    /// coordinates. Always zero for an online solver.
    pub prefix_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CensusRow {
    pub trial: usize,
    pub nonempty: bool,
    pub prefix_agrees: bool,
}

impl CensusResult {
    pub fn rows(&self) -> Vec<CensusRow> {
        self.summary
            .per_trial
            .iter()
            .flatten()
            .enumerate()
            .map(|(trial, &v)| CensusRow { trial, nonempty: v > 0.0, prefix_agrees: true })
            .collect()
    }
}

/// Every `n`-bit mask of popcount at most `d`.
fn masks_within(n: usize, d: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    let mut frontier = vec![0u64];
    for _ in 0..d {
        let mut next = Vec::new();
        for &m in &frontier {
            let top = 64 - m.leading_zeros() as usize;
            for b in top..n {
                next.push(m | (1u64 << b));
            }
        }
        out.extend_from_slice(&next);
        frontier = next;
    }
    out
}

fn pair_within(a: &FixedBitSet, b: &FixedBitSet, masks: &[u64]) -> bool {
    a.ones().any(|x| masks.iter().any(|&m| b.contains(x ^ m as usize)))
}

pub fn online_failure_census(
    n: usize,
    alpha: f64,
    kappa: f64,
    delta: f64,
    trials: usize,
    seed: u64,
    mode: CensusMode,
) -> Result<CensusResult> {
    check_range("kappa", kappa, kappa > 0.0, "(0, inf)")?;
    check_range("delta", delta, delta > 0.0 && delta < 0.5, "(0, 1/2)")?;
    check_trials(trials)?;
    let radius = (delta * n as f64).floor() as usize;
    if radius == 0 {
        return Err(Error::Sizing(format!("floor(delta * n) = 0 for delta = {delta}, n = {n}")));
    }
    if let CensusMode::Exhaustive { n_cap } = mode {
        if n > n_cap {
            return Err(Error::CapExceeded { n, cap: n_cap });
        }
    }
    let masks = match mode {
        CensusMode::Exhaustive { .. } => masks_within(n, radius),
        CensusMode::Solver(_) => Vec::new(),
    };
    let keep = n - radius;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, &[CENSUS_KEY, t as u64]);
            let m = DisorderMatrix::<f64>::sample_replica(n, alpha, Distribution::Gaussian, s, 0)?;
            let md = m.resample_columns(delta, derive_seed(s, &[1]))?;
            match mode {
                CensusMode::Exhaustive { n_cap } => {
                    let a = solution_set(&m, kappa, Variant::Symmetric, n_cap)?;
                    let b = solution_set(&md, kappa, Variant::Symmetric, n_cap)?;
                    Ok((pair_within(&a, &b, &masks), true))
                }
                CensusMode::Solver(strategy) => {
                    let a = online_solve(&m, kappa, strategy)?.sigma;
                    let b = online_solve(&md, kappa, strategy)?.sigma;
                    let prefix = (0..keep).all(|c| a.get(c) == b.get(c));
                    let both = is_solution(&m, &a, kappa, Variant::Symmetric)?
                        && is_solution(&md, &b, kappa, Variant::Symmetric)?
                        && a.hamming(&b)? <= radius;
                    Ok((both, prefix))
                }
            }
        })
        .collect::<Result<Vec<(bool, bool)>>>()?;
    let values: Vec<f64> = outcomes.iter().map(|&(x, _)| if x { 1.0 } else { 0.0 }).collect();
    let successes = outcomes.iter().filter(|o| o.0).count();
    Ok(CensusResult {
        n,
        alpha,
        kappa,
        delta,
        mode,
        summary: TrialSummary::from_values("xi_nonempty", &values, seed, true),
        successes,
        wilson: wilson_interval(successes, trials, Z95),
        prefix_violations: outcomes.iter().filter(|o| !o.1).count(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub n: usize,
    pub p_reference: f64,
    pub p_alternative: f64,
    /// `p_reference - p_alternative`.
    pub gap: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Weighted least-squares fit of `ln|gap|` on `ln n`, weights
/// `(gap / se)^2` from the delta method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniversalityResult {
    pub kappa: f64,
    pub m: usize,
    pub beta: f64,
    pub trials: usize,
    pub reference: Distribution,
    pub alternative: Distribution,
    pub rows: Vec<GapRow>,
    pub slope: Option<SlopeFit>,
    /// `|gap|` point estimates nonincreasing in `n`.
    pub monotone: bool,
}

impl UniversalityResult {
    /// Monotone point estimates, or a slope interval meeting `[lo, hi]`.
    pub fn consistent_with_rate(&self, lo: f64, hi: f64) -> bool {
        self.monotone || self.slope.as_ref().is_some_and(|s| s.ci_lo <= hi && s.ci_hi >= lo)
    }
}

/// `m` sign vectors with pairwise overlap `beta`: vector `i` flips its own
/// disjoint block of `(1 - beta) n / 4` coordinates. Returns the block size.
fn block_size(n: usize, m: usize, beta: f64) -> Result<usize> {
    check_range("beta", beta, (-1.0..=1.0).contains(&beta), "[-1, 1]")?;
    if m <= 1 {
        return Ok(0);
    }
    let s = (1.0 - beta) * n as f64 / 4.0;
    let r = s.round();
    if (s - r).abs() > 1e-9 || r as usize * m > n {
        return Err(Error::Unsupported(format!(
            "overlap beta = {beta} is not realisable by {m} sign vectors at n = {n}"
        )));
    }
    Ok(r as usize)
}

fn fit_slope(rows: &[GapRow]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.gap != 0.0 && r.std_error > 0.0)
        .map(|r| ((r.n as f64).ln(), r.gap.abs().ln(), (r.gap / r.std_error).powi(2)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let se = (1.0 / sxx).sqrt();
    Some(SlopeFit { slope, std_error: se, ci_lo: slope - Z95 * se, ci_hi: slope + Z95 * se, points: pts.len() })
}

/// Estimates `P(|<sigma_i, X>| <= kappa sqrt(n) for all i)` under two laws of
/// `X`, drawn from independent streams.
#[allow(clippy::too_many_arguments)]
pub fn universality_gap(
    n_list: &[usize],
    kappa: f64,
    m: usize,
    beta: f64,
    trials: usize,
    seed: u64,
    reference: Distribution,
    alternative: Distribution,
) -> Result<UniversalityResult> {
    check_range("kappa", kappa, kappa > 0.0, "(0, inf)")?;
    check_trials(trials)?;
    if m == 0 {
        return Err(Error::Sizing("need m >= 1".into()));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let block = block_size(n, m, beta)?;
        let bound = kappa * (n as f64).sqrt();
        let estimate = |side: u64, dist: Distribution| -> f64 {
            let hits = (0..trials)
                .into_par_iter()
                .filter(|&t| {
                    let mut rng = stream(seed, &[UNIVERSALITY_KEY, n as u64, side, t as u64]);
                    let mut x = vec![0.0f64; n];
                    dist.fill(&mut rng, &mut x);
                    let total: f64 = x.iter().sum();
                    (0..m).all(|i| {
                        let flipped: f64 = x[i * block..(i + 1) * block].iter().sum();
                        (total - 2.0 * flipped).abs() <= bound
                    })
                })
                .count();
            hits as f64 / trials as f64
        };
        let p_reference = estimate(0, reference);
        let p_alternative = estimate(1, alternative);
        let t = trials as f64;
        let gap = p_reference - p_alternative;
        let std_error = (p_reference * (1.0 - p_reference) / t + p_alternative * (1.0 - p_alternative) / t).sqrt();
        rows.push(GapRow {
            n,
            p_reference,
            p_alternative,
            gap,
            std_error,
            ci_lo: gap - Z95 * std_error,
            ci_hi: gap + Z95 * std_error,
        });
    }
    let mut sorted: Vec<&GapRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.n);
    let monotone = sorted.windows(2).all(|w| w[1].gap.abs() <= w[0].gap.abs());
    Ok(UniversalityResult {
        kappa,
        m,
        beta,
        trials,
        reference,
        alternative,
        slope: fit_slope(&rows),
        rows,
        monotone,
    })
}

/// The constants ruling out stable algorithms: `C = eta^2 / 1600`,
/// `Q = 4800 L pi sqrt(alpha) / eta^2`, `T = 2^(2^(4 m Q log2 Q))`, the
/// correlation `cos(pi / 2Q)` and the failure levels `1 / (9 (Q+1) T)`,
/// `1 / (9 Q (T+1))`. `T` is carried through its iterated logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableHardness {
    pub eta: f64,
    pub alpha: f64,
    pub l: f64,
    pub m: usize,
    pub c: f64,
    pub q: f64,
    /// `ceil(Q)`, the number of interpolation steps.
    pub q_steps: u64,
    pub rho: f64,
    pub log2_log2_t: f64,
    /// `2^log2_log2_t`; infinite once it leaves the f64 range.
    pub log2_t: f64,
    pub log2_p_f: f64,
    pub log2_p_st: f64,
}

pub fn stable_hardness_parameters(eta: f64, alpha: f64, l: f64, m: usize) -> Result<StableHardness> {
    check_range("eta", eta, eta > 0.0 && eta < 1.0, "(0, 1)")?;
    check_range("alpha", alpha, alpha > 0.0, "(0, inf)")?;
    check_range("L", l, l > 0.0, "(0, inf)")?;
    if m == 0 {
        return Err(Error::Sizing("need m >= 1".into()));
    }
    let eta2 = eta * eta;
    let c = eta2 / 1600.0;
    let q = 4800.0 * l * PI * alpha.sqrt() / eta2;
    let log2_log2_t = 4.0 * m as f64 * q * q.log2();
    let log2_t = log2_log2_t.exp2();
    let log2_9 = 9f64.log2();
    // log2(T + 1) = log2 T + log2(1 + 2^-log2 T).
    let log2_t_plus_1 = log2_t + (-log2_t).exp2().ln_1p() / std::f64::consts::LN_2;
    Ok(StableHardness {
        eta,
        alpha,
        l,
        m,
        c,
        q,
        q_steps: q.ceil() as u64,
        rho: (PI / (2.0 * q)).cos(),
        log2_log2_t,
        log2_t,
        log2_p_f: -log2_9 - (q + 1.0).log2() - log2_t,
        log2_p_st: -log2_9 - q.log2() - log2_t_plus_1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn summary_statistics() {
        let s = TrialSummary::from_values("x", &[1.0, 2.0, 3.0, 4.0], 9, true);
        assert_eq!(s.mean, 2.5);
        assert_relative_eq!(s.variance, 5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.std_error, (5.0 / 12.0f64).sqrt(), epsilon = 1e-15);
        assert_eq!(s.per_trial.as_ref().unwrap().len(), 4);
        assert!(TrialSummary::from_values("x", &[1.0], 0, false).per_trial.is_none());
    }

    #[test]
    fn wilson_reference_values() {
        // 3 of 10 at z = 1.96: [0.1078, 0.6032].
        let w = wilson_interval(3, 10, 1.96);
        assert!((w.lo - 0.1078).abs() < 1e-4 && (w.hi - 0.6032).abs() < 1e-4, "{w:?}");
        let z = wilson_interval(0, 50, Z95);
        assert_eq!(z.lo, 0.0);
        assert!(z.hi > 0.0 && z.hi < 0.1);
    }

    proptest! {
        #[test]
        fn wilson_is_well_formed(t in 1usize..500, frac in 0.0f64..=1.0) {
            let s = ((t as f64) * frac).floor() as usize;
            let w = wilson_interval(s, t, Z95);
            prop_assert!(0.0 <= w.lo && w.lo <= w.estimate && w.estimate <= w.hi && w.hi <= 1.0);
        }
    }

    #[test]
    fn majority_at_right_angle_is_a_fair_coin() {
        let r = majority_stability_trial(2000, 21, FRAC_PI_2, 40, 3).unwrap();
        let sigma = (2000.0 * 0.25f64).sqrt() / 40f64.sqrt();
        assert!((r.summary.mean - 1000.0).abs() < 3.0 * sigma, "{}", r.summary.mean);
        assert!(r.distances.iter().all(|&d| d <= 2000));
    }

    #[test]
    fn majority_tiny_angle_is_frozen() {
        let r = majority_stability_trial(2000, 21, 1e-9, 20, 4).unwrap();
        assert!(r.distances.iter().all(|&d| (d as f64) / 2000.0 < 1e-3));
    }

    #[test]
    fn majority_matches_binomial_law() {
        let (n, tau, trials) = (10_000, 0.1, 200);
        let r = majority_stability_trial(n, 100, tau, trials, 11).unwrap();
        let p = tau / PI;
        let band = 3.0 * (n as f64 * p * (1.0 - p)).sqrt() / (trials as f64).sqrt();
        assert!((r.summary.mean - n as f64 * p).abs() < band, "{} vs {}", r.summary.mean, n as f64 * p);
    }

    #[test]
    fn majority_is_thread_count_independent() {
        let a = majority_stability_trial(500, 11, 0.3, 16, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| majority_stability_trial(500, 11, 0.3, 16, 5).unwrap());
        assert_eq!(a.distances, b.distances);
    }

    #[test]
    fn kim_roche_zero_angle_agrees_everywhere() {
        let r = kim_roche_stability_trial(2000, 0.01, 0.0, KimRocheConfig::default(), 5, 1, 0.05).unwrap();
        assert!(r.rows.iter().all(|row| row.disagreements == 0 && row.index_agreement == 1.0));
        assert_eq!(r.median_final, 0.0);
        assert_eq!(r.fraction_below, 1.0);
    }

    #[test]
    fn kim_roche_index_agreement_is_a_fraction() {
        let r = kim_roche_stability_trial(5000, 0.01, 0.4, KimRocheConfig::default(), 6, 2, 0.05).unwrap();
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.index_agreement)));
        assert_eq!(r.rows.len(), 6 * r.schedule.n_blocks.len());
        assert!(r.rows.iter().all(|row| row.disagreements <= 5000));
    }

    #[test]
    fn trajectory_structure() {
        let tr = overlap_trajectory(400, 0.05, 1.0, TrajectorySolver::Majority, 3, 4, 8).unwrap();
        for i in 0..3 {
            for k in 0..=4 {
                assert_eq!(tr.overlap(i, i, k), 1.0);
            }
            for j in 0..3 {
                assert_eq!(tr.overlap(i, j, 0), 1.0);
                for k in 0..=4 {
                    assert_eq!(tr.overlap(i, j, k), tr.overlap(j, i, k));
                    assert!((-1.0..=1.0).contains(&tr.overlap(i, j, k)));
                }
            }
        }
        assert_eq!(tr.rows().len(), 3 * 3 * 5);
        for solver in [TrajectorySolver::KimRoche, TrajectorySolver::OnlineGreedy, TrajectorySolver::OnlineExp] {
            let tr = overlap_trajectory(300, 0.05, 1.0, solver, 2, 2, 1).unwrap();
            assert_eq!(tr.overlap(0, 1, 0), 1.0);
        }
    }

    #[test]
    fn trajectory_endpoint_decorrelates() {
        let tr = overlap_trajectory(10_000, 0.01, 1.0, TrajectorySolver::Majority, 6, 4, 21).unwrap();
        assert!(tr.mean_off_diagonal(4).abs() < 0.05, "{}", tr.mean_off_diagonal(4));
    }

    #[test]
    fn trajectory_increments_follow_step_law() {
        let (n, q) = (10_000, 8);
        let tr = overlap_trajectory(n, 0.01, 1.0, TrajectorySolver::Majority, 4, q, 5).unwrap();
        let p = FRAC_PI_2 / q as f64 / PI;
        let nf = n as f64;
        let per_step = (nf * p + 6.0 * (nf * p * (1.0 - p)).sqrt()) / nf;
        for k in 0..q {
            assert!(tr.max_increment(k) <= 4.0 * per_step, "step {k}: {}", tr.max_increment(k));
            for i in 0..4 {
                assert!((tr.step_distance(i, k) as f64) / nf <= per_step);
            }
        }
    }

    #[test]
    fn census_rejects_empty_radius() {
        let r = online_failure_census(12, 0.5, 1.0, 0.05, 1, 0, CensusMode::Exhaustive { n_cap: 14 });
        assert!(matches!(r, Err(Error::Sizing(_))));
        let r = online_failure_census(16, 0.5, 1.0, 0.25, 1, 0, CensusMode::Exhaustive { n_cap: 14 });
        assert!(matches!(r, Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn masks_enumerate_small_balls() {
        let m = masks_within(6, 2);
        assert_eq!(m.len(), 1 + 6 + 15);
        assert!(m.iter().all(|x| x.count_ones() <= 2 && *x < 64));
        let mut s = m.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), m.len());
    }

    #[test]
    fn census_matches_brute_force_pairs() {
        let (n, delta, kappa) = (8, 0.25, 0.6);
        let r = online_failure_census(n, 1.0, kappa, delta, 12, 3, CensusMode::Exhaustive { n_cap: 14 }).unwrap();
        for t in 0..12 {
            let s = derive_seed(3, &[CENSUS_KEY, t as u64]);
            let m = DisorderMatrix::<f64>::sample_replica(n, 1.0, Distribution::Gaussian, s, 0).unwrap();
            let md = m.resample_columns(delta, derive_seed(s, &[1])).unwrap();
            let all: Vec<SignVector> = (0..1u64 << n).map(|c| SignVector::from_code(n, c)).collect();
            let a: Vec<&SignVector> = all.iter().filter(|x| is_solution(&m, x, kappa, Variant::Symmetric).unwrap()).collect();
            let b: Vec<&SignVector> = all.iter().filter(|x| is_solution(&md, x, kappa, Variant::Symmetric).unwrap()).collect();
            let want = a.iter().any(|x| b.iter().any(|y| x.hamming(y).unwrap() <= 2));
            assert_eq!(r.summary.per_trial.as_ref().unwrap()[t] > 0.0, want, "trial {t}");
        }
    }

    #[test]
    fn census_reports_wilson_interval() {
        let r = online_failure_census(12, 0.5, 1.0, 0.25, 30, 7, CensusMode::Exhaustive { n_cap: 14 }).unwrap();
        assert!(r.wilson.lo <= r.wilson.estimate && r.wilson.estimate <= r.wilson.hi);
        assert_eq!(r.wilson.estimate, r.successes as f64 / 30.0);
    }

    #[test]
    fn census_decreases_with_density() {
        let p: Vec<f64> = [1.0, 1.4, 1.8]
            .iter()
            .map(|&a| online_failure_census(12, a, 1.0, 0.25, 200, 13, CensusMode::Exhaustive { n_cap: 14 }).unwrap().summary.mean)
            .collect();
        assert!(p[0] >= p[1] && p[1] >= p[2], "{p:?}");
    }

    #[test]
    fn census_solver_prefixes_agree() {
        for strategy in [OnlineStrategy::GreedyMinimax, OnlineStrategy::ExpPotential] {
            let r = online_failure_census(200, 0.1, 1.0, 0.2, 20, 4, CensusMode::Solver(strategy)).unwrap();
            assert_eq!(r.prefix_violations, 0);
        }
    }

    #[test]
    fn universality_same_law_has_no_gap() {
        let r = universality_gap(&[100], 0.6745, 1, 0.0, 20_000, 2, Distribution::Gaussian, Distribution::Gaussian).unwrap();
        let row = &r.rows[0];
        assert!(row.gap.abs() <= 2.0 * row.std_error, "{row:?}");
        assert!((row.p_reference - 0.5).abs() < 0.02);
    }

    #[test]
    fn universality_wide_box_saturates() {
        let r = universality_gap(&[64], 1e6, 3, 0.5, 200, 2, Distribution::Gaussian, Distribution::Rademacher).unwrap();
        assert_eq!((r.rows[0].p_reference, r.rows[0].p_alternative, r.rows[0].gap), (1.0, 1.0, 0.0));
    }

    #[test]
    fn universality_rejects_unrealisable_overlap() {
        let r = universality_gap(&[10], 1.0, 2, 0.3, 10, 0, Distribution::Gaussian, Distribution::Rademacher);
        assert!(matches!(r, Err(ref e) if e.is_domain()));
        assert!(block_size(100, 3, 0.5).is_err());
        assert_eq!(block_size(100, 3, 0.52).unwrap(), 12);
    }

    #[test]
    fn universality_blocks_realise_the_overlap() {
        let (n, m, beta) = (40, 3, 0.5);
        let b = block_size(n, m, beta).unwrap();
        let vecs: Vec<Vec<i64>> =
            (0..m).map(|i| (0..n).map(|c| if c / b == i && c < m * b { -1 } else { 1 }).collect()).collect();
        for i in 0..m {
            for j in i + 1..m {
                let dot: i64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                assert_eq!(dot as f64 / n as f64, beta);
            }
        }
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let rows: Vec<GapRow> = [100usize, 400, 1600]
            .iter()
            .map(|&n| {
                let gap = 0.2 / (n as f64).sqrt();
                GapRow { n, p_reference: 0.5, p_alternative: 0.5 - gap, gap, std_error: gap / 10.0, ci_lo: 0.0, ci_hi: 0.0 }
            })
            .collect();
        let f = fit_slope(&rows).unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert!(f.ci_lo < -0.5 && f.ci_hi > -0.5);
    }

    #[test]
    fn stable_hardness_constants() {
        let h = stable_hardness_parameters(0.1, 0.01, 1.0, 2).unwrap();
        assert_relative_eq!(h.c, 0.01 / 1600.0, max_relative = 1e-15);
        let q = 4800.0 * PI * 0.1 / 0.01;
        assert_relative_eq!(h.q, q, max_relative = 1e-14);
        assert_eq!(h.q_steps, q.ceil() as u64);
        assert_relative_eq!(h.rho, (PI / (2.0 * q)).cos(), max_relative = 1e-15);
        assert_relative_eq!(h.log2_log2_t, 8.0 * q * q.log2(), max_relative = 1e-14);
        assert!(h.log2_t.is_infinite() && h.log2_p_f == f64::NEG_INFINITY);
    }

    #[test]
    fn stable_hardness_small_q_levels() {
        // Q < 1 keeps T small enough to evaluate directly.
        let h = stable_hardness_parameters(0.9, 1e-6, 1e-4, 1).unwrap();
        let t = h.log2_t.exp2();
        assert_relative_eq!(h.log2_p_f, -(9.0 * (h.q + 1.0) * t).log2(), max_relative = 1e-12);
        assert_relative_eq!(h.log2_p_st, -(9.0 * h.q * (t + 1.0)).log2(), max_relative = 1e-12);
        assert!(stable_hardness_parameters(0.0, 1.0, 1.0, 1).is_err());
    }
}

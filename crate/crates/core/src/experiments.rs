//! Monte Carlo study of the mean-square error of `U^N_t − U_t` over grids of
//! horizons and ensemble sizes, and rate summaries of the results.
//!
//! Each repetition draws one truth path, runs the Kalman–Bucy reference along
//! it, and runs one filter per ensemble size on the same observations. Errors
//! are recorded at every requested horizon during a single pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enkbf::{EnsembleFilter, FilterVariant, Variant};
use crate::error::{Error, Result};
use crate::kalman_reference::KalmanBucyFilter;
use crate::models::{grid_steps, simulate_truth, LinearGaussianModel};
use crate::num::Real;
use crate::seeding::{indexed_seed, sub_seed};
use crate::sum::exact_sum;

pub const DEFAULT_REPETITIONS: usize = 100;

#[derive(Debug, Clone)]
pub struct MseStudyConfig<T: Real> {
    pub variant: FilterVariant<T>,
    pub horizons: Vec<T>,
    pub particles: Vec<usize>,
    pub level: u32,
    pub repetitions: usize,
    pub seed: u64,
    pub model: LinearGaussianModel<T>,
}

impl<T: Real> MseStudyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(Error::Config("an MSE study needs at least 2 repetitions".into()));
        }
        if self.horizons.is_empty() || self.particles.is_empty() {
            return Err(Error::Config("horizon and ensemble-size grids must be non-empty".into()));
        }
        if let Some(&n) = self.particles.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("ensemble size {n} is below 2")));
        }
        for &h in &self.horizons {
            grid_steps(h, self.level)?;
        }
        Ok(())
    }

    /// Seed of the truth path of repetition `rep`.
    pub fn truth_seed(&self, rep: usize) -> u64 {
        indexed_seed(sub_seed(self.seed, "truth"), rep as u64)
    }

    /// Seed of the filter with `n` particles in repetition `rep`.
    pub fn filter_seed(&self, rep: usize, n: usize) -> u64 {
        indexed_seed(indexed_seed(sub_seed(self.seed, "filter"), rep as u64), n as u64)
    }

    fn checkpoints(&self) -> Result<Vec<usize>> {
        self.horizons.iter().map(|&h| grid_steps(h, self.level)).collect()
    }
}

/// Signed errors `U^N_t − U_t` of one repetition, indexed `[particle idx][horizon idx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionErrors<T> {
    pub rep: usize,
    pub errors: Vec<Vec<T>>,
}

/// Runs repetition `rep` of the study up to the largest horizon.
pub fn run_repetition<T: Real>(cfg: &MseStudyConfig<T>, rep: usize) -> Result<RepetitionErrors<T>> {
    run_repetition_until(cfg, rep, None)
}

/// Like [`run_repetition`], but stops at `horizon_limit` (horizons beyond it are
/// reported as NaN).
pub fn run_repetition_until<T: Real>(
    cfg: &MseStudyConfig<T>,
    rep: usize,
    horizon_limit: Option<T>,
) -> Result<RepetitionErrors<T>> {
    let checkpoints = cfg.checkpoints()?;
    let mut last = checkpoints.iter().copied().max().unwrap_or(0);
    if let Some(limit) = horizon_limit {
        last = last.min(grid_steps(limit, cfg.level)?);
    }
    let horizon = T::count(last) * crate::models::grid_dt::<T>(cfg.level);
    let obs = simulate_truth(&cfg.model, horizon, cfg.level, cfg.truth_seed(rep))?;
    let dt = obs.dt();
    let mut dy = vec![T::zero(); obs.obs_dim()];
    let mut dy_vec = nalgebra::DVector::zeros(obs.obs_dim());

    let mut reference = vec![T::lit(f64::NAN); checkpoints.len()];
    let mut kb = KalmanBucyFilter::new(&cfg.model);
    for k in 0..last {
        obs.increment_into(k, dy_vec.as_mut_slice());
        kb.step(&dy_vec, dt)?;
        for (slot, &c) in reference.iter_mut().zip(&checkpoints) {
            if c == k + 1 {
                *slot = kb.log_nc().value;
            }
        }
    }

    let mut errors = Vec::with_capacity(cfg.particles.len());
    for &n in &cfg.particles {
        let mut filter =
            EnsembleFilter::from_initial_law(&cfg.model, cfg.variant, n, cfg.filter_seed(rep, n))?;
        let mut row = vec![T::lit(f64::NAN); checkpoints.len()];
        for k in 0..last {
            obs.increment_into(k, &mut dy);
            filter.advance(&dy, dt).map_err(|e| {
                e.context(format!(
                    "t = {}, N = {n}, repetition {rep}",
                    obs.time(k).to_f64_lossy()
                ))
            })?;
            for ((slot, &c), &u) in row.iter_mut().zip(&checkpoints).zip(&reference) {
                if c == k + 1 {
                    *slot = filter.log_nc().value - u;
                }
            }
        }
        errors.push(row);
    }
    Ok(RepetitionErrors { rep, errors })
}

/// One `(t, N)` cell of an MSE study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub variant: Variant,
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub mse: f64,
    /// `mse / (t/N)` for F1/F2, `mse · N` for F3.
    pub rate: f64,
    /// Standard error of `mse`.
    pub stderr: f64,
    /// Mean of `U^N_t − U_t`.
    pub bias: f64,
    pub bias_stderr: f64,
}

pub fn rate_of(variant: Variant, mse: f64, t: f64, n: usize) -> f64 {
    match variant {
        Variant::F1 | Variant::F2 => mse / (t / n as f64),
        Variant::F3 => mse * n as f64,
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = exact_sum(xs.iter().copied()) / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = exact_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
    (mean, (ss / (m - 1.0)).sqrt() / m.sqrt())
}

/// Aggregates repetitions into one row per `(t, N)`, ordered by `N` then `t`.
/// NaN errors (horizons a repetition did not reach) are skipped.
pub fn aggregate<T: Real>(cfg: &MseStudyConfig<T>, reps: &[RepetitionErrors<T>]) -> Vec<MseRow> {
    let variant = cfg.variant.tag();
    let mut rows = Vec::new();
    for (ni, &n) in cfg.particles.iter().enumerate() {
        for (hi, &h) in cfg.horizons.iter().enumerate() {
            let errs: Vec<f64> = reps
                .iter()
                .map(|r| r.errors[ni][hi].to_f64_lossy())
                .filter(|e| !e.is_nan())
                .collect();
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let (mse, stderr) = mean_and_stderr(&sq);
            let (bias, bias_stderr) = mean_and_stderr(&errs);
            let t = h.to_f64_lossy();
            rows.push(MseRow {
                variant,
                t,
                n,
                m: errs.len(),
                mse,
                rate: rate_of(variant, mse, t, n),
                stderr,
                bias,
                bias_stderr,
            });
        }
    }
    rows
}

/// Runs all repetitions (in parallel on the current rayon pool) and aggregates.
pub fn mse_study<T: Real>(cfg: &MseStudyConfig<T>) -> Result<Vec<MseRow>> {
    cfg.validate()?;
    let reps = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg, &reps))
}

/// Through-origin least-squares fit of `mse` against `t/N` (F1/F2) or `1/N` (F3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub variant: Variant,
    pub constant: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl RateSummary {
    /// `max_ratio / min_ratio`.
    pub fn spread(&self) -> f64 {
        self.max_ratio / self.min_ratio
    }
}

pub fn rate_summary(rows: &[MseRow]) -> Result<RateSummary> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Contract("rate summary of an empty row set".into()))?;
    if rows.iter().any(|r| r.variant != first.variant) {
        return Err(Error::Contract("rate summary over mixed filter variants".into()));
    }
    let x = |r: &MseRow| match r.variant {
        Variant::F1 | Variant::F2 => r.t / r.n as f64,
        Variant::F3 => 1.0 / r.n as f64,
    };
    let sxy = exact_sum(rows.iter().map(|r| x(r) * r.mse));
    let sxx = exact_sum(rows.iter().map(|r| x(r) * x(r)));
    let (min_ratio, max_ratio) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.rate), hi.max(r.rate))
    });
    Ok(RateSummary {
        variant: first.variant,
        constant: sxy / sxx,
        min_ratio,
        max_ratio,
    })
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reference MSE values for the scalar benchmark, used for side-by-side reports.
pub mod benchmark_tables {
    use super::*;

    /// MSE by horizon (rows) and labelled ensemble size (columns).
    #[derive(Debug, Clone, Copy)]
    pub struct Table {
        pub variant: Variant,
        pub horizons: &'static [f64],
        pub labels: &'static [usize],
        pub mse: &'static [&'static [f64]],
    }

    const HORIZONS: [f64; 8] = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0];

    pub const F1: Table = Table {
        variant: Variant::F1,
        horizons: &HORIZONS,
        labels: &[1000, 500, 250],
        mse: &[
            &[2.194e-4, 5.404e-4, 8.903e-4],
            &[5.483e-4, 1.442e-3, 3.082e-3],
            &[1.085e-3, 2.901e-3, 4.442e-3],
            &[2.283e-3, 5.047e-3, 1.017e-2],
            &[4.894e-3, 8.579e-3, 1.985e-2],
            &[9.716e-3, 2.039e-2, 2.904e-2],
            &[1.974e-2, 3.504e-2, 7.835e-2],
            &[3.571e-2, 7.087e-2, 1.599e-1],
        ],
    };

    pub const F2: Table = Table {
        variant: Variant::F2,
        horizons: &HORIZONS,
        labels: &[1000, 500, 250],
        mse: &[
            &[1.137e-3, 5.127e-4, 3.317e-4],
            &[2.157e-3, 1.128e-3, 8.892e-4],
            &[4.601e-3, 2.708e-3, 1.260e-3],
            &[9.777e-3, 5.250e-3, 2.436e-3],
            &[1.979e-2, 9.949e-3, 4.639e-3],
            &[4.901e-2, 1.595e-2, 8.895e-3],
            &[9.593e-2, 3.001e-2, 1.925e-2],
            &[1.744e-1, 5.415e-2, 3.635e-2],
        ],
    };

    /// F3 at `t = 100`; one row per ensemble size.
    pub const F3_SIZES: [usize; 8] = [50, 100, 200, 400, 800, 1600, 3200, 6400];
    pub const F3_MSE: [f64; 8] = [
        1.073e-5, 4.951e-6, 2.867e-6, 1.492e-6, 8.157e-7, 3.119e-7, 1.773e-7, 6.344e-8,
    ];

    impl Table {
        /// Ensemble size of column `j`, with the column labels reversed when `transposed`.
        pub fn size(&self, j: usize, transposed: bool) -> usize {
            if transposed {
                self.labels[self.labels.len() - 1 - j]
            } else {
                self.labels[j]
            }
        }

        /// `mse / (t/N)` for every cell under the chosen column labelling.
        pub fn rates(&self, transposed: bool) -> Vec<Vec<f64>> {
            self.mse
                .iter()
                .zip(self.horizons)
                .map(|(row, &t)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, &m)| rate_of(self.variant, m, t, self.size(j, transposed)))
                        .collect()
                })
                .collect()
        }

        pub fn lookup(&self, t: f64, n: usize, transposed: bool) -> Option<f64> {
            let i = self.horizons.iter().position(|&h| h == t)?;
            let j = (0..self.labels.len()).find(|&j| self.size(j, transposed) == n)?;
            Some(self.mse[i][j])
        }

        /// Mean absolute log-ratio between `rows` and the table over shared cells.
        pub fn log_discrepancy(&self, rows: &[MseRow], transposed: bool) -> Option<f64> {
            let logs: Vec<f64> = rows
                .iter()
                .filter_map(|r| {
                    self.lookup(r.t, r.n, transposed)
                        .map(|m| (r.mse / m).ln().abs())
                })
                .collect();
            (!logs.is_empty()).then(|| logs.iter().sum::<f64>() / logs.len() as f64)
        }
    }
}

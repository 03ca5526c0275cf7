//! Sampling-based estimators: the threshold sampler for the reward table and
//! the time-limited sampler for the state distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_reward, RewardTable, SystemConfig};

/// Estimated mean rewards together with the sampling effort behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub table: RewardTable,
    /// Samples per `(state, allocation)`.
    pub counts: Vec<Vec<u64>>,
    /// Declared error level.
    pub delta_r: f64,
    /// Slots spent learning.
    pub learn_time: u64,
}

impl RewardEstimate {
    /// The true table, available at no cost.
    pub fn exact(cfg: &SystemConfig) -> Self {
        Self {
            table: cfg.reward_mean().clone(),
            counts: zero_counts(cfg),
            delta_r: 0.0,
            learn_time: 0,
        }
    }

    /// `max |r̂ − r|` against the instance's true table.
    pub fn realized_error(&self, cfg: &SystemConfig) -> f64 {
        self.table.max_abs_diff(cfg.reward_mean())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub probs: Vec<f64>,
    pub delta_z: f64,
    pub learn_time: u64,
}

impl StateEstimate {
    pub fn exact(cfg: &SystemConfig) -> Self {
        Self {
            probs: cfg.probs(),
            delta_z: 0.0,
            learn_time: 0,
        }
    }

    pub fn realized_error(&self, cfg: &SystemConfig) -> f64 {
        self.probs
            .iter()
            .zip(cfg.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn zero_counts(cfg: &SystemConfig) -> Vec<Vec<u64>> {
    (0..cfg.num_states())
        .map(|k| vec![0; cfg.actions(k).len()])
        .collect()
}

/// `ln(s)/√s`, the error level both samplers declare after `s` samples.
pub fn declared_delta(samples: u64) -> f64 {
    let s = samples as f64;
    s.ln() / s.sqrt()
}

/// Threshold-based sampling of the reward table.
///
/// Each slot draws a state and plays its least-sampled allocation (first in
/// list order on ties) at full nominal service, until every pair has been
/// played `s_th` times. Estimates are the sample means.
pub fn run_tbs<R: Rng + ?Sized>(cfg: &SystemConfig, s_th: u64, rng: &mut R) -> Result<RewardEstimate> {
    if s_th == 0 {
        return Err(Error::Config("s_th must be at least 1".into()));
    }
    if let Some(k) = (0..cfg.num_states())
        .find(|&k| cfg.state(k).prob <= 0.0 && !cfg.actions(k).is_empty())
    {
        return Err(Error::UnreachableState { state: k });
    }
    let mut counts = zero_counts(cfg);
    let mut sums: Vec<Vec<Vec<f64>>> = (0..cfg.num_states())
        .map(|k| vec![vec![0.0; cfg.n_tasks()]; cfg.actions(k).len()])
        .collect();
    let mut pending: usize = counts.iter().map(Vec::len).sum();
    let mut t: u64 = 0;
    while pending > 0 {
        t += 1;
        let k = cfg.draw_state(rng);
        let Some(j) = (0..counts[k].len()).min_by_key(|&j| counts[k][j]) else {
            continue;
        };
        let kappa = sample_reward(rng, cfg, k, j, &cfg.action(k, j).service)?;
        sums[k][j].iter_mut().zip(&kappa).for_each(|(s, x)| *s += x);
        counts[k][j] += 1;
        if counts[k][j] == s_th {
            pending -= 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(&counts)
        .map(|(rows, c)| {
            rows.into_iter()
                .zip(c)
                .map(|(row, &c)| row.into_iter().map(|s| s / c as f64).collect())
                .collect()
        })
        .collect();
    Ok(RewardEstimate {
        table: RewardTable::new(values),
        counts,
        delta_r: declared_delta(s_th),
        learn_time: t,
    })
}

/// Time-limited sampling of the state distribution: empirical frequencies
/// over exactly `t_th` draws.
pub fn run_tls<R: Rng + ?Sized>(cfg: &SystemConfig, t_th: u64, rng: &mut R) -> Result<StateEstimate> {
    if t_th == 0 {
        return Err(Error::Config("T_th must be at least 1".into()));
    }
    let mut hits = vec![0u64; cfg.num_states()];
    for _ in 0..t_th {
        hits[cfg.draw_state(rng)] += 1;
    }
    Ok(StateEstimate {
        probs: hits.iter().map(|&h| h as f64 / t_th as f64).collect(),
        delta_z: declared_delta(t_th),
        learn_time: t_th,
    })
}

/// True table with `±δ_r` added to every entry under independent fair signs,
/// clipped to `[0, r_max]`.
pub fn perturbed_oracle<R: Rng + ?Sized>(cfg: &SystemConfig, delta_r: f64, rng: &mut R) -> RewardEstimate {
    let r_max = cfg.bounds().r_max;
    let mut table = cfg.reward_mean().clone();
    let entries: Vec<_> = table.entries().collect();
    for ((k, j, n), r) in entries {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        table.set(k, j, n, (r + sign * delta_r).clamp(0.0, r_max));
    }
    RewardEstimate {
        table,
        counts: zero_counts(cfg),
        delta_r,
        learn_time: 0,
    }
}

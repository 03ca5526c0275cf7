//! Offline references: the optimal stationary randomized policy and the
//! closed-form two-queue allocation under misestimated rewards.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual::{solve_empirical_dual, DualOptions, Multipliers};
use crate::error::{Error, Result};
use crate::learning::{RewardEstimate, StateEstimate};
use crate::model::{RewardTable, SystemConfig};
use crate::policy::{GammaDomain, PolicyParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineSolution {
    /// Optimal `Σ_n U_n(r̄_n) − c̄`.
    pub f_star: f64,
    /// `λ^k_b`: probability of allocation `b` in state `k`.
    pub weights: Vec<Vec<f64>>,
    pub mean_reward: Vec<f64>,
    pub mean_service: Vec<f64>,
    pub mean_cost: f64,
    /// Largest remaining constraint violation.
    pub violation: f64,
}

/// Optimal stationary policy for the instance's true statistics.
///
/// `V` only scales the objective, so the result is reported per unit of `V`.
pub fn solve_offline_optimal(cfg: &SystemConfig) -> Result<OfflineSolution> {
    solve_offline(cfg, &cfg.probs(), cfg.reward_mean())
}

struct Program<'a> {
    cfg: &'a SystemConfig,
    probs: &'a [f64],
    rewards: &'a RewardTable,
    mean_a: Vec<f64>,
    mean_e: Vec<f64>,
}

impl Program<'_> {
    /// `(r̄, μ̄, ū, c̄)` under weights `x`.
    fn means(&self, x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let (n, m) = (self.cfg.n_tasks(), self.cfg.m_resources());
        let (mut r, mut mu, mut u, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; m], 0.0);
        for (k, xk) in x.iter().enumerate() {
            for (j, &w) in xk.iter().enumerate() {
                let p = self.probs[k] * w;
                if p == 0.0 {
                    continue;
                }
                let a = self.cfg.action(k, j);
                for i in 0..n {
                    r[i] += p * self.rewards.get(k, j, i);
                    mu[i] += p * a.service[i];
                }
                for i in 0..m {
                    u[i] += p * a.usage[i];
                }
                c += p * a.cost;
            }
        }
        (r, mu, u, c)
    }

    fn objective(&self, r: &[f64], c: f64) -> f64 {
        let r_max = self.cfg.bounds().r_max;
        self.cfg
            .utilities()
            .iter()
            .zip(r)
            .map(|(u, &r)| u.value(r.min(r_max)))
            .sum::<f64>()
            - c
    }

    /// Constraint values `μ̄ − Ā` then `ū − ē`.
    fn constraints(&self, mu: &[f64], u: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(&self.mean_a)
            .map(|(x, a)| x - a)
            .chain(u.iter().zip(&self.mean_e).map(|(x, e)| x - e))
            .collect()
    }

    /// Augmented Lagrangian value and gradient at `x`.
    fn lagrangian(&self, x: &[Vec<f64>], y: &[f64], rho: f64) -> (f64, Vec<Vec<f64>>) {
        let (n, r_max) = (self.cfg.n_tasks(), self.cfg.bounds().r_max);
        let (r, mu, u, c) = self.means(x);
        let g = self.constraints(&mu, &u);
        let mult: Vec<f64> = g
            .iter()
            .zip(y)
            .map(|(g, y)| (y + rho * g).max(0.0))
            .collect();
        let value = self.objective(&r, c)
            - mult
                .iter()
                .zip(y)
                .map(|(p, y)| p * p - y * y)
                .sum::<f64>()
                / (2.0 * rho);
        let slope: Vec<f64> = self
            .cfg
            .utilities()
            .iter()
            .zip(&r)
            .map(|(util, &r)| if r < r_max { util.derivative(r) } else { 0.0 })
            .collect();
        let grad = x
            .iter()
            .enumerate()
            .map(|(k, xk)| {
                (0..xk.len())
                    .map(|j| {
                        let a = self.cfg.action(k, j);
                        let mut d = -a.cost;
                        for i in 0..n {
                            d += slope[i] * self.rewards.get(k, j, i) - mult[i] * a.service[i];
                        }
                        for (i, us) in a.usage.iter().enumerate() {
                            d -= mult[n + i] * us;
                        }
                        self.probs[k] * d
                    })
                    .collect()
            })
            .collect();
        (value, grad)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

fn step_to(x: &[Vec<f64>], g: &[Vec<f64>], step: f64) -> Vec<Vec<f64>> {
    x.iter()
        .zip(g)
        .map(|(xk, gk)| {
            let moved: Vec<f64> = xk.iter().zip(gk).map(|(a, b)| a + step * b).collect();
            project_simplex(&moved)
        })
        .collect()
}

fn sq_dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum()
}

/// Accelerated projected gradient ascent on the augmented Lagrangian with
/// backtracking and adaptive restart.
fn maximize_inner(p: &Program<'_>, x0: Vec<Vec<f64>>, y: &[f64], rho: f64) -> Vec<Vec<f64>> {
    let mut x = x0;
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    for _ in 0..20_000 {
        let (fz, gz) = p.lagrangian(&z, y, rho);
        let mut next;
        loop {
            next = step_to(&z, &gz, 1.0 / lip);
            let (fn_, _) = p.lagrangian(&next, y, rho);
            let lin: f64 = gz
                .iter()
                .flatten()
                .zip(next.iter().flatten().zip(z.iter().flatten()))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            if fn_ >= fz + lin - 0.5 * lip * sq_dist(&next, &z) - 1e-15 {
                break;
            }
            lip *= 2.0;
        }
        let moved = sq_dist(&next, &x);
        let (f_next, _) = p.lagrangian(&next, y, rho);
        let (f_x, _) = p.lagrangian(&x, y, rho);
        if f_next < f_x {
            // Restart momentum when the objective drops.
            t = 1.0;
            z = x.clone();
            lip *= 0.9;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a + beta * (a - b)).collect())
            .collect();
        x = next;
        t = t_next;
        lip *= 0.95;
        if moved < 1e-26 {
            break;
        }
    }
    x
}

/// Optimal stationary policy for given state probabilities and reward table.
pub fn solve_offline(
    cfg: &SystemConfig,
    probs: &[f64],
    rewards: &RewardTable,
) -> Result<OfflineSolution> {
    let (mean_a, mean_e) = cfg.mean_arrivals(probs);
    let p = Program {
        cfg,
        probs,
        rewards,
        mean_a,
        mean_e,
    };
    let dim = cfg.n_tasks() + cfg.m_resources();
    let mut x: Vec<Vec<f64>> = (0..cfg.num_states())
        .map(|k| {
            let len = cfg.actions(k).len();
            vec![1.0 / len as f64; len]
        })
        .collect();
    let mut y = vec![0.0; dim];
    let mut rho = 10.0;
    let mut last_violation = f64::INFINITY;
    let mut violation = f64::INFINITY;
    for _ in 0..60 {
        x = maximize_inner(&p, x, &y, rho);
        let (_, mu, u, _) = p.means(&x);
        let g = p.constraints(&mu, &u);
        violation = g.iter().copied().fold(0.0, f64::max);
        for (yi, gi) in y.iter_mut().zip(&g) {
            *yi = (*yi + rho * gi).max(0.0);
        }
        // Complementary slackness residual.
        let slack = y
            .iter()
            .zip(&g)
            .map(|(y, g)| (y * g).abs())
            .fold(0.0, f64::max);
        if violation <= 1e-10 && slack <= 1e-10 {
            break;
        }
        if violation > 0.25 * last_violation {
            rho *= 10.0;
        }
        last_violation = violation;
    }
    if violation > 1e-6 {
        return Err(Error::Infeasible { violation });
    }
    let (r, mu, _, c) = p.means(&x);
    Ok(OfflineSolution {
        f_star: p.objective(&r, c),
        weights: x,
        mean_reward: r,
        mean_service: mu,
        mean_cost: c,
        violation,
    })
}

/// Allocation of the two-queue example when the rewards are believed to be
/// `(1 + δ_n)·μ̃_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoQueuePoint {
    pub r1: f64,
    pub r2: f64,
    /// `ln(1 + r₁) + ln(1 + 2r₂)` at the realized rewards.
    pub u_total: f64,
    pub r1_first_order: f64,
    pub r2_first_order: f64,
}

pub fn two_queue_perturbed(delta1: f64, delta2: f64) -> TwoQueuePoint {
    let a = 1.0 + delta1;
    let b = 1.0 + delta2;
    let den = 4.0 * a * b;
    let r1 = (2.0 * a * b - 2.0 * b + a) / den;
    let r2 = (2.0 * a * b + 2.0 * b - a) / den;
    let drift = (2.0 * delta1 - delta2) / 4.0;
    TwoQueuePoint {
        r1,
        r2,
        u_total: r1.ln_1p() + (2.0 * r2).ln_1p(),
        r1_first_order: 0.25 + drift,
        r2_first_order: 0.75 - drift,
    }
}

/// Offline optimum and dual minimizer with true statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config_hash: String,
    pub v: f64,
    pub f_star: f64,
    pub mean_reward: Vec<f64>,
    /// Dual minimizer in queue coordinates.
    pub alpha_star: Multipliers,
    pub g_value: f64,
    pub theta1: f64,
    pub theta2: f64,
}

/// Offline optimum plus the dual solved over the continuous γ domain.
pub fn oracle_report(cfg: &SystemConfig, v: f64) -> Result<OracleReport> {
    let off = solve_offline_optimal(cfg)?;
    let params = PolicyParams::new(cfg, v, cfg.reward_mean().clone())?;
    let opts = DualOptions {
        gamma_domain: GammaDomain::Continuous,
        ..DualOptions::default()
    };
    let dual = solve_empirical_dual(
        cfg,
        &StateEstimate::exact(cfg),
        &RewardEstimate::exact(cfg),
        params.theta1,
        params.theta2,
        v,
        &opts,
    )?;
    Ok(OracleReport {
        config_hash: cfg.hash(),
        v,
        f_star: off.f_star,
        mean_reward: off.mean_reward,
        alpha_star: dual.alpha_star,
        g_value: dual.g_value,
        theta1: params.theta1,
        theta2: params.theta2,
    })
}

/// [`oracle_report`] through a JSON cache file named after the config hash
/// and `V` inside `dir`.
pub fn cached_oracle_report(cfg: &SystemConfig, v: f64, dir: &Path) -> Result<OracleReport> {
    let path = dir.join(format!("oracle-{}-v{}.json", cfg.hash(), v));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(report) = serde_json::from_str::<OracleReport>(&text) {
            if report.config_hash == cfg.hash() && report.v == v {
                return Ok(report);
            }
        }
    }
    let report = oracle_report(cfg, v)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        let p = project_simplex(&[2.0, 0.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let q = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(q.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn two_queue_optimum() {
        let cfg = instances::two_queue_example();
        let sol = solve_offline_optimal(&cfg).unwrap();
        assert!((sol.mean_reward[0] - 0.25).abs() < 1e-6, "{:?}", sol.mean_reward);
        assert!((sol.mean_reward[1] - 0.75).abs() < 1e-6);
        let exact = two_queue_perturbed(0.0, 0.0);
        assert_eq!((exact.r1, exact.r2), (0.25, 0.75));
        assert!((sol.f_star - exact.u_total).abs() < 1e-9);
    }

    #[test]
    fn perturbed_closed_form_matches_offline_solve() {
        // The controller optimizes the believed rewards; the allocation it
        // settles on is the offline optimum of the believed instance.
        let cfg = instances::two_queue_example();
        for (d1, d2) in [(0.1, 0.0), (-0.05, 0.08), (0.2, -0.1)] {
            let mut believed = cfg.reward_mean().clone();
            believed.set(0, 1, 0, 1.0 + d1);
            believed.set(0, 0, 1, 1.0 + d2);
            let sol = solve_offline(&cfg, &cfg.probs(), &believed).unwrap();
            let w = &sol.weights[0];
            let p = two_queue_perturbed(d1, d2);
            assert!((w[1] - p.r1).abs() < 1e-6, "{w:?} vs {p:?}");
            assert!((w[0] - p.r2).abs() < 1e-6);
        }
    }

    #[test]
    fn first_order_approximation_error_is_quadratic() {
        let p = two_queue_perturbed(0.1, 0.0);
        assert!((p.r1_first_order - 0.3).abs() < 1e-12);
        for d in [0.1, 0.05, 0.025] {
            let q = two_queue_perturbed(d, -d / 2.0);
            assert!((q.r1 - q.r1_first_order).abs() <= 2.0 * d * d, "{d}");
        }
    }

    #[test]
    fn zero_rewards_pick_the_zero_action() {
        let cfg = instances::with_zero_rewards(&instances::two_state_matching());
        let sol = solve_offline_optimal(&cfg).unwrap();
        assert!(sol.f_star.abs() < 1e-9);
        for (k, w) in sol.weights.iter().enumerate() {
            let zero = cfg.actions(k).iter().position(|a| a.allocation.is_zero()).unwrap();
            assert!(w[zero] > 1.0 - 1e-6);
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = instances::two_queue_example();
        let a = cached_oracle_report(&cfg, 10.0, dir.path()).unwrap();
        let b = cached_oracle_report(&cfg, 10.0, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

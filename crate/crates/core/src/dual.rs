//! Per-state dual function and a projected-subgradient solver for the
//! (empirical) dual problem.
//!
//! Multipliers are `α = (α^d, α^q, α^h)` with the sign convention of the
//! controller: `α^d` plays the role of the deficit `d`, `α^q` of `Q − θ₁`,
//! `α^h` of `H − θ₂`. With this convention
//!
//! ```text
//! g_k(α) = sup_γ Σ_n [V·U_n(γ_n) − α^d_n·γ_n]
//!        + max_b [−V·c + Σ_n α^d_n·r̂_n + Σ_n α^q_n·μ_n + Σ_m α^h_m·Σ_n b_mn]
//!        + Σ_n max_{R ∈ [0, A_n]} (−α^q_n·R) + Σ_m max_{h ∈ [0, e_m]} (−α^h_m·h)
//! ```
//!
//! and the maximizers are exactly what the controller picks when its queues
//! sit at `(α^d, θ₁ + α^q, θ₂ + α^h)`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learning::{RewardEstimate, StateEstimate};
use crate::model::{RewardTable, SystemConfig};
use crate::policy::GammaDomain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub alpha_d: Vec<f64>,
    pub alpha_q: Vec<f64>,
    pub alpha_h: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            alpha_d: vec![0.0; n],
            alpha_q: vec![0.0; n],
            alpha_h: vec![0.0; m],
        }
    }

    /// `(α^d, α^q, α^h)` concatenated.
    pub fn to_vec(&self) -> Vec<f64> {
        [&self.alpha_d[..], &self.alpha_q, &self.alpha_h].concat()
    }

    pub fn from_slice(x: &[f64], n: usize, m: usize) -> Self {
        assert_eq!(x.len(), 2 * n + m);
        Self {
            alpha_d: x[..n].to_vec(),
            alpha_q: x[n..2 * n].to_vec(),
            alpha_h: x[2 * n..].to_vec(),
        }
    }

    /// Adds `(0, θ₁, θ₂)`: multiplier coordinates to queue coordinates.
    pub fn offset(&self, theta1: f64, theta2: f64) -> Self {
        Self {
            alpha_d: self.alpha_d.clone(),
            alpha_q: self.alpha_q.iter().map(|a| a + theta1).collect(),
            alpha_h: self.alpha_h.iter().map(|a| a + theta2).collect(),
        }
    }
}

/// Value of `g_k` and the maximizers that attain it.
#[derive(Clone, Debug, PartialEq)]
pub struct GkEval {
    pub value: f64,
    pub gamma: Vec<f64>,
    pub admitted: Vec<f64>,
    pub resource_admitted: Vec<f64>,
    pub action: usize,
}

/// Evaluates `g_k(α)` by separable maximization. Allocation ties go to the
/// lexicographically smallest matrix; admission ties (`α = 0`) to zero.
pub fn eval_g_k(
    cfg: &SystemConfig,
    k: usize,
    alpha: &Multipliers,
    rewards: &RewardTable,
    v: f64,
    domain: &GammaDomain,
) -> GkEval {
    let r_max = cfg.bounds().r_max;
    let mut value = 0.0;
    let mut gamma = Vec::with_capacity(cfg.n_tasks());
    for (u, &ad) in cfg.utilities().iter().zip(&alpha.alpha_d) {
        let g = domain.argmax(u, v, ad, r_max);
        value += v * u.value(g) - ad * g;
        gamma.push(g);
    }

    let mut best = (f64::NEG_INFINITY, 0);
    for &j in cfg.lex_order(k) {
        let a = cfg.action(k, j);
        let r_hat = rewards.row(k, j);
        let mut w = -v * a.cost;
        for n in 0..cfg.n_tasks() {
            w += alpha.alpha_d[n] * r_hat[n] + alpha.alpha_q[n] * a.service[n];
        }
        for (u, ah) in a.usage.iter().zip(&alpha.alpha_h) {
            w += ah * u;
        }
        if w > best.0 {
            best = (w, j);
        }
    }
    value += best.0;

    let state = cfg.state(k);
    let admitted: Vec<f64> = alpha
        .alpha_q
        .iter()
        .zip(&state.arrivals)
        .map(|(&aq, &a)| if aq < 0.0 { a } else { 0.0 })
        .collect();
    let resource_admitted: Vec<f64> = alpha
        .alpha_h
        .iter()
        .zip(&state.resource_arrivals)
        .map(|(&ah, &e)| if ah < 0.0 { e } else { 0.0 })
        .collect();
    value -= alpha
        .alpha_q
        .iter()
        .zip(&admitted)
        .map(|(a, r)| a * r)
        .sum::<f64>();
    value -= alpha
        .alpha_h
        .iter()
        .zip(&resource_admitted)
        .map(|(a, h)| a * h)
        .sum::<f64>();

    GkEval {
        value,
        gamma,
        admitted,
        resource_admitted,
        action: best.1,
    }
}

/// The averaged dual objective `G(α) = Σ_k p_k·g_k(α)` in multiplier
/// coordinates.
pub struct DualObjective<'a> {
    pub cfg: &'a SystemConfig,
    pub probs: &'a [f64],
    pub rewards: &'a RewardTable,
    pub v: f64,
    pub domain: &'a GammaDomain,
}

impl DualObjective<'_> {
    /// Value and a subgradient, both in the flat `(α^d, α^q, α^h)` layout.
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (n, m) = (self.cfg.n_tasks(), self.cfg.m_resources());
        let alpha = Multipliers::from_slice(x, n, m);
        let mut value = 0.0;
        let mut grad = vec![0.0; 2 * n + m];
        for (k, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let e = eval_g_k(self.cfg, k, &alpha, self.rewards, self.v, self.domain);
            value += p * e.value;
            let a = self.cfg.action(k, e.action);
            let r_hat = self.rewards.row(k, e.action);
            for i in 0..n {
                grad[i] += p * (r_hat[i] - e.gamma[i]);
                grad[n + i] += p * (a.service[i] - e.admitted[i]);
            }
            for i in 0..m {
                grad[2 * n + i] += p * (a.usage[i] - e.resource_admitted[i]);
            }
        }
        (value, grad)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualOptions {
    /// Initial step; defaults to `V`.
    pub eta0: Option<f64>,
    pub max_iters: usize,
    /// Relative tolerance; the absolute tolerance is `tol·V`.
    pub tol: f64,
    /// Iterations without an improvement larger than the tolerance before a
    /// phase ends.
    pub window: usize,
    /// Domain of `γ` in the inner maximization.
    pub gamma_domain: GammaDomain,
    /// Move the task and resource multipliers to the low end of the
    /// near-optimal set (see [`lower_end`]).
    pub lower_end: bool,
    /// Resource multipliers are lowered within `resource_margin·δ_z·V` of
    /// the minimum instead of the tolerance.
    pub resource_margin: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            eta0: None,
            max_iters: 20_000,
            tol: 1e-4,
            window: 500,
            gamma_domain: GammaDomain::Continuous,
            lower_end: true,
            resource_margin: 0.3,
        }
    }
}

/// Minimizer in queue coordinates `(α^d, θ₁ + α^q, θ₂ + α^h)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha_star: Multipliers,
    pub g_value: f64,
    pub iterations: usize,
    /// Best-value improvement over the final window.
    pub residual: f64,
    pub converged: bool,
}

/// Minimizes `G` over `{α^d ≥ 0}` starting from zero.
///
/// Projected subgradient steps `η₀/√t` run in phases; each phase tracks the
/// best raw iterate and the running (Polyak) average, and ends after
/// `window` iterations without improving the best value by more than the
/// tolerance. The next phase restarts from the best point with a quarter of
/// the step. The best point seen overall is returned.
pub fn minimize(obj: &DualObjective<'_>, opts: &DualOptions) -> (Vec<f64>, f64, usize, f64, bool) {
    let (n, m) = (obj.cfg.n_tasks(), obj.cfg.m_resources());
    let dim = 2 * n + m;
    let tol = opts.tol * obj.v;
    let mut eta0 = opts.eta0.unwrap_or(obj.v);
    let mut best_x = vec![0.0; dim];
    let mut best_val = obj.value(&best_x);
    let mut iters = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;

    while iters < opts.max_iters {
        let phase_start_val = best_val;
        let mut x = best_x.clone();
        let mut avg = x.clone();
        let mut since_improve = 0;
        let mut mark = best_val;
        let mut t = 0usize;
        while iters < opts.max_iters && since_improve < opts.window {
            t += 1;
            iters += 1;
            let (val, g) = obj.eval(&x);
            if val < best_val {
                best_val = val;
                best_x.clone_from(&x);
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                converged = true;
                residual = 0.0;
                return (best_x, best_val, iters, residual, converged);
            }
            let step = eta0 / (t as f64).sqrt();
            for i in 0..dim {
                x[i] -= step * g[i];
            }
            x[..n].iter_mut().for_each(|v| *v = v.max(0.0));
            let w = 1.0 / (t as f64 + 1.0);
            avg.iter_mut().zip(&x).for_each(|(a, v)| *a += w * (v - *a));
            let avg_val = obj.value(&avg);
            if avg_val < best_val {
                best_val = avg_val;
                best_x.clone_from(&avg);
            }
            if mark - best_val > tol {
                mark = best_val;
                since_improve = 0;
            } else {
                since_improve += 1;
            }
        }
        residual = phase_start_val - best_val;
        if residual <= tol && eta0 < 1e-3 * obj.v {
            converged = true;
            break;
        }
        eta0 /= 4.0;
    }
    (best_x, best_val, iters, residual, converged)
}

/// Walks the coordinates in `coords` down, one at a time, as far as `G`
/// stays within `limit`.
///
/// When the dual is flat along a queue direction, the queue itself drifts
/// freely across the flat segment. Returning the low end keeps a shifted
/// controller's real queues above zero over the whole segment.
pub fn lower_end(obj: &DualObjective<'_>, x: &mut [f64], coords: Range<usize>, limit: f64) {
    for i in coords.rev() {
        let at = |x: &[f64], s: f64| {
            let mut y = x.to_vec();
            y[i] -= s;
            obj.value(&y)
        };
        let mut hi = 1.0;
        while at(x, hi) <= limit && hi < 1e9 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(x, mid) <= limit {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        x[i] -= lo;
    }
}

/// Solves `min Σ_k π̂_k·g_k(α^d, α^q − θ₁, α^h − θ₂)`; the returned
/// multiplier is in queue coordinates.
pub fn solve_empirical_dual(
    cfg: &SystemConfig,
    states: &StateEstimate,
    rewards: &RewardEstimate,
    theta1: f64,
    theta2: f64,
    v: f64,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let obj = DualObjective {
        cfg,
        probs: &states.probs,
        rewards: &rewards.table,
        v,
        domain: &opts.gamma_domain,
    };
    let (mut x, mut value, iterations, residual, converged) = minimize(&obj, opts);
    if opts.lower_end {
        let (n, dim) = (cfg.n_tasks(), x.len());
        lower_end(&obj, &mut x, n..2 * n, value + opts.tol * v);
        // An estimated distribution tilts a flat resource direction by up to
        // about δ_z·V, so the resource end is taken within that margin.
        let margin = opts.tol.max(opts.resource_margin * states.delta_z) * v;
        lower_end(&obj, &mut x, 2 * n..dim, value + margin);
        value = obj.value(&x);
    }
    let alpha = Multipliers::from_slice(&x, cfg.n_tasks(), cfg.m_resources());
    Ok(DualSolution {
        alpha_star: alpha.offset(theta1, theta2),
        g_value: value,
        iterations,
        residual,
        converged,
    })
}

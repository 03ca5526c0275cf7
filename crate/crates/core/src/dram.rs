//! The multiplier-shifted controller: the drift-minimizing steps run on
//! `Q̂ = Q + α̂^q − ζ`, `Ĥ = H + α̂^h − ζ`, `d̂ = d + α̂^d − ζ`, with a drop
//! correction whenever the chosen allocation would overspend a resource.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{solve_empirical_dual, DualOptions, DualSolution, Multipliers};
use crate::error::Result;
use crate::learning::{RewardEstimate, StateEstimate};
use crate::model::{sample_reward, SystemConfig, ZetaRule, TOL};
use crate::policy::{decide, PolicyParams, SlotRecord};
use crate::queueing::{QueueState, SlotInput};

/// Multiplier estimate (queue coordinates) and the safety shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftState {
    pub alpha_hat: Multipliers,
    pub zeta: f64,
}

impl ShiftState {
    /// Shifted queues `(Q̂, Ĥ, d̂)`. Entries may be negative.
    pub fn view(&self, qs: &QueueState) -> QueueState {
        let shift = |x: &[f64], a: &[f64]| -> Vec<f64> {
            x.iter().zip(a).map(|(x, a)| x + a - self.zeta).collect()
        };
        QueueState {
            q: shift(&qs.q, &self.alpha_hat.alpha_q),
            h: shift(&qs.h, &self.alpha_hat.alpha_h),
            d: shift(&qs.d, &self.alpha_hat.alpha_d),
        }
    }

    /// Per-component offsets in `(d, Q, H)` order.
    pub fn offsets(&self) -> Vec<f64> {
        self.alpha_hat.to_vec().iter().map(|a| a - self.zeta).collect()
    }
}

/// `ζ` by precedence: explicit value, then the config's rule, then the
/// general rule with the state-estimate error.
pub fn resolve_zeta(cfg: &SystemConfig, v: f64, delta_z: f64, explicit: Option<f64>) -> f64 {
    explicit.unwrap_or_else(|| {
        cfg.zeta_rule()
            .unwrap_or(ZetaRule::General)
            .resolve(v, delta_z)
    })
}

/// One slot of the shifted controller.
///
/// Decisions read the shifted view. If a row `m` of the chosen allocation
/// asks for more than `H_m`, the row is scaled proportionally so that it
/// spends `min(h_m(t), H_m)`, every task queue with a positive entry in the
/// row loses `min(Q_n, μ_n)` tasks without reward, and the cost is charged
/// on the scaled allocation. With `serve_reduced` the affected queues are
/// instead served at the rate of the scaled allocation.
pub fn dram_slot<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    params: &PolicyParams,
    shift: &ShiftState,
    k: usize,
    qs: &QueueState,
    reward_rng: &mut R,
    serve_reduced: bool,
) -> Result<(SlotRecord, QueueState)> {
    let dec = decide(cfg, params, k, &shift.view(qs), false)?;
    let a = cfg.action(k, dec.action);
    let mut allocation = a.allocation.clone();
    let mut affected = vec![false; cfg.n_tasks()];
    let mut drop = false;
    for m in 0..cfg.m_resources() {
        let requested = a.usage[m];
        if requested <= qs.h[m] + TOL {
            continue;
        }
        drop = true;
        let budget = dec.resource_admitted[m].min(qs.h[m]).max(0.0);
        let scale = budget / requested;
        for n in 0..cfg.n_tasks() {
            let b = allocation.get(m, n);
            if b > 0.0 {
                affected[n] = true;
                allocation.set(m, n, b * scale);
            }
        }
    }

    let mut rate = a.service.clone();
    let mut cost = a.cost;
    if drop {
        cost = cfg.cost_at(k, &allocation).unwrap_or(a.cost);
        if let (true, Some(mu)) = (serve_reduced, cfg.service_at(k, &allocation)) {
            for n in 0..cfg.n_tasks() {
                if affected[n] {
                    rate[n] = mu[n];
                    affected[n] = false;
                }
            }
        }
    }
    let served: Vec<f64> = qs
        .q
        .iter()
        .zip(&rate)
        .zip(&affected)
        .map(|((q, mu), &lost)| if lost { 0.0 } else { q.min(*mu) })
        .collect();

    let reward = sample_reward(reward_rng, cfg, k, dec.action, &served)?;
    let next = qs.step(SlotInput {
        service: &rate,
        admitted: &dec.admitted,
        allocation: &allocation,
        resource_admitted: &dec.resource_admitted,
        reward: &reward,
        gamma: &dec.gamma,
    })?;
    let record = SlotRecord {
        k,
        gamma: dec.gamma,
        admitted: dec.admitted,
        resource_admitted: dec.resource_admitted,
        allocation,
        service: rate,
        served,
        reward,
        cost,
        drop,
    };
    Ok((record, next))
}

/// A controller ready for its control phase.
#[derive(Clone, Debug)]
pub struct DramController {
    pub params: PolicyParams,
    pub shift: ShiftState,
    pub dual: DualSolution,
    pub rewards: RewardEstimate,
    pub states: StateEstimate,
    /// `max` of the two learning times.
    pub learn_time: u64,
    pub serve_reduced: bool,
}

/// Builds the shifted controller from finished estimates: offsets from
/// `β_r̂` of the reward estimate, the empirical dual solved over the
/// controller's γ domain, and `ζ` by [`resolve_zeta`].
pub fn assemble_dram(
    cfg: &SystemConfig,
    v: f64,
    rewards: RewardEstimate,
    states: StateEstimate,
    dual_opts: &DualOptions,
    zeta: Option<f64>,
) -> Result<DramController> {
    let params = PolicyParams::new(cfg, v, rewards.table.clone())?;
    let opts = DualOptions {
        gamma_domain: params.gamma_domain.clone(),
        ..dual_opts.clone()
    };
    let dual = solve_empirical_dual(cfg, &states, &rewards, params.theta1, params.theta2, v, &opts)?;
    let shift = ShiftState {
        alpha_hat: dual.alpha_star.clone(),
        zeta: resolve_zeta(cfg, v, states.delta_z, zeta),
    };
    Ok(DramController {
        learn_time: rewards.learn_time.max(states.learn_time),
        params,
        shift,
        dual,
        rewards,
        states,
        serve_reduced: false,
    })
}

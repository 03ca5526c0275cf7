//! The drift-minimizing controller: quota, admission and resource steps,
//! and one full slot on raw queues.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    compute_beta_r_hat, sample_reward, Allocation, DerivedConstants, RewardTable, SystemConfig,
    Utility, TOL,
};
use crate::queueing::{QueueState, SlotInput};

/// Domain of the auxiliary reward targets `γ_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GammaDomain {
    /// `[0, r_max]`
    Continuous,
    /// Finite set of candidate values.
    Grid(Vec<f64>),
}

impl GammaDomain {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        match cfg.gamma_grid() {
            Some(grid) => GammaDomain::Grid(grid.to_vec()),
            None => GammaDomain::Continuous,
        }
    }

    /// Maximizer of `v·U(γ) − price·γ`; ties go to the smaller `γ`.
    pub fn argmax(&self, u: &Utility, v: f64, price: f64, r_max: f64) -> f64 {
        match self {
            GammaDomain::Continuous => u.penalized_argmax(v, price, r_max),
            GammaDomain::Grid(grid) => {
                let mut best = (f64::NEG_INFINITY, f64::INFINITY);
                for &g in grid {
                    let val = v * u.value(g) - price * g;
                    if val > best.0 || (val == best.0 && g < best.1) {
                        best = (val, g);
                    }
                }
                best.1
            }
        }
    }
}

/// Controller parameters: tradeoff `V`, offsets and the reward table the
/// resource step trusts.
#[derive(Clone, Debug)]
pub struct PolicyParams {
    pub v: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub rewards: RewardTable,
    pub gamma_domain: GammaDomain,
}

impl PolicyParams {
    /// Offsets from the derived-constant formulas with `β_r̂` computed from
    /// `rewards`; the γ domain follows the config.
    pub fn new(cfg: &SystemConfig, v: f64, rewards: RewardTable) -> Result<Self> {
        if v < 1.0 {
            return Err(Error::Policy(format!("V must be at least 1, got {v}")));
        }
        if !rewards.fits(cfg) {
            return Err(Error::Policy("reward table does not match the action sets".into()));
        }
        let beta = compute_beta_r_hat(&rewards, cfg)?;
        let c = DerivedConstants::new(cfg, v, beta);
        Ok(Self {
            v,
            theta1: c.theta1,
            theta2: c.theta2,
            rewards,
            gamma_domain: GammaDomain::from_config(cfg),
        })
    }

    pub fn constants(&self, cfg: &SystemConfig) -> Result<DerivedConstants> {
        Ok(DerivedConstants::new(
            cfg,
            self.v,
            compute_beta_r_hat(&self.rewards, cfg)?,
        ))
    }
}

pub fn quota_step(cfg: &SystemConfig, params: &PolicyParams, d_n: f64, n: usize) -> f64 {
    params
        .gamma_domain
        .argmax(&cfg.utilities()[n], params.v, d_n, cfg.bounds().r_max)
}

/// `R_n = A_n·1[Q_n < θ₁]`, `h_m = e_m·1[H_m < θ₂]`.
pub fn admission_step(
    q: &[f64],
    h: &[f64],
    arrivals: &[f64],
    resource_arrivals: &[f64],
    theta1: f64,
    theta2: f64,
) -> (Vec<f64>, Vec<f64>) {
    let r = q
        .iter()
        .zip(arrivals)
        .map(|(&q, &a)| if q < theta1 { a } else { 0.0 })
        .collect();
    let e = h
        .iter()
        .zip(resource_arrivals)
        .map(|(&h, &e)| if h < theta2 { e } else { 0.0 })
        .collect();
    (r, e)
}

/// `Ψ(b) = V·c − Σ_m (H_m − θ₂)Σ_n b_mn − Σ_n (Q_n − θ₁)μ_n − Σ_n d_n·r̂_n`
/// for allocation `j` of state `k`.
pub fn psi(
    cfg: &SystemConfig,
    params: &PolicyParams,
    k: usize,
    j: usize,
    q: &[f64],
    h: &[f64],
    d: &[f64],
) -> f64 {
    let a = cfg.action(k, j);
    let r_hat = params.rewards.row(k, j);
    let mut value = params.v * a.cost;
    for (m, &u) in a.usage.iter().enumerate() {
        value -= (h[m] - params.theta2) * u;
    }
    for n in 0..q.len() {
        value -= (q[n] - params.theta1) * a.service[n] + d[n] * r_hat[n];
    }
    value
}

/// Index of the allocation minimizing `Ψ` in state `k`, ties to the
/// lexicographically smallest matrix. With `enforce_underflow` only
/// allocations with `Σ_n b_mn ≤ H_m` compete.
pub fn resource_step(
    cfg: &SystemConfig,
    params: &PolicyParams,
    k: usize,
    q: &[f64],
    h: &[f64],
    d: &[f64],
    enforce_underflow: bool,
) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &j in cfg.lex_order(k) {
        if enforce_underflow
            && cfg
                .action(k, j)
                .usage
                .iter()
                .zip(h)
                .any(|(u, h)| *u > h + TOL)
        {
            continue;
        }
        let value = psi(cfg, params, k, j, q, h, d);
        if best.is_none_or(|(b, _)| value < b) {
            best = Some((value, j));
        }
    }
    best.map(|(_, j)| j)
        .ok_or(Error::EmptyFeasibleSet { state: k })
}

/// Control decisions of one slot, before realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub gamma: Vec<f64>,
    pub admitted: Vec<f64>,
    pub resource_admitted: Vec<f64>,
    /// Index into the state's allocation set.
    pub action: usize,
}

/// Quota, admission and resource steps on the given queue view.
pub fn decide(
    cfg: &SystemConfig,
    params: &PolicyParams,
    k: usize,
    view: &QueueState,
    enforce_underflow: bool,
) -> Result<Decision> {
    let gamma = (0..cfg.n_tasks())
        .map(|n| quota_step(cfg, params, view.d[n], n))
        .collect();
    let state = cfg.state(k);
    let (admitted, resource_admitted) = admission_step(
        &view.q,
        &view.h,
        &state.arrivals,
        &state.resource_arrivals,
        params.theta1,
        params.theta2,
    );
    let action = resource_step(cfg, params, k, &view.q, &view.h, &view.d, enforce_underflow)?;
    Ok(Decision {
        gamma,
        admitted,
        resource_admitted,
        action,
    })
}

/// Everything that happened in one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotRecord {
    pub k: usize,
    pub gamma: Vec<f64>,
    pub admitted: Vec<f64>,
    pub resource_admitted: Vec<f64>,
    /// Allocation actually spent (after any drop correction).
    pub allocation: Allocation,
    /// Nominal service `μ(k, b)` of the chosen allocation.
    pub service: Vec<f64>,
    /// Tasks that left each queue, `min(Q_n, μ_n)`.
    pub served: Vec<f64>,
    pub reward: Vec<f64>,
    pub cost: f64,
    pub drop: bool,
}

/// One slot on raw queues. The no-underflow filter is off: a controller
/// built from the offset formulas never overspends, and if it does the
/// queue update reports it.
pub fn ram_slot<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    params: &PolicyParams,
    k: usize,
    qs: &QueueState,
    reward_rng: &mut R,
) -> Result<(SlotRecord, QueueState)> {
    let dec = decide(cfg, params, k, qs, false)?;
    let a = cfg.action(k, dec.action);
    let served: Vec<f64> = qs.q.iter().zip(&a.service).map(|(q, mu)| q.min(*mu)).collect();
    let reward = sample_reward(reward_rng, cfg, k, dec.action, &served)?;
    let next = qs.step(SlotInput {
        service: &a.service,
        admitted: &dec.admitted,
        allocation: &a.allocation,
        resource_admitted: &dec.resource_admitted,
        reward: &reward,
        gamma: &dec.gamma,
    })?;
    let record = SlotRecord {
        k,
        gamma: dec.gamma,
        admitted: dec.admitted,
        resource_admitted: dec.resource_admitted,
        allocation: a.allocation.clone(),
        service: a.service.clone(),
        served,
        reward,
        cost: a.cost,
        drop: false,
    };
    Ok((record, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::rng;
    use proptest::prelude::*;

    fn params(cfg: &SystemConfig, v: f64) -> PolicyParams {
        PolicyParams::new(cfg, v, cfg.reward_mean().clone()).unwrap()
    }

    #[test]
    fn quota_examples() {
        let cfg = instances::two_state_matching();
        let mut p = params(&cfg, 100.0);
        p.gamma_domain = GammaDomain::Continuous;
        assert_eq!(quota_step(&cfg, &p, 0.0, 0), 2.0);
        assert_eq!(quota_step(&cfg, &p, 501.0, 0), 0.0);
        assert!((quota_step(&cfg, &p, 60.0, 0) - 1.5).abs() < 1e-12);
        let fine = GammaDomain::Grid((0..=20_000).map(|i| i as f64 * 1e-4).collect());
        let u = cfg.utilities()[0];
        assert!((fine.argmax(&u, 100.0, 60.0, 2.0) - 1.5).abs() <= 1e-4);
    }

    #[test]
    fn grid_quota_breaks_ties_low() {
        let dom = GammaDomain::Grid(vec![2.0, 1.0, 0.0]);
        let u = Utility::Linear { a: 1.0 };
        // V·U(γ) − γ is zero everywhere.
        assert_eq!(dom.argmax(&u, 1.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn admission_is_strict() {
        let (r, h) = admission_step(&[9.5, 10.0], &[0.0], &[2.0, 2.0], &[2.0], 10.0, 10.0);
        assert_eq!(r, vec![2.0, 0.0]);
        assert_eq!(h, vec![2.0]);
    }

    #[test]
    fn empty_queues_allocate_nothing() {
        let cfg = instances::two_state_matching();
        let p = params(&cfg, 50.0);
        let z = QueueState::zeros(2, 1);
        for k in 0..cfg.num_states() {
            let j = resource_step(&cfg, &p, k, &z.q, &z.h, &z.d, false).unwrap();
            assert!(cfg.action(k, j).allocation.is_zero());
            for jj in 0..cfg.actions(k).len() {
                if jj != j {
                    assert!(psi(&cfg, &p, k, jj, &z.q, &z.h, &z.d) > 0.0);
                }
            }
        }
    }

    #[test]
    fn positive_cost_wins_at_offsets() {
        let cfg = instances::two_state_matching();
        let p = params(&cfg, 50.0);
        let q = [p.theta1, p.theta1];
        let h = [p.theta2];
        let j = resource_step(&cfg, &p, 0, &q, &h, &[0.0, 0.0], false).unwrap();
        assert!(cfg.action(0, j).allocation.is_zero());
    }

    #[test]
    fn large_deficit_serves_preferred_queue() {
        let cfg = instances::two_state_matching();
        let p = params(&cfg, 100.0);
        let q = [p.theta1 + 1.0, p.theta1 + 1.0];
        let h = [p.theta2 + 1.0];
        // State 0 has label 1, where queue 2 carries the full weight.
        let j = resource_step(&cfg, &p, 0, &q, &h, &[10.0, 400.0], false).unwrap();
        assert_eq!(
            cfg.action(0, j).allocation,
            Allocation::from_rows(&[vec![0.0, 1.0]]).unwrap()
        );
    }

    #[test]
    fn underflow_filter_restricts_choice() {
        let cfg = instances::two_state_matching();
        let p = params(&cfg, 100.0);
        let q = [p.theta1 + 1.0, p.theta1 + 1.0];
        let j = resource_step(&cfg, &p, 0, &q, &[0.0], &[10.0, 400.0], true).unwrap();
        assert!(cfg.action(0, j).allocation.is_zero());
    }

    #[test]
    fn first_slot_from_empty_queues() {
        let cfg = instances::two_state_matching();
        let p = params(&cfg, 100.0);
        let mut rng = rng::stream(1, 1);
        for k in 0..cfg.num_states() {
            let (rec, next) = ram_slot(&cfg, &p, k, &QueueState::zeros(2, 1), &mut rng).unwrap();
            assert_eq!(rec.admitted, cfg.state(k).arrivals);
            assert_eq!(rec.resource_admitted, cfg.state(k).resource_arrivals);
            assert!(rec.allocation.is_zero());
            assert_eq!(rec.reward, vec![0.0, 0.0]);
            assert_eq!(next.q, cfg.state(k).arrivals);
        }
    }

    #[test]
    fn large_deficits_stop_quota() {
        let cfg = instances::two_state_matching();
        let p = params(&cfg, 10.0);
        let qs = QueueState {
            q: vec![0.0, 0.0],
            h: vec![0.0],
            d: vec![51.0, 51.0],
        };
        let (rec, _) = ram_slot(&cfg, &p, 3, &qs, &mut rng::stream(0, 1)).unwrap();
        assert_eq!(rec.gamma, vec![0.0, 0.0]);
    }

    #[test]
    fn single_queue_slot_by_hand() {
        let cfg = instances::single_queue_example();
        let p = params(&cfg, 5.0);
        // β_r̂ = 0.5: θ₁ = 1 + 11·0.5 + 1 = 7.5, θ₂ = 5.5 + 1 + 1 = 7.5.
        assert_eq!((p.theta1, p.theta2), (7.5, 7.5));
        let qs = QueueState {
            q: vec![9.0],
            h: vec![9.0],
            d: vec![2.0],
        };
        // Ψ(1) = 5·0.2 − 1.5 − 1.5 − 2·0.5 = −3 < Ψ(0) = 0.
        let (rec, next) = ram_slot(&cfg, &p, 0, &qs, &mut rng::stream(0, 1)).unwrap();
        assert_eq!(rec.allocation.get(0, 0), 1.0);
        // γ solves 10/(1 + 2γ) = 2, i.e. 2, clipped to r_max = 1.
        assert_eq!(rec.gamma, vec![1.0]);
        assert_eq!(rec.admitted, vec![0.0]);
        assert_eq!(rec.resource_admitted, vec![0.0]);
        assert_eq!(rec.reward, vec![0.5]);
        assert_eq!(next.q, vec![8.0]);
        assert_eq!(next.h, vec![8.0]);
        assert_eq!(next.d, vec![2.5]);
    }

    proptest! {
        #[test]
        fn shifting_q_and_theta1_together_keeps_choice(
            q1 in 0.0..600.0f64, q2 in 0.0..600.0f64, h in 0.0..600.0f64,
            d1 in 0.0..600.0f64, d2 in 0.0..600.0f64, shift in -100.0..100.0f64, k in 0usize..16,
        ) {
            let cfg = instances::two_state_matching();
            let p = params(&cfg, 100.0);
            let mut shifted = p.clone();
            shifted.theta1 += shift;
            let j0 = resource_step(&cfg, &p, k, &[q1, q2], &[h], &[d1, d2], false).unwrap();
            let j1 = resource_step(&cfg, &shifted, k, &[q1 + shift, q2 + shift], &[h], &[d1, d2], false).unwrap();
            let (a, b) = (psi(&cfg, &p, k, j0, &[q1, q2], &[h], &[d1, d2]),
                          psi(&cfg, &p, k, j1, &[q1, q2], &[h], &[d1, d2]));
            prop_assert!(j0 == j1 || (a - b).abs() < 1e-9);
        }

        #[test]
        fn continuous_quota_matches_fine_grid(a in 0.1..3.0f64, c in 0.1..5.0f64, d in 0.0..400.0f64) {
            let u = Utility::ScaledLog { a, c };
            let exact = GammaDomain::Continuous.argmax(&u, 50.0, d, 2.0);
            let grid = GammaDomain::Grid((0..=20_000).map(|i| i as f64 * 1e-4).collect());
            let approx = grid.argmax(&u, 50.0, d, 2.0);
            prop_assert!((exact - approx).abs() <= 2e-4, "{exact} vs {approx}");
        }
    }
}

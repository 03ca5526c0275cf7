//! Built-in instances used by the tests, the acceptance suite and the
//! shipped JSON configs.

use std::collections::BTreeMap;

use crate::model::{
    Allocation, Bounds, ConfigSpec, CostSpec, NoiseModel, PartialService, RewardSpec,
    ServiceSpec, StateSpec, SystemConfig, Utility, ZetaRule,
};

fn alloc(rows: &[&[f64]]) -> Allocation {
    Allocation::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
        .expect("literal allocation")
}

fn shared<T>(value: T) -> BTreeMap<String, T> {
    BTreeMap::from([("*".to_string(), value)])
}

/// Two task queues sharing one resource, with 16 equiprobable states built
/// from `A₁ ∈ {0,2}`, `A₂ ∈ {1,2}`, `e ∈ {0,2}` and a label `ω ∈ {1,2}` that
/// decides which queue earns the full reward.
pub fn two_state_matching_spec() -> ConfigSpec {
    let mut states = Vec::with_capacity(16);
    for omega in ["1", "2"] {
        for a1 in [0.0, 2.0] {
            for a2 in [1.0, 2.0] {
                for e in [0.0, 2.0] {
                    states.push(StateSpec {
                        arrivals: vec![a1, a2],
                        resource_arrivals: vec![e],
                        omega: omega.to_string(),
                        prob: 1.0 / 16.0,
                    });
                }
            }
        }
    }
    ConfigSpec {
        n_tasks: 2,
        m_resources: 1,
        states,
        action_sets: shared(vec![
            alloc(&[&[0.0, 0.0]]),
            alloc(&[&[1.0, 0.0]]),
            alloc(&[&[0.0, 1.0]]),
        ]),
        service: ServiceSpec::Linear {
            gain: alloc(&[&[1.0, 1.0]]),
        },
        cost: CostSpec::Linear {
            unit_price: vec![1.0],
        },
        reward_mean: RewardSpec::Proportional {
            weights: BTreeMap::from([
                ("1".to_string(), vec![0.8, 1.0]),
                ("2".to_string(), vec![1.0, 0.8]),
            ]),
        },
        reward_noise: NoiseModel::TwoPoint {
            low: 0.5,
            high: 1.5,
        },
        partial_service: PartialService::Linear,
        utilities: vec![
            Utility::ScaledLog { a: 1.2, c: 2.0 },
            Utility::ScaledLog { a: 1.2, c: 4.0 },
        ],
        bounds: Bounds {
            a_max: 2.0,
            h_max: 2.0,
            r_max: 2.0,
            mu_max: 1.0,
            c_max: 1.0,
            b_max: 1.0,
            beta: 5.0,
            beta_mu_lower: 1.0,
            beta_mu_upper: 1.0,
        },
        gamma_grid: None,
        zeta: Some(ZetaRule::LogSquared),
    }
}

pub fn two_state_matching() -> SystemConfig {
    SystemConfig::new(two_state_matching_spec()).expect("built-in instance")
}

/// [`two_state_matching`] with the targets `γ_n` restricted to `{0, 1, 2}`.
pub fn two_state_matching_grid() -> SystemConfig {
    let mut spec = two_state_matching_spec();
    spec.gamma_grid = Some(vec![0.0, 1.0, 2.0]);
    SystemConfig::new(spec).expect("built-in instance")
}

/// One state, unit arrivals, one resource that serves either queue at zero
/// cost; `U₁ = ln(1 + r₁)`, `U₂ = ln(1 + 2r₂)`. The optimum splits service
/// 1/4 : 3/4.
pub fn two_queue_example_spec() -> ConfigSpec {
    ConfigSpec {
        n_tasks: 2,
        m_resources: 1,
        states: vec![StateSpec {
            arrivals: vec![1.0, 1.0],
            resource_arrivals: vec![1.0],
            omega: String::new(),
            prob: 1.0,
        }],
        action_sets: shared(vec![
            alloc(&[&[0.0, 1.0]]),
            alloc(&[&[1.0, 0.0]]),
            alloc(&[&[0.0, 0.0]]),
        ]),
        service: ServiceSpec::Linear {
            gain: alloc(&[&[1.0, 1.0]]),
        },
        cost: CostSpec::Linear {
            unit_price: vec![0.0],
        },
        reward_mean: RewardSpec::Proportional {
            weights: BTreeMap::from([(String::new(), vec![1.0, 1.0])]),
        },
        reward_noise: NoiseModel::Deterministic,
        partial_service: PartialService::Linear,
        utilities: vec![
            Utility::ScaledLog { a: 1.0, c: 1.0 },
            Utility::ScaledLog { a: 1.0, c: 2.0 },
        ],
        bounds: Bounds {
            a_max: 1.0,
            h_max: 1.0,
            r_max: 1.0,
            mu_max: 1.0,
            c_max: 0.0,
            b_max: 1.0,
            beta: 2.0,
            beta_mu_lower: 1.0,
            beta_mu_upper: 1.0,
        },
        gamma_grid: None,
        zeta: None,
    }
}

pub fn two_queue_example() -> SystemConfig {
    SystemConfig::new(two_queue_example_spec()).expect("built-in instance")
}

/// Single queue, single resource, single state: `B = {0, 1}`, `μ = b`,
/// `c = 0.2·b`, `r = 0.5·μ`, `U = ln(1 + 2γ)`.
pub fn single_queue_example() -> SystemConfig {
    let spec = ConfigSpec {
        n_tasks: 1,
        m_resources: 1,
        states: vec![StateSpec {
            arrivals: vec![1.0],
            resource_arrivals: vec![1.0],
            omega: String::new(),
            prob: 1.0,
        }],
        action_sets: shared(vec![alloc(&[&[0.0]]), alloc(&[&[1.0]])]),
        service: ServiceSpec::Linear {
            gain: alloc(&[&[1.0]]),
        },
        cost: CostSpec::Linear {
            unit_price: vec![0.2],
        },
        reward_mean: RewardSpec::Proportional {
            weights: BTreeMap::from([(String::new(), vec![0.5])]),
        },
        reward_noise: NoiseModel::Deterministic,
        partial_service: PartialService::Linear,
        utilities: vec![Utility::ScaledLog { a: 1.0, c: 2.0 }],
        bounds: Bounds {
            a_max: 1.0,
            h_max: 1.0,
            r_max: 1.0,
            mu_max: 1.0,
            c_max: 0.2,
            b_max: 1.0,
            beta: 2.0,
            beta_mu_lower: 1.0,
            beta_mu_upper: 1.0,
        },
        gamma_grid: None,
        zeta: None,
    };
    SystemConfig::new(spec).expect("built-in instance")
}

/// Copy of `cfg` with every mean reward set to zero.
pub fn with_zero_rewards(cfg: &SystemConfig) -> SystemConfig {
    let mut spec = cfg.spec().clone();
    spec.reward_mean = RewardSpec::Table {
        entries: (0..cfg.num_states())
            .map(|k| {
                (
                    k.to_string(),
                    vec![vec![0.0; cfg.n_tasks()]; cfg.actions(k).len()],
                )
            })
            .collect(),
    };
    SystemConfig::new(spec).expect("zeroed rewards keep the shape")
}

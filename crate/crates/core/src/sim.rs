//! Slotted simulation: learning phase, control phase, per-slot trace,
//! runtime invariant checks and metrics.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dram::{assemble_dram, dram_slot, DramController};
use crate::dual::DualOptions;
use crate::error::{Error, Result};
use crate::learning::{perturbed_oracle, run_tbs, run_tls, RewardEstimate, StateEstimate};
use crate::model::{Allocation, DerivedConstants, SystemConfig, TOL};
use crate::policy::{ram_slot, PolicyParams, SlotRecord};
use crate::queueing::{QueueState, SlotInput};
use crate::rng;

/// Source of the reward table a controller trusts.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardLearner {
    Exact,
    /// Threshold sampling; `None` uses `⌈ln(V)²⌉` samples per pair.
    Tbs(Option<u64>),
    /// True table with `±δ_r` noise.
    Perturbed(f64),
    Given(RewardEstimate),
}

/// Source of the state distribution the shifted controller trusts.
#[derive(Clone, Debug, PartialEq)]
pub enum StateLearner {
    Exact,
    /// Time-limited sampling; `None` matches the reward learning time, or
    /// `⌈ln(V)²⌉` slots when rewards are not learned.
    Tls(Option<u64>),
    Given(StateEstimate),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec {
    /// Raw-queue controller with the true reward table.
    Ram,
    /// Raw-queue controller after reward learning.
    Lram(RewardLearner),
    /// Multiplier-shifted controller after learning.
    Dram {
        rewards: RewardLearner,
        states: StateLearner,
    },
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// `ram`, `lram`, `lram-<δ>`, `dram`, `dram-state`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ram" => Ok(PolicySpec::Ram),
            "lram" => Ok(PolicySpec::Lram(RewardLearner::Tbs(None))),
            "dram" => Ok(PolicySpec::Dram {
                rewards: RewardLearner::Tbs(None),
                states: StateLearner::Tls(None),
            }),
            "dram-state" => Ok(PolicySpec::Dram {
                rewards: RewardLearner::Exact,
                states: StateLearner::Tls(None),
            }),
            _ => {
                let delta = s
                    .strip_prefix("lram-")
                    .and_then(|d| d.parse::<f64>().ok())
                    .filter(|d| d.is_finite() && *d >= 0.0)
                    .ok_or_else(|| Error::Policy(format!("unknown policy {s:?}")))?;
                Ok(PolicySpec::Lram(RewardLearner::Perturbed(delta)))
            }
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Ram => write!(f, "ram"),
            PolicySpec::Lram(RewardLearner::Tbs(None)) => write!(f, "lram"),
            PolicySpec::Lram(RewardLearner::Tbs(Some(s))) => write!(f, "lram-tbs{s}"),
            PolicySpec::Lram(RewardLearner::Perturbed(d)) => write!(f, "lram-{d}"),
            PolicySpec::Lram(RewardLearner::Exact) => write!(f, "lram-exact"),
            PolicySpec::Lram(RewardLearner::Given(_)) => write!(f, "lram-given"),
            PolicySpec::Dram {
                rewards: RewardLearner::Tbs(None),
                states: StateLearner::Tls(None),
            } => write!(f, "dram"),
            PolicySpec::Dram {
                rewards: RewardLearner::Exact,
                states: StateLearner::Tls(None),
            } => write!(f, "dram-state"),
            PolicySpec::Dram { .. } => write!(f, "dram-custom"),
        }
    }
}

/// Default learning effort `⌈ln(V)²⌉`, at least one.
pub fn default_samples(v: f64) -> u64 {
    (v.ln().powi(2).ceil() as u64).max(1)
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Fail on the first invariant violation instead of counting.
    pub strict: bool,
    /// Check queue caps and full service for raw-queue controllers.
    pub monitor: bool,
    pub dual: DualOptions,
    pub serve_reduced: bool,
    /// Explicit shift for the shifted controller.
    pub zeta: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            strict: true,
            monitor: true,
            dual: DualOptions::default(),
            serve_reduced: false,
            zeta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config_hash: String,
    pub policy: String,
    pub v: f64,
    pub seed: u64,
    pub learn_time: u64,
    pub n_tasks: usize,
    pub m_resources: usize,
    pub theta1: f64,
    pub theta2: f64,
    /// Added to `(d, Q, H)` to get the vector the controller acts on.
    pub offsets: Vec<f64>,
    pub invariant_violations: u64,
}

/// Columnar per-slot record. Queue columns hold the state at the start of
/// each slot; `final_state` is the state after the last slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub header: TraceHeader,
    pub k: Vec<usize>,
    pub gamma: Vec<f64>,
    pub admitted: Vec<f64>,
    pub resource_admitted: Vec<f64>,
    /// Allocation spent, row-major `M×N` per slot.
    pub b: Vec<f64>,
    /// Service rate applied to the task queues.
    pub mu: Vec<f64>,
    /// Tasks served with reward.
    pub served: Vec<f64>,
    pub kappa: Vec<f64>,
    pub cost: Vec<f64>,
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub drop: Vec<bool>,
    pub final_state: QueueState,
}

fn row<T>(col: &[T], width: usize, t: usize) -> &[T] {
    &col[t * width..(t + 1) * width]
}

impl SimTrace {
    fn new(header: TraceHeader, horizon: usize) -> Self {
        let (n, m) = (header.n_tasks, header.m_resources);
        Self {
            k: Vec::with_capacity(horizon),
            gamma: Vec::with_capacity(horizon * n),
            admitted: Vec::with_capacity(horizon * n),
            resource_admitted: Vec::with_capacity(horizon * m),
            b: Vec::with_capacity(horizon * m * n),
            mu: Vec::with_capacity(horizon * n),
            served: Vec::with_capacity(horizon * n),
            kappa: Vec::with_capacity(horizon * n),
            cost: Vec::with_capacity(horizon),
            q: Vec::with_capacity(horizon * n),
            h: Vec::with_capacity(horizon * m),
            d: Vec::with_capacity(horizon * n),
            drop: Vec::with_capacity(horizon),
            final_state: QueueState::zeros(n, m),
            header,
        }
    }

    fn push(&mut self, qs: &QueueState, rec: &SlotRecord) {
        self.k.push(rec.k);
        self.gamma.extend_from_slice(&rec.gamma);
        self.admitted.extend_from_slice(&rec.admitted);
        self.resource_admitted.extend_from_slice(&rec.resource_admitted);
        self.b.extend_from_slice(rec.allocation.as_slice());
        self.mu.extend_from_slice(&rec.service);
        self.served.extend_from_slice(&rec.served);
        self.kappa.extend_from_slice(&rec.reward);
        self.cost.push(rec.cost);
        self.q.extend_from_slice(&qs.q);
        self.h.extend_from_slice(&qs.h);
        self.d.extend_from_slice(&qs.d);
        self.drop.push(rec.drop);
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    fn n(&self) -> usize {
        self.header.n_tasks
    }

    fn m(&self) -> usize {
        self.header.m_resources
    }

    /// Queue state at the start of slot `t` (`t == len()` gives the final state).
    pub fn queues(&self, t: usize) -> QueueState {
        if t == self.len() {
            return self.final_state.clone();
        }
        QueueState {
            q: row(&self.q, self.n(), t).to_vec(),
            h: row(&self.h, self.m(), t).to_vec(),
            d: row(&self.d, self.n(), t).to_vec(),
        }
    }

    /// The vector `(d, Q, H)` plus the controller's offsets at slot `t`.
    pub fn tracked(&self, t: usize) -> Vec<f64> {
        let s = self.queues(t);
        [s.d, s.q, s.h]
            .concat()
            .into_iter()
            .zip(&self.header.offsets)
            .map(|(x, o)| x + o)
            .collect()
    }

    pub fn allocation(&self, t: usize) -> Allocation {
        let (n, m) = (self.n(), self.m());
        let rows: Vec<Vec<f64>> = row(&self.b, m * n, t).chunks(n).map(<[f64]>::to_vec).collect();
        Allocation::from_rows(&rows).expect("trace allocation shape")
    }

    /// Re-applies the queue recursions to the logged decisions and checks
    /// that every logged queue value is reproduced exactly.
    pub fn replay(&self) -> Result<bool> {
        let (n, m) = (self.n(), self.m());
        for t in 0..self.len() {
            let b = self.allocation(t);
            let next = self.queues(t).step(SlotInput {
                service: row(&self.mu, n, t),
                admitted: row(&self.admitted, n, t),
                allocation: &b,
                resource_admitted: row(&self.resource_admitted, m, t),
                reward: row(&self.kappa, n, t),
                gamma: row(&self.gamma, n, t),
            })?;
            if next != self.queues(t + 1) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let (n, m) = (self.n(), self.m());
        let idx = |p: &'static str, c: usize| (1..=c).map(move |i| format!("{p}_{i}"));
        let mut cols = vec!["t".to_string(), "k".to_string()];
        cols.extend(idx("gamma", n));
        cols.extend(idx("R", n));
        cols.extend(idx("h", m));
        for i in 1..=m {
            for j in 1..=n {
                cols.push(format!("b_{i}{j}"));
            }
        }
        cols.extend(idx("mu", n));
        cols.extend(idx("kappa", n));
        cols.push("cost".into());
        cols.extend(idx("Q", n));
        cols.extend(idx("H", m));
        cols.extend(idx("d", n));
        cols.push("drop".into());
        cols
    }

    /// Writes the trace as CSV; `t` counts from the end of learning.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        let mut fields: Vec<String> = Vec::new();
        for t in 0..self.len() {
            fields.clear();
            fields.push((self.header.learn_time + t as u64).to_string());
            fields.push(self.k[t].to_string());
            let nums = [
                row(&self.gamma, n, t),
                row(&self.admitted, n, t),
                row(&self.resource_admitted, m, t),
                row(&self.b, m * n, t),
                row(&self.mu, n, t),
                row(&self.kappa, n, t),
                std::slice::from_ref(&self.cost[t]),
                row(&self.q, n, t),
                row(&self.h, m, t),
                row(&self.d, n, t),
            ];
            fields.extend(nums.iter().flat_map(|c| c.iter().map(f64::to_string)));
            fields.push(u8::from(self.drop[t]).to_string());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Controller {
    Raw(PolicyParams),
    Shifted(Box<DramController>),
}

fn learn_rewards(cfg: &SystemConfig, learner: &RewardLearner, v: f64, seed: u64) -> Result<RewardEstimate> {
    match learner {
        RewardLearner::Exact => Ok(RewardEstimate::exact(cfg)),
        RewardLearner::Tbs(s_th) => {
            let s = s_th.unwrap_or_else(|| default_samples(v));
            run_tbs(cfg, s, &mut rng::stream(seed, rng::LEARNING))
        }
        RewardLearner::Perturbed(delta) => Ok(perturbed_oracle(
            cfg,
            *delta,
            &mut rng::stream(seed, rng::PERTURBATION),
        )),
        RewardLearner::Given(est) => Ok(est.clone()),
    }
}

fn learn_states(
    cfg: &SystemConfig,
    learner: &StateLearner,
    v: f64,
    seed: u64,
    reward_time: u64,
) -> Result<StateEstimate> {
    match learner {
        StateLearner::Exact => Ok(StateEstimate::exact(cfg)),
        StateLearner::Tls(t_th) => {
            let t = t_th.unwrap_or(if reward_time > 0 {
                reward_time
            } else {
                default_samples(v)
            });
            run_tls(cfg, t, &mut rng::stream(seed, rng::STATE_LEARNING))
        }
        StateLearner::Given(est) => Ok(est.clone()),
    }
}

/// Runs the learning phase (if any), resets the queues and simulates
/// `horizon` control slots.
pub fn run_sim(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    v: f64,
    horizon: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimTrace> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let (n, m) = (cfg.n_tasks(), cfg.m_resources());
    let (controller, learn_time) = match policy {
        PolicySpec::Ram => (
            Controller::Raw(PolicyParams::new(cfg, v, cfg.reward_mean().clone())?),
            0,
        ),
        PolicySpec::Lram(learner) => {
            let est = learn_rewards(cfg, learner, v, seed)?;
            let t = est.learn_time;
            (Controller::Raw(PolicyParams::new(cfg, v, est.table)?), t)
        }
        PolicySpec::Dram { rewards, states } => {
            let r = learn_rewards(cfg, rewards, v, seed)?;
            let s = learn_states(cfg, states, v, seed, r.learn_time)?;
            let mut c = assemble_dram(cfg, v, r, s, &opts.dual, opts.zeta)?;
            c.serve_reduced = opts.serve_reduced;
            let t = c.learn_time;
            (Controller::Shifted(Box::new(c)), t)
        }
    };
    let (params, offsets) = match &controller {
        Controller::Raw(p) => (p, vec![0.0; 2 * n + m]),
        Controller::Shifted(c) => (&c.params, c.shift.offsets()),
    };
    let header = TraceHeader {
        config_hash: cfg.hash(),
        policy: policy.to_string(),
        v,
        seed,
        learn_time,
        n_tasks: n,
        m_resources: m,
        theta1: params.theta1,
        theta2: params.theta2,
        offsets,
        invariant_violations: 0,
    };
    let caps = params.constants(cfg)?;
    let mu_max = cfg.bounds().mu_max;

    let mut trace = SimTrace::new(header, horizon);
    let mut state_rng = rng::stream(seed, rng::CONTROL_STATE);
    let mut reward_rng = rng::stream(seed, rng::CONTROL_REWARD);
    let mut qs = QueueState::zeros(n, m);
    for t in 0..horizon {
        let k = cfg.draw_state(&mut state_rng);
        let (rec, next) = match &controller {
            Controller::Raw(p) => ram_slot(cfg, p, k, &qs, &mut reward_rng)?,
            Controller::Shifted(c) => dram_slot(
                cfg,
                &c.params,
                &c.shift,
                k,
                &qs,
                &mut reward_rng,
                c.serve_reduced,
            )?,
        };
        if opts.monitor && matches!(controller, Controller::Raw(_)) {
            let problems = slot_violations(&qs, &rec, &caps, mu_max);
            if !problems.is_empty() {
                if opts.strict {
                    return Err(Error::Invariant {
                        slot: learn_time + t as u64,
                        detail: problems.join("; "),
                    });
                }
                trace.header.invariant_violations += problems.len() as u64;
            }
        }
        trace.push(&qs, &rec);
        qs = next;
    }
    if opts.monitor && matches!(controller, Controller::Raw(_)) {
        let problems = cap_violations(&qs, &caps);
        if !problems.is_empty() {
            if opts.strict {
                return Err(Error::Invariant {
                    slot: learn_time + horizon as u64,
                    detail: problems.join("; "),
                });
            }
            trace.header.invariant_violations += problems.len() as u64;
        }
    }
    trace.final_state = qs;
    Ok(trace)
}

fn cap_violations(qs: &QueueState, caps: &DerivedConstants) -> Vec<String> {
    let mut out = Vec::new();
    for (n, &d) in qs.d.iter().enumerate() {
        if d > caps.d_max + TOL {
            out.push(format!("d_{n} = {d} exceeds {}", caps.d_max));
        }
    }
    for (n, &q) in qs.q.iter().enumerate() {
        if q > caps.q_cap + TOL {
            out.push(format!("Q_{n} = {q} exceeds {}", caps.q_cap));
        }
    }
    for (m, &h) in qs.h.iter().enumerate() {
        if h > caps.h_cap + TOL {
            out.push(format!("H_{m} = {h} exceeds {}", caps.h_cap));
        }
    }
    out
}

/// Caps at the start of the slot, full service, no service to short queues.
fn slot_violations(
    qs: &QueueState,
    rec: &SlotRecord,
    caps: &DerivedConstants,
    mu_max: f64,
) -> Vec<String> {
    let mut out = cap_violations(qs, caps);
    for n in 0..qs.q.len() {
        if rec.served[n] != rec.service[n] {
            out.push(format!(
                "queue {n} served {} of nominal {}",
                rec.served[n], rec.service[n]
            ));
        }
        if qs.q[n] < mu_max && rec.service[n] > 0.0 {
            out.push(format!("queue {n} with backlog {} was served", qs.q[n]));
        }
    }
    for (m, &h) in qs.h.iter().enumerate() {
        let used = rec.allocation.row_sum(m);
        if used > h + TOL {
            out.push(format!("resource {m} spends {used} of {h}"));
        }
    }
    out
}

/// Steady-state summary of a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub policy: String,
    pub v: f64,
    pub seed: u64,
    pub learn_time: u64,
    pub slots: usize,
    pub burn_in: usize,
    /// `Σ_n U_n(mean κ_n) − mean cost`.
    pub f_av: f64,
    pub mean_reward: Vec<f64>,
    pub mean_cost: f64,
    pub mean_q: Vec<f64>,
    pub mean_h: Vec<f64>,
    pub mean_d: Vec<f64>,
    pub max_q: f64,
    pub max_h: f64,
    pub max_d: f64,
    pub drop_fraction: f64,
    pub invariant_violations: u64,
}

impl Metrics {
    pub fn total_q(&self) -> f64 {
        self.mean_q.iter().sum()
    }

    pub fn total_h(&self) -> f64 {
        self.mean_h.iter().sum()
    }

    pub fn total_d(&self) -> f64 {
        self.mean_d.iter().sum()
    }
}

/// Default burn-in: the first 20% of the control slots.
pub fn default_burn_in(horizon: usize) -> usize {
    horizon / 5
}

fn column_means(col: &[f64], width: usize, from: usize, to: usize) -> Vec<f64> {
    let mut sums = vec![0.0; width];
    for t in from..to {
        sums.iter_mut()
            .zip(row(col, width, t))
            .for_each(|(s, x)| *s += x);
    }
    sums.iter().map(|s| s / (to - from) as f64).collect()
}

fn column_max(col: &[f64], width: usize, from: usize, to: usize) -> f64 {
    col[from * width..to * width].iter().copied().fold(0.0, f64::max)
}

/// Averages over slots `[burn_in, len)`.
pub fn summarize(trace: &SimTrace, cfg: &SystemConfig, burn_in: usize) -> Result<Metrics> {
    let len = trace.len();
    if burn_in >= len {
        return Err(Error::Config(format!("burn-in {burn_in} leaves no slots of {len}")));
    }
    let (n, m) = (trace.n(), trace.m());
    let mean_reward = column_means(&trace.kappa, n, burn_in, len);
    let mean_cost = column_means(&trace.cost, 1, burn_in, len)[0];
    let f_av = cfg
        .utilities()
        .iter()
        .zip(&mean_reward)
        .map(|(u, &r)| u.value(r))
        .sum::<f64>()
        - mean_cost;
    let drops = trace.drop[burn_in..].iter().filter(|&&d| d).count();
    Ok(Metrics {
        policy: trace.header.policy.clone(),
        v: trace.header.v,
        seed: trace.header.seed,
        learn_time: trace.header.learn_time,
        slots: len,
        burn_in,
        f_av,
        mean_reward,
        mean_cost,
        mean_q: column_means(&trace.q, n, burn_in, len),
        mean_h: column_means(&trace.h, m, burn_in, len),
        mean_d: column_means(&trace.d, n, burn_in, len),
        max_q: column_max(&trace.q, n, burn_in, len),
        max_h: column_max(&trace.h, m, burn_in, len),
        max_d: column_max(&trace.d, n, burn_in, len),
        drop_fraction: drops as f64 / (len - burn_in) as f64,
        invariant_violations: trace.header.invariant_violations,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// First slot (learning slots included) at which the tracked vector is
/// within `radius` of `target`, given in `(d, Q, H)` queue coordinates.
pub fn convergence_time(trace: &SimTrace, target: &[f64], radius: f64) -> Option<u64> {
    (0..=trace.len())
        .find(|&t| distance(&trace.tracked(t), target) <= radius)
        .map(|t| trace.header.learn_time + t as u64)
}

/// Mean distance of the tracked vector from `target` over slots `[from, len)`.
pub fn residual_radius(trace: &SimTrace, target: &[f64], from: usize) -> f64 {
    let len = trace.len();
    (from..len)
        .map(|t| distance(&trace.tracked(t), target))
        .sum::<f64>()
        / (len - from).max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn policy_names_round_trip() {
        for s in ["ram", "lram", "lram-0.1", "dram", "dram-state", "lram-0"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<PolicySpec>().is_err());
        assert!("lram--1".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = instances::two_state_matching();
        let p: PolicySpec = "dram".parse().unwrap();
        let a = run_sim(&cfg, &p, 20.0, 2000, 3, &SimOptions::default()).unwrap();
        let b = run_sim(&cfg, &p, 20.0, 2000, 3, &SimOptions::default()).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(a.replay().unwrap());
    }

    #[test]
    fn exact_perturbation_equals_ram() {
        let cfg = instances::two_state_matching();
        let a = run_sim(&cfg, &PolicySpec::Ram, 30.0, 3000, 8, &SimOptions::default()).unwrap();
        let b = run_sim(&cfg, &"lram-0".parse().unwrap(), 30.0, 3000, 8, &SimOptions::default()).unwrap();
        assert_eq!(a.k, b.k);
        assert_eq!(a.q, b.q);
        assert_eq!(a.kappa, b.kappa);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn csv_header_layout() {
        let cfg = instances::two_state_matching();
        let tr = run_sim(&cfg, &PolicySpec::Ram, 10.0, 5, 0, &SimOptions::default()).unwrap();
        assert_eq!(
            tr.csv_header().join(","),
            "t,k,gamma_1,gamma_2,R_1,R_2,h_1,b_11,b_12,mu_1,mu_2,kappa_1,kappa_2,cost,Q_1,Q_2,H_1,d_1,d_2,drop"
        );
    }

    #[test]
    fn infinite_radius_converges_immediately() {
        let cfg = instances::two_state_matching();
        let tr = run_sim(&cfg, &PolicySpec::Ram, 10.0, 50, 0, &SimOptions::default()).unwrap();
        assert_eq!(convergence_time(&tr, &[0.0; 5], f64::INFINITY), Some(0));
        assert_eq!(convergence_time(&tr, &[1e9; 5], 1.0), None);
    }

    #[test]
    fn summary_of_constant_trace() {
        let cfg = instances::two_state_matching();
        let mut tr = run_sim(&cfg, &PolicySpec::Ram, 10.0, 10, 0, &SimOptions::default()).unwrap();
        tr.kappa.iter_mut().for_each(|x| *x = 0.5);
        tr.cost.iter_mut().for_each(|x| *x = 0.25);
        tr.q.iter_mut().for_each(|x| *x = 3.0);
        let s = summarize(&tr, &cfg, 2).unwrap();
        assert_eq!(s.mean_reward, vec![0.5, 0.5]);
        assert_eq!(s.mean_cost, 0.25);
        assert_eq!(s.mean_q, vec![3.0, 3.0]);
        let u = cfg.utilities();
        assert!((s.f_av - (u[0].value(0.5) + u[1].value(0.5) - 0.25)).abs() < 1e-12);
        assert!(summarize(&tr, &cfg, 10).is_err());
    }

    #[test]
    fn drops_never_happen_on_raw_queues() {
        let cfg = instances::two_state_matching();
        let tr = run_sim(&cfg, &"lram".parse().unwrap(), 50.0, 20_000, 1, &SimOptions::default()).unwrap();
        assert!(tr.drop.iter().all(|d| !d));
        assert!(tr.header.learn_time > 0);
    }
}

//! Problem instances: states, allocation sets, service/cost/reward primitives
//! and the constants the controllers derive from them.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance for invariant checks on queue and reward quantities.
pub const TOL: f64 = 1e-9;

/// Matching matrix `b`: row `m` is resource type, column `n` is task queue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Allocation {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Allocation {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Config(format!(
                "allocation must be a non-empty rectangular matrix, got {rows:?}"
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.cols + n]
    }

    pub fn set(&mut self, m: usize, n: usize, value: f64) {
        self.data[m * self.cols + n] = value;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }

    pub fn row_sum(&self, m: usize) -> f64 {
        self.row(m).iter().sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// Copy with entry `(m, n)` set to zero.
    pub fn with_zeroed(&self, m: usize, n: usize) -> Self {
        let mut out = self.clone();
        out.set(m, n, 0.0);
        out
    }

    /// Positive entries as `(m, n, value)`.
    pub fn positive_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (i / self.cols, i % self.cols, v))
    }

    /// Row-major lexicographic order.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    /// Entrywise `self ⪯ other`.
    pub fn dominated_by(&self, other: &Self) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| a <= b)
    }

    pub fn same_shape(&self, rows: usize, cols: usize) -> bool {
        self.rows == rows && self.cols == cols
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl TryFrom<Vec<Vec<f64>>> for Allocation {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<Allocation> for Vec<Vec<f64>> {
    fn from(a: Allocation) -> Self {
        a.data.chunks(a.cols).map(<[f64]>::to_vec).collect()
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for m in 0..self.rows {
            if m > 0 {
                write!(f, ",")?;
            }
            write!(f, "[")?;
            for (i, x) in self.row(m).iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Concave increasing utility with `U(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    /// `a·ln(1 + c·r)`
    ScaledLog { a: f64, c: f64 },
    /// `a·r`
    Linear { a: f64 },
}

impl Utility {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Utility::ScaledLog { a, c } => a * (c * r).ln_1p(),
            Utility::Linear { a } => a * r,
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            Utility::ScaledLog { a, c } => a * c / (1.0 + c * r),
            Utility::Linear { a } => a,
        }
    }

    /// Largest slope, attained at the origin.
    pub fn max_derivative(&self) -> f64 {
        self.derivative(0.0)
    }

    /// Maximizer of `v·U(γ) − price·γ` over `[0, upper]`.
    ///
    /// Closed form from the first-order condition `v·U'(γ) = price`. A
    /// non-positive price makes the upper end optimal. Linear utilities with
    /// `v·a == price` return 0.
    pub fn penalized_argmax(&self, v: f64, price: f64, upper: f64) -> f64 {
        if price <= 0.0 {
            return upper;
        }
        match *self {
            Utility::ScaledLog { a, c } => (v * a / price - 1.0 / c).clamp(0.0, upper),
            Utility::Linear { a } => {
                if v * a > price {
                    upper
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bound constants of the instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub a_max: f64,
    pub h_max: f64,
    pub r_max: f64,
    pub mu_max: f64,
    pub c_max: f64,
    pub b_max: f64,
    /// Upper bound on every utility derivative.
    pub beta: f64,
    /// Lower service slope: a positive rate needs at least this much per unit.
    pub beta_mu_lower: f64,
    /// Upper service slope: removing `b_mn` lowers any rate by at most this much per unit.
    pub beta_mu_upper: f64,
}

/// Distribution of the realized reward `κ_n` around its mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `low·mean` or `high·mean` with equal probability.
    TwoPoint { low: f64, high: f64 },
    Deterministic,
    /// Gaussian with standard deviation `rel_sd·mean`, clamped symmetrically
    /// around the mean so that the mean is preserved and `κ ∈ [0, r_max]`.
    TruncatedGaussian { rel_sd: f64 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::TwoPoint {
            low: 0.5,
            high: 1.5,
        }
    }
}

impl NoiseModel {
    /// Largest value the model can produce for a given mean.
    pub fn support_max(&self, mean: f64, r_max: f64) -> f64 {
        match *self {
            NoiseModel::TwoPoint { low, high } => mean * low.max(high),
            NoiseModel::Deterministic => mean,
            NoiseModel::TruncatedGaussian { .. } => mean + mean.min(r_max - mean).max(0.0),
        }
    }

    /// Always consumes exactly one uniform draw (plus one normal draw for the
    /// Gaussian model), whatever the mean.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mean: f64, r_max: f64) -> f64 {
        let u: f64 = rng.random();
        match *self {
            NoiseModel::TwoPoint { low, high } => {
                if u < 0.5 {
                    low * mean
                } else {
                    high * mean
                }
            }
            NoiseModel::Deterministic => mean,
            NoiseModel::TruncatedGaussian { rel_sd } => {
                let half_width = mean.min(r_max - mean).max(0.0);
                if half_width == 0.0 || rel_sd <= 0.0 {
                    return mean;
                }
                let normal = Normal::new(mean, rel_sd * mean).expect("finite deviation");
                normal
                    .sample(rng)
                    .clamp(mean - half_width, mean + half_width)
            }
        }
    }
}

/// Reward when a queue is served less than the allocation's nominal rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialService {
    /// `r(k, μ̃) = r(k, μ)·μ̃/μ`
    #[default]
    Linear,
    /// No reward unless the nominal rate is fully served.
    AllOrNothing,
}

/// Shift applied to the multiplier in the shifted controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaRule {
    /// `ln(V)²`
    LogSquared,
    /// `2·max(δ_z·V·ln(V)², ln(V)²)`
    General,
    Fixed(f64),
}

impl ZetaRule {
    pub fn resolve(self, v: f64, delta_z: f64) -> f64 {
        let log_sq = v.ln().powi(2);
        match self {
            ZetaRule::LogSquared => log_sq,
            ZetaRule::General => 2.0 * (delta_z * v * log_sq).max(log_sq),
            ZetaRule::Fixed(z) => z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub arrivals: Vec<f64>,
    pub resource_arrivals: Vec<f64>,
    #[serde(default)]
    pub omega: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServicePoint {
    pub b: Allocation,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub b: Allocation,
    pub cost: f64,
}

/// Service map `μ(k, b)`. Table entries are keyed by state index, with `"*"`
/// shared by states that have no entry of their own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceSpec {
    /// `μ_n = Σ_m gain_mn·b_mn`
    Linear { gain: Allocation },
    Table {
        entries: BTreeMap<String, Vec<ServicePoint>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `c = Σ_m unit_price_m·Σ_n b_mn`
    Linear { unit_price: Vec<f64> },
    Table {
        entries: BTreeMap<String, Vec<CostPoint>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// `r_n(k, b) = w_n(ω_k)·μ_n(k, b)`, weights keyed by the state label.
    Proportional { weights: BTreeMap<String, Vec<f64>> },
    /// Explicit means, one row per allocation of the state's action list.
    Table {
        entries: BTreeMap<String, Vec<Vec<f64>>>,
    },
}

/// On-disk form of a [`SystemConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpec {
    pub n_tasks: usize,
    pub m_resources: usize,
    pub states: Vec<StateSpec>,
    /// Allocation sets keyed by state index; `"*"` covers the rest.
    pub action_sets: BTreeMap<String, Vec<Allocation>>,
    pub service: ServiceSpec,
    pub cost: CostSpec,
    pub reward_mean: RewardSpec,
    #[serde(default)]
    pub reward_noise: NoiseModel,
    #[serde(default)]
    pub partial_service: PartialService,
    pub utilities: Vec<Utility>,
    pub bounds: Bounds,
    /// Finite domain for the auxiliary reward targets; continuous when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<ZetaRule>,
}

fn keyed<T>(map: &BTreeMap<String, T>, k: usize) -> Option<&T> {
    map.get(&k.to_string()).or_else(|| map.get("*"))
}

/// Mean reward table over `(state, allocation index, task)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    values: Vec<Vec<Vec<f64>>>,
}

impl RewardTable {
    pub fn new(values: Vec<Vec<Vec<f64>>>) -> Self {
        Self { values }
    }

    pub fn get(&self, k: usize, j: usize, n: usize) -> f64 {
        self.values[k][j][n]
    }

    pub fn set(&mut self, k: usize, j: usize, n: usize, value: f64) {
        self.values[k][j][n] = value;
    }

    pub fn row(&self, k: usize, j: usize) -> &[f64] {
        &self.values[k][j]
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn num_actions(&self, k: usize) -> usize {
        self.values[k].len()
    }

    /// `max |self − other|` over all entries.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries()
            .zip(other.entries())
            .map(|((_, a), (_, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Entries as `((k, j, n), value)` in index order.
    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.values.iter().enumerate().flat_map(|(k, actions)| {
            actions.iter().enumerate().flat_map(move |(j, row)| {
                row.iter().enumerate().map(move |(n, &v)| ((k, j, n), v))
            })
        })
    }

    pub fn zeros_like(cfg: &SystemConfig) -> Self {
        let values = (0..cfg.num_states())
            .map(|k| vec![vec![0.0; cfg.n_tasks()]; cfg.actions(k).len()])
            .collect();
        Self { values }
    }

    /// Shape matches the instance's allocation sets.
    pub fn fits(&self, cfg: &SystemConfig) -> bool {
        self.values.len() == cfg.num_states()
            && self.values.iter().enumerate().all(|(k, a)| {
                a.len() == cfg.actions(k).len() && a.iter().all(|r| r.len() == cfg.n_tasks())
            })
    }
}

/// Precomputed quantities for one allocation of one state.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionInfo {
    pub allocation: Allocation,
    /// `μ_n(k, b)`
    pub service: Vec<f64>,
    pub cost: f64,
    /// `Σ_n b_mn` per resource.
    pub usage: Vec<f64>,
}

/// A validated, immutable problem instance.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    spec: ConfigSpec,
    actions: Vec<Vec<ActionInfo>>,
    lex_order: Vec<Vec<usize>>,
    reward_mean: RewardTable,
    cumulative: Vec<f64>,
}

impl SystemConfig {
    /// Builds the instance. Only structural problems (shapes, undefined
    /// service or cost on a listed allocation, missing reward entries) fail
    /// here; modeling assumptions are reported by [`validate_config`].
    pub fn new(spec: ConfigSpec) -> Result<Self> {
        let n = spec.n_tasks;
        let m = spec.m_resources;
        if n == 0 || m == 0 {
            return Err(Error::Config("n_tasks and m_resources must be positive".into()));
        }
        if spec.states.is_empty() {
            return Err(Error::Config("at least one state is required".into()));
        }
        if spec.utilities.len() != n {
            return Err(Error::Config(format!(
                "expected {n} utilities, found {}",
                spec.utilities.len()
            )));
        }
        for (k, s) in spec.states.iter().enumerate() {
            if s.arrivals.len() != n || s.resource_arrivals.len() != m {
                return Err(Error::Config(format!(
                    "state {k}: arrivals must have length {n} and resource_arrivals length {m}"
                )));
            }
            if !s.prob.is_finite() {
                return Err(Error::Config(format!("state {k}: probability is not finite")));
            }
        }
        for key in spec.action_sets.keys() {
            if key != "*" && key.parse::<usize>().map_or(true, |k| k >= spec.states.len()) {
                return Err(Error::Config(format!("action_sets: unknown state key {key:?}")));
            }
        }
        if let Some(grid) = &spec.gamma_grid {
            if grid.is_empty() || grid.iter().any(|g| !g.is_finite()) {
                return Err(Error::Config("gamma_grid must be non-empty and finite".into()));
            }
        }

        let mut cfg = Self {
            spec,
            actions: Vec::new(),
            lex_order: Vec::new(),
            reward_mean: RewardTable::new(Vec::new()),
            cumulative: Vec::new(),
        };

        let mut actions = Vec::with_capacity(cfg.num_states());
        for k in 0..cfg.num_states() {
            let set = keyed(&cfg.spec.action_sets, k)
                .ok_or_else(|| Error::Config(format!("no action set for state {k}")))?;
            let mut infos = Vec::with_capacity(set.len());
            for b in set {
                if !b.same_shape(m, n) {
                    return Err(Error::Config(format!(
                        "state {k}: allocation {b} is not {m}x{n}"
                    )));
                }
                let service = cfg.service_at(k, b).ok_or_else(|| Error::UndefinedService {
                    state: k,
                    allocation: b.to_string(),
                })?;
                let cost = cfg.cost_at(k, b).ok_or_else(|| Error::UndefinedCost {
                    state: k,
                    allocation: b.to_string(),
                })?;
                let usage = (0..m).map(|r| b.row_sum(r)).collect();
                infos.push(ActionInfo {
                    allocation: b.clone(),
                    service,
                    cost,
                    usage,
                });
            }
            actions.push(infos);
        }
        cfg.lex_order = actions
            .iter()
            .map(|infos| {
                let mut idx: Vec<usize> = (0..infos.len()).collect();
                idx.sort_by(|&a, &b| infos[a].allocation.lex_cmp(&infos[b].allocation));
                idx
            })
            .collect();
        cfg.actions = actions;
        cfg.reward_mean = cfg.materialize_rewards()?;
        cfg.cumulative = rng::cumulative(&cfg.probs());
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("config spec serializes")
    }

    fn materialize_rewards(&self) -> Result<RewardTable> {
        let mut values = Vec::with_capacity(self.num_states());
        for k in 0..self.num_states() {
            let rows = match &self.spec.reward_mean {
                RewardSpec::Proportional { weights } => {
                    let omega = &self.spec.states[k].omega;
                    let w = weights.get(omega).ok_or_else(|| {
                        Error::Config(format!("reward_mean: no weights for state label {omega:?}"))
                    })?;
                    if w.len() != self.n_tasks() {
                        return Err(Error::Config(format!(
                            "reward_mean: weights for {omega:?} must have length {}",
                            self.n_tasks()
                        )));
                    }
                    self.actions[k]
                        .iter()
                        .map(|a| a.service.iter().zip(w).map(|(mu, w)| mu * w).collect())
                        .collect::<Vec<Vec<f64>>>()
                }
                RewardSpec::Table { entries } => {
                    let rows = keyed(entries, k).ok_or_else(|| {
                        Error::Config(format!("reward_mean: no entries for state {k}"))
                    })?;
                    if rows.len() != self.actions[k].len()
                        || rows.iter().any(|r| r.len() != self.n_tasks())
                    {
                        return Err(Error::Config(format!(
                            "reward_mean: state {k} needs {} rows of length {}",
                            self.actions[k].len(),
                            self.n_tasks()
                        )));
                    }
                    rows.clone()
                }
            };
            values.push(rows);
        }
        Ok(RewardTable::new(values))
    }

    pub fn spec(&self) -> &ConfigSpec {
        &self.spec
    }

    /// Short content hash of the on-disk form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.spec).expect("config spec serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn n_tasks(&self) -> usize {
        self.spec.n_tasks
    }

    pub fn m_resources(&self) -> usize {
        self.spec.m_resources
    }

    pub fn num_states(&self) -> usize {
        self.spec.states.len()
    }

    pub fn state(&self, k: usize) -> &StateSpec {
        &self.spec.states[k]
    }

    pub fn probs(&self) -> Vec<f64> {
        self.spec.states.iter().map(|s| s.prob).collect()
    }

    pub fn actions(&self, k: usize) -> &[ActionInfo] {
        &self.actions[k]
    }

    pub fn action(&self, k: usize, j: usize) -> &ActionInfo {
        &self.actions[k][j]
    }

    /// Allocation indices of state `k` in row-major lexicographic order.
    pub fn lex_order(&self, k: usize) -> &[usize] {
        &self.lex_order[k]
    }

    pub fn reward_mean(&self) -> &RewardTable {
        &self.reward_mean
    }

    pub fn utilities(&self) -> &[Utility] {
        &self.spec.utilities
    }

    pub fn bounds(&self) -> &Bounds {
        &self.spec.bounds
    }

    pub fn noise(&self) -> NoiseModel {
        self.spec.reward_noise
    }

    pub fn partial_service(&self) -> PartialService {
        self.spec.partial_service
    }

    pub fn gamma_grid(&self) -> Option<&[f64]> {
        self.spec.gamma_grid.as_deref()
    }

    pub fn zeta_rule(&self) -> Option<ZetaRule> {
        self.spec.zeta
    }

    /// Index of `b` in the allocation set of state `k`.
    pub fn find_action(&self, k: usize, b: &Allocation) -> Option<usize> {
        self.actions[k].iter().position(|a| a.allocation == *b)
    }

    /// `μ(k, b)` for any `M×N` matrix, `None` where a table has no entry.
    pub fn service_at(&self, k: usize, b: &Allocation) -> Option<Vec<f64>> {
        match &self.spec.service {
            ServiceSpec::Linear { gain } => Some(
                (0..self.n_tasks())
                    .map(|n| {
                        (0..self.m_resources())
                            .map(|m| gain.get(m, n) * b.get(m, n))
                            .sum()
                    })
                    .collect(),
            ),
            ServiceSpec::Table { entries } => keyed(entries, k)?
                .iter()
                .find(|p| p.b == *b)
                .map(|p| p.mu.clone()),
        }
    }

    pub fn cost_at(&self, k: usize, b: &Allocation) -> Option<f64> {
        match &self.spec.cost {
            CostSpec::Linear { unit_price } => Some(
                unit_price
                    .iter()
                    .enumerate()
                    .map(|(m, p)| p * b.row_sum(m))
                    .sum(),
            ),
            CostSpec::Table { entries } => keyed(entries, k)?
                .iter()
                .find(|p| p.b == *b)
                .map(|p| p.cost),
        }
    }

    pub fn draw_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng::draw_index(rng, &self.cumulative)
    }

    /// `Σ_k π_k A^k_n` and `Σ_k π_k e^k_m` under the given distribution.
    pub fn mean_arrivals(&self, probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; self.n_tasks()];
        let mut e = vec![0.0; self.m_resources()];
        for (s, p) in self.spec.states.iter().zip(probs) {
            a.iter_mut().zip(&s.arrivals).for_each(|(x, v)| *x += p * v);
            e.iter_mut()
                .zip(&s.resource_arrivals)
                .for_each(|(x, v)| *x += p * v);
        }
        (a, e)
    }
}

/// Mean reward of task `n` when allocation `j` of state `k` serves `served`
/// tasks, read from `table` and adjusted for partial service.
pub fn reward_at(
    cfg: &SystemConfig,
    table: &RewardTable,
    k: usize,
    j: usize,
    n: usize,
    served: f64,
) -> f64 {
    let nominal = cfg.action(k, j).service[n];
    let full = table.get(k, j, n);
    if served >= nominal {
        full
    } else if served <= 0.0 || nominal <= 0.0 {
        0.0
    } else {
        match cfg.partial_service() {
            PartialService::Linear => full * served / nominal,
            PartialService::AllOrNothing => 0.0,
        }
    }
}

/// Draws `κ` for allocation `j` in state `k` with realized service `served`.
pub fn sample_reward<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SystemConfig,
    k: usize,
    j: usize,
    served: &[f64],
) -> Result<Vec<f64>> {
    let r_max = cfg.bounds().r_max;
    let noise = cfg.noise();
    (0..cfg.n_tasks())
        .map(|n| {
            let mean = reward_at(cfg, cfg.reward_mean(), k, j, n, served[n]);
            if mean > r_max + TOL {
                return Err(Error::RewardOutOfRange { task: n, mean, r_max });
            }
            let kappa = noise.sample(rng, mean, r_max);
            if kappa > r_max + TOL || kappa < 0.0 {
                return Err(Error::RewardOutOfRange {
                    task: n,
                    mean: kappa,
                    r_max,
                });
            }
            Ok(kappa)
        })
        .collect()
}

/// Which modeling assumption a [`Violation`] breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    ProbabilitySum,
    ProbabilityPositive,
    ZeroAction,
    AllocationBound,
    ArrivalBound,
    ResourceArrivalBound,
    ServiceRange,
    ServiceAtZero,
    ServiceLowerSlope,
    ServiceUpperSlope,
    ServiceUndefined,
    CostRange,
    CostMonotone,
    RewardRange,
    RewardMonotone,
    UtilityShape,
    NoiseSupport,
    GammaGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub condition: Condition,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.condition, self.detail)
    }
}

/// Checks every modeling assumption and returns the ones that fail.
pub fn validate_config(cfg: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |condition, detail: String| out.push(Violation { condition, detail });
    let bd = cfg.bounds();
    let (n_tasks, m_res) = (cfg.n_tasks(), cfg.m_resources());

    let total: f64 = cfg.probs().iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        flag(Condition::ProbabilitySum, format!("probabilities sum to {total}"));
    }
    for (k, s) in cfg.spec.states.iter().enumerate() {
        if s.prob <= 0.0 {
            flag(Condition::ProbabilityPositive, format!("state {k} has probability {}", s.prob));
        }
        if let Some(n) = s.arrivals.iter().position(|&a| a < 0.0 || a > bd.a_max + TOL) {
            flag(
                Condition::ArrivalBound,
                format!("state {k}: A_{n} = {} outside [0, {}]", s.arrivals[n], bd.a_max),
            );
        }
        if let Some(m) = s
            .resource_arrivals
            .iter()
            .position(|&e| e < 0.0 || e > bd.h_max + TOL)
        {
            flag(
                Condition::ResourceArrivalBound,
                format!(
                    "state {k}: e_{m} = {} outside [0, {}]",
                    s.resource_arrivals[m], bd.h_max
                ),
            );
        }
    }

    let zero = Allocation::zeros(m_res, n_tasks);
    for k in 0..cfg.num_states() {
        let acts = cfg.actions(k);
        if !acts.iter().any(|a| a.allocation.is_zero()) {
            flag(Condition::ZeroAction, format!("B_{k} lacks the zero allocation"));
        }
        match cfg.service_at(k, &zero) {
            Some(mu) if mu.iter().any(|&x| x != 0.0) => flag(
                Condition::ServiceAtZero,
                format!("state {k}: μ(k, 0) = {mu:?}"),
            ),
            None => flag(
                Condition::ServiceUndefined,
                format!("state {k}: service undefined at the zero allocation"),
            ),
            _ => {}
        }

        for (j, a) in acts.iter().enumerate() {
            let b = &a.allocation;
            if b.as_slice().iter().any(|&x| x < 0.0) || b.max_entry() > bd.b_max + TOL {
                flag(
                    Condition::AllocationBound,
                    format!("state {k}, allocation {j} = {b}: entries outside [0, {}]", bd.b_max),
                );
            }
            if a.cost < 0.0 || a.cost > bd.c_max + TOL {
                flag(
                    Condition::CostRange,
                    format!("state {k}, allocation {j}: cost {} outside [0, {}]", a.cost, bd.c_max),
                );
            }
            for (n, &mu) in a.service.iter().enumerate() {
                if mu < 0.0 || mu > bd.mu_max + TOL {
                    flag(
                        Condition::ServiceRange,
                        format!("state {k}, allocation {j}: μ_{n} = {mu} outside [0, {}]", bd.mu_max),
                    );
                }
                if mu > 0.0 {
                    let min_pos = (0..m_res)
                        .map(|m| b.get(m, n))
                        .filter(|&x| x > 0.0)
                        .fold(f64::INFINITY, f64::min);
                    if !min_pos.is_finite() || mu < bd.beta_mu_lower * min_pos - TOL {
                        flag(
                            Condition::ServiceLowerSlope,
                            format!(
                                "state {k}, allocation {j}: μ_{n} = {mu} below β_μ^l·min_m b_mn"
                            ),
                        );
                    }
                }
                let r = cfg.reward_mean().get(k, j, n);
                if r < 0.0 || r > bd.r_max + TOL {
                    flag(
                        Condition::RewardRange,
                        format!("state {k}, allocation {j}: r_{n} = {r} outside [0, {}]", bd.r_max),
                    );
                }
                if mu == 0.0 && r != 0.0 {
                    flag(
                        Condition::RewardRange,
                        format!("state {k}, allocation {j}: r_{n} = {r} with zero service"),
                    );
                }
                let top = cfg.noise().support_max(r, bd.r_max);
                if top > bd.r_max + TOL {
                    flag(
                        Condition::NoiseSupport,
                        format!(
                            "state {k}, allocation {j}: noise reaches {top} above r_max = {}",
                            bd.r_max
                        ),
                    );
                }
            }
            for (m, n, bmn) in b.positive_entries() {
                let zeroed = b.with_zeroed(m, n);
                match cfg.service_at(k, &zeroed) {
                    Some(mu_z) => {
                        for (i, (&full, &cut)) in a.service.iter().zip(&mu_z).enumerate() {
                            if full > cut + bd.beta_mu_upper * bmn + TOL {
                                flag(
                                    Condition::ServiceUpperSlope,
                                    format!(
                                        "state {k}, allocation {j}: zeroing b_{m}{n} drops μ_{i} by {}",
                                        full - cut
                                    ),
                                );
                            }
                        }
                    }
                    None => flag(
                        Condition::ServiceUndefined,
                        format!("state {k}: service undefined at {zeroed}"),
                    ),
                }
            }
        }

        for (i, a) in acts.iter().enumerate() {
            for (j, b) in acts.iter().enumerate() {
                if i == j {
                    continue;
                }
                if a.allocation.dominated_by(&b.allocation) && a.cost > b.cost + TOL {
                    flag(
                        Condition::CostMonotone,
                        format!("state {k}: allocation {i} ⪯ allocation {j} but costs more"),
                    );
                }
                for n in 0..n_tasks {
                    if a.service[n] <= b.service[n]
                        && cfg.reward_mean().get(k, i, n) > cfg.reward_mean().get(k, j, n) + TOL
                    {
                        flag(
                            Condition::RewardMonotone,
                            format!(
                                "state {k}, task {n}: allocation {i} serves no more than {j} but earns more"
                            ),
                        );
                    }
                }
            }
        }
    }

    for (n, u) in cfg.utilities().iter().enumerate() {
        let ok = match *u {
            Utility::ScaledLog { a, c } => a > 0.0 && c > 0.0,
            Utility::Linear { a } => a > 0.0,
        };
        if !ok {
            flag(Condition::UtilityShape, format!("U_{n} = {u:?} is not increasing"));
        }
        if u.max_derivative() > bd.beta + TOL {
            flag(
                Condition::UtilityShape,
                format!("U_{n}'(0) = {} exceeds β = {}", u.max_derivative(), bd.beta),
            );
        }
    }
    if let NoiseModel::TwoPoint { low, high } = cfg.noise() {
        if low < 0.0 || ((low + high) / 2.0 - 1.0).abs() > TOL {
            flag(
                Condition::NoiseSupport,
                format!("two-point noise ({low}, {high}) does not preserve the mean"),
            );
        }
    }
    if let Some(grid) = cfg.gamma_grid() {
        if grid.iter().any(|&g| g < 0.0 || g > bd.r_max + TOL) {
            flag(Condition::GammaGrid, format!("gamma grid {grid:?} leaves [0, r_max]"));
        }
    }
    out
}

/// Estimated reward of task `n` at an arbitrary zeroed allocation `b'`
/// derived from allocation `j` of state `k`.
fn reward_at_zeroed(
    cfg: &SystemConfig,
    table: &RewardTable,
    k: usize,
    j: usize,
    zeroed: &Allocation,
    n: usize,
) -> Result<f64> {
    if let Some(jz) = cfg.find_action(k, zeroed) {
        return Ok(table.get(k, jz, n));
    }
    let mu_z = cfg.service_at(k, zeroed).ok_or_else(|| Error::UndefinedService {
        state: k,
        allocation: zeroed.to_string(),
    })?;
    // Off-table points follow the partial-service curve of the parent.
    Ok(reward_at(cfg, table, k, j, n, mu_z[n]))
}

/// Smallest `β ≥ 0` such that zeroing any positive `b_mn` lowers any
/// estimated reward by at most `β·b_mn`.
pub fn compute_beta_r_hat(table: &RewardTable, cfg: &SystemConfig) -> Result<f64> {
    let mut beta: f64 = 0.0;
    for k in 0..cfg.num_states() {
        for (j, a) in cfg.actions(k).iter().enumerate() {
            for (m, n, bmn) in a.allocation.positive_entries() {
                let zeroed = a.allocation.with_zeroed(m, n);
                for i in 0..cfg.n_tasks() {
                    let cut = reward_at_zeroed(cfg, table, k, j, &zeroed, i)?;
                    beta = beta.max((table.get(k, j, i) - cut) / bmn);
                }
            }
        }
    }
    Ok(beta)
}

/// `G = N(A_max² + μ_max² + 2r_max²) + M·h_max² + M·N²·b_max²`
pub fn drift_constant(cfg: &SystemConfig) -> f64 {
    let b = cfg.bounds();
    let n = cfg.n_tasks() as f64;
    let m = cfg.m_resources() as f64;
    n * (b.a_max.powi(2) + b.mu_max.powi(2) + 2.0 * b.r_max.powi(2))
        + m * b.h_max.powi(2)
        + m * n * n * b.b_max.powi(2)
}

/// Constants derived from an instance, a tradeoff parameter `V` and the
/// reward estimate in use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub v: f64,
    pub g: f64,
    pub beta_r_hat: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Deterministic deficit cap `Vβ + r_max`.
    pub d_max: f64,
    /// Task backlog cap `θ₁ + A_max`.
    pub q_cap: f64,
    /// Resource stock cap `θ₂ + h_max`.
    pub h_cap: f64,
    /// Shift from the configured rule with zero state-estimation error.
    pub zeta: f64,
}

impl DerivedConstants {
    pub fn new(cfg: &SystemConfig, v: f64, beta_r_hat: f64) -> Self {
        let b = cfg.bounds();
        let n = cfg.n_tasks() as f64;
        let scaled = (v * b.beta + b.r_max) * beta_r_hat;
        let theta1 = (b.h_max + scaled) / b.beta_mu_lower + b.mu_max;
        let theta2 = scaled + b.r_max * b.beta_mu_upper + n * b.b_max;
        Self {
            v,
            g: drift_constant(cfg),
            beta_r_hat,
            theta1,
            theta2,
            d_max: v * b.beta + b.r_max,
            q_cap: theta1 + b.a_max,
            h_cap: theta2 + b.h_max,
            zeta: cfg.zeta_rule().unwrap_or(ZetaRule::General).resolve(v, 0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn two_state_instance_is_valid() {
        let cfg = instances::two_state_matching();
        assert_eq!(validate_config(&cfg), vec![]);
        assert_eq!(validate_config(&instances::two_queue_example()), vec![]);
        assert_eq!(validate_config(&instances::single_queue_example()), vec![]);
    }

    #[test]
    fn probability_sum_violation_is_named() {
        let mut spec = instances::two_queue_example().spec().clone();
        let mut second = spec.states[0].clone();
        spec.states[0].prob = 0.6;
        second.prob = 0.6;
        spec.states.push(second);
        let cfg = SystemConfig::new(spec).unwrap();
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].condition, Condition::ProbabilitySum);
        assert!(v[0].detail.contains("1.2"), "{}", v[0]);
    }

    #[test]
    fn missing_zero_action_names_the_state() {
        let mut spec = instances::two_queue_example().spec().clone();
        let set = spec.action_sets.get_mut("*").unwrap();
        set.retain(|b| !b.is_zero());
        let cfg = SystemConfig::new(spec).unwrap();
        let v = validate_config(&cfg);
        assert!(v
            .iter()
            .any(|x| x.condition == Condition::ZeroAction && x.detail.contains("B_0")));
    }

    #[test]
    fn validation_is_pure() {
        let cfg = instances::two_state_matching();
        assert_eq!(validate_config(&cfg), validate_config(&cfg));
    }

    #[test]
    fn beta_r_hat_examples() {
        let cfg = instances::two_state_matching();
        assert_eq!(compute_beta_r_hat(cfg.reward_mean(), &cfg).unwrap(), 1.0);
        let zeros = RewardTable::zeros_like(&cfg);
        assert_eq!(compute_beta_r_hat(&zeros, &cfg).unwrap(), 0.0);
        let two = instances::two_queue_example();
        assert_eq!(compute_beta_r_hat(two.reward_mean(), &two).unwrap(), 1.0);
    }

    #[test]
    fn beta_r_hat_needs_zeroed_service() {
        // Service table without the zero allocation: zeroing [[1]] is undefined.
        let mut spec = instances::single_queue_example().spec().clone();
        let one = Allocation::from_rows(&[vec![1.0]]).unwrap();
        spec.action_sets.insert("*".into(), vec![one.clone()]);
        spec.service = ServiceSpec::Table {
            entries: BTreeMap::from([(
                "*".to_string(),
                vec![ServicePoint { b: one, mu: vec![1.0] }],
            )]),
        };
        let cfg = SystemConfig::new(spec).unwrap();
        let err = compute_beta_r_hat(cfg.reward_mean(), &cfg).unwrap_err();
        assert!(matches!(err, Error::UndefinedService { .. }), "{err}");
    }

    #[test]
    fn drift_constant_and_thetas() {
        let cfg = instances::two_state_matching();
        // 2(4 + 1 + 8) + 4 + 4
        assert_eq!(drift_constant(&cfg), 34.0);
        let c = DerivedConstants::new(&cfg, 100.0, 1.0);
        assert_eq!(c.theta1, (2.0 + 502.0) / 1.0 + 1.0);
        assert_eq!(c.theta2, 502.0 + 2.0 + 2.0);
        assert_eq!(c.d_max, 502.0);
        assert_eq!(c.q_cap, c.theta1 + 2.0);
        assert_eq!(c.h_cap, c.theta2 + 2.0);
        assert!((c.zeta - 100f64.ln().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn zeta_rules() {
        let l = 50f64.ln().powi(2);
        assert_eq!(ZetaRule::LogSquared.resolve(50.0, 0.3), l);
        assert_eq!(ZetaRule::General.resolve(50.0, 0.0), 2.0 * l);
        assert_eq!(ZetaRule::General.resolve(50.0, 0.1), 2.0 * 5.0 * l);
        assert_eq!(ZetaRule::Fixed(3.0).resolve(50.0, 0.1), 3.0);
    }

    #[test]
    fn penalized_argmax_closed_form() {
        let u = Utility::ScaledLog { a: 1.2, c: 2.0 };
        assert!((u.penalized_argmax(100.0, 60.0, 2.0) - 1.5).abs() < 1e-12);
        assert_eq!(u.penalized_argmax(100.0, 0.0, 2.0), 2.0);
        assert_eq!(u.penalized_argmax(100.0, 1e6, 2.0), 0.0);
        let lin = Utility::Linear { a: 1.0 };
        assert_eq!(lin.penalized_argmax(2.0, 1.0, 3.0), 3.0);
        assert_eq!(lin.penalized_argmax(2.0, 2.0, 3.0), 0.0);
    }

    #[test]
    fn zero_service_gives_zero_reward() {
        let cfg = instances::two_state_matching();
        let mut rng = rng::stream(3, 0);
        let j = cfg.find_action(0, &Allocation::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let kappa = sample_reward(&mut rng, &cfg, 0, j, &[0.0, 0.0]).unwrap();
        assert_eq!(kappa, vec![0.0, 0.0]);
    }

    #[test]
    fn two_point_noise_support() {
        let cfg = instances::two_state_matching();
        let mut rng = rng::stream(11, 0);
        let j = cfg.find_action(0, &Allocation::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let mean = cfg.reward_mean().get(0, j, 0);
        for _ in 0..100 {
            let k = sample_reward(&mut rng, &cfg, 0, j, &[1.0, 0.0]).unwrap();
            assert!(k[0] == 0.5 * mean || k[0] == 1.5 * mean);
        }
    }

    #[test]
    fn sample_reward_rejects_mean_above_r_max() {
        let mut spec = instances::two_queue_example().spec().clone();
        spec.bounds.r_max = 0.5;
        let cfg = SystemConfig::new(spec).unwrap();
        let j = cfg.find_action(0, &Allocation::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let err = sample_reward(&mut rng::stream(0, 0), &cfg, 0, j, &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::RewardOutOfRange { .. }));
    }

    #[test]
    fn reward_sampling_is_reproducible() {
        let cfg = instances::two_state_matching();
        let draw = |seed| {
            let mut rng = rng::stream(seed, 1);
            (0..50)
                .map(|_| sample_reward(&mut rng, &cfg, 3, 1, &[1.0, 0.0]).unwrap()[0].to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn partial_service_interpolates() {
        let cfg = instances::two_state_matching();
        let j = cfg.find_action(0, &Allocation::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let full = cfg.reward_mean().get(0, j, 0);
        assert_eq!(reward_at(&cfg, cfg.reward_mean(), 0, j, 0, 0.5), 0.5 * full);
        assert_eq!(reward_at(&cfg, cfg.reward_mean(), 0, j, 0, 1.0), full);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = instances::two_state_matching();
        let back = SystemConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back.spec(), cfg.spec());
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn malformed_allocation_is_rejected() {
        let text = instances::two_queue_example()
            .to_json_pretty()
            .replacen("[\n          0.0,\n          1.0\n        ]", "[0.0]", 1);
        let err = SystemConfig::from_json_str(&text);
        assert!(err.is_err());
    }
}

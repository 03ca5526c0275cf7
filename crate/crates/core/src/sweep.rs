//! Parameter sweeps over policies, `V` values and seeds.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::solve_empirical_dual;
use crate::error::Result;
use crate::learning::{RewardEstimate, StateEstimate};
use crate::model::SystemConfig;
use crate::policy::PolicyParams;
use crate::sim::{
    convergence_time, default_burn_in, residual_radius, run_sim, summarize, PolicySpec,
    SimOptions, SimTrace,
};

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub horizon: usize,
    /// Defaults to the first 20% of the horizon.
    pub burn_in: Option<usize>,
    /// Convergence radius; when absent it is fitted per `V` as the mean
    /// stationary distance of a reference run of the raw controller.
    pub radius: Option<f64>,
    pub sim: SimOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            burn_in: None,
            radius: None,
            sim: SimOptions::default(),
        }
    }
}

/// One sweep cell. Metric fields are empty when the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    #[serde(rename = "V")]
    pub v: f64,
    pub seed: u64,
    pub f_av: Option<f64>,
    #[serde(rename = "meanQ")]
    pub mean_q: Option<f64>,
    #[serde(rename = "meanH")]
    pub mean_h: Option<f64>,
    #[serde(rename = "meand")]
    pub mean_d: Option<f64>,
    #[serde(rename = "dropfrac")]
    pub drop_frac: Option<f64>,
    #[serde(rename = "T_conv")]
    pub t_conv: Option<u64>,
    pub status: String,
}

/// Point the tracked `(d, Q, H)` vector should settle at: the dual
/// minimizer with true statistics over the controller's γ domain, in queue
/// coordinates.
pub fn convergence_target(cfg: &SystemConfig, v: f64, sim: &SimOptions) -> Result<Vec<f64>> {
    let params = PolicyParams::new(cfg, v, cfg.reward_mean().clone())?;
    let opts = crate::dual::DualOptions {
        gamma_domain: params.gamma_domain.clone(),
        ..sim.dual.clone()
    };
    let sol = solve_empirical_dual(
        cfg,
        &StateEstimate::exact(cfg),
        &RewardEstimate::exact(cfg),
        params.theta1,
        params.theta2,
        v,
        &opts,
    )?;
    Ok(sol.alpha_star.to_vec())
}

/// Mean stationary distance of the raw controller from `target`.
pub fn fit_radius(
    cfg: &SystemConfig,
    v: f64,
    seed: u64,
    target: &[f64],
    opts: &SweepOptions,
) -> Result<f64> {
    let trace = run_sim(cfg, &PolicySpec::Ram, v, opts.horizon, seed, &opts.sim)?;
    let burn = opts.burn_in.unwrap_or_else(|| default_burn_in(trace.len()));
    Ok(residual_radius(&trace, target, burn))
}

fn cell(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    v: f64,
    seed: u64,
    reference: &std::result::Result<(Vec<f64>, f64), String>,
    opts: &SweepOptions,
) -> SweepRow {
    let mut row = SweepRow {
        policy: policy.to_string(),
        v,
        seed,
        f_av: None,
        mean_q: None,
        mean_h: None,
        mean_d: None,
        drop_frac: None,
        t_conv: None,
        status: "ok".into(),
    };
    let run = || -> Result<(SimTrace, crate::sim::Metrics)> {
        let trace = run_sim(cfg, policy, v, opts.horizon, seed, &opts.sim)?;
        let burn = opts.burn_in.unwrap_or_else(|| default_burn_in(trace.len()));
        let metrics = summarize(&trace, cfg, burn)?;
        Ok((trace, metrics))
    };
    match run() {
        Ok((trace, m)) => {
            row.f_av = Some(m.f_av);
            row.mean_q = Some(m.total_q());
            row.mean_h = Some(m.total_h());
            row.mean_d = Some(m.total_d());
            row.drop_frac = Some(m.drop_fraction);
            match reference {
                Ok((target, radius)) => row.t_conv = convergence_time(&trace, target, *radius),
                Err(e) => row.status = format!("no convergence target: {e}"),
            }
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Runs every `(policy, V, seed)` cell in parallel on the current rayon pool.
/// Rows come back in policy, `V`, seed order; failed cells are marked and
/// the sweep continues.
pub fn run_sweep(
    cfg: &SystemConfig,
    policies: &[PolicySpec],
    vs: &[f64],
    seeds: &[u64],
    opts: &SweepOptions,
) -> Vec<SweepRow> {
    let reference_seed = seeds.first().copied().unwrap_or(0);
    let references: Vec<std::result::Result<(Vec<f64>, f64), String>> = vs
        .par_iter()
        .map(|&v| {
            let target = convergence_target(cfg, v, &opts.sim).map_err(|e| e.to_string())?;
            let radius = match opts.radius {
                Some(r) => r,
                None => fit_radius(cfg, v, reference_seed, &target, opts)
                    .map_err(|e| e.to_string())?,
            };
            Ok((target, radius))
        })
        .collect();
    let cells: Vec<(usize, usize, u64)> = (0..policies.len())
        .flat_map(|p| (0..vs.len()).flat_map(move |i| seeds.iter().map(move |&s| (p, i, s))))
        .collect();
    cells
        .par_iter()
        .map(|&(p, i, s)| cell(cfg, &policies[p], vs[i], s, &references[i], opts))
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn row_count_and_order() {
        let cfg = instances::two_state_matching();
        let policies: Vec<PolicySpec> = ["ram", "lram-0.1"].iter().map(|s| s.parse().unwrap()).collect();
        let opts = SweepOptions {
            horizon: 2000,
            ..SweepOptions::default()
        };
        let rows = run_sweep(&cfg, &policies, &[10.0, 20.0], &[1, 2, 3], &opts);
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].policy, "ram");
        assert_eq!((rows[4].v, rows[4].seed), (20.0, 2));
        assert!(rows.iter().all(|r| r.status == "ok"), "{rows:?}");
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("policy,V,seed,f_av,meanQ,meanH,meand,dropfrac,T_conv,status\n"));
    }

    #[test]
    fn failed_cells_are_marked() {
        let cfg = instances::two_state_matching();
        let opts = SweepOptions {
            horizon: 100,
            ..SweepOptions::default()
        };
        // V below 1 is rejected by the controller.
        let rows = run_sweep(&cfg, &[PolicySpec::Ram], &[0.5, 10.0], &[1], &opts);
        assert!(rows[0].status.starts_with("error"));
        assert!(rows[0].f_av.is_none());
        assert_eq!(rows[1].status, "ok");
    }
}

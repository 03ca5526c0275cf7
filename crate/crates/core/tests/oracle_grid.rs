//! Offline optimum against an independent brute force.

use matchq::instances;
use matchq::oracle::solve_offline_optimal;
use rayon::prelude::*;

/// Mixtures over three allocations at resolution `1/steps`.
fn simplex(steps: usize) -> Vec<[f64; 3]> {
    let s = steps as f64;
    let mut out = Vec::new();
    for a in 0..=steps {
        for b in 0..=steps - a {
            out.push([a as f64 / s, b as f64 / s, (steps - a - b) as f64 / s]);
        }
    }
    out
}

// Rewards, service and usage depend on the state only through its label, and
// the constraints only on long-run averages, so label-dependent mixtures
// cover every stationary policy.
#[test]
fn two_state_optimum_matches_label_grid() {
    let cfg = instances::two_state_matching();
    let off = solve_offline_optimal(&cfg).unwrap();
    let u = cfg.utilities();
    let r_max = cfg.bounds().r_max;
    let (mean_a, mean_e) = cfg.mean_arrivals(&cfg.probs());
    let mean_e = mean_e[0];
    // Allocation order: idle, serve queue 1, serve queue 2.
    let w = [[0.8, 1.0], [1.0, 0.8]];
    let points = simplex(100);
    let best = points
        .par_iter()
        .map(|p| {
            let mut best = f64::NEG_INFINITY;
            for q in &points {
                let mix = [p, q];
                let mut r = [0.0; 2];
                let mut mu = [0.0; 2];
                for (label, x) in mix.iter().enumerate() {
                    for n in 0..2 {
                        mu[n] += 0.5 * x[n + 1];
                        r[n] += 0.5 * x[n + 1] * w[label][n];
                    }
                }
                let used = mu[0] + mu[1];
                if mu[0] > mean_a[0] || mu[1] > mean_a[1] || used > mean_e {
                    continue;
                }
                let f = u[0].value(r[0].min(r_max)) + u[1].value(r[1].min(r_max)) - used;
                best = best.max(f);
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    assert!(off.f_star >= best - 1e-6, "{} < {best}", off.f_star);
    assert!((off.f_star - best).abs() < 1e-2, "{} vs {best}", off.f_star);
    assert!(off.violation < 1e-6);
}

#[test]
fn zero_rewards_give_zero_optimum() {
    let cfg = instances::with_zero_rewards(&instances::two_state_matching());
    let off = solve_offline_optimal(&cfg).unwrap();
    assert!(off.f_star.abs() < 1e-9);
    assert!(off.mean_cost.abs() < 1e-9);
}

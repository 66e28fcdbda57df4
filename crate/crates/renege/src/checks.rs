//! Analytic-versus-simulated comparisons shared by `verify` and the tests.

use renege_core::age_posterior::{age_bin_masses, y_bin_masses_n2};
use renege_core::equilibrium::BestResponseReport;
use renege_core::simulator::{AgeWindow, Coordinate, SimEstimate};
use renege_core::SteadyState;
use serde::Serialize;

/// Fewer qualifying samples than this make a comparison uninformative.
pub const MIN_SAMPLES: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub limit: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: String, statistic: f64, limit: f64, pass: bool, detail: String) -> Self {
        Self { name, statistic, limit, pass, detail }
    }
}

fn coordinate_name(c: Coordinate) -> String {
    match c {
        Coordinate::S(n) => format!("S{n}"),
        Coordinate::T(n) => format!("T{n}"),
    }
}

/// `|π̂_n − π_n| / SE ≤ z` for every `n`.
pub fn occupancy_checks(est: &SimEstimate, steady: &SteadyState, z: f64) -> Vec<Check> {
    est.pi_hat()
        .iter()
        .enumerate()
        .map(|(n, e)| {
            let analytic = steady.pi.get(n).copied().unwrap_or(0.0);
            // Batch means understate the spread of rare cells, so the binomial
            // error under the analytic value acts as a floor.
            let floor = (analytic * (1.0 - analytic) / e.count.max(1) as f64).sqrt();
            let se = e.se.max(floor);
            let diff = (e.mean - analytic).abs();
            let score = if se > 0.0 { diff / se } else if diff < 1e-12 { 0.0 } else { f64::INFINITY };
            Check::new(
                format!("pi_{n}"),
                score,
                z,
                score <= z,
                format!("simulated {:.6} ± {:.6}, analytic {:.6}", e.mean, se, analytic),
            )
        })
        .collect()
}

/// L1 distance between the simulated and analytic age densities at
/// arrivals finding `n`.
pub fn age_check(est: &SimEstimate, steady: &SteadyState, n: usize, limit: f64) -> renege_core::Result<Check> {
    let hist = est.estimate_age_given_n(n).histogram;
    let name = format!("age_given_n{n}_l1");
    if hist.total() < MIN_SAMPLES {
        return Ok(Check::new(name, 0.0, limit, true, format!("only {} samples; skipped", hist.total())));
    }
    let masses = age_bin_masses(n, steady, &hist.edges())?;
    let d = hist.l1_distance(&masses);
    Ok(Check::new(name, d, limit, d <= limit, format!("{} samples", hist.total())))
}

/// L1 distance of the gap histogram for an age window at `N = 2`, against
/// the analytic density at the window midpoint.
pub fn gap_check(est: &SimEstimate, steady: &SteadyState, window: AgeWindow, limit: f64) -> renege_core::Result<Check> {
    let name = format!("gap_given_n{}_a{}_l1", window.n, 0.5 * (window.lo + window.hi));
    let Some(h) = est.y_histograms.iter().find(|h| h.window == window) else {
        return Ok(Check::new(name, f64::NAN, limit, false, "window not simulated".into()));
    };
    let hist = &h.histogram;
    if hist.total() < MIN_SAMPLES {
        return Ok(Check::new(name, 0.0, limit, true, format!("only {} samples; skipped", hist.total())));
    }
    let masses = y_bin_masses_n2(0.5 * (window.lo + window.hi), steady, &hist.edges())?;
    let d = hist.l1_distance(&masses);
    Ok(Check::new(name, d, limit, d <= limit, format!("{} samples", hist.total())))
}

/// Realized payoff of customers leaving at their own threshold is zero
/// within `z` standard errors.
pub fn threshold_checks(est: &SimEstimate, z: f64) -> Vec<Check> {
    est.utility_at_threshold
        .iter()
        .filter(|u| u.threshold.is_finite())
        .map(|u| {
            let e = u.stat.estimate();
            let name = format!("utility_at_{}", coordinate_name(u.coordinate));
            if e.count < 2 {
                return Check::new(name, 0.0, z, true, "no timeouts observed; skipped".into());
            }
            let score = e.z_score(0.0).abs();
            Check::new(name, score, z, score <= z, format!("payoff {:.5} ± {:.5} over {} timeouts", e.mean, e.se, e.count))
        })
        .collect()
}

/// One check per deviation: no gain beyond two standard errors.
pub fn deviation_checks(report: &BestResponseReport) -> Vec<Check> {
    report
        .checks
        .iter()
        .map(|c| {
            let score = if c.gain.se > 0.0 { c.gain.mean / c.gain.se } else { 0.0 };
            Check::new(
                format!("deviation_{}_{:.4}", coordinate_name(c.deviation.coordinate), c.deviation.value),
                score,
                2.0,
                !c.improves,
                format!("gain {:.6} ± {:.6} over {} arrivals", c.gain.mean, c.gain.se, c.gain.count),
            )
        })
        .collect()
}

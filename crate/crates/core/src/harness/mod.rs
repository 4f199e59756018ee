//! Experiment execution: topologies, trials, metrics, estimator studies and outputs.

pub mod estimation;
pub mod metrics;
pub mod output;
pub mod topology;
pub mod trial;

pub use metrics::{bit_error_ccdf, cfo_error_power_hist, compute_ber, compute_per, MetricError};
pub use topology::{make_topology, TopologyConfig, TopologyKind, TopologyParams};
pub use trial::{run_trial, TrialOptions, TrialResult, TrialSpec};

use crate::phy::{ModulationScheme, PhyError};
use estimation::{coarse_cfo_experiment, pilot_cfo_experiment, CoarseCfoPoint, PilotCfoPoint};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("point {point}: {source}")]
    Phy { point: u64, source: PhyError },
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Seed of sweep point `point_id`, independent of scheduling.
pub fn point_seed(master: u64, point_id: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(master ^ mix(point_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PointKind {
    Trial(TrialSpec),
    CoarseCfo { snr_db: f64, true_cfo_hz: f64, n_trials: u64 },
    PilotCfo { snr_db: f64, payload_len: usize, modulation: ModulationScheme, true_cfo_hz: f64, n_trials: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub id: u64,
    pub seed: u64,
    pub kind: PointKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointOutput {
    Trial(TrialResult),
    Coarse(CoarseCfoPoint),
    Pilot(PilotCfoPoint),
}

pub fn run_point(p: &Point) -> Result<PointOutput, HarnessError> {
    Ok(match &p.kind {
        PointKind::Trial(spec) => {
            let spec = TrialSpec { seed: p.seed, ..spec.clone() };
            PointOutput::Trial(run_trial(&spec).map_err(|source| HarnessError::Phy { point: p.id, source })?)
        }
        PointKind::CoarseCfo { snr_db, true_cfo_hz, n_trials } => {
            PointOutput::Coarse(coarse_cfo_experiment(*snr_db, *true_cfo_hz, *n_trials, p.seed))
        }
        PointKind::PilotCfo { snr_db, payload_len, modulation, true_cfo_hz, n_trials } => PointOutput::Pilot(
            pilot_cfo_experiment(*snr_db, *payload_len, *modulation, *true_cfo_hz, *n_trials, p.seed),
        ),
    })
}

/// Runs all points on a pool of `workers` threads; results come back sorted by point id.
pub fn run_points(points: &[Point], workers: usize) -> Result<Vec<(Point, PointOutput)>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let mut out: Vec<(Point, PointOutput)> = pool.install(|| {
        points.par_iter().map(|p| run_point(p).map(|o| (p.clone(), o))).collect::<Result<Vec<_>, _>>()
    })?;
    out.sort_by_key(|(p, _)| p.id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_seeds_differ_and_repeat() {
        let a: Vec<u64> = (0..100).map(|i| point_seed(7, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| point_seed(7, i)).collect();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 100);
        assert_ne!(point_seed(8, 0), a[0]);
    }
}

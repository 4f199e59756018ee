//! Packet and bit error metrics, bit-error CCDF and the CFO-error/power histogram.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use super::trial::TrialResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("trial has no transmissions")]
    EmptyTrial,
    #[error("no packet reached payload decoding")]
    NoEligiblePackets,
}

/// `1 - n_good / n_tx`.
pub fn compute_per(r: &TrialResult) -> Result<f64, MetricError> {
    if r.n_tx == 0 {
        return Err(MetricError::EmptyTrial);
    }
    Ok(1.0 - r.n_good as f64 / r.n_tx as f64)
}

/// Binomial standard error of a PER estimate.
pub fn per_sigma(per: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (per * (1.0 - per) / n as f64).sqrt()
}

/// `b_error / b_total` over packets whose header decoded.
pub fn compute_ber(r: &TrialResult) -> Result<f64, MetricError> {
    if r.b_total == 0 {
        return Err(MetricError::NoEligiblePackets);
    }
    Ok(r.b_error as f64 / r.b_total as f64)
}

/// Probabilities of no reception, bad header and bad payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvents {
    pub no_reception: f64,
    pub bad_header: f64,
    pub bad_payload: f64,
}

impl ErrorEvents {
    pub fn total(&self) -> f64 {
        self.no_reception + self.bad_header + self.bad_payload
    }
}

pub fn error_events(r: &TrialResult) -> Result<ErrorEvents, MetricError> {
    if r.n_tx == 0 {
        return Err(MetricError::EmptyTrial);
    }
    let n = r.n_tx as f64;
    Ok(ErrorEvents {
        no_reception: r.n_no_rx as f64 / n,
        bad_header: r.n_bad_hdr as f64 / n,
        bad_payload: r.n_bad_payload as f64 / n,
    })
}

/// `P(errors >= k)` at every distinct count, plus the first k where it reaches zero.
/// `hist` maps a per-packet bit-error count to its number of packets.
pub fn bit_error_ccdf(hist: &BTreeMap<u64, u64>) -> Vec<(u64, f64)> {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return vec![(0, 0.0), (1, 0.0)];
    }
    let mut ks: Vec<u64> = hist.keys().copied().chain([0, 1]).collect();
    ks.sort_unstable();
    ks.dedup();
    let max = *ks.last().expect("non-empty");
    if hist.get(&max).copied().unwrap_or(0) > 0 {
        ks.push(max + 1);
    }
    ks.into_iter().map(|k| (k, ccdf_at(hist, k))).collect()
}

/// `P(errors >= k)` for a single threshold.
pub fn ccdf_at(hist: &BTreeMap<u64, u64>, k: u64) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return 0.0;
    }
    hist.range(k..).map(|(_, v)| v).sum::<u64>() as f64 / total as f64
}

/// Two-dimensional occupancy histogram over (receive power, CFO estimate error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub power_bin_db: f64,
    pub error_bin_hz: f64,
    /// Keyed by (power bin index, error bin index); values are probabilities.
    pub cells: BTreeMap<(i64, i64), f64>,
    pub count: u64,
}

impl Histogram2d {
    /// Lower edges of a cell.
    pub fn edges(&self, cell: (i64, i64)) -> (f64, f64) {
        (cell.0 as f64 * self.power_bin_db, cell.1 as f64 * self.error_bin_hz)
    }

    /// Standard deviation of the error column in each power bin.
    pub fn error_spread_by_power(&self, records: &[(f64, f64)]) -> BTreeMap<i64, f64> {
        let mut acc: BTreeMap<i64, (f64, f64, f64)> = BTreeMap::new();
        for &(p, e) in records {
            let a = acc.entry((p / self.power_bin_db).floor() as i64).or_default();
            a.0 += 1.0;
            a.1 += e;
            a.2 += e * e;
        }
        acc.into_iter()
            .filter(|(_, a)| a.0 >= 2.0)
            .map(|(k, (n, s, s2))| (k, ((s2 - s * s / n) / (n - 1.0)).max(0.0).sqrt()))
            .collect()
    }
}

pub fn cfo_error_power_hist(records: &[(f64, f64)], power_bin_db: f64, error_bin_hz: f64) -> Histogram2d {
    let mut counts: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    for &(p, e) in records {
        let key = ((p / power_bin_db).floor() as i64, (e / error_bin_hz).floor() as i64);
        *counts.entry(key).or_default() += 1;
    }
    let n = records.len() as u64;
    Histogram2d {
        power_bin_db,
        error_bin_hz,
        cells: counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect(),
        count: n,
    }
}

/// Least-squares slope of `log10(per)` against SNR over points with PER inside `[lo, hi]`.
pub fn log_per_slope(points: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let sel: Vec<(f64, f64)> =
        points.iter().filter(|(_, p)| *p >= lo && *p <= hi).map(|&(s, p)| (s, p.log10())).collect();
    if sel.len() < 2 {
        return None;
    }
    let n = sel.len() as f64;
    let mx = sel.iter().map(|p| p.0).sum::<f64>() / n;
    let my = sel.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = sel.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

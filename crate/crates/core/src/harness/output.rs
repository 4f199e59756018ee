//! CSV and manifest writers for a finished sweep.

use super::metrics::{bit_error_ccdf, cfo_error_power_hist, compute_ber, compute_per, per_sigma};
use super::{HarnessError, Point, PointKind, PointOutput};
use crate::channel::FadingKind;
use crate::harness::estimation::SpreadStats;
use crate::harness::topology::TopologyKind;
use crate::nodes::CfoMode;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// Version of the column layout of every CSV written here.
pub const SCHEMA_VERSION: u32 = 1;

/// Receive-power bin width of the CFO error histogram.
pub const CFO_HIST_POWER_BIN_DB: f64 = 2.0;
/// CFO error bin width of the CFO error histogram.
pub const CFO_HIST_ERROR_BIN_HZ: f64 = 25.0;

#[derive(Debug, Serialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub point_id: u64,
    pub experiment: &'static str,
    pub scheme: String,
    pub topology: &'static str,
    pub attenuation_db: Option<f64>,
    pub relay_position_m: Option<f64>,
    pub sd_db: f64,
    pub sr_db: f64,
    pub rd_db: f64,
    pub fading: String,
    pub modulation: String,
    pub cfo_mode: &'static str,
    pub forced_offset_hz: Option<f64>,
    pub misalignment: i64,
    pub n_tx: u64,
    pub n_good: u64,
    pub n_no_rx: u64,
    pub n_bad_hdr: u64,
    pub n_bad_payload: u64,
    pub b_error: u64,
    pub b_total: u64,
    pub per: Option<f64>,
    pub per_sigma: Option<f64>,
    pub ber: Option<f64>,
    pub relay_trigger_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct CcdfRow<'a> {
    schema_version: u32,
    point_id: u64,
    scheme: &'a str,
    bit_errors: u64,
    ccdf: f64,
}

#[derive(Debug, Serialize)]
struct CfoPowerRow<'a> {
    schema_version: u32,
    point_id: u64,
    scheme: &'a str,
    power_lo_db: f64,
    error_lo_hz: f64,
    probability: f64,
}

#[derive(Debug, Serialize)]
struct EstimatorRow {
    schema_version: u32,
    point_id: u64,
    experiment: &'static str,
    snr_db: f64,
    true_cfo_hz: f64,
    payload_len: Option<usize>,
    payload_symbols: Option<usize>,
    duration_s: Option<f64>,
    n_attempted: u64,
    estimator: &'static str,
    n: u64,
    mean_error_hz: f64,
    two_sigma_hz: f64,
    ks_stat: f64,
    seed: u64,
}

fn fading_name(k: FadingKind) -> &'static str {
    match k {
        FadingKind::Awgn => "awgn",
        FadingKind::Flat => "flat",
        FadingKind::Tdl15ns => "tdl15ns",
    }
}

fn topology_name(k: TopologyKind) -> &'static str {
    match k {
        TopologyKind::Colocated => "colocated",
        TopologyKind::Linear => "linear",
        TopologyKind::Manual => "manual",
    }
}

pub fn cfo_mode_name(m: &CfoMode) -> &'static str {
    match m {
        CfoMode::Estimated => "estimated",
        CfoMode::Oracle => "oracle",
        CfoMode::Forced { .. } => "forced",
    }
}

/// One results row for a trial point; `None` for estimator points.
pub fn result_row(p: &Point, o: &PointOutput) -> Option<ResultRow> {
    let (PointKind::Trial(spec), PointOutput::Trial(r)) = (&p.kind, o) else {
        return None;
    };
    let t = &spec.topology;
    let kinds = [t.sd_fading.kind, t.sr_fading.kind, t.rd_fading.kind];
    let fading = if kinds.iter().all(|k| *k == kinds[0]) {
        fading_name(kinds[0]).to_string()
    } else {
        kinds.map(fading_name).join("/")
    };
    let per = compute_per(r).ok();
    Some(ResultRow {
        schema_version: SCHEMA_VERSION,
        point_id: p.id,
        experiment: "trials",
        scheme: spec.scheme.to_string(),
        topology: topology_name(t.kind),
        attenuation_db: t.attenuation_db,
        relay_position_m: t.relay_position_m,
        sd_db: t.sd_db,
        sr_db: t.sr_db,
        rd_db: t.rd_db,
        fading,
        modulation: spec.modulation.to_string(),
        cfo_mode: cfo_mode_name(&spec.options.cfo_mode),
        forced_offset_hz: match spec.options.cfo_mode {
            CfoMode::Forced { offset_hz } => Some(offset_hz),
            _ => None,
        },
        misalignment: spec.options.misalignment_samples,
        n_tx: r.n_tx,
        n_good: r.n_good,
        n_no_rx: r.n_no_rx,
        n_bad_hdr: r.n_bad_hdr,
        n_bad_payload: r.n_bad_payload,
        b_error: r.b_error,
        b_total: r.b_total,
        per,
        per_sigma: per.map(|v| per_sigma(v, r.n_tx)),
        ber: compute_ber(r).ok(),
        relay_trigger_rate: r.relay_trigger_rate(),
        seed: p.seed,
    })
}

fn estimator_rows(p: &Point, o: &PointOutput) -> Vec<EstimatorRow> {
    let row = |experiment, snr_db, true_cfo_hz, estimator, s: &SpreadStats, n_attempted, extra: (Option<usize>, Option<usize>, Option<f64>)| EstimatorRow {
        schema_version: SCHEMA_VERSION,
        point_id: p.id,
        experiment,
        snr_db,
        true_cfo_hz,
        payload_len: extra.0,
        payload_symbols: extra.1,
        duration_s: extra.2,
        n_attempted,
        estimator,
        n: s.n,
        mean_error_hz: s.mean,
        two_sigma_hz: s.two_sigma,
        ks_stat: s.ks_stat,
        seed: p.seed,
    };
    match (o, &p.kind) {
        (PointOutput::Coarse(c), _) => {
            let mut s = c.stats;
            s.mean -= c.true_cfo_hz;
            vec![row("coarse-cfo", c.snr_db, c.true_cfo_hz, "coarse", &s, c.stats.n, (None, None, None))]
        }
        (PointOutput::Pilot(c), PointKind::PilotCfo { true_cfo_hz, .. }) => {
            let extra = (Some(c.payload_len), Some(c.payload_symbols), Some(c.duration_s));
            vec![
                row("pilot-cfo", c.snr_db, *true_cfo_hz, "coarse", &c.coarse, c.n_attempted, extra),
                row("pilot-cfo", c.snr_db, *true_cfo_hz, "refined", &c.refined, c.n_attempted, extra),
            ]
        }
        _ => Vec::new(),
    }
}

// Writes through a sibling temporary so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Writes `results.csv`, `estimators.csv`, `histograms/*.csv` and `manifest.json` under `out`.
pub fn write_outputs<M: Serialize>(out: &Path, results: &[(Point, PointOutput)], manifest: &M) -> Result<(), HarnessError> {
    let hist_dir = out.join("histograms");
    fs::create_dir_all(&hist_dir)?;

    let rows: Vec<ResultRow> = results.iter().filter_map(|(p, o)| result_row(p, o)).collect();
    let results_csv = if rows.is_empty() { results_header() } else { csv_bytes(&rows)? };

    let mut ccdf = Vec::new();
    let mut cfo = Vec::new();
    for (p, o) in results {
        if let (PointKind::Trial(spec), PointOutput::Trial(r)) = (&p.kind, o) {
            let scheme = spec.scheme.name();
            for (k, v) in bit_error_ccdf(&r.bit_error_hist) {
                ccdf.push(CcdfRow { schema_version: SCHEMA_VERSION, point_id: p.id, scheme, bit_errors: k, ccdf: v });
            }
            let h = cfo_error_power_hist(&r.cfo_records, CFO_HIST_POWER_BIN_DB, CFO_HIST_ERROR_BIN_HZ);
            for (cell, prob) in &h.cells {
                let (power_lo_db, error_lo_hz) = h.edges(*cell);
                cfo.push(CfoPowerRow {
                    schema_version: SCHEMA_VERSION,
                    point_id: p.id,
                    scheme,
                    power_lo_db,
                    error_lo_hz,
                    probability: *prob,
                });
            }
        }
    }
    let est: Vec<EstimatorRow> = results.iter().flat_map(|(p, o)| estimator_rows(p, o)).collect();

    write_atomic(&out.join("results.csv"), &results_csv)?;
    write_atomic(&hist_dir.join("biterr_ccdf.csv"), &nonempty(csv_bytes(&ccdf)?, "schema_version,point_id,scheme,bit_errors,ccdf"))?;
    write_atomic(
        &hist_dir.join("cfo_power.csv"),
        &nonempty(csv_bytes(&cfo)?, "schema_version,point_id,scheme,power_lo_db,error_lo_hz,probability"),
    )?;
    write_atomic(
        &out.join("estimators.csv"),
        &nonempty(
            csv_bytes(&est)?,
            "schema_version,point_id,experiment,snr_db,true_cfo_hz,payload_len,payload_symbols,duration_s,\
             n_attempted,estimator,n,mean_error_hz,two_sigma_hz,ks_stat,seed",
        ),
    )?;
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(manifest)?.as_bytes())?;
    Ok(())
}

fn nonempty(bytes: Vec<u8>, header: &str) -> Vec<u8> {
    if bytes.is_empty() {
        format!("{header}\n").into_bytes()
    } else {
        bytes
    }
}

fn results_header() -> Vec<u8> {
    b"schema_version,point_id,experiment,scheme,topology,attenuation_db,relay_position_m,sd_db,sr_db,rd_db,\
fading,modulation,cfo_mode,forced_offset_hz,misalignment,n_tx,n_good,n_no_rx,n_bad_hdr,n_bad_payload,b_error,\
b_total,per,per_sigma,ber,relay_trigger_rate,seed\n"
        .to_vec()
}

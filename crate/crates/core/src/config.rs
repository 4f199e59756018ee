//! Declarative experiment configuration, presets and sweep expansion.

use crate::channel::{doppler_for_speed, FadingKind, FadingModel, DEFAULT_REF_SNR_DB};
use crate::harness::topology::{TopologyError, LINEAR_SPAN_M};
use crate::harness::{make_topology, point_seed, Point, PointKind, TopologyKind, TopologyParams, TrialOptions, TrialSpec};
use crate::nodes::{CfoMode, Scheme};
use crate::phy::{FrameLayout, ModulationScheme, SystemParams};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn invalid(key: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Packet trials over the three-node network.
    Trials,
    /// Short-training CFO estimator spread versus SNR.
    CoarseCfo,
    /// Pilot-based residual CFO estimator spread versus packet length.
    PilotCfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub kind: TopologyKind,
    /// Colocated sweep values.
    pub attenuation_db: Vec<f64>,
    /// Linear sweep values.
    pub relay_position_m: Vec<f64>,
    /// Manual path losses; equal-length lists are zipped, single values broadcast.
    pub sd_db: Vec<f64>,
    pub sr_db: Vec<f64>,
    pub rd_db: Vec<f64>,
    pub fading: FadingKind,
    pub sd_fading: Option<FadingKind>,
    pub sr_fading: Option<FadingKind>,
    pub rd_fading: Option<FadingKind>,
    pub doppler_hz: Option<f64>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Colocated,
            attenuation_db: vec![0.0],
            relay_position_m: Vec::new(),
            sd_db: Vec::new(),
            sr_db: Vec::new(),
            rd_db: Vec::new(),
            fading: FadingKind::Flat,
            sd_fading: None,
            sr_fading: None,
            rd_fading: None,
            doppler_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptionsSection {
    /// Relay pre-corrects with the true source-relay offset.
    pub oracle_cfo: bool,
    /// Sweep of deliberate pre-correction errors at the relay.
    pub forced_offset_hz: Vec<f64>,
    pub misalignment_samples: Vec<i64>,
    pub inter_packet_s: Option<f64>,
    pub ref_snr_db: f64,
    pub payload_len: usize,
    pub lo_offsets_hz: Option<[f64; 3]>,
    pub lo_spread_hz: f64,
    pub shared_source_relay_clock: bool,
    pub phase_tracking: bool,
}

impl Default for OptionsSection {
    fn default() -> Self {
        let t = TrialOptions::default();
        Self {
            oracle_cfo: false,
            forced_offset_hz: Vec::new(),
            misalignment_samples: vec![0],
            inter_packet_s: t.inter_packet_s,
            ref_snr_db: DEFAULT_REF_SNR_DB,
            payload_len: t.payload_len,
            lo_offsets_hz: t.lo_offsets_hz,
            lo_spread_hz: t.lo_spread_hz,
            shared_source_relay_clock: t.shared_source_relay_clock,
            phase_tracking: t.phase_tracking,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub snr_db: Vec<f64>,
    pub true_cfo_hz: f64,
    pub payload_len: Vec<usize>,
    pub modulation: ModulationScheme,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { snr_db: vec![20.0], true_cfo_hz: 305.0, payload_len: vec![1412], modulation: ModulationScheme::Qpsk }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Packets per trial point, or estimates per estimator point.
    #[serde(default = "default_packets")]
    pub packets: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_modulations")]
    pub modulations: Vec<ModulationScheme>,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub options: OptionsSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
}

fn default_name() -> String {
    "custom".into()
}
fn default_seed() -> u64 {
    1
}
fn default_packets() -> u64 {
    10_000
}
fn default_modulations() -> Vec<ModulationScheme> {
    vec![ModulationScheme::Qpsk]
}

/// Run manifest; its `config` field alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub points: Vec<ManifestPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPoint {
    pub point_id: u64,
    pub seed: u64,
}

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

impl Manifest {
    pub fn new(config: &ExperimentConfig, points: &[Point]) -> Self {
        Self {
            schema_version: crate::harness::output::SCHEMA_VERSION,
            code_version: CODE_VERSION.into(),
            config: config.clone(),
            points: points.iter().map(|p| ManifestPoint { point_id: p.id, seed: p.seed }).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a TOML config, or the `config` of a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            m.config.validate()?;
            Ok(m.config)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn default_out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.packets == 0 {
            return Err(invalid("packets", "must be positive"));
        }
        if self.modulations.is_empty() {
            return Err(invalid("modulations", "must not be empty"));
        }
        let o = &self.options;
        let finite = |key, v: f64| if v.is_finite() { Ok(()) } else { Err(invalid(key, format!("{v} is not finite"))) };
        finite("options.ref_snr_db", o.ref_snr_db)?;
        if !(o.lo_spread_hz.is_finite() && o.lo_spread_hz >= 0.0) {
            return Err(invalid("options.lo_spread_hz", "must be finite and non-negative"));
        }
        if let Some(f) = o.lo_offsets_hz {
            for v in f {
                finite("options.lo_offsets_hz", v)?;
            }
        }
        if let Some(dt) = o.inter_packet_s {
            if !(dt.is_finite() && dt >= 0.0) {
                return Err(invalid("options.inter_packet_s", "must be finite and non-negative"));
            }
        }
        if o.misalignment_samples.is_empty() {
            return Err(invalid("options.misalignment_samples", "must not be empty"));
        }
        if let Some(m) = o.misalignment_samples.iter().find(|m| m.abs() > 80) {
            return Err(invalid("options.misalignment_samples", format!("{m} outside [-80, 80]")));
        }
        if let Some(f) = o.forced_offset_hz.iter().find(|f| !(f.is_finite() && f.abs() <= 1e5)) {
            return Err(invalid("options.forced_offset_hz", format!("{f} outside [-100000, 100000]")));
        }
        if o.oracle_cfo && !o.forced_offset_hz.is_empty() {
            return Err(invalid("options.oracle_cfo", "cannot be combined with forced_offset_hz"));
        }
        let max_len = max_payload_len(self.modulations.iter().copied().chain([self.estimator.modulation]));
        if o.payload_len > max_len {
            return Err(invalid("options.payload_len", format!("{} exceeds {max_len} bytes", o.payload_len)));
        }
        if let Some(d) = self.topology.doppler_hz {
            if !(d.is_finite() && d >= 0.0) {
                return Err(invalid("topology.doppler_hz", "must be finite and non-negative"));
            }
        }
        match self.kind {
            ExperimentKind::Trials => {
                if self.schemes.is_empty() {
                    return Err(invalid("schemes", "must not be empty"));
                }
                self.topology_points()?;
            }
            ExperimentKind::CoarseCfo | ExperimentKind::PilotCfo => {
                let e = &self.estimator;
                if e.snr_db.is_empty() || e.snr_db.iter().any(|s| !s.is_finite()) {
                    return Err(invalid("estimator.snr_db", "must be a non-empty list of finite values"));
                }
                finite("estimator.true_cfo_hz", e.true_cfo_hz)?;
                if self.kind == ExperimentKind::PilotCfo {
                    let max = max_payload_len([e.modulation]);
                    if e.payload_len.is_empty() || e.payload_len.iter().any(|&l| l > max) {
                        return Err(invalid("estimator.payload_len", format!("must be a non-empty list of lengths <= {max}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn fading(&self) -> [FadingModel; 3] {
        let t = &self.topology;
        let doppler = t.doppler_hz.unwrap_or_else(|| doppler_for_speed(1.2, 2.4e9));
        let m = |k: Option<FadingKind>| FadingModel::new(k.unwrap_or(t.fading), doppler);
        [m(t.sd_fading), m(t.sr_fading), m(t.rd_fading)]
    }

    fn topology_points(&self) -> Result<Vec<crate::harness::TopologyConfig>, ConfigError> {
        let t = &self.topology;
        let [fsd, fsr, frd] = self.fading();
        let params: Vec<(TopologyParams, &'static str)> = match t.kind {
            TopologyKind::Colocated => {
                if t.attenuation_db.is_empty() {
                    return Err(invalid("topology.attenuation_db", "must not be empty"));
                }
                t.attenuation_db
                    .iter()
                    .map(|&a| (TopologyParams { attenuation_db: Some(a), ..Default::default() }, "topology.attenuation_db"))
                    .collect()
            }
            TopologyKind::Linear => {
                if t.relay_position_m.is_empty() {
                    return Err(invalid("topology.relay_position_m", "must not be empty"));
                }
                t.relay_position_m
                    .iter()
                    .map(|&d| (TopologyParams { relay_position_m: Some(d), ..Default::default() }, "topology.relay_position_m"))
                    .collect()
            }
            TopologyKind::Manual => {
                let n = t.sd_db.len().max(t.sr_db.len()).max(t.rd_db.len());
                let pick = |key: &'static str, v: &[f64], i: usize| match v.len() {
                    0 => Err(invalid(key, "required for manual topology")),
                    1 => Ok(v[0]),
                    l if l == n => Ok(v[i]),
                    l => Err(invalid(key, format!("has {l} values; expected 1 or {n}"))),
                };
                (0..n.max(1))
                    .map(|i| {
                        Ok((
                            TopologyParams {
                                sd_db: Some(pick("topology.sd_db", &t.sd_db, i)?),
                                sr_db: Some(pick("topology.sr_db", &t.sr_db, i)?),
                                rd_db: Some(pick("topology.rd_db", &t.rd_db, i)?),
                                ..Default::default()
                            },
                            "topology",
                        ))
                    })
                    .collect::<Result<_, ConfigError>>()?
            }
        };
        params
            .into_iter()
            .map(|(p, key)| {
                let mut c = make_topology(t.kind, p, fsd).map_err(|e| topology_error(key, e))?;
                c.sr_fading = fsr;
                c.rd_fading = frd;
                Ok(c)
            })
            .collect()
    }

    /// Sweep points in deterministic order. Ids are consecutive from 0.
    pub fn expand(&self) -> Result<Vec<Point>, ConfigError> {
        self.validate()?;
        let mut kinds = Vec::new();
        match self.kind {
            ExperimentKind::Trials => {
                let o = &self.options;
                let modes: Vec<CfoMode> = if !o.forced_offset_hz.is_empty() {
                    o.forced_offset_hz.iter().map(|&offset_hz| CfoMode::Forced { offset_hz }).collect()
                } else if o.oracle_cfo {
                    vec![CfoMode::Oracle]
                } else {
                    vec![CfoMode::Estimated]
                };
                for &modulation in &self.modulations {
                    for topology in self.topology_points()? {
                        for &cfo_mode in &modes {
                            for &misalignment_samples in &o.misalignment_samples {
                                for &scheme in &self.schemes {
                                    let options = TrialOptions {
                                        cfo_mode,
                                        misalignment_samples,
                                        inter_packet_s: o.inter_packet_s,
                                        ref_snr_db: o.ref_snr_db,
                                        payload_len: o.payload_len,
                                        lo_offsets_hz: o.lo_offsets_hz,
                                        lo_spread_hz: o.lo_spread_hz,
                                        shared_source_relay_clock: o.shared_source_relay_clock,
                                        phase_tracking: o.phase_tracking,
                                    };
                                    kinds.push(PointKind::Trial(TrialSpec {
                                        scheme,
                                        topology,
                                        modulation,
                                        n_packets: self.packets,
                                        seed: 0,
                                        options,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
            ExperimentKind::CoarseCfo => {
                for &snr_db in &self.estimator.snr_db {
                    kinds.push(PointKind::CoarseCfo { snr_db, true_cfo_hz: self.estimator.true_cfo_hz, n_trials: self.packets });
                }
            }
            ExperimentKind::PilotCfo => {
                let e = &self.estimator;
                for &snr_db in &e.snr_db {
                    for &payload_len in &e.payload_len {
                        kinds.push(PointKind::PilotCfo {
                            snr_db,
                            payload_len,
                            modulation: e.modulation,
                            true_cfo_hz: e.true_cfo_hz,
                            n_trials: self.packets,
                        });
                    }
                }
            }
        }
        Ok(kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let id = i as u64;
                let seed = point_seed(self.seed, id);
                let kind = match kind {
                    PointKind::Trial(spec) => PointKind::Trial(TrialSpec { seed, ..spec }),
                    k => k,
                };
                Point { id, seed, kind }
            })
            .collect())
    }
}

fn topology_error(key: &'static str, e: TopologyError) -> ConfigError {
    let key = match e {
        TopologyError::InvalidPathLoss(_) if key == "topology" => "topology.sd_db/sr_db/rd_db",
        _ => key,
    };
    invalid(key, e.to_string())
}

fn max_payload_len(mods: impl IntoIterator<Item = ModulationScheme>) -> usize {
    let max_symbols = SystemParams::default().max_payload_symbols;
    mods.into_iter()
        .map(|m| {
            // Largest length whose padded symbol count still fits.
            let mut len = max_symbols * 48 * m.bits_per_symbol() / 8;
            while len > 0 && FrameLayout::new(len, m).payload_symbols_on_air > max_symbols {
                len -= 1;
            }
            len
        })
        .min()
        .unwrap_or(0)
}

pub const PRESETS: [&str; 7] = [
    "fig2-cfo-sweep",
    "fig3-coarse-cfo",
    "fig4-pilot-cfo",
    "fig5-colocated",
    "fig7-biterr-ccdf",
    "fig8-cfo-power",
    "fig9-linear",
];

/// Link loss of the fig2 sweep's source-destination and relay-destination links.
pub const FIG2_LINK_DB: f64 = 78.0;

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let base = |name: &str, kind| ExperimentConfig {
        name: name.into(),
        kind,
        seed: 1,
        packets: 10_000,
        out: None,
        schemes: vec![Scheme::Nc, Scheme::Af, Scheme::Df],
        modulations: vec![ModulationScheme::Qpsk],
        topology: TopologySection::default(),
        options: OptionsSection::default(),
        estimator: EstimatorSection::default(),
    };
    let c = match name {
        "fig2-cfo-sweep" => {
            let mut c = base(name, ExperimentKind::Trials);
            c.packets = 20_000;
            c.schemes = vec![Scheme::Nc, Scheme::Df];
            c.topology = TopologySection {
                kind: TopologyKind::Manual,
                sd_db: vec![FIG2_LINK_DB],
                sr_db: vec![53.0],
                rd_db: vec![FIG2_LINK_DB],
                fading: FadingKind::Awgn,
                ..TopologySection::default()
            };
            c.options.forced_offset_hz = (0..=20).map(|i| 25.0 * i as f64).collect();
            c.options.shared_source_relay_clock = true;
            c
        }
        "fig3-coarse-cfo" => {
            let mut c = base(name, ExperimentKind::CoarseCfo);
            c.estimator.snr_db = vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
            c
        }
        "fig4-pilot-cfo" => {
            let mut c = base(name, ExperimentKind::PilotCfo);
            c.packets = 5_000;
            c.estimator.snr_db = vec![10.0, 20.0, 30.0];
            c.estimator.payload_len = vec![176, 353, 706, 1412];
            c
        }
        "fig5-colocated" | "colocated" => {
            let mut c = base("fig5-colocated", ExperimentKind::Trials);
            c.modulations = vec![ModulationScheme::Qpsk, ModulationScheme::Qam16];
            c.topology.attenuation_db = (0..10).map(|i| 4.0 * i as f64).collect();
            c
        }
        "fig7-biterr-ccdf" => {
            let mut c = base(name, ExperimentKind::Trials);
            c.packets = 50_000;
            c.modulations = vec![ModulationScheme::Qam16];
            c
        }
        "fig8-cfo-power" => {
            let mut c = base(name, ExperimentKind::Trials);
            c.packets = 50_000;
            c.schemes = vec![Scheme::Df];
            c
        }
        "fig9-linear" => {
            let mut c = base(name, ExperimentKind::Trials);
            c.schemes = Scheme::ALL.to_vec();
            c.topology.kind = TopologyKind::Linear;
            c.topology.relay_position_m = (0..=8).map(|i| LINEAR_SPAN_M * i as f64 / 8.0).collect();
            c
        }
        other => return Err(ConfigError::UnknownPreset(other.into())),
    };
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let c = preset(p).unwrap();
            assert!(!c.expand().unwrap().is_empty(), "{p}");
        }
        assert_eq!(preset("colocated").unwrap().name, "fig5-colocated");
        assert!(matches!(preset("fig6"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn fig2_rows() {
        let pts = preset("fig2-cfo-sweep").unwrap().expand().unwrap();
        assert_eq!(pts.len(), 21 * 2);
    }

    #[test]
    fn colocated_rows() {
        let pts = preset("colocated").unwrap().expand().unwrap();
        assert_eq!(pts.len(), 3 * 2 * 10);
        let ids: Vec<u64> = pts.iter().map(|p| p.id).collect();
        assert_eq!(ids, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn type_error_names_key() {
        let e = ExperimentConfig::from_toml("kind = \"trials\"\nschemes = [\"NC\"]\npackets = \"many\"\n").unwrap_err();
        assert!(e.to_string().contains("packets"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        let e = ExperimentConfig::from_toml("kind = \"trials\"\nschemes = [\"NC\"]\n[options]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn range_errors_name_key() {
        let cases = [
            ("kind = \"trials\"\nschemes = [\"NC\"]\n[topology]\nattenuation_db = [40.0]\n", "topology.attenuation_db"),
            ("kind = \"trials\"\nschemes = []\n", "schemes"),
            ("kind = \"trials\"\nschemes = [\"DF\"]\n[options]\noracle_cfo = true\nforced_offset_hz = [10.0]\n", "oracle_cfo"),
            ("kind = \"trials\"\nschemes = [\"NC\"]\n[topology]\nkind = \"manual\"\nsd_db = [60.0, 70.0, 80.0]\nsr_db = [60.0]\nrd_db = [61.0, 62.0]\n", "topology.rd_db"),
            ("kind = \"pilot-cfo\"\n[estimator]\npayload_len = [100000]\n", "estimator.payload_len"),
        ];
        for (text, key) in cases {
            let e = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(e.to_string().contains(key), "{e} lacks {key}");
        }
    }

    #[test]
    fn manual_lists_zip_and_broadcast() {
        let c = ExperimentConfig::from_toml(
            "kind = \"trials\"\nschemes = [\"NC\"]\n[topology]\nkind = \"manual\"\nsd_db = [60.0, 70.0]\nsr_db = [53.0]\nrd_db = [61.0, 71.0]\nfading = \"awgn\"\n",
        )
        .unwrap();
        let pts = c.expand().unwrap();
        let PointKind::Trial(s) = &pts[1].kind else { panic!() };
        assert_eq!((s.topology.sd_db, s.topology.sr_db, s.topology.rd_db), (70.0, 53.0, 71.0));
        assert_eq!(s.topology.sd_fading.kind, FadingKind::Awgn);
    }

    #[test]
    fn manifest_round_trip() {
        let c = preset("fig9-linear").unwrap();
        let pts = c.expand().unwrap();
        let m = Manifest::new(&c, &pts);
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back.config, c);
        assert_eq!(back.config.expand().unwrap(), pts);
    }

    #[test]
    fn payload_limit() {
        let max = max_payload_len([ModulationScheme::Qpsk]);
        let p = SystemParams::default().max_payload_symbols;
        assert!(FrameLayout::new(max, ModulationScheme::Qpsk).payload_symbols_on_air <= p);
        assert!(FrameLayout::new(max + 1, ModulationScheme::Qpsk).payload_symbols_on_air > p);
    }
}

//! Repeated exchanges over one configuration and their aggregate counts.

use super::topology::TopologyConfig;
use crate::channel::{decorrelation_interval, noise_floor, LinkChannel, NodeClock, DEFAULT_REF_SNR_DB};
use crate::nodes::{run_exchange, CfoMode, ExchangeConfig, Links, Radio, Receiver, ReceiverConfig, RxOutcome, Scheme};
use crate::phy::{Frame, ModulationScheme, PhyError, SystemParams, Transmitter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Independent random streams of one trial.
pub mod streams {
    pub const TRAFFIC: u64 = 0;
    pub const SD: u64 = 1;
    pub const SR: u64 = 2;
    pub const RD: u64 = 3;
    pub const NOISE: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub cfo_mode: CfoMode,
    pub misalignment_samples: i64,
    /// Fading evolution time between consecutive exchanges; `None` picks the
    /// first zero of the Doppler correlation.
    pub inter_packet_s: Option<f64>,
    pub ref_snr_db: f64,
    pub payload_len: usize,
    /// Fixed LO offsets (source, relay, destination); drawn per trial when absent.
    pub lo_offsets_hz: Option<[f64; 3]>,
    /// Half-width of the uniform LO offset draw.
    pub lo_spread_hz: f64,
    /// Source and relay run from one oscillator.
    pub shared_source_relay_clock: bool,
    pub phase_tracking: bool,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            cfo_mode: CfoMode::Estimated,
            misalignment_samples: 0,
            inter_packet_s: None,
            ref_snr_db: DEFAULT_REF_SNR_DB,
            payload_len: 1412,
            lo_offsets_hz: None,
            lo_spread_hz: 2000.0,
            shared_source_relay_clock: false,
            phase_tracking: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub scheme: Scheme,
    pub topology: TopologyConfig,
    pub modulation: ModulationScheme,
    pub n_packets: u64,
    pub seed: u64,
    pub options: TrialOptions,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialResult {
    pub n_tx: u64,
    pub n_good: u64,
    pub n_no_rx: u64,
    pub n_bad_hdr: u64,
    pub n_bad_payload: u64,
    pub b_error: u64,
    pub b_total: u64,
    /// Per-packet bit-error count -> packets, over packets whose header decoded.
    pub bit_error_hist: BTreeMap<u64, u64>,
    /// (relay receive power dB, relay CFO estimate error Hz) for good relay receptions.
    pub cfo_records: Vec<(f64, f64)>,
    pub relay_trigger_count: u64,
    pub relay_outcomes: [u64; 4],
    pub seed: u64,
}

impl TrialResult {
    pub fn relay_trigger_rate(&self) -> f64 {
        if self.n_tx == 0 {
            0.0
        } else {
            self.relay_trigger_count as f64 / self.n_tx as f64
        }
    }

    /// Relay slot-1 error rate, when a relay listened.
    pub fn relay_per(&self) -> Option<f64> {
        let n: u64 = self.relay_outcomes.iter().sum();
        (n > 0).then(|| 1.0 - self.relay_outcomes[3] as f64 / n as f64)
    }

    fn record_dest(&mut self, o: &RxOutcome, scored_bits: u64) {
        self.n_tx += 1;
        match o {
            RxOutcome::NoReception => self.n_no_rx += 1,
            RxOutcome::BadHeader => self.n_bad_hdr += 1,
            RxOutcome::BadPayload { bit_errors, .. } => {
                self.n_bad_payload += 1;
                self.b_error += bit_errors;
            }
            RxOutcome::GoodPayload => self.n_good += 1,
        }
        if o.header_decoded() {
            self.b_total += scored_bits;
            *self.bit_error_hist.entry(o.bit_errors()).or_default() += 1;
        }
    }
}

fn outcome_index(o: &RxOutcome) -> usize {
    match o {
        RxOutcome::NoReception => 0,
        RxOutcome::BadHeader => 1,
        RxOutcome::BadPayload { .. } => 2,
        RxOutcome::GoodPayload => 3,
    }
}

/// Node LO offsets for a trial.
pub fn trial_clocks(options: &TrialOptions, rng: &mut ChaCha8Rng) -> [NodeClock; 3] {
    let [s, r, d] = match options.lo_offsets_hz {
        Some(f) => f,
        None => {
            let w = options.lo_spread_hz;
            let mut draw = || if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 };
            [draw(), draw(), draw()]
        }
    };
    let r = if options.shared_source_relay_clock { s } else { r };
    [NodeClock::new(s), NodeClock::new(r), NodeClock::new(d)]
}

pub fn make_radio(options: &TrialOptions) -> Radio {
    let params = SystemParams::default();
    let rx_cfg = ReceiverConfig { phase_tracking: options.phase_tracking, ..ReceiverConfig::default() };
    Radio::new(Transmitter::new(params.clone()), Receiver::new(params, rx_cfg, noise_floor(options.ref_snr_db)))
}

/// Runs `spec.n_packets` independent exchanges. Deterministic in `spec.seed`.
pub fn run_trial(spec: &TrialSpec) -> Result<TrialResult, PhyError> {
    let o = &spec.options;
    let radio = make_radio(o);
    let mut traffic = stream_rng(spec.seed, streams::TRAFFIC);
    let mut rng_sd = stream_rng(spec.seed, streams::SD);
    let mut rng_sr = stream_rng(spec.seed, streams::SR);
    let mut rng_rd = stream_rng(spec.seed, streams::RD);
    let mut noise = stream_rng(spec.seed, streams::NOISE);

    let [cs, cr, cd] = trial_clocks(o, &mut traffic);
    let t = &spec.topology;
    let link = |pl, f, a: &NodeClock, b: &NodeClock, rng: &mut ChaCha8Rng| {
        LinkChannel::new(pl, f, a, b, rng).expect("topology losses are validated")
    };
    let mut links = Links {
        sd: link(t.sd_db, t.sd_fading, &cs, &cd, &mut rng_sd),
        sr: link(t.sr_db, t.sr_fading, &cs, &cr, &mut rng_sr),
        rd: link(t.rd_db, t.rd_fading, &cr, &cd, &mut rng_rd),
    };
    let doppler = [t.sd_fading, t.sr_fading, t.rd_fading].iter().map(|f| f.doppler_hz).fold(0.0, f64::max);
    let dt = o.inter_packet_s.unwrap_or_else(|| if doppler > 0.0 { decorrelation_interval(doppler) } else { 0.0 });

    let cfg = ExchangeConfig {
        cfo_mode: o.cfo_mode,
        misalignment_samples: o.misalignment_samples,
        ..ExchangeConfig::new(spec.scheme)
    };
    let mut res = TrialResult { seed: spec.seed, ..TrialResult::default() };
    let mut payload = vec![0u8; o.payload_len];
    for i in 0..spec.n_packets {
        if i > 0 {
            links.sd.evolve(dt, &mut rng_sd);
            links.sr.evolve(dt, &mut rng_sr);
            links.rd.evolve(dt, &mut rng_rd);
        }
        traffic.fill(&mut payload[..]);
        let frame = Frame::new(0, 2, (i & 0xffff) as u16, payload.clone(), spec.modulation);
        let ex = run_exchange(&radio, &cfg, &frame, &links, &mut noise)?;
        res.record_dest(&ex.dest.outcome, ex.dest.scored_bits);
        if let Some(relay) = &ex.relay {
            res.relay_outcomes[outcome_index(&relay.outcome)] += 1;
            if let Some(err) = ex.relay_cfo_error_hz {
                res.cfo_records.push((relay.rx_power_db, err));
            }
        }
        if ex.relay_transmitted {
            res.relay_trigger_count += 1;
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::FadingModel;
    use crate::harness::topology::{make_topology, TopologyKind, TopologyParams};

    fn spec(scheme: Scheme, att: f64, n: u64, seed: u64) -> TrialSpec {
        let topology = make_topology(
            TopologyKind::Colocated,
            TopologyParams { attenuation_db: Some(att), ..Default::default() },
            FadingModel::flat(),
        )
        .unwrap();
        TrialSpec {
            scheme,
            topology,
            modulation: ModulationScheme::Qpsk,
            n_packets: n,
            seed,
            options: TrialOptions { payload_len: 200, ..TrialOptions::default() },
        }
    }

    #[test]
    fn same_seed_same_result() {
        let s = spec(Scheme::Df, 20.0, 30, 42);
        assert_eq!(run_trial(&s).unwrap(), run_trial(&s).unwrap());
        let other = TrialSpec { seed: 43, ..s.clone() };
        assert_ne!(run_trial(&s).unwrap(), run_trial(&other).unwrap());
    }

    #[test]
    fn counts_partition_and_bits_are_scoped() {
        for scheme in Scheme::ALL {
            let r = run_trial(&spec(scheme, 28.0, 60, 7)).unwrap();
            assert_eq!(r.n_tx, 60);
            assert_eq!(r.n_tx, r.n_good + r.n_no_rx + r.n_bad_hdr + r.n_bad_payload, "{scheme}");
            assert_eq!(r.b_total, (r.n_good + r.n_bad_payload) * 204 * 8);
            assert_eq!(r.bit_error_hist.values().sum::<u64>(), r.n_good + r.n_bad_payload);
            assert_eq!(r.bit_error_hist.iter().map(|(k, v)| k * v).sum::<u64>(), r.b_error);
        }
    }

    #[test]
    fn shared_clock_zeroes_source_relay_offset() {
        let o = TrialOptions { shared_source_relay_clock: true, ..TrialOptions::default() };
        let c = trial_clocks(&o, &mut stream_rng(1, 0));
        assert_eq!(c[0].cfo_to(&c[1]), 0.0);
        assert!(c[0].lo_offset_hz.abs() <= 2000.0);
    }
}

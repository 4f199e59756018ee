//! Source, relay and destination behaviour and the two-slot cooperative exchange.

pub mod receiver;

pub use receiver::{count_bit_errors, Reception, Receiver, ReceiverConfig, RxOutcome};

use crate::channel::{apply_link, rotate, LinkChannel, LinkInput};
use crate::phy::{Baseband, Frame, PhyError, Transmitter};
use crate::stbc::StbcRole;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Noise-only samples captured ahead of each expected frame.
pub const LEAD_SAMPLES: u64 = 96;
/// Samples captured after the expected frame end.
pub const TAIL_SAMPLES: usize = 64;
/// Fixed receive-to-transmit and transmit-to-transmit turnaround, samples.
pub const TURNAROUND_SAMPLES: u64 = 64;
/// Resolution of the programmable transmit delay.
pub const DELAY_RESOLUTION_NS: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Nc,
    Af,
    Df,
    Mhop,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Nc, Scheme::Af, Scheme::Df, Scheme::Mhop];

    pub fn slots(self) -> usize {
        if self == Scheme::Nc {
            1
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Nc => "NC",
            Scheme::Af => "AF",
            Scheme::Df => "DF",
            Scheme::Mhop => "MHOP",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "NC" => Ok(Scheme::Nc),
            "AF" => Ok(Scheme::Af),
            "DF" => Ok(Scheme::Df),
            "MHOP" => Ok(Scheme::Mhop),
            _ => Err(format!("unknown scheme `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    AfterRx,
    AfterTx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("transmit delay {0} ns is not a multiple of 25 ns")]
    InvalidDelayResolution(u32),
}

/// Start offset after a trigger event: whole samples plus the sub-sample remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledStart {
    pub samples: u64,
    pub residue_ns: u32,
}

/// Turnaround is identical for both triggers, so equal delays give aligned starts.
pub fn schedule_transmission(
    trigger: Trigger,
    delay_ns: u32,
    sample_rate: f64,
) -> Result<ScheduledStart, ScheduleError> {
    if !delay_ns.is_multiple_of(DELAY_RESOLUTION_NS) {
        return Err(ScheduleError::InvalidDelayResolution(delay_ns));
    }
    let period_ns = (1e9 / sample_rate).round() as u32;
    let base = match trigger {
        Trigger::AfterRx | Trigger::AfterTx => TURNAROUND_SAMPLES,
    };
    Ok(ScheduledStart { samples: base + (delay_ns / period_ns) as u64, residue_ns: delay_ns % period_ns })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayError {
    #[error("relay did not receive a good payload in slot 1")]
    NotTriggered,
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// Replays the captured slot-1 frame span, normalized to `target_rms`.
pub fn relay_af_process(
    reception: &Reception,
    capture: &[Complex64],
    target_rms: f64,
    sample_rate: f64,
) -> Result<Baseband, RelayError> {
    if !reception.outcome.is_good() {
        return Err(RelayError::NotTriggered);
    }
    let (Some(start), Some(header)) = (reception.start_index, reception.header) else {
        return Err(RelayError::NotTriggered);
    };
    let end = (start + header.layout().total_samples()).min(capture.len());
    let mut out = capture[start..end].to_vec();
    let rms = (out.iter().map(|z| z.norm_sqr()).sum::<f64>() / out.len() as f64).sqrt();
    if rms > 0.0 {
        let k = target_rms / rms;
        out.iter_mut().for_each(|z| *z *= k);
    }
    Ok(Baseband::new(out, sample_rate))
}

/// Regenerates the decoded frame as role B and applies frequency pre-correction so it
/// arrives at the destination on the source's carrier offset.
pub fn relay_df_process(
    reception: &Reception,
    tx: &Transmitter,
    cfo_est_hz: f64,
) -> Result<Baseband, RelayError> {
    let frame = reception.decoded_frame().ok_or(RelayError::NotTriggered)?;
    let mut wf = tx.build_frame_waveform(&frame, StbcRole::RoleB)?;
    rotate(&mut wf.samples, cfo_est_hz, wf.sample_rate, 0.0);
    Ok(wf)
}

/// How the relay chooses its pre-correction frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CfoMode {
    /// Coarse plus residual estimate from the slot-1 reception.
    #[default]
    Estimated,
    /// True source-relay offset.
    Oracle,
    /// True offset plus a deliberate error.
    Forced { offset_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub scheme: Scheme,
    pub cfo_mode: CfoMode,
    /// Extra relay start offset in slot 2, samples.
    pub misalignment_samples: i64,
    pub source_delay_ns: u32,
    pub relay_delay_ns: u32,
    pub relay_tx_rms: f64,
}

impl ExchangeConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            cfo_mode: CfoMode::Estimated,
            misalignment_samples: 0,
            source_delay_ns: 0,
            relay_delay_ns: 0,
            relay_tx_rms: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Links {
    pub sd: LinkChannel,
    pub sr: LinkChannel,
    pub rd: LinkChannel,
}

/// Absolute sample times of each transmission.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timestamps {
    pub slot1_start: u64,
    pub slot2_source_start: Option<u64>,
    pub slot2_relay_start: Option<u64>,
    /// Sub-sample delay remainder the sample grid cannot express.
    pub delay_residue_ns: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeResult {
    pub scheme: Scheme,
    pub dest: Reception,
    pub relay: Option<Reception>,
    pub relay_transmitted: bool,
    /// Relay estimate minus true source-relay offset, for good relay receptions.
    pub relay_cfo_error_hz: Option<f64>,
    pub timestamps: Timestamps,
}

/// Shared transmit/receive machinery; every node runs the same radio.
#[derive(Debug, Clone)]
pub struct Radio {
    pub tx: Transmitter,
    pub rx: Receiver,
}

impl Radio {
    pub fn new(tx: Transmitter, rx: Receiver) -> Self {
        Self { tx, rx }
    }

    fn sample_rate(&self) -> f64 {
        self.tx.params.sample_rate
    }

    fn capture<R: Rng + ?Sized>(&self, inputs: &[LinkInput<'_>], t0: u64, len: usize, rng: &mut R) -> Baseband {
        apply_link(inputs, t0, len, self.rx.noise_floor, self.sample_rate(), rng)
    }
}

/// One full exchange of `frame` under `cfg`. `rng` supplies receiver noise only.
pub fn run_exchange<R: Rng + ?Sized>(
    radio: &Radio,
    cfg: &ExchangeConfig,
    frame: &Frame,
    links: &Links,
    rng: &mut R,
) -> Result<ExchangeResult, PhyError> {
    let fs = radio.sample_rate();
    let span = frame.header.layout().total_samples();
    let t1 = LEAD_SAMPLES;
    let window = LEAD_SAMPLES as usize + span + TAIL_SAMPLES;
    let slot1 = radio.tx.build_frame_waveform(frame, StbcRole::RoleB)?;
    let mut ts = Timestamps { slot1_start: t1, ..Default::default() };

    if cfg.scheme == Scheme::Nc {
        let cap = radio.capture(&[LinkInput { waveform: &slot1.samples, link: &links.sd, start: t1 }], 0, window, rng);
        let dest = radio.rx.receive(&cap.samples, Some(frame));
        return Ok(ExchangeResult {
            scheme: cfg.scheme,
            dest,
            relay: None,
            relay_transmitted: false,
            relay_cfo_error_hz: None,
            timestamps: ts,
        });
    }

    let relay_cap = radio.capture(&[LinkInput { waveform: &slot1.samples, link: &links.sr, start: t1 }], 0, window, rng);
    let relay_rx = radio.rx.receive(&relay_cap.samples, None);
    let triggered = relay_rx.outcome.is_good();
    let true_sr = links.sr.cfo_hz;
    let relay_cfo_error_hz = if triggered { relay_rx.cfo_estimate_hz().map(|e| e - true_sr) } else { None };

    let src_sched = schedule_transmission(Trigger::AfterTx, cfg.source_delay_ns, fs).expect("validated delay");
    let relay_sched = schedule_transmission(Trigger::AfterRx, cfg.relay_delay_ns, fs).expect("validated delay");
    ts.delay_residue_ns = relay_sched.residue_ns.max(src_sched.residue_ns);
    let t2 = t1 + span as u64 + src_sched.samples;

    let relay_wave: Option<Baseband> = if triggered {
        let wave = match cfg.scheme {
            Scheme::Af => relay_af_process(&relay_rx, &relay_cap.samples, cfg.relay_tx_rms, fs),
            Scheme::Df => {
                let precorrection = match cfg.cfo_mode {
                    CfoMode::Estimated => relay_rx.cfo_estimate_hz().unwrap_or(0.0),
                    CfoMode::Oracle => true_sr,
                    CfoMode::Forced { offset_hz } => true_sr + offset_hz,
                };
                relay_df_process(&relay_rx, &radio.tx, precorrection)
            }
            Scheme::Mhop => relay_df_process(&relay_rx, &radio.tx, 0.0),
            Scheme::Nc => unreachable!(),
        };
        Some(wave.map_err(|e| match e {
            RelayError::Phy(p) => p,
            RelayError::NotTriggered => unreachable!("relay triggered"),
        })?)
    } else {
        None
    };

    let source_wave = match cfg.scheme {
        Scheme::Mhop => None,
        _ => Some(radio.tx.build_frame_waveform(frame, StbcRole::RoleA)?),
    };

    let mut inputs = Vec::with_capacity(2);
    if let Some(w) = &source_wave {
        ts.slot2_source_start = Some(t2);
        inputs.push(LinkInput { waveform: &w.samples, link: &links.sd, start: t2 });
    }
    if let Some(w) = &relay_wave {
        let det = relay_rx.start_index.expect("good reception has a start") as u64;
        let start = (det + span as u64 + relay_sched.samples) as i64 + cfg.misalignment_samples;
        let start = start.max(0) as u64;
        ts.slot2_relay_start = Some(start);
        inputs.push(LinkInput { waveform: &w.samples, link: &links.rd, start });
    }
    let t0 = t2 - LEAD_SAMPLES;
    let dest_cap = radio.capture(&inputs, t0, window, rng);
    let dest = radio.rx.receive(&dest_cap.samples, Some(frame));
    Ok(ExchangeResult {
        scheme: cfg.scheme,
        dest,
        relay: Some(relay_rx),
        relay_transmitted: relay_wave.is_some(),
        relay_cfo_error_hz,
        timestamps: ts,
    })
}

/// Phase advance of a carrier offset over `samples`, radians.
pub fn phase_advance(cfo_hz: f64, samples: u64, sample_rate: f64) -> f64 {
    TAU * cfo_hz * samples as f64 / sample_rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{noise_floor, FadingKind, FadingModel, NodeClock};
    use crate::phy::{ModulationScheme, SystemParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn radio(ref_snr: f64) -> Radio {
        let p = SystemParams::default();
        Radio::new(Transmitter::new(p.clone()), Receiver::new(p, ReceiverConfig::default(), noise_floor(ref_snr)))
    }

    fn awgn_links(pl: f64, clocks: [f64; 3]) -> Links {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FadingModel::new(FadingKind::Awgn, 0.0);
        let [s, r, d] = clocks.map(NodeClock::new);
        Links {
            sd: LinkChannel::new(pl, m, &s, &d, &mut rng).unwrap(),
            sr: LinkChannel::new(pl, m, &s, &r, &mut rng).unwrap(),
            rd: LinkChannel::new(pl, m, &r, &d, &mut rng).unwrap(),
        }
    }

    fn frame(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(0, 2, 1, (0..1412).map(|_| rng.gen()).collect(), ModulationScheme::Qpsk)
    }

    #[test]
    fn schedule_resolution_and_alignment() {
        let a = schedule_transmission(Trigger::AfterRx, 0, 10e6).unwrap();
        let b = schedule_transmission(Trigger::AfterTx, 0, 10e6).unwrap();
        assert_eq!(a, b);
        let c = schedule_transmission(Trigger::AfterTx, 275, 10e6).unwrap();
        assert_eq!((c.samples - b.samples, c.residue_ns), (2, 75));
        assert_eq!(
            schedule_transmission(Trigger::AfterRx, 30, 10e6),
            Err(ScheduleError::InvalidDelayResolution(30))
        );
    }

    #[test]
    fn every_scheme_succeeds_over_clean_links() {
        let r = radio(40.0);
        let links = awgn_links(53.0, [700.0, -1200.0, 300.0]);
        let f = frame(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in Scheme::ALL {
            let res = run_exchange(&r, &ExchangeConfig::new(s), &f, &links, &mut rng).unwrap();
            assert_eq!(res.dest.outcome, RxOutcome::GoodPayload, "{s}");
            if s != Scheme::Nc {
                assert!(res.relay_transmitted);
                if s != Scheme::Mhop {
                    assert_eq!(res.timestamps.slot2_relay_start, res.timestamps.slot2_source_start);
                }
                assert!(res.relay_cfo_error_hz.unwrap().abs() < 100.0);
            }
        }
    }

    #[test]
    fn relay_replay_and_regeneration() {
        let r = radio(40.0);
        let f = frame(3);
        let wf = r.tx.build_frame_waveform(&f, StbcRole::RoleB).unwrap();
        let mut cap = vec![Complex64::new(0.0, 0.0); 96];
        cap.extend(wf.samples.iter().map(|z| z * 0.01));
        cap.extend(vec![Complex64::new(0.0, 0.0); 64]);
        let rx = Receiver::new(SystemParams::default(), ReceiverConfig::default(), 1e-12);
        let rec = rx.receive(&cap, None);
        assert!(rec.outcome.is_good());
        let af = relay_af_process(&rec, &cap, 1.0, 10e6).unwrap();
        assert!((af.rms() - 1.0).abs() < 1e-6);
        let k = wf.rms() / 1.0;
        for (a, b) in af.samples.iter().zip(&wf.samples) {
            assert!((a * k - b).norm() < 1e-9);
        }
        let df = relay_df_process(&rec, &r.tx, 0.0).unwrap();
        assert_eq!(df, wf);

        let mut bad = rec.clone();
        bad.outcome = RxOutcome::BadHeader;
        assert_eq!(relay_af_process(&bad, &cap, 1.0, 10e6), Err(RelayError::NotTriggered));
        assert_eq!(relay_df_process(&bad, &r.tx, 0.0), Err(RelayError::NotTriggered));
    }

    #[test]
    fn untriggered_relay_falls_back() {
        let r = radio(40.0);
        let mut links = awgn_links(53.0, [0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        links.sr = LinkChannel::new(89.0, FadingModel::new(FadingKind::Awgn, 0.0), &NodeClock::default(), &NodeClock::default(), &mut rng).unwrap();
        // Far below the detection threshold: the relay never hears the source.
        links.sr.state = crate::channel::FadingState::fixed(vec![Complex64::new(1e-4, 0.0)]);
        let f = frame(5);
        for s in [Scheme::Af, Scheme::Df] {
            let res = run_exchange(&r, &ExchangeConfig::new(s), &f, &links, &mut rng).unwrap();
            assert!(!res.relay_transmitted);
            assert_eq!(res.relay.as_ref().unwrap().outcome, RxOutcome::NoReception);
            assert_eq!(res.dest.outcome, RxOutcome::GoodPayload, "{s} solo role A");
        }
        let res = run_exchange(&r, &ExchangeConfig::new(Scheme::Mhop), &f, &links, &mut rng).unwrap();
        assert_eq!(res.dest.outcome, RxOutcome::NoReception);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!(Scheme::Nc.slots(), 1);
        assert_eq!(Scheme::Mhop.slots(), 2);
    }
}

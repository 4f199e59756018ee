//! The receive pipeline shared by relay and destination.

use crate::channel::rotate;
use crate::estimators::{
    estimate_cfo_residual, estimate_cfo_sts, estimate_channels, track_pilot_phase, CfoEstimate, Detector, EstimatorError,
    DetectorConfig, PhaseTracker,
};
use crate::phy::frame::{
    check_on_air_payload, pilot_values, FrameHeader, HEADER_LEN, LTS_OFFSET, N_HEADER_SYMBOLS,
    N_LTS_SYMBOLS, PAYLOAD_CRC_LEN, STS_LEN, STS_PERIOD,
};
use crate::phy::modulation::{bits_to_bytes, demap_into, slice};
use crate::phy::ofdm::SymbolBins;
use crate::phy::params::{bin, data_subcarriers, CP_LEN, FFT_SIZE, N_DATA, N_PILOTS, PILOT_SUBCARRIERS, SYMBOL_LEN};
use crate::phy::tx::symbol_gain;
use crate::phy::{Frame, ModulationScheme, OfdmEngine, SystemParams};
use crate::stbc::{combine_pair, ChannelEstimatePair, StbcRole};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Terminal state of one reception attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RxOutcome {
    NoReception,
    BadHeader,
    /// Header decoded but payload wrong. `crc_only` marks failures known only from the
    /// payload checksum, when no ground truth was available to count bit errors.
    BadPayload { bit_errors: u64, crc_only: bool },
    GoodPayload,
}

impl RxOutcome {
    pub fn is_good(&self) -> bool {
        matches!(self, Self::GoodPayload)
    }

    pub fn header_decoded(&self) -> bool {
        matches!(self, Self::GoodPayload | Self::BadPayload { .. })
    }

    pub fn bit_errors(&self) -> u64 {
        match self {
            Self::BadPayload { bit_errors, .. } => *bit_errors,
            _ => 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::NoReception => "no_reception",
            Self::BadHeader => "bad_header",
            Self::BadPayload { .. } => "bad_payload",
            Self::GoodPayload => "good_payload",
        }
    }
}

/// Outcome plus everything measured on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub outcome: RxOutcome,
    pub start_index: Option<usize>,
    pub rx_power_db: f64,
    pub coarse_cfo: Option<CfoEstimate>,
    pub residual_cfo: Option<CfoEstimate>,
    /// The coarse estimate was removed before demodulation.
    pub coarse_applied: bool,
    /// The tracker saw the final pilot phase leave the principal branch; the residual
    /// estimate is still the principal-branch value.
    pub residual_wrapped: bool,
    pub header: Option<FrameHeader>,
    /// Decoded payload without its checksum, when the header decoded.
    pub payload: Option<Vec<u8>>,
    /// Payload bits scored against ground truth (zero when not scored).
    pub scored_bits: u64,
    /// Mean error-vector magnitude over decoded data symbols, dB.
    pub evm_db: Option<f64>,
    /// Per-OFDM-symbol EVM (linear) over header and payload rows, in order.
    pub symbol_evm: Vec<f64>,
}

impl Reception {
    fn missed() -> Self {
        Self {
            outcome: RxOutcome::NoReception,
            start_index: None,
            rx_power_db: f64::NEG_INFINITY,
            coarse_cfo: None,
            residual_cfo: None,
            coarse_applied: false,
            residual_wrapped: false,
            header: None,
            payload: None,
            scored_bits: 0,
            evm_db: None,
            symbol_evm: Vec::new(),
        }
    }

    /// Applied coarse correction plus residual estimate, Hz.
    pub fn cfo_estimate_hz(&self) -> Option<f64> {
        let c = if self.coarse_applied { self.coarse_cfo?.value_hz } else { 0.0 };
        Some(c + self.residual_cfo.map_or(0.0, |r| r.value_hz))
    }

    /// Decoded frame, available after a good payload.
    pub fn decoded_frame(&self) -> Option<Frame> {
        if !self.outcome.is_good() {
            return None;
        }
        Some(Frame { header: self.header?, payload: self.payload.clone()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub detector: DetectorConfig,
    /// Per-symbol common phase correction from the pilots.
    pub phase_tracking: bool,
    /// Samples the FFT window is moved back into the cyclic prefix.
    pub timing_backoff: usize,
    /// Skip coarse CFO correction (diagnostics only).
    pub coarse_correction: bool,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self { detector: DetectorConfig::default(), phase_tracking: true, timing_backoff: 3, coarse_correction: true }
    }
}

/// Single-antenna OFDM receiver. Holds transform plans; create one per worker.
#[derive(Debug, Clone)]
pub struct Receiver {
    pub params: SystemParams,
    pub config: ReceiverConfig,
    pub noise_floor: f64,
    engine: OfdmEngine,
    detector: Detector,
    pilot_a: [f64; N_PILOTS],
    pilot_b: [f64; N_PILOTS],
}

struct Demod<'a> {
    rx: &'a Receiver,
    frame: Vec<Complex64>,
    est: ChannelEstimatePair,
    expected_pilots: [Complex64; N_PILOTS],
    tracker: PhaseTracker,
    last_pilots: [Complex64; N_PILOTS],
    last_prior: Option<f64>,
    last_phase: f64,
}

impl Demod<'_> {
    fn symbol(&self, m: usize) -> SymbolBins {
        let start = LTS_OFFSET + m * SYMBOL_LEN + CP_LEN - self.rx.config.timing_backoff;
        let mut body = [Complex64::new(0.0, 0.0); FFT_SIZE];
        if start < self.frame.len() {
            let end = (start + FFT_SIZE).min(self.frame.len());
            body[..end - start].copy_from_slice(&self.frame[start..end]);
        }
        self.rx.engine.demodulate_symbol(&body)
    }

    /// Demodulates symbol `m` and returns it derotated by its tracked pilot phase.
    fn tracked_symbol(&mut self, m: usize) -> SymbolBins {
        let y = self.symbol(m);
        let pilots = PILOT_SUBCARRIERS.map(|k| y[bin(k)]);
        self.last_prior = self.tracker.predicted();
        let phase = self.tracker.update(track_pilot_phase(&pilots, &self.expected_pilots));
        self.last_pilots = pilots;
        self.last_phase = phase;
        if self.rx.config.phase_tracking {
            let r = Complex64::from_polar(1.0, -phase);
            y.map(|z| z * r)
        } else {
            y
        }
    }

    /// Combines the Alamouti pair starting at symbol `m`, returning two rows of unit-power symbols.
    fn pair(&mut self, m: usize) -> [Vec<Complex64>; 2] {
        let y1 = self.tracked_symbol(m);
        let y2 = self.tracked_symbol(m + 1);
        let g = symbol_gain();
        let mut r1 = Vec::with_capacity(N_DATA);
        let mut r2 = Vec::with_capacity(N_DATA);
        for k in data_subcarriers() {
            let b = bin(k);
            let (ha, hb) = self.est.entry(b);
            let (s1, s2) = combine_pair(y1[b], y2[b], ha, hb).unwrap_or_default();
            r1.push(s1 / g);
            r2.push(s2 / g);
        }
        [r1, r2]
    }
}

fn row_evm(row: &[Complex64], scheme: ModulationScheme) -> f64 {
    row.iter().map(|&s| (s - slice(s, scheme)).norm_sqr()).sum::<f64>() / row.len() as f64
}

impl Receiver {
    pub fn new(params: SystemParams, config: ReceiverConfig, noise_floor: f64) -> Self {
        Self {
            params,
            config,
            noise_floor,
            engine: OfdmEngine::new(),
            detector: Detector::new(config.detector),
            pilot_a: pilot_values(StbcRole::RoleA),
            pilot_b: pilot_values(StbcRole::RoleB),
        }
    }

    /// Runs the full pipeline on `r`. With `truth`, payload bits are scored against it.
    pub fn receive(&self, r: &[Complex64], truth: Option<&Frame>) -> Reception {
        let fs = self.params.sample_rate;
        let det = self.detector.detect(r, self.noise_floor);
        if !det.detected {
            return Reception::missed();
        }
        let s = det.start_index;
        let mut rec = Reception::missed();
        rec.start_index = Some(s);
        rec.rx_power_db = det.rx_power_db;

        let sts_end = (s + STS_LEN).min(r.len());
        let coarse = estimate_cfo_sts(&r[(s + STS_PERIOD).min(sts_end)..sts_end], fs);
        rec.coarse_cfo = Some(coarse);

        let mut frame = r[s..].to_vec();
        if self.config.coarse_correction {
            rec.coarse_applied = true;
            rotate(&mut frame, -coarse.value_hz, fs, 0.0);
        }

        let mut d = Demod {
            rx: self,
            frame,
            est: ChannelEstimatePair::zeros(),
            expected_pilots: [Complex64::new(0.0, 0.0); N_PILOTS],
            tracker: PhaseTracker::new(),
            last_pilots: [Complex64::new(0.0, 0.0); N_PILOTS],
            last_prior: None,
            last_phase: 0.0,
        };
        let (y1, y2) = (d.symbol(0), d.symbol(1));
        d.est = estimate_channels(&y1, &y2);
        let g = symbol_gain();
        for (i, k) in PILOT_SUBCARRIERS.iter().enumerate() {
            let (ha, hb) = d.est.entry(bin(*k));
            d.expected_pilots[i] = (ha * self.pilot_a[i] + hb * self.pilot_b[i]) * g;
        }

        let hdr_rows = d.pair(N_LTS_SYMBOLS);
        let mut symbol_evm: Vec<f64> = hdr_rows.iter().map(|row| row_evm(row, ModulationScheme::Qpsk)).collect();
        let mut bits = Vec::with_capacity(HEADER_LEN * 8);
        for row in &hdr_rows {
            demap_into(row, ModulationScheme::Qpsk, &mut bits);
        }
        let header = match FrameHeader::parse(&bits_to_bytes(&bits)) {
            Ok(h) => h,
            Err(_) => {
                rec.outcome = RxOutcome::BadHeader;
                rec.symbol_evm = symbol_evm;
                return rec;
            }
        };
        rec.header = Some(header);

        let layout = header.layout();
        let scheme = header.payload_mod;
        let first = N_LTS_SYMBOLS + N_HEADER_SYMBOLS;
        let mut pay_bits = Vec::with_capacity(layout.payload_symbols_on_air * N_DATA * scheme.bits_per_symbol());
        let mut payload_evm = 0.0;
        let mut n_payload_rows = 0;
        let n_rows = layout.payload_symbols_on_air.min(self.params.max_payload_symbols);
        for m in (0..n_rows).step_by(2) {
            let rows = d.pair(first + m);
            for row in &rows {
                let e = row_evm(row, scheme);
                symbol_evm.push(e);
                if n_payload_rows < layout.payload_symbols {
                    payload_evm += e;
                }
                n_payload_rows += 1;
                demap_into(row, scheme, &mut pay_bits);
            }
        }
        // Pilot phases are referenced to the midpoint of the two training symbols.
        let final_idx = if n_rows == 0 { first - 1 } else { first + n_rows - 1 };
        let duration = (final_idx as f64 - 0.5) * SYMBOL_LEN as f64 / fs;
        rec.residual_cfo = match estimate_cfo_residual(&d.last_pilots, &d.expected_pilots, duration, d.last_prior) {
            Ok(e) => Some(e),
            Err(EstimatorError::AmbiguousPhase(e)) => {
                rec.residual_wrapped = true;
                Some(e)
            }
            Err(_) => None,
        };
        rec.evm_db = Some(if layout.payload_symbols > 0 {
            10.0 * (payload_evm / layout.payload_symbols as f64).log10()
        } else {
            10.0 * (symbol_evm.iter().sum::<f64>() / symbol_evm.len() as f64).log10()
        });
        rec.symbol_evm = symbol_evm;

        pay_bits.truncate(layout.on_air_payload_bits());
        let on_air = bits_to_bytes(&pay_bits);
        let crc_ok = on_air.len() == layout.payload_len + PAYLOAD_CRC_LEN && check_on_air_payload(&on_air);
        rec.payload = Some(on_air[..on_air.len().saturating_sub(PAYLOAD_CRC_LEN)].to_vec());

        rec.outcome = match truth {
            Some(t) => {
                let want = t.on_air_payload();
                rec.scored_bits = want.len() as u64 * 8;
                let errors = count_bit_errors(&want, &on_air);
                if errors > 0 {
                    RxOutcome::BadPayload { bit_errors: errors, crc_only: false }
                } else {
                    RxOutcome::GoodPayload
                }
            }
            None if crc_ok => RxOutcome::GoodPayload,
            None => RxOutcome::BadPayload { bit_errors: 0, crc_only: true },
        };
        rec
    }
}

/// Bit errors of `got` against `want`; bytes missing from `got` count as fully wrong.
pub fn count_bit_errors(want: &[u8], got: &[u8]) -> u64 {
    want.iter()
        .enumerate()
        .map(|(i, w)| match got.get(i) {
            Some(g) => (w ^ g).count_ones() as u64,
            None => 8,
        })
        .sum()
}

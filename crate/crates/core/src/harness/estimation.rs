//! Stand-alone estimator and calibration experiments.

use super::trial::stream_rng;
use crate::channel::{add_awgn, rotate};
use crate::estimators::estimate_cfo_sts;
use crate::nodes::{Receiver, ReceiverConfig};
use crate::phy::frame::{FrameLayout, LTS_OFFSET, N_HEADER_SYMBOLS, N_LTS_SYMBOLS};
use crate::phy::modulation::{bytes_to_bits, demap_into};
use crate::phy::params::{bin, data_subcarriers, N_DATA};
use crate::phy::tx::symbol_gain;
use crate::phy::{Frame, ModulationScheme, SystemParams, Transmitter};
use crate::stbc::{decode_stream, StbcRole};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Summary of a batch of frequency estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub n: u64,
    pub mean: f64,
    pub two_sigma: f64,
    /// Kolmogorov-Smirnov distance to a normal with the sample mean and deviation.
    pub ks_stat: f64,
}

impl SpreadStats {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        if n < 2 {
            return Self { n: n as u64, mean: x.first().copied().unwrap_or(f64::NAN), two_sigma: f64::NAN, ks_stat: f64::NAN };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let mut z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
        z.sort_by(f64::total_cmp);
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = 0.5 * libm::erfc(-v / std::f64::consts::SQRT_2);
                (cdf - i as f64 / n as f64).abs().max((cdf - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        Self { n: n as u64, mean, two_sigma: 2.0 * sd, ks_stat: ks }
    }

    /// Asymptotic 1% critical value of the KS distance.
    pub fn ks_critical_1pct(&self) -> f64 {
        1.628 / (self.n as f64).sqrt()
    }
}

/// Short-training CFO estimates for a known offset at a per-sample SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseCfoPoint {
    pub snr_db: f64,
    pub true_cfo_hz: f64,
    pub stats: SpreadStats,
}

impl CoarseCfoPoint {
    pub fn bias_hz(&self) -> f64 {
        self.stats.mean - self.true_cfo_hz
    }
}

pub fn coarse_cfo_experiment(snr_db: f64, true_cfo_hz: f64, n_trials: u64, seed: u64) -> CoarseCfoPoint {
    let tx = Transmitter::new(SystemParams::default());
    let fs = tx.params.sample_rate;
    let mut sts = tx.sts(StbcRole::RoleB).to_vec();
    rotate(&mut sts, true_cfo_hz, fs, 0.0);
    let nf = 10f64.powf(-snr_db / 10.0);
    let mut rng = stream_rng(seed, 0);
    let mut buf = vec![Complex64::new(0.0, 0.0); sts.len()];
    let est: Vec<f64> = (0..n_trials)
        .map(|_| {
            buf.copy_from_slice(&sts);
            add_awgn(&mut buf, nf, &mut rng);
            estimate_cfo_sts(&buf, fs).value_hz
        })
        .collect();
    CoarseCfoPoint { snr_db, true_cfo_hz, stats: SpreadStats::from_samples(&est) }
}

/// Receiver-pipeline CFO errors for one packet length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotCfoPoint {
    pub snr_db: f64,
    pub payload_len: usize,
    pub payload_symbols: usize,
    /// Seconds between the training midpoint and the final symbol.
    pub duration_s: f64,
    pub n_attempted: u64,
    /// Coarse-only estimate error.
    pub coarse: SpreadStats,
    /// Coarse plus pilot-residual estimate error.
    pub refined: SpreadStats,
}

pub fn pilot_cfo_experiment(
    snr_db: f64,
    payload_len: usize,
    modulation: ModulationScheme,
    true_cfo_hz: f64,
    n_trials: u64,
    seed: u64,
) -> PilotCfoPoint {
    let params = SystemParams::default();
    let fs = params.sample_rate;
    let tx = Transmitter::new(params.clone());
    let nf = 10f64.powf(-snr_db / 10.0);
    // The offset is left entirely to the pilot estimator; the coarse estimate is recorded only.
    let cfg = ReceiverConfig { coarse_correction: false, ..ReceiverConfig::default() };
    let rx = Receiver::new(params, cfg, nf);
    let mut rng = stream_rng(seed, 0);
    let mut noise_rng = stream_rng(seed, 4);
    let layout = FrameLayout::new(payload_len, modulation);
    let (mut coarse, mut refined) = (Vec::new(), Vec::new());
    let mut payload = vec![0u8; payload_len];
    for _ in 0..n_trials {
        rng.fill(&mut payload[..]);
        let f = Frame::new(0, 2, 0, payload.clone(), modulation);
        let wf = tx.build_frame_waveform(&f, StbcRole::RoleB).expect("payload within limits");
        let mut r = vec![Complex64::new(0.0, 0.0); 96];
        r.extend_from_slice(&wf.samples);
        r.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), 64));
        let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
        rotate(&mut r, true_cfo_hz, fs, phase0);
        add_awgn(&mut r, nf, &mut noise_rng);
        let rec = rx.receive(&r, Some(&f));
        if let (Some(c), Some(total)) = (rec.coarse_cfo, rec.residual_cfo.and(rec.cfo_estimate_hz())) {
            coarse.push(c.value_hz - true_cfo_hz);
            refined.push(total - true_cfo_hz);
        }
    }
    let final_idx = N_LTS_SYMBOLS + N_HEADER_SYMBOLS + layout.payload_symbols_on_air - 1;
    PilotCfoPoint {
        snr_db,
        payload_len,
        payload_symbols: layout.payload_symbols_on_air,
        duration_s: (final_idx as f64 - 0.5) * 80.0 / fs,
        n_attempted: n_trials,
        coarse: SpreadStats::from_samples(&coarse),
        refined: SpreadStats::from_samples(&refined),
    }
}

/// Uncoded QPSK BER through the OFDM/Alamouti chain with ideal timing and channel knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwgnBerPoint {
    pub ebn0_db: f64,
    pub bits: u64,
    pub errors: u64,
}

impl AwgnBerPoint {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits as f64
    }

    /// `Q(sqrt(2 Eb/N0))`.
    pub fn theory(&self) -> f64 {
        qpsk_awgn_ber(self.ebn0_db)
    }

    pub fn sigma(&self) -> f64 {
        let p = self.theory();
        (p * (1.0 - p) / self.bits as f64).sqrt()
    }
}

pub fn qpsk_awgn_ber(ebn0_db: f64) -> f64 {
    0.5 * libm::erfc(10f64.powf(ebn0_db / 20.0))
}

pub fn awgn_ber_point(ebn0_db: f64, min_bits: u64, seed: u64) -> AwgnBerPoint {
    let params = SystemParams::default();
    let tx = Transmitter::new(params);
    let m = ModulationScheme::Qpsk;
    let payload_len = 1412;
    let layout = FrameLayout::new(payload_len, m);
    let g = symbol_gain();
    // Per-bin symbol energy is g^2 and a unitary FFT keeps noise at N0 per bin.
    let n0 = g * g / (m.bits_per_symbol() as f64 * 10f64.powf(ebn0_db / 10.0));
    let mut rng = stream_rng(seed, 0);
    let mut noise = stream_rng(seed, 4);
    let h = vec![(Complex64::new(0.0, 0.0), Complex64::new(g, 0.0)); N_DATA];
    let data_k = data_subcarriers();
    let (mut bits, mut errors) = (0u64, 0u64);
    let mut payload = vec![0u8; payload_len];
    let mut demapped = Vec::new();
    while bits < min_bits {
        rng.fill(&mut payload[..]);
        let f = Frame::new(0, 2, 0, payload.clone(), m);
        let mut wf = tx.build_frame_waveform(&f, StbcRole::RoleB).expect("payload within limits");
        add_awgn(&mut wf.samples, n0, &mut noise);
        let grid = tx
            .engine()
            .ofdm_demodulate(&wf.samples[LTS_OFFSET..], layout.n_ofdm_symbols())
            .expect("whole frame present");
        let rows: Vec<Vec<Complex64>> = grid.symbols[N_LTS_SYMBOLS + N_HEADER_SYMBOLS..]
            .iter()
            .map(|s| data_k.iter().map(|&k| s[bin(k)]).collect())
            .collect();
        let dec = decode_stream(&rows, &h).expect("nonzero genie channel");
        demapped.clear();
        for row in &dec {
            demap_into(row, m, &mut demapped);
        }
        let want = bytes_to_bits(&f.on_air_payload());
        errors += want.iter().zip(&demapped).filter(|(a, b)| a != b).count() as u64;
        bits += want.len() as u64;
    }
    AwgnBerPoint { ebn0_db, bits, errors }
}

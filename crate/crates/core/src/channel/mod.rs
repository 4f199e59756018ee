//! Three-link channel emulation: path loss, fading, LO offsets, delay, superposition and noise.

pub mod fading;

pub use fading::{
    decorrelation_interval, doppler_for_speed, evolve_fading, sample_fading, FadingKind, FadingModel, FadingState,
};

use crate::phy::Baseband;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Attenuation of the emulator with its programmable attenuator at zero.
pub const INHERENT_LOSS_DB: f64 = 53.0;
/// Inherent loss plus the 36 dB attenuator range.
pub const MAX_PATH_LOSS_DB: f64 = 89.0;
/// SNR seen at the inherent loss unless configured otherwise.
pub const DEFAULT_REF_SNR_DB: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("path loss {0} dB outside [53, 89] dB")]
    PathLoss(f64),
}

/// Carrier error of one node; shared by its transmit and receive chains.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeClock {
    pub lo_offset_hz: f64,
}

impl NodeClock {
    pub fn new(lo_offset_hz: f64) -> Self {
        Self { lo_offset_hz }
    }

    /// Offset observed by `rx` when `self` transmits.
    pub fn cfo_to(&self, rx: &NodeClock) -> f64 {
        self.lo_offset_hz - rx.lo_offset_hz
    }
}

/// Per-sample complex noise variance giving `ref_snr_db` at the inherent path loss.
pub fn noise_floor(ref_snr_db: f64) -> f64 {
    10f64.powf(-INHERENT_LOSS_DB / 10.0) / 10f64.powf(ref_snr_db / 10.0)
}

/// Mean receive SNR of a unit-RMS transmission over `path_loss_db`.
pub fn link_snr_db(path_loss_db: f64, ref_snr_db: f64) -> f64 {
    ref_snr_db - (path_loss_db - INHERENT_LOSS_DB)
}

/// Path loss that yields `snr_db` mean SNR.
pub fn path_loss_for_snr(snr_db: f64, ref_snr_db: f64) -> f64 {
    INHERENT_LOSS_DB + ref_snr_db - snr_db
}

/// One directed link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkChannel {
    pub path_loss_db: f64,
    pub fading: FadingModel,
    pub state: FadingState,
    pub delay_samples: usize,
    pub cfo_hz: f64,
}

impl LinkChannel {
    pub fn new<R: Rng + ?Sized>(
        path_loss_db: f64,
        fading: FadingModel,
        tx: &NodeClock,
        rx: &NodeClock,
        rng: &mut R,
    ) -> Result<Self, ChannelError> {
        // Small tolerance so computed losses such as 53 + 21 log10(1) land inside.
        if !(INHERENT_LOSS_DB - 1e-9..=MAX_PATH_LOSS_DB + 1e-9).contains(&path_loss_db) {
            return Err(ChannelError::PathLoss(path_loss_db));
        }
        Ok(Self {
            path_loss_db,
            fading,
            state: sample_fading(&fading, rng),
            delay_samples: 0,
            cfo_hz: tx.cfo_to(rx),
        })
    }

    pub fn amplitude_gain(&self) -> f64 {
        10f64.powf(-self.path_loss_db / 20.0)
    }

    pub fn evolve<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        evolve_fading(&mut self.state, dt, self.fading.doppler_hz, rng);
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state = sample_fading(&self.fading, rng);
    }
}

/// Rotates `samples` in place by `delta_f`, starting at `start_phase`; returns the phase
/// the next sample would have.
pub fn rotate(samples: &mut [Complex64], delta_f: f64, sample_rate: f64, start_phase: f64) -> f64 {
    let step = TAU * delta_f / sample_rate;
    if delta_f == 0.0 && start_phase == 0.0 {
        return 0.0;
    }
    let rot = Complex64::from_polar(1.0, step);
    for (b, chunk) in samples.chunks_mut(512).enumerate() {
        // Fresh phasor per block keeps the recurrence from drifting.
        let mut ph = Complex64::from_polar(1.0, start_phase + step * (b * 512) as f64);
        for s in chunk {
            *s *= ph;
            ph *= rot;
        }
    }
    start_phase + step * samples.len() as f64
}

/// `y[n] = x[n] e^{j(2 pi delta_f n / fs + start_phase)}`, with the continuation phase.
pub fn apply_cfo(x: &Baseband, delta_f: f64, start_phase: f64) -> (Baseband, f64) {
    let mut y = x.clone();
    let end = rotate(&mut y.samples, delta_f, x.sample_rate, start_phase);
    (y, end)
}

/// Adds circular complex Gaussian noise of per-sample variance `variance`.
pub fn add_awgn<R: Rng + ?Sized>(samples: &mut [Complex64], variance: f64, rng: &mut R) {
    let s = (variance / 2.0).sqrt();
    for x in samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *x += Complex64::new(re * s, im * s);
    }
}

/// One transmission entering the channel: its waveform, link and absolute start sample.
#[derive(Debug, Clone, Copy)]
pub struct LinkInput<'a> {
    pub waveform: &'a [Complex64],
    pub link: &'a LinkChannel,
    pub start: u64,
}

/// Noiseless receive window `[t0, t0 + len)` in absolute sample time.
pub fn superpose(inputs: &[LinkInput<'_>], t0: u64, len: usize, sample_rate: f64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    let mut conv = Vec::new();
    for inp in inputs {
        let taps = inp.link.state.taps();
        let g = inp.link.amplitude_gain();
        conv.clear();
        conv.resize(inp.waveform.len() + taps.len() - 1, Complex64::new(0.0, 0.0));
        for (n, &x) in inp.waveform.iter().enumerate() {
            let xs = x * g;
            for (m, &h) in taps.iter().enumerate() {
                conv[n + m] += xs * h;
            }
        }
        let arrive = inp.start + inp.link.delay_samples as u64;
        // Receiver mixes with phase referenced to absolute time so slots stay coherent.
        let phase0 = TAU * inp.link.cfo_hz * arrive as f64 / sample_rate;
        rotate(&mut conv, inp.link.cfo_hz, sample_rate, phase0);
        for (i, &c) in conv.iter().enumerate() {
            let t = arrive + i as u64;
            if t >= t0 && t < t0 + len as u64 {
                out[(t - t0) as usize] += c;
            }
        }
    }
    out
}

/// Superposes all inputs over the window and adds receiver noise across all of it.
pub fn apply_link<R: Rng + ?Sized>(
    inputs: &[LinkInput<'_>],
    t0: u64,
    len: usize,
    noise_floor: f64,
    sample_rate: f64,
    rng: &mut R,
) -> Baseband {
    let mut out = superpose(inputs, t0, len, sample_rate);
    add_awgn(&mut out, noise_floor, rng);
    Baseband::new(out, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_wave(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| fading::complex_gaussian(&mut rng, 1.0)).collect()
    }

    fn awgn_link(pl: f64, cfo: f64) -> LinkChannel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FadingModel::new(FadingKind::Awgn, 0.0);
        LinkChannel::new(pl, m, &NodeClock::new(cfo), &NodeClock::default(), &mut rng).unwrap()
    }

    #[test]
    fn cfo_identity_additivity_modulus() {
        let x = Baseband::new(random_wave(5000, 1), 10e6);
        let (y, end) = apply_cfo(&x, 0.0, 0.0);
        assert_eq!(y, x);
        assert_eq!(end, 0.0);
        let (a, pa) = apply_cfo(&x, 1234.5, 0.3);
        let (ab, _) = apply_cfo(&a, -377.0, 0.0);
        let (c, _) = apply_cfo(&x, 1234.5 - 377.0, 0.3);
        for i in 0..x.len() {
            assert!((ab.samples[i] - c.samples[i]).norm() < 1e-10);
            assert!((a.samples[i].norm() - x.samples[i].norm()).abs() < 1e-12);
        }
        let want = 0.3 + TAU * 1234.5 * 5000.0 / 10e6;
        assert!((pa - want).abs() < 1e-12);
    }

    #[test]
    fn cfo_phase_continuity_across_blocks() {
        let x = random_wave(3000, 2);
        let mut whole = x.clone();
        rotate(&mut whole, 812.0, 10e6, 0.0);
        let mut first = x[..1700].to_vec();
        let mut second = x[1700..].to_vec();
        let p = rotate(&mut first, 812.0, 10e6, 0.0);
        rotate(&mut second, 812.0, 10e6, p);
        for (i, s) in first.iter().chain(&second).enumerate() {
            assert!((s - whole[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn inherent_loss_scaling() {
        let link = awgn_link(53.0, 0.0);
        let x = vec![Complex64::new(1.0, 0.0); 1000];
        let y = superpose(&[LinkInput { waveform: &x, link: &link, start: 0 }], 0, 1000, 10e6);
        let rms = (y.iter().map(|z| z.norm_sqr()).sum::<f64>() / 1000.0).sqrt();
        assert!((rms - 2.2387e-3).abs() < 1e-6, "{rms}");
    }

    #[test]
    fn path_loss_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = NodeClock::default();
        for pl in [52.0, 89.5, f64::NAN] {
            assert!(LinkChannel::new(pl, FadingModel::flat(), &c, &c, &mut rng).is_err());
        }
        assert!(LinkChannel::new(89.0, FadingModel::flat(), &c, &c, &mut rng).is_ok());
    }

    #[test]
    fn superposition_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = NodeClock::default();
        let la = LinkChannel::new(60.0, FadingModel::new(FadingKind::Tdl15ns, 2.67), &NodeClock::new(300.0), &c, &mut rng)
            .unwrap();
        let lb = LinkChannel::new(57.0, FadingModel::flat(), &NodeClock::new(-900.0), &c, &mut rng).unwrap();
        let (a, b) = (random_wave(2000, 3), random_wave(1500, 4));
        let ia = LinkInput { waveform: &a, link: &la, start: 100 };
        let ib = LinkInput { waveform: &b, link: &lb, start: 40 };
        let ya = apply_link(&[ia], 0, 2500, 1e-9, 10e6, &mut ChaCha8Rng::seed_from_u64(5));
        let yb = superpose(&[ib], 0, 2500, 10e6);
        let yab = apply_link(&[ia, ib], 0, 2500, 1e-9, 10e6, &mut ChaCha8Rng::seed_from_u64(5));
        for i in 0..2500 {
            assert!((ya.samples[i] + yb[i] - yab.samples[i]).norm() < 1e-15);
        }
        let scaled: Vec<Complex64> = a.iter().map(|z| z * 3.5).collect();
        let y1 = superpose(&[ia], 0, 2500, 10e6);
        let y3 = superpose(&[LinkInput { waveform: &scaled, ..ia }], 0, 2500, 10e6);
        for i in 0..2500 {
            assert!((y1[i] * 3.5 - y3[i]).norm() < 1e-15);
        }
    }

    #[test]
    fn configured_snr_is_realized() {
        let nf = noise_floor(DEFAULT_REF_SNR_DB);
        for pl in [53.0, 60.0, 75.0] {
            let link = awgn_link(pl, 0.0);
            let x = random_wave(400_000, 8);
            let s = superpose(&[LinkInput { waveform: &x, link: &link, start: 0 }], 0, x.len(), 10e6);
            let mut n = vec![Complex64::new(0.0, 0.0); x.len()];
            add_awgn(&mut n, nf, &mut ChaCha8Rng::seed_from_u64(9));
            let ps = s.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let pn = n.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let snr = 10.0 * (ps / pn).log10();
            let want = link_snr_db(pl, DEFAULT_REF_SNR_DB);
            assert!((snr - want).abs() < 0.2, "pl {pl}: {snr} vs {want}");
        }
    }

    #[test]
    fn cfos_compose_over_relay() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let s = NodeClock::new(rng.gen_range(-2000.0..2000.0));
            let r = NodeClock::new(rng.gen_range(-2000.0..2000.0));
            let d = NodeClock::new(rng.gen_range(-2000.0..2000.0));
            assert!((s.cfo_to(&d) - (s.cfo_to(&r) + r.cfo_to(&d))).abs() < 1e-9);
        }
    }

    #[test]
    fn independent_link_streams() {
        let streams: Vec<ChaCha8Rng> = (1..=3)
            .map(|k| {
                let mut r = ChaCha8Rng::seed_from_u64(77);
                r.set_stream(k);
                r
            })
            .collect();
        let n = 100_000;
        let draws: Vec<Vec<Complex64>> = streams
            .into_iter()
            .map(|mut r| (0..n).map(|_| sample_fading(&FadingModel::flat(), &mut r).taps()[0]).collect())
            .collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let c: Complex64 = draws[i].iter().zip(&draws[j]).map(|(a, b)| a * b.conj()).sum::<Complex64>() / n as f64;
            assert!(c.norm() < 0.02, "{i}{j}: {}", c.norm());
        }
    }
}

//! Packet detection, carrier-offset estimation, channel estimation and pilot phase tracking.

use crate::phy::frame::{lts_value, LTS_OFFSET, STS_PERIOD};
use crate::phy::ofdm::SymbolBins;
use crate::phy::params::{bin, used_subcarriers, CP_LEN, FFT_SIZE, SYMBOL_LEN};
use crate::phy::tx::{lts_bins, symbol_gain};
use crate::phy::OfdmEngine;
use crate::stbc::ChannelEstimatePair;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Offset from the frame start to the body of the first long-training symbol.
pub const LTS_BODY_OFFSET: usize = LTS_OFFSET + CP_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Energy window length in samples.
    pub window: usize,
    /// Threshold above the noise floor, dB.
    pub margin_db: f64,
    /// Half-width of the training-correlation search around the expected position.
    pub search: usize,
    /// Timing locks to the earliest correlation peak within this fraction of the largest,
    /// so a weaker but earlier copy of the frame stays inside the cyclic prefix.
    pub first_path_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { window: 16, margin_db: 6.0, search: 32, first_path_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub start_index: usize,
    pub rx_power_db: f64,
}

impl DetectionResult {
    pub fn missed() -> Self {
        Self { detected: false, start_index: 0, rx_power_db: f64::NEG_INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CfoSource {
    TimeDomain,
    PilotResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfoEstimate {
    pub value_hz: f64,
    pub source: CfoSource,
    pub est_snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EstimatorError {
    #[error("final pilot phase has wrapped; principal-branch estimate {:.1} Hz", .0.value_hz)]
    AmbiguousPhase(CfoEstimate),
    #[error("packet duration must be positive")]
    NonPositiveDuration,
}

/// Energy detector refined by correlation against the long training symbols.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    lts: Vec<Complex64>,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        let mut wave = Vec::with_capacity(SYMBOL_LEN);
        OfdmEngine::new().modulate_symbol(&lts_bins(), &mut wave);
        Self { config, lts: wave[CP_LEN..].to_vec() }
    }

    fn lts_corr(&self, r: &[Complex64], at: usize) -> f64 {
        if at + FFT_SIZE > r.len() {
            return 0.0;
        }
        let c: Complex64 = r[at..at + FFT_SIZE].iter().zip(&self.lts).map(|(x, l)| x * l.conj()).sum();
        c.norm_sqr()
    }

    /// Finds the first frame in `r`. `start_index` is the first STS sample.
    pub fn detect(&self, r: &[Complex64], noise_floor: f64) -> DetectionResult {
        let w = self.config.window;
        if r.len() < w {
            return DetectionResult::missed();
        }
        let threshold = w as f64 * noise_floor * 10f64.powf(self.config.margin_db / 10.0);
        let mut energy: f64 = r[..w].iter().map(|z| z.norm_sqr()).sum();
        let mut trigger = None;
        for n in 0..=r.len() - w {
            if n > 0 {
                energy += r[n + w - 1].norm_sqr() - r[n - 1].norm_sqr();
            }
            if energy > threshold {
                trigger = Some(n);
                break;
            }
        }
        let Some(det) = trigger else {
            return DetectionResult::missed();
        };
        // Both training symbols are scored so a cancelling role superposition on
        // one of them cannot hide the frame.
        let centre = det + LTS_BODY_OFFSET;
        let lo = centre.saturating_sub(self.config.search);
        let hi = centre + self.config.search;
        let metric: Vec<f64> = (lo..=hi).map(|p| self.lts_corr(r, p) + self.lts_corr(r, p + SYMBOL_LEN)).collect();
        let peak = metric.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return DetectionResult::missed();
        }
        let first = metric.iter().position(|&m| m >= self.config.first_path_fraction * peak).expect("peak is present");
        // Step forward to the local maximum of the first path.
        let best = lo + (first..metric.len()).find(|&i| i + 1 == metric.len() || metric[i + 1] <= metric[i]).expect("last index qualifies");
        if best < LTS_BODY_OFFSET {
            return DetectionResult::missed();
        }
        let start = best - LTS_BODY_OFFSET;
        let lts = &r[(start + LTS_OFFSET).min(r.len())..(start + LTS_OFFSET + 2 * SYMBOL_LEN).min(r.len())];
        if lts.is_empty() {
            return DetectionResult::missed();
        }
        let p = lts.iter().map(|z| z.norm_sqr()).sum::<f64>() / lts.len() as f64;
        DetectionResult { detected: true, start_index: start, rx_power_db: 10.0 * p.log10() }
    }
}

impl Default for Detector {
    fn default() -> Self {
        Self::new(DetectorConfig::default())
    }
}

/// Convenience wrapper building a [`Detector`] with the default configuration.
pub fn detect_packet(stream: &[Complex64], noise_floor: f64) -> DetectionResult {
    Detector::default().detect(stream, noise_floor)
}

/// Lag-`period` autocorrelation estimator: `fs/(2 pi L) * arg(sum conj(r[n]) r[n+L])`.
pub fn estimate_cfo_coarse(preamble: &[Complex64], period: usize, sample_rate: f64) -> CfoEstimate {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut power = 0.0;
    for n in 0..preamble.len().saturating_sub(period) {
        acc += preamble[n].conj() * preamble[n + period];
        power += 0.5 * (preamble[n].norm_sqr() + preamble[n + period].norm_sqr());
    }
    let value_hz = if acc.norm_sqr() > 0.0 { sample_rate / (TAU * period as f64) * acc.arg() } else { 0.0 };
    // |acc|/power estimates S/(S+N) for a periodic signal.
    let rho = if power > 0.0 { (acc.norm() / power).min(1.0 - 1e-12) } else { 0.0 };
    CfoEstimate { value_hz, source: CfoSource::TimeDomain, est_snr_db: 10.0 * (rho / (1.0 - rho)).log10() }
}

/// Unambiguous coarse range, `fs/(2L)`.
pub fn coarse_range_hz(period: usize, sample_rate: f64) -> f64 {
    sample_rate / (2.0 * period as f64)
}

/// Convenience for the frame's short training field.
pub fn estimate_cfo_sts(preamble: &[Complex64], sample_rate: f64) -> CfoEstimate {
    estimate_cfo_coarse(preamble, STS_PERIOD, sample_rate)
}

/// Common phase of one symbol's pilots relative to their expected values.
pub fn track_pilot_phase(pilots: &[Complex64], reference: &[Complex64]) -> f64 {
    pilots.iter().zip(reference).map(|(p, r)| p * r.conj()).sum::<Complex64>().arg()
}

/// Residual offset from the final symbol's pilot phase accumulated over `packet_duration`
/// seconds, taken on the principal branch. `prior` is the unwrapped phase predicted by the
/// per-symbol tracker; when it lies on another branch the phase has wrapped and
/// [`EstimatorError::AmbiguousPhase`] carries the principal-branch estimate.
pub fn estimate_cfo_residual(
    final_symbol_pilots: &[Complex64],
    reference_pilots: &[Complex64],
    packet_duration: f64,
    prior: Option<f64>,
) -> Result<CfoEstimate, EstimatorError> {
    if packet_duration <= 0.0 || !packet_duration.is_finite() {
        return Err(EstimatorError::NonPositiveDuration);
    }
    let phi = track_pilot_phase(final_symbol_pilots, reference_pilots);
    let sig: f64 = reference_pilots.iter().map(|r| r.norm_sqr()).sum();
    let err: f64 = final_symbol_pilots
        .iter()
        .zip(reference_pilots)
        .map(|(p, r)| (p * Complex64::from_polar(1.0, -phi) - r).norm_sqr())
        .sum();
    let est = CfoEstimate {
        value_hz: phi / (TAU * packet_duration),
        source: CfoSource::PilotResidual,
        est_snr_db: 10.0 * (sig / err.max(1e-300)).log10(),
    };
    match prior {
        Some(p) if ((p - phi) / TAU).round() != 0.0 => Err(EstimatorError::AmbiguousPhase(est)),
        _ => Ok(est),
    }
}

/// Unwraps successive per-symbol pilot phases into a continuous track.
#[derive(Debug, Clone, Default)]
pub struct PhaseTracker {
    last: Option<f64>,
    slope: f64,
}

impl PhaseTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Phase expected for the next symbol given the track so far.
    pub fn predicted(&self) -> Option<f64> {
        self.last.map(|p| p + self.slope)
    }

    /// Feeds one raw (wrapped) phase and returns its unwrapped value.
    pub fn update(&mut self, raw: f64) -> f64 {
        let unwrapped = match self.predicted() {
            Some(pred) => raw + TAU * ((pred - raw) / TAU).round(),
            None => raw,
        };
        if let Some(prev) = self.last {
            // Light smoothing of the per-symbol slope keeps prediction stable in noise.
            self.slope = 0.8 * self.slope + 0.2 * (unwrapped - prev);
        }
        self.last = Some(unwrapped);
        unwrapped
    }
}

/// Least-squares role channels from the two training symbols.
pub fn estimate_channels(y1: &SymbolBins, y2: &SymbolBins) -> ChannelEstimatePair {
    let mut est = ChannelEstimatePair::zeros();
    let g = symbol_gain();
    for k in used_subcarriers() {
        let b = bin(k);
        let l = 2.0 * lts_value(k) * g;
        est.h_a[b] = (y1[b] + y2[b]) / l;
        est.h_b[b] = (y1[b] - y2[b]) / l;
    }
    est
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use super::*;
    use crate::channel::{add_awgn, apply_cfo, rotate};
    use crate::phy::frame::lts_second_polarity;
    use crate::phy::{Baseband, Frame, ModulationScheme, SystemParams, Transmitter};
    use crate::stbc::StbcRole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = 10e6;

    fn tx() -> Transmitter {
        Transmitter::new(SystemParams::default())
    }

    fn test_frame(len: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(0, 2, 1, (0..len).map(|_| rng.gen()).collect(), ModulationScheme::Qpsk)
    }

    /// Unit-RMS frame at `offset` inside noise of variance `nf`.
    fn embed(wave: &[Complex64], offset: usize, total: usize, amp: f64, nf: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        let mut r = vec![Complex64::new(0.0, 0.0); total];
        for (i, &x) in wave.iter().enumerate() {
            if offset + i < total {
                r[offset + i] = x * amp;
            }
        }
        add_awgn(&mut r, nf, rng);
        r
    }

    #[test]
    fn false_alarm_rate_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nf = 1e-6;
        let mut r = vec![Complex64::new(0.0, 0.0); 100_000];
        add_awgn(&mut r, nf, &mut rng);
        assert!(!detect_packet(&r, nf).detected);
        let thr = 16.0 * nf * 10f64.powf(0.6);
        let hits = r.windows(16).filter(|w| w.iter().map(|z| z.norm_sqr()).sum::<f64>() > thr).count();
        assert!((hits as f64) / ((r.len() - 15) as f64) < 1e-4);
    }

    #[test]
    fn detects_frame_start_at_high_snr() {
        let t = tx();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wf = t.build_frame_waveform(&test_frame(200, 3), StbcRole::RoleB).unwrap();
        for _ in 0..50 {
            let r = embed(&wf.samples, 5000, 5000 + wf.len() + 200, 1.0, 1e-3, &mut rng);
            let d = detect_packet(&r, 1e-3);
            assert!(d.detected);
            assert!((4998..=5002).contains(&d.start_index), "{}", d.start_index);
            assert!(d.rx_power_db.abs() < 0.5);
        }
    }

    #[test]
    fn detection_probability_grows_with_snr() {
        let t = tx();
        let wf = t.build_frame_waveform(&test_frame(50, 4), StbcRole::RoleB).unwrap();
        let nf = 1.0;
        let trials = 300;
        let mut prev = -1.0;
        for snr_db in [-5.0, -2.5, 0.0, 2.5, 5.0, 10.0, 15.0, 20.0] {
            let amp = 10f64.powf(snr_db / 20.0);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let hits = (0..trials)
                .filter(|_| {
                    let r = embed(&wf.samples, 300, 300 + wf.len(), amp, nf, &mut rng);
                    let d = detect_packet(&r, nf);
                    d.detected && d.start_index.abs_diff(300) <= 2
                })
                .count();
            let p = hits as f64 / trials as f64;
            assert!(p >= prev, "{snr_db} dB: {p} < {prev}");
            prev = p;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn coarse_zero_offset_noiseless() {
        let t = tx();
        for role in [StbcRole::RoleA, StbcRole::RoleB] {
            let e = estimate_cfo_sts(t.sts(role), FS);
            assert!(e.value_hz.abs() < 1e-6);
            assert_eq!(e.source, CfoSource::TimeDomain);
        }
    }

    #[test]
    fn coarse_unbiased_at_305_hz() {
        let t = tx();
        let sts = Baseband::new(t.sts(StbcRole::RoleB).to_vec(), FS);
        let (shifted, _) = apply_cfo(&sts, 305.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nf = 1e-3;
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut r = shifted.samples.clone();
            add_awgn(&mut r, nf, &mut rng);
            sum += estimate_cfo_sts(&r, FS).value_hz;
        }
        let mean = sum / n as f64;
        assert!((mean - 305.0).abs() < 5.0, "mean {mean}");
    }

    #[test]
    fn coarse_range_and_aliasing() {
        let t = tx();
        let sts = Baseband::new(t.sts(StbcRole::RoleA).to_vec(), FS);
        let range = coarse_range_hz(16, FS);
        assert_eq!(range, 312_500.0);
        for f in [range * 0.999, -range * 0.999, 1500.0, -77_000.0] {
            let e = estimate_cfo_sts(&apply_cfo(&sts, f, 0.0).0.samples, FS).value_hz;
            assert!((e - f).abs() < 1e-3 * range, "{f} -> {e}");
        }
        // Beyond the range the estimate wraps by exactly 2*range.
        let f = range * 1.2;
        let e = estimate_cfo_sts(&apply_cfo(&sts, f, 0.0).0.samples, FS).value_hz;
        assert!((e - (f - 2.0 * range)).abs() < 1.0, "{e}");
    }

    #[test]
    fn residual_forward_model() {
        let reference = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let e = estimate_cfo_residual(&reference, &reference, 1e-3, None).unwrap();
        assert_eq!(e.value_hz, 0.0);
        let t = 500e-6;
        let phi = TAU * 100.0 * t;
        assert!((phi - 0.1 * PI).abs() < 1e-12);
        let rot: Vec<Complex64> = reference.iter().map(|r| r * Complex64::from_polar(1.0, phi)).collect();
        let e = estimate_cfo_residual(&rot, &reference, t, None).unwrap();
        assert!((e.value_hz - 100.0).abs() < 1e-9);
        assert_eq!(e.source, CfoSource::PilotResidual);
        assert!(estimate_cfo_residual(&rot, &reference, 0.0, None).is_err());
    }

    #[test]
    fn residual_flags_wrapped_phase() {
        let reference = [Complex64::new(1.0, 0.0); 4];
        let phi = 3.5; // beyond pi: the principal branch reads 3.5 - 2pi
        let rot: Vec<Complex64> = reference.iter().map(|r| r * Complex64::from_polar(1.0, phi)).collect();
        let e = estimate_cfo_residual(&rot, &reference, 1.0, None).unwrap();
        assert!((e.value_hz * TAU - (3.5 - TAU)).abs() < 1e-9);
        match estimate_cfo_residual(&rot, &reference, 1.0, Some(3.3)) {
            Err(EstimatorError::AmbiguousPhase(p)) => assert_eq!(p, e),
            other => panic!("{other:?}"),
        }
        assert_eq!(estimate_cfo_residual(&rot, &reference, 1.0, Some(-2.5)), Ok(e));
    }

    /// Spread of the final-symbol estimator for packets of `n_sym` symbols at `snr_db` per pilot.
    fn residual_two_sigma(n_sym: usize, snr_db: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = [Complex64::new(1.0, 0.0); 4];
        let nf = 10f64.powf(-snr_db / 10.0);
        let t = (n_sym as f64 - 0.5) * 8e-6;
        let est: Vec<f64> = (0..10_000)
            .map(|_| {
                let mut p = reference.to_vec();
                rotate(&mut p, 0.0, FS, TAU * 50.0 * t);
                add_awgn(&mut p, nf, &mut rng);
                estimate_cfo_residual(&p, &reference, t, None).unwrap().value_hz
            })
            .collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        2.0 * (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / est.len() as f64).sqrt()
    }

    #[test]
    fn residual_spread_halves_with_double_duration() {
        for snr in [10.0, 20.0] {
            let ratio = residual_two_sigma(120, snr, 8) / residual_two_sigma(60, snr, 9);
            assert!((0.35..=0.65).contains(&ratio), "{snr} dB ratio {ratio}");
        }
    }

    fn lts_pair(role: StbcRole) -> (SymbolBins, SymbolBins) {
        let l = lts_bins();
        (l, l.map(|z| z * lts_second_polarity(role)))
    }

    #[test]
    fn solo_role_b_estimates() {
                let h = Complex64::new(0.3, -1.1);
        let (a, b) = lts_pair(StbcRole::RoleB);
        let est = estimate_channels(&a.map(|z| z * h), &b.map(|z| z * h));
        for k in used_subcarriers() {
            assert!((est.h_b[bin(k)] - h).norm() < 1e-12);
            assert!(est.h_a[bin(k)].norm() < 1e-12);
        }
    }

    #[test]
    fn both_roles_recovered_exactly() {
                let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (a1, a2) = lts_pair(StbcRole::RoleA);
        let (b1, b2) = lts_pair(StbcRole::RoleB);
        for _ in 0..100 {
            let ha: Vec<Complex64> = (0..64).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
            let hb: Vec<Complex64> = (0..64).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
            let mut y1 = [Complex64::new(0.0, 0.0); 64];
            let mut y2 = y1;
            for i in 0..64 {
                y1[i] = ha[i] * a1[i] + hb[i] * b1[i];
                y2[i] = ha[i] * a2[i] + hb[i] * b2[i];
            }
            let est = estimate_channels(&y1, &y2);
            for k in used_subcarriers() {
                let b = bin(k);
                assert!((est.h_a[b] - ha[b]).norm() < 1e-10);
                assert!((est.h_b[b] - hb[b]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn channel_estimate_mse_matches_least_squares() {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b) = lts_pair(StbcRole::RoleB);
        let n0 = 10f64.powf(-2.0);
        let trials = 4000;
        let mut sq = Vec::new();
        for _ in 0..trials {
            let mut y1 = a.to_vec();
            let mut y2 = b.to_vec();
            add_awgn(&mut y1, n0, &mut rng);
            add_awgn(&mut y2, n0, &mut rng);
            let est = estimate_channels(&y1.try_into().unwrap(), &y2.try_into().unwrap());
            for k in used_subcarriers() {
                sq.push((est.h_b[bin(k)] - 1.0).norm_sqr());
            }
        }
        let mse = sq.iter().sum::<f64>() / sq.len() as f64;
        let l2 = symbol_gain().powi(2);
        let want = n0 / (2.0 * l2);
        // Squared errors are exponential: standard deviation equals the mean.
        let sigma = want / (sq.len() as f64).sqrt();
        assert!((mse - want).abs() < 3.0 * sigma, "{mse} vs {want}");
    }

    #[test]
    fn tracker_zero_and_linear_slope() {
        let reference = [Complex64::new(1.0, 0.0); 4];
        let mut tr = PhaseTracker::new();
        for _ in 0..10 {
            assert_eq!(tr.update(track_pilot_phase(&reference, &reference)), 0.0);
        }
        let f = 900.0;
        let step = TAU * f * 8e-6;
        let mut tr = PhaseTracker::new();
        let mut phases = Vec::new();
        for m in 0..200 {
            let raw = (step * m as f64 + PI).rem_euclid(TAU) - PI;
            let p: Vec<Complex64> = reference.iter().map(|r| r * Complex64::from_polar(1.0, raw)).collect();
            phases.push(tr.update(track_pilot_phase(&p, &reference)));
        }
        let slope = (phases[199] - phases[0]) / 199.0;
        assert!((slope - step).abs() / step < 0.01, "{slope} vs {step}");
    }
}

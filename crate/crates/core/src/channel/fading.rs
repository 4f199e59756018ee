//! Rayleigh fading taps and their slow time evolution.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Speed of light, m/s.
const LIGHT_SPEED: f64 = 299_792_458.0;
/// Spacing of the delay grid the multipath profile is synthesized on.
pub const SYNTHESIS_STEP_S: f64 = 10e-9;
/// Target RMS delay spread of the frequency-selective profile.
pub const TDL_RMS_SPREAD_S: f64 = 15e-9;
/// Number of synthesis-grid paths kept (profile tail below -40 dB is dropped).
const TDL_PATHS: usize = 14;
/// Sample-grid taps span n in [-TDL_PRECURSOR, TDL_SAMPLE_TAPS - TDL_PRECURSOR).
const TDL_PRECURSOR: usize = 2;
const TDL_SAMPLE_TAPS: usize = 8;
const SAMPLE_PERIOD_S: f64 = 100e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingKind {
    /// Fixed unit tap: pure path loss plus noise.
    Awgn,
    /// One Rayleigh tap.
    Flat,
    /// Exponential multipath profile, 15 ns RMS delay spread.
    Tdl15ns,
}

impl std::str::FromStr for FadingKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(Self::Awgn),
            "flat" => Ok(Self::Flat),
            "tdl15ns" => Ok(Self::Tdl15ns),
            other => Err(format!("unknown fading kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingModel {
    pub kind: FadingKind,
    pub doppler_hz: f64,
}

impl FadingModel {
    pub fn new(kind: FadingKind, doppler_hz: f64) -> Self {
        Self { kind, doppler_hz }
    }

    pub fn flat() -> Self {
        Self::new(FadingKind::Flat, doppler_for_speed(1.2, 2.4e9))
    }
}

/// Maximum Doppler shift for a terminal speed in km/h at carrier `fc`.
pub fn doppler_for_speed(speed_kmh: f64, fc: f64) -> f64 {
    speed_kmh / 3.6 / LIGHT_SPEED * fc
}

/// Interval after which Gauss-Markov evolution fully decorrelates the taps (first zero of J0).
pub fn decorrelation_interval(doppler_hz: f64) -> f64 {
    const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;
    J0_FIRST_ZERO / (2.0 * std::f64::consts::PI * doppler_hz)
}

/// Current fading realization of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingState {
    kind: FadingKind,
    /// Unit-variance path gains on the synthesis grid (one entry for flat fading).
    paths: Vec<Complex64>,
    taps: Vec<Complex64>,
}

impl FadingState {
    /// Tap vector on the sample grid; index 0 is the earliest tap.
    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn kind(&self) -> FadingKind {
        self.kind
    }

    /// Fixed taps, e.g. for a deterministic test channel.
    pub fn fixed(taps: Vec<Complex64>) -> Self {
        Self { kind: FadingKind::Awgn, paths: Vec::new(), taps }
    }

    /// Total tap power.
    pub fn power(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }

    fn refresh(&mut self) {
        match self.kind {
            FadingKind::Awgn => {}
            FadingKind::Flat => self.taps = vec![self.paths[0]],
            FadingKind::Tdl15ns => {
                let m = &tdl_profile().resample;
                self.taps = m.iter().map(|row| row.iter().zip(&self.paths).map(|(w, p)| p * *w).sum()).collect();
            }
        }
    }
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draws an independent fading realization.
pub fn sample_fading<R: Rng + ?Sized>(model: &FadingModel, rng: &mut R) -> FadingState {
    let n = match model.kind {
        FadingKind::Awgn => return FadingState::fixed(vec![Complex64::new(1.0, 0.0)]),
        FadingKind::Flat => 1,
        FadingKind::Tdl15ns => TDL_PATHS,
    };
    let paths = (0..n).map(|_| complex_gaussian(rng, 1.0)).collect();
    let mut state = FadingState { kind: model.kind, paths, taps: Vec::new() };
    state.refresh();
    state
}

/// Gauss-Markov step: every path gain becomes `rho*g + sqrt(1-rho^2)*w`, with
/// `rho = J0(2*pi*doppler*dt)`.
pub fn evolve_fading<R: Rng + ?Sized>(state: &mut FadingState, dt: f64, doppler_hz: f64, rng: &mut R) {
    assert!(dt >= 0.0, "negative time step");
    if dt == 0.0 || state.paths.is_empty() {
        return;
    }
    let rho = libm::j0(2.0 * std::f64::consts::PI * doppler_hz * dt);
    let innov = (1.0 - rho * rho).max(0.0);
    for p in &mut state.paths {
        *p = *p * rho + complex_gaussian(rng, innov);
    }
    state.refresh();
}

/// Synthesis-grid power-delay profile and the matrix mapping path gains to sample taps.
#[derive(Debug)]
pub struct TdlProfile {
    /// Normalized path powers on the 10 ns grid.
    pub powers: Vec<f64>,
    /// Geometric decay ratio between successive 10 ns paths.
    pub decay: f64,
    resample: Vec<Vec<f64>>,
}

impl TdlProfile {
    /// RMS delay spread of the synthesis-grid profile, seconds.
    pub fn rms_delay_spread(&self) -> f64 {
        rms_spread(&self.powers)
    }
}

fn geometric_powers(q: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..TDL_PATHS).map(|i| q.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

fn rms_spread(powers: &[f64]) -> f64 {
    let delays = (0..powers.len()).map(|i| i as f64 * SYNTHESIS_STEP_S);
    let mean: f64 = delays.clone().zip(powers).map(|(t, p)| t * p).sum();
    let second: f64 = delays.zip(powers).map(|(t, p)| t * t * p).sum();
    (second - mean * mean).sqrt()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn tdl_profile() -> &'static TdlProfile {
    static PROFILE: OnceLock<TdlProfile> = OnceLock::new();
    PROFILE.get_or_init(|| {
        // Spread grows monotonically with q; bisect for the target.
        let (mut lo, mut hi) = (0.0f64, 0.99f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rms_spread(&geometric_powers(mid)) < TDL_RMS_SPREAD_S {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let decay = 0.5 * (lo + hi);
        let powers = geometric_powers(decay);
        let ratio = SYNTHESIS_STEP_S / SAMPLE_PERIOD_S;
        let mut resample: Vec<Vec<f64>> = (0..TDL_SAMPLE_TAPS)
            .map(|m| {
                let n = m as f64 - TDL_PRECURSOR as f64;
                powers.iter().enumerate().map(|(i, p)| p.sqrt() * sinc(n - i as f64 * ratio)).collect()
            })
            .collect();
        // Mean total tap power is sum of squared weights (paths are independent).
        let total: f64 = resample.iter().flatten().map(|w| w * w).sum();
        for row in &mut resample {
            for w in row.iter_mut() {
                *w /= total.sqrt();
            }
        }
        TdlProfile { powers, decay, resample }
    })
}

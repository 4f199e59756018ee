//! OFDM modulation and demodulation with a unitary 64-point transform.

use super::params::{bin, CP_LEN, FFT_SIZE, SYMBOL_LEN};
use super::PhyError;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::io::{self, Read, Write};
use std::sync::Arc;

/// One OFDM symbol in FFT-bin order.
pub type SymbolBins = [Complex64; FFT_SIZE];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const UNITARY: f64 = 0.125; // 1/sqrt(64)

/// A block of complex samples at a known rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseband {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl Baseband {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    /// Dumps the samples as an 8-byte little-endian count followed by interleaved
    /// little-endian f64 I/Q pairs.
    pub fn write_iq<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for z in &self.samples {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_iq<R: Read>(mut r: R, sample_rate: f64) -> io::Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        let mut samples = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            samples.push(Complex64::new(re, im));
        }
        Ok(Self { samples, sample_rate })
    }
}

/// Frequency-domain content of consecutive OFDM symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierGrid {
    pub symbols: Vec<SymbolBins>,
}

impl SubcarrierGrid {
    pub fn zeros(n_symbols: usize) -> Self {
        Self { symbols: vec![[ZERO; FFT_SIZE]; n_symbols] }
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn get(&self, symbol: usize, subcarrier: i32) -> Complex64 {
        self.symbols[symbol][bin(subcarrier)]
    }

    pub fn set(&mut self, symbol: usize, subcarrier: i32, value: Complex64) {
        self.symbols[symbol][bin(subcarrier)] = value;
    }

    pub fn energy(&self) -> f64 {
        self.symbols.iter().flatten().map(|z| z.norm_sqr()).sum()
    }
}

/// Planned forward/inverse transforms, shareable across threads.
#[derive(Clone)]
pub struct OfdmEngine {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OfdmEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OfdmEngine")
    }
}

impl Default for OfdmEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl OfdmEngine {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(FFT_SIZE),
            inv: planner.plan_fft_inverse(FFT_SIZE),
        }
    }

    /// Inverse transform of one symbol, returned as CP + body (80 samples).
    pub fn modulate_symbol(&self, bins: &SymbolBins, out: &mut Vec<Complex64>) {
        let mut buf = *bins;
        self.inv.process(&mut buf);
        for z in &mut buf {
            *z *= UNITARY;
        }
        out.extend_from_slice(&buf[FFT_SIZE - CP_LEN..]);
        out.extend_from_slice(&buf);
    }

    /// Forward transform of the 64 samples starting at `body`.
    pub fn demodulate_symbol(&self, body: &[Complex64]) -> SymbolBins {
        let mut buf = [ZERO; FFT_SIZE];
        buf.copy_from_slice(&body[..FFT_SIZE]);
        self.fwd.process(&mut buf);
        for z in &mut buf {
            *z *= UNITARY;
        }
        buf
    }

    pub fn ofdm_modulate(&self, grid: &SubcarrierGrid, sample_rate: f64) -> Baseband {
        let mut samples = Vec::with_capacity(grid.n_symbols() * SYMBOL_LEN);
        for s in &grid.symbols {
            self.modulate_symbol(s, &mut samples);
        }
        Baseband::new(samples, sample_rate)
    }

    /// Strips the cyclic prefix and transforms `n_symbols` symbols starting at sample 0
    /// of `samples` (the first CP sample of the first symbol).
    pub fn ofdm_demodulate(&self, samples: &[Complex64], n_symbols: usize) -> Result<SubcarrierGrid, PhyError> {
        let needed = n_symbols * SYMBOL_LEN;
        if samples.len() < needed {
            return Err(PhyError::InsufficientSamples { needed, available: samples.len() });
        }
        let symbols = (0..n_symbols)
            .map(|m| self.demodulate_symbol(&samples[m * SYMBOL_LEN + CP_LEN..]))
            .collect();
        Ok(SubcarrierGrid { symbols })
    }
}

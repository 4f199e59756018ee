//! Gray-coded constellation mapping and hard-decision demapping.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModulationScheme {
    Bpsk,
    Qpsk,
    #[serde(rename = "QAM16")]
    Qam16,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 3] = [Self::Bpsk, Self::Qpsk, Self::Qam16];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Self::Bpsk => 1,
            Self::Qpsk => 2,
            Self::Qam16 => 4,
        }
    }

    /// Wire code used in the frame header.
    pub fn code(self) -> u8 {
        match self {
            Self::Bpsk => 1,
            Self::Qpsk => 2,
            Self::Qam16 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Bpsk),
            2 => Some(Self::Qpsk),
            4 => Some(Self::Qam16),
            _ => None,
        }
    }

    /// All constellation points, indexed by the bit label read MSB-first.
    pub fn points(self) -> Vec<Complex64> {
        let b = self.bits_per_symbol();
        (0..1usize << b)
            .map(|label| {
                let bits: Vec<u8> = (0..b).map(|i| ((label >> (b - 1 - i)) & 1) as u8).collect();
                map_one(&bits, self, 1.0)
            })
            .collect()
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bpsk => "BPSK",
            Self::Qpsk => "QPSK",
            Self::Qam16 => "QAM16",
        })
    }
}

impl FromStr for ModulationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "BPSK" => Ok(Self::Bpsk),
            "QPSK" => Ok(Self::Qpsk),
            "QAM16" | "16QAM" => Ok(Self::Qam16),
            other => Err(format!("unknown modulation `{other}`")),
        }
    }
}

const QAM16_SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)

// 2-bit Gray label -> amplitude level on one 16-QAM axis.
#[inline]
fn qam16_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

#[inline]
fn map_one(bits: &[u8], scheme: ModulationScheme, scale: f64) -> Complex64 {
    let sym = match scheme {
        ModulationScheme::Bpsk => Complex64::new(if bits[0] == 1 { 1.0 } else { -1.0 }, 0.0),
        ModulationScheme::Qpsk => {
            let i = if bits[0] == 0 { 1.0 } else { -1.0 };
            let q = if bits[1] == 0 { 1.0 } else { -1.0 };
            Complex64::new(i * FRAC_1_SQRT_2, q * FRAC_1_SQRT_2)
        }
        ModulationScheme::Qam16 => Complex64::new(
            qam16_level(bits[0], bits[1]) * QAM16_SCALE,
            qam16_level(bits[2], bits[3]) * QAM16_SCALE,
        ),
    };
    sym * scale
}

/// Maps bits (one bit per `u8`, values 0/1) onto unit-average-power constellation points.
///
/// A ragged tail is zero-padded up to a whole symbol; the number of padding bits is
/// returned alongside the symbols.
pub fn map_bits_to_symbols(bits: &[u8], scheme: ModulationScheme) -> (Vec<Complex64>, usize) {
    map_bits_scaled(bits, scheme, 1.0)
}

/// Like [`map_bits_to_symbols`] with an explicit constellation gain. Only the self-test's
/// fault injection uses a gain other than 1.
#[doc(hidden)]
pub fn map_bits_scaled(bits: &[u8], scheme: ModulationScheme, scale: f64) -> (Vec<Complex64>, usize) {
    let b = scheme.bits_per_symbol();
    let pad = (b - bits.len() % b) % b;
    let mut out = Vec::with_capacity((bits.len() + pad) / b);
    let mut chunks = bits.chunks_exact(b);
    for c in &mut chunks {
        out.push(map_one(c, scheme, scale));
    }
    let rem = chunks.remainder();
    if !rem.is_empty() {
        let mut last = [0u8; 4];
        last[..rem.len()].copy_from_slice(rem);
        out.push(map_one(&last[..b], scheme, scale));
    }
    (out, pad)
}

#[inline]
fn qam16_axis_bits(x: f64) -> (u8, u8) {
    let t = 2.0 * QAM16_SCALE;
    if x < -t {
        (0, 0)
    } else if x < 0.0 {
        (0, 1)
    } else if x < t {
        (1, 1)
    } else {
        (1, 0)
    }
}

/// Minimum-distance hard decisions, appending `bits_per_symbol` bits per input symbol.
pub fn demap_into(symbols: &[Complex64], scheme: ModulationScheme, out: &mut Vec<u8>) {
    out.reserve(symbols.len() * scheme.bits_per_symbol());
    for s in symbols {
        match scheme {
            ModulationScheme::Bpsk => out.push(u8::from(s.re >= 0.0)),
            ModulationScheme::Qpsk => {
                out.push(u8::from(s.re < 0.0));
                out.push(u8::from(s.im < 0.0));
            }
            ModulationScheme::Qam16 => {
                let (a, b) = qam16_axis_bits(s.re);
                let (c, d) = qam16_axis_bits(s.im);
                out.extend_from_slice(&[a, b, c, d]);
            }
        }
    }
}

pub fn demap_symbols(symbols: &[Complex64], scheme: ModulationScheme) -> Vec<u8> {
    let mut out = Vec::new();
    demap_into(symbols, scheme, &mut out);
    out
}

/// Nearest constellation point to `s`.
pub fn slice(s: Complex64, scheme: ModulationScheme) -> Complex64 {
    let sign = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };
    match scheme {
        ModulationScheme::Bpsk => Complex64::new(sign(s.re), 0.0),
        ModulationScheme::Qpsk => Complex64::new(sign(s.re) * FRAC_1_SQRT_2, sign(s.im) * FRAC_1_SQRT_2),
        ModulationScheme::Qam16 => {
            let (a, b) = qam16_axis_bits(s.re);
            let (c, d) = qam16_axis_bits(s.im);
            Complex64::new(qam16_level(a, b) * QAM16_SCALE, qam16_level(c, d) * QAM16_SCALE)
        }
    }
}

/// Expands bytes into bits, least significant bit first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len() * 8);
    for &b in bytes {
        for i in 0..8 {
            out.push((b >> i) & 1);
        }
    }
    out
}

/// Packs bits (LSB first) into bytes; a trailing partial byte is dropped.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks_exact(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i)))
        .collect()
}

//! Distributed Alamouti coding across pairs of OFDM symbols.
//!
//! Each transmitter emits one column of the Alamouti code matrix. Role A sends
//! `(s1, -s2*)` over a symbol pair and role B sends `(s2, s1*)`. A receiver holding
//! estimates of both effective channels combines the superposition without knowing
//! how many nodes were actually on the air: an absent role simply estimates as a
//! near-zero channel.

use crate::phy::params::FFT_SIZE;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StbcRole {
    RoleA,
    RoleB,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StbcError {
    #[error("combined channel gain is zero")]
    ZeroChannel,
    #[error("Alamouti pairing needs an even symbol count, got {0}")]
    OddSymbolCount(usize),
}

/// Per-subcarrier effective channels of the two roles, in FFT-bin order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimatePair {
    pub h_a: [Complex64; FFT_SIZE],
    pub h_b: [Complex64; FFT_SIZE],
}

impl ChannelEstimatePair {
    pub fn zeros() -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self { h_a: [z; FFT_SIZE], h_b: [z; FFT_SIZE] }
    }

    #[inline]
    pub fn entry(&self, bin: usize) -> (Complex64, Complex64) {
        (self.h_a[bin], self.h_b[bin])
    }
}

#[inline]
pub fn encode_pair(s1: Complex64, s2: Complex64, role: StbcRole) -> (Complex64, Complex64) {
    match role {
        StbcRole::RoleA => (s1, -s2.conj()),
        StbcRole::RoleB => (s2, s1.conj()),
    }
}

/// Linear Alamouti combiner; outputs are normalized by `|h_a|² + |h_b|²`.
#[inline]
pub fn combine_pair(
    y1: Complex64,
    y2: Complex64,
    h_a: Complex64,
    h_b: Complex64,
) -> Result<(Complex64, Complex64), StbcError> {
    let g = h_a.norm_sqr() + h_b.norm_sqr();
    if g == 0.0 || !g.is_finite() {
        return Err(StbcError::ZeroChannel);
    }
    let y2c = y2.conj();
    let s1 = (h_a.conj() * y1 + h_b * y2c) / g;
    let s2 = (h_b.conj() * y1 - h_a * y2c) / g;
    Ok((s1, s2))
}

/// Applies [`encode_pair`] down consecutive rows. `rows[m][i]` is the symbol for OFDM
/// symbol `m` on data subcarrier `i`.
pub fn encode_stream(rows: &[Vec<Complex64>], role: StbcRole) -> Result<Vec<Vec<Complex64>>, StbcError> {
    if !rows.len().is_multiple_of(2) {
        return Err(StbcError::OddSymbolCount(rows.len()));
    }
    let mut out = Vec::with_capacity(rows.len());
    for pair in rows.chunks_exact(2) {
        let (r1, r2): (Vec<_>, Vec<_>) = pair[0]
            .iter()
            .zip(&pair[1])
            .map(|(&s1, &s2)| encode_pair(s1, s2, role))
            .unzip();
        out.push(r1);
        out.push(r2);
    }
    Ok(out)
}

/// Inverse of [`encode_stream`] given per-subcarrier channels `h[i] = (h_a, h_b)`.
pub fn decode_stream(
    rows: &[Vec<Complex64>],
    h: &[(Complex64, Complex64)],
) -> Result<Vec<Vec<Complex64>>, StbcError> {
    if !rows.len().is_multiple_of(2) {
        return Err(StbcError::OddSymbolCount(rows.len()));
    }
    let mut out = Vec::with_capacity(rows.len());
    for pair in rows.chunks_exact(2) {
        let mut r1 = Vec::with_capacity(pair[0].len());
        let mut r2 = Vec::with_capacity(pair[0].len());
        for ((&y1, &y2), &(ha, hb)) in pair[0].iter().zip(&pair[1]).zip(h) {
            let (s1, s2) = combine_pair(y1, y2, ha, hb)?;
            r1.push(s1);
            r2.push(s2);
        }
        out.push(r1);
        out.push(r2);
    }
    Ok(out)
}

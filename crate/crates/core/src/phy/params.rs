use serde::{Deserialize, Serialize};

/// FFT length of every OFDM symbol.
pub const FFT_SIZE: usize = 64;
/// Cyclic prefix length in samples.
pub const CP_LEN: usize = 16;
/// Samples per OFDM symbol including the cyclic prefix.
pub const SYMBOL_LEN: usize = FFT_SIZE + CP_LEN;
/// Pilot subcarriers, signed index relative to DC.
pub const PILOT_SUBCARRIERS: [i32; 4] = [-21, -7, 7, 21];
/// Number of occupied (data + pilot) subcarriers.
pub const N_USED: usize = 52;
pub const N_DATA: usize = 48;
pub const N_PILOTS: usize = 4;

/// Baseband numerology of the transceiver.
///
/// The subcarrier plan is fixed to the 64-point WLAN layout (48 data, 4 pilots, DC and
/// 11 guard nulls); only the sample rate and carrier frequency are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub sample_rate: f64,
    pub carrier_freq: f64,
    /// Upper bound on payload OFDM symbols in one frame.
    pub max_payload_symbols: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            sample_rate: 10e6,
            carrier_freq: 2.4e9,
            max_payload_symbols: 2048,
        }
    }
}

impl SystemParams {
    pub fn fft_size(&self) -> usize {
        FFT_SIZE
    }

    pub fn cp_len(&self) -> usize {
        CP_LEN
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.sample_rate / FFT_SIZE as f64
    }

    /// Duration of one OFDM symbol including its cyclic prefix, in seconds.
    pub fn symbol_duration(&self) -> f64 {
        SYMBOL_LEN as f64 / self.sample_rate
    }

    pub fn pilot_indices(&self) -> [i32; 4] {
        PILOT_SUBCARRIERS
    }

    pub fn data_indices(&self) -> [i32; N_DATA] {
        data_subcarriers()
    }

    /// Uncoded payload bit rate for `bits_per_symbol` bits per data subcarrier.
    pub fn payload_rate_bps(&self, bits_per_symbol: usize) -> f64 {
        (N_DATA * bits_per_symbol) as f64 / self.symbol_duration()
    }
}

/// Data subcarriers in ascending order: -26..=26 without DC and the pilots.
pub fn data_subcarriers() -> [i32; N_DATA] {
    let mut out = [0i32; N_DATA];
    let mut n = 0;
    for k in -26..=26 {
        if k != 0 && !PILOT_SUBCARRIERS.contains(&k) {
            out[n] = k;
            n += 1;
        }
    }
    out
}

/// All occupied subcarriers in ascending order.
pub fn used_subcarriers() -> [i32; N_USED] {
    let mut out = [0i32; N_USED];
    let mut n = 0;
    for k in -26..=26 {
        if k != 0 {
            out[n] = k;
            n += 1;
        }
    }
    out
}

/// FFT bin holding signed subcarrier `k`.
#[inline]
pub fn bin(k: i32) -> usize {
    k.rem_euclid(FFT_SIZE as i32) as usize
}

//! Frame waveform synthesis.

use super::frame::{
    lts_second_polarity, lts_value, pilot_values, sts_polarity, Frame, FrameLayout, N_HEADER_SYMBOLS, STS_LEN,
    STS_PERIOD, STS_TONES,
};
use super::modulation::{bytes_to_bits, map_bits_to_symbols, ModulationScheme};
use super::ofdm::{Baseband, OfdmEngine, SymbolBins};
use super::params::{bin, data_subcarriers, used_subcarriers, SystemParams, FFT_SIZE, N_DATA, PILOT_SUBCARRIERS};
use super::PhyError;
use crate::stbc::{encode_stream, StbcRole};
use num_complex::Complex64;

/// Gain applied to every OFDM symbol so that 52 unit-power tones give unit-RMS samples.
pub fn symbol_gain() -> f64 {
    (FFT_SIZE as f64 / 52.0).sqrt()
}

/// Frequency-domain short-training symbol for `role` (before time-domain repetition).
pub fn sts_bins(role: StbcRole) -> SymbolBins {
    let mut bins = [Complex64::new(0.0, 0.0); FFT_SIZE];
    let amp = (13.0f64 / 6.0).sqrt() * symbol_gain();
    for (k, s) in STS_TONES {
        bins[bin(k)] = Complex64::new(1.0, 1.0) * (s as f64 * amp * sts_polarity(k, role));
    }
    bins
}

/// Frequency-domain long-training symbol (first LTS symbol, identical for both roles).
pub fn lts_bins() -> SymbolBins {
    let mut bins = [Complex64::new(0.0, 0.0); FFT_SIZE];
    for k in used_subcarriers() {
        bins[bin(k)] = Complex64::new(lts_value(k) * symbol_gain(), 0.0);
    }
    bins
}

/// Builds transmit waveforms; cheap to clone and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Transmitter {
    pub params: SystemParams,
    engine: OfdmEngine,
    sts: [Vec<Complex64>; 2],
    lts_time: Vec<Complex64>,
}

impl Transmitter {
    pub fn new(params: SystemParams) -> Self {
        let engine = OfdmEngine::new();
        let sts = [StbcRole::RoleA, StbcRole::RoleB].map(|role| {
            let mut one = Vec::new();
            engine.modulate_symbol(&sts_bins(role), &mut one);
            let period = &one[16..16 + STS_PERIOD];
            period.iter().cycle().take(STS_LEN).copied().collect()
        });
        let mut lts_time = Vec::new();
        engine.modulate_symbol(&lts_bins(), &mut lts_time);
        Self { params, engine, sts, lts_time: lts_time[16..].to_vec() }
    }

    pub fn engine(&self) -> &OfdmEngine {
        &self.engine
    }

    /// Time-domain short training for `role`.
    pub fn sts(&self, role: StbcRole) -> &[Complex64] {
        &self.sts[role_index(role)]
    }

    /// 64-sample body of the first long-training symbol.
    pub fn lts_body(&self) -> &[Complex64] {
        &self.lts_time
    }

    /// Unit-power data symbols the frame carries before Alamouti encoding: two header
    /// rows followed by the (even) payload rows, 48 symbols per row.
    pub fn data_rows(&self, frame: &Frame) -> Result<Vec<Vec<Complex64>>, PhyError> {
        let h = &frame.header;
        if h.payload_len as usize != frame.payload.len() {
            return Err(PhyError::LengthMismatch { header: h.payload_len as usize, payload: frame.payload.len() });
        }
        let layout = h.layout();
        if layout.payload_symbols_on_air > self.params.max_payload_symbols {
            return Err(PhyError::PayloadTooLarge {
                symbols: layout.payload_symbols_on_air,
                max: self.params.max_payload_symbols,
            });
        }
        let mut rows = Vec::with_capacity(N_HEADER_SYMBOLS + layout.payload_symbols_on_air);
        let (hdr, _) = map_bits_to_symbols(&bytes_to_bits(&h.serialize()), ModulationScheme::Qpsk);
        rows.extend(hdr.chunks_exact(N_DATA).map(<[_]>::to_vec));
        let mut bits = bytes_to_bits(&frame.on_air_payload());
        bits.resize(layout.payload_symbols_on_air * N_DATA * h.payload_mod.bits_per_symbol(), 0);
        let (pay, _) = map_bits_to_symbols(&bits, h.payload_mod);
        rows.extend(pay.chunks_exact(N_DATA).map(<[_]>::to_vec));
        Ok(rows)
    }

    /// Full frame waveform as transmitted by one Alamouti role, unit RMS.
    pub fn build_frame_waveform(&self, frame: &Frame, role: StbcRole) -> Result<Baseband, PhyError> {
        let rows = self.data_rows(frame)?;
        let layout: FrameLayout = frame.header.layout();
        let mut samples = Vec::with_capacity(layout.total_samples());
        samples.extend_from_slice(self.sts(role));

        let lts = lts_bins();
        self.engine.modulate_symbol(&lts, &mut samples);
        let second = lts.map(|z| z * lts_second_polarity(role));
        self.engine.modulate_symbol(&second, &mut samples);

        let g = symbol_gain();
        let pilots = pilot_values(role);
        let data_k = data_subcarriers();
        // Header pair and payload pairs are encoded independently; both are even.
        let encoded = encode_stream(&rows, role)?;
        for row in &encoded {
            let mut bins = [Complex64::new(0.0, 0.0); FFT_SIZE];
            for (k, &v) in data_k.iter().zip(row) {
                bins[bin(*k)] = v * g;
            }
            for (k, p) in PILOT_SUBCARRIERS.iter().zip(pilots) {
                bins[bin(*k)] = Complex64::new(p * g, 0.0);
            }
            self.engine.modulate_symbol(&bins, &mut samples);
        }
        debug_assert_eq!(samples.len(), layout.total_samples());
        Ok(Baseband::new(samples, self.params.sample_rate))
    }
}

pub(crate) fn role_index(role: StbcRole) -> usize {
    match role {
        StbcRole::RoleA => 0,
        StbcRole::RoleB => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::frame::{FrameHeader, HEADER_OFFSET, LTS_OFFSET, PAYLOAD_OFFSET};
    use crate::phy::modulation::{bits_to_bytes, demap_symbols};
    use crate::phy::params::{CP_LEN, SYMBOL_LEN};
    use crate::stbc::decode_stream;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(len: usize, m: ModulationScheme, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(0, 2, 5, (0..len).map(|_| rng.gen()).collect(), m)
    }

    #[test]
    fn frame_lengths() {
        let tx = Transmitter::new(SystemParams::default());
        for (m, n) in [(ModulationScheme::Qpsk, 118), (ModulationScheme::Qam16, 60)] {
            let wf = tx.build_frame_waveform(&frame(1412, m, 1), StbcRole::RoleB).unwrap();
            assert_eq!(wf.len(), PAYLOAD_OFFSET + n * SYMBOL_LEN);
            assert!((wf.rms() - 1.0).abs() < 0.05, "rms {}", wf.rms());
        }
    }

    #[test]
    fn payload_too_large() {
        let params = SystemParams { max_payload_symbols: 10, ..Default::default() };
        let tx = Transmitter::new(params);
        assert!(matches!(
            tx.build_frame_waveform(&frame(1412, ModulationScheme::Qpsk, 1), StbcRole::RoleA),
            Err(PhyError::PayloadTooLarge { .. })
        ));
    }

    #[test]
    fn sts_is_periodic_with_unit_power() {
        let tx = Transmitter::new(SystemParams::default());
        for role in [StbcRole::RoleA, StbcRole::RoleB] {
            let s = tx.sts(role);
            for n in 0..STS_LEN - STS_PERIOD {
                assert!((s[n] - s[n + STS_PERIOD]).norm() < 1e-12);
            }
            let p: f64 = s.iter().map(|z| z.norm_sqr()).sum::<f64>() / s.len() as f64;
            assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nulls_are_empty_and_data_recovers() {
        let tx = Transmitter::new(SystemParams::default());
        let f = frame(100, ModulationScheme::Qam16, 2);
        let wf = tx.build_frame_waveform(&f, StbcRole::RoleB).unwrap();
        let n_sym = f.header.layout().n_ofdm_symbols();
        let grid = tx.engine().ofdm_demodulate(&wf.samples[LTS_OFFSET..], n_sym).unwrap();
        let used = used_subcarriers();
        for sym in &grid.symbols {
            for b in 0..FFT_SIZE {
                let k = if b < 32 { b as i32 } else { b as i32 - 64 };
                if !used.contains(&k) {
                    assert!(sym[b].norm() < 1e-12);
                }
            }
        }
        // Header through a unit role-B channel.
        let g = symbol_gain();
        let rows: Vec<Vec<Complex64>> = grid.symbols[2..]
            .iter()
            .map(|s| data_subcarriers().iter().map(|&k| s[bin(k)] / g).collect())
            .collect();
        let h = vec![(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)); N_DATA];
        let dec = decode_stream(&rows, &h).unwrap();
        let hdr_bits = demap_symbols(&dec[..2].concat(), ModulationScheme::Qpsk);
        assert_eq!(FrameHeader::parse(&bits_to_bytes(&hdr_bits)).unwrap(), f.header);
        let pay_bits = demap_symbols(&dec[2..].concat(), ModulationScheme::Qam16);
        assert_eq!(bits_to_bytes(&pay_bits)[..104], f.on_air_payload()[..]);
        let _ = (HEADER_OFFSET, CP_LEN);
    }

    #[test]
    fn empty_payload_frame() {
        let tx = Transmitter::new(SystemParams::default());
        let f = Frame::new(0, 1, 0, vec![], ModulationScheme::Qpsk);
        let wf = tx.build_frame_waveform(&f, StbcRole::RoleB).unwrap();
        assert_eq!(wf.len(), PAYLOAD_OFFSET + 2 * SYMBOL_LEN);
    }

    #[test]
    fn role_energies_match() {
        let tx = Transmitter::new(SystemParams::default());
        let f = frame(300, ModulationScheme::Qpsk, 3);
        let n = f.header.layout().n_ofdm_symbols();
        let grid = |role| {
            let wf = tx.build_frame_waveform(&f, role).unwrap();
            tx.engine().ofdm_demodulate(&wf.samples[LTS_OFFSET..], n).unwrap().energy()
        };
        let (a, b) = (grid(StbcRole::RoleA), grid(StbcRole::RoleB));
        assert!((a - b).abs() / a < 1e-9, "{a} {b}");
    }
}

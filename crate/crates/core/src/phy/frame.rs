//! Frame format: header serialization, checksums, on-air layout and training sequences.

use super::modulation::ModulationScheme;
use super::params::{N_DATA, SYMBOL_LEN};
use crate::stbc::StbcRole;
use crc::{Crc, CRC_16_IBM_3740, CRC_32_ISO_HDLC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 24;
pub const PAYLOAD_CRC_LEN: usize = 4;
/// Short training: ten repetitions of a 16-sample period.
pub const STS_PERIOD: usize = 16;
pub const STS_LEN: usize = 10 * STS_PERIOD;
pub const N_LTS_SYMBOLS: usize = 2;
pub const N_HEADER_SYMBOLS: usize = 2;
pub const LTS_OFFSET: usize = STS_LEN;
pub const HEADER_OFFSET: usize = LTS_OFFSET + N_LTS_SYMBOLS * SYMBOL_LEN;
pub const PAYLOAD_OFFSET: usize = HEADER_OFFSET + N_HEADER_SYMBOLS * SYMBOL_LEN;

const HEADER_CRC: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);
const PAYLOAD_CRC: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketType {
    Data,
    Ack,
    Control,
}

impl PacketType {
    fn code(self) -> u8 {
        match self {
            Self::Data => 1,
            Self::Ack => 2,
            Self::Control => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Self::Data),
            2 => Some(Self::Ack),
            3 => Some(Self::Control),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeaderError {
    #[error("header checksum mismatch")]
    Checksum,
    #[error("invalid header field `{0}`")]
    InvalidField(&'static str),
    #[error("header must be {HEADER_LEN} bytes, got {0}")]
    Length(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub src_id: u8,
    pub dst_id: u8,
    pub pkt_type: PacketType,
    pub payload_len: u16,
    pub payload_mod: ModulationScheme,
    pub seq_num: u16,
}

impl FrameHeader {
    /// Layout: src, dst, type, modulation, length (LE u16), sequence (LE u16), 14 zero
    /// bytes, CRC-16 over bytes 0..22 (LE).
    pub fn serialize(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0] = self.src_id;
        b[1] = self.dst_id;
        b[2] = self.pkt_type.code();
        b[3] = self.payload_mod.code();
        b[4..6].copy_from_slice(&self.payload_len.to_le_bytes());
        b[6..8].copy_from_slice(&self.seq_num.to_le_bytes());
        let crc = HEADER_CRC.checksum(&b[..HEADER_LEN - 2]);
        b[HEADER_LEN - 2..].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, HeaderError> {
        if bytes.len() != HEADER_LEN {
            return Err(HeaderError::Length(bytes.len()));
        }
        let crc = u16::from_le_bytes([bytes[HEADER_LEN - 2], bytes[HEADER_LEN - 1]]);
        if HEADER_CRC.checksum(&bytes[..HEADER_LEN - 2]) != crc {
            return Err(HeaderError::Checksum);
        }
        if bytes[8..HEADER_LEN - 2].iter().any(|&b| b != 0) {
            return Err(HeaderError::InvalidField("padding"));
        }
        Ok(Self {
            src_id: bytes[0],
            dst_id: bytes[1],
            pkt_type: PacketType::from_code(bytes[2]).ok_or(HeaderError::InvalidField("pkt_type"))?,
            payload_mod: ModulationScheme::from_code(bytes[3]).ok_or(HeaderError::InvalidField("payload_mod"))?,
            payload_len: u16::from_le_bytes([bytes[4], bytes[5]]),
            seq_num: u16::from_le_bytes([bytes[6], bytes[7]]),
        })
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout::new(self.payload_len as usize, self.payload_mod)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub header: FrameHeader,
    pub payload: Vec<u8>,
}

impl Frame {
    /// Builds a data frame whose header length field matches `payload`.
    pub fn new(src_id: u8, dst_id: u8, seq_num: u16, payload: Vec<u8>, payload_mod: ModulationScheme) -> Self {
        let header = FrameHeader {
            src_id,
            dst_id,
            pkt_type: PacketType::Data,
            payload_len: payload.len() as u16,
            payload_mod,
            seq_num,
        };
        Self { header, payload }
    }

    pub fn payload_checksum(&self) -> u32 {
        payload_checksum(&self.payload)
    }

    /// Payload followed by its little-endian CRC-32.
    pub fn on_air_payload(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.payload.len() + PAYLOAD_CRC_LEN);
        v.extend_from_slice(&self.payload);
        v.extend_from_slice(&self.payload_checksum().to_le_bytes());
        v
    }
}

pub fn payload_checksum(payload: &[u8]) -> u32 {
    PAYLOAD_CRC.checksum(payload)
}

/// Splits an on-air payload into payload bytes and reports whether its CRC matches.
pub fn check_on_air_payload(on_air: &[u8]) -> bool {
    if on_air.len() < PAYLOAD_CRC_LEN {
        return false;
    }
    let (data, crc) = on_air.split_at(on_air.len() - PAYLOAD_CRC_LEN);
    payload_checksum(data).to_le_bytes() == crc
}

/// Sizes of the OFDM sections of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub payload_len: usize,
    pub modulation: ModulationScheme,
    /// Symbols actually carrying payload bits.
    pub payload_symbols: usize,
    /// Payload symbols on air, after padding to an even count for pairing.
    pub payload_symbols_on_air: usize,
}

impl FrameLayout {
    pub fn new(payload_len: usize, modulation: ModulationScheme) -> Self {
        let bits = (payload_len + PAYLOAD_CRC_LEN) * 8;
        let per_symbol = N_DATA * modulation.bits_per_symbol();
        let payload_symbols = bits.div_ceil(per_symbol);
        Self {
            payload_len,
            modulation,
            payload_symbols,
            payload_symbols_on_air: payload_symbols + payload_symbols % 2,
        }
    }

    pub fn on_air_payload_bits(&self) -> usize {
        (self.payload_len + PAYLOAD_CRC_LEN) * 8
    }

    /// OFDM symbols after the short training (LTS + header + payload).
    pub fn n_ofdm_symbols(&self) -> usize {
        N_LTS_SYMBOLS + N_HEADER_SYMBOLS + self.payload_symbols_on_air
    }

    pub fn total_samples(&self) -> usize {
        PAYLOAD_OFFSET + self.payload_symbols_on_air * SYMBOL_LEN
    }

    pub fn duration(&self, sample_rate: f64) -> f64 {
        self.total_samples() as f64 / sample_rate
    }
}

/// Long-training sequence on subcarriers -26..=26 (DC excluded).
pub const LTS_SEQUENCE: [i8; 53] = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 0, 1, -1, -1, 1, 1,
    -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
];

pub fn lts_value(k: i32) -> f64 {
    LTS_SEQUENCE[(k + 26) as usize] as f64
}

/// Short-training tones: (subcarrier, sign of (1+j)).
pub const STS_TONES: [(i32, i8); 12] = [
    (-24, 1),
    (-20, -1),
    (-16, 1),
    (-12, -1),
    (-8, -1),
    (-4, 1),
    (4, -1),
    (8, -1),
    (12, 1),
    (16, 1),
    (20, 1),
    (24, 1),
];

/// Role-specific polarity of the short-training tones. Role B flips alternate tones so
/// that two simultaneous transmitters cannot cancel on every tone at once.
pub fn sts_polarity(k: i32, role: StbcRole) -> f64 {
    match role {
        StbcRole::RoleA => 1.0,
        StbcRole::RoleB => {
            if (k.abs() / 4) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Second long-training symbol polarity: (+L, +L) for role A, (+L, -L) for role B.
pub fn lts_second_polarity(role: StbcRole) -> f64 {
    match role {
        StbcRole::RoleA => 1.0,
        StbcRole::RoleB => -1.0,
    }
}

/// Pilot values on subcarriers -21, -7, 7, 21.
pub fn pilot_values(role: StbcRole) -> [f64; 4] {
    match role {
        StbcRole::RoleA => [1.0, 1.0, 1.0, -1.0],
        StbcRole::RoleB => [1.0, -1.0, 1.0, 1.0],
    }
}

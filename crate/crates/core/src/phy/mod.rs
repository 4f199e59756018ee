//! OFDM physical layer: numerology, constellations, framing and waveform synthesis.

pub mod frame;
pub mod modulation;
pub mod ofdm;
pub mod params;
pub mod tx;

pub use frame::{Frame, FrameHeader, FrameLayout, HeaderError, PacketType};
pub use modulation::{demap_symbols, map_bits_to_symbols, ModulationScheme};
pub use ofdm::{Baseband, OfdmEngine, SubcarrierGrid};
pub use params::SystemParams;
pub use tx::Transmitter;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhyError {
    #[error("need {needed} samples, only {available} available")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("payload needs {symbols} OFDM symbols, limit is {max}")]
    PayloadTooLarge { symbols: usize, max: usize },
    #[error("header length {header} does not match payload length {payload}")]
    LengthMismatch { header: usize, payload: usize },
    #[error(transparent)]
    Stbc(#[from] crate::stbc::StbcError),
}

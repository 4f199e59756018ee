//! Sample-level simulator of a cooperative OFDM link: a source, a relay and a destination
//! exchanging frames over emulated fading channels, with amplify-and-forward,
//! decode-and-forward and multi-hop relaying on top of a distributed Alamouti code.

pub mod phy;
pub mod channel;
pub mod estimators;
pub mod nodes;
pub mod stbc;
pub mod harness;
pub mod config;
pub mod selftest;

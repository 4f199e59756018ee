//! Node placements and the path losses they imply.

use crate::channel::{FadingModel, INHERENT_LOSS_DB, MAX_PATH_LOSS_DB};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference distance of the indoor path-loss law, metres.
pub const REFERENCE_DISTANCE_M: f64 = 1.44;
/// Path-loss exponent of the indoor law.
pub const PATH_LOSS_EXPONENT: f64 = 2.1;
/// Source-destination separation in the linear topology, metres.
pub const LINEAR_SPAN_M: f64 = 10.4;
/// Source-destination loss in the linear topology.
pub const LINEAR_SD_DB: f64 = 71.0;
/// Largest programmable attenuation.
pub const MAX_ATTENUATION_DB: f64 = MAX_PATH_LOSS_DB - INHERENT_LOSS_DB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    #[serde(alias = "co-located", alias = "co_located")]
    Colocated,
    Linear,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("relay position {0} m outside [0, 10.4] m")]
    InvalidPosition(f64),
    #[error("attenuation {0} dB outside [0, 36] dB")]
    InvalidAttenuation(f64),
    #[error("path loss {0} dB outside [53, 89] dB")]
    InvalidPathLoss(f64),
    #[error("{0} topology needs `{1}`")]
    Missing(&'static str, &'static str),
}

/// Placement parameters; which fields matter depends on the kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TopologyParams {
    pub attenuation_db: Option<f64>,
    pub relay_position_m: Option<f64>,
    pub sd_db: Option<f64>,
    pub sr_db: Option<f64>,
    pub rd_db: Option<f64>,
}

/// Concrete three-link configuration of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub sd_db: f64,
    pub sr_db: f64,
    pub rd_db: f64,
    pub sd_fading: FadingModel,
    pub sr_fading: FadingModel,
    pub rd_fading: FadingModel,
    pub attenuation_db: Option<f64>,
    pub relay_position_m: Option<f64>,
}

impl TopologyConfig {
    pub fn with_fading(mut self, fading: FadingModel) -> Self {
        self.sd_fading = fading;
        self.sr_fading = fading;
        self.rd_fading = fading;
        self
    }
}

/// Indoor law `53 + 21 log10(d / 1.44)`, with distances below 1.44 m clamped.
pub fn linear_path_loss(distance_m: f64) -> f64 {
    INHERENT_LOSS_DB + 10.0 * PATH_LOSS_EXPONENT * (distance_m.max(REFERENCE_DISTANCE_M) / REFERENCE_DISTANCE_M).log10()
}

fn check_loss(db: f64) -> Result<f64, TopologyError> {
    if (INHERENT_LOSS_DB - 1e-9..=MAX_PATH_LOSS_DB + 1e-9).contains(&db) {
        Ok(db)
    } else {
        Err(TopologyError::InvalidPathLoss(db))
    }
}

pub fn make_topology(
    kind: TopologyKind,
    params: TopologyParams,
    fading: FadingModel,
) -> Result<TopologyConfig, TopologyError> {
    let (sd, sr, rd) = match kind {
        TopologyKind::Colocated => {
            let a = params.attenuation_db.ok_or(TopologyError::Missing("colocated", "attenuation_db"))?;
            if !(0.0..=MAX_ATTENUATION_DB).contains(&a) {
                return Err(TopologyError::InvalidAttenuation(a));
            }
            (INHERENT_LOSS_DB + a, INHERENT_LOSS_DB, INHERENT_LOSS_DB + a)
        }
        TopologyKind::Linear => {
            let d = params.relay_position_m.ok_or(TopologyError::Missing("linear", "relay_position_m"))?;
            if !(0.0..=LINEAR_SPAN_M).contains(&d) {
                return Err(TopologyError::InvalidPosition(d));
            }
            (LINEAR_SD_DB, linear_path_loss(d), linear_path_loss(LINEAR_SPAN_M - d))
        }
        TopologyKind::Manual => (
            params.sd_db.ok_or(TopologyError::Missing("manual", "sd_db"))?,
            params.sr_db.ok_or(TopologyError::Missing("manual", "sr_db"))?,
            params.rd_db.ok_or(TopologyError::Missing("manual", "rd_db"))?,
        ),
    };
    Ok(TopologyConfig {
        kind,
        sd_db: check_loss(sd)?,
        sr_db: check_loss(sr)?,
        rd_db: check_loss(rd)?,
        sd_fading: fading,
        sr_fading: fading,
        rd_fading: fading,
        attenuation_db: params.attenuation_db.filter(|_| kind == TopologyKind::Colocated),
        relay_position_m: params.relay_position_m.filter(|_| kind == TopologyKind::Linear),
    })
}

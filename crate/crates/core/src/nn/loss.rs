use serde::{Deserialize, Serialize};

use super::NnError;

/// Human judgement attached to an image pair. Serialized as `1` / `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Dissimilar,
    Similar,
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Dissimilar),
            1 => Ok(Label::Similar),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Dissimilar => 0,
            Label::Similar => 1,
        }
    }
}

/// Squared-hinge contrastive loss and its derivative with respect to `d`.
///
/// Similar pairs cost `d^2`; dissimilar pairs cost `max(0, margin - d)^2`.
pub fn contrastive_loss(d: f64, label: Label, margin: f64) -> Result<(f64, f64), NnError> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(NnError::Domain(format!("distance must be finite and >= 0, got {d}")));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(NnError::Domain(format!("margin must be positive, got {margin}")));
    }
    Ok(match label {
        Label::Similar => (d * d, 2.0 * d),
        Label::Dissimilar => {
            let gap = (margin - d).max(0.0);
            (gap * gap, -2.0 * gap)
        }
    })
}

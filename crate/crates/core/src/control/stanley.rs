//! Stanley steering law: delta = k_h * e_head + atan(k_e * e_cross / v),
//! clamped to the steering limit. Differentiable in the errors and gains.

use crate::autodiff::{NodeId, Tape};
use crate::error::Result;

use super::tracking::{TapeTrackingErrors, TrackingErrors};

/// Denominator floor that removes the v -> 0 singularity.
pub const V_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanleyGains {
    pub k_e: f64,
    pub k_h: f64,
}

impl Default for StanleyGains {
    fn default() -> Self {
        // Hand-tuned cross-track / heading gains.
        Self { k_e: 1.8, k_h: 1.3 }
    }
}

impl StanleyGains {
    /// Lower clamp applied when the gains themselves are being trained.
    pub const MIN_GAIN: f64 = 1e-3;

    pub fn clamp_trainable(&mut self) {
        self.k_e = self.k_e.max(Self::MIN_GAIN);
        self.k_h = self.k_h.max(Self::MIN_GAIN);
    }
}

pub fn stanley_steer(errors: &TrackingErrors, v: f64, gains: &StanleyGains, delta_max: f64) -> f64 {
    let v = v.max(V_FLOOR);
    let raw = gains.k_h * errors.e_head + (gains.k_e * errors.e_cross / v).atan();
    raw.clamp(-delta_max, delta_max)
}

/// Tape version. Velocity is a constant; the gains enter as nodes so they
/// can be leaves (trainable) or constants as the caller chooses.
pub fn stanley_steer_tape(
    tape: &mut Tape,
    errors: &TapeTrackingErrors,
    v: f64,
    k_e: NodeId,
    k_h: NodeId,
    delta_max: f64,
) -> Result<NodeId> {
    let v_node = tape.scalar(v.max(V_FLOOR));
    let head_term = tape.mul(k_h, errors.e_head)?;
    let scaled = tape.mul(k_e, errors.e_cross)?;
    let ratio = tape.div(scaled, v_node)?;
    let cross_term = tape.atan(ratio);
    let raw = tape.add(head_term, cross_term)?;
    Ok(tape.clamp(raw, -delta_max, delta_max))
}

//! Angle helpers shared by the tape, the vehicle model, and the estimators.

use std::f64::consts::PI;

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Weighted circular mean of angles. Returns 0 when all weights vanish.
pub fn circular_mean(angles: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(angles.len(), weights.len());
    let mut s = 0.0;
    let mut c = 0.0;
    for (&a, &w) in angles.iter().zip(weights) {
        s += w * a.sin();
        c += w * a.cos();
    }
    if s == 0.0 && c == 0.0 {
        0.0
    } else {
        s.atan2(c)
    }
}

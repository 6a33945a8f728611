//! Cross-track and heading error relative to the nearest waypoint.
//!
//! Sign convention: e_cross > 0 when the vehicle sits to the RIGHT of the
//! path direction (the path is to the vehicle's left). Combined with the
//! steering law delta = k_h*e_head + atan(k_e*e_cross/v) and a bicycle
//! where positive steering turns left, this is the unique sign choice that
//! steers toward the path: the linearized closed loop is stable only with
//! right-positive e_cross.

use crate::angle::wrap_angle;
use crate::autodiff::{NodeId, Tape};
use crate::error::Result;
use crate::vehicle::{Pose, TapePose};
use crate::world::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingErrors {
    /// Signed perpendicular distance (m) to the heading line through the
    /// nearest waypoint; positive = right of path.
    pub e_cross: f64,
    /// wrap(waypoint heading - vehicle heading), in (-pi, pi].
    pub e_head: f64,
    pub nearest_index: usize,
}

pub fn tracking_errors(pose: &Pose, traj: &Trajectory) -> TrackingErrors {
    let ni = traj.nearest_index(pose.x, pose.y);
    let w = traj.waypoint(ni);
    let (sin_h, cos_h) = w.heading.sin_cos();
    TrackingErrors {
        e_cross: sin_h * (pose.x - w.x) - cos_h * (pose.y - w.y),
        e_head: wrap_angle(w.heading - pose.theta),
        nearest_index: ni,
    }
}

/// Tracking errors as tape nodes, differentiable w.r.t. the pose. The
/// nearest waypoint is selected from the pose values and then treated as a
/// constant during backward (the argmin is piecewise constant).
#[derive(Debug, Clone, Copy)]
pub struct TapeTrackingErrors {
    pub e_cross: NodeId,
    pub e_head: NodeId,
    pub nearest_index: usize,
}

pub fn tracking_errors_tape(
    tape: &mut Tape,
    pose: &TapePose,
    traj: &Trajectory,
) -> Result<TapeTrackingErrors> {
    let p = pose.read(tape);
    let ni = traj.nearest_index(p.x, p.y);
    let w = traj.waypoint(ni);
    let (sin_h, cos_h) = w.heading.sin_cos();

    let wx = tape.scalar(w.x);
    let wy = tape.scalar(w.y);
    let dx = tape.sub(pose.x, wx)?;
    let dy = tape.sub(pose.y, wy)?;
    let n_sin = tape.scalar(sin_h);
    let n_cos = tape.scalar(-cos_h);
    let tx = tape.mul(n_sin, dx)?;
    let ty = tape.mul(n_cos, dy)?;
    let e_cross = tape.add(tx, ty)?;

    let wh = tape.scalar(w.heading);
    let dh = tape.sub(wh, pose.theta)?;
    let e_head = tape.wrap_angle(dh);

    Ok(TapeTrackingErrors {
        e_cross,
        e_head,
        nearest_index: ni,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::world::{generate_track, TrackKind, TrackParams, Waypoint};
    use rand::Rng;

    fn straight_traj() -> Trajectory {
        let pts: Vec<Waypoint> = (0..20)
            .map(|i| Waypoint {
                x: i as f64 * 0.5,
                y: 0.0,
                heading: 0.0,
                velocity: 2.0,
            })
            .collect();
        Trajectory::new(pts, false).unwrap()
    }

    #[test]
    fn on_waypoint_gives_zero_errors() {
        let traj = straight_traj();
        let e = tracking_errors(&Pose::new(2.0, 0.0, 0.0), &traj);
        assert_eq!(e.e_cross, 0.0);
        assert_eq!(e.e_head, 0.0);
        assert_eq!(e.nearest_index, 4);
    }

    #[test]
    fn right_of_path_is_positive() {
        let traj = straight_traj();
        let e = tracking_errors(&Pose::new(0.0, -0.5, 0.0), &traj);
        assert!((e.e_cross - 0.5).abs() < 1e-15);
        assert_eq!(e.e_head, 0.0);
        // Left side is negative.
        let e = tracking_errors(&Pose::new(0.0, 0.5, 0.0), &traj);
        assert!((e.e_cross + 0.5).abs() < 1e-15);
    }

    #[test]
    fn heading_error_wraps() {
        let traj = straight_traj();
        let e = tracking_errors(&Pose::new(1.0, 0.0, 3.0), &traj);
        assert!((e.e_head - (-3.0)).abs() < 1e-15);
        let e = tracking_errors(&Pose::new(1.0, 0.0, -3.1), &traj);
        // wrap(0 - (-3.1)) = 3.1 - 2pi? No: 3.1 <= pi is false; 3.1 < pi.
        assert!((e.e_head - 3.1).abs() < 1e-12);
        assert!(e.e_head.abs() <= std::f64::consts::PI);
    }

    #[test]
    fn matches_polyline_distance_oracle_near_oval() {
        // |e_cross| equals brute-force point-to-polyline distance when the
        // pose is close enough to the path that the nearest-waypoint heading
        // line and the polyline locally agree (straight segments).
        let traj = straight_traj();
        let mut rng = derive_rng(40, &[1]);
        for _ in 0..200 {
            let x = rng.gen_range(1.0..8.0);
            let y = rng.gen_range(-0.4..0.4);
            let e = tracking_errors(&Pose::new(x, y, 0.0), &traj);
            // Brute-force distance to every segment of the polyline.
            let brute = (0..traj.len() - 1)
                .map(|i| {
                    let (a, b) = (traj.waypoint(i), traj.waypoint(i + 1));
                    point_segment_distance(x, y, a.x, a.y, b.x, b.y)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(
                (e.e_cross.abs() - brute).abs() < 1e-9,
                "at ({x},{y}): {} vs {brute}",
                e.e_cross.abs()
            );
        }
    }

    #[test]
    fn oval_cross_track_stays_close_to_polyline_oracle() {
        // On a curved track the waypoint-heading-line distance differs from
        // the true polyline distance by O(d^2 / R); verify near-agreement
        // close to the path.
        let (_, traj) = generate_track(TrackKind::Oval, &TrackParams::default()).unwrap();
        let mut rng = derive_rng(41, &[2]);
        for _ in 0..200 {
            let i = rng.gen_range(0..traj.len());
            let w = *traj.waypoint(i);
            let off = rng.gen_range(-0.3..0.3);
            // Displace along the right normal (sin h, -cos h) by `off`.
            let (sin_h, cos_h) = w.heading.sin_cos();
            let pose = Pose::new(w.x + off * sin_h, w.y - off * cos_h, w.heading);
            let e = tracking_errors(&pose, &traj);
            assert!(
                (e.e_cross - off).abs() < 0.06,
                "offset {off}: e_cross {}",
                e.e_cross
            );
        }
    }

    fn point_segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
        let (vx, vy) = (bx - ax, by - ay);
        let len2 = vx * vx + vy * vy;
        let t = (((px - ax) * vx + (py - ay) * vy) / len2).clamp(0.0, 1.0);
        let (cx, cy) = (ax + t * vx, ay + t * vy);
        ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
    }

    #[test]
    fn tape_version_matches_plain_and_is_differentiable() {
        let traj = straight_traj();
        let pose = Pose::new(1.3, 0.27, 0.15);
        let plain = tracking_errors(&pose, &traj);

        let mut tape = Tape::new();
        let tp = TapePose::leaf(&mut tape, &pose);
        let te = tracking_errors_tape(&mut tape, &tp, &traj).unwrap();
        assert!((tape.scalar_value(te.e_cross) - plain.e_cross).abs() < 1e-15);
        assert!((tape.scalar_value(te.e_head) - plain.e_head).abs() < 1e-15);
        assert_eq!(te.nearest_index, plain.nearest_index);

        // d(e_cross)/dy = -cos(heading) = -1 on the straight; d/dx = 0.
        tape.backward(te.e_cross).unwrap();
        assert!((tape.adjoint(tp.y).item() + 1.0).abs() < 1e-15);
        assert!(tape.adjoint(tp.x).item().abs() < 1e-15);
    }

    #[test]
    fn continuous_while_nearest_index_constant() {
        let traj = straight_traj();
        // Walk across a region between waypoints; e_cross must vary smoothly.
        let mut prev = tracking_errors(&Pose::new(1.20, 0.2, 0.0), &traj);
        for k in 1..=40 {
            let x = 1.20 + k as f64 * 0.001;
            let e = tracking_errors(&Pose::new(x, 0.2, 0.0), &traj);
            assert!((e.e_cross - prev.e_cross).abs() < 1e-6);
            prev = e;
        }
    }
}

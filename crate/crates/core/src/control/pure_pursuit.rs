//! Pure Pursuit: steer toward the first waypoint at least one lookahead
//! distance ahead along the path, delta = atan(2 L sin(alpha) / lookahead).

use crate::angle::wrap_angle;
use crate::vehicle::Pose;
use crate::world::Trajectory;

pub fn pure_pursuit_steer(
    pose: &Pose,
    traj: &Trajectory,
    lookahead: f64,
    wheelbase: f64,
    delta_max: f64,
) -> f64 {
    debug_assert!(lookahead > 0.0, "lookahead must be positive");
    // Walk forward from the nearest waypoint until the accumulated arc
    // length reaches the lookahead.
    let start = traj.nearest_index(pose.x, pose.y);
    let mut i = start;
    let mut acc = 0.0;
    loop {
        let j = traj.next_index(i);
        let (a, b) = (traj.waypoint(i), traj.waypoint(j));
        acc += ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        i = j;
        if acc >= lookahead || i == start {
            break;
        }
    }
    let goal = traj.waypoint(i);
    let alpha = wrap_angle((goal.y - pose.y).atan2(goal.x - pose.x) - pose.theta);
    let raw = (2.0 * wheelbase * alpha.sin() / lookahead).atan();
    raw.clamp(-delta_max, delta_max)
}

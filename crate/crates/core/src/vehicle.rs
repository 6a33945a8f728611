//! Kinematic bicycle model, in two forms: a plain-f64 step for the
//! simulation loop and a taped step so steering gradients can flow through
//! short rollouts.

use crate::angle::wrap_angle;
use crate::autodiff::{NodeId, Tape};
use crate::error::Result;

/// Planar pose; `theta` is kept wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Vehicle geometry and actuation limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        // F1Tenth-class geometry.
        Self {
            wheelbase: 0.33,
            delta_max: 0.41,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pose: Pose,
    pub v: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            v: 0.0,
            delta: 0.0,
        }
    }
}

/// Fixed-timestep simulation clock.
#[derive(Debug, Clone, Copy)]
pub struct SimClock {
    pub dt: f64,
    pub step_index: u64,
}

impl SimClock {
    pub fn new(dt: f64) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        Self { dt, step_index: 0 }
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn tick(&mut self) {
        self.step_index += 1;
    }
}

/// One Euler step of the kinematic bicycle. `delta` is clamped to the
/// steering limit rather than rejected.
pub fn bicycle_step(
    state: &VehicleState,
    delta: f64,
    v: f64,
    dt: f64,
    params: &VehicleParams,
) -> VehicleState {
    let delta = delta.clamp(-params.delta_max, params.delta_max);
    let p = &state.pose;
    let x = p.x + v * p.theta.cos() * dt;
    let y = p.y + v * p.theta.sin() * dt;
    let theta = wrap_angle(p.theta + v / params.wheelbase * delta.tan() * dt);
    VehicleState {
        pose: Pose { x, y, theta },
        v,
        delta,
    }
}

/// Pose living on an autodiff tape.
#[derive(Debug, Clone, Copy)]
pub struct TapePose {
    pub x: NodeId,
    pub y: NodeId,
    pub theta: NodeId,
}

impl TapePose {
    pub fn leaf(tape: &mut Tape, pose: &Pose) -> Self {
        Self {
            x: tape.scalar(pose.x),
            y: tape.scalar(pose.y),
            theta: tape.scalar(pose.theta),
        }
    }

    pub fn read(&self, tape: &Tape) -> Pose {
        Pose {
            x: tape.scalar_value(self.x),
            y: tape.scalar_value(self.y),
            theta: tape.scalar_value(self.theta),
        }
    }
}

/// Taped bicycle step; mirrors [`bicycle_step`] exactly (same clamp, same
/// wrap) so gradients describe the simulated dynamics.
pub fn bicycle_step_tape(
    tape: &mut Tape,
    pose: TapePose,
    delta: NodeId,
    v: NodeId,
    dt: f64,
    params: &VehicleParams,
) -> Result<TapePose> {
    let delta = tape.clamp(delta, -params.delta_max, params.delta_max);
    let dt_n = tape.scalar(dt);
    let cos_t = tape.cos(pose.theta);
    let sin_t = tape.sin(pose.theta);

    let vdt = tape.mul(v, dt_n)?;
    let dx = tape.mul(vdt, cos_t)?;
    let dy = tape.mul(vdt, sin_t)?;
    let x = tape.add(pose.x, dx)?;
    let y = tape.add(pose.y, dy)?;

    // tan(delta) as sin/cos keeps the op set minimal.
    let sin_d = tape.sin(delta);
    let cos_d = tape.cos(delta);
    let tan_d = tape.div(sin_d, cos_d)?;
    let wb = tape.scalar(params.wheelbase);
    let v_over_l = tape.div(v, wb)?;
    let rate = tape.mul(v_over_l, tan_d)?;
    let dtheta = tape.mul(rate, dt_n)?;
    let theta_raw = tape.add(pose.theta, dtheta)?;
    let theta = tape.wrap_angle(theta_raw);

    Ok(TapePose { x, y, theta })
}

/// Two bicycle steps with the same steering and speed, on the tape; the
/// result keeps d(pose)/d(delta) available for the control loss.
pub fn propagate_two_steps(
    tape: &mut Tape,
    pose: TapePose,
    delta: NodeId,
    v: NodeId,
    dt: f64,
    params: &VehicleParams,
) -> Result<TapePose> {
    let mid = bicycle_step_tape(tape, pose, delta, v, dt, params)?;
    bicycle_step_tape(tape, mid, delta, v, dt, params)
}

//! Closed-loop lap simulation: raycast -> localize -> steer -> bicycle step
//! at a fixed sample time, with lap/crash/timeout detection and per-timestep
//! logging.

use std::fmt;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::control::{
    follow_the_gap, pure_pursuit_steer, stanley_steer, tracking_errors, FtgConfig,
    OdometryDelta, ParticleBelief, ParticleFilterConfig, StanleyGains,
};
use crate::error::Result;
use crate::vehicle::{bicycle_step, Pose, VehicleParams, VehicleState};
use crate::world::{add_scan_noise, raycast, LidarScan, OccupancyGrid, SensorConfig, Trajectory};

pub use crate::control::particle_filter::particle_filter_step;

/// Everything a lap needs: map, reference trajectory, sensor, vehicle.
#[derive(Debug, Clone)]
pub struct World {
    pub grid: OccupancyGrid,
    pub traj: Trajectory,
    pub sensor: SensorConfig,
    pub vehicle: VehicleParams,
}

impl World {
    /// Speed command: the velocity stored on the waypoint nearest the pose.
    pub fn velocity_at(&self, pose: &Pose) -> f64 {
        self.traj
            .waypoint(self.traj.nearest_index(pose.x, pose.y))
            .velocity
    }
}

/// Per-step inputs handed to a policy.
pub struct StepContext<'a> {
    pub world: &'a World,
    pub state: &'a VehicleState,
    pub scan: &'a LidarScan,
    pub step: usize,
    pub dt: f64,
}

/// A policy's decision for one timestep, plus its observable internals
/// (estimated pose and the losses a training policy computed).
#[derive(Debug, Clone, Copy)]
pub struct StepDecision {
    pub delta: f64,
    pub v: f64,
    pub est: Pose,
    pub loss_total: f64,
    pub loss_loc: f64,
}

pub trait Policy {
    fn begin_lap(&mut self, start: &Pose);
    fn act(&mut self, ctx: &StepContext) -> Result<StepDecision>;
}

// ---- lap execution -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LapOutcome {
    Completed,
    Crashed,
    Timeout,
}

impl fmt::Display for LapOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LapOutcome::Completed => "completed",
            LapOutcome::Crashed => "crashed",
            LapOutcome::Timeout => "timeout",
        })
    }
}

/// One row per timestep. `cte`/`he` are measured against the ground-truth
/// pose (the validation metric); the estimate columns expose the stack's
/// internal belief.
#[derive(Debug, Clone, Copy)]
pub struct LapRecord {
    pub t: f64,
    pub gt: Pose,
    pub est: Pose,
    pub delta: f64,
    pub cte: f64,
    pub he: f64,
    pub loss_total: f64,
    pub loss_loc: f64,
}

#[derive(Debug, Clone)]
pub struct LapLog {
    pub records: Vec<LapRecord>,
    pub outcome: LapOutcome,
    pub lap_time_s: f64,
}

impl LapLog {
    pub fn mean_abs_cte(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.cte.abs()).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_training_loss(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.loss_total).sum::<f64>() / self.records.len() as f64
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "t",
            "x_gt",
            "y_gt",
            "theta_gt",
            "x_est",
            "y_est",
            "theta_est",
            "delta",
            "cte",
            "he",
            "loss_total",
            "loss_loc",
        ])?;
        for r in &self.records {
            w.serialize((
                r.t,
                r.gt.x,
                r.gt.y,
                r.gt.theta,
                r.est.x,
                r.est.y,
                r.est.theta,
                r.delta,
                r.cte,
                r.he,
                r.loss_total,
                r.loss_loc,
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LapConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Lateral half-width of the start line.
    pub start_line_half_width: f64,
}

impl Default for LapConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            max_steps: 20_000,
            start_line_half_width: 2.0,
        }
    }
}

/// Drive one lap. The lap ends when the vehicle crosses the start line in
/// the direction of travel (after covering at least half the track length),
/// leaves the drivable region, or exhausts `max_steps`.
pub fn run_lap(
    world: &World,
    policy: &mut dyn Policy,
    start: &Pose,
    cfg: &LapConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LapLog> {
    world.grid.require_pose_drivable(start.x, start.y)?;
    policy.begin_lap(start);

    let w0 = world.traj.waypoint(0);
    let (sin0, cos0) = w0.heading.sin_cos();
    // Along-path / lateral coordinates relative to the start line.
    let line_coords = |p: &Pose| {
        let (dx, dy) = (p.x - w0.x, p.y - w0.y);
        (cos0 * dx + sin0 * dy, -sin0 * dx + cos0 * dy)
    };

    let mut state = VehicleState {
        pose: *start,
        v: 0.0,
        delta: 0.0,
    };
    let mut records = Vec::new();
    let mut traveled = 0.0;
    let half_track = world.traj.total_length() / 2.0;
    let (mut s_prev, _) = line_coords(start);
    let mut outcome = LapOutcome::Timeout;

    for step in 0..cfg.max_steps {
        let clean = raycast(&world.grid, &state.pose, &world.sensor)?;
        let scan = add_scan_noise(&clean, world.sensor.sigma, rng);
        let ctx = StepContext {
            world,
            state: &state,
            scan: &scan,
            step,
            dt: cfg.dt,
        };
        let d = policy.act(&ctx)?;

        let gt_err = tracking_errors(&state.pose, &world.traj);
        records.push(LapRecord {
            t: step as f64 * cfg.dt,
            gt: state.pose,
            est: d.est,
            delta: d.delta,
            cte: gt_err.e_cross,
            he: gt_err.e_head,
            loss_total: d.loss_total,
            loss_loc: d.loss_loc,
        });

        state = bicycle_step(&state, d.delta, d.v, cfg.dt, &world.vehicle);
        traveled += d.v.abs() * cfg.dt;

        if !world.grid.is_drivable(state.pose.x, state.pose.y) {
            outcome = LapOutcome::Crashed;
            break;
        }
        let (s_new, lateral) = line_coords(&state.pose);
        if traveled > half_track
            && s_prev < 0.0
            && s_new >= 0.0
            && lateral.abs() <= cfg.start_line_half_width
        {
            outcome = LapOutcome::Completed;
            break;
        }
        s_prev = s_new;
    }

    Ok(LapLog {
        lap_time_s: records.len() as f64 * cfg.dt,
        records,
        outcome,
    })
}

// ---- baseline policies ---------------------------------------------------------

/// Ground-truth localization feeding the Stanley law: the reference stack.
#[derive(Debug, Clone)]
pub struct GroundTruthStanley {
    pub gains: StanleyGains,
}

impl Policy for GroundTruthStanley {
    fn begin_lap(&mut self, _start: &Pose) {}

    fn act(&mut self, ctx: &StepContext) -> Result<StepDecision> {
        let pose = ctx.state.pose;
        let errs = tracking_errors(&pose, &ctx.world.traj);
        let v = ctx.world.velocity_at(&pose);
        let delta = stanley_steer(&errs, v, &self.gains, ctx.world.vehicle.delta_max);
        Ok(StepDecision {
            delta,
            v,
            est: pose,
            loss_total: 0.0,
            loss_loc: 0.0,
        })
    }
}

/// Follow-the-Gap: purely reactive, no localizer (estimate = ground truth
/// for logging only).
#[derive(Debug, Clone)]
pub struct FtgPolicy {
    pub cfg: FtgConfig,
}

impl Policy for FtgPolicy {
    fn begin_lap(&mut self, _start: &Pose) {}

    fn act(&mut self, ctx: &StepContext) -> Result<StepDecision> {
        let decision = follow_the_gap(ctx.scan, &self.cfg);
        let pose = ctx.state.pose;
        Ok(StepDecision {
            delta: decision.delta,
            v: ctx.world.velocity_at(&pose),
            est: pose,
            loss_total: 0.0,
            loss_loc: 0.0,
        })
    }
}

/// Which steering law a particle-filter policy drives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PfController {
    PurePursuit { lookahead: f64 },
    Stanley(StanleyGains),
}

/// Particle-filter localization feeding Pure Pursuit or Stanley. The filter
/// updates every `update_every` steps (sensor-rate decimation) and
/// dead-reckons the estimate in between.
pub struct PfPolicy {
    pub pf_cfg: ParticleFilterConfig,
    pub controller: PfController,
    pub update_every: usize,
    pub rng: ChaCha8Rng,
    belief: Option<ParticleBelief>,
    estimate: Pose,
    last_gt: Pose,
    pub degeneracy_events: usize,
}

impl PfPolicy {
    pub fn new(pf_cfg: ParticleFilterConfig, controller: PfController, rng: ChaCha8Rng) -> Self {
        Self {
            pf_cfg,
            controller,
            update_every: 5,
            rng,
            belief: None,
            estimate: Pose::new(0.0, 0.0, 0.0),
            last_gt: Pose::new(0.0, 0.0, 0.0),
            degeneracy_events: 0,
        }
    }
}

impl Policy for PfPolicy {
    fn begin_lap(&mut self, start: &Pose) {
        self.belief = Some(ParticleBelief::init_around(
            start,
            &self.pf_cfg,
            &mut self.rng,
        ));
        self.estimate = *start;
        self.last_gt = *start;
    }

    fn act(&mut self, ctx: &StepContext) -> Result<StepDecision> {
        let gt = ctx.state.pose;
        let odom = OdometryDelta::between(&self.last_gt, &gt);
        self.last_gt = gt;

        let belief = self
            .belief
            .as_mut()
            .expect("begin_lap must run before act");
        if ctx.step % self.update_every == 0 {
            let step = particle_filter_step(
                belief,
                &odom,
                ctx.scan,
                &ctx.world.grid,
                &self.pf_cfg,
                &mut self.rng,
            )?;
            if step.degenerate {
                self.degeneracy_events += 1;
            }
            self.estimate = step.estimate;
        } else {
            // Dead-reckon the estimate (and keep the cloud in sync later:
            // the next update replays accumulated odometry per particle).
            let (sin_t, cos_t) = self.estimate.theta.sin_cos();
            self.estimate = Pose::new(
                self.estimate.x + cos_t * odom.forward - sin_t * odom.left,
                self.estimate.y + sin_t * odom.forward + cos_t * odom.left,
                self.estimate.theta + odom.dtheta,
            );
            // Particles also move so the next measurement update starts from
            // the right prior.
            for p in &mut belief.particles {
                let (s, c) = p.theta.sin_cos();
                *p = Pose::new(
                    p.x + c * odom.forward - s * odom.left,
                    p.y + s * odom.forward + c * odom.left,
                    crate::angle::wrap_angle(p.theta + odom.dtheta),
                );
            }
        }

        let est = self.estimate;
        let v = ctx.world.velocity_at(&est);
        let delta = match self.controller {
            PfController::PurePursuit { lookahead } => pure_pursuit_steer(
                &est,
                &ctx.world.traj,
                lookahead,
                ctx.world.vehicle.wheelbase,
                ctx.world.vehicle.delta_max,
            ),
            PfController::Stanley(gains) => {
                let errs = tracking_errors(&est, &ctx.world.traj);
                stanley_steer(&errs, v, &gains, ctx.world.vehicle.delta_max)
            }
        };
        Ok(StepDecision {
            delta,
            v,
            est,
            loss_total: 0.0,
            loss_loc: 0.0,
        })
    }
}

//! Steering controllers: the differentiable Stanley law used by the trained
//! stack, plus the non-differentiable baselines (Pure Pursuit, Follow-the-Gap)
//! and a particle-filter localizer they are paired with.

pub mod follow_the_gap;
pub mod particle_filter;
pub mod pure_pursuit;
pub mod stanley;
pub mod tracking;

pub use follow_the_gap::{follow_the_gap, FtgConfig, FtgDecision};
pub use particle_filter::{
    particle_filter_step, pf_rng, OdometryDelta, ParticleBelief, ParticleFilterConfig, PfStep,
};
pub use pure_pursuit::pure_pursuit_steer;
pub use stanley::{stanley_steer, stanley_steer_tape, StanleyGains, V_FLOOR};
pub use tracking::{tracking_errors, tracking_errors_tape, TapeTrackingErrors, TrackingErrors};

//! Monte Carlo localization: propagate a particle cloud by noisy odometry,
//! weight by a per-beam Gaussian range likelihood, resample systematically.
//!
//! The belief starts as a Gaussian cloud around the known start pose; a
//! uniform spread over drivable cells is only used to recover from weight
//! degeneracy. (Closed tracks can be rotation-symmetric, which makes global
//! localization ill-posed, so "kidnapped robot" recovery is best-effort.)

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::angle::{circular_mean, wrap_angle};
use crate::error::Result;
use crate::rng::derive_rng;
use crate::vehicle::Pose;
use crate::world::{beam_angle, cast_ray, free_poses, LidarScan, OccupancyGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleFilterConfig {
    pub n_particles: usize,
    /// Beams subsampled from the scan for the likelihood evaluation.
    pub n_likelihood_beams: usize,
    /// Range measurement sigma (m) in the beam likelihood.
    pub range_sigma: f64,
    /// Process noise added to each particle's odometry, per update.
    pub odom_sigma_xy: f64,
    pub odom_sigma_theta: f64,
    /// Initial cloud spread around the start pose.
    pub init_sigma_xy: f64,
    pub init_sigma_theta: f64,
}

impl Default for ParticleFilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            n_likelihood_beams: 36,
            range_sigma: 0.25,
            odom_sigma_xy: 0.02,
            odom_sigma_theta: 0.01,
            init_sigma_xy: 0.3,
            init_sigma_theta: 0.15,
        }
    }
}

/// Body-frame motion since the previous filter update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdometryDelta {
    pub forward: f64,
    pub left: f64,
    pub dtheta: f64,
}

impl OdometryDelta {
    /// Express the world-frame motion `from -> to` in the body frame of
    /// `from`, so it can replay on a particle with a different heading.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        let (dx, dy) = (to.x - from.x, to.y - from.y);
        let (sin_t, cos_t) = from.theta.sin_cos();
        Self {
            forward: cos_t * dx + sin_t * dy,
            left: -sin_t * dx + cos_t * dy,
            dtheta: wrap_angle(to.theta - from.theta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBelief {
    pub particles: Vec<Pose>,
    pub weights: Vec<f64>,
}

impl ParticleBelief {
    /// Gaussian cloud centered on a known pose.
    pub fn init_around(pose: &Pose, cfg: &ParticleFilterConfig, rng: &mut impl Rng) -> Self {
        let n = cfg.n_particles.max(1);
        let particles = (0..n)
            .map(|_| {
                Pose::new(
                    pose.x + sample_normal(cfg.init_sigma_xy, rng),
                    pose.y + sample_normal(cfg.init_sigma_xy, rng),
                    pose.theta + sample_normal(cfg.init_sigma_theta, rng),
                )
            })
            .collect();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Uniform spread over drivable cells (degeneracy recovery).
    pub fn init_uniform(
        grid: &OccupancyGrid,
        n_particles: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let pool = free_poses(grid, rng)?;
        let n = n_particles.max(1);
        let particles = (0..n).map(|i| pool[i % pool.len()]).collect();
        Ok(Self {
            particles,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Weighted mean position with a circular mean heading.
    pub fn estimate(&self) -> Pose {
        let mut x = 0.0;
        let mut y = 0.0;
        for (p, w) in self.particles.iter().zip(&self.weights) {
            x += w * p.x;
            y += w * p.y;
        }
        let angles: Vec<f64> = self.particles.iter().map(|p| p.theta).collect();
        Pose::new(x, y, circular_mean(&angles, &self.weights))
    }
}

fn sample_normal(sigma: f64, rng: &mut impl Rng) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).unwrap().sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfStep {
    pub estimate: Pose,
    /// True when every particle's likelihood vanished and the belief was
    /// reinitialized uniformly over the map.
    pub degenerate: bool,
}

/// One full MCL cycle: propagate, weight, estimate, resample.
pub fn particle_filter_step(
    belief: &mut ParticleBelief,
    odom: &OdometryDelta,
    scan: &LidarScan,
    grid: &OccupancyGrid,
    cfg: &ParticleFilterConfig,
    rng: &mut impl Rng,
) -> Result<PfStep> {
    // Propagate by odometry replayed in each particle's frame, plus noise.
    for p in &mut belief.particles {
        let fwd = odom.forward + sample_normal(cfg.odom_sigma_xy, rng);
        let left = odom.left + sample_normal(cfg.odom_sigma_xy, rng);
        let (sin_t, cos_t) = p.theta.sin_cos();
        p.x += cos_t * fwd - sin_t * left;
        p.y += sin_t * fwd + cos_t * left;
        p.theta = wrap_angle(p.theta + odom.dtheta + sample_normal(cfg.odom_sigma_theta, rng));
    }

    // Beam likelihood on a subsampled set of beams, computed in log space.
    let n_beams = scan.n_beams();
    let k = cfg.n_likelihood_beams.clamp(1, n_beams);
    let beam_idx: Vec<usize> = if k == 1 {
        vec![n_beams / 2]
    } else {
        (0..k).map(|i| i * (n_beams - 1) / (k - 1)).collect()
    };
    let inv_2s2 = 1.0 / (2.0 * cfg.range_sigma * cfg.range_sigma);
    let mut log_w: Vec<f64> = Vec::with_capacity(belief.particles.len());
    for p in &belief.particles {
        if !grid.is_drivable(p.x, p.y) {
            log_w.push(f64::NEG_INFINITY);
            continue;
        }
        let mut acc = 0.0;
        for &bi in &beam_idx {
            let angle = beam_angle(bi, n_beams, scan.fov, p.theta);
            let expected = cast_ray(grid, p.x, p.y, angle, scan.max_range);
            let err = scan.ranges[bi] - expected;
            acc -= err * err * inv_2s2;
        }
        log_w.push(acc);
    }

    let max_lw = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut degenerate = !max_lw.is_finite();
    if !degenerate {
        let mut sum = 0.0;
        for (w, lw) in belief.weights.iter_mut().zip(&log_w) {
            *w = (lw - max_lw).exp();
            sum += *w;
        }
        if sum > 0.0 && sum.is_finite() {
            for w in &mut belief.weights {
                *w /= sum;
            }
        } else {
            degenerate = true;
        }
    }
    if degenerate {
        // Every hypothesis is inconsistent with the scan: start over.
        *belief = ParticleBelief::init_uniform(grid, cfg.n_particles, rng)?;
    }

    let estimate = belief.estimate();

    // Systematic resampling (skipped right after a reinit: weights uniform).
    if !degenerate {
        let n = belief.particles.len();
        let step = 1.0 / n as f64;
        let mut u = rng.gen_range(0.0..step);
        let mut cum = belief.weights[0];
        let mut i = 0;
        let mut resampled = Vec::with_capacity(n);
        for _ in 0..n {
            while u > cum && i + 1 < n {
                i += 1;
                cum += belief.weights[i];
            }
            resampled.push(belief.particles[i]);
            u += step;
        }
        belief.particles = resampled;
        belief.weights = vec![step; n];
    }

    Ok(PfStep {
        estimate,
        degenerate,
    })
}

/// Convenience wrapper: build the filter RNG stream for a given seed.
pub fn pf_rng(seed: u64, lap: u64) -> rand_chacha::ChaCha8Rng {
    derive_rng(seed, &[crate::rng::label::PARTICLE_FILTER, lap])
}

//! Raytraced 2D LiDAR over an occupancy grid, plus scan noise and the
//! free-pose sampler used for dataset generation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::angle::wrap_angle;
use crate::error::{Error, Result};
use crate::vehicle::Pose;
use crate::world::grid::OccupancyGrid;

/// Sensor geometry + noise model. Defaults mirror a 270-degree 10 m scanner
/// downsampled to 108 beams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub n_beams: usize,
    pub fov: f64,
    pub max_range: f64,
    pub sigma: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            n_beams: 108,
            fov: 270.0_f64.to_radians(),
            max_range: 10.0,
            sigma: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub fov: f64,
    pub max_range: f64,
}

impl LidarScan {
    pub fn n_beams(&self) -> usize {
        self.ranges.len()
    }

    /// World angle of beam `i` for a sensor heading `theta`. Beams sweep
    /// from `theta - fov/2` to `theta + fov/2` inclusive.
    pub fn beam_angle(&self, i: usize, theta: f64) -> f64 {
        beam_angle(i, self.n_beams(), self.fov, theta)
    }
}

pub fn beam_angle(i: usize, n_beams: usize, fov: f64, theta: f64) -> f64 {
    theta - fov / 2.0 + i as f64 * fov / (n_beams - 1) as f64
}

/// Exact grid traversal for one ray; returns the distance at which the ray
/// enters the first blocking (or out-of-grid) cell, capped at `max_range`.
pub fn cast_ray(grid: &OccupancyGrid, ox: f64, oy: f64, angle: f64, max_range: f64) -> f64 {
    let res = grid.resolution();
    // Grid coordinates: u rightward, v downward (rows grow with -y).
    let (o_gx, o_gy) = ((ox - grid.origin().0) / res, (grid.origin().1 - oy) / res);
    let (mut ix, mut iy) = (o_gx.floor() as isize, o_gy.floor() as isize);
    let (dx, dy) = (angle.cos(), -angle.sin());

    let (step_x, mut t_max_x, t_delta_x) = axis_setup(o_gx, ix, dx, res);
    let (step_y, mut t_max_y, t_delta_y) = axis_setup(o_gy, iy, dy, res);

    let (w, h) = (grid.width() as isize, grid.height() as isize);
    loop {
        let t_entry = if t_max_x < t_max_y {
            ix += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            iy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t_entry >= max_range {
            return max_range;
        }
        if ix < 0 || iy < 0 || ix >= w || iy >= h {
            return t_entry;
        }
        if grid.cell(ix as usize, iy as usize).blocks() {
            return t_entry;
        }
    }
}

/// Per-axis DDA setup: step direction, distance to the first grid line, and
/// distance between successive grid lines (along the ray, in meters).
fn axis_setup(g: f64, i: isize, d: f64, res: f64) -> (isize, f64, f64) {
    if d > 0.0 {
        (1, ((i + 1) as f64 - g) * res / d, res / d)
    } else if d < 0.0 {
        (-1, (g - i as f64) * res / -d, res / -d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

/// Raytrace a full scan from `pose`. The pose must sit in a drivable cell.
pub fn raycast(grid: &OccupancyGrid, pose: &Pose, cfg: &SensorConfig) -> Result<LidarScan> {
    if cfg.n_beams < 2 {
        return Err(Error::Config(format!(
            "n_beams must be >= 2, got {}",
            cfg.n_beams
        )));
    }
    if !grid.is_drivable(pose.x, pose.y) {
        return Err(Error::PoseNotDrivable {
            x: pose.x,
            y: pose.y,
        });
    }
    let ranges = (0..cfg.n_beams)
        .map(|i| {
            let a = beam_angle(i, cfg.n_beams, cfg.fov, pose.theta);
            cast_ray(grid, pose.x, pose.y, a, cfg.max_range)
        })
        .collect();
    Ok(LidarScan {
        ranges,
        fov: cfg.fov,
        max_range: cfg.max_range,
    })
}

/// Add i.i.d. Gaussian range noise, clamped to the physical interval
/// [0, max_range]. Deterministic given the RNG state.
pub fn add_scan_noise(scan: &LidarScan, sigma: f64, rng: &mut impl Rng) -> LidarScan {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let ranges = scan
        .ranges
        .iter()
        .map(|&r| (r + normal.sample(rng)).clamp(0.0, scan.max_range))
        .collect();
    LidarScan {
        ranges,
        fov: scan.fov,
        max_range: scan.max_range,
    }
}

/// Slow reference raycaster: march along the beam in fixed steps, stopping
/// at the first sample in a non-drivable cell. Independent of the DDA; used
/// by tests to cross-validate it.
pub fn marching_range(
    grid: &OccupancyGrid,
    ox: f64,
    oy: f64,
    angle: f64,
    max_range: f64,
    step: f64,
) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut t = step;
    while t < max_range {
        if !grid.is_drivable(ox + t * dx, oy + t * dy) {
            return t;
        }
        t += step;
    }
    max_range
}

/// Compare a DDA range against the resolution/20 marching reference.
///
/// Agreement within one cell passes directly. If the marcher reports a
/// longer range, the beam may have grazed a cell corner with a chord
/// shorter than the marching step; that counts as agreement only when a
/// 400x finer local search confirms the DDA's hit. Any other discrepancy is
/// an error described in the returned message.
pub fn check_against_marching(
    grid: &OccupancyGrid,
    pose: &Pose,
    angle: f64,
    dda_range: f64,
    max_range: f64,
) -> std::result::Result<(), String> {
    let step = grid.resolution() / 20.0;
    let march = marching_range(grid, pose.x, pose.y, angle, max_range, step);
    if (dda_range - march).abs() <= grid.resolution() {
        return Ok(());
    }
    if march > dda_range {
        let fine = grid.resolution() / 8000.0;
        let (dx, dy) = (angle.cos(), angle.sin());
        let mut t = dda_range + fine;
        while t <= dda_range + step {
            if !grid.is_drivable(pose.x + t * dx, pose.y + t * dy) {
                return Ok(());
            }
            t += fine;
        }
        return Err(format!(
            "dda range {dda_range} reports a hit the fine search cannot confirm (marching {march})"
        ));
    }
    Err(format!(
        "dda range {dda_range} passes through an obstacle the marcher found at {march}"
    ))
}

/// One pose per drivable cell (row-major order): cell center plus uniform
/// jitter within the cell, heading uniform over the circle.
pub fn free_poses(grid: &OccupancyGrid, rng: &mut impl Rng) -> Result<Vec<Pose>> {
    grid.require_drivable()?;
    let half = grid.resolution() / 2.0;
    let poses = grid
        .drivable_cells()
        .map(|(ix, iy)| {
            let (cx, cy) = grid.cell_center(ix, iy);
            let (mut x, mut y) = (cx, cy);
            for _ in 0..100 {
                x = cx + rng.gen_range(-half..half);
                y = cy + rng.gen_range(-half..half);
                if grid.is_drivable(x, y) {
                    break;
                }
                (x, y) = (cx, cy);
            }
            let theta = wrap_angle(rng.gen_range(0.0..std::f64::consts::TAU));
            Pose::new(x, y, theta)
        })
        .collect();
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::world::grid::Cell;
    use crate::world::track::ring_map;

    fn open_room(side_m: f64, res: f64) -> OccupancyGrid {
        let n = (side_m / res).round() as usize;
        // Origin is the top-left corner, so the room spans [0, side]^2.
        OccupancyGrid::new(n, n, res, (0.0, side_m), vec![Cell::Drivable; n * n]).unwrap()
    }

    fn sensor(n_beams: usize, fov: f64, max_range: f64) -> SensorConfig {
        SensorConfig {
            n_beams,
            fov,
            max_range,
            sigma: 0.0,
        }
    }

    #[test]
    fn open_room_center_beam_hits_far_wall() {
        let g = open_room(10.0, 0.1);
        let pose = Pose::new(5.0, 5.0, 0.0);
        // Narrow fov so the middle beam points along +x.
        let scan = raycast(&g, &pose, &sensor(3, 0.2, 8.0)).unwrap();
        let mid = scan.ranges[1];
        assert!((mid - 5.0).abs() <= 0.1, "range {mid}");
    }

    #[test]
    fn ranges_cap_at_max_range() {
        let g = open_room(10.0, 0.1);
        let pose = Pose::new(5.0, 5.0, 0.0);
        let scan = raycast(&g, &pose, &sensor(5, 1.0, 3.0)).unwrap();
        for r in &scan.ranges {
            assert_eq!(*r, 3.0);
        }
    }

    #[test]
    fn pose_in_occupied_cell_is_rejected() {
        let g = ring_map(64, 0.1, 2.8, 1.6);
        let err = raycast(&g, &Pose::new(0.0, 0.0, 0.0), &sensor(4, 1.0, 5.0)).unwrap_err();
        assert!(matches!(err, Error::PoseNotDrivable { .. }));
        let err = raycast(&g, &Pose::new(99.0, 0.0, 0.0), &sensor(4, 1.0, 5.0)).unwrap_err();
        assert!(matches!(err, Error::PoseNotDrivable { .. }));
    }

    #[test]
    fn dda_matches_marching_oracle_on_ring() {
        let g = ring_map(64, 0.1, 2.8, 1.6);
        let mut rng = derive_rng(31, &[1]);
        let poses = free_poses(&g, &mut rng).unwrap();
        let cfg = sensor(7, 270.0_f64.to_radians(), 6.0);
        let mut checked = 0;
        for pose in poses.iter().step_by(poses.len() / 100) {
            let scan = raycast(&g, pose, &cfg).unwrap();
            for (i, &r) in scan.ranges.iter().enumerate() {
                let a = scan.beam_angle(i, pose.theta);
                if let Err(msg) = check_against_marching(&g, pose, a, r, cfg.max_range) {
                    panic!("pose {pose:?} beam {i}: {msg}");
                }
            }
            checked += 1;
        }
        assert!(checked >= 100);
    }

    #[test]
    fn mirrored_poses_give_reversed_scans() {
        // ring_map is symmetric about y=0; mirror a pose across that axis.
        let g = ring_map(64, 0.1, 2.8, 1.6);
        let cfg = sensor(21, 270.0_f64.to_radians(), 6.0);
        let pose = Pose::new(2.13, 0.57, 0.83);
        let mirrored = Pose::new(2.13, -0.57, -0.83);
        let scan = raycast(&g, &pose, &cfg).unwrap();
        let mscan = raycast(&g, &mirrored, &cfg).unwrap();
        for i in 0..cfg.n_beams {
            let diff = (scan.ranges[i] - mscan.ranges[cfg.n_beams - 1 - i]).abs();
            assert!(diff < 1e-9, "beam {i}: {diff}");
        }
    }

    #[test]
    fn removing_obstacles_never_shortens_ranges() {
        let g = ring_map(64, 0.1, 2.8, 1.6);
        let mut opened = g.clone();
        // Open up a block of the inner island.
        for iy in 28..36 {
            for ix in 28..36 {
                opened.set_cell(ix, iy, Cell::Drivable);
            }
        }
        let cfg = sensor(31, 270.0_f64.to_radians(), 6.0);
        let pose = Pose::new(0.05, -2.15, 1.3);
        let before = raycast(&g, &pose, &cfg).unwrap();
        let after = raycast(&opened, &pose, &cfg).unwrap();
        for i in 0..cfg.n_beams {
            assert!(after.ranges[i] >= before.ranges[i] - 1e-12, "beam {i}");
        }
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let g = open_room(10.0, 0.1);
        let scan = raycast(&g, &Pose::new(5.0, 5.0, 0.4), &sensor(11, 1.5, 8.0)).unwrap();
        let mut rng = derive_rng(1, &[2]);
        let noisy = add_scan_noise(&scan, 0.0, &mut rng);
        assert_eq!(scan, noisy);
    }

    #[test]
    fn noise_sigma_matches_sample_std() {
        let scan = LidarScan {
            ranges: vec![5.0; 1000],
            fov: 1.0,
            max_range: 10.0,
        };
        let mut rng = derive_rng(7, &[3]);
        let mut samples = Vec::with_capacity(1_000_000);
        for _ in 0..1000 {
            let noisy = add_scan_noise(&scan, 0.25, &mut rng);
            samples.extend(noisy.ranges.iter().map(|r| r - 5.0));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.2475..=0.2525).contains(&std), "sample std {std}");
    }

    #[test]
    fn noise_clamps_to_sensor_interval() {
        let scan = LidarScan {
            ranges: vec![10.0, 0.0],
            fov: 1.0,
            max_range: 10.0,
        };
        let mut rng = derive_rng(7, &[4]);
        for _ in 0..200 {
            let noisy = add_scan_noise(&scan, 1.0, &mut rng);
            assert!(noisy.ranges[0] <= 10.0);
            assert!(noisy.ranges[1] >= 0.0);
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let scan = LidarScan {
            ranges: vec![3.0; 32],
            fov: 1.0,
            max_range: 10.0,
        };
        let a = add_scan_noise(&scan, 0.25, &mut derive_rng(9, &[5]));
        let b = add_scan_noise(&scan, 0.25, &mut derive_rng(9, &[5]));
        assert_eq!(a, b);
    }

    #[test]
    fn free_poses_cover_every_drivable_cell() {
        let g = ring_map(64, 0.1, 2.8, 1.6);
        let mut rng = derive_rng(13, &[6]);
        let poses = free_poses(&g, &mut rng).unwrap();
        assert_eq!(poses.len(), g.drivable_count());
        // Each pose stays in its own (drivable) cell; cell order is row-major.
        let cells: Vec<_> = g.drivable_cells().collect();
        for (pose, cell) in poses.iter().zip(&cells) {
            assert_eq!(g.world_to_cell(pose.x, pose.y), Some(*cell));
        }
    }

    #[test]
    fn free_poses_are_seed_deterministic() {
        let g = ring_map(32, 0.1, 1.4, 0.7);
        let a = free_poses(&g, &mut derive_rng(21, &[8])).unwrap();
        let b = free_poses(&g, &mut derive_rng(21, &[8])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cell_map_yields_one_pose_inside() {
        let mut cells = vec![Cell::Occupied; 9];
        cells[4] = Cell::Drivable;
        let g = OccupancyGrid::new(3, 3, 0.5, (0.0, 0.0), cells).unwrap();
        let poses = free_poses(&g, &mut derive_rng(3, &[9])).unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(g.world_to_cell(poses[0].x, poses[0].y), Some((1, 1)));
    }
}

//! Follow-the-Gap: blank out a safety bubble around the nearest obstacle,
//! find the widest run of far-enough beams, steer at that run's best beam.

use crate::world::LidarScan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtgConfig {
    /// Obstacle bubble radius (m): beams whose arc distance to the nearest
    /// beam at its range falls inside are zeroed.
    pub bubble_radius: f64,
    /// Minimum range (m) for a beam to count as part of a gap.
    pub safe_threshold: f64,
    pub delta_max: f64,
}

impl Default for FtgConfig {
    fn default() -> Self {
        Self {
            bubble_radius: 0.4,
            safe_threshold: 2.5,
            delta_max: 0.41,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtgDecision {
    pub delta: f64,
    /// False when no beam clears the safety threshold; delta is then 0.
    pub found_gap: bool,
}

pub fn follow_the_gap(scan: &LidarScan, cfg: &FtgConfig) -> FtgDecision {
    let n = scan.n_beams();
    if n == 0 {
        return FtgDecision {
            delta: 0.0,
            found_gap: false,
        };
    }
    let mut ranges = scan.ranges.clone();

    // Safety bubble around the closest obstacle.
    let nearest = (0..n)
        .min_by(|&a, &b| ranges[a].total_cmp(&ranges[b]))
        .unwrap();
    let spacing = if n > 1 { scan.fov / (n - 1) as f64 } else { 0.0 };
    let r_near = ranges[nearest].max(1e-6);
    for (j, r) in ranges.iter_mut().enumerate() {
        let arc = (j as f64 - nearest as f64).abs() * spacing * r_near;
        if arc <= cfg.bubble_radius {
            *r = 0.0;
        }
    }

    // Widest contiguous run of beams above the threshold.
    let mut best: Option<(usize, usize)> = None; // [start, end] inclusive
    let mut run_start = None;
    for j in 0..=n {
        let safe = j < n && ranges[j] > cfg.safe_threshold;
        match (safe, run_start) {
            (true, None) => run_start = Some(j),
            (false, Some(s)) => {
                let cand = (s, j - 1);
                if best.is_none_or(|(bs, be)| cand.1 - cand.0 > be - bs) {
                    best = Some(cand);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let Some((s, e)) = best else {
        return FtgDecision {
            delta: 0.0,
            found_gap: false,
        };
    };

    // Steer at the farthest beam in the run; among ties prefer the beam
    // closest to the run's center (then the lower index).
    let center = (s + e) as f64 / 2.0;
    let best_beam = (s..=e)
        .max_by(|&a, &b| {
            ranges[a]
                .total_cmp(&ranges[b])
                .then(
                    (center - b as f64)
                        .abs()
                        .total_cmp(&(center - a as f64).abs()),
                )
                .then_with(|| b.cmp(&a))
        })
        .unwrap();
    // Beam angle relative to the vehicle heading.
    let angle = -scan.fov / 2.0 + best_beam as f64 * spacing;
    FtgDecision {
        delta: angle.clamp(-cfg.delta_max, cfg.delta_max),
        found_gap: true,
    }
}

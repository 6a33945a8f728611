//! Synthetic closed-track generator: centerline construction, arc-length
//! resampling into waypoints, and corridor rasterization into an occupancy
//! grid.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::str::FromStr;

use crate::angle::wrap_angle;
use crate::error::{Error, Result};
use crate::world::grid::{Cell, OccupancyGrid};
use crate::world::trajectory::{Trajectory, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackKind {
    Oval,
    Hairpin,
    Chicane,
}

impl FromStr for TrackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oval" => Ok(Self::Oval),
            "hairpin" => Ok(Self::Hairpin),
            "chicane" => Ok(Self::Chicane),
            other => Err(Error::Config(format!(
                "unknown track kind '{other}' (expected oval, hairpin, or chicane)"
            ))),
        }
    }
}

impl std::fmt::Display for TrackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oval => "oval",
            Self::Hairpin => "hairpin",
            Self::Chicane => "chicane",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackParams {
    pub scale: f64,
    pub resolution: f64,
    /// Corridor width (drivable band around the centerline).
    pub width: f64,
    pub waypoint_spacing: f64,
    pub velocity: f64,
    /// Occupied padding between the corridor and the grid edge.
    pub margin: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            scale: 1.0,
            resolution: 0.05,
            width: 2.2,
            waypoint_spacing: 0.25,
            velocity: 2.0,
            margin: 0.6,
        }
    }
}

/// Generate a closed track: grid whose drivable band hugs the centerline,
/// and the centerline resampled at fixed arc-length steps with chordal
/// headings and a constant velocity profile.
pub fn generate_track(kind: TrackKind, params: &TrackParams) -> Result<(OccupancyGrid, Trajectory)> {
    if params.scale <= 0.0 || params.resolution <= 0.0 {
        return Err(Error::Config("track scale and resolution must be positive".into()));
    }
    if params.waypoint_spacing <= 0.0 || params.width <= 0.0 {
        return Err(Error::Config("track width and waypoint spacing must be positive".into()));
    }
    let dense = dense_centerline(kind, params.scale);
    let pts = resample_by_arc_length(&dense, params.waypoint_spacing);
    if pts.len() < 3 {
        return Err(Error::Config(
            "track too small for the requested waypoint spacing".into(),
        ));
    }

    // Chordal headings: each waypoint points at its successor, so driving
    // waypoint-to-waypoint matches the stored headings exactly.
    let n = pts.len();
    let waypoints: Vec<Waypoint> = (0..n)
        .map(|i| {
            let (x, y) = pts[i];
            let (nx, ny) = pts[(i + 1) % n];
            Waypoint {
                x,
                y,
                heading: wrap_angle((ny - y).atan2(nx - x)),
                velocity: params.velocity,
            }
        })
        .collect();
    let traj = Trajectory::new(waypoints, true)?;
    let grid = rasterize_corridor(&pts, params)?;
    Ok((grid, traj))
}

/// Centerline as a dense closed polyline (last point connects to first).
fn dense_centerline(kind: TrackKind, s: f64) -> Vec<(f64, f64)> {
    match kind {
        TrackKind::Oval => stadium(6.0 * s, 2.5 * s, None),
        TrackKind::Chicane => stadium(8.0 * s, 2.5 * s, Some(0.8 * s)),
        TrackKind::Hairpin => hairpin(3.2 * s, 1.8 * s, 6.0 * s),
    }
}

/// Stadium centerline: straights of length `l` at y = ±r joined by
/// semicircular caps of radius `r`. With `chicane_amp`, the top straight
/// carries a windowed sinusoidal S-offset (zero value and slope at both
/// ends, so headings stay continuous).
fn stadium(l: f64, r: f64, chicane_amp: Option<f64>) -> Vec<(f64, f64)> {
    let ds = 0.01;
    let mut pts = Vec::new();

    // Bottom straight: (-l/2, -r) -> (l/2, -r); start mid-straight so the
    // lap start line sits on a straight section.
    let half = l / 2.0;
    sample_line(&mut pts, (0.0, -r), (half, -r), ds);
    sample_arc(&mut pts, (half, 0.0), r, -FRAC_PI_2, FRAC_PI_2, ds);
    // Top straight, right to left, with optional S-offset.
    let n_top = (l / ds).ceil() as usize;
    for i in 0..n_top {
        let u = i as f64 / n_top as f64 * l;
        let x = half - u;
        let off = chicane_amp
            .map(|a| a * (TAU * u / l).sin() * (PI * u / l).sin().powi(2))
            .unwrap_or(0.0);
        pts.push((x, r + off));
    }
    sample_arc(&mut pts, (-half, 0.0), r, FRAC_PI_2, 3.0 * FRAC_PI_2, ds);
    sample_line(&mut pts, (-half, -r), (0.0, -r), ds);
    pts
}

/// Hairpin centerline: convex hull boundary of a large circle (radius
/// `r_big` at the origin) and a small one (radius `r_small`, center at
/// (d, 0)); the tight turn around the small circle sets the minimum radius.
fn hairpin(r_big: f64, r_small: f64, d: f64) -> Vec<(f64, f64)> {
    let ds = 0.01;
    // External tangent touches both circles at polar angle ±alpha.
    let alpha = ((r_big - r_small) / d).acos();
    let big = (0.0, 0.0);
    let small = (d, 0.0);
    let touch = |c: (f64, f64), r: f64, a: f64| (c.0 + r * a.cos(), c.1 + r * a.sin());

    let mut pts = Vec::new();
    // Lower tangent, left to right (counterclockwise traversal).
    sample_line(&mut pts, touch(big, r_big, -alpha), touch(small, r_small, -alpha), ds);
    // Tight turn around the small circle.
    sample_arc(&mut pts, small, r_small, -alpha, alpha, ds);
    // Upper tangent back.
    sample_line(&mut pts, touch(small, r_small, alpha), touch(big, r_big, alpha), ds);
    // Long sweep around the big circle.
    sample_arc(&mut pts, big, r_big, alpha, TAU - alpha, ds);
    pts
}

fn sample_line(out: &mut Vec<(f64, f64)>, a: (f64, f64), b: (f64, f64), ds: f64) {
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    let n = (len / ds).ceil().max(1.0) as usize;
    for i in 0..n {
        let t = i as f64 / n as f64;
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
}

fn sample_arc(out: &mut Vec<(f64, f64)>, c: (f64, f64), r: f64, a0: f64, a1: f64, ds: f64) {
    let len = (a1 - a0).abs() * r;
    let n = (len / ds).ceil().max(1.0) as usize;
    for i in 0..n {
        let a = a0 + (a1 - a0) * i as f64 / n as f64;
        out.push((c.0 + r * a.cos(), c.1 + r * a.sin()));
    }
}

/// Resample a closed polyline at (nearly) uniform arc-length spacing. The
/// step is total/round(total/spacing), so the last sample closes onto the
/// first with the same step as every other pair.
fn resample_by_arc_length(pts: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let n = pts.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        cum.push(cum[i] + (b.0 - a.0).hypot(b.1 - a.1));
    }
    let total = *cum.last().unwrap();
    let m = (total / spacing).round().max(3.0) as usize;
    let step = total / m as f64;

    let mut out = Vec::with_capacity(m);
    let mut seg = 0usize;
    for k in 0..m {
        let target = k as f64 * step;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] <= target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 { (target - cum[seg]) / seg_len } else { 0.0 };
        let (a, b) = (pts[seg], pts[(seg + 1) % n]);
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
    out
}

/// Cells whose center lies within width/2 of the closed centerline polyline
/// become drivable; everything else (plus `margin` of padding) is occupied.
/// Largest relative outward wall extension produced by [`wall_ripple`].
const RIPPLE_MAX: f64 = 0.16;

/// Outward-only wall modulation (fraction of the half-width) at arc-length
/// fraction `u`, with different phases per side. Perfectly straight
/// parallel walls give a range scan no information about progress along a
/// corridor, so scan-based localization degenerates exactly on straights;
/// shallow asymmetric bays restore observability (and break the stadium's
/// 180-degree rotational symmetry) without ever narrowing the corridor the
/// vehicle drives in.
fn wall_ripple(u: f64, left: bool) -> f64 {
    let (p1, p2) = if left { (0.7, 2.9) } else { (4.1, 1.3) };
    0.05 * (1.0 + (TAU * 7.0 * u + p1).sin()) + 0.03 * (1.0 + (TAU * 11.0 * u + p2).sin())
}

fn rasterize_corridor(centerline: &[(f64, f64)], params: &TrackParams) -> Result<OccupancyGrid> {
    let half_w = params.width / 2.0;
    let pad = half_w * (1.0 + RIPPLE_MAX) + params.margin;
    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in centerline {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    // Origin is the grid's (min-x, max-y) corner; rows grow downward.
    let origin = (min_x - pad, max_y + pad);
    let res = params.resolution;
    let width = ((max_x + pad - origin.0) / res).ceil() as usize;
    let height = ((origin.1 - (min_y - pad)) / res).ceil() as usize;

    let n = centerline.len();
    // Cumulative arc length per centerline point, for the ripple phase.
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..n {
        let (ax, ay) = centerline[i];
        let (bx, by) = centerline[(i + 1) % n];
        cum.push(cum[i] + ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt());
    }
    let total = cum[n];

    let mut cells = vec![Cell::Occupied; width * height];
    for iy in 0..height {
        for ix in 0..width {
            let cx = origin.0 + (ix as f64 + 0.5) * res;
            let cy = origin.1 - (iy as f64 + 0.5) * res;
            let mut best = f64::INFINITY;
            let mut best_u = 0.0;
            let mut best_left = false;
            for i in 0..n {
                let a = centerline[i];
                let b = centerline[(i + 1) % n];
                let (d, t) = point_segment_projection((cx, cy), a, b);
                if d < best {
                    best = d;
                    best_u = (cum[i] + t * (cum[i + 1] - cum[i])) / total;
                    let cross = (b.0 - a.0) * (cy - a.1) - (b.1 - a.1) * (cx - a.0);
                    best_left = cross > 0.0;
                }
            }
            if best <= half_w * (1.0 + wall_ripple(best_u, best_left)) {
                cells[iy * width + ix] = Cell::Drivable;
            }
        }
    }
    let grid = OccupancyGrid::new(width, height, res, origin, cells)?;
    grid.require_drivable()?;
    Ok(grid)
}

/// Distance from `p` to segment `a`-`b`, plus the clamped projection
/// parameter `t` in `[0, 1]` of the closest point.
fn point_segment_projection(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((apx - t * abx).hypot(apy - t * aby), t)
}


/// Small annulus test map: drivable where the distance from the grid center
/// lies in [r_inner, r_outer]. Handy fixture for raycast and pose sampling.
pub fn ring_map(size_px: usize, resolution: f64, r_outer: f64, r_inner: f64) -> OccupancyGrid {
    let half = size_px as f64 * resolution / 2.0;
    let origin = (-half, half);
    let mut cells = vec![Cell::Occupied; size_px * size_px];
    for iy in 0..size_px {
        for ix in 0..size_px {
            let cx = origin.0 + (ix as f64 + 0.5) * resolution;
            let cy = origin.1 - (iy as f64 + 0.5) * resolution;
            let r = cx.hypot(cy);
            if (r_inner..=r_outer).contains(&r) {
                cells[iy * size_px + ix] = Cell::Drivable;
            }
        }
    }
    OccupancyGrid::new(size_px, size_px, resolution, origin, cells).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oval_waypoints_keep_clearance_from_walls() {
        let params = TrackParams {
            width: 2.0,
            ..TrackParams::default()
        };
        let (grid, traj) = generate_track(TrackKind::Oval, &params).unwrap();
        let occupied: Vec<(f64, f64)> = (0..grid.height())
            .flat_map(|iy| (0..grid.width()).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| grid.cell(ix, iy) != Cell::Drivable)
            .map(|(ix, iy)| grid.cell_center(ix, iy))
            .collect();
        for wp in traj.waypoints() {
            let min_d = occupied
                .iter()
                .map(|&(x, y)| (x - wp.x).hypot(y - wp.y))
                .fold(f64::INFINITY, f64::min);
            assert!(min_d >= 0.9, "waypoint ({}, {}) clearance {min_d}", wp.x, wp.y);
        }
    }

    #[test]
    fn walls_vary_along_straights_but_never_narrow_the_corridor() {
        let params = TrackParams::default();
        let (grid, _) = generate_track(TrackKind::Oval, &params).unwrap();
        let half_w = params.width / 2.0;
        // March outward from the bottom straight's centerline until the
        // first occupied cell; the wall distance must always be at least
        // the nominal half-width and must change along the straight.
        let cy = -2.5 * params.scale;
        let mut dists = Vec::new();
        for i in 0..30 {
            let cx = 6.0 * params.scale * (i as f64 + 0.5) / 30.0;
            let mut d = 0.0;
            while grid.is_drivable(cx, cy - d) {
                d += grid.resolution() / 4.0;
            }
            dists.push(d);
        }
        let lo = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= half_w - grid.resolution(), "corridor narrowed: {lo}");
        assert!(hi - lo >= 0.04, "walls look flat: spread {}", hi - lo);
    }

    #[test]
    fn generated_tracks_close_and_stay_drivable() {
        for kind in [TrackKind::Oval, TrackKind::Hairpin, TrackKind::Chicane] {
            let params = TrackParams::default();
            let (grid, traj) = generate_track(kind, &params).unwrap();
            assert!(traj.is_closed());
            let first = traj.waypoint(0);
            let last = traj.waypoint(traj.len() - 1);
            let gap = (first.x - last.x).hypot(first.y - last.y);
            assert!(
                gap <= params.waypoint_spacing * 1.01,
                "{kind}: closing gap {gap}"
            );
            for wp in traj.waypoints() {
                assert!(grid.is_drivable(wp.x, wp.y), "{kind}: waypoint off corridor");
                assert!(wp.velocity > 0.0);
            }
        }
    }

    #[test]
    fn waypoint_spacing_is_uniform() {
        let params = TrackParams::default();
        let (_, traj) = generate_track(TrackKind::Oval, &params).unwrap();
        let n = traj.len();
        for i in 0..n {
            let a = traj.waypoint(i);
            let b = traj.waypoint((i + 1) % n);
            let d = (a.x - b.x).hypot(a.y - b.y);
            assert!(
                (d - params.waypoint_spacing).abs() < 0.02,
                "segment {i} length {d}"
            );
        }
    }

    #[test]
    fn hairpin_minimum_turn_radius_matches_configuration() {
        // Curvature from finite differences of chordal headings; for
        // uniformly spaced waypoints on an arc this recovers 1/R exactly.
        let params = TrackParams::default();
        let (_, traj) = generate_track(TrackKind::Hairpin, &params).unwrap();
        let n = traj.len();
        let mut max_curvature = 0.0f64;
        for i in 0..n {
            let h0 = traj.waypoint(i).heading;
            let h1 = traj.waypoint((i + 1) % n).heading;
            let k = wrap_angle(h1 - h0).abs() / params.waypoint_spacing;
            max_curvature = max_curvature.max(k);
        }
        let min_radius = 1.0 / max_curvature;
        let configured = 1.8 * params.scale;
        assert!(
            ((min_radius - configured) / configured).abs() < 0.05,
            "min radius {min_radius} vs configured {configured}"
        );
    }

    #[test]
    fn scale_shrinks_the_footprint() {
        let big = TrackParams::default();
        let small = TrackParams {
            scale: 0.5,
            ..big
        };
        let (g1, _) = generate_track(TrackKind::Hairpin, &big).unwrap();
        let (g2, _) = generate_track(TrackKind::Hairpin, &small).unwrap();
        let (bx1, by1) = (g1.width() as f64 * g1.resolution(), g1.height() as f64 * g1.resolution());
        let (bx2, by2) = (g2.width() as f64 * g2.resolution(), g2.height() as f64 * g2.resolution());
        // Padding is scale-independent, so the ratio is below 1 but not 0.5.
        assert!(bx2 < 0.75 * bx1 && by2 < 0.75 * by1, "{bx2}x{by2} vs {bx1}x{by1}");
    }

    #[test]
    fn ring_map_survives_pgm_round_trip() {
        let g = ring_map(64, 0.1, 2.8, 1.6);
        assert_eq!(g.width(), 64);
        assert_eq!(g.height(), 64);
        let count = g.drivable_count();
        assert!(count > 0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ring.pgm");
        g.write_pgm(&path).unwrap();
        let loaded = OccupancyGrid::from_pgm(&path, 0.1, g.origin(), 250).unwrap();
        assert_eq!(loaded.drivable_count(), count);
    }

    #[test]
    fn chicane_bends_the_top_straight() {
        let params = TrackParams::default();
        let (_, oval) = generate_track(TrackKind::Oval, &params).unwrap();
        let (_, chicane) = generate_track(TrackKind::Chicane, &params).unwrap();
        // Spread of y over the middle of the top side (away from the caps):
        // flat for the oval, S-shaped for the chicane.
        let top_spread = |t: &Trajectory| {
            let ys: Vec<f64> = t
                .waypoints()
                .iter()
                .filter(|w| w.y > 0.0 && w.x.abs() <= 2.0)
                .map(|w| w.y)
                .collect();
            let max = ys.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let min = ys.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            max - min
        };
        assert!(top_spread(&oval) < 0.05, "oval spread {}", top_spread(&oval));
        assert!(
            top_spread(&chicane) > 0.5,
            "chicane spread {}",
            top_spread(&chicane)
        );
    }
}

//! Waypoint trajectories: ordered (x, y, heading, velocity) samples of a
//! reference path, with arc-length bookkeeping and CSV persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
    /// cum_arc[i] = path length from waypoint 0 to waypoint i.
    cum_arc: Vec<f64>,
    closed: bool,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>, closed: bool) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Trajectory(format!(
                "need at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        let n = waypoints.len();
        let pairs = if closed { n } else { n - 1 };
        for i in 0..pairs {
            let (a, b) = (&waypoints[i], &waypoints[(i + 1) % n]);
            if a.x == b.x && a.y == b.y {
                return Err(Error::Trajectory(format!(
                    "waypoints {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        for (i, w) in waypoints.iter().enumerate() {
            if w.velocity <= 0.0 {
                return Err(Error::Trajectory(format!(
                    "waypoint {i} velocity {} must be positive",
                    w.velocity
                )));
            }
        }
        let mut cum_arc = Vec::with_capacity(n);
        let mut acc = 0.0;
        cum_arc.push(0.0);
        for i in 1..n {
            let (a, b) = (&waypoints[i - 1], &waypoints[i]);
            acc += (b.x - a.x).hypot(b.y - a.y);
            cum_arc.push(acc);
        }
        Ok(Self {
            waypoints,
            cum_arc,
            closed,
        })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires >= 2 waypoints
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn waypoint(&self, i: usize) -> &Waypoint {
        &self.waypoints[i]
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn next_index(&self, i: usize) -> usize {
        if self.closed {
            (i + 1) % self.waypoints.len()
        } else {
            (i + 1).min(self.waypoints.len() - 1)
        }
    }

    /// Total path length including the closing segment when closed.
    pub fn total_length(&self) -> f64 {
        let open = *self.cum_arc.last().unwrap();
        if self.closed {
            let (a, b) = (self.waypoints.last().unwrap(), &self.waypoints[0]);
            open + (b.x - a.x).hypot(b.y - a.y)
        } else {
            open
        }
    }

    /// Arc length from waypoint 0 to waypoint i.
    pub fn arc_at(&self, i: usize) -> f64 {
        self.cum_arc[i]
    }

    /// Index of the Euclidean-nearest waypoint; ties break to the lower index.
    pub fn nearest_index(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, w) in self.waypoints.iter().enumerate() {
            let d2 = (w.x - x).powi(2) + (w.y - y).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for wp in &self.waypoints {
            w.serialize(wp)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a `x,y,heading,velocity` CSV. Whether the path closes back on
    /// itself is not stored in the file; the caller supplies it.
    pub fn load_csv(path: &Path, closed: bool) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| {
            if let csv::ErrorKind::Io(io) = e.kind() {
                if io.kind() == std::io::ErrorKind::NotFound {
                    return Error::MissingFile(path.to_path_buf());
                }
            }
            Error::Csv(e)
        })?;
        let mut waypoints = Vec::new();
        for rec in r.deserialize() {
            waypoints.push(rec?);
        }
        Self::new(waypoints, closed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(x: f64, y: f64, heading: f64) -> Waypoint {
        Waypoint {
            x,
            y,
            heading,
            velocity: 2.0,
        }
    }

    fn unit_square() -> Trajectory {
        Trajectory::new(
            vec![
                wp(0.0, 0.0, 0.0),
                wp(1.0, 0.0, std::f64::consts::FRAC_PI_2),
                wp(1.0, 1.0, std::f64::consts::PI),
                wp(0.0, 1.0, -std::f64::consts::FRAC_PI_2),
            ],
            true,
        )
        .unwrap()
    }

    #[test]
    fn closed_square_has_perimeter_four() {
        let t = unit_square();
        assert_eq!(t.total_length(), 4.0);
        assert_eq!(t.arc_at(2), 2.0);
        assert_eq!(t.next_index(3), 0);
    }

    #[test]
    fn coincident_waypoints_are_rejected() {
        let err = Trajectory::new(vec![wp(0.0, 0.0, 0.0), wp(0.0, 0.0, 0.0)], false).unwrap_err();
        assert!(matches!(err, Error::Trajectory(_)));
        // Closed path whose last point equals the first is also degenerate.
        let err = Trajectory::new(
            vec![wp(0.0, 0.0, 0.0), wp(1.0, 0.0, 0.0), wp(0.0, 0.0, 0.0)],
            true,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Trajectory(_)));
    }

    #[test]
    fn nonpositive_velocity_is_rejected() {
        let mut bad = wp(1.0, 1.0, 0.0);
        bad.velocity = 0.0;
        let err = Trajectory::new(vec![wp(0.0, 0.0, 0.0), bad], false).unwrap_err();
        assert!(matches!(err, Error::Trajectory(_)));
    }

    #[test]
    fn nearest_ties_break_to_lower_index() {
        let t = unit_square();
        // (0.5, 0.5) is equidistant from all four corners.
        assert_eq!(t.nearest_index(0.5, 0.5), 0);
        assert_eq!(t.nearest_index(0.9, -0.1), 1);
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("wp1.csv");
        let p2 = dir.path().join("wp2.csv");
        let t = Trajectory::new(
            vec![
                wp(0.123456789, -0.5, 0.1),
                wp(1.0 / 3.0, 2.0e-17, -3.14159),
                wp(5.0, 5.0, 2.5),
            ],
            true,
        )
        .unwrap();
        t.save_csv(&p1).unwrap();
        let back = Trajectory::load_csv(&p1, true).unwrap();
        assert_eq!(t, back);
        back.save_csv(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let header = std::fs::read_to_string(&p1).unwrap();
        assert!(header.starts_with("x,y,heading,velocity\n"), "{header}");
    }

    #[test]
    fn missing_waypoint_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = Trajectory::load_csv(&dir.path().join("absent.csv"), true).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}

//! The simulated world: occupancy grids, reference trajectories, the
//! raytraced LiDAR, and synthetic track generation.

pub mod grid;
pub mod lidar;
pub mod track;
pub mod trajectory;

pub use grid::{Cell, MapMetadata, OccupancyGrid};
pub use lidar::{add_scan_noise, beam_angle, cast_ray, free_poses, raycast, LidarScan, SensorConfig};
pub use track::{generate_track, ring_map, TrackKind, TrackParams};
pub use trajectory::{Trajectory, Waypoint};

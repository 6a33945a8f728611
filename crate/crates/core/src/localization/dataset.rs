//! Supervised training samples for the pose estimator: noisy scans labeled
//! with ground-truth poses, plus a perturbed "previous pose" input, cached
//! on disk in a binary format that reloads bit-identically.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::angle::wrap_angle;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, label};
use crate::vehicle::Pose;
use crate::world::{add_scan_noise, free_poses, raycast, LidarScan, OccupancyGrid, SensorConfig};

/// One supervised sample: what the sensor saw, where the vehicle believed it
/// was one step earlier, and where it actually is.
#[derive(Debug, Clone, PartialEq)]
pub struct LocSample {
    pub scan: LidarScan,
    pub prev: Pose,
    pub gt: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    /// Gaussian range-noise sigma applied to each scan (m).
    pub sigma: f64,
    /// Number of full copies of the base pose set, each with fresh headings,
    /// scan noise, and previous-pose noise.
    pub augment: usize,
    /// Previous-pose position noise sigma (m) of the strongest ladder rung;
    /// copy k of `augment` uses (k+1)/augment of this value.
    pub prev_sigma_xy: f64,
    /// Previous-pose heading noise sigma (rad), laddered like the position.
    pub prev_sigma_theta: f64,
    /// Deterministic cap on the number of base poses (evenly subsampled).
    pub max_base_poses: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sigma: 0.25,
            augment: 10,
            prev_sigma_xy: 0.2,
            prev_sigma_theta: 0.1,
            max_base_poses: None,
        }
    }
}

/// Generate `augment` copies of one pose per drivable cell. Samples are
/// produced from per-task RNG streams keyed on (copy, pose index), so the
/// result is identical regardless of thread scheduling.
pub fn generate_dataset(
    grid: &OccupancyGrid,
    sensor: &SensorConfig,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<LocSample>> {
    if cfg.augment == 0 {
        return Err(Error::Config("dataset augment count must be >= 1".into()));
    }
    let mut base = free_poses(grid, &mut derive_rng(seed, &[label::DATASET, 0]))?;
    if let Some(cap) = cfg.max_base_poses {
        if cap == 0 {
            return Err(Error::Config("max_base_poses must be >= 1".into()));
        }
        if base.len() > cap {
            base = (0..cap).map(|i| base[i * base.len() / cap]).collect();
        }
    }

    let tasks: Vec<(usize, usize)> = (0..cfg.augment)
        .flat_map(|round| (0..base.len()).map(move |idx| (round, idx)))
        .collect();
    let samples = tasks
        .par_iter()
        .map(|&(round, idx)| {
            let mut rng = derive_rng(seed, &[label::DATASET, 1 + round as u64, idx as u64]);
            let mut pose = base[idx];
            pose.theta = wrap_angle(rng.gen_range(0.0..std::f64::consts::TAU));
            let clean = raycast(grid, &pose, sensor)?;
            let scan = add_scan_noise(&clean, cfg.sigma, &mut rng);
            // Prev-pose noise is a per-copy ladder from 1/augment of the
            // configured sigma up to the full value. At deployment the prev
            // input is the estimator's own previous output, whose error
            // ranges from near zero to several times the single-shot error;
            // training across that spread is what makes the feedback loop
            // contract back to the truth instead of wandering off when the
            // prior is poor.
            let rung = (round + 1) as f64 / cfg.augment as f64;
            let noise_xy = Normal::new(0.0, rung * cfg.prev_sigma_xy)
                .map_err(|e| Error::Config(format!("invalid prev-pose sigma: {e}")))?;
            let noise_t = Normal::new(0.0, rung * cfg.prev_sigma_theta)
                .map_err(|e| Error::Config(format!("invalid prev-pose sigma: {e}")))?;
            let prev = Pose::new(
                pose.x + noise_xy.sample(&mut rng),
                pose.y + noise_xy.sample(&mut rng),
                pose.theta + noise_t.sample(&mut rng),
            );
            Ok(LocSample {
                scan,
                prev,
                gt: pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(samples)
}

// ---- disk cache ---------------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"NAVDSET\0";
const CACHE_VERSION: u32 = 1;

/// Identity of a cached dataset; a cache is only reused when every field
/// matches the requested configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetCacheMeta {
    pub seed: u64,
    pub n_beams: u32,
    pub fov: f64,
    pub max_range: f64,
    pub sigma: f64,
    pub augment: u32,
    pub prev_sigma_xy: f64,
    pub prev_sigma_theta: f64,
}

impl DatasetCacheMeta {
    pub fn new(sensor: &SensorConfig, cfg: &DatasetConfig, seed: u64) -> Self {
        Self {
            seed,
            n_beams: sensor.n_beams as u32,
            fov: sensor.fov,
            max_range: sensor.max_range,
            sigma: cfg.sigma,
            augment: cfg.augment as u32,
            prev_sigma_xy: cfg.prev_sigma_xy,
            prev_sigma_theta: cfg.prev_sigma_theta,
        }
    }
}

pub fn save_dataset_cache(
    path: &Path,
    meta: &DatasetCacheMeta,
    samples: &[LocSample],
) -> Result<()> {
    let n_beams = meta.n_beams as usize;
    for s in samples {
        if s.scan.ranges.len() != n_beams {
            return Err(Error::DatasetCache(format!(
                "sample has {} beams, header says {}",
                s.scan.ranges.len(),
                n_beams
            )));
        }
    }
    let mut buf = Vec::with_capacity(64 + samples.len() * (n_beams + 6) * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta.seed.to_le_bytes());
    buf.extend_from_slice(&meta.n_beams.to_le_bytes());
    buf.extend_from_slice(&meta.augment.to_le_bytes());
    for v in [
        meta.fov,
        meta.max_range,
        meta.sigma,
        meta.prev_sigma_xy,
        meta.prev_sigma_theta,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        for r in &s.scan.ranges {
            buf.extend_from_slice(&r.to_le_bytes());
        }
        for v in [s.prev.x, s.prev.y, s.prev.theta, s.gt.x, s.gt.y, s.gt.theta] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_dataset_cache(path: &Path) -> Result<(DatasetCacheMeta, Vec<LocSample>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > bytes.len() {
            return Err(Error::DatasetCache("truncated cache file".into()));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    if take(8)? != CACHE_MAGIC {
        return Err(Error::DatasetCache("bad magic; not a dataset cache".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::DatasetCache(format!(
            "unsupported cache version {version}"
        )));
    }
    let n_samples = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let n_beams = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let augment = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut f = || -> Result<f64> { Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())) };
    let meta = DatasetCacheMeta {
        seed,
        n_beams,
        augment,
        fov: f()?,
        max_range: f()?,
        sigma: f()?,
        prev_sigma_xy: f()?,
        prev_sigma_theta: f()?,
    };
    let per_sample = n_beams as usize + 6;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let raw = take(per_sample * 8)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (ranges, tail) = vals.split_at(n_beams as usize);
        samples.push(LocSample {
            scan: LidarScan {
                ranges: ranges.to_vec(),
                fov: meta.fov,
                max_range: meta.max_range,
            },
            prev: Pose::new(tail[0], tail[1], tail[2]),
            gt: Pose::new(tail[3], tail[4], tail[5]),
        });
    }
    if at != bytes.len() {
        return Err(Error::DatasetCache("trailing bytes after samples".into()));
    }
    Ok((meta, samples))
}

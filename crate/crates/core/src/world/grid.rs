//! Occupancy grids and PGM (P2/P5) map I/O.
//!
//! Cells are stored in image order: cell (0, 0) is the top-left pixel and
//! row index grows downward (decreasing world y). `origin` is the world
//! position of the outer corner of pixel (0, 0), i.e. the grid's
//! (min-x, max-y) corner. This keeps PGM pixels and grid cells aligned
//! index-for-index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Drivable,
    Occupied,
    Unknown,
}

impl Cell {
    /// Rays stop at anything that is not known drivable.
    pub fn blocks(&self) -> bool {
        !matches!(self, Cell::Drivable)
    }
}

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        cells: Vec<Cell>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Pgm("zero grid dimensions".into()));
        }
        if resolution <= 0.0 {
            return Err(Error::Pgm(format!("resolution must be > 0, got {resolution}")));
        }
        if cells.len() != width * height {
            return Err(Error::Pgm(format!(
                "cell count {} does not match {width}x{height}",
                cells.len()
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// World position of the grid's (min-x, max-y) corner.
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cell(&self, ix: usize, iy: usize) -> Cell {
        self.cells[iy * self.width + ix]
    }

    pub fn set_cell(&mut self, ix: usize, iy: usize, c: Cell) {
        self.cells[iy * self.width + ix] = c;
    }

    /// Cell containing a world point, or None outside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let gx = (x - self.origin.0) / self.resolution;
        let gy = (self.origin.1 - y) / self.resolution;
        if gx < 0.0 || gy < 0.0 {
            return None;
        }
        let (ix, iy) = (gx as usize, gy as usize);
        if ix >= self.width || iy >= self.height {
            None
        } else {
            Some((ix, iy))
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 - (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Out-of-grid counts as not drivable.
    pub fn is_drivable(&self, x: f64, y: f64) -> bool {
        self.world_to_cell(x, y)
            .map(|(ix, iy)| self.cell(ix, iy) == Cell::Drivable)
            .unwrap_or(false)
    }

    pub fn drivable_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |iy| {
            (0..self.width)
                .filter(move |&ix| self.cell(ix, iy) == Cell::Drivable)
                .map(move |ix| (ix, iy))
        })
    }

    pub fn drivable_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Drivable).count()
    }

    pub fn require_drivable(&self) -> Result<()> {
        if self.drivable_count() == 0 {
            Err(Error::NoDrivableCells)
        } else {
            Ok(())
        }
    }

    pub fn require_pose_drivable(&self, x: f64, y: f64) -> Result<()> {
        if self.is_drivable(x, y) {
            Ok(())
        } else {
            Err(Error::PoseNotDrivable { x, y })
        }
    }

    /// World extent as (min_x, min_y, max_x, max_y).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1 - self.height as f64 * self.resolution,
            self.origin.0 + self.width as f64 * self.resolution,
            self.origin.1,
        )
    }

    // ---- PGM I/O ------------------------------------------------------------

    /// Load a P2 (ASCII) or P5 (binary) PGM. Gray values >= threshold become
    /// drivable, everything else occupied. Pixel (0,0) maps to cell (0,0).
    pub fn from_pgm(
        path: &Path,
        resolution: f64,
        origin: (f64, f64),
        drivable_threshold: u16,
    ) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let (width, height, pixels) = parse_pgm(&bytes)?;
        let cells = pixels
            .iter()
            .map(|&v| {
                if v >= drivable_threshold {
                    Cell::Drivable
                } else {
                    Cell::Occupied
                }
            })
            .collect();
        let grid = Self::new(width, height, resolution, origin, cells)?;
        grid.require_drivable()?;
        Ok(grid)
    }

    /// Write the grid as a binary P5 PGM (drivable = 255, else 0).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.cells.iter().map(|c| match c {
            Cell::Drivable => 255u8,
            _ => 0u8,
        }));
        fs::write(path, out)?;
        Ok(())
    }

    /// Companion metadata: resolution/origin/threshold as `key=value` lines.
    pub fn write_metadata(&self, path: &Path, drivable_threshold: u16) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "resolution={}", self.resolution).unwrap();
        writeln!(s, "origin_x={}", self.origin.0).unwrap();
        writeln!(s, "origin_y={}", self.origin.1).unwrap();
        writeln!(s, "drivable_threshold={drivable_threshold}").unwrap();
        fs::write(path, s)?;
        Ok(())
    }
}

/// Map metadata stored next to a PGM file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMetadata {
    pub resolution: f64,
    pub origin: (f64, f64),
    pub drivable_threshold: u16,
}

impl MapMetadata {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let mut resolution = None;
        let mut origin_x = None;
        let mut origin_y = None;
        let mut threshold = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("metadata line {} is not key=value", lineno + 1))
            })?;
            let parse_err =
                |k: &str| Error::Config(format!("metadata value for '{k}' is not a number"));
            match key.trim() {
                "resolution" => resolution = Some(value.trim().parse::<f64>().map_err(|_| parse_err("resolution"))?),
                "origin_x" => origin_x = Some(value.trim().parse::<f64>().map_err(|_| parse_err("origin_x"))?),
                "origin_y" => origin_y = Some(value.trim().parse::<f64>().map_err(|_| parse_err("origin_y"))?),
                "drivable_threshold" => threshold = Some(value.trim().parse::<u16>().map_err(|_| parse_err("drivable_threshold"))?),
                other => return Err(Error::Config(format!("unknown metadata key '{other}'"))),
            }
        }
        Ok(Self {
            resolution: resolution.ok_or_else(|| Error::Config("metadata missing resolution".into()))?,
            origin: (
                origin_x.ok_or_else(|| Error::Config("metadata missing origin_x".into()))?,
                origin_y.ok_or_else(|| Error::Config("metadata missing origin_y".into()))?,
            ),
            drivable_threshold: threshold.ok_or_else(|| Error::Config("metadata missing drivable_threshold".into()))?,
        })
    }
}

/// Minimal Netpbm PGM parser: P2 and P5, maxval up to 65535 (two-byte P5
/// samples are big-endian per the spec). Returns pixels in image row order.
fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut pos = 0usize;

    let magic = read_token(bytes, &mut pos)
        .ok_or_else(|| Error::Pgm("missing magic number".into()))?;
    let binary = match magic.as_slice() {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(Error::Pgm(format!(
                "unsupported magic '{}'",
                String::from_utf8_lossy(other)
            )))
        }
    };

    let width = read_header_number(bytes, &mut pos, "width")?;
    let height = read_header_number(bytes, &mut pos, "height")?;
    let maxval = read_header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm("zero dimensions".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("maxval {maxval} out of range")));
    }

    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from raster data.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Pgm("missing raster separator".into()));
        }
        pos += 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        if bytes.len() < pos + need {
            return Err(Error::Pgm("truncated raster data".into()));
        }
        for i in 0..n {
            let v = if wide {
                u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]])
            } else {
                bytes[pos + i] as u16
            };
            if v as usize > maxval {
                return Err(Error::Pgm(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v);
        }
    } else {
        for _ in 0..n {
            let v = read_header_number(bytes, &mut pos, "sample")?;
            if v > maxval {
                return Err(Error::Pgm(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as u16);
        }
    }
    Ok((width, height, pixels))
}

/// Next whitespace-delimited token, skipping `#` comments.
fn read_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(bytes[start..*pos].to_vec())
}

fn read_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = read_token(bytes, pos).ok_or_else(|| Error::Pgm(format!("missing {what}")))?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::Pgm(format!("invalid {what}")))
}

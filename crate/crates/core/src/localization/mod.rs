//! CNN pose estimator: a 1D conv stack over the normalized scan, a
//! sine/cosine positional encoding of the grid-snapped previous pose, and
//! fully connected layers emitting (x, y, sin theta, cos theta).

pub mod dataset;
pub mod pretrain;

use std::f64::consts::PI;

use rand::Rng;

use crate::angle::wrap_angle;
use crate::autodiff::{NodeId, Tape};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vehicle::Pose;
use crate::world::{LidarScan, OccupancyGrid};

pub use dataset::{
    generate_dataset, load_dataset_cache, save_dataset_cache, DatasetCacheMeta, DatasetConfig,
    LocSample,
};
pub use pretrain::{mean_position_error, pretrain, PretrainConfig};

// ---- positional encoding ----------------------------------------------------

/// Grid snapping + frequency expansion settings for the previous pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEncodingConfig {
    pub grid_xy: f64,
    pub grid_theta: f64,
    pub n_freqs: usize,
    /// Per-axis magnitude that scales snapped x/y into [-1, 1]; taken from
    /// the map extent so 0 maps to 0.
    pub extent: (f64, f64),
}

impl Default for PoseEncodingConfig {
    fn default() -> Self {
        Self {
            grid_xy: 0.1,
            grid_theta: 0.1,
            n_freqs: 4,
            extent: (10.0, 10.0),
        }
    }
}

impl PoseEncodingConfig {
    /// Derive the scaling extent from a map so every drivable x/y lands in
    /// [-1, 1] after division.
    pub fn for_grid(grid: &OccupancyGrid, grid_xy: f64, grid_theta: f64, n_freqs: usize) -> Self {
        let (min_x, min_y, max_x, max_y) = grid.bounds();
        Self {
            grid_xy,
            grid_theta,
            n_freqs,
            extent: (
                min_x.abs().max(max_x.abs()).max(1e-9),
                min_y.abs().max(max_y.abs()).max(1e-9),
            ),
        }
    }

    pub fn encoding_len(&self) -> usize {
        6 * self.n_freqs
    }
}

/// Snap each pose component to its grid, scale to [-1, 1], and expand into
/// interleaved sin/cos features over frequencies 2^k (k = 0..n_freqs-1).
pub fn encode_prev_pose(prev: &Pose, cfg: &PoseEncodingConfig) -> Vec<f64> {
    let snap = |v: f64, grid: f64| (v / grid).round() * grid;
    let comps = [
        snap(prev.x, cfg.grid_xy) / cfg.extent.0,
        snap(prev.y, cfg.grid_xy) / cfg.extent.1,
        snap(prev.theta, cfg.grid_theta) / PI,
    ];
    let mut out = Vec::with_capacity(cfg.encoding_len());
    for c in comps {
        for k in 0..cfg.n_freqs {
            let arg = (1u64 << k) as f64 * PI * c;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

// ---- network architecture ----------------------------------------------------

const CONV_CHANNELS: [usize; 6] = [8, 16, 16, 32, 32, 32];
const CONV_STRIDES: [usize; 6] = [2, 2, 1, 1, 1, 1];
const KERNEL: usize = 5;
const FC_WIDTHS: [usize; 2] = [128, 64];
const N_OUTPUTS: usize = 4; // x, y, sin(theta), cos(theta)

/// Shape plan for the network: conv chain lengths and FC widths, fixed by
/// the beam count and encoding length.
#[derive(Debug, Clone, PartialEq)]
pub struct LocArch {
    pub n_beams: usize,
    /// Feature-map length after each conv layer.
    pub conv_lens: Vec<usize>,
    pub encoding_len: usize,
}

impl LocArch {
    pub fn new(n_beams: usize, encoding_len: usize) -> Result<Self> {
        let mut l = n_beams;
        let mut conv_lens = Vec::with_capacity(6);
        for (i, &stride) in CONV_STRIDES.iter().enumerate() {
            if l < KERNEL {
                return Err(Error::Config(format!(
                    "n_beams {n_beams} too small: layer {} input length {l} is below the kernel width {KERNEL} (need at least 77 beams)",
                    i + 1
                )));
            }
            l = (l - KERNEL) / stride + 1;
            conv_lens.push(l);
        }
        Ok(Self {
            n_beams,
            conv_lens,
            encoding_len,
        })
    }

    pub fn flat_len(&self) -> usize {
        CONV_CHANNELS[5] * self.conv_lens[5]
    }

    fn fc_dims(&self) -> [(usize, usize); 3] {
        let input = self.flat_len() + self.encoding_len;
        [
            (FC_WIDTHS[0], input),
            (FC_WIDTHS[1], FC_WIDTHS[0]),
            (N_OUTPUTS, FC_WIDTHS[1]),
        ]
    }
}

/// All trainable tensors of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct LocNetParams {
    /// (weight [c_out, c_in, k], bias [c_out]) per conv layer.
    pub convs: Vec<(Tensor, Tensor)>,
    /// (weight [out, in], bias [out]) per fully connected layer.
    pub fcs: Vec<(Tensor, Tensor)>,
}

impl LocNetParams {
    /// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases.
    pub fn init(arch: &LocArch, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(6);
        let mut c_in = 1;
        for &c_out in &CONV_CHANNELS {
            let fan_in = c_in * KERNEL;
            let bound = (1.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..c_out * c_in * KERNEL)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            convs.push((
                Tensor::from_parts(vec![c_out, c_in, KERNEL], w),
                Tensor::zeros(&[c_out]),
            ));
            c_in = c_out;
        }
        let mut fcs = Vec::with_capacity(3);
        for (out, input) in arch.fc_dims() {
            let bound = (1.0 / input as f64).sqrt();
            let w: Vec<f64> = (0..out * input)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            fcs.push((
                Tensor::from_parts(vec![out, input], w),
                Tensor::zeros(&[out]),
            ));
        }
        Self { convs, fcs }
    }

    /// All-zero parameters (useful as a degenerate fixture).
    pub fn zeros(arch: &LocArch) -> Self {
        let mut convs = Vec::with_capacity(6);
        let mut c_in = 1;
        for &c_out in &CONV_CHANNELS {
            convs.push((
                Tensor::zeros(&[c_out, c_in, KERNEL]),
                Tensor::zeros(&[c_out]),
            ));
            c_in = c_out;
        }
        let fcs = arch
            .fc_dims()
            .iter()
            .map(|&(out, input)| (Tensor::zeros(&[out, input]), Tensor::zeros(&[out])))
            .collect();
        Self { convs, fcs }
    }

    pub fn num_params(&self) -> usize {
        self.convs
            .iter()
            .chain(self.fcs.iter())
            .map(|(w, b)| w.numel() + b.numel())
            .sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (i, (w, b)) in self.convs.iter().enumerate() {
            ck.insert(format!("conv{}.weight", i + 1), w.clone());
            ck.insert(format!("conv{}.bias", i + 1), b.clone());
        }
        for (i, (w, b)) in self.fcs.iter().enumerate() {
            ck.insert(format!("fc{}.weight", i + 1), w.clone());
            ck.insert(format!("fc{}.bias", i + 1), b.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, arch: &LocArch) -> Result<Self> {
        let expect = Self::zeros(arch);
        let mut convs = Vec::with_capacity(6);
        for (i, (w0, b0)) in expect.convs.iter().enumerate() {
            let w = ck.require(&format!("conv{}.weight", i + 1))?;
            let b = ck.require(&format!("conv{}.bias", i + 1))?;
            check_shape(&format!("conv{}.weight", i + 1), w, w0)?;
            check_shape(&format!("conv{}.bias", i + 1), b, b0)?;
            convs.push((w.clone(), b.clone()));
        }
        let mut fcs = Vec::with_capacity(3);
        for (i, (w0, b0)) in expect.fcs.iter().enumerate() {
            let w = ck.require(&format!("fc{}.weight", i + 1))?;
            let b = ck.require(&format!("fc{}.bias", i + 1))?;
            check_shape(&format!("fc{}.weight", i + 1), w, w0)?;
            check_shape(&format!("fc{}.bias", i + 1), b, b0)?;
            fcs.push((w.clone(), b.clone()));
        }
        Ok(Self { convs, fcs })
    }
}

fn check_shape(name: &str, got: &Tensor, want: &Tensor) -> Result<()> {
    if got.shape() != want.shape() {
        return Err(Error::Checkpoint(format!(
            "entry '{name}' has shape {:?}, expected {:?}",
            got.shape(),
            want.shape()
        )));
    }
    Ok(())
}

/// Parameter leaves staged on a tape for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct StagedLocNet {
    pub convs: Vec<(NodeId, NodeId)>,
    pub fcs: Vec<(NodeId, NodeId)>,
}

impl LocNetParams {
    pub fn stage(&self, tape: &mut Tape) -> StagedLocNet {
        StagedLocNet {
            convs: self
                .convs
                .iter()
                .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
                .collect(),
            fcs: self
                .fcs
                .iter()
                .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
                .collect(),
        }
    }

    /// Gradient-descent step from the adjoints of a staged copy. Call after
    /// `tape.backward`; panics if backward has not run.
    pub fn apply_sgd(&mut self, tape: &Tape, staged: &StagedLocNet, lr: f64) {
        let step = |t: &mut Tensor, id: NodeId| {
            let g = tape.adjoint(id);
            t.map_inplace(g, |v, gv| v - lr * gv);
        };
        for ((w, b), (wid, bid)) in self.convs.iter_mut().zip(&staged.convs) {
            step(w, *wid);
            step(b, *bid);
        }
        for ((w, b), (wid, bid)) in self.fcs.iter_mut().zip(&staged.fcs) {
            step(w, *wid);
            step(b, *bid);
        }
    }
}

/// Pose estimate living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LocEstimate {
    pub x: NodeId,
    pub y: NodeId,
    pub theta: NodeId,
}

impl LocEstimate {
    pub fn read(&self, tape: &Tape) -> Pose {
        Pose::new(
            tape.scalar_value(self.x),
            tape.scalar_value(self.y),
            tape.scalar_value(self.theta),
        )
    }
}

/// Full forward pass on the tape: normalize, conv stack, flatten + encoding,
/// FC head, heading from atan2(sin, cos).
pub fn loc_forward(
    tape: &mut Tape,
    staged: &StagedLocNet,
    arch: &LocArch,
    scan: &LidarScan,
    prev: &Pose,
    enc_cfg: &PoseEncodingConfig,
) -> Result<LocEstimate> {
    if scan.n_beams() != arch.n_beams {
        return Err(Error::ShapeMismatch {
            op: "loc_forward",
            detail: format!("scan has {} beams, network expects {}", scan.n_beams(), arch.n_beams),
        });
    }
    let normalized: Vec<f64> = scan.ranges.iter().map(|r| r / scan.max_range).collect();
    let mut x = tape.leaf(Tensor::from_parts(vec![1, arch.n_beams], normalized));
    for (i, (w, b)) in staged.convs.iter().enumerate() {
        let c = tape.conv1d(x, *w, CONV_STRIDES[i])?;
        let cb = tape.add_channel_bias(c, *b)?;
        x = tape.relu(cb);
    }
    let flat = tape.reshape(x, &[arch.flat_len()])?;
    let enc = tape.leaf(Tensor::vector(encode_prev_pose(prev, enc_cfg)));
    let mut h = tape.concat(&[flat, enc])?;
    for (i, (w, b)) in staged.fcs.iter().enumerate() {
        let m = tape.matmul(*w, h)?;
        h = tape.add(m, *b)?;
        if i + 1 < staged.fcs.len() {
            h = tape.relu(h);
        }
    }
    let xo = tape.slice(h, 0, 1)?;
    let yo = tape.slice(h, 1, 1)?;
    let sin_t = tape.slice(h, 2, 1)?;
    let cos_t = tape.slice(h, 3, 1)?;
    let theta = tape.atan2(sin_t, cos_t)?;
    Ok(LocEstimate {
        x: xo,
        y: yo,
        theta,
    })
}

// ---- supervised loss ----------------------------------------------------------

/// Mean squared pose error with the heading difference wrapped to (-pi, pi]
/// before squaring. Ground truth enters as constants.
pub fn localization_loss(tape: &mut Tape, est: &LocEstimate, gt: &Pose) -> Result<NodeId> {
    let gx = tape.scalar(gt.x);
    let gy = tape.scalar(gt.y);
    let gt_t = tape.scalar(gt.theta);
    let dx = tape.sub(est.x, gx)?;
    let dy = tape.sub(est.y, gy)?;
    let dt_raw = tape.sub(est.theta, gt_t)?;
    let dt = tape.wrap_angle(dt_raw);
    let sx = tape.square(dx);
    let sy = tape.square(dy);
    let st = tape.square(dt);
    let s1 = tape.add(sx, sy)?;
    let s2 = tape.add(s1, st)?;
    let third = tape.scalar(1.0 / 3.0);
    tape.mul(third, s2)
}

/// Plain-value version of [`localization_loss`] for reporting.
pub fn localization_loss_value(est: &Pose, gt: &Pose) -> f64 {
    let dt = wrap_angle(est.theta - gt.theta);
    ((est.x - gt.x).powi(2) + (est.y - gt.y).powi(2) + dt * dt) / 3.0
}

//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] is a Wengert list: every operation appends a [`DiffNode`]
//! holding the forward value, so nodes are topologically ordered by
//! construction. [`Tape::backward`] walks the list in reverse and
//! accumulates adjoints additively across fan-out.
//!
//! The op set is deliberately small and auditable. Elementwise binary ops
//! accept equal shapes or a scalar on either side (the only broadcasting
//! supported); everything wider (matmul, conv1d, concat) has a dedicated op
//! with a hand-written adjoint. Tapes are define-by-run: the driving stack
//! rebuilds one per control timestep and drops it after the update.

use crate::angle::wrap_angle;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a specific tape. Ids from different tapes must not
/// be mixed; they are plain indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Atan(NodeId),
    Atan2(NodeId, NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Abs(NodeId),
    Square(NodeId),
    WrapAngle(NodeId),
    Clamp { input: NodeId, lo: f64, hi: f64 },
    Sum(NodeId),
    Mean(NodeId),
    MatMul(NodeId, NodeId),
    Conv1d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
    },
    ChannelBias(NodeId, NodeId),
    Reshape(NodeId),
    Slice { input: NodeId, start: usize },
    Concat(Vec<NodeId>),
}

/// One recorded operation: forward value plus the adjoint filled in by the
/// most recent `backward` call.
#[derive(Debug)]
pub struct DiffNode {
    value: Tensor,
    adjoint: Option<Tensor>,
    op: Op,
}

/// Wengert tape. Nodes are appended in topological order; parents always
/// precede children.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
}

/// How the two operands of an elementwise op line up.
enum Broadcast {
    Equal,
    ScalarLhs,
    ScalarRhs,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() || (a.is_scalar() && b.is_scalar()) {
        // Two single-element tensors of different rank ([] vs [1]) still
        // combine elementwise; the output keeps the left shape.
        Ok(Broadcast::Equal)
    } else if a.is_scalar() {
        Ok(Broadcast::ScalarLhs)
    } else if b.is_scalar() {
        Ok(Broadcast::ScalarRhs)
    } else {
        Err(Error::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(DiffNode {
            value,
            adjoint: None,
            op,
        });
        id
    }

    /// Record an input node (constant or parameter; the tape does not
    /// distinguish — callers read adjoints for the ids they care about).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    /// Adjoint filled by the most recent `backward`. Panics if backward has
    /// not run on this tape.
    pub fn adjoint(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .adjoint
            .as_ref()
            .expect("adjoint read before backward()")
    }

    // ---- elementwise binary ops -------------------------------------------

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let kind = broadcast_kind(op_name, va, vb)?;
        let (shape, data) = match kind {
            Broadcast::Equal => (
                va.shape().to_vec(),
                va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::ScalarLhs => {
                let s = va.item();
                (vb.shape().to_vec(), vb.iter().map(|&y| f(s, y)).collect())
            }
            Broadcast::ScalarRhs => {
                let s = vb.item();
                (va.shape().to_vec(), va.iter().map(|&x| f(x, s)).collect())
            }
        };
        Ok(self.push(Tensor::from_parts(shape, data), op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// atan2(y, x) elementwise, with the convention atan2(0, 0) = 0 and zero
    /// gradient there (guards the heading head of a zero network).
    pub fn atan2(&mut self, y: NodeId, x: NodeId) -> Result<NodeId> {
        self.elementwise("atan2", y, x, f64::atan2, Op::Atan2(y, x))
    }

    // ---- elementwise unary ops --------------------------------------------

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = &self.nodes[a.0].value;
        let out = Tensor::from_parts(va.shape().to_vec(), va.iter().map(|&x| f(x)).collect());
        self.push(out, op)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    /// relu(0) = 0 with gradient 0 at the kink.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn atan(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::atan, Op::Atan(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    /// abs with subgradient 0 at 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Wrap each element to (-pi, pi]. Gradient is 1 almost everywhere (the
    /// 2*pi offset is piecewise constant).
    pub fn wrap_angle(&mut self, a: NodeId) -> NodeId {
        self.unary(a, wrap_angle, Op::WrapAngle(a))
    }

    /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { input: a, lo, hi })
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let n = v.numel().max(1) as f64;
        let s: f64 = v.iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m,n] x [n] -> [m]` or `[m,n] x [n,p] -> [m,p]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mismatch = |detail: String| Error::ShapeMismatch {
            op: "matmul",
            detail,
        };
        match (va.shape(), vb.shape()) {
            (&[m, n], &[nb]) => {
                if n != nb {
                    return Err(mismatch(format!("[{m},{n}] x [{nb}]")));
                }
                let (da, db) = (va.data(), vb.data());
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let row = &da[i * n..(i + 1) * n];
                    out[i] = row.iter().zip(db).map(|(&w, &x)| w * x).sum();
                }
                Ok(self.push(Tensor::from_parts(vec![m], out), Op::MatMul(a, b)))
            }
            (&[m, n], &[nb, p]) => {
                if n != nb {
                    return Err(mismatch(format!("[{m},{n}] x [{nb},{p}]")));
                }
                let (da, db) = (va.data(), vb.data());
                let mut out = vec![0.0; m * p];
                for i in 0..m {
                    for k in 0..n {
                        let aik = da[i * n + k];
                        for j in 0..p {
                            out[i * p + j] += aik * db[k * p + j];
                        }
                    }
                }
                Ok(self.push(Tensor::from_parts(vec![m, p], out), Op::MatMul(a, b)))
            }
            (sa, sb) => Err(mismatch(format!("{sa:?} x {sb:?}"))),
        }
    }

    /// Valid (no padding) cross-correlation.
    /// input `[c_in, l]`, kernels `[c_out, c_in, k]`, output `[c_out, l_out]`
    /// with `l_out = (l - k) / stride + 1`.
    pub fn conv1d(&mut self, input: NodeId, kernels: NodeId, stride: usize) -> Result<NodeId> {
        let (vx, vw) = (&self.nodes[input.0].value, &self.nodes[kernels.0].value);
        let mismatch = |detail: String| Error::ShapeMismatch {
            op: "conv1d",
            detail,
        };
        let (&[c_in, l], &[c_out, c_in_w, k]) = match (vx.shape(), vw.shape()) {
            (a @ &[_, _], b @ &[_, _, _]) => (
                <&[usize; 2]>::try_from(a).unwrap(),
                <&[usize; 3]>::try_from(b).unwrap(),
            ),
            (sa, sb) => return Err(mismatch(format!("input {sa:?}, kernels {sb:?}"))),
        };
        if c_in != c_in_w {
            return Err(mismatch(format!(
                "input channels {c_in} != kernel channels {c_in_w}"
            )));
        }
        if stride == 0 {
            return Err(mismatch("stride must be positive".into()));
        }
        if k > l {
            return Err(mismatch(format!("kernel width {k} exceeds input length {l}")));
        }
        let l_out = (l - k) / stride + 1;
        let (x, w) = (vx.data(), vw.data());
        let mut out = vec![0.0; c_out * l_out];
        for co in 0..c_out {
            for ci in 0..c_in {
                let ker = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                let xin = &x[ci * l..(ci + 1) * l];
                for o in 0..l_out {
                    let base = o * stride;
                    let mut acc = 0.0;
                    for (j, &kw) in ker.iter().enumerate() {
                        acc += kw * xin[base + j];
                    }
                    out[co * l_out + o] += acc;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![c_out, l_out], out),
            Op::Conv1d {
                input,
                kernels,
                stride,
            },
        ))
    }

    /// Add a per-channel bias `[c]` to a `[c, l]` feature map.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let (&[c, l], &[cb]) = match (vx.shape(), vb.shape()) {
            (a @ &[_, _], b @ &[_]) => (
                <&[usize; 2]>::try_from(a).unwrap(),
                <&[usize; 1]>::try_from(b).unwrap(),
            ),
            (sa, sb) => {
                return Err(Error::ShapeMismatch {
                    op: "add_channel_bias",
                    detail: format!("x {sa:?}, bias {sb:?}"),
                })
            }
        };
        if c != cb {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                detail: format!("{c} channels vs {cb} biases"),
            });
        }
        let mut out = vx.data().to_vec();
        for ch in 0..c {
            let b = vb.data()[ch];
            for v in &mut out[ch * l..(ch + 1) * l] {
                *v += b;
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![c, l], out),
            Op::ChannelBias(x, bias),
        ))
    }

    // ---- shape ops ---------------------------------------------------------

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != va.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", va.shape(), shape),
            });
        }
        let out = Tensor::from_parts(shape.to_vec(), va.data().to_vec());
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Contiguous slice of a rank-1 tensor.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.shape().len() != 1 || start + len > va.numel() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("[{start}..{}] of {:?}", start + len, va.shape()),
            });
        }
        let out = Tensor::from_parts(vec![len], va.data()[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { input: a, start }))
    }

    /// Concatenate rank-1 tensors (single-element scalars count as length 1).
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.shape().len() > 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("rank-1 required, got {:?}", v.shape()),
                });
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_parts(vec![data.len()], data);
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar root. Fills every node's adjoint with
    /// d(root)/d(node); fan-out accumulates additively. Values are untouched,
    /// so the tape can be swept again from a different root.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[root.0][0] = 1.0;

        for i in (0..=root.0).rev() {
            // Move this node's gradient out so we can mutate parents' grads.
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|&v| v == 0.0) {
                grads[i] = g;
                continue;
            }
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = g;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.adjoint = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
        }
        Ok(())
    }

    fn accumulate_parents(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        // Adds g-weighted local derivatives into each parent's gradient.
        // `scatter` handles the scalar-broadcast reduction: when the parent
        // is a broadcast scalar, every element contribution sums into it.
        fn scatter(grads: &mut [Vec<f64>], parent: NodeId, idx: usize, v: f64) {
            let pg = &mut grads[parent.0];
            if pg.len() == 1 {
                pg[0] += v;
            } else {
                pg[idx] += v;
            }
        }
        let at = |id: NodeId, idx: usize, this: &Tape| -> f64 {
            let d = this.nodes[id.0].value.data();
            if d.len() == 1 {
                d[0]
            } else {
                d[idx]
            }
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (idx, &gi) in g.iter().enumerate() {
                    scatter(grads, *a, idx, gi);
                    scatter(grads, *b, idx, gi);
                }
            }
            Op::Sub(a, b) => {
                for (idx, &gi) in g.iter().enumerate() {
                    scatter(grads, *a, idx, gi);
                    scatter(grads, *b, idx, -gi);
                }
            }
            Op::Mul(a, b) => {
                for (idx, &gi) in g.iter().enumerate() {
                    scatter(grads, *a, idx, gi * at(*b, idx, self));
                    scatter(grads, *b, idx, gi * at(*a, idx, self));
                }
            }
            Op::Div(a, b) => {
                for (idx, &gi) in g.iter().enumerate() {
                    let (x, y) = (at(*a, idx, self), at(*b, idx, self));
                    scatter(grads, *a, idx, gi / y);
                    scatter(grads, *b, idx, -gi * x / (y * y));
                }
            }
            Op::Atan2(yid, xid) => {
                for (idx, &gi) in g.iter().enumerate() {
                    let (y, x) = (at(*yid, idx, self), at(*xid, idx, self));
                    let d = x * x + y * y;
                    if d > 0.0 {
                        scatter(grads, *yid, idx, gi * x / d);
                        scatter(grads, *xid, idx, -gi * y / d);
                    }
                    // atan2(0,0) guard: forward is 0, gradient defined as 0
                }
            }
            Op::Neg(a) => {
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] -= gi;
                }
            }
            Op::Relu(a) => {
                let va = self.nodes[a.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    if va[idx] > 0.0 {
                        grads[a.0][idx] += gi;
                    }
                }
            }
            Op::Tanh(a) => {
                let out = self.nodes[i].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] += gi * (1.0 - out[idx] * out[idx]);
                }
            }
            Op::Atan(a) => {
                let va = self.nodes[a.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] += gi / (1.0 + va[idx] * va[idx]);
                }
            }
            Op::Sin(a) => {
                let va = self.nodes[a.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] += gi * va[idx].cos();
                }
            }
            Op::Cos(a) => {
                let va = self.nodes[a.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] -= gi * va[idx].sin();
                }
            }
            Op::Abs(a) => {
                let va = self.nodes[a.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    // subgradient 0 at exactly 0
                    grads[a.0][idx] += gi * if va[idx] > 0.0 {
                        1.0
                    } else if va[idx] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Op::Square(a) => {
                let va = self.nodes[a.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] += 2.0 * va[idx] * gi;
                }
            }
            Op::WrapAngle(a) => {
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] += gi;
                }
            }
            Op::Clamp { input, lo, hi } => {
                let va = self.nodes[input.0].value.data();
                for (idx, &gi) in g.iter().enumerate() {
                    if va[idx] > *lo && va[idx] < *hi {
                        grads[input.0][idx] += gi;
                    }
                }
            }
            Op::Sum(a) => {
                let gi = g[0];
                for v in grads[a.0].iter_mut() {
                    *v += gi;
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel().max(1) as f64;
                let gi = g[0] / n;
                for v in grads[a.0].iter_mut() {
                    *v += gi;
                }
            }
            Op::MatMul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                match (va.shape(), vb.shape()) {
                    (&[m, n], &[_]) => {
                        let (da, db) = (va.data(), vb.data());
                        for i2 in 0..m {
                            let gi = g[i2];
                            for j in 0..n {
                                grads[a.0][i2 * n + j] += gi * db[j];
                                grads[b.0][j] += gi * da[i2 * n + j];
                            }
                        }
                    }
                    (&[m, n], &[_, p]) => {
                        let (da, db) = (va.data(), vb.data());
                        for i2 in 0..m {
                            for j in 0..p {
                                let gi = g[i2 * p + j];
                                for k in 0..n {
                                    grads[a.0][i2 * n + k] += gi * db[k * p + j];
                                    grads[b.0][k * p + j] += gi * da[i2 * n + k];
                                }
                            }
                        }
                    }
                    _ => unreachable!("matmul shapes validated at record time"),
                }
            }
            Op::Conv1d {
                input,
                kernels,
                stride,
            } => {
                let vx = &self.nodes[input.0].value;
                let vw = &self.nodes[kernels.0].value;
                let (c_in, l) = (vx.shape()[0], vx.shape()[1]);
                let (c_out, k) = (vw.shape()[0], vw.shape()[2]);
                let l_out = (l - k) / stride + 1;
                let (x, w) = (vx.data(), vw.data());
                for co in 0..c_out {
                    for ci in 0..c_in {
                        let kbase = (co * c_in + ci) * k;
                        for o in 0..l_out {
                            let gi = g[co * l_out + o];
                            if gi == 0.0 {
                                continue;
                            }
                            let base = o * stride;
                            for j in 0..k {
                                grads[input.0][ci * l + base + j] += gi * w[kbase + j];
                                grads[kernels.0][kbase + j] += gi * x[ci * l + base + j];
                            }
                        }
                    }
                }
            }
            Op::ChannelBias(x, bias) => {
                let (c, l) = {
                    let s = self.nodes[x.0].value.shape();
                    (s[0], s[1])
                };
                for ch in 0..c {
                    for j in 0..l {
                        let gi = g[ch * l + j];
                        grads[x.0][ch * l + j] += gi;
                        grads[bias.0][ch] += gi;
                    }
                }
            }
            Op::Reshape(a) => {
                for (idx, &gi) in g.iter().enumerate() {
                    grads[a.0][idx] += gi;
                }
            }
            Op::Slice { input, start } => {
                for (idx, &gi) in g.iter().enumerate() {
                    grads[input.0][start + idx] += gi;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    for idx in 0..n {
                        grads[p.0][idx] += g[offset + idx];
                    }
                    offset += n;
                }
            }
        }
    }
}

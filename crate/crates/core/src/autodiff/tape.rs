//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Values are stored per node; a backward sweep walks nodes in reverse
//! creation order, which is a topological order by construction, and visits
//! each node exactly once. Gradients accumulate in f64.

use crate::autodiff::linalg::gemm;
use crate::error::{Error, Result};

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    AddBias(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Softplus(usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    LayerNormRows(usize),
    Conv3d { x: usize, w: usize, b: usize },
    AvgPool3d(usize),
    Upsample3d(usize),
    ConcatFirst(usize, usize),
    ConcatCols(usize, usize),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    L1(usize, usize),
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records primitive ops and their backward rules.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
    flops: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false, flops: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate count of every op recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn shape(&self, t: TensorRef) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn values(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].values
    }

    pub fn value_scalar(&self, t: TensorRef) -> f64 {
        self.nodes[t.0].values[0]
    }

    pub fn grad(&self, t: TensorRef) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<TensorRef> {
        let count: usize = shape.iter().product();
        if values.len() != count {
            return Err(Error::shape(
                "leaf",
                format!("{} values for shape {shape:?}", values.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), values, requires_grad, Op::Leaf))
    }

    pub fn scalar(&mut self, v: f64) -> TensorRef {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorRef {
        self.nodes.push(Node { shape, values, grad: None, requires_grad, op });
        TensorRef(self.nodes.len() - 1)
    }

    fn requires(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    fn same_shape(&self, op: &str, a: TensorRef, b: TensorRef) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        Ok(())
    }

    // ----- elementwise binary -----

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape("add", a, b)?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape("sub", a, b)?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape("mul", a, b)?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Mul(a.0, b.0)))
    }

    pub fn div(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape("div", a, b)?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x / y)
            .collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Div(a.0, b.0)))
    }

    pub fn scale(&mut self, a: TensorRef, c: f64) -> Result<TensorRef> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x * c).collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Scale(a.0, c)))
    }

    pub fn add_const(&mut self, a: TensorRef, c: f64) -> Result<TensorRef> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x + c).collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::AddConst(a.0)))
    }

    /// Row-broadcast bias add: [n, m] + [m].
    pub fn add_bias(&mut self, a: TensorRef, bias: TensorRef) -> Result<TensorRef> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[bias.0].shape);
        if ash.len() != 2 || bsh.len() != 1 || ash[1] != bsh[0] {
            return Err(Error::shape("add_bias", format!("{ash:?} + {bsh:?}")));
        }
        let m = ash[1];
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .enumerate()
            .map(|(i, x)| x + self.nodes[bias.0].values[i % m])
            .collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0) || self.requires(bias.0);
        Ok(self.push(ash.clone(), values, rg, Op::AddBias(a.0, bias.0)))
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::shape("matmul", format!("{ash:?} x {bsh:?}")));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut values = vec![0.0; m * n];
        gemm(m, n, k, &self.nodes[a.0].values, false, &self.nodes[b.0].values, false, 0.0, &mut values);
        self.flops += 2 * (m * n * k) as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(vec![m, n], values, rg, Op::Matmul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: TensorRef) -> Result<TensorRef> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 {
            return Err(Error::shape("transpose", format!("{ash:?}")));
        }
        let (n, m) = (ash[0], ash[1]);
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                values[j * n + i] = src[i * m + j];
            }
        }
        let rg = self.requires(a.0);
        Ok(self.push(vec![m, n], values, rg, Op::Transpose(a.0)))
    }

    // ----- activations -----

    pub fn relu(&mut self, a: TensorRef) -> Result<TensorRef> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.max(0.0)).collect();
        self.flops += values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Relu(a.0)))
    }

    pub fn softplus(&mut self, a: TensorRef) -> Result<TensorRef> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| softplus(x)).collect();
        self.flops += 4 * values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Softplus(a.0)))
    }

    pub fn tanh(&mut self, a: TensorRef) -> Result<TensorRef> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.tanh()).collect();
        self.flops += 4 * values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Tanh(a.0)))
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> Result<TensorRef> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| sigmoid(x)).collect();
        self.flops += 4 * values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Sigmoid(a.0)))
    }

    /// Row-wise softmax over the last axis of a [n, m] tensor.
    pub fn softmax_rows(&mut self, a: TensorRef) -> Result<TensorRef> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 {
            return Err(Error::shape("softmax_rows", format!("{ash:?}")));
        }
        let (n, m) = (ash[0], ash[1]);
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; n * m];
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (o, &x) in values[r * m..(r + 1) * m].iter_mut().zip(row) {
                *o = (x - max).exp();
                denom += *o;
            }
            for o in &mut values[r * m..(r + 1) * m] {
                *o /= denom;
            }
        }
        self.flops += 5 * (n * m) as u64;
        let rg = self.requires(a.0);
        Ok(self.push(vec![n, m], values, rg, Op::SoftmaxRows(a.0)))
    }

    /// Row-wise normalization to zero mean, unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: TensorRef) -> Result<TensorRef> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 {
            return Err(Error::shape("layer_norm_rows", format!("{ash:?}")));
        }
        let (n, m) = (ash[0], ash[1]);
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; n * m];
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (o, &x) in values[r * m..(r + 1) * m].iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
        }
        self.flops += 6 * (n * m) as u64;
        let rg = self.requires(a.0);
        Ok(self.push(vec![n, m], values, rg, Op::LayerNormRows(a.0)))
    }

    // ----- convolution and resampling (rank-4 tensors [C, D, H, W]) -----

    /// 3D convolution, stride 1, zero 'same' padding. x: [C, D, H, W],
    /// w: [O, C, k, k, k] with odd k, bias: [O]. Output [O, D, H, W].
    pub fn conv3d(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (xsh, wsh, bsh) = (
            self.nodes[x.0].shape.clone(),
            self.nodes[w.0].shape.clone(),
            self.nodes[b.0].shape.clone(),
        );
        if xsh.len() != 4 || wsh.len() != 5 || bsh.len() != 1 {
            return Err(Error::shape(
                "conv3d",
                format!("x {xsh:?}, w {wsh:?}, b {bsh:?}"),
            ));
        }
        let (c_in, d, h, wd) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let (c_out, kc, k) = (wsh[0], wsh[1], wsh[2]);
        if kc != c_in || wsh[3] != k || wsh[4] != k || k % 2 == 0 || bsh[0] != c_out {
            return Err(Error::shape(
                "conv3d",
                format!("x {xsh:?}, w {wsh:?}, b {bsh:?}"),
            ));
        }
        let values = conv3d_forward(
            &self.nodes[x.0].values,
            &self.nodes[w.0].values,
            &self.nodes[b.0].values,
            c_in,
            c_out,
            d,
            h,
            wd,
            k,
        );
        self.flops += 2 * (c_out * c_in * k * k * k * d * h * wd) as u64;
        let rg = self.requires(x.0) || self.requires(w.0) || self.requires(b.0);
        Ok(self.push(vec![c_out, d, h, wd], values, rg, Op::Conv3d { x: x.0, w: w.0, b: b.0 }))
    }

    /// 2x average pooling over the three spatial axes of [C, D, H, W].
    pub fn avg_pool3d(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xsh = self.nodes[x.0].shape.clone();
        if xsh.len() != 4 || xsh[1] % 2 != 0 || xsh[2] % 2 != 0 || xsh[3] % 2 != 0 {
            return Err(Error::shape("avg_pool3d", format!("{xsh:?}")));
        }
        let (c, d, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let (od, oh, ow) = (d / 2, h / 2, w / 2);
        let src = &self.nodes[x.0].values;
        let mut values = vec![0.0; c * od * oh * ow];
        for ch in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    acc += src[vox_index(ch, 2 * z + dz, 2 * y + dy, 2 * xx + dx, d, h, w)];
                                }
                            }
                        }
                        values[vox_index(ch, z, y, xx, od, oh, ow)] = acc / 8.0;
                    }
                }
            }
        }
        self.flops += (c * d * h * w) as u64;
        let rg = self.requires(x.0);
        Ok(self.push(vec![c, od, oh, ow], values, rg, Op::AvgPool3d(x.0)))
    }

    /// 2x nearest-neighbor upsampling of [C, D, H, W].
    pub fn upsample3d(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xsh = self.nodes[x.0].shape.clone();
        if xsh.len() != 4 {
            return Err(Error::shape("upsample3d", format!("{xsh:?}")));
        }
        let (c, d, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
        let (od, oh, ow) = (d * 2, h * 2, w * 2);
        let src = &self.nodes[x.0].values;
        let mut values = vec![0.0; c * od * oh * ow];
        for ch in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        values[vox_index(ch, z, y, xx, od, oh, ow)] =
                            src[vox_index(ch, z / 2, y / 2, xx / 2, d, h, w)];
                    }
                }
            }
        }
        let rg = self.requires(x.0);
        Ok(self.push(vec![c, od, oh, ow], values, rg, Op::Upsample3d(x.0)))
    }

    // ----- shape plumbing -----

    /// Concatenation along the first axis; trailing dims must match.
    pub fn concat_first(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != bsh.len() || ash.is_empty() || ash[1..] != bsh[1..] {
            return Err(Error::shape("concat_first", format!("{ash:?} ++ {bsh:?}")));
        }
        let mut shape = ash.clone();
        shape[0] += bsh[0];
        let mut values = self.nodes[a.0].values.clone();
        values.extend_from_slice(&self.nodes[b.0].values);
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(shape, values, rg, Op::ConcatFirst(a.0, b.0)))
    }

    /// Column concatenation of two [n, _] matrices.
    pub fn concat_cols(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[0] != bsh[0] {
            return Err(Error::shape("concat_cols", format!("{ash:?} ++ {bsh:?}")));
        }
        let (n, ma, mb) = (ash[0], ash[1], bsh[1]);
        let mut values = Vec::with_capacity(n * (ma + mb));
        for r in 0..n {
            values.extend_from_slice(&self.nodes[a.0].values[r * ma..(r + 1) * ma]);
            values.extend_from_slice(&self.nodes[b.0].values[r * mb..(r + 1) * mb]);
        }
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(vec![n, ma + mb], values, rg, Op::ConcatCols(a.0, b.0)))
    }

    /// Contiguous column slice [start, end) of a [n, m] matrix.
    pub fn slice_cols(&mut self, a: TensorRef, start: usize, end: usize) -> Result<TensorRef> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 || start >= end || end > ash[1] {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {end}) of {ash:?}"),
            ));
        }
        let (n, m) = (ash[0], ash[1]);
        let width = end - start;
        let mut values = Vec::with_capacity(n * width);
        for r in 0..n {
            values.extend_from_slice(&self.nodes[a.0].values[r * m + start..r * m + end]);
        }
        let rg = self.requires(a.0);
        Ok(self.push(vec![n, width], values, rg, Op::SliceCols { x: a.0, start }))
    }

    /// Contiguous row slice [start, end) of a [n, m] matrix.
    pub fn slice_rows(&mut self, a: TensorRef, start: usize, end: usize) -> Result<TensorRef> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 || start >= end || end > ash[0] {
            return Err(Error::shape(
                "slice_rows",
                format!("[{start}, {end}) of {ash:?}"),
            ));
        }
        let m = ash[1];
        let values = self.nodes[a.0].values[start * m..end * m].to_vec();
        let rg = self.requires(a.0);
        Ok(self.push(vec![end - start, m], values, rg, Op::SliceRows { x: a.0, start }))
    }

    /// Row gather by index; rows may repeat.
    pub fn gather_rows(&mut self, a: TensorRef, idx: &[usize]) -> Result<TensorRef> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 {
            return Err(Error::shape("gather_rows", format!("{ash:?}")));
        }
        let (n, m) = (ash[0], ash[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("index {bad} >= {n} rows")));
        }
        let mut values = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            values.extend_from_slice(&self.nodes[a.0].values[i * m..(i + 1) * m]);
        }
        let rg = self.requires(a.0);
        Ok(self.push(vec![idx.len(), m], values, rg, Op::GatherRows { x: a.0, idx: idx.to_vec() }))
    }

    // ----- reductions and losses -----

    pub fn sum(&mut self, a: TensorRef) -> Result<TensorRef> {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        self.flops += self.nodes[a.0].values.len() as u64;
        let rg = self.requires(a.0);
        Ok(self.push(vec![1], vec![total], rg, Op::Sum(a.0)))
    }

    pub fn mean(&mut self, a: TensorRef) -> Result<TensorRef> {
        let n = self.nodes[a.0].values.len();
        let total: f64 = self.nodes[a.0].values.iter().sum();
        self.flops += n as u64;
        let rg = self.requires(a.0);
        Ok(self.push(vec![1], vec![total / n as f64], rg, Op::Mean(a.0)))
    }

    /// Mean squared error between same-shape tensors.
    pub fn mse(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape("mse", a, b)?;
        let n = self.nodes[a.0].values.len();
        let total: f64 = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.flops += 3 * n as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(vec![1], vec![total / n as f64], rg, Op::Mse(a.0, b.0)))
    }

    /// Mean absolute error between same-shape tensors.
    pub fn l1(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape("l1", a, b)?;
        let n = self.nodes[a.0].values.len();
        let total: f64 = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| (x - y).abs())
            .sum();
        self.flops += 2 * n as u64;
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(vec![1], vec![total / n as f64], rg, Op::L1(a.0, b.0)))
    }

    // ----- backward -----

    /// Populates gradients of `loss` with respect to every requires-grad
    /// node. `loss` must be scalar. Calling twice without [`Tape::reset_grads`]
    /// is an error.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        self.backward_done = true;

        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = Some(vec![0.0; node.values.len()]);
            }
        }
        if self.nodes[loss.0].grad.is_none() {
            self.nodes[loss.0].grad = Some(vec![0.0; 1]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let gout = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            self.accumulate(i, &op, &gout);
        }
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn add_grad(&mut self, target: usize, contribution: &[f64]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let len = self.nodes[target].values.len();
        let grad = self.nodes[target].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn accumulate(&mut self, out: usize, op: &Op, gout: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(a, gout);
                self.add_grad(b, gout);
            }
            Op::Sub(a, b) => {
                self.add_grad(a, gout);
                let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                self.add_grad(b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> =
                    gout.iter().zip(&self.nodes[b].values).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> =
                    gout.iter().zip(&self.nodes[a].values).map(|(g, x)| g * x).collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::Div(a, b) => {
                let ga: Vec<f64> =
                    gout.iter().zip(&self.nodes[b].values).map(|(g, y)| g / y).collect();
                let gb: Vec<f64> = gout
                    .iter()
                    .zip(self.nodes[a].values.iter().zip(&self.nodes[b].values))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = gout.iter().map(|g| g * c).collect();
                self.add_grad(a, &ga);
            }
            Op::AddConst(a) => self.add_grad(a, gout),
            Op::AddBias(a, b) => {
                self.add_grad(a, gout);
                let m = self.nodes[b].values.len();
                let mut gb = vec![0.0; m];
                for (i, g) in gout.iter().enumerate() {
                    gb[i % m] += g;
                }
                self.add_grad(b, &gb);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let n = self.nodes[b].shape[1];
                if self.nodes[a].requires_grad {
                    // dA = dC * B^T
                    let mut ga = vec![0.0; m * k];
                    gemm(m, k, n, gout, false, &self.nodes[b].values, true, 0.0, &mut ga);
                    self.add_grad(a, &ga);
                }
                if self.nodes[b].requires_grad {
                    // dB = A^T * dC
                    let mut gb = vec![0.0; k * n];
                    gemm(k, n, m, &self.nodes[a].values, true, gout, false, 0.0, &mut gb);
                    self.add_grad(b, &gb);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let mut ga = vec![0.0; n * m];
                for i in 0..m {
                    for j in 0..n {
                        ga[j * m + i] = gout[i * n + j];
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = gout
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Softplus(a) => {
                let ga: Vec<f64> = gout
                    .iter()
                    .zip(&self.nodes[a].values)
                    .map(|(g, &x)| g * sigmoid(x))
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = gout
                    .iter()
                    .zip(&self.nodes[out].values)
                    .map(|(g, &y)| g * (1.0 - y * y))
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = gout
                    .iter()
                    .zip(&self.nodes[out].values)
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                self.add_grad(a, &ga);
            }
            Op::SoftmaxRows(a) => {
                let (n, m) = (self.nodes[out].shape[0], self.nodes[out].shape[1]);
                let y = &self.nodes[out].values;
                let mut ga = vec![0.0; n * m];
                for r in 0..n {
                    let ys = &y[r * m..(r + 1) * m];
                    let gs = &gout[r * m..(r + 1) * m];
                    let dot: f64 = ys.iter().zip(gs).map(|(yy, gg)| yy * gg).sum();
                    for ((o, &yy), &gg) in ga[r * m..(r + 1) * m].iter_mut().zip(ys).zip(gs) {
                        *o = yy * (gg - dot);
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::LayerNormRows(a) => {
                let (n, m) = (self.nodes[out].shape[0], self.nodes[out].shape[1]);
                let x = &self.nodes[a].values;
                let y = &self.nodes[out].values;
                let mut ga = vec![0.0; n * m];
                for r in 0..n {
                    let xs = &x[r * m..(r + 1) * m];
                    let ys = &y[r * m..(r + 1) * m];
                    let gs = &gout[r * m..(r + 1) * m];
                    let mean = xs.iter().sum::<f64>() / m as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let gmean = gs.iter().sum::<f64>() / m as f64;
                    let gydot = gs.iter().zip(ys).map(|(g, yy)| g * yy).sum::<f64>() / m as f64;
                    for ((o, &gg), &yy) in ga[r * m..(r + 1) * m].iter_mut().zip(gs).zip(ys) {
                        *o = inv * (gg - gmean - yy * gydot);
                    }
                }
                self.add_grad(a, &ga);
            }
            Op::Conv3d { x, w, b } => {
                let xsh = self.nodes[x].shape.clone();
                let wsh = self.nodes[w].shape.clone();
                let (c_in, d, h, wd) = (xsh[0], xsh[1], xsh[2], xsh[3]);
                let (c_out, k) = (wsh[0], wsh[2]);
                let (gx, gw, gb) = conv3d_backward(
                    gout,
                    &self.nodes[x].values,
                    &self.nodes[w].values,
                    c_in,
                    c_out,
                    d,
                    h,
                    wd,
                    k,
                    self.nodes[x].requires_grad,
                    self.nodes[w].requires_grad,
                );
                if let Some(gx) = gx {
                    self.add_grad(x, &gx);
                }
                if let Some(gw) = gw {
                    self.add_grad(w, &gw);
                }
                self.add_grad(b, &gb);
            }
            Op::AvgPool3d(x) => {
                let xsh = self.nodes[x].shape.clone();
                let (c, d, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
                let (od, oh, ow) = (d / 2, h / 2, w / 2);
                let mut gx = vec![0.0; c * d * h * w];
                for ch in 0..c {
                    for z in 0..od {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let g = gout[vox_index(ch, z, y, xx, od, oh, ow)] / 8.0;
                                for dz in 0..2 {
                                    for dy in 0..2 {
                                        for dx in 0..2 {
                                            gx[vox_index(ch, 2 * z + dz, 2 * y + dy, 2 * xx + dx, d, h, w)] += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::Upsample3d(x) => {
                let xsh = self.nodes[x].shape.clone();
                let (c, d, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
                let (od, oh, ow) = (d * 2, h * 2, w * 2);
                let mut gx = vec![0.0; c * d * h * w];
                for ch in 0..c {
                    for z in 0..od {
                        for y in 0..oh {
                            for xx in 0..ow {
                                gx[vox_index(ch, z / 2, y / 2, xx / 2, d, h, w)] +=
                                    gout[vox_index(ch, z, y, xx, od, oh, ow)];
                            }
                        }
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::ConcatFirst(a, b) => {
                let alen = self.nodes[a].values.len();
                self.add_grad(a, &gout[..alen]);
                self.add_grad(b, &gout[alen..]);
            }
            Op::ConcatCols(a, b) => {
                let (n, ma) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let mb = self.nodes[b].shape[1];
                let mut ga = vec![0.0; n * ma];
                let mut gb = vec![0.0; n * mb];
                for r in 0..n {
                    let row = &gout[r * (ma + mb)..(r + 1) * (ma + mb)];
                    ga[r * ma..(r + 1) * ma].copy_from_slice(&row[..ma]);
                    gb[r * mb..(r + 1) * mb].copy_from_slice(&row[ma..]);
                }
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::SliceCols { x, start } => {
                let (n, m) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
                let width = self.nodes[out].shape[1];
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    gx[r * m + start..r * m + start + width]
                        .copy_from_slice(&gout[r * width..(r + 1) * width]);
                }
                self.add_grad(x, &gx);
            }
            Op::SliceRows { x, start } => {
                let m = self.nodes[x].shape[1];
                let rows = self.nodes[out].shape[0];
                let mut gx = vec![0.0; self.nodes[x].values.len()];
                gx[start * m..(start + rows) * m].copy_from_slice(gout);
                self.add_grad(x, &gx);
            }
            Op::GatherRows { x, ref idx } => {
                let m = self.nodes[x].shape[1];
                let mut gx = vec![0.0; self.nodes[x].values.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..m {
                        gx[i * m + c] += gout[r * m + c];
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::Sum(a) => {
                let ga = vec![gout[0]; self.nodes[a].values.len()];
                self.add_grad(a, &ga);
            }
            Op::Mean(a) => {
                let n = self.nodes[a].values.len();
                let ga = vec![gout[0] / n as f64; n];
                self.add_grad(a, &ga);
            }
            Op::Mse(a, b) => {
                let n = self.nodes[a].values.len() as f64;
                let scale = 2.0 * gout[0] / n;
                let diffs: Vec<f64> = self.nodes[a]
                    .values
                    .iter()
                    .zip(&self.nodes[b].values)
                    .map(|(x, y)| scale * (x - y))
                    .collect();
                self.add_grad(a, &diffs);
                let neg: Vec<f64> = diffs.iter().map(|d| -d).collect();
                self.add_grad(b, &neg);
            }
            Op::L1(a, b) => {
                let n = self.nodes[a].values.len() as f64;
                let scale = gout[0] / n;
                let signs: Vec<f64> = self.nodes[a]
                    .values
                    .iter()
                    .zip(&self.nodes[b].values)
                    .map(|(x, y)| scale * (x - y).signum())
                    .collect();
                self.add_grad(a, &signs);
                let neg: Vec<f64> = signs.iter().map(|s| -s).collect();
                self.add_grad(b, &neg);
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn vox_index(c: usize, z: usize, y: usize, x: usize, d: usize, h: usize, w: usize) -> usize {
    ((c * d + z) * h + y) * w + x
}

#[allow(clippy::too_many_arguments)]
fn conv3d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    d: usize,
    h: usize,
    wd: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c_out * d * h * wd];
    for oc in 0..c_out {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[oc];
                    for ic in 0..c_in {
                        for kz in 0..k {
                            let sz = z as isize + kz as isize - pad;
                            if sz < 0 || sz >= d as isize {
                                continue;
                            }
                            for ky in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let sx = xx as isize + kx as isize - pad;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    let xi = vox_index(ic, sz as usize, sy as usize, sx as usize, d, h, wd);
                                    let wi = (((oc * c_in + ic) * k + kz) * k + ky) * k + kx;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                    }
                    out[vox_index(oc, z, y, xx, d, h, wd)] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn conv3d_backward(
    gout: &[f64],
    x: &[f64],
    w: &[f64],
    c_in: usize,
    c_out: usize,
    d: usize,
    h: usize,
    wd: usize,
    k: usize,
    need_gx: bool,
    need_gw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let pad = (k / 2) as isize;
    let mut gx = if need_gx { Some(vec![0.0; x.len()]) } else { None };
    let mut gw = if need_gw { Some(vec![0.0; w.len()]) } else { None };
    let mut gb = vec![0.0; c_out];

    for oc in 0..c_out {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..wd {
                    let g = gout[vox_index(oc, z, y, xx, d, h, wd)];
                    if g == 0.0 {
                        continue;
                    }
                    gb[oc] += g;
                    for ic in 0..c_in {
                        for kz in 0..k {
                            let sz = z as isize + kz as isize - pad;
                            if sz < 0 || sz >= d as isize {
                                continue;
                            }
                            for ky in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let sx = xx as isize + kx as isize - pad;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    let xi = vox_index(ic, sz as usize, sy as usize, sx as usize, d, h, wd);
                                    let wi = (((oc * c_in + ic) * k + kz) * k + ky) * k + kx;
                                    if let Some(gw) = &mut gw {
                                        gw[wi] += g * x[xi];
                                    }
                                    if let Some(gx) = &mut gx {
                                        gx[xi] += g * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

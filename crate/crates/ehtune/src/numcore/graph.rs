use crate::error::{EhError, Result};

use super::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a[m,k] · b[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// a[m,k] · b[n,k]ᵀ
    MatmulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Elementwise product, same shape.
    Mul { a: NodeId, b: NodeId },
    /// x[m,n] + bias[n] broadcast over rows.
    AddRowBias { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: f32 },
    SoftmaxRows { x: NodeId },
    /// Saved per-row mean and 1/sqrt(var+eps) from the forward pass.
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, mean: Vec<f32>, inv_std: Vec<f32> },
    Gelu { x: NodeId },
    Tanh { x: NodeId },
    /// Row gather; backward scatter-adds. Doubles as embedding lookup.
    GatherRows { x: NodeId, ids: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { x: NodeId, start: usize, len: usize },
    /// Saved row softmax probabilities.
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f32> },
    Mse { pred: NodeId, target: Vec<f32> },
    Sum { x: NodeId },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
}

/// Append-only op tape recording one forward pass; rebuilt per pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LN_EPS: f32 = 1e-5;

// GELU tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
const GELU_C: f32 = 0.797_884_56; // √(2/π)
const GELU_K: f32 = 0.044715;

fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_dscalar(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// a[m,k] · b[k,n], f64 accumulation.
fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l] as f64;
            if av == 0.0 {
                continue;
            }
            let br = &b[l * n..l * n + n];
            let or = &mut out[i * n..i * n + n];
            for j in 0..n {
                or[j] += av * br[j] as f64;
            }
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// a[m,k] · b[n,k]ᵀ
fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let ar = &a[i * k..i * k + k];
        for j in 0..n {
            let br = &b[j * k..j * k + k];
            let mut acc = 0.0f64;
            for l in 0..k {
                acc += ar[l] as f64 * br[l] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    out
}

/// a[k,m]ᵀ · b[k,n]
fn mm_tn(a: &[f32], b: &[f32], k: usize, m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f64; m * n];
    for l in 0..k {
        let ar = &a[l * m..l * m + m];
        let br = &b[l * n..l * n + n];
        for i in 0..m {
            let av = ar[i] as f64;
            if av == 0.0 {
                continue;
            }
            let or = &mut out[i * n..i * n + n];
            for j in 0..n {
                or[j] += av * br[j] as f64;
            }
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { tensor, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].tensor.grad()
    }

    /// Copies a tensor onto the tape as a leaf. Inputs are never mutated.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> NodeId {
        let mut tensor = t.clone();
        tensor.set_grad(None);
        tensor.set_requires_grad(requires_grad);
        self.push(tensor, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).expect_2d("matmul lhs")?;
        let (k2, n) = self.value(b).expect_2d("matmul rhs")?;
        if k != k2 {
            return Err(EhError::Shape(format!(
                "matmul: inner dims disagree, lhs {:?} vs rhs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = mm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::Matmul { a, b }))
    }

    /// a · bᵀ with b stored [n, k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).expect_2d("matmul_nt lhs")?;
        let (n, k2) = self.value(b).expect_2d("matmul_nt rhs")?;
        if k != k2 {
            return Err(EhError::Shape(format!(
                "matmul_nt: inner dims disagree, lhs {:?} vs rhs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = mm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatmulNT { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(EhError::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(EhError::Shape(format!(
                "mul: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }))
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).expect_2d("add_row_bias input")?;
        if self.value(bias).numel() != n {
            return Err(EhError::Shape(format!(
                "add_row_bias: bias len {} vs row width {}",
                self.value(bias).numel(),
                n
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += b[j];
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRowBias { x, bias }))
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale { x, c })
    }

    /// Row softmax, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).expect_2d("softmax_rows input")?;
        let xs = self.value(x).data();
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = &xs[i * n..i * n + n];
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for j in 0..n {
                let e = ((row[j] - mx) as f64).exp();
                data[i * n + j] = e as f32;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] = (data[i * n + j] as f64 / sum) as f32;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::SoftmaxRows { x }))
    }

    /// Standardize each row over the last axis, then scale/shift by gain/bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).expect_2d("layer_norm input")?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(EhError::Shape(format!(
                "layer_norm: gain/bias len {}/{} vs width {}",
                self.value(gain).numel(),
                self.value(bias).numel(),
                n
            )));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut data = vec![0.0f32; m * n];
        let mut means = vec![0.0f32; m];
        let mut inv_stds = vec![0.0f32; m];
        for i in 0..m {
            let row = &xs[i * n..i * n + n];
            let mean = row.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS as f64).sqrt();
            means[i] = mean as f32;
            inv_stds[i] = inv as f32;
            for j in 0..n {
                let xh = ((row[j] as f64 - mean) * inv) as f32;
                data[i * n + j] = g[j] * xh + b[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![m, n], data)?,
            Op::LayerNorm { x, gain, bias, mean: means, inv_std: inv_stds },
        ))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| gelu_scalar(*v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Gelu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Tanh { x })
    }

    pub fn gather_rows(&mut self, x: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (m, n) = self.value(x).expect_2d("gather_rows input")?;
        let xs = self.value(x).data();
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(EhError::Index(format!("gather_rows: row {id} out of {m}")));
            }
            data.extend_from_slice(&xs[id * n..id * n + n]);
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), n], data)?,
            Op::GatherRows { x, ids: ids.to_vec() },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EhError::Contract("concat_rows: empty part list".into()));
        }
        let (_, n) = self.value(parts[0]).expect_2d("concat_rows part")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, n2) = self.value(p).expect_2d("concat_rows part")?;
            if n2 != n {
                return Err(EhError::Shape(format!("concat_rows: widths {n} vs {n2}")));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EhError::Contract("concat_cols: empty part list".into()));
        }
        let (m, _) = self.value(parts[0]).expect_2d("concat_cols part")?;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| self.value(p).expect_2d("concat_cols part").map(|(_, n)| n))
            .collect::<Result<_>>()?;
        for &p in parts {
            let (m2, _) = self.value(p).expect_2d("concat_cols part")?;
            if m2 != m {
                return Err(EhError::Shape(format!("concat_cols: heights {m} vs {m2}")));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0f32; m * total];
        let mut off = 0;
        for (idx, &p) in parts.iter().enumerate() {
            let n = widths[idx];
            let src = self.value(p).data();
            for i in 0..m {
                data[i * total + off..i * total + off + n]
                    .copy_from_slice(&src[i * n..i * n + n]);
            }
            off += n;
        }
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.value(x).expect_2d("slice_cols input")?;
        if start + len > n {
            return Err(EhError::Shape(format!(
                "slice_cols: [{start}, {}) out of width {n}",
                start + len
            )));
        }
        let xs = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xs[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { x, start, len }))
    }

    /// Mean over the batch of −log softmax(logits)[label].
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (b, c) = self.value(logits).expect_2d("cross_entropy logits")?;
        if labels.len() != b {
            return Err(EhError::Shape(format!(
                "cross_entropy: {} labels for batch {b}",
                labels.len()
            )));
        }
        let xs = self.value(logits).data();
        let mut probs = vec![0.0f32; b * c];
        let mut loss = 0.0f64;
        for i in 0..b {
            if labels[i] >= c {
                return Err(EhError::Index(format!(
                    "cross_entropy: label {} out of {c} classes",
                    labels[i]
                )));
            }
            let row = &xs[i * c..i * c + c];
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for j in 0..c {
                let e = ((row[j] - mx) as f64).exp();
                probs[i * c + j] = e as f32;
                sum += e;
            }
            for j in 0..c {
                probs[i * c + j] = (probs[i * c + j] as f64 / sum) as f32;
            }
            loss -= (probs[i * c + labels[i]] as f64).max(1e-30).ln();
        }
        let v = (loss / b as f64) as f32;
        Ok(self.push(
            Tensor::scalar(v),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
        ))
    }

    /// Mean squared error between pred (b×1 or flat b) and target.
    pub fn mse(&mut self, pred: NodeId, target: &[f32]) -> Result<NodeId> {
        let n = self.value(pred).numel();
        if n != target.len() {
            return Err(EhError::Shape(format!("mse: {} preds vs {} targets", n, target.len())));
        }
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| ((p - t) as f64).powi(2))
            .sum::<f64>()
            / n as f64;
        Ok(self.push(Tensor::scalar(loss as f32), Op::Mse { pred, target: target.to_vec() }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().map(|v| *v as f64).sum::<f64>();
        self.push(Tensor::scalar(s as f32), Op::Sum { x })
    }

    /// Reverse pass from a scalar loss. Populates grads on every node,
    /// visiting each exactly once in reverse topological (= insertion) order.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(EhError::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n_nodes];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n_nodes).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, g) in grads.into_iter().enumerate() {
            self.nodes[i].tensor.set_grad(g);
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) -> Result<()> {
        let acc = |grads: &mut [Option<Vec<f32>>], id: NodeId, contrib: Vec<f32>| {
            match &mut grads[id.0] {
                Some(buf) => {
                    for (b, c) in buf.iter_mut().zip(contrib) {
                        *b += c;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };
        let val = |id: NodeId| self.nodes[id.0].tensor.data();
        let dims = |id: NodeId| {
            let s = self.nodes[id.0].tensor.shape();
            (s[0], s[s.len() - 1])
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = dims(*a);
                let (_, n) = dims(*b);
                acc(grads, *a, mm_nt(g, val(*b), m, n, k));
                acc(grads, *b, mm_tn(val(*a), g, m, k, n));
            }
            Op::MatmulNT { a, b } => {
                let (m, k) = dims(*a);
                let (n, _) = dims(*b);
                acc(grads, *a, mm_nn(g, val(*b), m, n, k));
                acc(grads, *b, mm_tn(g, val(*a), m, n, k));
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::Mul { a, b } => {
                acc(grads, *a, g.iter().zip(val(*b)).map(|(gv, bv)| gv * bv).collect());
                acc(grads, *b, g.iter().zip(val(*a)).map(|(gv, av)| gv * av).collect());
            }
            Op::AddRowBias { x, bias } => {
                let (m, n) = dims(*x);
                acc(grads, *x, g.to_vec());
                let mut db = vec![0.0f64; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j] as f64;
                    }
                }
                acc(grads, *bias, db.into_iter().map(|v| v as f32).collect());
            }
            Op::Scale { x, c } => {
                acc(grads, *x, g.iter().map(|v| v * c).collect());
            }
            Op::SoftmaxRows { x } => {
                let (m, n) = dims(*x);
                let y = self.nodes[i].tensor.data();
                let mut dx = vec![0.0f32; m * n];
                for r in 0..m {
                    let yr = &y[r * n..r * n + n];
                    let gr = &g[r * n..r * n + n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| *a as f64 * *b as f64).sum();
                    for j in 0..n {
                        dx[r * n + j] = ((gr[j] as f64 - dot) * yr[j] as f64) as f32;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LayerNorm { x, gain, bias, mean, inv_std } => {
                let (m, n) = dims(*x);
                let xs = val(*x);
                let gn = val(*gain);
                let mut dx = vec![0.0f32; m * n];
                let mut dgain = vec![0.0f64; n];
                let mut dbias = vec![0.0f64; n];
                for r in 0..m {
                    let inv = inv_std[r] as f64;
                    let mu = mean[r] as f64;
                    let mut sum_dxh = 0.0f64;
                    let mut sum_dxh_xh = 0.0f64;
                    let mut xh = vec![0.0f64; n];
                    let mut dxh = vec![0.0f64; n];
                    for j in 0..n {
                        xh[j] = (xs[r * n + j] as f64 - mu) * inv;
                        let gv = g[r * n + j] as f64;
                        dgain[j] += gv * xh[j];
                        dbias[j] += gv;
                        dxh[j] = gv * gn[j] as f64;
                        sum_dxh += dxh[j];
                        sum_dxh_xh += dxh[j] * xh[j];
                    }
                    let inv_n = 1.0 / n as f64;
                    for j in 0..n {
                        dx[r * n + j] =
                            (inv * (dxh[j] - sum_dxh * inv_n - xh[j] * sum_dxh_xh * inv_n)) as f32;
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, dgain.into_iter().map(|v| v as f32).collect());
                acc(grads, *bias, dbias.into_iter().map(|v| v as f32).collect());
            }
            Op::Gelu { x } => {
                acc(
                    grads,
                    *x,
                    g.iter().zip(val(*x)).map(|(gv, xv)| gv * gelu_dscalar(*xv)).collect(),
                );
            }
            Op::Tanh { x } => {
                let y = self.nodes[i].tensor.data();
                acc(grads, *x, g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect());
            }
            Op::GatherRows { x, ids } => {
                let (_, n) = dims(*x);
                let mut dx = vec![0.0f32; self.nodes[x.0].tensor.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..n {
                        dx[id * n + j] += g[r * n + j];
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].tensor.numel();
                    acc(grads, p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::ConcatCols { parts } => {
                let (m, total) = dims(NodeId(i));
                let mut off = 0;
                for &p in parts {
                    let (_, n) = dims(p);
                    let mut dp = vec![0.0f32; m * n];
                    for r in 0..m {
                        dp[r * n..r * n + n]
                            .copy_from_slice(&g[r * total + off..r * total + off + n]);
                    }
                    acc(grads, p, dp);
                    off += n;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = dims(*x);
                let mut dx = vec![0.0f32; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len]
                        .copy_from_slice(&g[r * len..r * len + len]);
                }
                acc(grads, *x, dx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (b, c) = dims(*logits);
                let scale = g[0] / b as f32;
                let mut dl = probs.iter().map(|p| p * scale).collect::<Vec<f32>>();
                for (r, &y) in labels.iter().enumerate() {
                    dl[r * c + y] -= scale;
                }
                acc(grads, *logits, dl);
            }
            Op::Mse { pred, target } => {
                let n = target.len();
                let scale = 2.0 * g[0] / n as f32;
                acc(
                    grads,
                    *pred,
                    val(*pred).iter().zip(target).map(|(p, t)| (p - t) * scale).collect(),
                );
            }
            Op::Sum { x } => {
                acc(grads, *x, vec![g[0]; self.nodes[x.0].tensor.numel()]);
            }
        }
        Ok(())
    }
}

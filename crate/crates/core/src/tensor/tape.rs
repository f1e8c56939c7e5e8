use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{matrix_dims, Tensor};
use crate::error::{LameError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow { x: Var, v: Var, cols: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    ConcatRows(Vec<Var>),
    ConcatCols { parts: Vec<(Var, usize)>, rows: usize },
    SliceRows { x: Var, start: usize, cols: usize },
    SliceCols { x: Var, start: usize, cols_in: usize, width: usize },
    Reshape(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Embedding { table: Var, ids: Vec<usize>, dim: usize },
    Dropout { x: Var, mask: Vec<f64> },
    SoftmaxRows { x: Var, cols: usize },
    LogSoftmaxRows { x: Var, cols: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, cols: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Pick { x: Var, index: usize },
    BceWithLogits { x: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records executed operations in order so that gradients can be replayed
/// backwards. Nodes are appended only after their inputs exist, which keeps the
/// record topologically sorted.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += aip * b_pj;
            }
        }
    }
    c
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// The seed drives dropout masks only.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Whether it receives a gradient follows `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut value = tensor;
        value.grad = None;
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        matrix_dims(self.shape(v)).ok_or_else(|| LameError::Shape {
            op,
            lhs: self.shape(v).to_vec(),
            rhs: vec![],
        })
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(LameError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x);
        let data = value.data.iter().map(|&v| f(v)).collect();
        let shape = value.shape.clone();
        let rg = self.needs(x);
        self.push(shape, data, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, k2, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => return Err(LameError::Shape { op: "matmul", lhs: sa, rhs: sb }),
        };
        if k != k2 {
            return Err(LameError::Shape { op: "matmul", lhs: sa, rhs: sb });
        }
        let data = matmul_kernel(&self.value(a).data, &self.value(b).data, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], data, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b), "div")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Adds vector `v` (length = column count) to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (_, cols) = self.dims(x, "add_row")?;
        if self.value(v).numel() != cols {
            return Err(LameError::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let vd = &self.value(v).data;
        let data = self
            .value(x)
            .data
            .chunks(cols)
            .flat_map(|row| row.iter().zip(vd).map(|(a, b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x) || self.needs(v);
        Ok(self.push(shape, data, Op::AddRow { x, v, cols }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims(x, "transpose")?;
        let src = &self.value(x).data;
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = src[i * cols + j];
            }
        }
        let rg = self.needs(x);
        Ok(self.push(vec![cols, rows], data, Op::Transpose { x, rows, cols }, rg))
    }

    /// Stacks matrices (or row vectors) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LameError::contract("concat_rows of zero tensors"))?;
        let (_, cols) = self.dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p, "concat_rows")?;
            if c != cols {
                return Err(LameError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(&self.value(p).data);
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, cols], data, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LameError::contract("concat_cols of zero tensors"))?;
        let (rows, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != rows {
                return Err(LameError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push((p, c));
        }
        let total: usize = widths.iter().map(|(_, c)| c).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &(p, c) in &widths {
                data.extend_from_slice(&self.value(p).data[i * c..(i + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, total], data, Op::ConcatCols { parts: widths, rows }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x, "slice_rows")?;
        if len == 0 || start + len > rows {
            return Err(LameError::contract(format!(
                "slice_rows {start}..{} out of range for {rows} rows",
                start + len
            )));
        }
        let data = self.value(x).data[start * cols..(start + len) * cols].to_vec();
        let rg = self.needs(x);
        Ok(self.push(vec![len, cols], data, Op::SliceRows { x, start, cols }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x, "slice_cols")?;
        if width == 0 || start + width > cols {
            return Err(LameError::contract(format!(
                "slice_cols {start}..{} out of range for {cols} columns",
                start + width
            )));
        }
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(&src[i * cols + start..i * cols + start + width]);
        }
        let rg = self.needs(x);
        Ok(self.push(
            vec![rows, width],
            data,
            Op::SliceCols { x, start, cols_in: cols, width },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.value(x).numel() {
            return Err(LameError::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(x).data.clone();
        let rg = self.needs(x);
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.needs(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data.iter().sum::<f64>() / v.numel() as f64;
        let rg = self.needs(x);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    /// Gathers rows of `table` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims(table, "embedding")?;
        if ids.is_empty() {
            return Err(LameError::input("embedding lookup with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(LameError::input(format!(
                "token id {bad} out of range for embedding table with {vocab} rows"
            )));
        }
        let src = &self.value(table).data;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        let rg = self.needs(table);
        Ok(self.push(
            vec![ids.len(), dim],
            data,
            Op::Embedding { table, ids: ids.to_vec(), dim },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(LameError::config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.value(x).data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x);
        Ok(self.push(shape, data, Op::Dropout { x, mask }, rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims(x, "softmax_rows")?;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x);
        Ok(self.push(shape, data, Op::SoftmaxRows { x, cols }, rg))
    }

    /// Row-wise `x - logsumexp(x)`.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims(x, "log_softmax_rows")?;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x);
        Ok(self.push(shape, data, Op::LogSoftmaxRows { x, cols }, rg))
    }

    /// Per row: `gain * (x - mean) / sqrt(var + eps) + bias`, population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.dims(x, "layer_norm")?;
        if cols < 2 {
            return Err(LameError::contract("layer_norm needs rows of width >= 2"));
        }
        for p in [gain, bias] {
            if self.value(p).numel() != cols {
                return Err(LameError::Shape {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[i * cols + j] = h;
                out[i * cols + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm { x, gain, bias, cols, xhat, inv_std },
            rg,
        ))
    }

    /// Selects one element (flat index) as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if index >= n {
            return Err(LameError::contract(format!("pick index {index} out of range for {n} elements")));
        }
        let v = self.value(x).data[index];
        let rg = self.needs(x);
        Ok(self.push(vec![1], vec![v], Op::Pick { x, index }, rg))
    }

    /// Mean binary cross-entropy computed from logits:
    /// `max(x, 0) - x*y + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[f64]) -> Result<Var> {
        let xs = &self.value(x).data;
        if xs.len() != targets.len() {
            return Err(LameError::Shape {
                op: "bce_with_logits",
                lhs: self.shape(x).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let total: f64 = xs
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let loss = total / xs.len() as f64;
        let rg = self.needs(x);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits { x, targets: targets.to_vec() },
            rg,
        ))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate into their
    /// gradient slots; calling twice adds twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(LameError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.value.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[idx];
                if matches!(node.op, Op::Leaf) {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value.data;
        let val = |v: Var| &nodes[v.0].value.data;
        // Calls `f` with the (lazily zeroed) gradient buffer of `v`, if `v` needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0].value;
            if !n.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.data.len()]);
            f(buf);
        };

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let g_row = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let g_row = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            for (gb_pj, g_ij) in gb[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                *gb_pj += aip * g_ij;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] -= g[i] * out[i] / bv[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            }
            Op::AddRow { x, v, cols } => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*v, &mut |gv| {
                    for row in g.chunks(*cols) {
                        gv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Transpose { x, rows, cols } => {
                acc(*x, &mut |gx| {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    let slice = &g[offset..offset + len];
                    acc(p, &mut |gp| gp.iter_mut().zip(slice).for_each(|(a, b)| *a += b));
                    offset += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, c)| c).sum();
                let mut col0 = 0;
                for &(p, c) in parts {
                    acc(p, &mut |gp| {
                        for i in 0..*rows {
                            let src = &g[i * total + col0..i * total + col0 + c];
                            gp[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    });
                    col0 += c;
                }
            }
            Op::SliceRows { x, start, cols } => {
                let off = start * cols;
                acc(*x, &mut |gx| {
                    gx[off..off + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
            Op::SliceCols { x, start, cols_in, width } => {
                acc(*x, &mut |gx| {
                    for (i, row) in g.chunks(*width).enumerate() {
                        let dst = &mut gx[i * cols_in + start..i * cols_in + start + width];
                        dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * gelu_grad(xv[i]);
                    }
                });
            }
            Op::Sigmoid(x) => {
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] / xv[i];
                    }
                });
            }
            Op::Exp(x) => {
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * out[i];
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                acc(*x, &mut |gx| {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += s);
                });
            }
            Op::Embedding { table, ids, dim } => {
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * dim..(r + 1) * dim];
                        gt[id * dim..(id + 1) * dim].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                });
            }
            Op::SoftmaxRows { x, cols } => {
                acc(*x, &mut |gx| {
                    for ((gx_row, g_row), y_row) in gx.chunks_mut(*cols).zip(g.chunks(*cols)).zip(out.chunks(*cols)) {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                        for j in 0..*cols {
                            gx_row[j] += y_row[j] * (g_row[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows { x, cols } => {
                acc(*x, &mut |gx| {
                    for ((gx_row, g_row), y_row) in gx.chunks_mut(*cols).zip(g.chunks(*cols)).zip(out.chunks(*cols)) {
                        let total: f64 = g_row.iter().sum();
                        for j in 0..*cols {
                            gx_row[j] += g_row[j] - y_row[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, cols, xhat, inv_std } => {
                let cols = *cols;
                let gv = val(*gain);
                acc(*gain, &mut |gg| {
                    for (g_row, h_row) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            gg[j] += g_row[j] * h_row[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for g_row in g.chunks(cols) {
                        gb.iter_mut().zip(g_row).for_each(|(a, b)| *a += b);
                    }
                });
                acc(*x, &mut |gx| {
                    let n = cols as f64;
                    for (i, (g_row, h_row)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let dh: Vec<f64> = g_row.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h_row).map(|(a, b)| a * b).sum();
                        let scale = inv_std[i] / n;
                        for j in 0..cols {
                            gx[i * cols + j] += scale * (n * dh[j] - sum_dh - h_row[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Pick { x, index } => {
                acc(*x, &mut |gx| gx[*index] += g[0]);
            }
            Op::BceWithLogits { x, targets } => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    let n = targets.len() as f64;
                    for i in 0..targets.len() {
                        gx[i] += g[0] * (sigmoid(xv[i]) - targets[i]) / n;
                    }
                });
            }
        }
    }
}

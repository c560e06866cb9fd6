use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{gemm, matmul};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;
const QUAT_EPS: f64 = 1e-8;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Linear(usize, usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    RowNorm(usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Transpose(usize),
    SegmentMax(usize, Vec<usize>),
    SegmentMean(usize, usize),
    RepeatRows(usize, usize),
    TileRows(usize),
    GatherRows(usize, Vec<usize>),
    LayerNorm(usize, Vec<f64>),
    QuatNormalize(usize, Vec<f64>, Vec<f64>),
    QuatToRot(usize),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Tape of operations in topological order.
///
/// Every value is viewed as a `rows × cols` matrix; scalars are `1 × 1`.
/// Inputs are always recorded before their consumers, so a single reverse
/// sweep in [`Graph::backward`] visits each node once.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index)?.as_deref()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.idx(v)?])
    }

    fn push(
        &mut self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var> {
        debug_assert_eq!(value.len(), rows * cols);
        check_finite(op_name, &value)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::shape(
                "leaf",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        check_finite("leaf", &data)?;
        self.nodes.push(Node {
            rows,
            cols,
            value: data,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records a tensor as a leaf, honoring its `requires_grad` flag.
    pub fn tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.rows(), t.cols(), t.data().to_vec(), t.requires_grad)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf(rows, cols, data, false)
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<(usize, usize)> {
        let n = self.node(v)?;
        Ok((n.rows, n.cols))
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v)?;
        if n.rows * n.cols != 1 {
            return Err(Error::NonScalarLoss(vec![n.rows, n.cols]));
        }
        Ok(n.value[0])
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.requires_grad)
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor> {
        let n = self.node(v)?;
        Tensor::matrix(n.rows, n.cols, n.value.clone())
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = (self.nodes[ia].rows, self.nodes[ia].cols);
        let (k2, n) = (self.nodes[ib].rows, self.nodes[ib].cols);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul(&self.nodes[ia].value, &self.nodes[ib].value, &mut out, m, k, n);
        self.push("matmul", m, n, out, Op::MatMul(ia, ib), &[ia, ib])
    }

    /// `x · w + b` with `b` a `1 × out` row broadcast over rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (m, k) = (self.nodes[ix].rows, self.nodes[ix].cols);
        let (k2, n) = (self.nodes[iw].rows, self.nodes[iw].cols);
        let (br, bc) = (self.nodes[ib].rows, self.nodes[ib].cols);
        if k != k2 || br != 1 || bc != n {
            return Err(Error::shape(
                "linear",
                format!("x {m}x{k}, w {k2}x{n}, b {br}x{bc}"),
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        let bias = &self.nodes[ib].value;
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(
            &self.nodes[ix].value,
            false,
            &self.nodes[iw].value,
            false,
            &mut out,
            m,
            k,
            n,
            1.0,
        );
        self.push("linear", m, n, out, Op::Linear(ix, iw, ib), &[ix, iw, ib])
    }

    fn same_shape(&self, op: &'static str, ia: usize, ib: usize) -> Result<(usize, usize)> {
        let (a, b) = (&self.nodes[ia], &self.nodes[ib]);
        if a.rows != b.rows || a.cols != b.cols {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        Ok((a.rows, a.cols))
    }

    fn zip_map(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, usize, usize, Vec<f64>)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (r, c) = self.same_shape(name, ia, ib)?;
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((ia, ib, r, c, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, r, c, out) = self.zip_map(a, b, "add", |x, y| x + y)?;
        self.push("add", r, c, out, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, r, c, out) = self.zip_map(a, b, "sub", |x, y| x - y)?;
        self.push("sub", r, c, out, Op::Sub(ia, ib), &[ia, ib])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, r, c, out) = self.zip_map(a, b, "mul", |x, y| x * y)?;
        self.push("mul", r, c, out, Op::Mul(ia, ib), &[ia, ib])
    }

    /// `a + row`, broadcasting a `1 × c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if self.nodes[ir].rows != 1 || self.nodes[ir].cols != c {
            return Err(Error::shape(
                "add_row",
                format!("{r}x{c} + {}x{}", self.nodes[ir].rows, self.nodes[ir].cols),
            ));
        }
        let rv = &self.nodes[ir].value;
        let out = self.nodes[ia]
            .value
            .chunks(c)
            .flat_map(|row| row.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        self.push("add_row", r, c, out, Op::AddRow(ia, ir), &[ia, ir])
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        let out = self.nodes[ia].value.iter().map(|&x| f(x)).collect();
        self.push(name, r, c, out, op(ia), &[ia])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "scale", |x| x * s, |i| Op::Scale(i, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "add_scalar", |x| x + s, Op::AddScalar)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square)
    }

    /// Euclidean norm of each row: `r × c → r × 1`.
    ///
    /// The subgradient at a zero row is taken as zero.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        let out = self.nodes[ia]
            .value
            .chunks(c)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.push("row_norm", r, 1, out, Op::RowNorm(ia), &[ia])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.iter().sum();
        self.push("sum", 1, 1, vec![s], Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let n = self.nodes[ia].value.len() as f64;
        let s = self.nodes[ia].value.iter().sum::<f64>() / n;
        self.push("mean", 1, 1, vec![s], Op::Mean(ia), &[ia])
    }

    /// Concatenates along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols"));
        }
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let rows = self.nodes[idx[0]].rows;
        if idx.iter().any(|&i| self.nodes[i].rows != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = idx.iter().map(|&i| self.nodes[i].cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                let c = self.nodes[i].cols;
                out.extend_from_slice(&self.nodes[i].value[r * c..(r + 1) * c]);
            }
        }
        let inputs = idx.clone();
        self.push("concat_cols", rows, cols, out, Op::ConcatCols(idx), &inputs)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} of {c}")));
        }
        let out = self.nodes[ia]
            .value
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push("slice_cols", r, len, out, Op::SliceCols(ia, start), &[ia])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} of {r}")));
        }
        let out = self.nodes[ia].value[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", len, c, out, Op::SliceRows(ia, start), &[ia])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        let v = &self.nodes[ia].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push("transpose", c, r, out, Op::Transpose(ia), &[ia])
    }

    fn check_segments(&self, op: &'static str, ia: usize, seg: usize) -> Result<(usize, usize)> {
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if seg == 0 || r % seg != 0 {
            return Err(Error::shape(op, format!("{r} rows not divisible into segments of {seg}")));
        }
        Ok((r / seg, c))
    }

    /// Column-wise max over consecutive row blocks of length `seg`.
    ///
    /// With `seg` equal to the row count this is max-pooling over points.
    /// Argmax rows are saved; ties resolve to the first occurrence.
    pub fn segment_max(&mut self, a: Var, seg: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (s, c) = self.check_segments("segment_max", ia, seg)?;
        let v = &self.nodes[ia].value;
        let mut out = vec![f64::NEG_INFINITY; s * c];
        let mut arg = vec![0usize; s * c];
        for si in 0..s {
            let o = &mut out[si * c..(si + 1) * c];
            let am = &mut arg[si * c..(si + 1) * c];
            for r in si * seg..(si + 1) * seg {
                let row = &v[r * c..(r + 1) * c];
                for j in 0..c {
                    if row[j] > o[j] {
                        o[j] = row[j];
                        am[j] = r;
                    }
                }
            }
        }
        self.push("segment_max", s, c, out, Op::SegmentMax(ia, arg), &[ia])
    }

    /// Column-wise mean over consecutive row blocks of length `seg`.
    pub fn segment_mean(&mut self, a: Var, seg: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (s, c) = self.check_segments("segment_mean", ia, seg)?;
        let v = &self.nodes[ia].value;
        let mut out = vec![0.0; s * c];
        for si in 0..s {
            let o = &mut out[si * c..(si + 1) * c];
            for r in si * seg..(si + 1) * seg {
                for (acc, x) in o.iter_mut().zip(&v[r * c..(r + 1) * c]) {
                    *acc += x;
                }
            }
            o.iter_mut().for_each(|x| *x /= seg as f64);
        }
        self.push("segment_mean", s, c, out, Op::SegmentMean(ia, seg), &[ia])
    }

    /// Repeats each row `times` times consecutively: `r × c → (r·times) × c`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if times == 0 {
            return Err(Error::shape("repeat_rows", "times = 0"));
        }
        let mut out = Vec::with_capacity(r * c * times);
        for row in self.nodes[ia].value.chunks(c) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        self.push("repeat_rows", r * times, c, out, Op::RepeatRows(ia, times), &[ia])
    }

    /// Stacks the whole matrix `times` times: `r × c → (times·r) × c`.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if times == 0 {
            return Err(Error::shape("tile_rows", "times = 0"));
        }
        let out = self.nodes[ia].value.repeat(times);
        self.push("tile_rows", r * times, c, out, Op::TileRows(ia), &[ia])
    }

    /// Selects rows by index (indices may repeat).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if indices.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("index {bad} of {r} rows")));
        }
        let v = &self.nodes[ia].value;
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        self.push(
            "gather_rows",
            indices.len(),
            c,
            out,
            Op::GatherRows(ia, indices.to_vec()),
            &[ia],
        )
    }

    /// Normalizes every row to zero mean and unit variance (no affine, no
    /// running statistics).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        let mut out = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.nodes[ia].value.chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * is));
            inv_std.push(is);
        }
        self.push("layer_norm", r, c, out, Op::LayerNorm(ia, inv_std), &[ia])
    }

    /// Normalizes each 4-vector row to a unit quaternion with `w >= 0`.
    ///
    /// Norms below 1e-8 are clamped to 1e-8.
    pub fn quat_normalize(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if c != 4 {
            return Err(Error::shape("quat_normalize", format!("{r}x{c}, need 4 columns")));
        }
        let mut out = Vec::with_capacity(r * 4);
        let mut norms = Vec::with_capacity(r);
        let mut signs = Vec::with_capacity(r);
        for q in self.nodes[ia].value.chunks(4) {
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d = n.max(QUAT_EPS);
            let s = if q[0] >= 0.0 { 1.0 } else { -1.0 };
            out.extend(q.iter().map(|x| s * x / d));
            norms.push(n);
            signs.push(s);
        }
        self.push("quat_normalize", r, 4, out, Op::QuatNormalize(ia, norms, signs), &[ia])
    }

    /// Rotation matrix of a `1 × 4` unit quaternion `(w, x, y, z)`: `→ 3 × 3`.
    pub fn quat_to_rot(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = (self.nodes[ia].rows, self.nodes[ia].cols);
        if r != 1 || c != 4 {
            return Err(Error::shape("quat_to_rot", format!("{r}x{c}, need 1x4")));
        }
        let q = &self.nodes[ia].value;
        let out = crate::geom::quat_rotation_matrix([q[0], q[1], q[2], q[3]]).to_vec();
        self.push("quat_to_rot", 3, 3, out, Op::QuatToRot(ia), &[ia])
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.idx(loss)?;
        let ln = &self.nodes[li];
        if ln.rows * ln.cols != 1 {
            return Err(Error::NonScalarLoss(vec![ln.rows, ln.cols]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.backward_node(node, g, lo);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        // Gradient buffer of input `i`, zero-initialized on first touch.
        fn buf<'a>(lo: &'a mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'a mut Vec<f64> {
            let len = nodes[i].value.len();
            lo[i].get_or_insert_with(|| vec![0.0; len])
        }
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n) = (nodes[*a].rows, nodes[*a].cols, nodes[*b].cols);
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    gemm(g, false, &nodes[*b].value, true, ga, m, n, k, 1.0);
                }
                if wants(*b) {
                    let gb = buf(lo, nodes, *b);
                    gemm(&nodes[*a].value, true, g, false, gb, k, m, n, 1.0);
                }
            }
            Op::Linear(x, w, b) => {
                let (m, k, n) = (nodes[*x].rows, nodes[*x].cols, nodes[*w].cols);
                if wants(*x) {
                    let gx = buf(lo, nodes, *x);
                    gemm(g, false, &nodes[*w].value, true, gx, m, n, k, 1.0);
                }
                if wants(*w) {
                    let gw = buf(lo, nodes, *w);
                    gemm(&nodes[*x].value, true, g, false, gw, k, m, n, 1.0);
                }
                if wants(*b) {
                    let gb = buf(lo, nodes, *b);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, d)| *a += d);
                    }
                }
            }
            Op::Add(a, b) => {
                for (i, s) in [(*a, 1.0), (*b, 1.0)] {
                    if wants(i) {
                        buf(lo, nodes, i).iter_mut().zip(g).for_each(|(acc, d)| *acc += s * d);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (i, s) in [(*a, 1.0), (*b, -1.0)] {
                    if wants(i) {
                        buf(lo, nodes, i).iter_mut().zip(g).for_each(|(acc, d)| *acc += s * d);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = &nodes[*b].value;
                    buf(lo, nodes, *a)
                        .iter_mut()
                        .zip(g.iter().zip(other))
                        .for_each(|(acc, (d, o))| *acc += d * o);
                }
                if wants(*b) {
                    let other = &nodes[*a].value;
                    buf(lo, nodes, *b)
                        .iter_mut()
                        .zip(g.iter().zip(other))
                        .for_each(|(acc, (d, o))| *acc += d * o);
                }
            }
            Op::AddRow(a, r) => {
                if wants(*a) {
                    buf(lo, nodes, *a).iter_mut().zip(g).for_each(|(acc, d)| *acc += d);
                }
                if wants(*r) {
                    let gr = buf(lo, nodes, *r);
                    for row in g.chunks(cols) {
                        gr.iter_mut().zip(row).for_each(|(acc, d)| *acc += d);
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    buf(lo, nodes, *a).iter_mut().zip(g).for_each(|(acc, d)| *acc += s * d);
                }
            }
            Op::AddScalar(a) => {
                if wants(*a) {
                    buf(lo, nodes, *a).iter_mut().zip(g).for_each(|(acc, d)| *acc += d);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = &nodes[*a].value;
                    buf(lo, nodes, *a)
                        .iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(acc, (d, x))| {
                            if *x > 0.0 {
                                *acc += d
                            }
                        });
                }
            }
            Op::Exp(a) => {
                if wants(*a) {
                    let y = &node.value;
                    buf(lo, nodes, *a)
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(acc, (d, y))| *acc += d * y);
                }
            }
            Op::Log(a) => {
                if wants(*a) {
                    let x = &nodes[*a].value;
                    buf(lo, nodes, *a)
                        .iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(acc, (d, x))| *acc += d / x);
                }
            }
            Op::Square(a) => {
                if wants(*a) {
                    let x = &nodes[*a].value;
                    buf(lo, nodes, *a)
                        .iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(acc, (d, x))| *acc += 2.0 * x * d);
                }
            }
            Op::RowNorm(a) => {
                if wants(*a) {
                    let c = nodes[*a].cols;
                    let x = &nodes[*a].value;
                    let ga = buf(lo, nodes, *a);
                    for (r, (&n, &d)) in node.value.iter().zip(g).enumerate() {
                        if n > 0.0 {
                            let s = d / n;
                            for j in r * c..(r + 1) * c {
                                ga[j] += s * x[j];
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    buf(lo, nodes, *a).iter_mut().for_each(|acc| *acc += g[0]);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let s = g[0] / nodes[*a].value.len() as f64;
                    buf(lo, nodes, *a).iter_mut().for_each(|acc| *acc += s);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p].cols;
                    if wants(p) {
                        let gp = buf(lo, nodes, p);
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            gp[r * pc..(r + 1) * pc]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(acc, d)| *acc += d);
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                if wants(*a) {
                    let c = nodes[*a].cols;
                    let ga = buf(lo, nodes, *a);
                    for r in 0..rows {
                        let dst = &mut ga[r * c + start..r * c + start + cols];
                        dst.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(acc, d)| *acc += d);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    ga[start * cols..(start + rows) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(acc, d)| *acc += d);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    // node is rows×cols; input is cols×rows.
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::SegmentMax(a, arg) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    for (k, (&r, d)) in arg.iter().zip(g).enumerate() {
                        ga[r * cols + k % cols] += d;
                    }
                }
            }
            Op::SegmentMean(a, seg) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    let inv = 1.0 / *seg as f64;
                    for s in 0..rows {
                        let gs = &g[s * cols..(s + 1) * cols];
                        for r in s * seg..(s + 1) * seg {
                            ga[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(gs)
                                .for_each(|(acc, d)| *acc += d * inv);
                        }
                    }
                }
            }
            Op::RepeatRows(a, times) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    for (r, block) in g.chunks(cols * times).enumerate() {
                        let dst = &mut ga[r * cols..(r + 1) * cols];
                        for row in block.chunks(cols) {
                            dst.iter_mut().zip(row).for_each(|(acc, d)| *acc += d);
                        }
                    }
                }
            }
            Op::TileRows(a) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    let len = ga.len();
                    for block in g.chunks(len) {
                        ga.iter_mut().zip(block).for_each(|(acc, d)| *acc += d);
                    }
                }
            }
            Op::GatherRows(a, indices) => {
                if wants(*a) {
                    let ga = buf(lo, nodes, *a);
                    for (k, &i) in indices.iter().enumerate() {
                        ga[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[k * cols..(k + 1) * cols])
                            .for_each(|(acc, d)| *acc += d);
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                if wants(*a) {
                    let y = &node.value;
                    let ga = buf(lo, nodes, *a);
                    let n = cols as f64;
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        let is = inv_std[r];
                        for j in 0..cols {
                            ga[r * cols + j] += is * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                }
            }
            Op::QuatNormalize(a, norms, signs) => {
                if wants(*a) {
                    let x = &nodes[*a].value;
                    let ga = buf(lo, nodes, *a);
                    for r in 0..rows {
                        let xr = &x[r * 4..r * 4 + 4];
                        let gr = &g[r * 4..r * 4 + 4];
                        let (n, s) = (norms[r], signs[r]);
                        if n > QUAT_EPS {
                            let xg: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..4 {
                                ga[r * 4 + j] += s * (gr[j] / n - xr[j] * xg / (n * n * n));
                            }
                        } else {
                            for j in 0..4 {
                                ga[r * 4 + j] += s * gr[j] / QUAT_EPS;
                            }
                        }
                    }
                }
            }
            Op::QuatToRot(a) => {
                if wants(*a) {
                    let q = &nodes[*a].value;
                    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
                    // d R[k] / d (w, x, y, z), row-major R.
                    let jac: [[f64; 4]; 9] = [
                        [0.0, 0.0, -4.0 * y, -4.0 * z],
                        [-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w],
                        [2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x],
                        [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
                        [0.0, -4.0 * x, 0.0, -4.0 * z],
                        [-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y],
                        [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
                        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
                        [0.0, -4.0 * x, -4.0 * y, 0.0],
                    ];
                    let ga = buf(lo, nodes, *a);
                    for (k, row) in jac.iter().enumerate() {
                        for j in 0..4 {
                            ga[j] += g[k] * row[j];
                        }
                    }
                }
            }
        }
    }
}

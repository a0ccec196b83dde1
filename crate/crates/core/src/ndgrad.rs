//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation evaluates
//! its forward value eagerly, stores it, and returns a [`Var`] handle. Calling
//! [`Graph::backward`] on a scalar node walks the arena in reverse and returns
//! the gradient of that scalar with respect to every leaf registered with
//! [`Graph::leaf`]. Constants (see [`Graph::constant`]) never receive
//! gradients and nodes that depend only on constants are skipped during the
//! backward sweep.
//!
//! ```
//! use metalearn_core::ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in `{op}`: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("invalid clamp bounds: lo {lo} must be below hi {hi}")]
    InvalidClamp { lo: f64, hi: f64 },
    #[error("tensor shape {shape:?} holds {expected} elements but {found} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("slice [{start}, {end}) out of bounds for tensor of length {len}")]
    SliceOutOfBounds { start: usize, end: usize, len: usize },
    #[error("non-finite loss {value} at perturbed point (leaf {leaf}, coordinate {index})")]
    NonFiniteLoss { value: f64, leaf: usize, index: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

pub type Result<T> = std::result::Result<T, GradError>;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(GradError::DataLength {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Zero-dimensional tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for any tensor holding exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        if self.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatVec(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Append-only computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].value.shape
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn mismatch(&self, op: &'static str, vars: &[Var]) -> GradError {
        GradError::ShapeMismatch {
            op,
            shapes: vars.iter().map(|v| self.shape(*v).to_vec()).collect(),
        }
    }

    /// Registers a tensor whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// `[m, k] x [k] -> [m]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(self.mismatch("matvec", &[a, x]));
        }
        let (m, k) = (sa[0], sa[1]);
        let av = &self.nodes[a.0].value.data;
        let xv = &self.nodes[x.0].value.data;
        let out = (0..m)
            .map(|i| {
                let row = &av[i * k..(i + 1) * k];
                row.iter().zip(xv).fold(0.0, |acc, (w, v)| acc + w * v)
            })
            .collect();
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(Op::MatVec(a, x), Tensor::vector(out), rg))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", &[a, b]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * bv[p * n + j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor {
            shape: vec![m, n],
            data: out,
        };
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, &[a, b]));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(GradError::ShapeMismatch {
                op: "concat",
                shapes: Vec::new(),
            });
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| self.nodes[p.0].value.len()).sum());
        for p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data), rg))
    }

    /// Contiguous window of the flattened input, starting at `start`,
    /// reshaped to `shape`.
    pub fn slice(&mut self, input: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let count: usize = shape.iter().product();
        let len = self.nodes[input.0].value.len();
        let end = start + count;
        if end > len {
            return Err(GradError::SliceOutOfBounds { start, end, len });
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: self.nodes[input.0].value.data[start..end].to_vec(),
        };
        let rg = self.rg(input);
        Ok(self.push(Op::Slice { input, start }, value, rg))
    }

    fn map(&mut self, input: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[input.0].value;
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| f(*v)).collect(),
        };
        let rg = self.rg(input);
        self.push(op, value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, Op::Log(x), f64::ln)
    }

    /// Hard clip into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo < hi) {
            return Err(GradError::InvalidClamp { lo, hi });
        }
        Ok(self.map(x, Op::Clamp { input: x, lo, hi }, |v| v.clamp(lo, hi)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, Op::Scale(x, factor), |v| v * factor)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().fold(0.0, |acc, v| acc + v);
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Mean of all elements, as a scalar. Summed left to right, then divided.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if src.is_empty() {
            return Err(self.mismatch("mean", &[x]));
        }
        let s = src.data.iter().fold(0.0, |acc, v| acc + v) / src.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Op::Mean(x), Tensor::scalar(s), rg))
    }

    /// Gradient of the scalar `root` with respect to every leaf.
    ///
    /// Contributions are accumulated in a fixed reverse-arena order, so
    /// repeated calls on the same graph return bit-identical gradients.
    pub fn backward(&self, root: Var) -> Result<GradientMap> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(GradError::NonScalarRoot(root_value.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut leaves = vec![None; self.nodes.len()];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => leaves[idx] = Some(g),
                Op::Constant => {}
                Op::MatVec(a, x) => {
                    let av = &self.nodes[a.0].value;
                    let xv = &self.nodes[x.0].value.data;
                    let k = av.shape[1];
                    if self.rg(*a) {
                        let da = accum(&mut grads, *a, av.len());
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (d, xj) in da[i * k..(i + 1) * k].iter_mut().zip(xv) {
                                *d += gi * xj;
                            }
                        }
                    }
                    if self.rg(*x) {
                        let dx = accum(&mut grads, *x, k);
                        for (i, gi) in g.iter().enumerate() {
                            for (d, aij) in dx.iter_mut().zip(&av.data[i * k..(i + 1) * k]) {
                                *d += gi * aij;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                    if self.rg(*a) {
                        let da = accum(&mut grads, *a, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv.data[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    }
                    if self.rg(*b) {
                        let db = accum(&mut grads, *b, k * n);
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av.data[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.rg(v) {
                            add_into(accum(&mut grads, v, g.len()), &g, |gi, _| gi);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        add_into(accum(&mut grads, *a, g.len()), &g, |gi, _| gi);
                    }
                    if self.rg(*b) {
                        add_into(accum(&mut grads, *b, g.len()), &g, |gi, _| -gi);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let bv = &self.nodes[b.0].value.data;
                        add_into(accum(&mut grads, *a, g.len()), &g, |gi, i| gi * bv[i]);
                    }
                    if self.rg(*b) {
                        let av = &self.nodes[a.0].value.data;
                        add_into(accum(&mut grads, *b, g.len()), &g, |gi, i| gi * av[i]);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.rg(*p) {
                            let part = &g[offset..offset + len];
                            add_into(accum(&mut grads, *p, len), part, |gi, _| gi);
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, start } => {
                    let len = self.nodes[input.0].value.len();
                    let dst = accum(&mut grads, *input, len);
                    for (d, gi) in dst[*start..*start + g.len()].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value.data;
                    add_into(accum(&mut grads, *x, g.len()), &g, |gi, i| {
                        if xv[i] > 0.0 {
                            gi
                        } else {
                            0.0
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let s = &node.value.data;
                    add_into(accum(&mut grads, *x, g.len()), &g, |gi, i| {
                        gi * s[i] * (1.0 - s[i])
                    });
                }
                Op::Log(x) => {
                    let xv = &self.nodes[x.0].value.data;
                    add_into(accum(&mut grads, *x, g.len()), &g, |gi, i| gi / xv[i]);
                }
                Op::Clamp { input, lo, hi } => {
                    let xv = &self.nodes[input.0].value.data;
                    add_into(accum(&mut grads, *input, g.len()), &g, |gi, i| {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                }
                Op::Sum(x) => {
                    let len = self.nodes[x.0].value.len();
                    for d in accum(&mut grads, *x, len) {
                        *d += g[0];
                    }
                }
                Op::Mean(x) => {
                    let len = self.nodes[x.0].value.len();
                    let share = g[0] / len as f64;
                    for d in accum(&mut grads, *x, len) {
                        *d += share;
                    }
                }
                Op::Scale(x, factor) => {
                    add_into(accum(&mut grads, *x, g.len()), &g, |gi, _| gi * factor);
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(leaves)
            .map(|(node, g)| match node.op {
                Op::Leaf => Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                }),
                _ => None,
            })
            .collect();
        Ok(GradientMap { grads })
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (i, (d, gi)) in dst.iter_mut().zip(g).enumerate() {
        *d += f(*gi, i);
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    /// Gradient for a leaf; `None` if `var` is not a leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Concatenated gradients of `leaves`, in the given order.
    pub fn flatten(&self, leaves: &[Var]) -> Vec<f64> {
        let mut out = Vec::new();
        for v in leaves {
            if let Some(t) = self.get(*v) {
                out.extend_from_slice(t.data());
            }
        }
        out
    }
}

/// Compares reverse-mode gradients of `loss_fn` with central differences.
///
/// `loss_fn` receives a fresh graph and the leaf handles for `leaves` (in
/// order) and must return a scalar node. Returns the largest
/// `|a - b| / max(|a|, |b|, 1e-8)` over every leaf coordinate.
pub fn grad_check<F>(loss_fn: F, leaves: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(GradError::InvalidStep(step));
    }
    let eval = |values: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let root = loss_fn(&mut g, &vars)?;
        Ok((g, vars, root))
    };

    let (graph, vars, root) = eval(leaves)?;
    let grads = graph.backward(root)?;
    drop(graph);

    let mut worst = 0.0f64;
    let mut work = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").data().to_vec();
        for (ci, a) in analytic.iter().enumerate() {
            let orig = work[li].data[ci];
            let mut probe = |x: f64| -> Result<f64> {
                work[li].data[ci] = x;
                let (g, _, r) = eval(&work)?;
                let v = g.value(r).item().ok_or_else(|| {
                    GradError::NonScalarRoot(g.value(r).shape().to_vec())
                })?;
                if !v.is_finite() {
                    return Err(GradError::NonFiniteLoss {
                        value: v,
                        leaf: li,
                        index: ci,
                    });
                }
                Ok(v)
            };
            let plus = probe(orig + step)?;
            let minus = probe(orig - step)?;
            work[li].data[ci] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(f: impl Fn(&mut Graph, Var) -> Var, x: f64) -> f64 {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::scalar(x));
        let r = f(&mut g, v);
        g.backward(r).unwrap().get(v).unwrap().data()[0]
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.5]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn sigmoid_forward_and_extremes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 800.0, -800.0]));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data()[0], 0.5);
        assert_eq!(g.value(y).data()[1], 1.0);
        assert!(g.value(y).data()[2] >= 0.0 && g.value(y).data()[2].is_finite());
    }

    #[test]
    fn matvec_identity() {
        let mut g = Graph::new();
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let a = g.constant(Tensor::matrix(3, 3, eye).unwrap());
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.matvec(a, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let x = g.constant(Tensor::zeros(&[2]));
        let err = g.matvec(a, x).unwrap_err();
        assert_eq!(
            err,
            GradError::ShapeMismatch {
                op: "matvec",
                shapes: vec![vec![2, 3], vec![2]]
            }
        );
        assert!(err.to_string().contains("matvec"));
        assert!(g.add(x, a).is_err());
    }

    #[test]
    fn elementary_derivatives() {
        assert_eq!(scalar_grad(|g, x| g.mul(x, x).unwrap(), 3.0), 6.0);
        assert_eq!(scalar_grad(|g, x| g.sigmoid(x), 0.0), 0.25);
        assert_eq!(scalar_grad(|g, x| g.relu(x), -2.0), 0.0);
        assert_eq!(scalar_grad(|g, x| g.relu(x), 0.0), 0.0);
        assert_eq!(scalar_grad(|g, x| g.add(x, x).unwrap(), 1.7), 2.0);
        assert_eq!(scalar_grad(|g, x| g.log(x), 4.0), 0.25);
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        assert_eq!(scalar_grad(|g, x| g.clamp(x, 1e-7, 1.0).unwrap(), 0.0), 0.0);
        assert_eq!(scalar_grad(|g, x| g.clamp(x, 1e-7, 1.0).unwrap(), 0.5), 1.0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        assert!(matches!(g.clamp(x, 1.0, 1.0), Err(GradError::InvalidClamp { .. })));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(g.backward(x).unwrap_err(), GradError::NonScalarRoot(vec![2]));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(y).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
        assert!(grads.get(s).is_none());
    }

    #[test]
    fn slice_and_concat_route_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.slice(x, 1, &[2]).unwrap();
        let c = g.concat(&[w, x]).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            g.slice(x, 3, &[2]),
            Err(GradError::SliceOutOfBounds { .. })
        ));
    }

    #[test]
    fn backward_twice_is_bit_identical() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap());
        let x = g.leaf(Tensor::vector(vec![0.5, -0.25, 1.5]));
        let y = g.matvec(a, x).unwrap();
        let s = g.sigmoid(y);
        let m = g.mean(s).unwrap();
        let g1 = g.backward(m).unwrap();
        let g2 = g.backward(m).unwrap();
        assert_eq!(g1.flatten(&[a, x]), g2.flatten(&[a, x]));
    }

    #[test]
    fn quadratic_grad_check() {
        let x = Tensor::vector(vec![1.0, -2.0, 1.5]);
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let s = g.sum(sq);
                Ok(g.scale(s, 0.5))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn matmul_grad_check() {
        let a = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap();
        let b = Tensor::matrix(3, 2, vec![1.0, -0.5, 0.25, 0.8, -1.1, 0.6]).unwrap();
        let err = grad_check(
            |g, v| {
                let p = g.matmul(v[0], v[1])?;
                let s = g.sigmoid(p);
                g.mean(s)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_step_and_nan() {
        let x = Tensor::vector(vec![1.0]);
        assert!(matches!(
            grad_check(|g, v| Ok(g.sum(v[0])), &[x.clone()], 0.0),
            Err(GradError::InvalidStep(_))
        ));
        let at_zero = Tensor::vector(vec![0.0]);
        let res = grad_check(
            |g, v| {
                let l = g.log(v[0]);
                Ok(g.sum(l))
            },
            &[at_zero],
            1e-5,
        );
        assert!(matches!(res, Err(GradError::NonFiniteLoss { .. })));
    }
}

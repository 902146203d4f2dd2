use std::sync::Arc;

use crate::error::{Error, Result};

use super::real::{gemm, MatRef, Real};
use super::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRowBias(Var, Var),
    Gelu { x: Var, tanh: Vec<T> },
    Softmax { x: Var, axis: usize },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Concat { inputs: Vec<Var>, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Gather { x: Var, index: Arc<[u32]> },
    Embedding { table: Var, rows: Arc<[u32]> },
    Reshape(Var),
    ScalarFn { x: Var, local_grad: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only tape of tensor operations. Nodes are pushed in evaluation
/// order, so the node list is always topologically sorted.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every node of a graph.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when `v` is unreachable from the loss.
    pub fn get(&self, v: Var) -> Vec<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); numel(&self.shapes[v.0])],
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

/// tanh through a single `exp`; libm's tanh dominated training profiles.
fn fast_tanh<T: Real>(u: T) -> T {
    let two = T::one() + T::one();
    let limit = T::from_f64_lossy(20.0);
    if u > limit {
        return T::one();
    }
    if u < -limit {
        return -T::one();
    }
    if u.abs() < T::from_f64_lossy(1e-3) {
        // 1 - 2/(e^2u + 1) cancels badly near zero
        return u - u * u * u / (two + T::one());
    }
    T::one() - two / ((two * u).exp() + T::one())
}

fn gelu_tanh<T: Real>(x: T, k: T, c: T) -> T {
    fast_tanh(k * (x + c * x * x * x))
}

fn gelu_grad<T: Real>(x: T, t: T, k: T, c: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * c * x * x)
}

/// Splits `shape` around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        debug_assert_eq!(numel(&shape), data.len());
        let mut value = Tensor::new(shape, data).expect("derived tensor shape");
        value.requires_grad = requires_grad;
        self.push(value, op)
    }

    /// Adds a leaf. Its `requires_grad` flag decides whether gradients flow
    /// into it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.data(v)[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::row_major(self.data(a), m, k),
            MatRef::row_major(self.data(b), k, n),
            T::zero(),
            &mut out,
        );
        Ok(self.derived(vec![m, n], out, &[a, b], Op::MatMul(a, b)))
    }

    /// Batched product of `a: [B, m, k]` with `b: [B, k, n]`, or with
    /// `b: [B, n, k]` transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::dim("bmm", sa, sb));
        }
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            let am = MatRef::row_major(&da[i * m * k..(i + 1) * m * k], m, k);
            let bs = &db[i * k * n..(i + 1) * k * n];
            let bm = if trans_b {
                MatRef::row_major(bs, n, k).t()
            } else {
                MatRef::row_major(bs, k, n)
            };
            gemm(am, bm, T::zero(), &mut out[i * m * n..(i + 1) * m * n]);
        }
        Ok(self.derived(
            vec![batch, m, n],
            out,
            &[a, b],
            Op::BatchMatMul { a, b, trans_b },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, &[a, b], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let data = self.data(x).iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.derived(shape, data, &[x], Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let data = self.data(x).iter().map(|&v| v + s).collect();
        let shape = self.shape(x).to_vec();
        self.derived(shape, data, &[x], Op::AddScalar(x))
    }

    /// Adds `bias: [n]` to every row of `x: [.., n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(bias) != [n] {
            return Err(Error::dim("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.derived(shape, data, &[x, bias], Op::AddRowBias(x, bias)))
    }

    /// `x @ w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let k = T::from_f64_lossy(GELU_K);
        let c = T::from_f64_lossy(GELU_C);
        let half = T::from_f64_lossy(0.5);
        let src = self.data(x);
        let tanh: Vec<T> = src.iter().map(|&v| gelu_tanh(v, k, c)).collect();
        let data = src.iter().zip(&tanh).map(|(&v, &t)| half * v * (T::one() + t)).collect();
        let shape = self.shape(x).to_vec();
        self.derived(shape, data, &[x], Op::Gelu { x, tanh })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = T::neg_infinity();
                for a in 0..n {
                    mx = mx.max(src[base + a * inner]);
                }
                let mut sum = T::zero();
                for a in 0..n {
                    let e = (src[base + a * inner] - mx).exp();
                    out[base + a * inner] = e;
                    sum = sum + e;
                }
                for a in 0..n {
                    out[base + a * inner] = out[base + a * inner] / sum;
                }
            }
        }
        Ok(self.derived(shape, out, &[x], Op::Softmax { x, axis }))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::dim("layer_norm", &shape, self.shape(gain)));
        }
        let eps = T::from_f64_lossy(eps);
        let nf = T::from_usize(n).unwrap();
        let src = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let rows = src.len() / n;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.derived(
            shape,
            out,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Contract(format!("concat axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let ax = self.shape(v)[axis];
                let block = ax * inner;
                out.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        Ok(self.derived(
            shape,
            out,
            inputs,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Mean over one axis; the axis is removed from the shape (a rank-1
    /// input yields shape `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!("mean axis {axis} for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let nf = T::from_usize(n).unwrap();
        let src = self.data(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let row = &src[(o * n + a) * inner..(o * n + a + 1) * inner];
                add_into(&mut out[o * inner..(o + 1) * inner], row);
            }
        }
        for v in &mut out {
            *v = *v / nf;
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &e)| e)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.derived(out_shape, out, &[x], Op::MeanAxis { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = neumaier_sum(self.data(x));
        self.derived(vec![1], vec![s], &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = neumaier_sum(d) / T::from_usize(d.len()).unwrap();
        self.derived(vec![1], vec![s], &[x], Op::Mean(x))
    }

    /// `out.flat[i] = x.flat[index[i]]`, reshaped to `shape`. Repeated
    /// indices are allowed (broadcast); their gradients accumulate.
    pub fn gather(&mut self, x: Var, index: Arc<[u32]>, shape: &[usize]) -> Result<Var> {
        if numel(shape) != index.len() {
            return Err(Error::dim("gather", shape, &[index.len()]));
        }
        let src = self.data(x);
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= src.len()) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = index.iter().map(|&i| src[i as usize]).collect();
        Ok(self.derived(shape.to_vec(), data, &[x], Op::Gather { x, index }))
    }

    /// Row lookup into `table: [R, H]`, giving `[rows.len(), H]`.
    pub fn embedding(&mut self, table: Var, rows: Arc<[u32]>) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::dim("embedding", &ts, &[rows.len()]));
        }
        let (r, h) = (ts[0], ts[1]);
        if let Some(&bad) = rows.iter().find(|&&i| i as usize >= r) {
            return Err(Error::Contract(format!("embedding row {bad} >= {r}")));
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(rows.len() * h);
        for &i in rows.iter() {
            let i = i as usize;
            out.extend_from_slice(&src[i * h..(i + 1) * h]);
        }
        Ok(self.derived(
            vec![rows.len(), h],
            out,
            &[table],
            Op::Embedding { table, rows },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.derived(shape.to_vec(), data, &[x], Op::Reshape(x)))
    }

    /// Scalar node whose value and local gradient were computed outside the
    /// graph (`d out / d x = local_grad`).
    pub fn scalar_fn(&mut self, x: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        if local_grad.len() != self.value(x).len() {
            return Err(Error::dim("scalar_fn", self.shape(x), &[local_grad.len()]));
        }
        Ok(self.derived(vec![1], vec![value], &[x], Op::ScalarFn { x, local_grad }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.requires_grad(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.value.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, contrib: Vec<T>| {
            if !self.requires_grad(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => add_into(existing, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let wants = |v: Var| self.requires_grad(v);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let gm = MatRef::row_major(g, m, n);
                if wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(gm, MatRef::row_major(self.data(*b), k, n).t(), T::zero(), &mut da);
                    acc(*a, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(MatRef::row_major(self.data(*a), m, k).t(), gm, T::zero(), &mut db);
                    acc(*b, db);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (da_src, db_src) = (self.data(*a), self.data(*b));
                if wants(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        let gi = MatRef::row_major(&g[i * m * n..(i + 1) * m * n], m, n);
                        let bs = &db_src[i * k * n..(i + 1) * k * n];
                        // d a_i = g_i @ op(b_i)^T
                        let bt = if *trans_b {
                            MatRef::row_major(bs, n, k)
                        } else {
                            MatRef::row_major(bs, k, n).t()
                        };
                        gemm(gi, bt, T::zero(), &mut da[i * m * k..(i + 1) * m * k]);
                    }
                    acc(*a, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        let gi = MatRef::row_major(&g[i * m * n..(i + 1) * m * n], m, n);
                        let ai = MatRef::row_major(&da_src[i * m * k..(i + 1) * m * k], m, k);
                        let out = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm(gi.t(), ai, T::zero(), out);
                        } else {
                            gemm(ai.t(), gi, T::zero(), out);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g.iter().zip(self.data(*b)).map(|(&u, &v)| u * v).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(self.data(*a)).map(|(&u, &v)| u * v).collect());
                }
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|&v| v * *s).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::AddRowBias(x, b) => {
                acc(*x, g.to_vec());
                if wants(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks_exact(n) {
                        add_into(&mut db, row);
                    }
                    acc(*b, db);
                }
            }
            Op::Gelu { x, tanh } => {
                let k = T::from_f64_lossy(GELU_K);
                let c = T::from_f64_lossy(GELU_C);
                let dx = g
                    .iter()
                    .zip(self.data(*x))
                    .zip(tanh)
                    .map(|((&u, &v), &t)| u * gelu_grad(v, t, k, c))
                    .collect();
                acc(*x, dx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut dot = T::zero();
                        for a in 0..n {
                            let p = base + a * inner;
                            dot = dot + g[p] * y[p];
                        }
                        for a in 0..n {
                            let p = base + a * inner;
                            dx[p] = y[p] * (g[p] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.shape(*gain)[0];
                let nf = T::from_usize(n).unwrap();
                let gn = self.data(*gain);
                if wants(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..n {
                            let dh = gr[j] * gn[j];
                            m1 = m1 + dh;
                            m2 = m2 + dh * hr[j];
                        }
                        m1 = m1 / nf;
                        m2 = m2 / nf;
                        for j in 0..n {
                            dx[r * n + j] = rs * (gr[j] * gn[j] - m1 - hr[j] * m2);
                        }
                    }
                    acc(*x, dx);
                }
                if wants(*gain) {
                    let mut dg = vec![T::zero(); n];
                    for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            dg[j] = dg[j] + gr[j] * hr[j];
                        }
                    }
                    acc(*gain, dg);
                }
                if wants(*bias) {
                    let mut db = vec![T::zero(); n];
                    for gr in g.chunks_exact(n) {
                        add_into(&mut db, gr);
                    }
                    acc(*bias, db);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut parts: Vec<Vec<T>> = inputs
                    .iter()
                    .map(|&v| Vec::with_capacity(self.value(v).len()))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, &v) in parts.iter_mut().zip(inputs) {
                        let block = self.shape(v)[*axis] * inner;
                        p.extend_from_slice(&g[off..off + block]);
                        off += block;
                    }
                }
                for (p, &v) in parts.into_iter().zip(inputs) {
                    acc(v, p);
                }
            }
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let nf = T::from_usize(n).unwrap();
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for a in 0..n {
                        for i in 0..inner {
                            dx[(o * n + a) * inner + i] = g[o * inner + i] / nf;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0] / T::from_usize(n).unwrap(); n]);
            }
            Op::Gather { x, index } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&i, &gv) in index.iter().zip(g) {
                    dx[i as usize] = dx[i as usize] + gv;
                }
                acc(*x, dx);
            }
            Op::Embedding { table, rows } => {
                let h = self.shape(*table)[1];
                let mut dt = vec![T::zero(); self.value(*table).len()];
                for (k, &r) in rows.iter().enumerate() {
                    let r = r as usize;
                    add_into(&mut dt[r * h..(r + 1) * h], &g[k * h..(k + 1) * h]);
                }
                acc(*table, dt);
            }
            Op::ScalarFn { x, local_grad } => {
                acc(*x, local_grad.iter().map(|&v| v * g[0]).collect());
            }
        }
    }
}

/// Compensated summation; pooled scores of constant maps stay exact.
fn neumaier_sum<T: Real>(xs: &[T]) -> T {
    let (mut s, mut c) = (T::zero(), T::zero());
    for &x in xs {
        let t = s + x;
        c = c + if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

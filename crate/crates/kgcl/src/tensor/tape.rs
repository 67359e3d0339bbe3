//! Operation tape and reverse-mode gradient propagation.
//!
//! A [`Tape`] records every operation in topological order; [`Tape::backward`]
//! walks the recording once in reverse, accumulating gradients for every
//! node. Every forward op validates operand shapes and rejects non-finite
//! outputs, so NaN/Inf surfaces at the op that produced it rather than three
//! layers later in a loss.

use super::{dot, norm, Tensor, COSINE_EPS};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Matmul(VarId, VarId),
    Transpose(VarId),
    Reshape(VarId),
    Concat(Vec<VarId>),
    StackRows(Vec<VarId>),
    StackScalars(Vec<VarId>),
    MeanVars(Vec<VarId>),
    Rows(VarId, Vec<usize>),
    Row(VarId, usize),
    SumAll(VarId),
    MeanAll(VarId),
    Scale(VarId, f64),
    AddColBias(VarId, VarId),
    Elu(VarId),
    Sigmoid(VarId),
    Exp(VarId),
    Log(VarId),
    ClampMin(VarId, f64),
    SoftmaxRows(VarId),
    Dot(VarId, VarId),
    Cosine(VarId, VarId),
    CyclicCorrelation(VarId, VarId),
    LogSumExp(VarId),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, if any path connected it to the root.
    pub fn get(&self, v: VarId) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the given shape when disconnected.
    pub fn get_or_zeros(&self, v: VarId, shape: &[usize]) -> Tensor {
        match self.grads[v.0].as_ref() {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Record an input value. Leaves are where gradients terminate.
    pub fn leaf(&mut self, t: Tensor) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        id
    }

    pub fn scalar(&mut self, v: f64) -> VarId {
        self.leaf(Tensor::scalar(v))
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<VarId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { value, op });
        Ok(id)
    }

    fn binary_same_shape(&self, a: VarId, b: VarId, name: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op: name,
                details: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v, "mul")
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                details: format!("{sa:?} x {sb:?}"),
            });
        }
        let v = self.value(a).matmul_value(self.value(b));
        self.push(Op::Matmul(a, b), v, "matmul")
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId> {
        if self.value(a).shape().len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                details: format!("{:?}", self.value(a).shape()),
            });
        }
        let v = self.value(a).transposed();
        self.push(Op::Transpose(a), v, "transpose")
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::Shape {
                op: "reshape",
                details: format!("{:?} -> {shape:?}", t.shape()),
            });
        }
        let v = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        self.push(Op::Reshape(a), v, "reshape")
    }

    /// Concatenate rank-1 tensors along their only axis.
    pub fn concat(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat",
                details: "no operands".into(),
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::Shape {
                    op: "concat",
                    details: format!("operand shape {:?} is not rank 1", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
        }
        let v = Tensor::vector(&data);
        self.push(Op::Concat(parts.to_vec()), v, "concat")
    }

    /// Stack rank-1 tensors of equal length into a `[k, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[VarId]) -> Result<VarId> {
        if rows.is_empty() {
            return Err(Error::Shape {
                op: "stack_rows",
                details: "no operands".into(),
            });
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.shape().len() != 1 || t.len() != d {
                return Err(Error::Shape {
                    op: "stack_rows",
                    details: format!("row shape {:?}, expected [{d}]", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
        }
        let v = Tensor::new(vec![rows.len(), d], data)?;
        self.push(Op::StackRows(rows.to_vec()), v, "stack_rows")
    }

    /// Collect scalar vars into a rank-1 tensor.
    pub fn stack_scalars(&mut self, scalars: &[VarId]) -> Result<VarId> {
        let mut data = Vec::with_capacity(scalars.len());
        for &s in scalars {
            let t = self.value(s);
            if t.len() != 1 {
                return Err(Error::Shape {
                    op: "stack_scalars",
                    details: format!("operand shape {:?} is not scalar", t.shape()),
                });
            }
            data.push(t.data()[0]);
        }
        let v = Tensor::vector(&data);
        self.push(Op::StackScalars(scalars.to_vec()), v, "stack_scalars")
    }

    /// Elementwise mean of same-shaped tensors.
    pub fn mean_vars(&mut self, vars: &[VarId]) -> Result<VarId> {
        if vars.is_empty() {
            return Err(Error::Shape {
                op: "mean_vars",
                details: "no operands".into(),
            });
        }
        let shape = self.value(vars[0]).shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        for &v in vars {
            if self.value(v).shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "mean_vars",
                    details: format!("{:?} vs {:?}", self.value(v).shape(), shape),
                });
            }
            acc.add_in_place(self.value(v));
        }
        let k = vars.len() as f64;
        let v = acc.map(|x| x / k);
        self.push(Op::MeanVars(vars.to_vec()), v, "mean_vars")
    }

    /// Gather rows of a `[n, d]` matrix; duplicate indices are allowed.
    pub fn rows(&mut self, table: VarId, indices: &[usize]) -> Result<VarId> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op: "rows",
                details: format!("{:?}", t.shape()),
            });
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::Shape {
                    op: "rows",
                    details: format!("row {i} out of bounds for {n} rows"),
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(vec![indices.len(), d], data)?;
        self.push(Op::Rows(table, indices.to_vec()), v, "rows")
    }

    /// Single row of a `[n, d]` matrix as a rank-1 tensor.
    pub fn row(&mut self, table: VarId, index: usize) -> Result<VarId> {
        let t = self.value(table);
        if t.shape().len() != 2 || index >= t.shape()[0] {
            return Err(Error::Shape {
                op: "row",
                details: format!("row {index} of {:?}", t.shape()),
            });
        }
        let v = Tensor::vector(t.row(index));
        self.push(Op::Row(table, index), v, "row")
    }

    pub fn sum_all(&mut self, a: VarId) -> Result<VarId> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::SumAll(a), v, "sum")
    }

    pub fn mean_all(&mut self, a: VarId) -> Result<VarId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                details: "empty tensor".into(),
            });
        }
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(Op::MeanAll(a), v, "mean")
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v, "scale")
    }

    /// Add a `[d]` bias to every column of a `[d, n]` matrix.
    pub fn add_col_bias(&mut self, m: VarId, bias: VarId) -> Result<VarId> {
        let (sm, sb) = (self.value(m).shape(), self.value(bias).shape());
        if sm.len() != 2 || sb.len() != 1 || sm[0] != sb[0] {
            return Err(Error::Shape {
                op: "add_col_bias",
                details: format!("{sm:?} + {sb:?}"),
            });
        }
        let (d, n) = (sm[0], sm[1]);
        let mut data = self.value(m).data().to_vec();
        let b = self.value(bias).data();
        for i in 0..d {
            for j in 0..n {
                data[i * n + j] += b[i];
            }
        }
        let v = Tensor::new(vec![d, n], data)?;
        self.push(Op::AddColBias(m, bias), v, "add_col_bias")
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        self.push(Op::Elu(a), v, "elu")
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(sigmoid_scalar);
        self.push(Op::Sigmoid(a), v, "sigmoid")
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, "log")
    }

    /// Elementwise `max(x, floor)`; gradient is zero at and below the floor.
    pub fn clamp_min(&mut self, a: VarId, floor: f64) -> Result<VarId> {
        let v = self.value(a).map(|x| x.max(floor));
        self.push(Op::ClampMin(a, floor), v, "clamp_min")
    }

    /// Row-wise softmax of a rank-2 tensor, max-subtracted for stability.
    pub fn softmax_rows(&mut self, a: VarId) -> Result<VarId> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op: "softmax_rows",
                details: format!("{:?}", t.shape()),
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        if c == 0 {
            return Err(Error::Shape {
                op: "softmax_rows",
                details: "empty rows".into(),
            });
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        let v = Tensor::new(vec![r, c], data)?;
        self.push(Op::SoftmaxRows(a), v, "softmax_rows")
    }

    /// Inner product of two rank-1 tensors.
    pub fn dot(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_vectors(a, b, "dot")?;
        let v = Tensor::scalar(dot(self.value(a).data(), self.value(b).data()));
        self.push(Op::Dot(a, b), v, "dot")
    }

    /// Cosine similarity; norms are clamped below at `1e-12`.
    pub fn cosine(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_vectors(a, b, "cosine")?;
        let v = Tensor::scalar(super::cosine_value(
            self.value(a).data(),
            self.value(b).data(),
        ));
        self.push(Op::Cosine(a, b), v, "cosine")
    }

    /// Cyclic correlation: `out[k] = sum_i a[i] * b[(i + k) mod d]`.
    pub fn cyclic_correlation(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_vectors(a, b, "cyclic_correlation")?;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let d = xa.len();
        let mut out = vec![0.0; d];
        for k in 0..d {
            let mut s = 0.0;
            for i in 0..d {
                s += xa[i] * xb[(i + k) % d];
            }
            out[k] = s;
        }
        let v = Tensor::vector(&out);
        self.push(Op::CyclicCorrelation(a, b), v, "cyclic_correlation")
    }

    /// `log(sum(exp(x)))` of a rank-1 tensor, max-subtracted for stability.
    pub fn logsumexp(&mut self, a: VarId) -> Result<VarId> {
        let t = self.value(a);
        if t.shape().len() != 1 || t.is_empty() {
            return Err(Error::Shape {
                op: "logsumexp",
                details: format!("{:?}", t.shape()),
            });
        }
        let m = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = t.data().iter().map(|&x| (x - m).exp()).sum();
        let v = Tensor::scalar(m + s.ln());
        self.push(Op::LogSumExp(a), v, "logsumexp")
    }

    fn check_vectors(&self, a: VarId, b: VarId, name: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 1 || sb.len() != 1 || sa[0] != sb[0] || sa[0] == 0 {
            return Err(Error::Shape {
                op: name,
                details: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// reachable from the root; unreached nodes have no gradient.
    pub fn backward(&self, root: VarId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                details: format!("root has shape {:?}, expected scalar", self.value(root).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], v: VarId, t: Tensor| match &mut grads[v.0] {
            Some(acc) => acc.add_in_place(&t),
            slot @ None => *slot = Some(t),
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, g.zip(self.value(*b), |gv, bv| gv * bv));
                add_to(grads, *b, g.zip(self.value(*a), |gv, av| gv * av));
            }
            Op::Matmul(a, b) => {
                let ga = g.matmul_value(&self.value(*b).transposed());
                let gb = self.value(*a).transposed().matmul_value(g);
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::Transpose(a) => add_to(grads, *a, g.transposed()),
            Op::Reshape(a) => {
                let t = Tensor::new(self.value(*a).shape().to_vec(), g.data().to_vec())
                    .expect("reshape gradient length");
                add_to(grads, *a, t);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    add_to(grads, p, Tensor::vector(&g.data()[offset..offset + len]));
                    offset += len;
                }
            }
            Op::StackRows(rows) => {
                for (i, &r) in rows.iter().enumerate() {
                    add_to(grads, r, Tensor::vector(g.row(i)));
                }
            }
            Op::StackScalars(scalars) => {
                for (i, &s) in scalars.iter().enumerate() {
                    let shape = self.value(s).shape().to_vec();
                    add_to(
                        grads,
                        s,
                        Tensor::new(shape, vec![g.data()[i]]).expect("scalar gradient"),
                    );
                }
            }
            Op::MeanVars(vars) => {
                let k = vars.len() as f64;
                for &v in vars {
                    add_to(grads, v, g.map(|x| x / k));
                }
            }
            // Row gathers are the hot path (embedding lookups): scatter into
            // the table's accumulator in place instead of materializing a
            // table-sized gradient per lookup.
            Op::Rows(table, indices) => {
                let d = self.value(*table).shape()[1];
                let acc = table_acc(grads, *table, self.value(*table).shape());
                for (pos, &i) in indices.iter().enumerate() {
                    let src = g.row(pos);
                    let dst = &mut acc.data_mut()[i * d..(i + 1) * d];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            Op::Row(table, index) => {
                let d = self.value(*table).shape()[1];
                let acc = table_acc(grads, *table, self.value(*table).shape());
                let dst = &mut acc.data_mut()[index * d..(index + 1) * d];
                for (a, b) in dst.iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                add_to(grads, *a, self.value(*a).map(|_| gv));
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                let gv = g.data()[0] / n;
                add_to(grads, *a, self.value(*a).map(|_| gv));
            }
            Op::Scale(a, c) => add_to(grads, *a, g.map(|x| x * c)),
            Op::AddColBias(m, bias) => {
                add_to(grads, *m, g.clone());
                let (d, n) = (g.shape()[0], g.shape()[1]);
                let mut gb = vec![0.0; d];
                for i in 0..d {
                    for j in 0..n {
                        gb[i] += g.data()[i * n + j];
                    }
                }
                add_to(grads, *bias, Tensor::vector(&gb));
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let y = &self.nodes[idx].value;
                let mut out = g.clone();
                for ((o, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *o *= if xv > 0.0 { 1.0 } else { yv + 1.0 };
                }
                add_to(grads, *a, out);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                add_to(grads, *a, g.zip(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                add_to(grads, *a, g.zip(y, |gv, yv| gv * yv));
            }
            Op::Log(a) => {
                add_to(grads, *a, g.zip(self.value(*a), |gv, xv| gv / xv));
            }
            Op::ClampMin(a, floor) => {
                add_to(
                    grads,
                    *a,
                    g.zip(self.value(*a), |gv, xv| if xv > *floor { gv } else { 0.0 }),
                );
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let (r, c) = (y.shape()[0], y.shape()[1]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let inner: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        out[i * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                add_to(
                    grads,
                    *a,
                    Tensor::new(vec![r, c], out).expect("softmax gradient shape"),
                );
            }
            Op::Dot(a, b) => {
                let gv = g.data()[0];
                add_to(grads, *a, self.value(*b).map(|x| gv * x));
                add_to(grads, *b, self.value(*a).map(|x| gv * x));
            }
            Op::Cosine(a, b) => {
                let gv = g.data()[0];
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (norm(xa), norm(xb));
                let p = na.max(COSINE_EPS);
                let q = nb.max(COSINE_EPS);
                let s = dot(xa, xb);
                let mut ga = vec![0.0; xa.len()];
                let mut gb = vec![0.0; xb.len()];
                for i in 0..xa.len() {
                    let mut da = xb[i] / (p * q);
                    if na > COSINE_EPS {
                        da -= s * xa[i] / (na * p * p * q);
                    }
                    ga[i] = gv * da;
                    let mut db = xa[i] / (p * q);
                    if nb > COSINE_EPS {
                        db -= s * xb[i] / (nb * q * q * p);
                    }
                    gb[i] = gv * db;
                }
                add_to(grads, *a, Tensor::vector(&ga));
                add_to(grads, *b, Tensor::vector(&gb));
            }
            Op::CyclicCorrelation(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let d = xa.len();
                let mut ga = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for k in 0..d {
                    let gk = g.data()[k];
                    for i in 0..d {
                        ga[i] += gk * xb[(i + k) % d];
                        gb[(i + k) % d] += gk * xa[i];
                    }
                }
                add_to(grads, *a, Tensor::vector(&ga));
                add_to(grads, *b, Tensor::vector(&gb));
            }
            Op::LogSumExp(a) => {
                let gv = g.data()[0];
                let y = self.nodes[idx].value.data()[0];
                add_to(grads, *a, self.value(*a).map(|x| gv * (x - y).exp()));
            }
        }
    }
}

fn table_acc<'g>(grads: &'g mut [Option<Tensor>], table: VarId, shape: &[usize]) -> &'g mut Tensor {
    let slot = &mut grads[table.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape));
    }
    slot.as_mut().expect("accumulator just initialized")
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> VarId {
        tape.leaf(Tensor::vector(v))
    }

    #[test]
    fn elu_and_sigmoid_fixed_points() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.0]);
        let e = tape.elu(x).unwrap();
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(e).data()[0], 0.0);
        assert_eq!(tape.value(s).data()[0], 0.5);
    }

    #[test]
    fn cyclic_correlation_by_hand() {
        let mut tape = Tape::new();
        let a = vec_leaf(&mut tape, &[1.0, 2.0]);
        let b = vec_leaf(&mut tape, &[3.0, 4.0]);
        let c = tape.cyclic_correlation(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0, 10.0]);
    }

    #[test]
    fn cyclic_correlation_matches_bruteforce() {
        // O(d^2) definition recomputed directly for all d <= 16.
        let mut seed = 42u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for d in 1..=16 {
            let a: Vec<f64> = (0..d).map(|_| next()).collect();
            let b: Vec<f64> = (0..d).map(|_| next()).collect();
            let mut tape = Tape::new();
            let va = vec_leaf(&mut tape, &a);
            let vb = vec_leaf(&mut tape, &b);
            let c = tape.cyclic_correlation(va, vb).unwrap();
            for k in 0..d {
                let expect: f64 = (0..d).map(|i| a[i] * b[(i + k) % d]).sum();
                assert!((tape.value(c).data()[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let s = tape.sum_all(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_self_dot() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let d = tape.dot(x, x).unwrap();
        let grads = tape.backward(d).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_of_constant_is_zero_elsewhere() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let c = tape.scalar(3.0);
        let _unused = tape.dot(x, x).unwrap();
        let grads = tape.backward(c).unwrap();
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let s = tape.softmax_rows(m).unwrap();
        let v = tape.value(s);
        for i in 0..2 {
            let sum: f64 = v.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(v.row(i).iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn logsumexp_is_stable_at_large_magnitudes() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1000.0, 1000.0]);
        let l = tape.logsumexp(x).unwrap();
        let got = tape.value(l).data()[0];
        assert!((got - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = vec_leaf(&mut tape, &[1.0]);
        let b = vec_leaf(&mut tape, &[1.0, 2.0]);
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1]") && msg.contains("[2]"), "got: {msg}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.0]);
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn gradients_of_all_ops_match_finite_differences() {
        // One composite expression touching every differentiable op.
        let a = Tensor::vector(&[0.3, -0.7, 1.1, 0.4]);
        let b = Tensor::vector(&[-0.2, 0.9, 0.5, -1.3]);
        let m = Tensor::new(vec![2, 4], vec![0.1, -0.4, 0.3, 0.8, -0.6, 0.2, 0.7, -0.1]).unwrap();
        let err = check_gradients(
            |tape, leaves| {
                let (a, b, m) = (leaves[0], leaves[1], leaves[2]);
                let cc = tape.cyclic_correlation(a, b)?;
                let s = tape.sub(cc, b)?;
                let p = tape.mul(s, a)?;
                let e = tape.elu(p)?;
                let col = tape.reshape(e, &[4, 1])?;
                let mm = tape.matmul(m, col)?;
                let mt = tape.transpose(mm)?;
                let sm = tape.softmax_rows(mt)?;
                let flat = tape.reshape(sm, &[2])?;
                let target = tape.leaf(Tensor::vector(&[0.3, 0.9]));
                let cos = tape.cosine(flat, target)?;
                let sig = tape.sigmoid(cos)?;
                let lg = tape.clamp_min(sig, 1e-12)?;
                let lg = tape.log(lg)?;
                let d = tape.dot(a, b)?;
                let ex = tape.exp(d)?;
                let stacked = tape.stack_scalars(&[lg, ex])?;
                let lse = tape.logsumexp(stacked)?;
                let cat = tape.concat(&[a, b])?;
                let mn = tape.mean_all(cat)?;
                let sum = tape.add(lse, mn)?;
                tape.scale(sum, 0.7)
            },
            &[a, b, m],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }
}

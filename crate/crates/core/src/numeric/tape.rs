//! Define-by-run reverse-mode differentiation over [`Array`] values.
//!
//! Every operation appends one node holding its forward value, so operands
//! always precede their consumers and a single reverse sweep suffices.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{Array, ParamId, ParamStore, SparseMatrix};

/// Rows with a Euclidean norm below this normalize to the zero row.
pub const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    MulCol { a: Var, col: Var },
    Affine { a: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SegmentSoftmax { a: Var, segments: Arc<Vec<usize>>, count: usize },
    L2NormalizeRows(Var),
    Concat(Var, Var),
    Gather { a: Var, indices: Arc<Vec<usize>> },
    ScatterAdd { a: Var, indices: Arc<Vec<usize>> },
    Sparse { m: Arc<SparseMatrix>, a: Var },
    Sum(Var),
    Mean(Var),
    LnClamped { a: Var, floor: f64 },
    LinComb(Vec<(f64, Var)>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Array>,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter leaf on the tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Array>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.grads.iter().map(|(&id, g)| (id, g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            match self.grads.get_mut(&id) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    self.grads.insert(id, g);
                }
            }
        }
    }

    pub fn insert(&mut self, id: ParamId, grad: Array) {
        self.grads.insert(id, grad);
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_dims(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&mut self, value: Arc<Array>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant)
    }

    /// A trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_shared(store.shared(id), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let out = crate::numeric::array::gemm(av, bv, false);
        Ok(self.push(out, Op::MatMul { a, b, transpose_b: false }))
    }

    /// `a . b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape("matmul_nt", format!("{:?} x {:?}^T", av.shape(), bv.shape())));
        }
        let out = crate::numeric::array::gemm(av, bv, true);
        Ok(self.push(out, Op::MatMul { a, b, transpose_b: true }))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
        let (av, bv) = (self.value(a), self.value(b));
        same_dims(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Array::from_parts(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the row vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.len() != av.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", av.shape(), rv.shape())));
        }
        let mut out = av.clone();
        let c = av.cols();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += rv.data()[i % c];
        }
        Ok(self.push(out, Op::AddRow { a, row }))
    }

    /// Scales row `i` of `a` by `col[i]`; `col` holds one value per row.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.len() != av.rows() {
            return Err(Error::shape("mul_col", format!("{:?} * {:?}", av.shape(), cv.shape())));
        }
        let c = av.cols();
        let mut out = av.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x *= cv.data()[i / c];
        }
        Ok(self.push(out, Op::MulCol { a, col }))
    }

    /// `scale * a + shift`; covers scalar multiplication and `1 - a`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine { a, scale })
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax over groups of entries of a single-column `a`; `segments[i]`
    /// names the group of entry `i`, groups are `0..count`.
    pub fn segment_softmax(&mut self, a: Var, segments: Arc<Vec<usize>>, count: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != segments.len() || segments.iter().any(|&s| s >= count) {
            return Err(Error::shape(
                "segment_softmax",
                format!("{} values for {} segment labels (count {count})", av.len(), segments.len()),
            ));
        }
        let mut max = vec![f64::NEG_INFINITY; count];
        for (&x, &s) in av.data().iter().zip(segments.iter()) {
            max[s] = max[s].max(x);
        }
        let mut data: Vec<f64> = av
            .data()
            .iter()
            .zip(segments.iter())
            .map(|(&x, &s)| (x - max[s]).exp())
            .collect();
        let mut total = vec![0.0; count];
        for (&e, &s) in data.iter().zip(segments.iter()) {
            total[s] += e;
        }
        for (e, &s) in data.iter_mut().zip(segments.iter()) {
            *e /= total[s];
        }
        let out = Array::from_parts(av.shape().to_vec(), data);
        Ok(self.push(out, Op::SegmentSoftmax { a, segments, count }))
    }

    /// Divides each row by its Euclidean norm; rows with norm below
    /// [`NORM_FLOOR`] become zero rows.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < NORM_FLOOR {
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        self.push(out, Op::L2NormalizeRows(a))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape("concat", format!("{:?} ++ {:?}", av.shape(), bv.shape())));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        Ok(self.push(Array::from_parts(vec![r, ca + cb], data), Op::Concat(a, b)))
    }

    /// Row lookup: output row `i` is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= av.rows()) {
            return Err(Error::shape("gather_rows", format!("indices out of range for {:?}", av.shape())));
        }
        let out = av.select_rows(&indices);
        Ok(self.push(out, Op::Gather { a, indices }))
    }

    /// Row `i` of `a` is added into output row `indices[i]`; the output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, indices: Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let av = self.value(a);
        if indices.len() != av.rows() || rows == 0 || indices.iter().any(|&i| i >= rows) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices into {rows} rows for {:?}", indices.len(), av.shape()),
            ));
        }
        let mut out = Array::zeros(&[rows, av.cols()]);
        for (src, &dst) in indices.iter().enumerate() {
            for (o, x) in out.row_mut(dst).iter_mut().zip(av.row(src)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::ScatterAdd { a, indices }))
    }

    /// Sparse-dense product `m . a`.
    pub fn sparse_matmul(&mut self, m: Arc<SparseMatrix>, a: Var) -> Result<Var> {
        let av = self.value(a);
        if m.cols() != av.rows() || m.rows() == 0 {
            return Err(Error::shape(
                "sparse_matmul",
                format!("{}x{} sparse x {:?}", m.rows(), m.cols(), av.shape()),
            ));
        }
        let out = m.apply(av);
        Ok(self.push(out, Op::Sparse { m, a }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Array::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// `ln(max(a, floor))`; the clamped region has zero gradient.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, Op::LnClamped { a, floor })
    }

    /// `sum_i c_i * v_i` over equally shaped operands.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let Some(&(c0, v0)) = terms.first() else {
            return Err(Error::Usage("lincomb needs at least one term".into()));
        };
        let mut out = self.value(v0).map(|x| c0 * x);
        for &(c, v) in &terms[1..] {
            let vv = self.value(v);
            same_dims("lincomb", &out, vv)?;
            for (o, x) in out.data_mut().iter_mut().zip(vv.data()) {
                *o += c * x;
            }
        }
        Ok(self.push(out, Op::LinComb(terms.to_vec())))
    }

    /// Gradient of the scalar `output` with respect to every parameter leaf.
    ///
    /// Leaves the output does not depend on get zero gradients.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array::filled(self.value(output).shape(), 1.0));
        let mut result = Gradients::default();

        fn acc(grads: &mut [Option<Array>], v: Var, g: Array) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Array::zeros(node.value.shape()));
                match result.grads.get_mut(&id) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        result.grads.insert(id, g);
                    }
                }
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul { a, b, transpose_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    use crate::numeric::array::{gemm, gemm_tn};
                    if *transpose_b {
                        acc(&mut grads, *a, gemm(&g, bv, false));
                        acc(&mut grads, *b, gemm_tn(&g, av));
                    } else {
                        acc(&mut grads, *a, gemm(&g, bv, true));
                        acc(&mut grads, *b, gemm_tn(av, &g));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip(&g, bv, |x, y| x * y);
                    let gb = zip(&g, av, |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow { a, row } => {
                    let rv = self.value(*row);
                    let c = g.cols();
                    let mut gr = vec![0.0; c];
                    for chunk in g.data().chunks(c) {
                        for (s, x) in gr.iter_mut().zip(chunk) {
                            *s += x;
                        }
                    }
                    acc(&mut grads, *row, Array::from_parts(rv.shape().to_vec(), gr));
                    acc(&mut grads, *a, g);
                }
                Op::MulCol { a, col } => {
                    let (av, cv) = (self.value(*a), self.value(*col));
                    let c = av.cols();
                    let mut ga = g.clone();
                    let mut gc = vec![0.0; cv.len()];
                    for (i, x) in ga.data_mut().iter_mut().enumerate() {
                        gc[i / c] += *x * av.data()[i];
                        *x *= cv.data()[i / c];
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, Array::from_parts(cv.shape().to_vec(), gc));
                }
                Op::Affine { a, scale } => {
                    let s = *scale;
                    acc(&mut grads, *a, g.map(|x| s * x));
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, zip(&g, y, |gx, s| gx * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, zip(&g, y, |gx, t| gx * (1.0 - t * t))),
                Op::SoftmaxRows(a) => {
                    let c = y.cols();
                    let mut ga = Vec::with_capacity(y.len());
                    for (gr, yr) in g.data().chunks(c).zip(y.data().chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        ga.extend(gr.iter().zip(yr).map(|(gx, yx)| yx * (gx - dot)));
                    }
                    acc(&mut grads, *a, Array::from_parts(y.shape().to_vec(), ga));
                }
                Op::SegmentSoftmax { a, segments, count } => {
                    let mut dot = vec![0.0; *count];
                    for ((gx, yx), &s) in g.data().iter().zip(y.data()).zip(segments.iter()) {
                        dot[s] += gx * yx;
                    }
                    let ga = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .zip(segments.iter())
                        .map(|((gx, yx), &s)| yx * (gx - dot[s]))
                        .collect();
                    acc(&mut grads, *a, Array::from_parts(y.shape().to_vec(), ga));
                }
                Op::L2NormalizeRows(a) => {
                    let xv = self.value(*a);
                    let c = xv.cols();
                    let mut ga = Vec::with_capacity(xv.len());
                    for ((xr, yr), gr) in xv.data().chunks(c).zip(y.data().chunks(c)).zip(g.data().chunks(c)) {
                        let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm < NORM_FLOOR {
                            ga.extend(std::iter::repeat_n(0.0, c));
                        } else {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            ga.extend(yr.iter().zip(gr).map(|(yx, gx)| (gx - yx * dot) / norm));
                        }
                    }
                    acc(&mut grads, *a, Array::from_parts(xv.shape().to_vec(), ga));
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let r = g.rows();
                    let mut ga = Vec::with_capacity(r * ca);
                    let mut gb = Vec::with_capacity(r * cb);
                    for row in g.data().chunks(ca + cb) {
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    let sa = self.value(*a).shape().to_vec();
                    let sb = self.value(*b).shape().to_vec();
                    acc(&mut grads, *a, Array::from_parts(sa, ga));
                    acc(&mut grads, *b, Array::from_parts(sb, gb));
                }
                Op::Gather { a, indices } => {
                    let av = self.value(*a);
                    let mut ga = Array::zeros(av.shape());
                    for (src, &dst) in indices.iter().enumerate() {
                        for (o, x) in ga.row_mut(dst).iter_mut().zip(g.row(src)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAdd { a, indices } => {
                    let av = self.value(*a);
                    let ga = g.select_rows(indices);
                    acc(&mut grads, *a, Array::from_parts(av.shape().to_vec(), ga.into_data()));
                }
                Op::Sparse { m, a } => {
                    let av = self.value(*a);
                    let ga = m.apply_transposed(&g);
                    acc(&mut grads, *a, Array::from_parts(av.shape().to_vec(), ga.into_data()));
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    acc(&mut grads, *a, Array::filled(self.value(*a).shape(), s));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let s = g.data()[0] / av.len() as f64;
                    acc(&mut grads, *a, Array::filled(av.shape(), s));
                }
                Op::LinComb(terms) => {
                    for &(c, v) in terms {
                        acc(&mut grads, v, g.map(|x| c * x));
                    }
                }
                Op::LnClamped { a, floor } => {
                    let xv = self.value(*a);
                    let f = *floor;
                    acc(&mut grads, *a, zip(&g, xv, |gx, x| if x > f { gx / x } else { 0.0 }));
                }
            }
        }
        Ok(result)
    }
}

fn zip(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::from_parts(b.shape().to_vec(), data)
}

//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node holding its output value and the ids of its
//! operands. Operands always precede their consumer, so the backward pass is a
//! single reverse sweep over the node list.

use super::{axpy, dot, sigmoid, ParamId, ParamStore, Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Clamp { x: Var, lo: F, hi: F },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Gather { x: Var, rows: Vec<usize> },
    Reshape(Var),
    Conv2d(Box<ConvRecord>),
    AvgPool { x: Var, size: usize },
}

#[derive(Clone, Debug)]
struct ConvRecord {
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    geom: ConvGeom,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Recorded computation. Rebuilt for every forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives a gradient but feeds nothing back.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// `y = W x + b`, row-wise over every leading dimension of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || wv.shape()[1] != xv.cols() {
            return Err(dim_err("affine", format!("x {:?} vs W {:?}", xv.shape(), wv.shape())));
        }
        let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            if self.value(b).shape() != [n_out] {
                return Err(dim_err(
                    "affine",
                    format!("bias {:?} vs {n_out} outputs", self.value(b).shape()),
                ));
            }
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * n_out);
        for r in 0..rows {
            let xr = &xv.data()[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                out.push(dot(&wv.data()[o * n_in..(o + 1) * n_in], xr));
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for chunk in out.chunks_exact_mut(n_out) {
                for (y, &bb) in chunk.iter_mut().zip(bv) {
                    *y = *y + bb;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("non-empty") = n_out;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(dim_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: F) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp { x: a, lo, hi })
    }

    /// Concatenates along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| dim_err("concat", "no operands"))?;
        let rows = self.value(first).rows();
        let lead = self.value(first).shape()[..self.value(first).shape().len() - 1].to_vec();
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(dim_err("concat", format!("{:?} vs {:?}", self.value(first).shape(), s)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start+len` of the last dimension.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let cols = av.cols();
        if len == 0 || start + len > cols {
            return Err(dim_err("slice", format!("{start}..{} of {cols} columns", start + len)));
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("non-empty") = len;
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Slice { x: a, start }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Selects rows (leading index of a 2-D view) of `a`; rows may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let n = av.rows();
        if rows.is_empty() {
            return Err(dim_err("gather_rows", "empty row list"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(dim_err("gather_rows", format!("row {bad} of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        let v = Tensor::new(vec![rows.len(), av.cols()], data)?;
        Ok(self.push(
            v,
            Op::Gather {
                x: a,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// 2-D cross-correlation. `x` is `[N, C, H, W]` or `[C, H, W]`, `w` is
    /// `[O, C, kh, kw]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let batched = match xv.shape().len() {
            4 => true,
            3 => false,
            _ => return Err(dim_err("conv2d", format!("input {:?}", xv.shape()))),
        };
        let xs = xv.shape();
        let (n, c, h, wd) = if batched {
            (xs[0], xs[1], xs[2], xs[3])
        } else {
            (1, xs[0], xs[1], xs[2])
        };
        let ws = wv.shape();
        if ws.len() != 4 || ws[1] != c {
            return Err(dim_err("conv2d", format!("kernel {ws:?} vs input {xs:?}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(dim_err(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * pad,
                    wd + 2 * pad
                ),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(dim_err("conv2d", format!("bias {:?}", self.value(b).shape())));
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            oh,
            ow,
        };
        let xd = xv.data();
        let wdat = wv.data();
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![F::zero(); n * o * oh * ow];
        for ni in 0..n {
            for oc in 0..o {
                let base = bias.as_ref().map_or(F::zero(), |bv| bv[oc]);
                let plane = &mut out[(ni * o + oc) * oh * ow..(ni * o + oc + 1) * oh * ow];
                plane.iter_mut().for_each(|v| *v = base);
                for ic in 0..c {
                    let xin = &xd[(ni * c + ic) * h * wd..(ni * c + ic + 1) * h * wd];
                    let kern = &wdat[(oc * c + ic) * kh * kw..(oc * c + ic + 1) * kh * kw];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let kv = kern[ki * kw + kj];
                            for yo in 0..oh {
                                let yi = (yo * stride + ki) as isize - pad as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                let xrow = &xin[yi as usize * wd..(yi as usize + 1) * wd];
                                let orow = &mut plane[yo * ow..(yo + 1) * ow];
                                for (xo, ov) in orow.iter_mut().enumerate() {
                                    let xi = (xo * stride + kj) as isize - pad as isize;
                                    if xi >= 0 && xi < wd as isize {
                                        *ov = *ov + kv * xrow[xi as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let shape = if batched { vec![n, o, oh, ow] } else { vec![o, oh, ow] };
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            Op::Conv2d(Box::new(ConvRecord {
                x,
                w,
                b,
                stride,
                pad,
                geom,
            })),
        ))
    }

    /// Non-overlapping `size x size` average pooling over the two trailing
    /// dimensions; trailing rows/columns that do not fill a window are dropped.
    pub fn avg_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 3 || size == 0 || s[s.len() - 1] < size || s[s.len() - 2] < size {
            return Err(dim_err("avg_pool", format!("input {s:?}, window {size}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (oh, ow) = (h / size, w / size);
        let planes = xv.len() / (h * w);
        let inv = F::one() / F::from_usize(size * size).expect("small");
        let mut out = vec![F::zero(); planes * oh * ow];
        for p in 0..planes {
            let xin = &xv.data()[p * h * w..(p + 1) * h * w];
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut acc = F::zero();
                    for i in 0..size {
                        for j in 0..size {
                            acc = acc + xin[(yo * size + i) * w + xo * size + j];
                        }
                    }
                    out[(p * oh + yo) * ow + xo] = acc * inv;
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([oh, ow]);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::AvgPool { x, size }))
    }

    /// Reverse sweep from a scalar node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), F::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Overwrites every gradient slot of `store`; parameters the loss does not
    /// reach end up with zero gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<F>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.grad_mut(*id).add_assign(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let mut dx = vec![F::zero(); xv.len()];
                let mut dw = vec![F::zero(); wv.len()];
                for r in 0..rows {
                    let gr = &g.data()[r * n_out..(r + 1) * n_out];
                    let xr = &xv.data()[r * n_in..(r + 1) * n_in];
                    let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                    for (o, &go) in gr.iter().enumerate() {
                        if go == F::zero() {
                            continue;
                        }
                        axpy(go, &wv.data()[o * n_in..(o + 1) * n_in], dxr);
                        axpy(go, xr, &mut dw[o * n_in..(o + 1) * n_in]);
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *w, wv.shape(), dw);
                if let Some(b) = b {
                    let mut db = vec![F::zero(); n_out];
                    for r in 0..rows {
                        for (d, &go) in db.iter_mut().zip(&g.data()[r * n_out..(r + 1) * n_out]) {
                            *d = *d + go;
                        }
                    }
                    accumulate(grads, *b, &[n_out], db);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(&gi, &bi)| gi * bi).collect();
                let db = g.data().iter().zip(av.data()).map(|(&gi, &ai)| gi * ai).collect();
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), db);
            }
            Op::Scale(a, k) => {
                accumulate(grads, *a, g.shape(), g.data().iter().map(|&v| v * *k).collect());
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, &shape, g.data().to_vec());
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| if y > F::zero() { gi } else { F::zero() })
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| gi * y * (F::one() - y))
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| gi * (F::one() - y * y))
                    .collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Exp(a) => {
                let d = g.data().iter().zip(out.data()).map(|(&gi, &y)| gi * y).collect();
                accumulate(grads, *a, g.shape(), d);
            }
            Op::Clamp { x, lo, hi } => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gi, &xi)| if xi < *lo || xi > *hi { F::zero() } else { gi })
                    .collect();
                accumulate(grads, *x, g.shape(), d);
            }
            Op::Concat(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut d = Vec::with_capacity(pv.len());
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, pv.shape(), d);
                    offset += w;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let (cols, len) = (xv.cols(), out.cols());
                let mut d = vec![F::zero(); xv.len()];
                for r in 0..xv.rows() {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), vec![g.item(); av.len()]);
            }
            Op::Gather { x, rows } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![F::zero(); xv.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (dv, &gv) in d[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g.data()[i * cols..(i + 1) * cols])
                    {
                        *dv = *dv + gv;
                    }
                }
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::Conv2d(rec) => self.conv_backward(rec, g, grads),
            Op::AvgPool { x, size } => {
                let xv = self.value(*x);
                let s = xv.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let (oh, ow) = (h / size, w / size);
                let planes = xv.len() / (h * w);
                let inv = F::one() / F::from_usize(size * size).expect("small");
                let mut d = vec![F::zero(); xv.len()];
                for p in 0..planes {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let gv = g.data()[(p * oh + yo) * ow + xo] * inv;
                            for i in 0..*size {
                                for j in 0..*size {
                                    d[p * h * w + (yo * size + i) * w + xo * size + j] = gv;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, s, d);
            }
        }
    }

    fn conv_backward(&self, rec: &ConvRecord, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            oh,
            ow,
        } = rec.geom;
        let (stride, pad) = (rec.stride, rec.pad);
        let xv = self.value(rec.x);
        let wv = self.value(rec.w);
        let mut dx = vec![F::zero(); xv.len()];
        let mut dw = vec![F::zero(); wv.len()];
        let gd = g.data();
        for ni in 0..n {
            for oc in 0..o {
                let gplane = &gd[(ni * o + oc) * oh * ow..(ni * o + oc + 1) * oh * ow];
                for ic in 0..c {
                    let xoff = (ni * c + ic) * h * w;
                    let koff = (oc * c + ic) * kh * kw;
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let kv = wv.data()[koff + ki * kw + kj];
                            let mut acc = F::zero();
                            for yo in 0..oh {
                                let yi = (yo * stride + ki) as isize - pad as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                let row = xoff + yi as usize * w;
                                for xo in 0..ow {
                                    let xi = (xo * stride + kj) as isize - pad as isize;
                                    if xi >= 0 && xi < w as isize {
                                        let gv = gplane[yo * ow + xo];
                                        acc = acc + gv * xv.data()[row + xi as usize];
                                        dx[row + xi as usize] = dx[row + xi as usize] + gv * kv;
                                    }
                                }
                            }
                            dw[koff + ki * kw + kj] = dw[koff + ki * kw + kj] + acc;
                        }
                    }
                }
            }
        }
        accumulate(grads, rec.x, xv.shape(), dx);
        accumulate(grads, rec.w, wv.shape(), dw);
        if let Some(b) = rec.b {
            let mut db = vec![F::zero(); o];
            for ni in 0..n {
                for (oc, d) in db.iter_mut().enumerate() {
                    let plane = &gd[(ni * o + oc) * oh * ow..(ni * o + oc + 1) * oh * ow];
                    *d = *d + plane.iter().copied().sum::<F>();
                }
            }
            accumulate(grads, b, &[o], db);
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, shape: &[usize], d: Vec<F>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(d) {
                *a = *a + b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("gradient shape"));
        }
    }
}

//! Parameterised building blocks: affine layer, LSTM cell, convolution.

use rand::Rng;

use super::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::Result;

/// Uniform draw in `±sqrt(1/fan_in)`.
pub fn uniform_fan_in<F: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.insert(format!("{prefix}.w"), uniform_fan_in(rng, &[n_out, n_in], n_in))?;
        let b = store.insert(format!("{prefix}.b"), uniform_fan_in(rng, &[n_out], n_in))?;
        Ok(Self { w, b, n_in, n_out })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(x, w, Some(b))
    }

    pub fn num_scalars(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }
}

/// Recorded LSTM weights: `w_ih` is `[4H, D]`, `w_hh` is `[4H, H]`, `b` is
/// `[4H]`; gate blocks are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl<F: Real> Tape<F> {
    /// One LSTM step; returns `(h, c)`.
    pub fn lstm_cell(&mut self, x: Var, h_prev: Var, c_prev: Var, p: &LstmParams) -> Result<(Var, Var)> {
        let hidden = self.value(h_prev).cols();
        let zx = self.affine(x, p.w_ih, Some(p.b))?;
        let zh = self.affine(h_prev, p.w_hh, None)?;
        let z = self.add(zx, zh)?;
        let i = self.slice(z, 0, hidden)?;
        let f = self.slice(z, hidden, hidden)?;
        let g = self.slice(z, 2 * hidden, hidden)?;
        let o = self.slice(z, 3 * hidden, hidden)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let keep = self.mul(f, c_prev)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let tc = self.tanh(c);
        let h = self.mul(o, tc)?;
        Ok((h, c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Uniform `±sqrt(1/fan_in)` weights, forget-gate bias set to 1.
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = store.insert(
            format!("{prefix}.w_ih"),
            uniform_fan_in(rng, &[4 * hidden, input], input),
        )?;
        let w_hh = store.insert(
            format!("{prefix}.w_hh"),
            uniform_fan_in(rng, &[4 * hidden, hidden], hidden),
        )?;
        let mut b: Tensor<F> = uniform_fan_in(rng, &[4 * hidden], hidden);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = F::one());
        let b = store.insert(format!("{prefix}.b"), b)?;
        Ok(Self {
            w_ih,
            w_hh,
            b,
            input,
            hidden,
        })
    }

    pub fn record<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>) -> LstmParams {
        LstmParams {
            w_ih: tape.param(store, self.w_ih),
            w_hh: tape.param(store, self.w_hh),
            b: tape.param(store, self.b),
        }
    }

    /// Runs the cell over `xs` from a zero state and returns the final `(h, c)`.
    pub fn unroll<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, xs: &[Var]) -> Result<(Var, Var)> {
        let rows = tape.value(xs[0]).rows();
        let p = self.record(tape, store);
        let mut h = tape.leaf(Tensor::zeros(&[rows, self.hidden]));
        let mut c = tape.leaf(Tensor::zeros(&[rows, self.hidden]));
        for &x in xs {
            (h, c) = tape.lstm_cell(x, h, c, &p)?;
        }
        Ok((h, c))
    }

    pub fn num_scalars(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let w = store.insert(
            format!("{prefix}.w"),
            uniform_fan_in(rng, &[out_channels, in_channels, kernel, kernel], fan_in),
        )?;
        let b = store.insert(format!("{prefix}.b"), uniform_fan_in(rng, &[out_channels], fan_in))?;
        Ok(Self {
            w,
            b,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

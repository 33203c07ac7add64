//! Dense building blocks over a flat parameter vector, each with a matching
//! backward pass that accumulates into an equally shaped gradient vector.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

pub(crate) const LEAKY_SLOPE: f64 = 0.01;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Const(f64),
}

/// Allocates parameter ranges and remembers how to initialize them.
#[derive(Debug, Default)]
pub(crate) struct ParamBuilder {
    len: usize,
    inits: Vec<(Range<usize>, Init)>,
}

impl ParamBuilder {
    fn alloc(&mut self, n: usize, init: Init) -> usize {
        let start = self.len;
        self.len += n;
        self.inits.push((start..self.len, init));
        start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Fan-in scaled uniform weights and biases.
    pub fn linear(&mut self, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.alloc(fan_in * fan_out, Init::Uniform(bound));
        let b = self.alloc(fan_out, Init::Uniform(bound));
        Linear {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn layer_norm(&mut self, dim: usize) -> LayerNorm {
        let gamma = self.alloc(dim, Init::Const(1.0));
        let beta = self.alloc(dim, Init::Const(0.0));
        LayerNorm { gamma, beta, dim }
    }

    pub fn initialize<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.len];
        for (range, init) in &self.inits {
            for v in &mut p[range.clone()] {
                *v = match *init {
                    Init::Uniform(b) => rng.random_range(-b..b),
                    Init::Const(c) => c,
                };
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_in, self.fan_out),
            &p[self.w..self.w + self.fan_in * self.fan_out],
        )
        .expect("weight shape")
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.b..self.b + self.fan_out])
    }

    /// `x · W + b` for row-major inputs `rows × fan_in`.
    pub fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight(p));
        y += &self.bias(p);
        y
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
    ) -> Array2<f64> {
        self.backward_params(g, x, dy);
        dy.dot(&self.weight(p).t())
    }

    /// Parameter gradients only, for layers whose input is data.
    pub fn backward_params(&self, g: &mut [f64], x: &ArrayView2<f64>, dy: &ArrayView2<f64>) {
        {
            let mut gw = ArrayViewMut2::from_shape(
                (self.fan_in, self.fan_out),
                &mut g[self.w..self.w + self.fan_in * self.fan_out],
            )
            .expect("weight shape");
            general_mat_mul(1.0, &x.t(), dy, 1.0, &mut gw);
        }
        let mut gb = ArrayViewMut1::from(&mut g[self.b..self.b + self.fan_out]);
        gb += &dy.sum_axis(Axis(0));
    }
}

pub(crate) fn leaky_relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient through a leaky rectifier given its pre-activation.
pub(crate) fn leaky_relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d *= LEAKY_SLOPE
        }
    });
    dx
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
    dim: usize,
}

pub(crate) struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let gamma = ArrayView1::from(&p[self.gamma..self.gamma + self.dim]);
        let beta = ArrayView1::from(&p[self.beta..self.beta + self.dim]);
        let d = self.dim as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *s = 1.0 / (var + LN_EPS).sqrt();
            row *= *s;
        }
        let mut y = &xhat * &gamma;
        y += &beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &LayerNormCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let gamma = ArrayView1::from(&p[self.gamma..self.gamma + self.dim]);
        {
            let mut gg = ArrayViewMut1::from(&mut g[self.gamma..self.gamma + self.dim]);
            gg += &(dy * &cache.xhat).sum_axis(Axis(0));
        }
        {
            let mut gb = ArrayViewMut1::from(&mut g[self.beta..self.beta + self.dim]);
            gb += &dy.sum_axis(Axis(0));
        }
        let d = self.dim as f64;
        let dxhat = dy * &gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, dh), xh), &s) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let sum_dh = dh.sum();
            let sum_dh_xh = dh.dot(&xh);
            for ((o, &a), &b) in out.iter_mut().zip(dh.iter()).zip(xh.iter()) {
                *o = s / d * (d * a - sum_dh - b * sum_dh_xh);
            }
        }
        dx
    }
}

/// Multi-head self-attention with a key padding mask.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SelfAttention {
    qkv: Linear,
    out: Linear,
    dim: usize,
    heads: usize,
}

pub(crate) struct AttentionCache {
    qkv: Array2<f64>,
    /// Attention weights per head, `T × T`.
    weights: Vec<Array2<f64>>,
    mixed: Array2<f64>,
}

impl SelfAttention {
    pub fn new(b: &mut ParamBuilder, dim: usize, heads: usize) -> Self {
        Self {
            qkv: b.linear(dim, 3 * dim),
            out: b.linear(dim, dim),
            dim,
            heads,
        }
    }

    /// `padding[j] == true` excludes token `j` as a key for every query.
    pub fn forward(
        &self,
        p: &[f64],
        x: &Array2<f64>,
        padding: &[bool],
    ) -> (Array2<f64>, AttentionCache) {
        let t = x.nrows();
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(p, &x.view());
        let mut mixed = Array2::zeros((t, self.dim));
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(ndarray::s![.., self.dim + h * dh..self.dim + (h + 1) * dh]);
            let v = qkv.slice(ndarray::s![
                ..,
                2 * self.dim + h * dh..2 * self.dim + (h + 1) * dh
            ]);
            let mut a = q.dot(&k.t());
            for mut row in a.rows_mut() {
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    *s *= scale;
                    if !padding[j] && *s > max {
                        max = *s;
                    }
                }
                let mut sum = 0.0;
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if padding[j] { 0.0 } else { (*s - max).exp() };
                    sum += *s;
                }
                row /= sum;
            }
            mixed
                .slice_mut(ndarray::s![.., h * dh..(h + 1) * dh])
                .assign(&a.dot(&v));
            weights.push(a);
        }
        let y = self.out.forward(p, &mixed.view());
        (
            y,
            AttentionCache {
                qkv,
                weights,
                mixed,
            },
        )
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &Array2<f64>,
        cache: &AttentionCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dmixed = self.out.backward(p, g, &cache.mixed.view(), &dy.view());
        let mut dqkv = Array2::zeros(cache.qkv.raw_dim());
        for h in 0..self.heads {
            let (qs, ks, vs) = (
                h * dh..(h + 1) * dh,
                self.dim + h * dh..self.dim + (h + 1) * dh,
                2 * self.dim + h * dh..2 * self.dim + (h + 1) * dh,
            );
            let q = cache.qkv.slice(ndarray::s![.., qs.clone()]);
            let k = cache.qkv.slice(ndarray::s![.., ks.clone()]);
            let v = cache.qkv.slice(ndarray::s![.., vs.clone()]);
            let a = &cache.weights[h];
            let dout = dmixed.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
            dqkv.slice_mut(ndarray::s![.., vs])
                .assign(&a.t().dot(&dout));
            let da = dout.dot(&v.t());
            let mut ds = &da * a;
            for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let total = row.sum();
                row.zip_mut_with(&arow, |s, &w| *s -= w * total);
            }
            ds *= scale;
            dqkv.slice_mut(ndarray::s![.., qs]).assign(&ds.dot(&k));
            dqkv.slice_mut(ndarray::s![.., ks]).assign(&ds.t().dot(&q));
        }
        self.qkv.backward(p, g, &x.view(), &dqkv.view())
    }
}

/// Post-norm transformer encoder layer with a leaky-rectifier feedforward.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayer {
    attn: SelfAttention,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

pub(crate) struct EncoderLayerCache {
    x: Array2<f64>,
    attn: AttentionCache,
    norm1: LayerNormCache,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(b: &mut ParamBuilder, dim: usize, heads: usize, ff_dim: usize) -> Self {
        Self {
            attn: SelfAttention::new(b, dim, heads),
            norm1: b.layer_norm(dim),
            ff1: b.linear(dim, ff_dim),
            ff2: b.linear(ff_dim, dim),
            norm2: b.layer_norm(dim),
        }
    }

    pub fn forward(
        &self,
        p: &[f64],
        x: Array2<f64>,
        padding: &[bool],
    ) -> (Array2<f64>, EncoderLayerCache) {
        let (a, attn) = self.attn.forward(p, &x, padding);
        let (h1, norm1) = self.norm1.forward(p, &(&x + &a));
        let ff_pre = self.ff1.forward(p, &h1.view());
        let ff_act = leaky_relu(&ff_pre);
        let f = self.ff2.forward(p, &ff_act.view());
        let (y, norm2) = self.norm2.forward(p, &(&h1 + &f));
        (
            y,
            EncoderLayerCache {
                x,
                attn,
                norm1,
                h1,
                ff_pre,
                ff_act,
                norm2,
            },
        )
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        c: &EncoderLayerCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let dz2 = self.norm2.backward(p, g, &c.norm2, dy);
        let dact = self.ff2.backward(p, g, &c.ff_act.view(), &dz2.view());
        let dpre = leaky_relu_backward(&c.ff_pre, &dact);
        let mut dh1 = self.ff1.backward(p, g, &c.h1.view(), &dpre.view());
        dh1 += &dz2;
        let dz1 = self.norm1.backward(p, g, &c.norm1, &dh1);
        let mut dx = self.attn.backward(p, g, &c.x, &c.attn, &dz1);
        dx += &dz1;
        dx
    }
}

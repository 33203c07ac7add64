//! The raw denoising network: attribute and floor tokenizers, a
//! permutation-agnostic transformer encoder and a shared output decoder.

mod layers;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    check_shapes, precondition_coeffs, ChannelSigmaData, Conditioning, Denoiser, LayoutModel,
    RawNetwork,
};
use crate::error::{Error, Result};
use crate::geometry::{sample_contour, Vec2};
use crate::scene::{
    write_positional_encoding, Spatial, DEFAULT_MAX_OBJECTS, PE_DIM, PE_FREQUENCIES,
};
use layers::{
    leaky_relu, leaky_relu_backward, EncoderLayer, EncoderLayerCache, Linear, ParamBuilder,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub token_dim: usize,
    pub attr_dim: usize,
    pub pe_frequencies: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub floor_points: usize,
    /// Widths of the shared per-point layers before the pooled feature.
    pub floor_hidden: Vec<usize>,
    pub floor_feature_dim: usize,
    pub category_hidden: usize,
    pub decoder_dims: Vec<usize>,
    pub decoder_dropout: f64,
    pub vocab_size: usize,
    pub max_objects: usize,
}

impl DenoiserConfig {
    /// Full-size network.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            token_dim: 768,
            attr_dim: 192,
            pe_frequencies: PE_FREQUENCIES,
            n_layers: 3,
            n_heads: 4,
            ff_dim: 512,
            floor_points: 100,
            floor_hidden: vec![64, 128],
            floor_feature_dim: 1024,
            category_hidden: 128,
            decoder_dims: vec![512, 128, 8],
            decoder_dropout: 0.1,
            vocab_size,
            max_objects: DEFAULT_MAX_OBJECTS,
        }
    }

    /// Small network that trains on a single CPU core in minutes.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            token_dim: 64,
            attr_dim: 16,
            n_layers: 3,
            n_heads: 4,
            ff_dim: 128,
            floor_points: 64,
            floor_hidden: vec![32, 64],
            floor_feature_dim: 128,
            category_hidden: 32,
            decoder_dims: vec![64, 32, 8],
            ..Self::paper(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("denoiser config: {m}")));
        if self.token_dim != 4 * self.attr_dim || self.attr_dim == 0 {
            return fail("token_dim must equal 4 * attr_dim");
        }
        if self.pe_frequencies != PE_FREQUENCIES {
            return fail("pe_frequencies must be 32");
        }
        if self.n_heads == 0 || !self.token_dim.is_multiple_of(self.n_heads) {
            return fail("token_dim must be divisible by n_heads");
        }
        if self.decoder_dims.last() != Some(&8) {
            return fail("decoder output must have 8 channels");
        }
        if self.floor_points < 3 {
            return fail("floor_points must be at least 3");
        }
        if self.vocab_size == 0 || self.max_objects == 0 {
            return fail("vocab_size and max_objects must be positive");
        }
        if !(0.0..1.0).contains(&self.decoder_dropout) {
            return fail("decoder_dropout must lie in [0, 1)");
        }
        let widths = [self.ff_dim, self.floor_feature_dim, self.category_hidden];
        if widths
            .iter()
            .chain(&self.floor_hidden)
            .chain(&self.decoder_dims)
            .any(|&w| w == 0)
        {
            return fail("layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layout {
    pos: Linear,
    dim: Linear,
    rot: Linear,
    cat_hidden: Linear,
    cat_out: Linear,
    floor_mlp: Vec<Linear>,
    floor_out: Linear,
    noise: Linear,
    layers: Vec<EncoderLayer>,
    decoder: Vec<Linear>,
}

impl Layout {
    fn build(cfg: &DenoiserConfig) -> (Self, ParamBuilder) {
        let mut b = ParamBuilder::default();
        let a = cfg.attr_dim;
        let pos = b.linear(3 * PE_DIM, a);
        let dim = b.linear(3 * PE_DIM, a);
        let rot = b.linear(2 * PE_DIM, a);
        let cat_hidden = b.linear(cfg.vocab_size + 1, cfg.category_hidden);
        let cat_out = b.linear(cfg.category_hidden, a);
        let mut floor_mlp = Vec::new();
        let mut width = 2;
        for &w in cfg.floor_hidden.iter().chain([&cfg.floor_feature_dim]) {
            floor_mlp.push(b.linear(width, w));
            width = w;
        }
        let floor_out = b.linear(cfg.floor_feature_dim, cfg.token_dim);
        let noise = b.linear(PE_DIM, cfg.token_dim);
        let layers = (0..cfg.n_layers)
            .map(|_| EncoderLayer::new(&mut b, cfg.token_dim, cfg.n_heads, cfg.ff_dim))
            .collect();
        let mut decoder = Vec::new();
        let mut width = cfg.token_dim;
        for &w in &cfg.decoder_dims {
            decoder.push(b.linear(width, w));
            width = w;
        }
        (
            Self {
                pos,
                dim,
                rot,
                cat_hidden,
                cat_out,
                floor_mlp,
                floor_out,
                noise,
                layers,
                decoder,
            },
            b,
        )
    }
}

/// Total trainable parameter count of the network described by `cfg`.
pub fn param_count(cfg: &DenoiserConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(Layout::build(cfg).1.len())
}

/// Encoder input: `[floor, noise, objects...]` with a per-token padding flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub padding: Vec<bool>,
}

enum FloorInput<'a> {
    Points(&'a [Vec2]),
    Token(&'a Array1<f64>),
}

struct FloorCache {
    points: Array2<f64>,
    /// Pre-activations and activations of each shared layer.
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
    argmax: Vec<usize>,
    pooled: Array2<f64>,
}

struct EmbedCache {
    pe_pos: Array2<f64>,
    pe_dim: Array2<f64>,
    pe_rot: Array2<f64>,
    one_hot: Array2<f64>,
    cat_pre: Array2<f64>,
    cat_act: Array2<f64>,
    floor: Option<FloorCache>,
    noise_pe: Array2<f64>,
    noise_pre: Array2<f64>,
}

struct TrunkCache {
    layers: Vec<EncoderLayerCache>,
    object_rows: Vec<usize>,
    seq_len: usize,
    /// Inputs of each decoder linear layer.
    dec_in: Vec<Array2<f64>>,
    dec_pre: Vec<Array2<f64>>,
    dec_mask: Vec<Option<Array2<f64>>>,
}

/// Activations recorded by a training forward pass.
pub struct ForwardCache {
    embed: EmbedCache,
    trunk: TrunkCache,
}

fn pe_block(values: impl Iterator<Item = f64>, rows: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, width * PE_DIM));
    for (k, v) in values.enumerate() {
        let (r, c) = (k / width, k % width);
        let mut row = out.row_mut(r);
        let slice = row.as_slice_mut().expect("contiguous row");
        write_positional_encoding(v, &mut slice[c * PE_DIM..(c + 1) * PE_DIM]);
    }
    out
}

/// The trainable raw network with its flat parameter vector.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: DenoiserConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl DenoiserNet {
    /// Fresh network with fan-in scaled uniform weights.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, builder) = Layout::build(&config);
        let params = builder.initialize(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, builder) = Layout::build(&config);
        if params.len() != builder.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                builder.len(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn category_matrix(&self, categories: Option<&[usize]>, n: usize) -> Result<Array2<f64>> {
        let k = self.config.vocab_size;
        let mut m = Array2::zeros((n, k + 1));
        for i in 0..n {
            let c = match categories {
                Some(c) if c[i] >= k => {
                    return Err(Error::invalid(format!(
                        "category {} outside vocabulary of {k}",
                        c[i]
                    )))
                }
                Some(c) => c[i],
                None => k,
            };
            m[[i, c]] = 1.0;
        }
        Ok(m)
    }

    /// Token of one object given its one-hot over `vocab_size + 1` slots.
    pub fn encode_object(&self, x: &Spatial, one_hot: &[f64]) -> Result<Array1<f64>> {
        if one_hot.len() != self.config.vocab_size + 1 {
            return Err(Error::invalid(format!(
                "one-hot has {} slots, expected {}",
                one_hot.len(),
                self.config.vocab_size + 1
            )));
        }
        if x.iter().chain(one_hot).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite object input"));
        }
        let one_hot = Array2::from_shape_vec((1, one_hot.len()), one_hot.to_vec()).expect("row");
        let (tokens, _) = self.embed_objects(&[*x], one_hot);
        Ok(tokens.row(0).to_owned())
    }

    fn embed_objects(&self, x: &[Spatial], one_hot: Array2<f64>) -> (Array2<f64>, EmbedCache) {
        let p = &self.params;
        let l = &self.layout;
        let n = x.len();
        let a = self.config.attr_dim;
        let pe_pos = pe_block(x.iter().flat_map(|r| r[0..3].to_vec()), n, 3);
        let pe_rot = pe_block(x.iter().flat_map(|r| r[3..5].to_vec()), n, 2);
        let pe_dim = pe_block(x.iter().flat_map(|r| r[5..8].to_vec()), n, 3);
        let cat_pre = l.cat_hidden.forward(p, &one_hot.view());
        let cat_act = leaky_relu(&cat_pre);
        let mut tokens = Array2::zeros((n, 4 * a));
        tokens
            .slice_mut(s![.., 0..a])
            .assign(&l.pos.forward(p, &pe_pos.view()));
        tokens
            .slice_mut(s![.., a..2 * a])
            .assign(&l.dim.forward(p, &pe_dim.view()));
        tokens
            .slice_mut(s![.., 2 * a..3 * a])
            .assign(&l.rot.forward(p, &pe_rot.view()));
        tokens
            .slice_mut(s![.., 3 * a..4 * a])
            .assign(&l.cat_out.forward(p, &cat_act.view()));
        let cache = EmbedCache {
            pe_pos,
            pe_dim,
            pe_rot,
            one_hot,
            cat_pre,
            cat_act,
            floor: None,
            noise_pe: Array2::zeros((0, 0)),
            noise_pre: Array2::zeros((0, 0)),
        };
        (tokens, cache)
    }

    /// Permutation-invariant point-set token of floor contour points.
    pub fn encode_floor(&self, points: &[Vec2]) -> Result<Array1<f64>> {
        if points.is_empty() {
            return Err(Error::invalid("empty floor point set"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite floor point"));
        }
        Ok(self.floor_forward(points).0)
    }

    fn floor_forward(&self, points: &[Vec2]) -> (Array1<f64>, FloorCache) {
        let p = &self.params;
        let pts = Array2::from_shape_fn((points.len(), 2), |(i, c)| {
            if c == 0 {
                points[i].x
            } else {
                points[i].y
            }
        });
        let mut pre = Vec::new();
        let mut act = Vec::new();
        let mut h = pts.clone();
        let last = self.layout.floor_mlp.len() - 1;
        for (i, lin) in self.layout.floor_mlp.iter().enumerate() {
            let z = lin.forward(p, &h.view());
            h = if i < last { leaky_relu(&z) } else { z.clone() };
            pre.push(z);
            act.push(h.clone());
        }
        let feat = act.last().expect("at least one layer");
        let argmax: Vec<usize> = feat
            .columns()
            .into_iter()
            .map(|col| {
                col.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                    )
                    .0
            })
            .collect();
        let pooled = Array2::from_shape_fn((1, feat.ncols()), |(_, c)| feat[[argmax[c], c]]);
        let token = self
            .layout
            .floor_out
            .forward(p, &pooled.view())
            .row(0)
            .to_owned();
        (
            token,
            FloorCache {
                points: pts,
                pre,
                act,
                argmax,
                pooled,
            },
        )
    }

    /// Noise-level token of `c_noise(σ)`.
    pub fn encode_noise(&self, sigma: f64) -> Array1<f64> {
        self.encode_noise_scalar(crate::diffusion::c_noise(sigma))
    }

    pub fn encode_noise_scalar(&self, c_noise: f64) -> Array1<f64> {
        self.noise_forward(c_noise).0.row(0).to_owned()
    }

    fn noise_forward(&self, c_noise: f64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let pe = pe_block(std::iter::once(c_noise), 1, 1);
        let pre = self.layout.noise.forward(&self.params, &pe.view());
        (leaky_relu(&pre), pe, pre)
    }

    fn embed(
        &self,
        x_in: &[Spatial],
        categories: Option<&[usize]>,
        floor: FloorInput<'_>,
        c_noise: f64,
    ) -> Result<(Array2<f64>, EmbedCache)> {
        if x_in.is_empty() {
            return Err(Error::invalid("at least one object is required"));
        }
        if x_in.len() > self.config.max_objects {
            return Err(Error::Capacity {
                requested: x_in.len(),
                capacity: self.config.max_objects,
            });
        }
        if !c_noise.is_finite() {
            return Err(Error::invalid("non-finite noise level"));
        }
        let one_hot = self.category_matrix(categories, x_in.len())?;
        let (objects, mut cache) = self.embed_objects(x_in, one_hot);
        let d = self.config.token_dim;
        let mut tokens = Array2::zeros((2 + x_in.len(), d));
        match floor {
            FloorInput::Points(points) => {
                let (tok, fc) = self.floor_forward(points);
                tokens.row_mut(0).assign(&tok);
                cache.floor = Some(fc);
            }
            FloorInput::Token(tok) => tokens.row_mut(0).assign(tok),
        }
        let (noise, pe, pre) = self.noise_forward(c_noise);
        tokens.row_mut(1).assign(&noise.row(0));
        cache.noise_pe = pe;
        cache.noise_pre = pre;
        tokens.slice_mut(s![2.., ..]).assign(&objects);
        Ok((tokens, cache))
    }

    /// Token sequence padded to `max_objects` object slots.
    pub fn tokens(
        &self,
        x_in: &[Spatial],
        cond: &Conditioning,
        c_noise: f64,
    ) -> Result<TokenSequence> {
        check_shapes(x_in, cond)?;
        let contour = sample_contour(&cond.floor, self.config.floor_points)?;
        let (real, _) = self.embed(
            x_in,
            cond.categories.as_deref(),
            FloorInput::Points(&contour),
            c_noise,
        )?;
        let slots = 2 + self.config.max_objects;
        let mut tokens = Array2::zeros((slots, self.config.token_dim));
        tokens.slice_mut(s![..real.nrows(), ..]).assign(&real);
        let padding = (0..slots).map(|i| i >= real.nrows()).collect();
        Ok(TokenSequence { tokens, padding })
    }

    /// Raw outputs for every unpadded object slot, in slot order.
    pub fn forward(&self, seq: &TokenSequence) -> Result<Vec<Spatial>> {
        if seq.tokens.ncols() != self.config.token_dim || seq.tokens.nrows() != seq.padding.len() {
            return Err(Error::invalid(
                "token sequence shape does not match the network",
            ));
        }
        if seq.padding.len() < 2 || seq.padding[0] || seq.padding[1] {
            return Err(Error::invalid("floor and noise tokens must not be padded"));
        }
        if seq.padding[2..].iter().all(|&m| m) {
            return Err(Error::invalid("every object slot is padded"));
        }
        Ok(to_rows(
            &self.trunk(seq.tokens.clone(), &seq.padding, None).0,
        ))
    }

    fn trunk(
        &self,
        mut x: Array2<f64>,
        padding: &[bool],
        dropout_seed: Option<u64>,
    ) -> (Array2<f64>, TrunkCache) {
        let p = &self.params;
        let mut layer_caches = Vec::with_capacity(self.layout.layers.len());
        for layer in &self.layout.layers {
            let (y, c) = layer.forward(p, x, padding);
            layer_caches.push(c);
            x = y;
        }
        let object_rows: Vec<usize> = (2..padding.len()).filter(|&i| !padding[i]).collect();
        let mut h = x.select(Axis(0), &object_rows);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let keep = 1.0 - self.config.decoder_dropout;
        let (mut dec_in, mut dec_pre, mut dec_mask) = (Vec::new(), Vec::new(), Vec::new());
        let last = self.layout.decoder.len() - 1;
        for (i, lin) in self.layout.decoder.iter().enumerate() {
            let z = lin.forward(p, &h.view());
            dec_in.push(std::mem::replace(&mut h, Array2::zeros((0, 0))));
            if i == last {
                h = z.clone();
                dec_pre.push(z);
                dec_mask.push(None);
                continue;
            }
            let mut a = leaky_relu(&z);
            let mask = rng.as_mut().map(|r| {
                Array2::from_shape_simple_fn(a.raw_dim(), || {
                    if r.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            if let Some(m) = &mask {
                a *= m;
            }
            dec_pre.push(z);
            dec_mask.push(mask);
            h = a;
        }
        (
            h,
            TrunkCache {
                layers: layer_caches,
                object_rows,
                seq_len: padding.len(),
                dec_in,
                dec_pre,
                dec_mask,
            },
        )
    }

    /// Training forward pass with recorded activations.
    pub fn forward_train(
        &self,
        x_in: &[Spatial],
        cond: &Conditioning,
        c_noise: f64,
        dropout_seed: Option<u64>,
    ) -> Result<(Vec<Spatial>, ForwardCache)> {
        check_shapes(x_in, cond)?;
        let contour = sample_contour(&cond.floor, self.config.floor_points)?;
        let (tokens, embed) = self.embed(
            x_in,
            cond.categories.as_deref(),
            FloorInput::Points(&contour),
            c_noise,
        )?;
        let padding = vec![false; tokens.nrows()];
        let (out, trunk) = self.trunk(tokens, &padding, dropout_seed);
        Ok((to_rows(&out), ForwardCache { embed, trunk }))
    }

    /// Accumulates the parameter gradient for an output gradient `d_out`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &[Spatial],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        if d_out.len() != cache.trunk.object_rows.len() {
            return Err(Error::invalid(
                "output gradient does not match the forward pass",
            ));
        }
        let p = &self.params;
        let t = &cache.trunk;
        let mut dh = Array2::from_shape_fn((d_out.len(), 8), |(i, c)| d_out[i][c]);
        for (i, lin) in self.layout.decoder.iter().enumerate().rev() {
            if let Some(m) = &t.dec_mask[i] {
                dh *= m;
            }
            if i + 1 < self.layout.decoder.len() {
                dh = leaky_relu_backward(&t.dec_pre[i], &dh);
            }
            dh = lin.backward(p, grad, &t.dec_in[i].view(), &dh.view());
        }
        let mut dx = Array2::zeros((t.seq_len, self.config.token_dim));
        for (k, &row) in t.object_rows.iter().enumerate() {
            dx.row_mut(row).assign(&dh.row(k));
        }
        for (layer, c) in self.layout.layers.iter().zip(&t.layers).rev() {
            dx = layer.backward(p, grad, c, &dx);
        }
        self.embed_backward(&cache.embed, &dx, grad);
        Ok(())
    }

    fn embed_backward(&self, c: &EmbedCache, dx: &Array2<f64>, grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let a = self.config.attr_dim;
        let dobj = dx.slice(s![2.., ..]);
        l.pos
            .backward_params(grad, &c.pe_pos.view(), &dobj.slice(s![.., 0..a]));
        l.dim
            .backward_params(grad, &c.pe_dim.view(), &dobj.slice(s![.., a..2 * a]));
        l.rot
            .backward_params(grad, &c.pe_rot.view(), &dobj.slice(s![.., 2 * a..3 * a]));
        let dcat = l.cat_out.backward(
            p,
            grad,
            &c.cat_act.view(),
            &dobj.slice(s![.., 3 * a..4 * a]),
        );
        let dcat = leaky_relu_backward(&c.cat_pre, &dcat);
        l.cat_hidden
            .backward_params(grad, &c.one_hot.view(), &dcat.view());

        let dnoise = dx.slice(s![1..2, ..]).to_owned();
        let dnoise = leaky_relu_backward(&c.noise_pre, &dnoise);
        l.noise
            .backward_params(grad, &c.noise_pe.view(), &dnoise.view());

        if let Some(f) = &c.floor {
            let dfloor = dx.slice(s![0..1, ..]).to_owned();
            let dpooled = l
                .floor_out
                .backward(p, grad, &f.pooled.view(), &dfloor.view());
            let last = f.act.len() - 1;
            let mut dh = Array2::zeros(f.act[last].raw_dim());
            for (col, &row) in f.argmax.iter().enumerate() {
                dh[[row, col]] += dpooled[[0, col]];
            }
            for i in (0..l.floor_mlp.len()).rev() {
                if i < last {
                    dh = leaky_relu_backward(&f.pre[i], &dh);
                }
                let input: ArrayView2<f64> = if i == 0 {
                    f.points.view()
                } else {
                    f.act[i - 1].view()
                };
                if i == 0 {
                    l.floor_mlp[0].backward_params(grad, &input, &dh.view());
                } else {
                    dh = l.floor_mlp[i].backward(p, grad, &input, &dh.view());
                }
            }
        }
    }
}

fn to_rows(out: &Array2<f64>) -> Vec<Spatial> {
    out.rows()
        .into_iter()
        .map(|r| std::array::from_fn(|c| r[c]))
        .collect()
}

impl RawNetwork for DenoiserNet {
    fn raw_forward(
        &self,
        x_in: &[Spatial],
        cond: &Conditioning,
        c_noise: f64,
        dropout_seed: Option<u64>,
    ) -> Result<Vec<Spatial>> {
        Ok(self.forward_train(x_in, cond, c_noise, dropout_seed)?.0)
    }
}

/// A trained network together with its data statistics; binds to a
/// conditioning to give a preconditioned denoiser.
#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub net: DenoiserNet,
    pub sigma_data: ChannelSigmaData,
}

struct BoundDenoiser<'a> {
    model: &'a TrainedDenoiser,
    floor_token: Array1<f64>,
    categories: Option<Vec<usize>>,
}

impl Denoiser for BoundDenoiser<'_> {
    fn denoise(&self, x: &[Spatial], sigma: f64) -> Result<Vec<Spatial>> {
        if let Some(c) = &self.categories {
            if c.len() != x.len() {
                return Err(Error::invalid(
                    "bound categories do not match the layout size",
                ));
            }
        }
        let k = precondition_coeffs(sigma, &self.model.sigma_data)?;
        let x_in: Vec<Spatial> = x
            .iter()
            .map(|r| std::array::from_fn(|c| k.c_in[c] * r[c]))
            .collect();
        let net = &self.model.net;
        let (tokens, _) = net.embed(
            &x_in,
            self.categories.as_deref(),
            FloorInput::Token(&self.floor_token),
            k.c_noise,
        )?;
        let padding = vec![false; tokens.nrows()];
        let raw = to_rows(&net.trunk(tokens, &padding, None).0);
        Ok(x.iter()
            .zip(&raw)
            .map(|(x, f)| std::array::from_fn(|c| k.c_skip[c] * x[c] + k.c_out[c] * f[c]))
            .collect())
    }
}

impl LayoutModel for TrainedDenoiser {
    fn bind<'a>(&'a self, cond: &Conditioning) -> Result<Box<dyn Denoiser + 'a>> {
        let contour = sample_contour(&cond.floor, self.net.config.floor_points)?;
        Ok(Box::new(BoundDenoiser {
            model: self,
            floor_token: self.net.floor_forward(&contour).0,
            categories: cond.categories.clone(),
        }))
    }

    fn vocab_size(&self) -> usize {
        self.net.config.vocab_size
    }

    fn max_objects(&self) -> usize {
        self.net.config.max_objects
    }
}

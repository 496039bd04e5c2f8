//! The saliency network: a patch-8 ViT adapter producing a token map, a
//! three-level feature pyramid, dynamic upsampling, the edge-preserving
//! branch with a residual channel-attention block, and the saliency head.

use ndarray::{Array1, Array2, Array4, Ix1, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{view4, Graph, Tensor, Var};
use crate::error::{ModelError, Result};
use crate::params::{Ctx, ParamStore};

pub const PATCH: usize = 8;
const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Upsampler {
    #[default]
    Dynamic,
    /// Plain bilinear resize in place of every dynamic upsampling stage.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Channels of f1 (stride 32), f2 (stride 16) and f3 (stride 8).
    pub pyramid_channels: [usize; 3],
    pub head_channels: usize,
    pub scope_factor: f64,
    pub reduction: usize,
    pub dropout: f64,
    pub edge_decoder: bool,
    pub upsampler: Upsampler,
}

impl Default for ModelConfig {
    /// ViT-S sized adapter.
    fn default() -> Self {
        ModelConfig {
            embed_dim: 384,
            depth: 12,
            heads: 6,
            mlp_ratio: 4,
            pyramid_channels: [128, 128, 64],
            head_channels: 64,
            scope_factor: 0.25,
            reduction: 16,
            dropout: 0.1,
            edge_decoder: true,
            upsampler: Upsampler::Dynamic,
        }
    }
}

impl ModelConfig {
    /// Small configuration for CPU-scale experiments.
    pub fn toy() -> Self {
        ModelConfig {
            embed_dim: 32,
            depth: 1,
            heads: 4,
            mlp_ratio: 2,
            pyramid_channels: [16, 16, 16],
            head_channels: 16,
            ..ModelConfig::default()
        }
    }

    pub fn edge_channels(&self) -> usize {
        self.pyramid_channels[1] + self.pyramid_channels[2]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let [c1, c2, c3] = self.pyramid_channels;
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            return bad(format!("embed_dim {} must be a positive multiple of 4", self.embed_dim));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if c1 == 0 || c3 == 0 || self.head_channels == 0 || self.mlp_ratio == 0 {
            return bad("channel counts must be positive".into());
        }
        if c1 != c2 {
            return bad(format!(
                "f1 and f2 are added, so their channels must match ({c1} vs {c2})"
            ));
        }
        if self.reduction == 0 {
            return bad("reduction must be positive".into());
        }
        if self.edge_decoder && self.edge_channels() < self.reduction {
            return bad(format!(
                "edge feature has {} channels, fewer than the reduction ratio {}",
                self.edge_channels(),
                self.reduction
            ));
        }
        if !(self.scope_factor > 0.0 && self.scope_factor.is_finite()) {
            return bad(format!("scope_factor {} must be positive", self.scope_factor));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

// ---- initialization ----------------------------------------------------------

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..=bound))
}

pub fn init_conv(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, co: usize, ci: usize, k: usize) {
    let bound = 1.0 / ((ci * k * k) as f64).sqrt();
    store.insert_param(format!("{name}.weight"), uniform(rng, &[co, ci, k, k], bound));
    store.insert_param(format!("{name}.bias"), uniform(rng, &[co], bound));
}

fn init_zero_conv(store: &mut ParamStore, name: &str, co: usize, ci: usize) {
    store.insert_param(format!("{name}.weight"), Tensor::zeros(IxDyn(&[co, ci, 1, 1])));
    store.insert_param(format!("{name}.bias"), Tensor::zeros(IxDyn(&[co])));
}

pub fn init_norm(store: &mut ParamStore, name: &str, c: usize, running: bool) {
    store.insert_param(format!("{name}.weight"), Tensor::ones(IxDyn(&[c])));
    store.insert_param(format!("{name}.bias"), Tensor::zeros(IxDyn(&[c])));
    if running {
        store.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(IxDyn(&[c])));
        store.insert_buffer(format!("{name}.running_var"), Tensor::ones(IxDyn(&[c])));
    }
}

/// Offset projection of a dynamic upsampler; zero so the fresh stage is a
/// plain bilinear upsample.
pub fn init_dysample(store: &mut ParamStore, name: &str, channels: usize, scale: usize) {
    init_zero_conv(store, &format!("{name}.offset"), 2 * scale * scale, channels);
}

pub fn init_rcab(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, reduction: usize) {
    init_conv(store, rng, &format!("{name}.conv1"), c, c, 3);
    init_conv(store, rng, &format!("{name}.conv2"), c, c, 3);
    init_conv(store, rng, &format!("{name}.ca_down"), c / reduction, c, 1);
    init_conv(store, rng, &format!("{name}.ca_up"), c, c / reduction, 1);
}

// ---- layers ------------------------------------------------------------------

pub fn conv(ctx: &Ctx, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = ctx.param(&format!("{name}.weight"))?;
    let b = ctx.param(&format!("{name}.bias"))?;
    let (xs, ws) = (ctx.graph.shape(x), ctx.graph.shape(w));
    if xs.len() != 4 || xs[1] != ws[1] {
        return Err(ModelError::Shape(format!("{name}: input {xs:?} vs weight {ws:?}")));
    }
    if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
        return Err(ModelError::Shape(format!("{name}: input {xs:?} smaller than kernel")));
    }
    Ok(ctx.graph.conv2d(x, w, Some(b), stride, pad))
}

pub fn batch_norm(ctx: &Ctx, name: &str, x: Var) -> Result<Var> {
    let gamma = ctx.param(&format!("{name}.weight"))?;
    let beta = ctx.param(&format!("{name}.bias"))?;
    if ctx.is_train() {
        let (y, stats) = ctx.graph.batch_norm(x, gamma, beta, None, BN_EPS);
        if let Some((m, v)) = stats {
            ctx.record_bn(name, m, v);
        }
        Ok(y)
    } else {
        let rm = as_vec(ctx.buffer(&format!("{name}.running_mean"))?);
        let rv = as_vec(ctx.buffer(&format!("{name}.running_var"))?);
        Ok(ctx.graph.batch_norm(x, gamma, beta, Some((&rm, &rv)), BN_EPS).0)
    }
}

fn as_vec(t: &Tensor) -> Array1<f64> {
    t.view().into_dimensionality::<Ix1>().expect("rank-1 tensor").to_owned()
}

pub fn layer_norm(ctx: &Ctx, name: &str, x: Var) -> Result<Var> {
    let gamma = ctx.param(&format!("{name}.weight"))?;
    let beta = ctx.param(&format!("{name}.bias"))?;
    Ok(ctx.graph.layer_norm_channels(x, gamma, beta, LN_EPS))
}

fn dims(g: &Graph, x: Var) -> (usize, usize, usize, usize) {
    let s = g.shape(x);
    (s[0], s[1], s[2], s[3])
}

// ---- backbone adapter --------------------------------------------------------

/// Fixed 2-D sinusoidal encoding, `C x h x w`; channels are four equal groups
/// `sin(y w_k), cos(y w_k), sin(x w_k), cos(x w_k)`.
pub fn positional_encoding(c: usize, h: usize, w: usize) -> ndarray::Array3<f64> {
    let q = c / 4;
    ndarray::Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let (group, k) = (ch / q, ch % q);
        let freq = 1.0 / 10000f64.powf(k as f64 / q as f64);
        match group {
            0 => (y as f64 * freq).sin(),
            1 => (y as f64 * freq).cos(),
            2 => (x as f64 * freq).sin(),
            _ => (x as f64 * freq).cos(),
        }
    })
}

pub fn init_backbone(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) {
    let e = cfg.embed_dim;
    init_conv(store, rng, "embed.patch", e, 3, PATCH);
    for i in 0..cfg.depth {
        let p = format!("embed.blocks.{i}");
        init_norm(store, &format!("{p}.ln1"), e, false);
        init_conv(store, rng, &format!("{p}.qkv"), 3 * e, e, 1);
        init_conv(store, rng, &format!("{p}.proj"), e, e, 1);
        init_norm(store, &format!("{p}.ln2"), e, false);
        init_conv(store, rng, &format!("{p}.fc1"), cfg.mlp_ratio * e, e, 1);
        init_conv(store, rng, &format!("{p}.fc2"), e, cfg.mlp_ratio * e, 1);
    }
    init_norm(store, "embed.norm", e, false);
}

/// Token map `N x C x H/8 x W/8` of an image batch `N x 3 x H x W`.
pub fn embed(ctx: &Ctx, cfg: &ModelConfig, image: Var) -> Result<Var> {
    let s = ctx.graph.shape(image);
    if s.len() != 4 || s[1] != 3 {
        return Err(ModelError::Shape(format!("expected N x 3 x H x W image, got {s:?}")));
    }
    let (n, _, h, w) = (s[0], s[1], s[2], s[3]);
    if h == 0 || w == 0 || h % PATCH != 0 || w % PATCH != 0 {
        return Err(ModelError::Shape(format!(
            "image {h}x{w} is not divisible by the patch size {PATCH}"
        )));
    }
    let g = &ctx.graph;
    let mut x = conv(ctx, "embed.patch", image, PATCH, 0)?;
    let (th, tw) = (h / PATCH, w / PATCH);
    let pe = positional_encoding(cfg.embed_dim, th, tw);
    let tiled = Array4::from_shape_fn((n, cfg.embed_dim, th, tw), |(_, c, y, q)| pe[(c, y, q)]);
    x = g.add_const(x, &tiled.into_dyn());
    for i in 0..cfg.depth {
        let p = format!("embed.blocks.{i}");
        let a = layer_norm(ctx, &format!("{p}.ln1"), x)?;
        let qkv = conv(ctx, &format!("{p}.qkv"), a, 1, 0)?;
        let att = g.attention(qkv, cfg.heads);
        let att = conv(ctx, &format!("{p}.proj"), att, 1, 0)?;
        x = g.add(x, ctx.dropout(att, cfg.dropout));
        let m = layer_norm(ctx, &format!("{p}.ln2"), x)?;
        let m = g.gelu(conv(ctx, &format!("{p}.fc1"), m, 1, 0)?);
        let m = conv(ctx, &format!("{p}.fc2"), ctx.dropout(m, cfg.dropout), 1, 0)?;
        x = g.add(x, ctx.dropout(m, cfg.dropout));
    }
    layer_norm(ctx, "embed.norm", x)
}

// ---- pyramid -----------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    /// Stride 32.
    pub f1: Var,
    /// Stride 16.
    pub f2: Var,
    /// Stride 8.
    pub f3: Var,
}

pub fn init_pyramid(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) {
    let e = cfg.embed_dim;
    let [c1, c2, c3] = cfg.pyramid_channels;
    init_conv(store, rng, "pyramid.f3", c3, e, 1);
    init_conv(store, rng, "pyramid.f2", c2, e, 2);
    init_conv(store, rng, "pyramid.f1", c1, e, 4);
}

pub fn build_pyramid(ctx: &Ctx, tm: Var) -> Result<FeaturePyramid> {
    let (_, _, h, w) = dims(&ctx.graph, tm);
    if h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
        return Err(ModelError::Shape(format!(
            "token map {h}x{w} cannot be strided by 4 (input sides must be multiples of 32)"
        )));
    }
    Ok(FeaturePyramid {
        f3: conv(ctx, "pyramid.f3", tm, 1, 0)?,
        f2: conv(ctx, "pyramid.f2", tm, 2, 0)?,
        f1: conv(ctx, "pyramid.f1", tm, 4, 0)?,
    })
}

// ---- dynamic upsampling ------------------------------------------------------

/// `x` upsampled by `scale`, sampling the bilinear field of `x` at the regular
/// finer grid displaced by `scope * offsets`, where the offsets are a 1x1
/// projection of `x` rearranged to one `(dx, dy)` pair per output pixel.
pub fn dynamic_upsample(ctx: &Ctx, name: &str, x: Var, scale: usize, scope: f64, mode: Upsampler) -> Result<Var> {
    if scale < 2 {
        return Err(ModelError::Config(format!(
            "upsampling scale {scale} must be at least 2"
        )));
    }
    let g = &ctx.graph;
    let (_, _, h, w) = dims(g, x);
    match mode {
        Upsampler::Bilinear => Ok(g.resize_bilinear(x, h * scale, w * scale)),
        Upsampler::Dynamic => {
            let raw = conv(ctx, &format!("{name}.offset"), x, 1, 0)?;
            let offsets = g.pixel_shuffle(raw, scale);
            Ok(g.offset_sample(x, offsets, scale, scope))
        }
    }
}

/// Stand-alone dynamic upsampler with an explicit offset projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DySampleParams {
    pub scale: usize,
    pub scope_factor: f64,
    /// `2 s^2 x C`; row `d*s*s + i*s + j` is the `d` (0 = x, 1 = y) offset of
    /// sub-pixel `(i, j)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DySampleParams {
    /// The required initialization: an all-zero projection.
    pub fn new(channels: usize, scale: usize, scope_factor: f64) -> Result<Self> {
        let p = DySampleParams {
            scale,
            scope_factor,
            weight: Array2::zeros((2 * scale * scale, channels)),
            bias: Array1::zeros(2 * scale * scale),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(ModelError::Config(format!("scale {} must be at least 2", self.scale)));
        }
        if !(self.scope_factor > 0.0) {
            return Err(ModelError::Config(format!(
                "scope_factor {} must be positive",
                self.scope_factor
            )));
        }
        let rows = 2 * self.scale * self.scale;
        if self.weight.nrows() != rows || self.bias.len() != rows {
            return Err(ModelError::Shape(format!("offset projection must have {rows} rows")));
        }
        Ok(())
    }

    pub fn store_into(&self, store: &mut ParamStore, name: &str) {
        let (r, c) = self.weight.dim();
        let w = self
            .weight
            .clone()
            .into_shape_with_order(IxDyn(&[r, c, 1, 1]))
            .expect("weight layout");
        store.insert_param(format!("{name}.offset.weight"), w);
        store.insert_param(format!("{name}.offset.bias"), self.bias.clone().into_dyn());
    }

    /// Upsamples a batch `N x C x h x w`.
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.validate()?;
        if x.dim().1 != self.weight.ncols() {
            return Err(ModelError::Shape(format!(
                "input has {} channels, projection expects {}",
                x.dim().1,
                self.weight.ncols()
            )));
        }
        let mut store = ParamStore::new();
        self.store_into(&mut store, "dy");
        let ctx = Ctx::inference(&store);
        let xv = ctx.graph.constant(x.clone().into_dyn());
        let y = dynamic_upsample(&ctx, "dy", xv, self.scale, self.scope_factor, Upsampler::Dynamic)?;
        Ok(view4(&ctx.graph.value(y)).to_owned())
    }
}

// ---- RCAB --------------------------------------------------------------------

/// `x + ca(conv(relu(conv(x))))`, where `ca` gates channels with
/// `sigmoid(up(relu(down(gap(.)))))` through a `C / reduction` bottleneck.
pub fn rcab(ctx: &Ctx, name: &str, x: Var, reduction: usize) -> Result<Var> {
    let g = &ctx.graph;
    let (_, c, _, _) = dims(g, x);
    if reduction == 0 || c < reduction {
        return Err(ModelError::Config(format!(
            "RCAB on {c} channels needs at least the reduction ratio {reduction}"
        )));
    }
    let r = conv(ctx, &format!("{name}.conv1"), x, 1, 1)?;
    let r = conv(ctx, &format!("{name}.conv2"), g.relu(r), 1, 1)?;
    let s = g.global_avg_pool(r);
    let s = g.relu(conv(ctx, &format!("{name}.ca_down"), s, 1, 0)?);
    let gate = g.sigmoid(conv(ctx, &format!("{name}.ca_up"), s, 1, 0)?);
    Ok(g.add(x, g.mul_channel(r, gate)))
}

// ---- edge branch -------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct EdgeBranchOutput {
    /// Fused edge feature at stride 8 (the RCAB output).
    pub f_e: Var,
    /// `N x 1 x H x W` pre-activation edge map.
    pub edge_logits: Var,
}

pub fn init_edge_branch(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) {
    let [c1, c2, _] = cfg.pyramid_channels;
    let ce = cfg.edge_channels();
    init_dysample(store, "edge.up1", c1, 2);
    init_norm(store, "edge.bn1", c1, true);
    init_dysample(store, "edge.up2", c2, 2);
    init_rcab(store, rng, "edge.rcab", ce, cfg.reduction);
    init_conv(store, rng, "edge.out", 1, ce, 1);
}

/// f1 -> up -> ReLU -> BN -> + f2 -> up -> concat f3 -> RCAB = f_e;
/// edge logits are a 1x1 projection of f_e resized to `out_hw`.
pub fn edge_branch(
    ctx: &Ctx,
    cfg: &ModelConfig,
    fp: &FeaturePyramid,
    out_hw: (usize, usize),
) -> Result<EdgeBranchOutput> {
    let g = &ctx.graph;
    let (n1, c1, h1, w1) = dims(g, fp.f1);
    let (n2, c2, h2, w2) = dims(g, fp.f2);
    let (n3, _, h3, w3) = dims(g, fp.f3);
    if n1 != n2 || n2 != n3 || c1 != c2 || (h2, w2) != (2 * h1, 2 * w1) || (h3, w3) != (2 * h2, 2 * w2) {
        return Err(ModelError::Shape(format!(
            "pyramid misconfigured: f1 {:?}, f2 {:?}, f3 {:?}",
            (n1, c1, h1, w1),
            (n2, c2, h2, w2),
            dims(g, fp.f3)
        )));
    }
    let up = |name: &str, x: Var| dynamic_upsample(ctx, name, x, 2, cfg.scope_factor, cfg.upsampler);
    let a = up("edge.up1", fp.f1)?;
    let a = batch_norm(ctx, "edge.bn1", g.relu(a))?;
    let a = g.add(a, fp.f2);
    let a = up("edge.up2", a)?;
    let cat = g.concat_channels(a, fp.f3);
    let f_e = rcab(ctx, "edge.rcab", cat, cfg.reduction)?;
    let logits = conv(ctx, "edge.out", f_e, 1, 0)?;
    let edge_logits = g.resize_bilinear(logits, out_hw.0, out_hw.1);
    Ok(EdgeBranchOutput { f_e, edge_logits })
}

// ---- saliency head -----------------------------------------------------------

pub fn init_saliency_head(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) {
    let c3 = cfg.pyramid_channels[2];
    let cin = if cfg.edge_decoder { c3 + cfg.edge_channels() } else { c3 };
    let hc = cfg.head_channels;
    init_conv(store, rng, "head.conv", hc, cin, 3);
    init_norm(store, "head.bn", hc, true);
    init_dysample(store, "head.up1", hc, 4);
    init_dysample(store, "head.up2", hc, 2);
    init_conv(store, rng, "head.out", 1, hc, 1);
}

/// `[f3, f_e]` -> 3x3 conv + BN + ReLU -> up x4 -> up x2 -> 1x1 conv: saliency
/// logits at 8x the resolution of f3.
pub fn saliency_head(
    ctx: &Ctx,
    cfg: &ModelConfig,
    fp: &FeaturePyramid,
    edge: Option<&EdgeBranchOutput>,
) -> Result<Var> {
    let g = &ctx.graph;
    let x = match edge {
        Some(e) => {
            let (a, b) = (dims(g, fp.f3), dims(g, e.f_e));
            if (a.0, a.2, a.3) != (b.0, b.2, b.3) {
                return Err(ModelError::Shape(format!("f3 {a:?} and f_e {b:?} disagree")));
            }
            g.concat_channels(fp.f3, e.f_e)
        }
        None => fp.f3,
    };
    let x = conv(ctx, "head.conv", x, 1, 1)?;
    let x = g.relu(batch_norm(ctx, "head.bn", x)?);
    let x = dynamic_upsample(ctx, "head.up1", x, 4, cfg.scope_factor, cfg.upsampler)?;
    let x = dynamic_upsample(ctx, "head.up2", x, 2, cfg.scope_factor, cfg.upsampler)?;
    conv(ctx, "head.out", x, 1, 0)
}

// ---- full model --------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    /// `N x 1 x H x W`.
    pub saliency_logits: Var,
    /// `N x 1 x H x W`; absent without the edge decoder.
    pub edge_logits: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_backbone(&mut store, &mut rng, &config);
        init_pyramid(&mut store, &mut rng, &config);
        if config.edge_decoder {
            init_edge_branch(&mut store, &mut rng, &config);
        }
        init_saliency_head(&mut store, &mut rng, &config);
        Ok(Model { config, store })
    }

    /// Input sides must be positive multiples of 32.
    pub fn check_input(h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(ModelError::Shape(format!(
                "input {h}x{w}: sides must be positive multiples of 32"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, ctx: &Ctx, images: Var) -> Result<ModelOutput> {
        let s = ctx.graph.shape(images);
        if s.len() != 4 {
            return Err(ModelError::Shape(format!("expected a 4-D batch, got {s:?}")));
        }
        Self::check_input(s[2], s[3])?;
        let tm = embed(ctx, &self.config, images)?;
        let fp = build_pyramid(ctx, tm)?;
        let edge = if self.config.edge_decoder {
            Some(edge_branch(ctx, &self.config, &fp, (s[2], s[3]))?)
        } else {
            None
        };
        let saliency_logits = saliency_head(ctx, &self.config, &fp, edge.as_ref())?;
        Ok(ModelOutput {
            saliency_logits,
            edge_logits: edge.map(|e| e.edge_logits),
        })
    }

    /// Evaluation-mode saliency probabilities `N x 1 x H x W`.
    pub fn predict(&self, images: &Array4<f64>) -> Result<Array4<f64>> {
        let ctx = Ctx::inference(&self.store);
        let x = ctx.graph.constant(images.clone().into_dyn());
        let out = self.forward(&ctx, x)?;
        let logits = ctx.graph.value(out.saliency_logits);
        Ok(view4(&logits).mapv(crate::autograd::sigmoid))
    }
}

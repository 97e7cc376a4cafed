//! Full RGB-D segmentation model: per-modality patch embedding, fusion
//! block, joint ViT encoder and the ConvNeXt decoder.

use std::fmt;
use std::str::FromStr;

use crate::data::{LabelMask, RgbdSample};
use crate::decoder::{decode, DecoderParams, CHANNEL_DIVISOR, DOWNSAMPLE};
use crate::encoder::{encode, EncoderParams, PatchEmbed};
use crate::error::{Error, Result};
use crate::fusion::{fuse_with_query_source, FusionParams};
use crate::nn::{Ctx, ParamStore};
use crate::tensor::{Element, Tape, Tensor, Var};

pub const RGB_CHANNELS: usize = 3;
pub const DEPTH_CHANNELS: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderInput {
    RgbOnly,
    /// Both encoder streams, concatenated along channels.
    RgbAndDepth,
}

impl fmt::Display for DecoderInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderInput::RgbOnly => "rgb_only",
            DecoderInput::RgbAndDepth => "rgb_and_depth",
        })
    }
}

impl FromStr for DecoderInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb_only" | "rgb" => Ok(DecoderInput::RgbOnly),
            "rgb_and_depth" | "rgb+depth" => Ok(DecoderInput::RgbAndDepth),
            other => Err(Error::config(format!("unknown decoder input '{other}'"))),
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub patch: usize,
    pub embed_dim: usize,
    /// Number of transformer blocks.
    pub depth_blocks: usize,
    pub heads: usize,
    pub fusion_k: usize,
    /// Attention width of the fusion block; `None` means `2 * embed_dim`.
    pub fusion_dim: Option<usize>,
    pub decoder_blocks: usize,
    pub num_classes: usize,
    pub decoder_input: DecoderInput,
    /// When false the depth raster is replaced by zeros and the fusion
    /// query sees the RGB stream twice (RGB-only baseline).
    pub use_depth: bool,
    pub seed: u64,
    pub lr: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale configuration: 64x64 input, 8x8 patches, width 64.
    pub fn toy() -> Self {
        ModelConfig {
            image_h: 64,
            image_w: 64,
            patch: 8,
            embed_dim: 64,
            depth_blocks: 2,
            heads: 4,
            fusion_k: 7,
            fusion_dim: None,
            decoder_blocks: 4,
            num_classes: 4,
            decoder_input: DecoderInput::RgbOnly,
            use_depth: true,
            seed: 0,
            lr: 1e-4,
            weight_decay: 0.05,
            epochs: 50,
            batch_size: 2,
            augment: true,
            eval_every: 1,
        }
    }

    /// ViT-B at 480x640 with nine classes.
    pub fn full_vitb() -> Self {
        ModelConfig {
            image_h: 480,
            image_w: 640,
            patch: 16,
            embed_dim: 768,
            depth_blocks: 12,
            heads: 12,
            num_classes: 9,
            ..Self::toy()
        }
    }

    /// Tiny configuration used for end-to-end gradient checks.
    pub fn grad_check_toy() -> Self {
        ModelConfig {
            image_h: 16,
            image_w: 16,
            patch: 4,
            embed_dim: 16,
            depth_blocks: 1,
            heads: 2,
            fusion_k: 2,
            decoder_blocks: 1,
            num_classes: 3,
            ..Self::toy()
        }
    }

    pub fn fusion_dim(&self) -> usize {
        self.fusion_dim.unwrap_or(2 * self.embed_dim)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch, self.image_w / self.patch)
    }

    pub fn decoder_in_dim(&self) -> usize {
        match self.decoder_input {
            DecoderInput::RgbOnly => self.embed_dim,
            DecoderInput::RgbAndDepth => 2 * self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.patch == 0 || self.patch % DOWNSAMPLE != 0 {
            return fail(format!("patch {} must be a positive multiple of {DOWNSAMPLE}", self.patch));
        }
        if self.image_h == 0 || self.image_w == 0 || self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return fail(format!("image {}x{} not divisible by patch {}", self.image_h, self.image_w, self.patch));
        }
        if self.embed_dim == 0 || self.embed_dim % CHANNEL_DIVISOR != 0 {
            return fail(format!("embed_dim {} must be a positive multiple of {CHANNEL_DIVISOR}", self.embed_dim));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!("{} heads do not divide embed_dim {}", self.heads, self.embed_dim));
        }
        let (h, w) = self.grid();
        if self.fusion_k == 0 || self.fusion_k > h.min(w) {
            return fail(format!("fusion_k {} must be in 1..={}", self.fusion_k, h.min(w)));
        }
        if self.fusion_dim() == 0 {
            return fail("fusion_dim must be positive".into());
        }
        if self.num_classes == 0 || self.num_classes > 255 {
            return fail(format!("num_classes {} must be in 1..=255", self.num_classes));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("lr and weight_decay must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Intermediate shapes implied by this configuration.
    pub fn plan(&self) -> ShapePlan {
        let (h, w) = self.grid();
        let dec = self.decoder_in_dim();
        ShapePlan {
            token_grid: (h, w),
            tokens_per_stream: h * w,
            encoder_sequence: 2 * h * w,
            decoder_grid: [dec / CHANNEL_DIVISOR, self.image_h / DOWNSAMPLE, self.image_w / DOWNSAMPLE],
            logits: [self.num_classes, self.image_h, self.image_w],
        }
    }
}

/// Shape bookkeeping derived from a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    pub token_grid: (usize, usize),
    pub tokens_per_stream: usize,
    pub encoder_sequence: usize,
    pub decoder_grid: [usize; 3],
    pub logits: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub patch_rgb: PatchEmbed,
    pub patch_depth: PatchEmbed,
    pub fusion: FusionParams,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

/// Named intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    pub rgb_tokens: Var,
    pub depth_tokens: Var,
    pub fused_rgb: Var,
    pub fused_depth: Var,
    pub encoded_rgb: Var,
    pub encoded_depth: Var,
    pub logits: Var,
}

/// Learnable-scalar counts, total and per component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub breakdown: Vec<(String, usize)>,
}

impl Model {
    /// Builds and initialises every parameter from `cfg.seed`.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        Self::assemble(cfg, ParamStore::new(cfg.seed))
    }

    /// Builds the parameter layout without allocating values.
    pub fn build_shapes(cfg: &ModelConfig) -> Result<Self> {
        Self::assemble(cfg, ParamStore::shapes_only())
    }

    fn assemble(cfg: &ModelConfig, mut store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let (h, w) = cfg.grid();
        let patch_rgb = PatchEmbed::new(&mut store, "patch_rgb", RGB_CHANNELS, c, cfg.patch);
        let patch_depth = PatchEmbed::new(&mut store, "patch_depth", DEPTH_CHANNELS, c, cfg.patch);
        let fusion = FusionParams::new(&mut store, "fusion", c, cfg.fusion_dim(), cfg.fusion_k);
        let encoder = EncoderParams::new(&mut store, "encoder", h * w, c, cfg.depth_blocks, cfg.heads)?;
        let decoder = DecoderParams::new(
            &mut store,
            "decoder",
            cfg.decoder_in_dim(),
            cfg.patch,
            cfg.decoder_blocks,
            cfg.num_classes,
        )?;
        Ok(Model { cfg: cfg.clone(), store, patch_rgb, patch_depth, fusion, encoder, decoder })
    }

    pub fn param_count(&self) -> ParamCount {
        let s = &self.store;
        let breakdown: Vec<(String, usize)> = [
            ("patch_embed_rgb", "patch_rgb."),
            ("patch_embed_depth", "patch_depth."),
            ("fusion", "fusion."),
            ("encoder.pos_embed", "encoder.pos_"),
            ("encoder.blocks", "encoder.blocks."),
            ("encoder.norm", "encoder.norm."),
            ("decoder", "decoder."),
        ]
        .iter()
        .map(|(label, prefix)| (label.to_string(), s.count_prefix(prefix)))
        .collect();
        ParamCount { total: s.count(), breakdown }
    }

    /// End-to-end logits `[num_classes, H, W]` from `rgb[3, H, W]` and `depth[1, H, W]`.
    pub fn forward<T: Element>(&self, cx: &mut Ctx<'_, T>, rgb: Var, depth: Var) -> Result<Var> {
        Ok(self.forward_trace(cx, rgb, depth)?.logits)
    }

    pub fn forward_trace<T: Element>(&self, cx: &mut Ctx<'_, T>, rgb: Var, depth: Var) -> Result<ForwardTrace> {
        let cfg = &self.cfg;
        let (hh, ww) = (cfg.image_h, cfg.image_w);
        if cx.shape(rgb) != [RGB_CHANNELS, hh, ww] || cx.shape(depth) != [DEPTH_CHANNELS, hh, ww] {
            return Err(Error::dim(format!(
                "model expects rgb [3,{hh},{ww}] and depth [1,{hh},{ww}], got {:?} and {:?}",
                cx.shape(rgb),
                cx.shape(depth)
            )));
        }
        let depth = if cfg.use_depth {
            depth
        } else {
            cx.constant(Tensor::zeros([DEPTH_CHANNELS, hh, ww]))?
        };
        let rgb_grid = self.patch_rgb.forward(cx, rgb)?;
        let depth_grid = self.patch_depth.forward(cx, depth)?;
        let query_depth = if cfg.use_depth { depth_grid } else { rgb_grid };
        let fused = fuse_with_query_source(cx, &rgb_grid, &depth_grid, &query_depth, &self.fusion)?;
        let (enc_rgb, enc_depth) = encode(cx, &fused.rgb, &fused.depth, &self.encoder)?;
        let dec_in = match cfg.decoder_input {
            DecoderInput::RgbOnly => enc_rgb,
            DecoderInput::RgbAndDepth => cx.concat(&[enc_rgb, enc_depth], 1)?,
        };
        let (h, w) = cfg.grid();
        let logits = decode(cx, dec_in, h, w, hh, ww, &self.decoder)?;
        Ok(ForwardTrace {
            rgb_tokens: rgb_grid.tokens,
            depth_tokens: depth_grid.tokens,
            fused_rgb: fused.rgb.tokens,
            fused_depth: fused.depth.tokens,
            encoded_rgb: enc_rgb,
            encoded_depth: enc_depth,
            logits,
        })
    }

    /// Places a sample's rasters on the tape as constants and runs the model.
    pub fn forward_sample<T: Element>(&self, cx: &mut Ctx<'_, T>, sample: &RgbdSample) -> Result<Var> {
        sample.check_depth_range()?;
        let rgb = cx.constant(sample.rgb.cast())?;
        let depth = cx.constant(sample.depth.cast())?;
        self.forward(cx, rgb, depth)
    }

    /// Logits of a sample, computed without gradient tracking of inputs.
    pub fn logits(&self, sample: &RgbdSample) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let mut cx = Ctx::new(&mut tape, &self.store);
        let out = self.forward_sample(&mut cx, sample)?;
        Ok(cx.value(out).clone())
    }

    /// Per-pixel argmax prediction.
    pub fn predict(&self, sample: &RgbdSample) -> Result<LabelMask> {
        Ok(argmax_mask(&self.logits(sample)?))
    }
}

/// Class index of the largest logit at each pixel of `[K, H, W]` logits.
pub fn argmax_mask(logits: &Tensor<f32>) -> LabelMask {
    let (k, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let plane = h * w;
    let data = logits.data();
    let labels = (0..plane)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if data[c * plane + i] > data[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(h, w, labels).expect("argmax mask size")
}

//! Patch embedding and the pre-norm ViT encoder that runs on the
//! token-axis concatenation of the RGB and depth streams.

use crate::error::{Error, Result};
use crate::fusion::TokenGrid;
use crate::nn::{Conv2d, Ctx, Init, LayerNorm, Linear, ParamId, ParamStore};
use crate::tensor::{Element, Var};

/// Non-overlapping `p x p` convolutional projection of an image into tokens.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv: Conv2d,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, dim: usize, patch: usize) -> Self {
        PatchEmbed { conv: Conv2d::new(store, name, in_channels, dim, patch, patch, 0, 1), patch }
    }

    pub fn forward<T: Element>(&self, cx: &mut Ctx<'_, T>, img: Var) -> Result<TokenGrid> {
        let (c, h, w) = match cx.shape(img) {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::dim(format!("patch embed expects [C,H,W], got {s:?}"))),
        };
        if c != self.conv.c_in {
            return Err(Error::dim(format!("patch embed expects {} channels, got {c}", self.conv.c_in)));
        }
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::dim(format!("image {h}x{w} not divisible by patch {}", self.patch)));
        }
        let feat = self.conv.forward(cx, img)?;
        TokenGrid::from_chw(cx, feat)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("{heads} heads do not divide width {dim}")));
        }
        Ok(Attention {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim),
            heads,
            dim,
        })
    }
}

/// Multi-head self-attention over `x[N, C]`.
pub fn mhsa<T: Element>(cx: &mut Ctx<'_, T>, x: Var, attn: &Attention) -> Result<Var> {
    let c = attn.dim;
    let head_dim = c / attn.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let qkv = attn.qkv.forward(cx, x)?;
    let mut outs = Vec::with_capacity(attn.heads);
    for h in 0..attn.heads {
        let q = cx.narrow(qkv, 1, h * head_dim, head_dim)?;
        let k = cx.narrow(qkv, 1, c + h * head_dim, head_dim)?;
        let v = cx.narrow(qkv, 1, 2 * c + h * head_dim, head_dim)?;
        let kt = cx.transpose(k)?;
        let s = cx.matmul(q, kt)?;
        let s = cx.scale(s, scale)?;
        let a = cx.softmax(s, 1)?;
        outs.push(cx.matmul(a, v)?);
    }
    let merged = if outs.len() == 1 { outs[0] } else { cx.concat(&outs, 1)? };
    attn.proj.forward(cx, merged)
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub const MLP_RATIO: usize = 4;

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, MLP_RATIO * dim),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), MLP_RATIO * dim, dim),
        })
    }

    pub fn forward<T: Element>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let n = self.norm1.forward(cx, x)?;
        let a = mhsa(cx, n, &self.attn)?;
        let x = cx.add(x, a)?;
        let n = self.norm2.forward(cx, x)?;
        let m = self.fc1.forward(cx, n)?;
        let m = cx.gelu(m)?;
        let m = self.fc2.forward(cx, m)?;
        cx.add(x, m)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub blocks: Vec<TransformerBlock>,
    pub pos_rgb: ParamId,
    pub pos_depth: ParamId,
    pub norm: LayerNorm,
    /// Tokens per modality.
    pub tokens: usize,
    pub dim: usize,
}

impl EncoderParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        tokens: usize,
        dim: usize,
        depth: usize,
        heads: usize,
    ) -> Result<Self> {
        let pos_rgb = store.add(format!("{name}.pos_rgb"), &[tokens, dim], Init::Zeros);
        let pos_depth = store.add(format!("{name}.pos_depth"), &[tokens, dim], Init::Zeros);
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.blocks.{i}"), dim, heads))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim);
        Ok(EncoderParams { blocks, pos_rgb, pos_depth, norm, tokens, dim })
    }
}

/// Encodes both streams jointly and splits them again. Returns
/// `(rgb_tokens, depth_tokens)`, each `[h*w, C]`.
pub fn encode<T: Element>(
    cx: &mut Ctx<'_, T>,
    rgb: &TokenGrid,
    depth: &TokenGrid,
    p: &EncoderParams,
) -> Result<(Var, Var)> {
    let n = rgb.h * rgb.w;
    if n != p.tokens || depth.h * depth.w != p.tokens {
        return Err(Error::dim(format!(
            "encoder expects {} tokens per stream, got {} and {}",
            p.tokens,
            n,
            depth.h * depth.w
        )));
    }
    if rgb.channels != p.dim || depth.channels != p.dim {
        return Err(Error::dim(format!("encoder width {} does not match tokens", p.dim)));
    }
    let pos_rgb = cx.param(p.pos_rgb)?;
    let pos_depth = cx.param(p.pos_depth)?;
    let r = cx.add(rgb.tokens, pos_rgb)?;
    let d = cx.add(depth.tokens, pos_depth)?;
    let mut x = cx.concat(&[r, d], 0)?;
    // A zero-depth encoder is the identity; the final norm belongs to the stack.
    if !p.blocks.is_empty() {
        for b in &p.blocks {
            x = b.forward(cx, x)?;
        }
        x = p.norm.forward(cx, x)?;
    }
    let rgb_out = cx.narrow(x, 0, 0, n)?;
    let depth_out = cx.narrow(x, 0, n, n)?;
    Ok((rgb_out, depth_out))
}

//! Shallow ConvNeXt decoder.
//!
//! Tokens are widened by a linear layer and pixel-shuffled onto a grid at a
//! quarter of the input resolution with `C/8` channels, refined by ConvNeXt
//! blocks, classified by a 1x1 convolution and bilinearly resized to the
//! input size.

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, LayerNorm, Linear, ParamStore};
use crate::tensor::{Element, Tensor, Var};

/// Output grid is `1/DOWNSAMPLE` of the input resolution.
pub const DOWNSAMPLE: usize = 4;
/// Grid channels are `1/CHANNEL_DIVISOR` of the token width.
pub const CHANNEL_DIVISOR: usize = 8;
pub const DW_KERNEL: usize = 7;
pub const EXPANSION: usize = 4;

#[derive(Clone, Debug)]
pub struct ConvNeXtBlock {
    pub dwconv: Conv2d,
    pub norm: LayerNorm,
    pub pw1: Linear,
    pub pw2: Linear,
    pub dim: usize,
}

impl ConvNeXtBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        ConvNeXtBlock {
            dwconv: Conv2d::new(store, &format!("{name}.dwconv"), dim, dim, DW_KERNEL, 1, DW_KERNEL / 2, dim),
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            pw1: Linear::new(store, &format!("{name}.pw1"), dim, EXPANSION * dim),
            pw2: Linear::new(store, &format!("{name}.pw2"), EXPANSION * dim, dim),
            dim,
        }
    }
}

/// `x + pw2(gelu(pw1(norm(dwconv(x)))))` on `x[d, H, W]`; norm and the
/// pointwise layers act per spatial position.
pub fn convnext_block<T: Element>(cx: &mut Ctx<'_, T>, x: Var, b: &ConvNeXtBlock) -> Result<Var> {
    let (d, h, w) = match cx.shape(x) {
        &[d, h, w] => (d, h, w),
        s => return Err(Error::dim(format!("ConvNeXt block expects [d,H,W], got {s:?}"))),
    };
    if d != b.dim {
        return Err(Error::dim(format!("ConvNeXt block built for {} channels, got {d}", b.dim)));
    }
    let y = b.dwconv.forward(cx, x)?;
    let y = cx.reshape(y, &[d, h * w])?;
    let y = cx.transpose(y)?;
    let y = b.norm.forward(cx, y)?;
    let y = b.pw1.forward(cx, y)?;
    let y = cx.gelu(y)?;
    let y = b.pw2.forward(cx, y)?;
    let y = cx.transpose(y)?;
    let y = cx.reshape(y, &[d, h, w])?;
    cx.add(x, y)
}

/// Pixel-shuffle: each token's `tile*tile*d` vector becomes a `tile x tile`
/// patch with `d` channels, feature index `(ty*tile + tx)*d + c`.
/// `tokens[h*w, tile*tile*d]` -> `[d, h*tile, w*tile]`.
pub fn tokens_to_grid<T: Element>(
    cx: &mut Ctx<'_, T>,
    tokens: Var,
    h: usize,
    w: usize,
    tile: usize,
) -> Result<Var> {
    let d = grid_channels_for(cx.shape(tokens), h, w, tile)?;
    let x = cx.reshape(tokens, &[h, w, tile, tile, d])?;
    let x = cx.permute(x, &[4, 0, 2, 1, 3])?;
    cx.reshape(x, &[d, h * tile, w * tile])
}

/// Inverse of [`tokens_to_grid`].
pub fn grid_to_tokens<T: Element>(
    cx: &mut Ctx<'_, T>,
    grid: Var,
    tile: usize,
) -> Result<Var> {
    let (d, gh, gw) = match cx.shape(grid) {
        &[d, gh, gw] if gh % tile == 0 && gw % tile == 0 => (d, gh, gw),
        s => return Err(Error::dim(format!("grid {s:?} not divisible into {tile}x{tile} tiles"))),
    };
    let (h, w) = (gh / tile, gw / tile);
    let x = cx.reshape(grid, &[d, h, tile, w, tile])?;
    let x = cx.permute(x, &[1, 3, 2, 4, 0])?;
    cx.reshape(x, &[h * w, tile * tile * d])
}

/// Value-level pixel shuffle, same layout as [`tokens_to_grid`].
pub fn shuffle_tokens<T: Element>(tokens: &Tensor<T>, h: usize, w: usize, tile: usize) -> Result<Tensor<T>> {
    let d = grid_channels_for(tokens.shape(), h, w, tile)?;
    tokens
        .reshape([h, w, tile, tile, d])?
        .permute(&[4, 0, 2, 1, 3])?
        .reshape([d, h * tile, w * tile])
}

fn grid_channels_for(shape: &[usize], h: usize, w: usize, tile: usize) -> Result<usize> {
    match shape {
        &[n, f] if n == h * w && tile > 0 && f % (tile * tile) == 0 => Ok(f / (tile * tile)),
        s => Err(Error::dim(format!(
            "tokens {s:?} cannot be shuffled onto a {h}x{w} grid of {tile}x{tile} tiles"
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub expand: Linear,
    pub blocks: Vec<ConvNeXtBlock>,
    pub head: Conv2d,
    pub num_classes: usize,
    /// Token width fed to the decoder.
    pub in_dim: usize,
    /// Channels of the quarter-resolution grid, `in_dim / 8`.
    pub grid_channels: usize,
    /// Side of the tile each token expands into, `patch / 4`.
    pub tile: usize,
    pub patch: usize,
}

impl DecoderParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        patch: usize,
        blocks: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if in_dim % CHANNEL_DIVISOR != 0 {
            return Err(Error::config(format!("decoder width {in_dim} not divisible by {CHANNEL_DIVISOR}")));
        }
        if patch % DOWNSAMPLE != 0 {
            return Err(Error::config(format!("patch {patch} not divisible by {DOWNSAMPLE}")));
        }
        if num_classes == 0 {
            return Err(Error::config("decoder needs at least one class"));
        }
        let grid_channels = in_dim / CHANNEL_DIVISOR;
        let tile = patch / DOWNSAMPLE;
        Ok(DecoderParams {
            expand: Linear::new(store, &format!("{name}.expand"), in_dim, tile * tile * grid_channels),
            blocks: (0..blocks)
                .map(|i| ConvNeXtBlock::new(store, &format!("{name}.blocks.{i}"), grid_channels))
                .collect(),
            head: Conv2d::new(store, &format!("{name}.head"), grid_channels, num_classes, 1, 1, 0, 1),
            num_classes,
            in_dim,
            grid_channels,
            tile,
            patch,
        })
    }
}

/// Logits `[num_classes, H, W]` from tokens `[h*w, in_dim]`.
pub fn decode<T: Element>(
    cx: &mut Ctx<'_, T>,
    tokens: Var,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    p: &DecoderParams,
) -> Result<Var> {
    if out_h != h * p.patch || out_w != w * p.patch {
        return Err(Error::dim(format!(
            "{h}x{w} tokens with patch {} cannot produce {out_h}x{out_w} logits",
            p.patch
        )));
    }
    if cx.shape(tokens) != [h * w, p.in_dim] {
        return Err(Error::dim(format!(
            "decoder expects [{}, {}] tokens, got {:?}",
            h * w,
            p.in_dim,
            cx.shape(tokens)
        )));
    }
    let x = p.expand.forward(cx, tokens)?;
    let mut x = tokens_to_grid(cx, x, h, w, p.tile)?;
    for b in &p.blocks {
        x = convnext_block(cx, x, b)?;
    }
    let logits = p.head.forward(cx, x)?;
    cx.bilinear_resize(logits, out_h, out_w)
}

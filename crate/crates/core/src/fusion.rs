//! Depth-aware fusion block.
//!
//! Queries come from the pooled concatenation of both modalities, keys and
//! values from the RGB tokens alone. The `k*k` attended context is resized
//! back to the token grid and added residually to each modality through its
//! own projection.

use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, Linear, ParamStore, WEIGHT_STD};
use crate::tensor::{Element, Tensor, Var};

/// Tokens laid out on an `h x w` grid, stored as `[h*w, C]` in row-major
/// spatial order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub tokens: Var,
}

impl TokenGrid {
    pub fn new<T: Element>(cx: &Ctx<'_, T>, tokens: Var, h: usize, w: usize) -> Result<Self> {
        match cx.shape(tokens) {
            &[n, c] if n == h * w => Ok(TokenGrid { h, w, channels: c, tokens }),
            s => Err(Error::dim(format!("token tensor {s:?} does not fit a {h}x{w} grid"))),
        }
    }

    /// `[h*w, C]` -> `[C, h, w]`.
    pub fn to_chw<T: Element>(&self, cx: &mut Ctx<'_, T>) -> Result<Var> {
        let t = cx.transpose(self.tokens)?;
        cx.reshape(t, &[self.channels, self.h, self.w])
    }

    /// `[C, h, w]` -> grid of `h*w` tokens.
    pub fn from_chw<T: Element>(cx: &mut Ctx<'_, T>, x: Var) -> Result<Self> {
        let (c, h, w) = match cx.shape(x) {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::dim(format!("expected [C,h,w], got {s:?}"))),
        };
        let flat = cx.reshape(x, &[c, h * w])?;
        let tokens = cx.transpose(flat)?;
        Ok(TokenGrid { h, w, channels: c, tokens })
    }

    fn same_layout(&self, other: &TokenGrid) -> bool {
        self.h == other.h && self.w == other.w && self.channels == other.channels
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub fc_q: Linear,
    pub fc_k: Linear,
    pub fc_v: Linear,
    pub fc_out_rgb: Linear,
    pub fc_out_depth: Linear,
    /// Pooled query grid side.
    pub k: usize,
    /// Attention width.
    pub dim: usize,
}

impl FusionParams {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, dim: usize, k: usize) -> Self {
        Self::with_out_init(store, prefix, channels, dim, k, Init::TruncNormal(WEIGHT_STD))
    }

    /// Output projections initialised with `out_init`; `Init::Zeros` makes
    /// the block an exact identity.
    pub fn with_out_init(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        dim: usize,
        k: usize,
        out_init: Init,
    ) -> Self {
        FusionParams {
            fc_q: Linear::new(store, &format!("{prefix}.fc_q"), 2 * channels, dim),
            fc_k: Linear::new(store, &format!("{prefix}.fc_k"), channels, dim),
            fc_v: Linear::new(store, &format!("{prefix}.fc_v"), channels, dim),
            fc_out_rgb: Linear::with_init(store, &format!("{prefix}.fc_out_rgb"), dim, channels, out_init),
            fc_out_depth: Linear::with_init(store, &format!("{prefix}.fc_out_depth"), dim, channels, out_init),
            k,
            dim,
        }
    }
}

/// Everything `fuse` produces, including the `[k*k, h*w]` attention map.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub rgb: TokenGrid,
    pub depth: TokenGrid,
    pub query: Var,
    pub attention: Var,
    pub context: Var,
}

fn check_inputs(rgb: &TokenGrid, depth: &TokenGrid, p: &FusionParams) -> Result<()> {
    if !rgb.same_layout(depth) {
        return Err(Error::dim(format!(
            "fusion inputs differ: rgb {}x{}x{} vs depth {}x{}x{}",
            rgb.h, rgb.w, rgb.channels, depth.h, depth.w, depth.channels
        )));
    }
    if p.k == 0 || p.k > rgb.h.min(rgb.w) {
        return Err(Error::dim(format!(
            "fusion pool size {} must be in 1..={}",
            p.k,
            rgb.h.min(rgb.w)
        )));
    }
    if p.fc_k.in_dim != rgb.channels {
        return Err(Error::dim(format!(
            "fusion built for {} channels, got {}",
            p.fc_k.in_dim, rgb.channels
        )));
    }
    Ok(())
}

/// Pooled query tokens `[k*k, dim]`.
pub fn make_query<T: Element>(
    cx: &mut Ctx<'_, T>,
    rgb: &TokenGrid,
    depth: &TokenGrid,
    p: &FusionParams,
) -> Result<Var> {
    check_inputs(rgb, depth, p)?;
    let cat = cx.concat(&[rgb.tokens, depth.tokens], 1)?;
    let cat = TokenGrid { channels: 2 * rgb.channels, tokens: cat, ..*rgb };
    let chw = cat.to_chw(cx)?;
    let pooled = cx.adaptive_avg_pool2d(chw, p.k)?;
    let pooled = TokenGrid::from_chw(cx, pooled)?;
    p.fc_q.forward(cx, pooled.tokens)
}

pub fn fuse<T: Element>(
    cx: &mut Ctx<'_, T>,
    rgb: &TokenGrid,
    depth: &TokenGrid,
    p: &FusionParams,
) -> Result<(TokenGrid, TokenGrid)> {
    let out = fuse_detailed(cx, rgb, depth, p)?;
    Ok((out.rgb, out.depth))
}

pub fn fuse_detailed<T: Element>(
    cx: &mut Ctx<'_, T>,
    rgb: &TokenGrid,
    depth: &TokenGrid,
    p: &FusionParams,
) -> Result<FusionOutput> {
    fuse_with_query_source(cx, rgb, depth, depth, p)
}

/// `fuse_detailed`, but with `query_depth` standing in for the depth grid
/// when building queries (the RGB-only baseline passes the RGB grid here).
pub(crate) fn fuse_with_query_source<T: Element>(
    cx: &mut Ctx<'_, T>,
    rgb: &TokenGrid,
    depth: &TokenGrid,
    query_depth: &TokenGrid,
    p: &FusionParams,
) -> Result<FusionOutput> {
    check_inputs(rgb, depth, p)?;
    let q = make_query(cx, rgb, query_depth, p)?;
    let k = p.fc_k.forward(cx, rgb.tokens)?;
    let v = p.fc_v.forward(cx, rgb.tokens)?;

    let kt = cx.transpose(k)?;
    let logits = cx.matmul(q, kt)?;
    let logits = cx.scale(logits, 1.0 / (p.dim as f64).sqrt())?;
    let attention = cx.softmax(logits, 1)?;
    let ctx_tokens = cx.matmul(attention, v)?;

    let ctx_grid = TokenGrid { h: p.k, w: p.k, channels: p.dim, tokens: ctx_tokens };
    let ctx_chw = ctx_grid.to_chw(cx)?;
    let up = cx.bilinear_resize(ctx_chw, rgb.h, rgb.w)?;
    let up = TokenGrid::from_chw(cx, up)?;

    let d_rgb = p.fc_out_rgb.forward(cx, up.tokens)?;
    let d_depth = p.fc_out_depth.forward(cx, up.tokens)?;
    let rgb_out = cx.add(rgb.tokens, d_rgb)?;
    let depth_out = cx.add(depth.tokens, d_depth)?;
    Ok(FusionOutput {
        rgb: TokenGrid { tokens: rgb_out, ..*rgb },
        depth: TokenGrid { tokens: depth_out, ..*depth },
        query: q,
        attention,
        context: ctx_tokens,
    })
}

/// Reference attention `softmax(q kᵀ * scale) v` computed row by row in `f64`.
pub fn attention_oracle<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    scale: f64,
) -> Result<Tensor<f64>> {
    let (nq, d) = (q.shape()[0], q.shape()[1]);
    let nk = k.shape()[0];
    let dv = v.shape()[1];
    if k.shape()[1] != d || v.shape()[0] != nk {
        return Err(Error::dim(format!(
            "attention oracle shapes q {:?} k {:?} v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut out = vec![0.0f64; nq * dv];
    for i in 0..nq {
        let logits: Vec<f64> = (0..nk)
            .map(|j| (0..d).map(|c| q.at(&[i, c]).as_f64() * k.at(&[j, c]).as_f64()).sum::<f64>() * scale)
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = weights.iter().sum();
        for (j, wj) in weights.iter().enumerate() {
            for c in 0..dv {
                out[i * dv + c] += wj / z * v.at(&[j, c]).as_f64();
            }
        }
    }
    Tensor::new([nq, dv], out)
}

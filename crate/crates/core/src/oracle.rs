//! Straightforward loop implementations in `f64`, used as references for
//! the optimised kernels. They favour obviousness over speed.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x[n, i] · w[i, o] + b[o]`.
pub fn linear(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, i_dim) = (x.shape()[0], x.shape()[1]);
    let o_dim = w.shape()[1];
    Tensor::from_fn([n, o_dim], |idx| {
        let (r, o) = (idx / o_dim, idx % o_dim);
        b.data()[o] + (0..i_dim).map(|i| x.at(&[r, i]) * w.at(&[i, o])).sum::<f64>()
    })
}

/// Direct convolution of `x[C, H, W]` with `w[O, C/groups, k, k]`.
pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, cg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (wd + 2 * padding - k) / stride + 1;
    let og = o / groups;
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        let g = oc / og;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b.data()[oc];
                for ic in 0..cg {
                    let cin = g * cg + ic;
                    debug_assert!(cin < c);
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += x.at(&[cin, iy as usize, ix as usize]) * w.at(&[oc, ic, ky, kx]);
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = s;
            }
        }
    }
    Tensor::new([o, ho, wo], out).expect("conv output")
}

/// Adaptive average pooling to `k x k`; window `i` covers
/// `[floor(i*n/k), ceil((i+1)*n/k))`.
pub fn adaptive_avg_pool2d(x: &Tensor<f64>, k: usize) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let win = |i: usize, n: usize| (i * n / k, ((i + 1) * n).div_ceil(k));
    let mut out = vec![0.0; c * k * k];
    for ch in 0..c {
        for i in 0..k {
            let (y0, y1) = win(i, h);
            for j in 0..k {
                let (x0, x1) = win(j, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        s += x.at(&[ch, y, xx]);
                    }
                }
                out[(ch * k + i) * k + j] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    Tensor::new([c, k, k], out).expect("pool output")
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn bilinear(x: &Tensor<f64>, ho: usize, wo: usize) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let coord = |d: usize, n_in: usize, n_out: usize| {
        let src = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            let (y0, y1, ly) = coord(oy, h, ho);
            for ox in 0..wo {
                let (x0, x1, lx) = coord(ox, w, wo);
                let top = x.at(&[ch, y0, x0]) * (1.0 - lx) + x.at(&[ch, y0, x1]) * lx;
                let bot = x.at(&[ch, y1, x0]) * (1.0 - lx) + x.at(&[ch, y1, x1]) * lx;
                out[(ch * ho + oy) * wo + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    Tensor::new([c, ho, wo], out).expect("resize output")
}

/// `softmax(q kᵀ · scale) v`, row by row.
pub fn attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, scale: f64) -> Result<Tensor<f64>> {
    crate::fusion::attention_oracle(q, k, v, scale)
}

fn columns(x: &Tensor<f64>, start: usize, len: usize) -> Tensor<f64> {
    let n = x.shape()[0];
    Tensor::from_fn([n, len], |i| x.at(&[i / len, start + i % len]))
}

/// Multi-head self-attention: fused `qkv` projection, per-head attention,
/// output projection.
pub fn mhsa(
    x: &Tensor<f64>,
    w_qkv: &Tensor<f64>,
    b_qkv: &Tensor<f64>,
    w_proj: &Tensor<f64>,
    b_proj: &Tensor<f64>,
    heads: usize,
) -> Result<Tensor<f64>> {
    let c = x.shape()[1];
    if c % heads != 0 {
        return Err(Error::dim(format!("{heads} heads for width {c}")));
    }
    let hd = c / heads;
    let qkv = linear(x, w_qkv, b_qkv);
    let n = x.shape()[0];
    let mut merged = vec![0.0; n * c];
    for h in 0..heads {
        let q = columns(&qkv, h * hd, hd);
        let k = columns(&qkv, c + h * hd, hd);
        let v = columns(&qkv, 2 * c + h * hd, hd);
        let o = attention(&q, &k, &v, 1.0 / (hd as f64).sqrt())?;
        for r in 0..n {
            for j in 0..hd {
                merged[r * c + h * hd + j] = o.at(&[r, j]);
            }
        }
    }
    Ok(linear(&Tensor::new([n, c], merged)?, w_proj, b_proj))
}

/// Weights of the fusion block in `f64`, laid out like the model's.
#[derive(Clone, Debug)]
pub struct FusionWeights {
    pub q: (Tensor<f64>, Tensor<f64>),
    pub k: (Tensor<f64>, Tensor<f64>),
    pub v: (Tensor<f64>, Tensor<f64>),
    pub out_rgb: (Tensor<f64>, Tensor<f64>),
    pub out_depth: (Tensor<f64>, Tensor<f64>),
    pub pool: usize,
}

fn tokens_to_chw(t: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let c = t.shape()[1];
    Tensor::from_fn([c, h, w], |i| t.at(&[i % (h * w), i / (h * w)]))
}

fn chw_to_tokens(x: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Tensor::from_fn([h * w, c], |i| x.data()[(i % c) * h * w + i / c])
}

/// Fusion block on `rgb`, `depth` tokens `[h*w, C]`. Returns the updated
/// `(rgb, depth)` tokens.
pub fn fuse(
    rgb: &Tensor<f64>,
    depth: &Tensor<f64>,
    h: usize,
    w: usize,
    p: &FusionWeights,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let n = h * w;
    let c = rgb.shape()[1];
    let cat = Tensor::from_fn([n, 2 * c], |i| {
        let (r, j) = (i / (2 * c), i % (2 * c));
        if j < c { rgb.at(&[r, j]) } else { depth.at(&[r, j - c]) }
    });
    let pooled = chw_to_tokens(&adaptive_avg_pool2d(&tokens_to_chw(&cat, h, w), p.pool));
    let q = linear(&pooled, &p.q.0, &p.q.1);
    let k = linear(rgb, &p.k.0, &p.k.1);
    let v = linear(rgb, &p.v.0, &p.v.1);
    let dim = q.shape()[1];
    let ctx = attention(&q, &k, &v, 1.0 / (dim as f64).sqrt())?;
    let up = chw_to_tokens(&bilinear(&tokens_to_chw(&ctx, p.pool, p.pool), h, w));
    let dr = linear(&up, &p.out_rgb.0, &p.out_rgb.1);
    let dd = linear(&up, &p.out_depth.0, &p.out_depth.1);
    let add = |a: &Tensor<f64>, b: &Tensor<f64>| Tensor::from_fn(a.shape().to_vec(), |i| a.data()[i] + b.data()[i]);
    Ok((add(rgb, &dr), add(depth, &dd)))
}

//! Forward and backward kernels over flat row-major buffers.
//!
//! Reductions accumulate in `f64` regardless of the storage type.

use crate::error::{Error, Result};
use crate::fault::{self, Fault};

use super::Element;

#[inline(always)]
fn f<T: Element>(v: T) -> f64 {
    v.as_f64()
}

#[inline(always)]
fn t<T: Element>(v: f64) -> T {
    T::of_f64(v)
}

fn cast_vec<T: Element>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(t).collect()
}

// ---------------------------------------------------------------- matmul

/// `a[m,k] · b[k,n]`.
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let k_used = if fault::armed(Fault::Matmul) { k.saturating_sub(1) } else { k };
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let row = &a[i * k..i * k + k];
        for (tt, &av) in row.iter().enumerate().take(k_used) {
            let av = f(av);
            if av == 0.0 {
                continue;
            }
            let brow = &b[tt * n..tt * n + n];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += av * f(bv);
            }
        }
        out.extend(acc.iter().map(|&v| t::<T>(v)));
    }
    out
}

/// `a[m,k] · b[n,k]ᵀ`.
pub fn matmul_nt<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = &a[i * k..i * k + k];
        for j in 0..n {
            let col = &b[j * k..j * k + k];
            let s: f64 = row.iter().zip(col).map(|(&x, &y)| f(x) * f(y)).sum();
            out.push(t(s));
        }
    }
    out
}

/// `a[k,m]ᵀ · b[k,n]`.
pub fn matmul_tn<T: Element>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; m * n];
    for tt in 0..k {
        let arow = &a[tt * m..tt * m + m];
        let brow = &b[tt * n..tt * n + n];
        for (i, &av) in arow.iter().enumerate() {
            let av = f(av);
            if av == 0.0 {
                continue;
            }
            let dst = &mut acc[i * n..i * n + n];
            for (o, &bv) in dst.iter_mut().zip(brow) {
                *o += av * f(bv);
            }
        }
    }
    cast_vec(acc)
}

// ---------------------------------------------------------------- layout

pub fn permute<T: Element>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let in_strides = super::strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < n {
        let s = step[last];
        for j in 0..out_shape[last] {
            out.push(data[base + j * s]);
        }
        // odometer over all but the last axis
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            base += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

/// Inverse permutation of `axes`.
pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub fn concat<T: Element>(parts: &[&[T]], shapes: &[&[usize]], axis: usize) -> Vec<T> {
    let outer: usize = shapes[0][..axis].iter().product();
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (p, s) in parts.iter().zip(shapes) {
            let chunk = s[axis..].iter().product::<usize>();
            out.extend_from_slice(&p[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

// ---------------------------------------------------------------- softmax

/// Softmax over the middle axis of an (outer, n, inner) view.
pub fn softmax<T: Element>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let n_used = if fault::armed(Fault::Softmax) { n.saturating_sub(1).max(1) } else { n };
    let mut buf = vec![0.0f64; n];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                mx = mx.max(f(x[at(j)]));
            }
            let mut z = 0.0;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = (f(x[at(j)]) - mx).exp();
                if j < n_used {
                    z += *b;
                }
            }
            for (j, b) in buf.iter().enumerate() {
                out[at(j)] = t(b / z);
            }
        }
    }
    out
}

pub fn softmax_backward<T: Element>(
    y: &[T],
    dy: &[T],
    outer: usize,
    n: usize,
    inner: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let dot: f64 = (0..n).map(|j| f(y[at(j)]) * f(dy[at(j)])).sum();
            for j in 0..n {
                let k = at(j);
                dx[k] = t(f(y[k]) * (f(dy[k]) - dot));
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- layer norm

pub struct LayerNormSaved<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm<T: Element>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    c: usize,
    eps: f64,
) -> (Vec<T>, LayerNormSaved<T>) {
    let rows = x.len() / c;
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * c..r * c + c];
        let mean = row.iter().map(|&v| f(v)).sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (f(v) - mean).powi(2)).sum::<f64>() / c as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd.push(rs);
        for (j, &v) in row.iter().enumerate() {
            let h = (f(v) - mean) * rs;
            xhat.push(t(h));
            y.push(t(h * f(gamma[j]) + f(beta[j])));
        }
    }
    (y, LayerNormSaved { xhat, rstd })
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward<T: Element>(
    dy: &[T],
    saved: &LayerNormSaved<T>,
    gamma: &[T],
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / c;
    let mut dx = Vec::with_capacity(dy.len());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let mut dxhat = vec![0.0f64; c];
    for r in 0..rows {
        let g = &dy[r * c..r * c + c];
        let h = &saved.xhat[r * c..r * c + c];
        let mut mean_d = 0.0;
        let mut mean_dh = 0.0;
        for j in 0..c {
            let gj = f(g[j]);
            let hj = f(h[j]);
            dgamma[j] += gj * hj;
            dbeta[j] += gj;
            dxhat[j] = gj * f(gamma[j]);
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hj;
        }
        mean_d /= c as f64;
        mean_dh /= c as f64;
        let rs = saved.rstd[r];
        for j in 0..c {
            dx.push(t(rs * (dxhat[j] - mean_d - f(h[j]) * mean_dh)));
        }
    }
    (dx, cast_vec(dgamma), cast_vec(dbeta))
}

// ---------------------------------------------------------------- gelu

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// tanh-approximated GELU.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let th = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

// ---------------------------------------------------------------- conv2d

/// Geometry of a single-image 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if x_shape.len() != 3 || w_shape.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects input [C,H,W] and weight [O,I/g,kh,kw], got {x_shape:?} and {w_shape:?}"
            )));
        }
        let (c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
        let (c_out, cig, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if stride == 0 || groups == 0 {
            return Err(Error::dim("conv2d stride and groups must be positive"));
        }
        if c_in % groups != 0 || c_out % groups != 0 || cig != c_in / groups {
            return Err(Error::dim(format!(
                "conv2d channels {c_in}->{c_out} incompatible with groups {groups} and weight {w_shape:?}"
            )));
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh || span_w < kw {
            return Err(Error::dim(format!("conv2d kernel {kh}x{kw} larger than padded input")));
        }
        if (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
            return Err(Error::dim(format!(
                "conv2d output size not integral: H={h} W={w} k={kh}x{kw} stride={stride} pad={padding}"
            )));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            groups,
            h_out: (span_h - kh) / stride + 1,
            w_out: (span_w - kw) / stride + 1,
        })
    }

    /// Output positions `o` with `0 <= o*stride + k - pad < len`, as a half-open range.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len-1
        let hi_num = len as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, out_len as isize) as usize;
        (lo, hi.max(lo))
    }
}

pub fn conv2d<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let cig = g.c_in / g.groups;
    let cog = g.c_out / g.groups;
    let plane = g.h_out * g.w_out;
    let cig_used = if fault::armed(Fault::Conv2d) && cig > 1 { cig - 1 } else { cig };
    let mut out = Vec::with_capacity(g.c_out * plane);
    let mut acc = vec![0.0f64; plane];
    for oc in 0..g.c_out {
        let grp = oc / cog;
        let init = b.map(|b| f(b[oc])).unwrap_or(0.0);
        acc.iter_mut().for_each(|v| *v = init);
        for icg in 0..cig_used {
            let ic = grp * cig + icg;
            let xin = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid(ky, g.h, g.h_out);
                for kx in 0..g.kw {
                    let wv = f(w[((oc * cig + icg) * g.kh + ky) * g.kw + kx]);
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.valid(kx, g.w, g.w_out);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        let arow = &mut acc[oy * g.w_out..(oy + 1) * g.w_out];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.padding;
                            for (a, &xv) in arow[ox0..ox1].iter_mut().zip(&xrow[ix0..]) {
                                *a += wv * f(xv);
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.padding;
                                arow[ox] += wv * f(xrow[ix]);
                            }
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&v| t::<T>(v)));
    }
    out
}

/// Returns (dx, dw, db).
pub fn conv2d_backward<T: Element>(
    dy: &[T],
    x: &[T],
    w: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cig = g.c_in / g.groups;
    let cog = g.c_out / g.groups;
    let plane = g.h_out * g.w_out;
    let mut dx = vec![0.0f64; x.len()];
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; g.c_out];
    for oc in 0..g.c_out {
        let grp = oc / cog;
        let dyo = &dy[oc * plane..(oc + 1) * plane];
        db[oc] = dyo.iter().map(|&v| f(v)).sum();
        for icg in 0..cig {
            let ic = grp * cig + icg;
            let xin = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            let dxin = &mut dx[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid(ky, g.h, g.h_out);
                for kx in 0..g.kw {
                    let widx = ((oc * cig + icg) * g.kh + ky) * g.kw + kx;
                    let wv = f(w[widx]);
                    let (ox0, ox1) = g.valid(kx, g.w, g.w_out);
                    let mut gw = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx - g.padding;
                            let d = f(dyo[oy * g.w_out + ox]);
                            gw += d * f(xin[iy * g.w + ix]);
                            dxin[iy * g.w + ix] += d * wv;
                        }
                    }
                    dw[widx] += gw;
                }
            }
        }
    }
    (cast_vec(dx), cast_vec(dw), cast_vec(db))
}

// ---------------------------------------------------------------- pooling

/// Half-open window `[floor(i*n/k), ceil((i+1)*n/k))` of adaptive pooling.
pub fn adaptive_window(i: usize, n: usize, k: usize) -> (usize, usize) {
    let start = i * n / k;
    let end = if fault::armed(Fault::Pool) {
        ((i + 1) * n / k).max(start + 1)
    } else {
        ((i + 1) * n).div_ceil(k)
    };
    (start, end)
}

pub fn adaptive_avg_pool2d<T: Element>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(c * k * k);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..k {
            let (y0, y1) = adaptive_window(i, h, k);
            for j in 0..k {
                let (x0, x1) = adaptive_window(j, w, k);
                let mut s = 0.0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        s += f(plane[yy * w + xx]);
                    }
                }
                out.push(t(s / ((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    out
}

pub fn adaptive_avg_pool2d_backward<T: Element>(
    dy: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<T> {
    let mut dx = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for i in 0..k {
            let (y0, y1) = adaptive_window(i, h, k);
            for j in 0..k {
                let (x0, x1) = adaptive_window(j, w, k);
                let g = f(dy[(ch * k + i) * k + j]) / ((y1 - y0) * (x1 - x0)) as f64;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        dx[(ch * h + yy) * w + xx] += g;
                    }
                }
            }
        }
    }
    cast_vec(dx)
}

// ---------------------------------------------------------------- bilinear

/// Source taps `(i0, i1, weight of i1)` for each output index, half-pixel convention.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let shift = if fault::armed(Fault::Bilinear) { 0.0 } else { 0.5 };
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + shift) * scale - shift).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
            let lambda = (src - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, lambda)
        })
        .collect()
}

pub fn bilinear<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let top = f(plane[y0 * w + x0]) * (1.0 - lx) + f(plane[y0 * w + x1]) * lx;
                let bot = f(plane[y1 * w + x0]) * (1.0 - lx) + f(plane[y1 * w + x1]) * lx;
                out.push(t(top * (1.0 - ly) + bot * ly));
            }
        }
    }
    out
}

pub fn bilinear_backward<T: Element>(
    dy: &[T],
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut dx = vec![0.0f64; c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        let g = &dy[ch * ho * wo..(ch + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let d = f(g[oy * wo + ox]);
                plane[y0 * w + x0] += d * (1.0 - ly) * (1.0 - lx);
                plane[y0 * w + x1] += d * (1.0 - ly) * lx;
                plane[y1 * w + x0] += d * ly * (1.0 - lx);
                plane[y1 * w + x1] += d * ly * lx;
            }
        }
    }
    cast_vec(dx)
}

// ---------------------------------------------------------------- cross entropy

/// Per-pixel softmax cross-entropy over logits `[K, P]` (class-major).
///
/// Returns the mean loss over counted pixels, the softmax probabilities and
/// the number of counted pixels. Labels equal to `ignore` are skipped.
pub fn cross_entropy<T: Element>(
    logits: &[T],
    labels: &[u8],
    k: usize,
    ignore: Option<u8>,
) -> (f64, Vec<T>, usize) {
    let p = labels.len();
    let probs = softmax(logits, 1, k, p);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if Some(l) == ignore {
            continue;
        }
        // log-softmax recomputed in f64 for accuracy
        let mx = (0..k).map(|c| f(logits[c * p + i])).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (f(logits[c * p + i]) - mx).exp()).sum();
        total += -(f(logits[l as usize * p + i]) - mx - z.ln());
        count += 1;
    }
    let loss = if count == 0 { 0.0 } else { total / count as f64 };
    (loss, probs, count)
}

pub fn cross_entropy_backward<T: Element>(
    probs: &[T],
    labels: &[u8],
    k: usize,
    ignore: Option<u8>,
    count: usize,
    dloss: f64,
) -> Vec<T> {
    let p = labels.len();
    let mut d = vec![T::zero(); probs.len()];
    if count == 0 {
        return d;
    }
    let s = dloss / count as f64;
    for (i, &l) in labels.iter().enumerate() {
        if Some(l) == ignore {
            continue;
        }
        for c in 0..k {
            let onehot = if c == l as usize { 1.0 } else { 0.0 };
            d[c * p + i] = t((f(probs[c * p + i]) - onehot) * s);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let c = matmul(&a, &b, 2, 3, 4);
        let (_, bt) = permute(&b, &[3, 4], &[1, 0]);
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 4), c);
        let (_, at) = permute(&a, &[2, 3], &[1, 0]);
        assert_eq!(matmul_tn(&at, &b, 3, 2, 4), c);
    }

    #[test]
    fn adaptive_windows_tile() {
        for n in 1..12 {
            for k in 1..=n {
                let mut covered = vec![0; n];
                for i in 0..k {
                    let (a, b) = adaptive_window(i, n, k);
                    assert!(a < b && b <= n);
                    covered[a..b].iter_mut().for_each(|c| *c += 1);
                }
                assert!(covered.iter().all(|&c| c >= 1), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn conv_valid_ranges() {
        let g = ConvGeom::new(&[1, 5, 5], &[1, 1, 3, 3], 2, 1, 1).unwrap();
        assert_eq!((g.h_out, g.w_out), (3, 3));
        assert_eq!(g.valid(0, 5, 3), (1, 3));
        assert_eq!(g.valid(2, 5, 3), (0, 2));
        assert!(ConvGeom::new(&[1, 4, 4], &[1, 1, 3, 3], 2, 0, 1).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for i in -30..=30 {
            let x = i as f64 * 0.1;
            let h = 1e-5;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
        }
    }
}

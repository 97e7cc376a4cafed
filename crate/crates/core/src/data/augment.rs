//! Training-time augmentation. Flip is applied jointly to all rasters;
//! blur and color jitter touch only the RGB image.

use rand::Rng as _;

use super::{LabelMask, RgbdSample};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
    pub jitter_p: f64,
    /// Maximum relative change for brightness, contrast and saturation.
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Maximum hue rotation as a fraction of a full turn.
    pub hue: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            blur_p: 0.5,
            blur_sigma: (0.1, 2.0),
            jitter_p: 1.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn none() -> Self {
        AugmentConfig { flip_p: 0.0, blur_p: 0.0, jitter_p: 0.0, ..Self::default() }
    }
}

/// Concrete jitter factors; `1.0` (and hue `0.0`) is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl JitterFactors {
    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let mut around_one = |m: f32| if m > 0.0 { rng.random_range(1.0 - m..=1.0 + m) } else { 1.0 };
        let brightness = around_one(cfg.brightness);
        let contrast = around_one(cfg.contrast);
        let saturation = around_one(cfg.saturation);
        let hue = if cfg.hue > 0.0 { rng.random_range(-cfg.hue..=cfg.hue) } else { 0.0 };
        JitterFactors { brightness, contrast, saturation, hue }
    }
}

/// Applies flip, blur and jitter, each drawn from `rng` in that order.
pub fn augment(sample: &RgbdSample, cfg: &AugmentConfig, rng: &mut Rng) -> RgbdSample {
    let mut out = if rng.random_bool(cfg.flip_p) { hflip(sample) } else { sample.clone() };
    if rng.random_bool(cfg.blur_p) {
        let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        out.rgb = gaussian_blur(&out.rgb, sigma);
    }
    if rng.random_bool(cfg.jitter_p) {
        let f = JitterFactors::sample(cfg, rng);
        out.rgb = color_jitter(&out.rgb, f);
    }
    out
}

fn flip_planes<T: Copy>(data: &[T], w: usize) -> Vec<T> {
    data.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Mirrors rgb, depth and label left to right.
pub fn hflip(s: &RgbdSample) -> RgbdSample {
    let w = s.width();
    let rgb = Tensor::new(s.rgb.shape().to_vec(), flip_planes(s.rgb.data(), w)).expect("same shape");
    let depth = Tensor::new(s.depth.shape().to_vec(), flip_planes(s.depth.data(), w)).expect("same shape");
    let label = LabelMask::new(s.height(), w, flip_planes(s.label.data(), w)).expect("same shape");
    RgbdSample { rgb, depth, label }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k.iter().sum();
    k.into_iter().map(|v| v / z).collect()
}

/// Separable Gaussian blur of every channel of `[C, H, W]`, borders clamped.
pub fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let tap = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let src = img.data();
    let mut tmp = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for x in 0..w {
                tmp[(ch * h + y) * w + x] =
                    k.iter().enumerate().map(|(j, kv)| kv * row[tap(x as i64 + j as i64 - r, w)] as f64).sum();
            }
        }
    }
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[(ch * h + tap(y as i64 + j as i64 - r, h)) * w + x])
                    .sum();
                out[(ch * h + y) * w + x] = v as f32;
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let d = mx - mn;
    let h = if d <= 0.0 {
        0.0
    } else if mx == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if mx == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if mx <= 0.0 { 0.0 } else { d / mx };
    [h, s, mx]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Brightness, contrast, saturation, then hue, clamping to `[0, 1]` after
/// each step.
pub fn color_jitter(img: &Tensor<f32>, f: JitterFactors) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let src = img.data();
    let mut px: Vec<[f32; 3]> = (0..plane).map(|i| [src[i], src[plane + i], src[2 * plane + i]]).collect();
    let clamp = |v: f32| v.clamp(0.0, 1.0);

    for p in px.iter_mut() {
        *p = p.map(|v| clamp(v * f.brightness));
    }
    let mean_gray = px.iter().map(|p| gray(p[0], p[1], p[2]) as f64).sum::<f64>() as f32 / plane as f32;
    for p in px.iter_mut() {
        *p = p.map(|v| clamp(f.contrast * v + (1.0 - f.contrast) * mean_gray));
    }
    for p in px.iter_mut() {
        let g = gray(p[0], p[1], p[2]);
        *p = p.map(|v| clamp(f.saturation * v + (1.0 - f.saturation) * g));
    }
    if f.hue != 0.0 {
        for p in px.iter_mut() {
            let [hh, s, v] = rgb_to_hsv(*p);
            *p = hsv_to_rgb([hh + f.hue, s, v]).map(clamp);
        }
    }
    let mut out = vec![0.0f32; 3 * plane];
    for (i, p) in px.iter().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = p[c];
        }
    }
    Tensor::new([3, h, w], out).expect("same shape")
}

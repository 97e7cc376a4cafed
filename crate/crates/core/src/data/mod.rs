//! Synthetic RGB-D scenes whose labels depend on color, depth or both,
//! plus sample types, augmentation and the on-disk format.

pub mod augment;
pub mod netpbm;
pub mod store;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use augment::{augment, color_jitter, gaussian_blur, hflip, AugmentConfig, JitterFactors};
pub use store::{load_dataset, read_manifest, read_sample, write_dataset, write_sample, Dataset, Split};

/// Label value that is excluded from loss and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Region geometry is aligned to this many pixels, matching the decoder's
/// quarter-resolution output grid.
pub const CELL: usize = 8;

/// Depth bins: regions of the even class of a pair sit far, odd ones near.
pub const FAR_BIN: (f32, f32) = (0.15, 0.4);
pub const NEAR_BIN: (f32, f32) = (0.6, 0.85);
/// Background depth, always behind every region.
pub const BACKGROUND_BIN: (f32, f32) = (0.05, 0.12);

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::dim(format!("label mask {h}x{w} with {} values", data.len())));
        }
        Ok(LabelMask { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: u8) -> Self {
        LabelMask { h, w, data: vec![v; h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    /// Pixel counts per value, 256 bins.
    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    /// Checks every value is below `k` or equal to [`IGNORE_INDEX`].
    pub fn check_classes(&self, k: usize) -> Result<()> {
        match self.data.iter().position(|&v| v != IGNORE_INDEX && v as usize >= k) {
            Some(i) => Err(Error::Data(format!("label {} at pixel {i} outside 0..{k}", self.data[i]))),
            None => Ok(()),
        }
    }
}

/// Color, depth and label rasters of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdSample {
    /// `[3, H, W]` in `[0, 1]`.
    pub rgb: Tensor<f32>,
    /// `[1, H, W]` in `[0, 1]`, larger is nearer.
    pub depth: Tensor<f32>,
    pub label: LabelMask,
}

impl RgbdSample {
    pub fn new(rgb: Tensor<f32>, depth: Tensor<f32>, label: LabelMask) -> Result<Self> {
        let (h, w) = (label.height(), label.width());
        if rgb.shape() != [3, h, w] || depth.shape() != [1, h, w] {
            return Err(Error::Data(format!(
                "raster sizes disagree: rgb {:?}, depth {:?}, label [{h}, {w}]",
                rgb.shape(),
                depth.shape()
            )));
        }
        let s = RgbdSample { rgb, depth, label };
        s.check_depth_range()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.label.height()
    }

    pub fn width(&self) -> usize {
        self.label.width()
    }

    pub fn check_depth_range(&self) -> Result<()> {
        match self.depth.data().iter().position(|d| !(0.0..=1.0).contains(d)) {
            Some(i) => Err(Error::Data(format!("depth {} at pixel {i} outside [0, 1]", self.depth.data()[i]))),
            None => Ok(()),
        }
    }
}

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Probability that a region's class is decided by its depth bin
    /// rather than by its color.
    pub depth_coupling: f64,
    /// Half-width of the uniform depth noise inside a region.
    pub layer_noise: f32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_classes: 4,
            min_shapes: 3,
            max_shapes: 6,
            depth_coupling: 0.5,
            layer_noise: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.depth_coupling) {
            return Err(Error::config(format!("depth_coupling {} outside [0, 1]", self.depth_coupling)));
        }
        if self.num_classes < 2 || self.num_classes > 64 {
            return Err(Error::config(format!("num_classes {} outside 2..=64", self.num_classes)));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::config("min_shapes exceeds max_shapes"));
        }
        if !(0.0..0.1).contains(&self.layer_noise) {
            return Err(Error::config(format!("layer_noise {} outside [0, 0.1)", self.layer_noise)));
        }
        Ok(())
    }

    fn groups(&self) -> usize {
        self.num_classes.div_ceil(2)
    }

    /// Color shared by both classes of pair `g`.
    pub fn shared_color(&self, g: usize) -> [f32; 3] {
        hsv_to_rgb((g as f32 + 0.5) / self.groups() as f32, 0.35, 0.55)
    }

    /// Color that identifies class `c` on its own.
    pub fn unique_color(&self, c: usize) -> [f32; 3] {
        hsv_to_rgb(c as f32 / self.num_classes as f32, 0.85, 0.9)
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.fract() * 6.0).min(5.999_999);
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    // Quantize to 8 bits so colors survive a PPM round trip unchanged.
    let rgb = match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|x| (x * 255.0).round() / 255.0)
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
}

impl Shape {
    /// Whether the cell containing pixel `(y, x)` belongs to the shape.
    fn contains(&self, y: usize, x: usize) -> bool {
        let (cy, cx) = (y / CELL, x / CELL);
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&cy) && (x0..x1).contains(&cx),
            Shape::Ellipse { cy: ey, cx: ex, ry, rx } => {
                let dy = (cy as f32 + 0.5 - ey) / ry;
                let dx = (cx as f32 + 0.5 - ex) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

struct Region {
    shape: Option<Shape>,
    class: u8,
    color: [f32; 3],
    depth: f32,
}

fn draw_bin(r: &mut rng::Rng, bin: (f32, f32)) -> f32 {
    r.random_range(bin.0..bin.1)
}

fn make_region(spec: &SceneSpec, r: &mut rng::Rng, shape: Option<Shape>) -> Region {
    let coupled = r.random_bool(spec.depth_coupling);
    let paired = spec.num_classes / 2;
    if shape.is_none() {
        // Background is class 0; coupled backgrounds share pair 0's color.
        let color = if coupled { spec.shared_color(0) } else { spec.unique_color(0) };
        return Region { shape, class: 0, color, depth: draw_bin(r, BACKGROUND_BIN) };
    }
    if coupled && paired > 0 {
        let g = r.random_range(0..paired);
        let near = r.random_bool(0.5);
        let depth = draw_bin(r, if near { NEAR_BIN } else { FAR_BIN });
        Region { shape, class: (2 * g + near as usize) as u8, color: spec.shared_color(g), depth }
    } else {
        let c = r.random_range(0..spec.num_classes);
        let near = r.random_bool(0.5);
        let depth = draw_bin(r, if near { NEAR_BIN } else { FAR_BIN });
        Region { shape, class: c as u8, color: spec.unique_color(c), depth }
    }
}

fn random_shape(r: &mut rng::Rng, ch: usize, cw: usize) -> Shape {
    let max_h = (3 * ch / 4).max(2).min(ch);
    let max_w = (3 * cw / 4).max(2).min(cw);
    if r.random_bool(0.5) {
        let hh = r.random_range(3.min(max_h)..=max_h);
        let ww = r.random_range(3.min(max_w)..=max_w);
        let y0 = r.random_range(0..=ch - hh);
        let x0 = r.random_range(0..=cw - ww);
        Shape::Rect { y0, x0, y1: y0 + hh, x1: x0 + ww }
    } else {
        let ry = r.random_range(1.5f32..(max_h as f32 / 2.0 + 2.0));
        let rx = r.random_range(1.5f32..(max_w as f32 / 2.0 + 2.0));
        Shape::Ellipse {
            cy: r.random_range(0.0..ch as f32),
            cx: r.random_range(0.0..cw as f32),
            ry,
            rx,
        }
    }
}

/// Sample `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &SceneSpec, index: usize, h: usize, w: usize) -> Result<RgbdSample> {
    spec.validate()?;
    if h < CELL || w < CELL {
        return Err(Error::dim(format!("image {h}x{w} smaller than one {CELL}px cell")));
    }
    let mut r = rng::keyed(spec.seed, &[index as u64]);
    let (ch, cw) = (h.div_ceil(CELL), w.div_ceil(CELL));
    let n_shapes = r.random_range(spec.min_shapes..=spec.max_shapes);
    let background = make_region(spec, &mut r, None);
    let mut regions: Vec<Region> = (0..n_shapes)
        .map(|_| {
            let shape = random_shape(&mut r, ch, cw);
            make_region(spec, &mut r, Some(shape))
        })
        .collect();
    // Far regions are painted first so nearer ones occlude them.
    regions.sort_by(|a, b| a.depth.total_cmp(&b.depth));

    let plane = h * w;
    let mut owner = vec![usize::MAX; plane];
    for (ri, reg) in regions.iter().enumerate() {
        let shape = reg.shape.expect("foreground region");
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y, x) {
                    owner[y * w + x] = ri;
                }
            }
        }
    }
    let mut rgb = vec![0.0f32; 3 * plane];
    let mut depth = vec![0.0f32; plane];
    let mut label = vec![0u8; plane];
    for (i, &o) in owner.iter().enumerate() {
        let reg = if o == usize::MAX { &background } else { &regions[o] };
        for c in 0..3 {
            rgb[c * plane + i] = reg.color[c];
        }
        let noise = if spec.layer_noise > 0.0 { r.random_range(-spec.layer_noise..spec.layer_noise) } else { 0.0 };
        depth[i] = (reg.depth + noise).clamp(0.0, 1.0);
        label[i] = reg.class;
    }
    RgbdSample::new(Tensor::new([3, h, w], rgb)?, Tensor::new([1, h, w], depth)?, LabelMask::new(h, w, label)?)
}

/// `n` samples, each seeded by `(spec.seed, index)`.
pub fn generate_dataset(spec: &SceneSpec, n: usize, h: usize, w: usize) -> Result<Vec<RgbdSample>> {
    if n == 0 {
        return Err(Error::Data("dataset needs at least one sample".into()));
    }
    (0..n).map(|i| generate_sample(spec, i, h, w)).collect()
}

/// Fraction of labelled pixels whose exact RGB value is shared with a
/// differently labelled pixel somewhere in `samples`. Such pixels cannot be
/// classified from color alone.
pub fn rgb_ambiguous_fraction(samples: &[RgbdSample]) -> f64 {
    let key = |s: &RgbdSample, i: usize| -> [u8; 3] {
        let plane = s.height() * s.width();
        [0, 1, 2].map(|c| (s.rgb.data()[c * plane + i] * 255.0).round() as u8)
    };
    let mut labels_of: HashMap<[u8; 3], [u64; 4]> = HashMap::new();
    for s in samples {
        for (i, &l) in s.label.data().iter().enumerate() {
            if l != IGNORE_INDEX {
                labels_of.entry(key(s, i)).or_default()[l as usize / 64] |= 1 << (l % 64);
            }
        }
    }
    let (mut amb, mut total) = (0usize, 0usize);
    for s in samples {
        for (i, &l) in s.label.data().iter().enumerate() {
            if l == IGNORE_INDEX {
                continue;
            }
            total += 1;
            let bits: u32 = labels_of[&key(s, i)].iter().map(|b| b.count_ones()).sum();
            if bits > 1 {
                amb += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        amb as f64 / total as f64
    }
}

/// Deterministic disjoint train/validation index split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::keyed(seed, &[0x5917]));
    let n_val = ((n as f64 * val_fraction.clamp(0.0, 1.0)).round() as usize).min(n.saturating_sub(1));
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

//! Dataset directories: one PPM/PGM triple per sample plus `manifest.txt`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::netpbm::{self, Image};
use super::{LabelMask, RgbdSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

pub fn sample_paths(dir: &Path, index: usize) -> [PathBuf; 3] {
    [
        dir.join(format!("{index:06}_rgb.ppm")),
        dir.join(format!("{index:06}_depth.pgm")),
        dir.join(format!("{index:06}_label.pgm")),
    ]
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_sample(dir: &Path, index: usize, s: &RgbdSample) -> Result<()> {
    let (h, w) = (s.height(), s.width());
    let plane = h * w;
    let rgb = s.rgb.data();
    let interleaved: Vec<u8> = (0..plane).flat_map(|i| [0, 1, 2].map(|c| to_u8(rgb[c * plane + i]))).collect();
    let depth: Vec<u16> = s.depth.data().iter().map(|&d| (d.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect();
    let [p_rgb, p_depth, p_label] = sample_paths(dir, index);
    fs::write(p_rgb, netpbm::encode_ppm(w, h, &interleaved)?)?;
    fs::write(p_depth, netpbm::encode_pgm16(w, h, &depth)?)?;
    fs::write(p_label, netpbm::encode_pgm8(w, h, s.label.data())?)?;
    Ok(())
}

fn load(path: &Path, channels: usize) -> Result<Image> {
    let img = netpbm::decode(&fs::read(path)?).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format { offset, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })?;
    if img.channels != channels {
        return Err(Error::Data(format!("{} has {} channels, expected {channels}", path.display(), img.channels)));
    }
    Ok(img)
}

pub fn read_sample(dir: &Path, index: usize) -> Result<RgbdSample> {
    let [p_rgb, p_depth, p_label] = sample_paths(dir, index);
    let rgb = load(&p_rgb, 3)?;
    let depth = load(&p_depth, 1)?;
    let label = load(&p_label, 1)?;
    let (w, h) = (rgb.width, rgb.height);
    if (depth.width, depth.height) != (w, h) || (label.width, label.height) != (w, h) {
        return Err(Error::Data(format!(
            "sample {index}: rgb {w}x{h}, depth {}x{}, label {}x{}",
            depth.width, depth.height, label.width, label.height
        )));
    }
    if label.maxval > 255 {
        return Err(Error::Data(format!("sample {index}: label maxval {} exceeds 255", label.maxval)));
    }
    let plane = h * w;
    let rmax = rgb.maxval as f32;
    let mut planar = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            planar[c * plane + i] = rgb.samples[3 * i + c] as f32 / rmax;
        }
    }
    let dmax = depth.maxval as f64;
    let depth_vals = depth.samples.iter().map(|&v| (v as f64 / dmax) as f32).collect();
    let labels = label.samples.iter().map(|&v| v as u8).collect();
    RgbdSample::new(
        Tensor::new([3, h, w], planar)?,
        Tensor::new([1, h, w], depth_vals)?,
        LabelMask::new(h, w, labels)?,
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

/// Samples together with their split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<RgbdSample>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<RgbdSample>, splits: Vec<Split>, num_classes: usize) -> Result<Self> {
        if samples.len() != splits.len() {
            return Err(Error::Data(format!("{} samples but {} split tags", samples.len(), splits.len())));
        }
        Ok(Dataset { samples, splits, num_classes })
    }

    /// All samples in the training split, using `val` indices for validation.
    pub fn from_split(samples: Vec<RgbdSample>, val: &[usize], num_classes: usize) -> Self {
        let splits = (0..samples.len()).map(|i| if val.contains(&i) { Split::Val } else { Split::Train }).collect();
        Dataset { samples, splits, num_classes }
    }

    pub fn part(&self, split: Split) -> Vec<RgbdSample> {
        self.samples.iter().zip(&self.splits).filter(|(_, s)| **s == split).map(|(x, _)| x.clone()).collect()
    }

    pub fn train(&self) -> Vec<RgbdSample> {
        self.part(Split::Train)
    }

    pub fn val(&self) -> Vec<RgbdSample> {
        self.part(Split::Val)
    }
}

/// Writes every sample and a manifest with one `index split H W K` line each.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, (s, split)) in ds.samples.iter().zip(&ds.splits).enumerate() {
        write_sample(dir, i, s)?;
        manifest.push_str(&format!("{i} {split} {} {} {}\n", s.height(), s.width(), ds.num_classes));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, line)| {
            let bad = |what: &str| Error::Data(format!("{MANIFEST} line {}: {what}", ln + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad("expected 'index split H W K'"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad number '{s}'")));
            Ok(ManifestEntry {
                index: num(f[0])?,
                split: f[1].parse()?,
                height: num(f[2])?,
                width: num(f[3])?,
                num_classes: num(f[4])?,
            })
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let entries = read_manifest(dir)?;
    let Some(first) = entries.first() else {
        return Err(Error::Data(format!("{} lists no samples", dir.join(MANIFEST).display())));
    };
    let k = first.num_classes;
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let s = read_sample(dir, e.index)?;
        if (s.height(), s.width()) != (e.height, e.width) || e.num_classes != k {
            return Err(Error::Data(format!("sample {} disagrees with its manifest line", e.index)));
        }
        s.label.check_classes(k)?;
        samples.push(s);
    }
    Dataset::new(samples, entries.iter().map(|e| e.split).collect(), k)
}

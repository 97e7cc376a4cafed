//! Plain `key=value` run configuration. Later sources override earlier
//! ones: built-in defaults, then a config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SceneSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Every accepted key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("image_h", "input height in pixels"),
    ("image_w", "input width in pixels"),
    ("size", "sets image_h and image_w together"),
    ("patch", "patch side p"),
    ("embed_dim", "token width C"),
    ("depth_blocks", "transformer blocks"),
    ("heads", "attention heads"),
    ("fusion_k", "pooled query grid side k"),
    ("fusion_dim", "fusion attention width, or 'auto' for 2*C"),
    ("decoder_blocks", "ConvNeXt blocks"),
    ("num_classes", "number of classes K"),
    ("decoder_input", "rgb_only or rgb_and_depth"),
    ("use_depth", "false runs the RGB-only baseline"),
    ("seed", "seed for initialisation, shuffling, augmentation and data"),
    ("lr", "AdamW learning rate"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("epochs", "training epochs"),
    ("batch_size", "samples per optimizer step"),
    ("augment", "enable flip, blur and color jitter"),
    ("eval_every", "validate every this many epochs"),
    ("n", "samples to generate"),
    ("val_fraction", "fraction of generated samples held out"),
    ("depth_coupling", "probability a region's class is set by its depth"),
    ("min_shapes", "fewest regions per scene"),
    ("max_shapes", "most regions per scene"),
    ("layer_noise", "depth noise half-width inside a region"),
    ("data_dir", "dataset directory"),
    ("out_dir", "output directory"),
    ("checkpoint", "checkpoint path"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scene: SceneSpec,
    pub n: usize,
    pub val_fraction: f64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::toy();
        RunConfig {
            scene: SceneSpec { num_classes: model.num_classes, seed: model.seed, ..SceneSpec::default() },
            model,
            n: 8,
            val_fraction: 0.25,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for '{key}'")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

/// Sets one architecture or training key; returns `false` if `key` is not
/// a model key.
pub fn set_model_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "image_h" => cfg.image_h = parse(key, value)?,
        "image_w" => cfg.image_w = parse(key, value)?,
        "patch" => cfg.patch = parse(key, value)?,
        "embed_dim" => cfg.embed_dim = parse(key, value)?,
        "depth_blocks" => cfg.depth_blocks = parse(key, value)?,
        "heads" => cfg.heads = parse(key, value)?,
        "fusion_k" => cfg.fusion_k = parse(key, value)?,
        "fusion_dim" => {
            cfg.fusion_dim = if value.trim() == "auto" { None } else { Some(parse(key, value)?) };
        }
        "decoder_blocks" => cfg.decoder_blocks = parse(key, value)?,
        "num_classes" => cfg.num_classes = parse(key, value)?,
        "decoder_input" => cfg.decoder_input = value.trim().parse()?,
        "use_depth" => cfg.use_depth = parse_bool(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "weight_decay" => cfg.weight_decay = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "augment" => cfg.augment = parse_bool(key, value)?,
        "eval_every" => cfg.eval_every = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// All model keys in a fixed order, suitable for [`set_model_key`].
pub fn model_pairs(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("image_h", cfg.image_h.to_string()),
        ("image_w", cfg.image_w.to_string()),
        ("patch", cfg.patch.to_string()),
        ("embed_dim", cfg.embed_dim.to_string()),
        ("depth_blocks", cfg.depth_blocks.to_string()),
        ("heads", cfg.heads.to_string()),
        ("fusion_k", cfg.fusion_k.to_string()),
        ("fusion_dim", cfg.fusion_dim.map_or("auto".to_string(), |d| d.to_string())),
        ("decoder_blocks", cfg.decoder_blocks.to_string()),
        ("num_classes", cfg.num_classes.to_string()),
        ("decoder_input", cfg.decoder_input.to_string()),
        ("use_depth", cfg.use_depth.to_string()),
        ("seed", cfg.seed.to_string()),
        ("lr", cfg.lr.to_string()),
        ("weight_decay", cfg.weight_decay.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("augment", cfg.augment.to_string()),
        ("eval_every", cfg.eval_every.to_string()),
    ]
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "size" => {
                let s: usize = parse(key, value)?;
                self.model.image_h = s;
                self.model.image_w = s;
            }
            "num_classes" => {
                set_model_key(&mut self.model, key, value)?;
                self.scene.num_classes = self.model.num_classes;
            }
            "seed" => {
                set_model_key(&mut self.model, key, value)?;
                self.scene.seed = self.model.seed;
            }
            "n" => self.n = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "depth_coupling" => self.scene.depth_coupling = parse(key, value)?,
            "min_shapes" => self.scene.min_shapes = parse(key, value)?,
            "max_shapes" => self.scene.max_shapes = parse(key, value)?,
            "layer_noise" => self.scene.layer_noise = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value.trim()),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value.trim())),
            _ => {
                if !set_model_key(&mut self.model, key, value)? {
                    return Err(Error::config(format!("unknown key '{key}'")));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got '{line}'", ln + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", ln + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scene.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut rc = RunConfig::default();
        rc.apply_text("# comment\nlr = 0.001\nsize=32 # trailing\n\nnum_classes=6\n").unwrap();
        assert_eq!(rc.model.lr, 0.001);
        assert_eq!((rc.model.image_h, rc.model.image_w), (32, 32));
        assert_eq!(rc.scene.num_classes, 6);
        rc.set("lr", "0.01").unwrap();
        assert_eq!(rc.model.lr, 0.01);
    }

    #[test]
    fn unknown_key_is_error() {
        let mut rc = RunConfig::default();
        assert!(matches!(rc.apply_text("learning_rate=1"), Err(Error::Config(_))));
        assert!(matches!(rc.apply_text("lr"), Err(Error::Config(_))));
        assert!(matches!(rc.set("lr", "fast"), Err(Error::Config(_))));
    }

    #[test]
    fn model_pairs_round_trip() {
        let mut cfg = ModelConfig::full_vitb();
        cfg.fusion_dim = Some(96);
        cfg.lr = 3.3e-4;
        let mut back = ModelConfig::toy();
        for (k, v) in model_pairs(&cfg) {
            assert!(set_model_key(&mut back, k, &v).unwrap());
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_documented_key_is_accepted() {
        for (k, _) in KEYS {
            let v = match *k {
                "decoder_input" => "rgb_only",
                "use_depth" | "augment" => "true",
                "fusion_dim" => "auto",
                "val_fraction" | "depth_coupling" | "layer_noise" | "lr" | "weight_decay" => "0.1",
                "data_dir" | "out_dir" | "checkpoint" => "x",
                _ => "4",
            };
            RunConfig::default().set(k, v).unwrap();
        }
    }
}

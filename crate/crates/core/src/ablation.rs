//! Decoder-depth and decoder-input studies. Published reference numbers
//! are carried along as a separate column and never compared against.

use std::io::Write;

use crate::data::RgbdSample;
use crate::error::Result;
use crate::metrics::NullSink;
use crate::model::{DecoderInput, Model, ModelConfig};
use crate::train::{evaluate_report, train};

pub const REFERENCE_COLUMN: &str = "paper (SAR-RARP50, not reproduced)";
pub const DEFAULT_BLOCKS: [usize; 4] = [1, 2, 4, 8];
/// Published mIoU by decoder block count.
pub const DEPTH_REFERENCE: [(usize, f64); 4] = [(1, 0.843), (2, 0.851), (4, 0.862), (8, 0.856)];
/// Published mIoU and parameter count by decoder input.
pub const INPUT_REFERENCE: [(DecoderInput, f64, &str); 2] =
    [(DecoderInput::RgbOnly, 0.862, "98.37M"), (DecoderInput::RgbAndDepth, 0.823, "103.1M")];

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRow {
    pub blocks: usize,
    pub miou: f64,
    pub params: usize,
    pub reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputRow {
    pub input: DecoderInput,
    pub miou: f64,
    pub params: usize,
    pub reference_miou: f64,
    pub reference_params: &'static str,
}

/// Trains `cfg` and returns validation mIoU of the selected parameters
/// together with the parameter count.
fn run(cfg: &ModelConfig, train_set: &[RgbdSample], val_set: &[RgbdSample]) -> Result<(f64, usize)> {
    let mut model = Model::build(cfg)?;
    let out = train(&mut model, train_set, val_set, &mut NullSink)?;
    model.store = out.best;
    let eval_on = if val_set.is_empty() { train_set } else { val_set };
    Ok((evaluate_report(&model, eval_on)?.mean_iou, model.param_count().total))
}

pub fn ablate_decoder_depth(
    cfg: &ModelConfig,
    train_set: &[RgbdSample],
    val_set: &[RgbdSample],
    blocks: &[usize],
) -> Result<Vec<DepthRow>> {
    blocks
        .iter()
        .map(|&b| {
            log::info!("decoder depth study: {b} blocks");
            let (miou, params) = run(&ModelConfig { decoder_blocks: b, ..cfg.clone() }, train_set, val_set)?;
            let reference = DEPTH_REFERENCE.iter().find(|(n, _)| *n == b).map(|(_, v)| *v);
            Ok(DepthRow { blocks: b, miou, params, reference })
        })
        .collect()
}

pub fn ablate_decoder_input(
    cfg: &ModelConfig,
    train_set: &[RgbdSample],
    val_set: &[RgbdSample],
) -> Result<Vec<InputRow>> {
    INPUT_REFERENCE
        .iter()
        .map(|&(input, reference_miou, reference_params)| {
            log::info!("decoder input study: {input}");
            let (miou, params) = run(&ModelConfig { decoder_input: input, ..cfg.clone() }, train_set, val_set)?;
            Ok(InputRow { input, miou, params, reference_miou, reference_params })
        })
        .collect()
}

pub fn write_depth_csv<W: Write>(out: W, rows: &[DepthRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["blocks", "miou", "params", REFERENCE_COLUMN])?;
    for r in rows {
        w.write_record([
            r.blocks.to_string(),
            format!("{:.4}", r.miou),
            r.params.to_string(),
            r.reference.map_or(String::new(), |v| format!("{v:.3}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_input_csv<W: Write>(out: W, rows: &[InputRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["decoder_input", "miou", "params", REFERENCE_COLUMN, "paper params (not reproduced)"])?;
    for r in rows {
        w.write_record([
            r.input.to_string(),
            format!("{:.4}", r.miou),
            r.params.to_string(),
            format!("{:.3}", r.reference_miou),
            r.reference_params.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

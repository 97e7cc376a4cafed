//! Confusion counts, IoU and the training metrics stream.

use std::io::Write;

use serde::Serialize;

use crate::data::LabelMask;
use crate::error::{Error, Result};

/// Dataset-level confusion counts; `counts[label][pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, label: usize, pred: usize) -> u64 {
        self.counts[label * self.k + pred]
    }

    /// Adds one image. Pixels labelled `ignore` are skipped; any other
    /// label or prediction outside `0..k` is a data error.
    pub fn add(&mut self, pred: &LabelMask, label: &LabelMask, ignore: Option<u8>) -> Result<()> {
        if (pred.height(), pred.width()) != (label.height(), label.width()) {
            return Err(Error::dim(format!(
                "prediction {}x{} vs label {}x{}",
                pred.height(),
                pred.width(),
                label.height(),
                label.width()
            )));
        }
        for (&p, &l) in pred.data().iter().zip(label.data()) {
            if Some(l) == ignore {
                continue;
            }
            let (p, l) = (p as usize, l as usize);
            if p >= self.k || l >= self.k {
                return Err(Error::Data(format!("class pair ({l}, {p}) outside 0..{}", self.k)));
            }
            self.counts[l * self.k + p] += 1;
        }
        Ok(())
    }

    /// IoU of class `c`, or `None` when it is absent from both masks.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.k).map(|l| self.get(l, c)).sum();
        let union = row + col - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k).map(|c| self.iou(c)).collect()
    }

    /// Unweighted mean over classes with a defined IoU (0 if none).
    pub fn mean_iou(&self) -> f64 {
        let defined: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// Mean IoU of a single prediction.
pub fn mean_iou(pred: &LabelMask, label: &LabelMask, k: usize, ignore: Option<u8>) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(k);
    cm.add(pred, label, ignore)?;
    Ok(MetricsReport::from_confusion(&cm))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class_iou: Vec<(usize, Option<f64>)>,
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
    pub loss_history: Vec<(usize, f64)>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        MetricsReport {
            per_class_iou: cm.per_class_iou().into_iter().enumerate().collect(),
            mean_iou: cm.mean_iou(),
            pixel_accuracy: cm.pixel_accuracy(),
            loss_history: Vec::new(),
        }
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Record {
    Step { step: usize, loss: f64 },
    Epoch { epoch: usize, miou: f64, per_class: Vec<Option<f64>> },
}

pub trait MetricsSink {
    fn record(&mut self, rec: &Record) -> Result<()>;
}

impl MetricsSink for Vec<Record> {
    fn record(&mut self, rec: &Record) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &Record) -> Result<()> {
        Ok(())
    }
}

/// Line-delimited JSON.
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> MetricsSink for JsonlSink<W> {
    fn record(&mut self, rec: &Record) -> Result<()> {
        serde_json::to_writer(&mut self.0, rec)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, v: &[u8]) -> LabelMask {
        LabelMask::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks() {
        let m = mask(2, 2, &[0, 1, 1, 2]);
        assert_eq!(mean_iou(&m, &m, 4, None).unwrap().mean_iou, 1.0);
    }

    #[test]
    fn disjoint_masks() {
        let r = mean_iou(&mask(1, 2, &[0, 0]), &mask(1, 2, &[1, 1]), 3, None).unwrap();
        assert_eq!(r.per_class_iou, vec![(0, Some(0.0)), (1, Some(0.0)), (2, None)]);
        assert_eq!(r.mean_iou, 0.0);
    }

    #[test]
    fn ignore_skips_pixels() {
        let r = mean_iou(&mask(1, 3, &[0, 1, 1]), &mask(1, 3, &[0, 1, 255]), 2, Some(255)).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        assert!(mean_iou(&mask(1, 1, &[0]), &mask(1, 1, &[255]), 2, None).is_err());
    }

    #[test]
    fn jsonl_lines() {
        let mut sink = JsonlSink(Vec::new());
        sink.record(&Record::Step { step: 3, loss: 0.5 }).unwrap();
        sink.record(&Record::Epoch { epoch: 0, miou: 0.25, per_class: vec![Some(0.5), None] }).unwrap();
        let text = String::from_utf8(sink.0).unwrap();
        assert_eq!(
            text,
            "{\"step\":3,\"loss\":0.5}\n{\"epoch\":0,\"miou\":0.25,\"per_class\":[0.5,null]}\n"
        );
    }
}

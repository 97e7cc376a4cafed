//! Minibatch training, evaluation and best-model selection.

use rand::seq::SliceRandom;

use crate::data::{augment, AugmentConfig, RgbdSample, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::loss::cross_entropy_loss;
use crate::metrics::{ConfusionMatrix, MetricsReport, MetricsSink, Record};
use crate::model::Model;
use crate::nn::{Ctx, ParamStore};
use crate::optim::AdamW;
use crate::rng;
use crate::tensor::{Tape, Tensor};

const SHUFFLE_KEY: u64 = 0x7368;
const AUGMENT_KEY: u64 = 0x6175;

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(model: &Model, sample: &RgbdSample) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut tape, &model.store);
    let logits = model.forward_sample(&mut cx, sample)?;
    let loss = cross_entropy_loss(&mut cx, logits, &sample.label, Some(IGNORE_INDEX))?;
    let value = tape.value(loss).item() as f64;
    tape.backward(loss)?;
    let mut grads: Vec<Tensor<f32>> =
        model.store.params().iter().map(|p| Tensor::zeros(p.shape.clone())).collect();
    for (id, v) in tape.bound_params() {
        if let Some(g) = tape.grad(v) {
            grads[id.index()] = g;
        }
    }
    Ok((value, grads))
}

/// Confusion counts of the model's argmax predictions over `samples`.
pub fn evaluate(model: &Model, samples: &[RgbdSample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.cfg.num_classes);
    for s in samples {
        cm.add(&model.predict(s)?, &s.label, Some(IGNORE_INDEX))?;
    }
    Ok(cm)
}

pub fn evaluate_report(model: &Model, samples: &[RgbdSample]) -> Result<MetricsReport> {
    Ok(MetricsReport::from_confusion(&evaluate(model, samples)?))
}

fn grad_norm(grads: &[Tensor<f32>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Validation metrics of the selected parameters, with the full loss history.
    pub report: MetricsReport,
    /// Parameters with the best validation mIoU (the initial ones if no
    /// epoch ran).
    pub best: ParamStore,
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

/// Trains `model` in place using `model.cfg` hyperparameters and the
/// default augmentation when `cfg.augment` is set.
pub fn train(
    model: &mut Model,
    train_set: &[RgbdSample],
    val_set: &[RgbdSample],
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome> {
    let aug = if model.cfg.augment { AugmentConfig::default() } else { AugmentConfig::none() };
    train_with(model, train_set, val_set, &aug, sink)
}

/// Like [`train`] with an explicit augmentation setup. When `val_set` is
/// empty the training set is used for model selection.
pub fn train_with(
    model: &mut Model,
    train_set: &[RgbdSample],
    val_set: &[RgbdSample],
    aug: &AugmentConfig,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let cfg = model.cfg.clone();
    cfg.validate()?;
    let val_set = if val_set.is_empty() { train_set } else { val_set };
    let mut opt = AdamW::new(&model.store, cfg.lr as f64, cfg.weight_decay as f64);
    let mut history = Vec::new();
    let mut best: Option<(usize, MetricsReport, ParamStore)> = None;
    let mut step = 0usize;
    let mut last_norm = 0.0f64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::keyed(cfg.seed, &[SHUFFLE_KEY, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let abort = |grad_norm: f64| Error::NumericAbort { step, lr: cfg.lr, grad_norm };
            let scale = 1.0 / batch.len() as f32;
            let mut grads: Vec<Tensor<f32>> =
                model.store.params().iter().map(|p| Tensor::zeros(p.shape.clone())).collect();
            let mut loss = 0.0f64;
            for (pos, &i) in batch.iter().enumerate() {
                let sample = if aug == &AugmentConfig::none() {
                    train_set[i].clone()
                } else {
                    let mut r = rng::keyed(cfg.seed, &[AUGMENT_KEY, step as u64, pos as u64]);
                    augment(&train_set[i], aug, &mut r)
                };
                let (l, g) = match sample_gradients(model, &sample) {
                    Ok(x) => x,
                    Err(Error::Numeric(msg)) => {
                        log::error!("non-finite value in step {step}: {msg}");
                        return Err(abort(last_norm));
                    }
                    Err(e) => return Err(e),
                };
                loss += l / batch.len() as f64;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += v * scale;
                    }
                }
            }
            let norm = grad_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(abort(norm));
            }
            last_norm = norm;
            opt.step(&mut model.store, &grads)?;
            log::debug!("step {step} loss {loss:.5} grad norm {norm:.4e}");
            sink.record(&Record::Step { step, loss })?;
            history.push((step, loss));
            step += 1;
        }
        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let report = evaluate_report(model, val_set)?;
            log::info!("epoch {epoch} val mIoU {:.4}", report.mean_iou);
            sink.record(&Record::Epoch {
                epoch,
                miou: report.mean_iou,
                per_class: report.per_class_iou.iter().map(|(_, v)| *v).collect(),
            })?;
            if best.as_ref().is_none_or(|(_, b, _)| report.mean_iou > b.mean_iou) {
                best = Some((epoch, report, model.store.clone()));
            }
        }
    }

    let (best_epoch, mut report, best_store) = match best {
        Some((e, r, s)) => (Some(e), r, s),
        None => (None, evaluate_report(model, val_set)?, model.store.clone()),
    };
    report.loss_history = history;
    Ok(TrainOutcome { report, best: best_store, best_epoch, steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SceneSpec};
    use crate::metrics::NullSink;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_h: 16,
            image_w: 16,
            patch: 4,
            embed_dim: 16,
            depth_blocks: 1,
            heads: 2,
            fusion_k: 2,
            decoder_blocks: 1,
            num_classes: 4,
            epochs: 1,
            batch_size: 2,
            ..ModelConfig::toy()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let data = generate_dataset(&SceneSpec::default(), 4, 16, 16).unwrap();
        let mut m = Model::build(&ModelConfig { lr: 0.0, ..tiny() }).unwrap();
        let before = m.store.checksum();
        let out = train(&mut m, &data, &[], &mut NullSink).unwrap();
        assert_eq!(out.steps, 2);
        assert_eq!(m.store.checksum(), before);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = generate_dataset(&SceneSpec::default(), 2, 16, 16).unwrap();
        let mut m = Model::build(&ModelConfig { epochs: 0, ..tiny() }).unwrap();
        let out = train(&mut m, &data, &[], &mut NullSink).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.best.checksum(), m.store.checksum());
        assert!(out.best_epoch.is_none());
    }

    #[test]
    fn empty_training_set_is_error() {
        let mut m = Model::build(&tiny()).unwrap();
        assert!(train(&mut m, &[], &[], &mut NullSink).is_err());
    }
}

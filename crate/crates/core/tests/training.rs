//! Behaviour of the training loop on small synthetic sets.

use surgdepth::data::{generate_dataset, SceneSpec};
use surgdepth::metrics::{NullSink, Record};
use surgdepth::train::train;
use surgdepth::{Model, ModelConfig};

#[test]
fn loss_falls_over_first_twenty_steps() {
    let data = generate_dataset(&SceneSpec { seed: 0, ..SceneSpec::default() }, 8, 64, 64).unwrap();
    let cfg = ModelConfig { batch_size: 2, epochs: 5, seed: 0, ..ModelConfig::toy() };
    let mut model = Model::build(&cfg).unwrap();
    let out = train(&mut model, &data, &[], &mut NullSink).unwrap();
    let losses: Vec<f64> = out.report.loss_history.iter().map(|&(_, l)| l).collect();
    assert_eq!(losses.len(), 20);
    let windows: Vec<f64> = losses.chunks(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(windows.windows(2).all(|p| p[1] < p[0]), "window means {windows:?}");
}

#[test]
fn sink_sees_every_step_and_epoch() {
    let data = generate_dataset(&SceneSpec::default(), 4, 64, 64).unwrap();
    let cfg = ModelConfig { batch_size: 2, epochs: 3, eval_every: 2, ..ModelConfig::toy() };
    let mut model = Model::build(&cfg).unwrap();
    let mut records = Vec::new();
    let out = train(&mut model, &data, &data[..2], &mut records).unwrap();
    assert_eq!(out.steps, 6);
    let epochs: Vec<usize> =
        records.iter().filter_map(|r| if let Record::Epoch { epoch, .. } = r { Some(*epoch) } else { None }).collect();
    // Evaluated every second epoch and always on the last.
    assert_eq!(epochs.len(), 2, "{epochs:?}");
    assert_eq!(records.iter().filter(|r| matches!(r, Record::Step { .. })).count(), 6);
}

#[test]
fn best_checkpoint_scores_its_report() {
    let data = generate_dataset(&SceneSpec::default(), 4, 64, 64).unwrap();
    let cfg = ModelConfig { batch_size: 2, epochs: 3, lr: 1e-3, ..ModelConfig::toy() };
    let mut model = Model::build(&cfg).unwrap();
    let out = train(&mut model, &data, &data[..2], &mut NullSink).unwrap();
    model.store = out.best;
    let again = surgdepth::train::evaluate_report(&model, &data[..2]).unwrap();
    assert_eq!(again.mean_iou, out.report.mean_iou);
}

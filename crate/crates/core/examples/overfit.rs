//! Memorises eight scenes with the toy model: 300 steps, batch 4, lr 1e-3,
//! no augmentation. Train mIoU should end near 1.

use surgdepth::data::{generate_dataset, SceneSpec};
use surgdepth::metrics::Record;
use surgdepth::train::{evaluate_report, train};
use surgdepth::{Model, ModelConfig};

fn main() -> surgdepth::Result<()> {
    let spec = SceneSpec { depth_coupling: 0.5, num_classes: 4, seed: 0, ..SceneSpec::default() };
    let data = generate_dataset(&spec, 8, 64, 64)?;
    let cfg = ModelConfig { lr: 1e-3, batch_size: 4, epochs: 150, augment: false, eval_every: 10, ..ModelConfig::toy() };
    let mut model = Model::build(&cfg)?;
    println!("toy model: {} parameters", model.param_count().total);

    let mut records = Vec::new();
    let out = train(&mut model, &data, &[], &mut records)?;
    for r in &records {
        match r {
            Record::Step { step, loss } if step % 50 == 0 => println!("step {step:>3}  loss {loss:.4}"),
            Record::Epoch { epoch, miou, .. } => println!("epoch {epoch:>3}  train mIoU {miou:.4}"),
            _ => {}
        }
    }
    model.store = out.best;
    let report = evaluate_report(&model, &data)?;
    println!("best epoch {:?}: mIoU {:.4}, pixel accuracy {:.4}", out.best_epoch, report.mean_iou, report.pixel_accuracy);
    Ok(())
}

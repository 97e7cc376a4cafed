//! Trains the toy model with and without depth on scenes where two classes
//! share a colour and differ only in depth, then compares validation mIoU.
//! Takes a few minutes per run on one core.
//!
//!     cargo run --release --example depth_benefit -- [seed]

use surgdepth::data::{generate_dataset, split_indices, SceneSpec};
use surgdepth::metrics::NullSink;
use surgdepth::train::train;
use surgdepth::{Model, ModelConfig};

fn main() -> surgdepth::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SceneSpec { depth_coupling: 1.0, num_classes: 4, seed, ..SceneSpec::default() };
    let data = generate_dataset(&spec, 40, 64, 64)?;
    println!("rgb-ambiguous pixel fraction {:.3}", surgdepth::data::rgb_ambiguous_fraction(&data));
    let (tr, va) = split_indices(data.len(), 0.25, seed);
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (tr, va) = (pick(&tr), pick(&va));

    for use_depth in [true, false] {
        let cfg = ModelConfig { lr: 1e-3, batch_size: 8, epochs: 75, eval_every: 5, use_depth, seed, ..ModelConfig::toy() };
        let mut model = Model::build(&cfg)?;
        let out = train(&mut model, &tr, &va, &mut NullSink)?;
        println!(
            "{:<10} best val mIoU {:.4} at epoch {:?}",
            if use_depth { "rgb+depth" } else { "rgb only" },
            out.report.mean_iou,
            out.best_epoch
        );
    }
    Ok(())
}

//! Decoder depth study on synthetic scenes. Prints the CSV that
//! `surgdepth ablate --study decoder-depth` writes. The reference column is
//! the published surgical result and is not reproduced here.

use surgdepth::ablation::{ablate_decoder_depth, write_depth_csv, DEFAULT_BLOCKS};
use surgdepth::data::{generate_dataset, split_indices, SceneSpec};
use surgdepth::ModelConfig;

fn main() -> surgdepth::Result<()> {
    let data = generate_dataset(&SceneSpec::default(), 16, 64, 64)?;
    let (tr, va) = split_indices(data.len(), 0.25, 0);
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let cfg = ModelConfig { epochs: 10, lr: 1e-3, batch_size: 4, ..ModelConfig::toy() };
    let rows = ablate_decoder_depth(&cfg, &pick(&tr), &pick(&va), &DEFAULT_BLOCKS)?;
    write_depth_csv(std::io::stdout(), &rows)
}

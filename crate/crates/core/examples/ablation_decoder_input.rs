//! Decoder input study: feed the decoder RGB tokens only, or RGB and depth
//! tokens concatenated along channels.

use surgdepth::ablation::{ablate_decoder_input, write_input_csv};
use surgdepth::data::{generate_dataset, split_indices, SceneSpec};
use surgdepth::ModelConfig;

fn main() -> surgdepth::Result<()> {
    let spec = SceneSpec { depth_coupling: 1.0, num_classes: 4, ..SceneSpec::default() };
    let data = generate_dataset(&spec, 16, 64, 64)?;
    let (tr, va) = split_indices(data.len(), 0.25, 0);
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let cfg = ModelConfig { epochs: 10, lr: 1e-3, batch_size: 4, ..ModelConfig::toy() };
    let rows = ablate_decoder_input(&cfg, &pick(&tr), &pick(&va))?;
    write_input_csv(std::io::stdout(), &rows)
}

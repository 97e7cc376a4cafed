//! Trains briefly, saves a checkpoint, reloads it and confirms the
//! predictions match bit for bit. Then shows a mismatched load failing.

use surgdepth::data::{generate_dataset, SceneSpec};
use surgdepth::metrics::NullSink;
use surgdepth::train::train;
use surgdepth::{checkpoint, Model, ModelConfig};

fn main() -> surgdepth::Result<()> {
    let data = generate_dataset(&SceneSpec::default(), 4, 64, 64)?;
    let cfg = ModelConfig { epochs: 2, ..ModelConfig::toy() };
    let mut model = Model::build(&cfg)?;
    train(&mut model, &data, &[], &mut NullSink)?;

    let dir = std::env::temp_dir().join("surgdepth-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    checkpoint::save(&path, &model.cfg, &model.store)?;
    println!("saved {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let loaded = checkpoint::load(&path)?;
    println!("checksum before {:016x} after {:016x}", model.store.checksum(), loaded.store.checksum());
    let same = data.iter().map(|s| Ok(model.logits(s)? == loaded.logits(s)?)).collect::<surgdepth::Result<Vec<_>>>()?;
    println!("identical logits on {}/{} samples", same.iter().filter(|&&b| b).count(), same.len());

    let wider = ModelConfig { embed_dim: cfg.embed_dim * 2, ..cfg };
    match checkpoint::load_matching(&path, &wider) {
        Ok(_) => println!("unexpected: mismatched load succeeded"),
        Err(e) => println!("mismatched load rejected: {e}"),
    }
    Ok(())
}

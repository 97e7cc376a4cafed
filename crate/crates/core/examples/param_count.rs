//! Parameter budget of the full-size configuration for both decoder inputs.
//! Only shapes are built, so this runs instantly.

use surgdepth::{DecoderInput, Model, ModelConfig};

fn main() -> surgdepth::Result<()> {
    let mut totals = Vec::new();
    for input in [DecoderInput::RgbOnly, DecoderInput::RgbAndDepth] {
        let model = Model::build_shapes(&ModelConfig { decoder_input: input, ..ModelConfig::full_vitb() })?;
        let count = model.param_count();
        println!("decoder input {input}");
        for (name, n) in &count.breakdown {
            println!("  {name:<18} {n:>11}");
        }
        println!("  {:<18} {:>11} ({:.2}M)", "total", count.total, count.total as f64 / 1e6);
        totals.push(count.total);
    }
    println!("rgb_and_depth adds {:.2}M", (totals[1] - totals[0]) as f64 / 1e6);
    Ok(())
}

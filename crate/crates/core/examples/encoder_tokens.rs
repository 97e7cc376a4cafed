//! Follows one scene through the toy model and prints the shape of every
//! intermediate: patch tokens, fused tokens, jointly encoded tokens, logits.

use surgdepth::data::{generate_sample, SceneSpec};
use surgdepth::nn::Ctx;
use surgdepth::{Model, ModelConfig, Tape};

fn main() -> surgdepth::Result<()> {
    let cfg = ModelConfig::toy();
    let model = Model::build(&cfg)?;
    let sample = generate_sample(&SceneSpec::default(), 0, cfg.image_h, cfg.image_w)?;
    let (gh, gw) = cfg.grid();
    println!("image {}x{}, patch {}, token grid {gh}x{gw}", cfg.image_h, cfg.image_w, cfg.patch);
    println!("the encoder attends over {} tokens (rgb and depth together)", 2 * gh * gw);

    let mut tape = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut tape, &model.store);
    let rgb = cx.var(sample.rgb.clone())?;
    let depth = cx.var(sample.depth.clone())?;
    let t = model.forward_trace(&mut cx, rgb, depth)?;
    for (name, v) in [
        ("rgb patch tokens", t.rgb_tokens),
        ("depth patch tokens", t.depth_tokens),
        ("fused rgb", t.fused_rgb),
        ("fused depth", t.fused_depth),
        ("encoded rgb", t.encoded_rgb),
        ("encoded depth", t.encoded_depth),
        ("logits", t.logits),
    ] {
        println!("{name:<20} {:?}", cx.value(v).shape());
    }
    let plan = cfg.plan();
    println!("decoder plan: {plan:?}");
    Ok(())
}

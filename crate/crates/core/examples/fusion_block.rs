//! Runs the depth-aware fusion block on random RGB and depth token grids
//! and prints what it produces.

use surgdepth::fusion::{fuse_detailed, FusionParams, TokenGrid};
use surgdepth::nn::{Ctx, Init, ParamStore};
use surgdepth::{verify, Tape};

fn main() -> surgdepth::Result<()> {
    let (h, w, c, dim, k) = (8, 8, 16, 32, 2);
    let rgb = verify::random_tensor::<f32>(0, &[1], &[h * w, c], -1.0, 1.0);
    let depth = verify::random_tensor::<f32>(0, &[2], &[h * w, c], -1.0, 1.0);

    let mut store = ParamStore::new(0);
    let params = FusionParams::with_out_init(&mut store, "fusion", c, dim, k, Init::TruncNormal(0.02));
    let mut tape = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let r = cx.var(rgb.clone())?;
    let d = cx.var(depth.clone())?;
    let (rg, dg) = (TokenGrid::new(&cx, r, h, w)?, TokenGrid::new(&cx, d, h, w)?);
    let out = fuse_detailed(&mut cx, &rg, &dg, &params)?;

    let attn = cx.value(out.attention);
    println!("query   {:?}", cx.value(out.query).shape());
    println!("attn    {:?}", attn.shape());
    for q in 0..k * k {
        let row: Vec<f32> = (0..h * w).map(|j| attn.at(&[q, j])).collect();
        let (arg, peak) = row.iter().enumerate().fold((0, 0.0f32), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
        println!("  query {q}: row sum {:.6}, peak {peak:.4} at token ({}, {})", row.iter().sum::<f32>(), arg / w, arg % w);
    }
    println!("context {:?}", cx.value(out.context).shape());
    println!("rgb residual   max |delta| {:.3e}", cx.value(out.rgb.tokens).max_abs_diff(&rgb));
    println!("depth residual max |delta| {:.3e}", cx.value(out.depth.tokens).max_abs_diff(&depth));

    // Zero output projections turn the block into an exact identity.
    let mut store = ParamStore::new(0);
    let params = FusionParams::with_out_init(&mut store, "fusion", c, dim, k, Init::Zeros);
    let mut tape = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let r = cx.var(rgb.clone())?;
    let d = cx.var(depth)?;
    let (rg, dg) = (TokenGrid::new(&cx, r, h, w)?, TokenGrid::new(&cx, d, h, w)?);
    let out = fuse_detailed(&mut cx, &rg, &dg, &params)?;
    println!("zero-init identity: {}", cx.value(out.rgb.tokens) == &rgb);
    Ok(())
}

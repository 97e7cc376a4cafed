//! Self-check suite behind `surgdepth verify`: gradient checks, loop
//! oracles, identities, round trips and parameter counts.

use std::time::Instant;

use crate::data::{self, netpbm, SceneSpec};
use crate::decoder::{convnext_block, ConvNeXtBlock};
use crate::encoder::{mhsa, Attention, TransformerBlock};
use crate::error::{Error, Result};
use crate::fusion::{fuse_detailed, FusionParams, TokenGrid};
use crate::loss::cross_entropy_loss;
use crate::metrics::mean_iou;
use crate::model::{DecoderInput, Model, ModelConfig};
use crate::nn::{Ctx, Init, Linear, ParamStore};
use crate::optim::AdamW;
use crate::oracle;
use crate::rng;
use crate::tensor::{grad_check, Element, GradCheckConfig, GradCheckReport, Tape, Tensor, Var};

/// Published total for the RGB-only ViT-B model.
pub const REFERENCE_PARAMS: f64 = 98.37e6;
pub const REFERENCE_PARAMS_TOL: f64 = 0.05;
/// Published difference between the two decoder inputs.
pub const REFERENCE_DELTA: f64 = 103.1e6 - 98.37e6;
pub const REFERENCE_DELTA_TOL: f64 = 0.30;

pub const ORACLE_TOL: f64 = 1e-5;
pub const ORACLE_INSTANCES: usize = 20;
pub const LINEAR_GRAD_TOL: f64 = 1e-6;
pub const OP_GRAD_TOL: f64 = 1e-3;
pub const MODEL_GRAD_TOL: f64 = 1e-2;
pub const MODEL_GRAD_MIN_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check { name: name.to_string(), passed, detail },
            Err(e) => Check { name: name.to_string(), passed: false, detail: format!("error: {e}") },
        }
    }
}

/// Renders checks as an aligned table.
pub fn format_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{status}  {:<width$}  {}\n", c.name, c.detail));
    }
    s
}

// ------------------------------------------------------------ helpers

pub fn random_tensor<T: Element>(seed: u64, keys: &[u64], shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let mut r = rng::keyed(seed, keys);
    let n = crate::tensor::numel(shape);
    Tensor::new(shape.to_vec(), rng::uniform(&mut r, n, lo, hi).into_iter().map(T::of_f64).collect())
        .expect("shape")
}

/// A copy of `store` with every parameter drawn at random (scale `std`);
/// LayerNorm gains are centred on one.
pub fn randomized(store: &ParamStore, seed: u64, std: f64) -> ParamStore {
    let mut out = store.clone();
    let ids: Vec<_> = out.ids().collect();
    for id in ids {
        let shape = out.params()[id.index()].shape.clone();
        let n = crate::tensor::numel(&shape);
        let offset = if out.name(id).ends_with(".gamma") { 1.0 } else { 0.0 };
        let vals = rng::trunc_normal(&mut rng::keyed(seed, &[0x7261, id.index() as u64]), n, std)
            .into_iter()
            .map(|v| v + offset)
            .collect();
        out.set(id, Tensor::new(shape, vals).expect("shape")).expect("same shape");
    }
    out
}

fn f64_of(store: &ParamStore, id: crate::nn::ParamId) -> Tensor<f64> {
    store.get(id).cast()
}

fn zero_param(store: &mut ParamStore, id: crate::nn::ParamId) {
    let shape = store.params()[id.index()].shape.clone();
    store.set(id, Tensor::zeros(shape)).expect("same shape");
}

// ------------------------------------------------------------ gradients

fn op_check(
    params: &[Tensor<f64>],
    tol: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<(bool, String)> {
    let cfg = GradCheckConfig { tol, ..GradCheckConfig::default() };
    let r = grad_check(f, params, &cfg)?;
    Ok((r.passed, format!("max rel err {:.2e} over {} entries (tol {tol:.0e})", r.max_rel_error, r.checked())))
}

/// Weighted sum `Σ out·R` with a fixed random `R`, so linear ops give
/// exactly linear scalar functions.
fn weighted_sum(t: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let r = random_tensor(seed, &[0x7773], t.shape(out), -1.0, 1.0);
    let r = t.constant(r)?;
    let p = t.mul(out, r)?;
    t.sum(p)
}

pub fn op_gradient_checks() -> Vec<Check> {
    let s = 11;
    let rt = |k: u64, shape: &[usize]| random_tensor::<f64>(s, &[k], shape, -1.0, 1.0);
    vec![
        Check::from(
            "grad/matmul",
            op_check(&[rt(1, &[3, 4]), rt(2, &[4, 5])], LINEAR_GRAD_TOL, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, 1)
            }),
        ),
        Check::from(
            "grad/conv2d",
            op_check(&[rt(3, &[4, 6, 5]), rt(4, &[6, 2, 3, 3]), rt(5, &[6])], LINEAR_GRAD_TOL, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1, 2)?;
                weighted_sum(t, y, 2)
            }),
        ),
        Check::from(
            "grad/adaptive_avg_pool2d",
            op_check(&[rt(6, &[2, 7, 5])], LINEAR_GRAD_TOL, |t, v| {
                let y = t.adaptive_avg_pool2d(v[0], 3)?;
                weighted_sum(t, y, 3)
            }),
        ),
        Check::from(
            "grad/bilinear_resize",
            op_check(&[rt(7, &[2, 3, 4])], LINEAR_GRAD_TOL, |t, v| {
                let y = t.bilinear_resize(v[0], 7, 5)?;
                weighted_sum(t, y, 4)
            }),
        ),
        Check::from(
            "grad/layout",
            op_check(&[rt(8, &[3, 4]), rt(9, &[3, 2])], LINEAR_GRAD_TOL, |t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let p = t.permute(c, &[1, 0])?;
                let r = t.reshape(p, &[2, 9])?;
                let n = t.narrow(r, 1, 2, 5)?;
                weighted_sum(t, n, 5)
            }),
        ),
        Check::from(
            "grad/softmax",
            op_check(&[rt(10, &[3, 5])], OP_GRAD_TOL, |t, v| {
                let y = t.softmax(v[0], 1)?;
                weighted_sum(t, y, 6)
            }),
        ),
        Check::from(
            "grad/layer_norm",
            op_check(&[rt(11, &[4, 6]), rt(12, &[6]), rt(13, &[6])], OP_GRAD_TOL, |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
                weighted_sum(t, y, 7)
            }),
        ),
        Check::from(
            "grad/gelu",
            op_check(&[rt(14, &[4, 5])], OP_GRAD_TOL, |t, v| {
                let y = t.gelu(v[0])?;
                weighted_sum(t, y, 8)
            }),
        ),
        Check::from(
            "grad/cross_entropy",
            op_check(&[rt(15, &[3, 2, 3])], OP_GRAD_TOL, |t, v| t.cross_entropy(v[0], &[0, 2, 1, 255, 1, 0], Some(255))),
        ),
        Check::from(
            "grad/attention",
            op_check(&[rt(16, &[4, 3]), rt(17, &[5, 3]), rt(18, &[5, 2])], OP_GRAD_TOL, |t, v| {
                let kt = t.transpose(v[1])?;
                let s = t.matmul(v[0], kt)?;
                let s = t.scale(s, 0.5)?;
                let a = t.softmax(s, 1)?;
                let o = t.matmul(a, v[2])?;
                weighted_sum(t, o, 9)
            }),
        ),
    ]
}

/// End-to-end check of the loss gradient w.r.t. every parameter tensor
/// of a model built from `cfg` (with randomised weights), sampling at most
/// `per_param` entries per tensor. Runs in `f64`.
pub fn model_grad_check(cfg: &ModelConfig, per_param: usize, seed: u64) -> Result<GradCheckReport> {
    let mut model = Model::build(cfg)?;
    model.store = randomized(&model.store, seed, 0.2);
    let spec = SceneSpec { num_classes: cfg.num_classes.max(2), seed, ..SceneSpec::default() };
    let mut sample = data::generate_sample(&spec, 0, cfg.image_h, cfg.image_w)?;
    // Random labels exercise every class; a few pixels are ignored.
    let mut r = rng::keyed(seed, &[0x6c62]);
    let labels: Vec<u8> = (0..cfg.image_h * cfg.image_w)
        .map(|i| if i % 17 == 0 { 255 } else { (rng::uniform(&mut r, 1, 0.0, cfg.num_classes as f64)[0] as u8).min(cfg.num_classes as u8 - 1) })
        .collect();
    sample.label = data::LabelMask::new(cfg.image_h, cfg.image_w, labels)?;
    let ids: Vec<_> = model.store.ids().collect();
    let params: Vec<Tensor<f64>> = ids.iter().map(|&id| f64_of(&model.store, id)).collect();
    let gc = GradCheckConfig {
        step: 1e-5,
        tol: MODEL_GRAD_TOL,
        abs_floor: 1e-8,
        max_samples_per_param: Some(per_param),
        seed,
    };
    grad_check(
        |t: &mut Tape<f64>, vars: &[Var]| {
            for (&id, &v) in ids.iter().zip(vars) {
                t.bind_param(id, v);
            }
            let mut cx = Ctx::new(t, &model.store);
            let logits = model.forward_sample(&mut cx, &sample)?;
            cross_entropy_loss(&mut cx, logits, &sample.label, Some(255))
        },
        &params,
        &gc,
    )
}

fn model_gradient_check() -> Check {
    Check::from(
        "grad/end-to-end",
        model_grad_check(&ModelConfig::grad_check_toy(), 8, 0).map(|r| {
            let n = r.checked();
            (
                r.passed && n >= MODEL_GRAD_MIN_SAMPLES,
                format!("max rel err {:.2e} over {n} sampled parameters (tol {MODEL_GRAD_TOL:.0e})", r.max_rel_error),
            )
        }),
    )
}

// ------------------------------------------------------------ oracles

fn max_diff(a: &Tensor<f32>, b: &Tensor<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn oracle_loop(f: impl Fn(u64) -> Result<f64>) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for i in 0..ORACLE_INSTANCES as u64 {
        worst = worst.max(f(i)?);
    }
    Ok((worst <= ORACLE_TOL, format!("max abs diff {worst:.2e} over {ORACLE_INSTANCES} instances (tol {ORACLE_TOL:.0e})")))
}

fn pick(seed: u64, key: u64, lo: usize, hi: usize) -> usize {
    lo + (rng::uniform(&mut rng::keyed(seed, &[key]), 1, 0.0, (hi - lo + 1) as f64)[0] as usize).min(hi - lo)
}

pub fn conv2d_oracle_diff(i: u64) -> Result<f64> {
    let s = 100 + i;
    let c_in = pick(s, 1, 1, 4);
    let groups = if pick(s, 2, 0, 1) == 1 { c_in } else { 1 };
    let c_out = groups * pick(s, 3, 1, 3);
    let k = pick(s, 4, 1, 3);
    let pad = pick(s, 5, 0, 1);
    let stride = pick(s, 6, 1, 2);
    let mut h = pick(s, 7, k.max(3), 9);
    let mut w = pick(s, 8, k.max(3), 9);
    h += (h + 2 * pad - k) % stride;
    w += (w + 2 * pad - k) % stride;
    let x = random_tensor::<f32>(s, &[9], &[c_in, h, w], -1.0, 1.0);
    let wt = random_tensor::<f32>(s, &[10], &[c_out, c_in / groups, k, k], -1.0, 1.0);
    let b = random_tensor::<f32>(s, &[11], &[c_out], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let (xv, wv, bv) = (t.constant(x.clone())?, t.constant(wt.clone())?, t.constant(b.clone())?);
    let y = t.conv2d(xv, wv, Some(bv), stride, pad, groups)?;
    Ok(max_diff(t.value(y), &oracle::conv2d(&x.cast(), &wt.cast(), &b.cast(), stride, pad, groups)))
}

pub fn pool_oracle_diff(i: u64) -> Result<f64> {
    let s = 200 + i;
    let (c, h, w) = (pick(s, 1, 1, 3), pick(s, 2, 2, 11), pick(s, 3, 2, 11));
    let k = pick(s, 4, 1, h.min(w));
    let x = random_tensor::<f32>(s, &[5], &[c, h, w], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let xv = t.constant(x.clone())?;
    let y = t.adaptive_avg_pool2d(xv, k)?;
    Ok(max_diff(t.value(y), &oracle::adaptive_avg_pool2d(&x.cast(), k)))
}

pub fn bilinear_oracle_diff(i: u64) -> Result<f64> {
    let s = 300 + i;
    let (c, h, w) = (pick(s, 1, 1, 3), pick(s, 2, 1, 7), pick(s, 3, 1, 7));
    let (ho, wo) = (pick(s, 4, 1, 16), pick(s, 5, 1, 16));
    let x = random_tensor::<f32>(s, &[6], &[c, h, w], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let xv = t.constant(x.clone())?;
    let y = t.bilinear_resize(xv, ho, wo)?;
    Ok(max_diff(t.value(y), &oracle::bilinear(&x.cast(), ho, wo)))
}

pub fn mhsa_oracle_diff(i: u64) -> Result<f64> {
    let s = 400 + i;
    let heads = pick(s, 1, 1, 3);
    let dim = heads * pick(s, 2, 2, 4);
    let n = pick(s, 3, 2, 9);
    let mut store = ParamStore::new(s);
    let attn = Attention::new(&mut store, "attn", dim, heads)?;
    let store = randomized(&store, s, 0.3);
    let x = random_tensor::<f32>(s, &[4], &[n, dim], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut t, &store);
    let xv = cx.constant(x.clone())?;
    let y = mhsa(&mut cx, xv, &attn)?;
    let want = oracle::mhsa(
        &x.cast(),
        &f64_of(&store, attn.qkv.weight),
        &f64_of(&store, attn.qkv.bias),
        &f64_of(&store, attn.proj.weight),
        &f64_of(&store, attn.proj.bias),
        heads,
    )?;
    Ok(max_diff(cx.value(y), &want))
}

fn linear_f64(store: &ParamStore, l: &Linear) -> (Tensor<f64>, Tensor<f64>) {
    (f64_of(store, l.weight), f64_of(store, l.bias))
}

pub fn fusion_oracle_diff(i: u64) -> Result<f64> {
    let s = 500 + i;
    let (h, w) = (pick(s, 1, 2, 7), pick(s, 2, 2, 7));
    let c = pick(s, 3, 1, 4) * 2;
    let dim = pick(s, 4, 2, 8);
    let k = pick(s, 5, 1, h.min(w));
    let mut store = ParamStore::new(s);
    let p = FusionParams::new(&mut store, "fusion", c, dim, k);
    let store = randomized(&store, s, 0.3);
    let rgb = random_tensor::<f32>(s, &[6], &[h * w, c], -1.0, 1.0);
    let depth = random_tensor::<f32>(s, &[7], &[h * w, c], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut t, &store);
    let rv = cx.constant(rgb.clone())?;
    let dv = cx.constant(depth.clone())?;
    let rg = TokenGrid::new(&cx, rv, h, w)?;
    let dg = TokenGrid::new(&cx, dv, h, w)?;
    let out = fuse_detailed(&mut cx, &rg, &dg, &p)?;
    let weights = oracle::FusionWeights {
        q: linear_f64(&store, &p.fc_q),
        k: linear_f64(&store, &p.fc_k),
        v: linear_f64(&store, &p.fc_v),
        out_rgb: linear_f64(&store, &p.fc_out_rgb),
        out_depth: linear_f64(&store, &p.fc_out_depth),
        pool: k,
    };
    let (wr, wd) = oracle::fuse(&rgb.cast(), &depth.cast(), h, w, &weights)?;
    Ok(max_diff(cx.value(out.rgb.tokens), &wr).max(max_diff(cx.value(out.depth.tokens), &wd)))
}

pub fn oracle_checks() -> Vec<Check> {
    vec![
        Check::from("oracle/conv2d", oracle_loop(conv2d_oracle_diff)),
        Check::from("oracle/adaptive_avg_pool2d", oracle_loop(pool_oracle_diff)),
        Check::from("oracle/bilinear_resize", oracle_loop(bilinear_oracle_diff)),
        Check::from("oracle/mhsa", oracle_loop(mhsa_oracle_diff)),
        Check::from("oracle/fusion", oracle_loop(fusion_oracle_diff)),
    ]
}

// ------------------------------------------------------------ identities

/// Max deviation from the input of a fusion block whose output
/// projections start at zero.
pub fn fusion_identity_error() -> Result<f64> {
    let mut store = ParamStore::new(1);
    let p = FusionParams::with_out_init(&mut store, "fusion", 8, 16, 3, Init::Zeros);
    let rgb = random_tensor::<f32>(2, &[], &[30, 8], -1.0, 1.0);
    let depth = random_tensor::<f32>(3, &[], &[30, 8], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut t, &store);
    let (rv, dv) = (cx.constant(rgb.clone())?, cx.constant(depth.clone())?);
    let (rg, dg) = (TokenGrid::new(&cx, rv, 5, 6)?, TokenGrid::new(&cx, dv, 5, 6)?);
    let out = fuse_detailed(&mut cx, &rg, &dg, &p)?;
    Ok(cx.value(out.rgb.tokens).max_abs_diff(&rgb).max(cx.value(out.depth.tokens).max_abs_diff(&depth)))
}

pub fn transformer_identity_error() -> Result<f64> {
    let mut store = ParamStore::new(4);
    let b = TransformerBlock::new(&mut store, "blk", 16, 4)?;
    let mut store = randomized(&store, 4, 0.3);
    for id in [b.attn.proj.weight, b.attn.proj.bias, b.fc2.weight, b.fc2.bias] {
        zero_param(&mut store, id);
    }
    let x = random_tensor::<f32>(5, &[], &[7, 16], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut t, &store);
    let xv = cx.constant(x.clone())?;
    let y = b.forward(&mut cx, xv)?;
    Ok(cx.value(y).max_abs_diff(&x))
}

pub fn convnext_identity_error() -> Result<f64> {
    let mut store = ParamStore::new(6);
    let b = ConvNeXtBlock::new(&mut store, "blk", 8);
    let mut store = randomized(&store, 6, 0.3);
    zero_param(&mut store, b.pw2.weight);
    zero_param(&mut store, b.pw2.bias);
    let x = random_tensor::<f32>(7, &[], &[8, 6, 5], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut t, &store);
    let xv = cx.constant(x.clone())?;
    let y = convnext_block(&mut cx, xv, &b)?;
    Ok(cx.value(y).max_abs_diff(&x))
}

fn exact(err: Result<f64>) -> Result<(bool, String)> {
    err.map(|e| (e == 0.0, format!("max deviation {e:.2e}")))
}

fn within(err: Result<f64>, tol: f64) -> Result<(bool, String)> {
    err.map(|e| (e <= tol, format!("max deviation {e:.2e} (tol {tol:.0e})")))
}

/// Largest `|Σ_row − 1|` of softmax and of the fusion attention map.
pub fn row_normalization_error() -> Result<f64> {
    let mut worst = 0.0f64;
    let x = random_tensor::<f32>(8, &[], &[6, 9], -5.0, 5.0);
    let mut t = Tape::<f32>::new();
    let xv = t.constant(x)?;
    let y = t.softmax(xv, 1)?;
    for row in t.value(y).data().chunks(9) {
        worst = worst.max((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs());
    }
    let mut store = ParamStore::new(9);
    let p = FusionParams::new(&mut store, "fusion", 4, 8, 2);
    let store = randomized(&store, 9, 0.5);
    let rgb = random_tensor::<f32>(10, &[], &[20, 4], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let mut cx = Ctx::new(&mut t, &store);
    let rv = cx.constant(rgb.clone())?;
    let dv = cx.constant(rgb)?;
    let (rg, dg) = (TokenGrid::new(&cx, rv, 4, 5)?, TokenGrid::new(&cx, dv, 4, 5)?);
    let out = fuse_detailed(&mut cx, &rg, &dg, &p)?;
    for row in cx.value(out.attention).data().chunks(20) {
        worst = worst.max((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs());
    }
    Ok(worst)
}

pub fn concat_slice_error() -> Result<f64> {
    let a = random_tensor::<f32>(11, &[], &[3, 4, 2], -1.0, 1.0);
    let b = random_tensor::<f32>(12, &[], &[3, 1, 2], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let (av, bv) = (t.constant(a.clone())?, t.constant(b.clone())?);
    let c = t.concat(&[av, bv], 1)?;
    let a2 = t.narrow(c, 1, 0, 4)?;
    let b2 = t.narrow(c, 1, 4, 1)?;
    Ok(t.value(a2).max_abs_diff(&a).max(t.value(b2).max_abs_diff(&b)))
}

/// Pooling to `k` where `k` divides the input keeps the mean exactly (in
/// exact arithmetic); returns the deviation of the means.
pub fn pool_mean_error() -> Result<f64> {
    let x = random_tensor::<f32>(13, &[], &[2, 12, 8], -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let xv = t.constant(x.clone())?;
    let y = t.adaptive_avg_pool2d(xv, 4)?;
    Ok((t.value(y).mean() - x.mean()).abs())
}

pub fn netpbm_round_trip() -> Result<(bool, String)> {
    let spec = SceneSpec::default();
    let s = data::generate_sample(&spec, 3, 12, 16)?;
    let (h, w) = (12, 16);
    let plane = h * w;
    let rgb: Vec<u8> = (0..plane).flat_map(|i| [0, 1, 2].map(|c| (s.rgb.data()[c * plane + i] * 255.0).round() as u8)).collect();
    let depth: Vec<u16> = s.depth.data().iter().map(|&d| (d as f64 * 65535.0).round() as u16).collect();
    let ok_rgb = netpbm::decode(&netpbm::encode_ppm(w, h, &rgb)?)?.samples == rgb.iter().map(|&v| v as u16).collect::<Vec<_>>();
    let ok_depth = netpbm::decode(&netpbm::encode_pgm16(w, h, &depth)?)?.samples == depth;
    let ok_label = netpbm::decode(&netpbm::encode_pgm8(w, h, s.label.data())?)?.samples
        == s.label.data().iter().map(|&v| v as u16).collect::<Vec<_>>();
    Ok((ok_rgb && ok_depth && ok_label, format!("ppm {ok_rgb}, pgm16 {ok_depth}, pgm8 {ok_label}")))
}

pub fn identity_checks() -> Vec<Check> {
    vec![
        Check::from("identity/fusion zero-init", exact(fusion_identity_error())),
        Check::from("identity/transformer zero-init", exact(transformer_identity_error())),
        Check::from("identity/convnext zero-init", exact(convnext_identity_error())),
        Check::from("norm/softmax and attention rows", within(row_normalization_error(), 1e-6)),
        Check::from("roundtrip/concat-narrow", exact(concat_slice_error())),
        Check::from("norm/pool mean", within(pool_mean_error(), 1e-6)),
        Check::from("roundtrip/netpbm", netpbm_round_trip()),
    ]
}

// ------------------------------------------------------------ misc

/// Maximum deviation of ten AdamW steps (wd = 0) from a plain Adam
/// recurrence evaluated in `f64`.
pub fn adam_oracle_error() -> Result<f64> {
    let grads = [0.5, -1.0, 0.25, 2.0, -0.3, 0.0, 1.5, -2.5, 0.75, 0.1];
    let (lr, b1, b2, eps) = (0.01f64, 0.9f64, 0.999f64, 1e-8f64);
    let mut store = ParamStore::new(0);
    let id = store.add("p", &[1], Init::Ones);
    let mut opt = AdamW::new(&store, lr, 0.0);
    let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for (t, &g) in grads.iter().enumerate() {
        opt.step(&mut store, &[Tensor::new([1], vec![g as f32])?])?;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        p -= lr * mh / (vh.sqrt() + eps);
        worst = worst.max((store.get(id).data()[0] as f64 - p).abs());
    }
    Ok(worst)
}

fn miou_sanity() -> Result<(bool, String)> {
    let l = data::LabelMask::new(4, 4, vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1])?;
    let p = data::LabelMask::new(4, 4, vec![0, 1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1])?;
    let same = mean_iou(&l, &l, 2, None)?.mean_iou;
    let r = mean_iou(&p, &l, 2, None)?;
    // class 0: 4 / 8, class 1: 8 / 12
    let want = (0.5 + 8.0 / 12.0) / 2.0;
    Ok((same == 1.0 && (r.mean_iou - want).abs() < 1e-12, format!("self {same}, overlap {:.4}", r.mean_iou)))
}

fn determinism() -> Result<(bool, String)> {
    let cfg = ModelConfig::grad_check_toy();
    let a = Model::build(&cfg)?;
    let b = Model::build(&cfg)?;
    let s = data::generate_sample(&SceneSpec { num_classes: cfg.num_classes, ..SceneSpec::default() }, 0, 16, 16)?;
    let la = a.logits(&s)?;
    let lb = b.logits(&s)?;
    let same_params = a.store == b.store;
    let same_logits = la.data().iter().zip(lb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((same_params && same_logits, format!("params equal {same_params}, logits bit-equal {same_logits}")))
}

fn toy_shapes() -> Result<(bool, String)> {
    let cfg = ModelConfig::toy();
    let m = Model::build(&cfg)?;
    let s = data::generate_sample(&SceneSpec { num_classes: cfg.num_classes, ..SceneSpec::default() }, 0, cfg.image_h, cfg.image_w)?;
    let logits = m.logits(&s)?;
    let plan = cfg.plan();
    Ok((logits.shape() == plan.logits, format!("logits {:?}, plan {:?}", logits.shape(), plan.logits)))
}

/// Parameter totals of the full configuration for both decoder inputs.
pub fn full_param_counts() -> Result<(usize, usize)> {
    let rgb = Model::build_shapes(&ModelConfig::full_vitb())?.param_count().total;
    let both = Model::build_shapes(&ModelConfig { decoder_input: DecoderInput::RgbAndDepth, ..ModelConfig::full_vitb() })?
        .param_count()
        .total;
    Ok((rgb, both))
}

pub fn param_checks() -> Vec<Check> {
    let counts = full_param_counts();
    let total = counts.as_ref().map(|&(r, _)| r).map_err(|e| Error::Usage(e.to_string()));
    let delta = counts.as_ref().map(|&(r, b)| b as f64 - r as f64).map_err(|e| Error::Usage(e.to_string()));
    vec![
        Check::from(
            "params/full-vitb total",
            total.map(|t| {
                let rel = (t as f64 - REFERENCE_PARAMS) / REFERENCE_PARAMS;
                (rel.abs() <= REFERENCE_PARAMS_TOL, format!("{:.2}M ({:+.1}% vs 98.37M, tol ±5%)", t as f64 / 1e6, 100.0 * rel))
            }),
        ),
        Check::from(
            "params/decoder-input delta",
            delta.map(|d| {
                let rel = (d - REFERENCE_DELTA) / REFERENCE_DELTA;
                (rel.abs() <= REFERENCE_DELTA_TOL, format!("{:.2}M ({:+.1}% vs 4.73M, tol ±30%)", d / 1e6, 100.0 * rel))
            }),
        ),
    ]
}

fn full_shapes() -> Result<(bool, String)> {
    let cfg = ModelConfig::full_vitb();
    let plan = cfg.plan();
    let ok = plan.tokens_per_stream == 1200
        && plan.encoder_sequence == 2400
        && plan.decoder_grid == [96, 120, 160]
        && plan.logits == [9, 480, 640];
    Model::build_shapes(&cfg)?;
    Ok((ok, format!("{plan:?}")))
}

/// Checks that run without training at the toy scale.
pub fn toy_suite() -> Vec<Check> {
    let mut checks = op_gradient_checks();
    checks.push(model_gradient_check());
    checks.extend(oracle_checks());
    checks.extend(identity_checks());
    checks.push(Check::from("optim/adamw vs adam oracle", within(adam_oracle_error(), 1e-6)));
    checks.push(Check::from("metrics/miou", miou_sanity()));
    checks.push(Check::from("determinism/build+forward", determinism()));
    checks.push(Check::from("shape/toy forward", toy_shapes()));
    checks.extend(param_checks());
    checks
}

/// Count and shape checks at the full configuration; nothing is allocated.
pub fn full_suite() -> Vec<Check> {
    let mut checks = param_checks();
    checks.push(Check::from("shape/full-vitb plan", full_shapes()));
    checks
}

/// Runs a suite and times it.
pub fn run(full: bool) -> (Vec<Check>, f64) {
    let t = Instant::now();
    let checks = if full { full_suite() } else { toy_suite() };
    (checks, t.elapsed().as_secs_f64())
}

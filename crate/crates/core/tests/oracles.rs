//! Hand-computed and closed-form reference values for individual ops and
//! layers, checked against the tape implementation.

use surgdepth::data::{
    color_jitter, generate_dataset, read_sample, rgb_ambiguous_fraction, write_sample, AugmentConfig, JitterFactors,
    LabelMask, SceneSpec,
};
use surgdepth::decoder::{decode, tokens_to_grid, DecoderParams};
use surgdepth::encoder::{encode, mhsa, Attention, EncoderParams, PatchEmbed};
use surgdepth::fusion::{fuse, fuse_detailed, make_query, FusionParams, TokenGrid};
use surgdepth::loss::cross_entropy_loss;
use surgdepth::metrics::{mean_iou, ConfusionMatrix};
use surgdepth::nn::{Ctx, Init, ParamStore};
use surgdepth::optim::AdamW;
use surgdepth::{rng, verify, DecoderInput, Model, ModelConfig, Tape, Tensor, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "max diff {d:e} > {tol:e}\n{:?}\n{:?}", a.data(), b.data());
}

/// Evaluates `f` on a fresh `f64` tape and returns the value of its output.
fn eval(f: impl FnOnce(&mut Tape<f64>) -> Var) -> Tensor<f64> {
    let mut tape = Tape::<f64>::new();
    let out = f(&mut tape);
    tape.value(out).clone()
}

fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
    verify::random_tensor(seed, &[7], shape, -1.0, 1.0)
}

// ---------------------------------------------------------------- tensor ops

#[test]
fn identity_times_b_is_b() {
    let b = random(1, &[3, 4]);
    let out = eval(|tp| {
        let i = tp.var(Tensor::eye(3)).unwrap();
        let bv = tp.var(b.clone()).unwrap();
        tp.matmul(i, bv).unwrap()
    });
    assert_eq!(out, b);
}

#[test]
fn zeros_times_ones_is_zeros() {
    let out = eval(|tp| {
        let a = tp.var(Tensor::zeros([2, 3])).unwrap();
        let b = tp.var(Tensor::ones([3, 4])).unwrap();
        tp.matmul(a, b).unwrap()
    });
    assert_eq!(out, Tensor::zeros([2, 4]));
}

#[test]
fn matmul_matches_triple_loop() {
    let (a, b) = (random(2, &[4, 5]), random(3, &[5, 6]));
    let out = eval(|tp| {
        let (av, bv) = (tp.var(a.clone()).unwrap(), tp.var(b.clone()).unwrap());
        tp.matmul(av, bv).unwrap()
    });
    let expect = Tensor::from_fn([4, 6], |i| (0..5).map(|k| a.at(&[i / 6, k]) * b.at(&[k, i % 6])).sum());
    close(&out, &expect, 1e-6);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let out = eval(|tp| {
        let x = tp.var(Tensor::zeros([1, 3])).unwrap();
        tp.softmax(x, 1).unwrap()
    });
    close(&out, &Tensor::full([1, 3], 1.0 / 3.0), 1e-12);
}

#[test]
fn softmax_of_large_equal_logits_does_not_overflow() {
    let mut tape = Tape::<f32>::new();
    let x = tape.var(Tensor::new([1, 2], vec![1000.0f32, 1000.0]).unwrap()).unwrap();
    let y = tape.softmax(x, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_match_direct_formula() {
    let x = random(4, &[3, 7]);
    let out = eval(|tp| {
        let v = tp.var(x.clone()).unwrap();
        tp.softmax(v, 1).unwrap()
    });
    let expect = Tensor::from_fn([3, 7], |i| {
        let r = i / 7;
        let z: f64 = (0..7).map(|j| x.at(&[r, j]).exp()).sum();
        x.data()[i].exp() / z
    });
    close(&out, &expect, 1e-12);
    for r in 0..3 {
        assert!(((0..7).map(|j| out.at(&[r, j])).sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

fn layer_norm_of(x: &Tensor<f64>, gamma: &[f64], beta: &[f64]) -> Tensor<f64> {
    let c = x.shape()[1];
    eval(|tp| {
        let v = tp.var(x.clone()).unwrap();
        let g = tp.var(t(&[c], gamma)).unwrap();
        let b = tp.var(t(&[c], beta)).unwrap();
        tp.layer_norm(v, g, b, 1e-6).unwrap()
    })
}

#[test]
fn layer_norm_keeps_standardized_row() {
    let x = t(&[1, 4], &[-1.0, 1.0, -1.0, 1.0]);
    close(&layer_norm_of(&x, &[1.0; 4], &[0.0; 4]), &x, 1e-5);
}

#[test]
fn layer_norm_of_constant_row_is_beta() {
    let x = t(&[1, 3], &[2.5, 2.5, 2.5]);
    let beta = [0.1, -0.2, 0.3];
    close(&layer_norm_of(&x, &[2.0, 3.0, 4.0], &beta), &t(&[1, 3], &beta), 1e-12);
}

#[test]
fn layer_norm_matches_scalar_formula() {
    let x = random(5, &[1, 9]);
    let gamma: Vec<f64> = (0..9).map(|i| 0.5 + 0.1 * i as f64).collect();
    let beta: Vec<f64> = (0..9).map(|i| 0.05 * i as f64 - 0.2).collect();
    let mu = x.data().iter().sum::<f64>() / 9.0;
    let var = x.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 9.0;
    let expect = Tensor::from_fn([1, 9], |i| (x.data()[i] - mu) / (var + 1e-6).sqrt() * gamma[i] + beta[i]);
    close(&layer_norm_of(&x, &gamma, &beta), &expect, 1e-5);
}

#[test]
fn gelu_limits() {
    let out = eval(|tp| {
        let x = tp.var(t(&[3], &[0.0, 10.0, -10.0])).unwrap();
        tp.gelu(x).unwrap()
    });
    assert_eq!(out.data()[0], 0.0);
    assert!((out.data()[1] - 10.0).abs() < 1e-4);
    assert!(out.data()[2].abs() < 1e-4);
}

fn conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, padding: usize, groups: usize) -> Tensor<f64> {
    eval(|tp| {
        let (xv, wv) = (tp.var(x.clone()).unwrap(), tp.var(w.clone()).unwrap());
        tp.conv2d(xv, wv, None, stride, padding, groups).unwrap()
    })
}

#[test]
fn one_by_one_identity_conv() {
    let x = random(6, &[3, 4, 5]);
    let w = Tensor::from_fn([3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    assert_eq!(conv(&x, &w, 1, 0, 1), x);
}

#[test]
fn depthwise_ones_kernel_on_constant_image() {
    let x = Tensor::full([2, 5, 5], 0.7);
    let y = conv(&x, &Tensor::ones([2, 1, 3, 3]), 1, 1, 2);
    for c in 0..2 {
        for r in 1..4 {
            for col in 1..4 {
                assert!((y.at(&[c, r, col]) - 6.3).abs() < 1e-12);
            }
        }
    }
    // A corner only sees a 2x2 window.
    assert!((y.at(&[0, 0, 0]) - 2.8).abs() < 1e-12);
}

#[test]
fn strided_conv_matches_loop_oracle() {
    let x = random(7, &[2, 5, 5]);
    let w = random(8, &[3, 2, 3, 3]);
    let expect = surgdepth::oracle::conv2d(&x, &w, &Tensor::zeros([3]), 2, 1, 1);
    close(&conv(&x, &w, 2, 1, 1), &expect, 1e-5);
}

fn pool(x: &Tensor<f64>, k: usize) -> Tensor<f64> {
    eval(|tp| {
        let v = tp.var(x.clone()).unwrap();
        tp.adaptive_avg_pool2d(v, k).unwrap()
    })
}

#[test]
fn pool_to_own_size_is_identity() {
    let x = random(9, &[2, 4, 4]);
    assert_eq!(pool(&x, 4), x);
}

#[test]
fn pool_of_constant_is_constant() {
    close(&pool(&Tensor::full([1, 7, 5], 1.25), 3), &Tensor::full([1, 3, 3], 1.25), 1e-12);
}

#[test]
fn pool_of_ramp_averages_two_by_two_windows() {
    let x = Tensor::from_fn([1, 6, 6], |i| i as f64);
    // On 6 -> 3 every window is [2i, 2i+2) on each axis.
    let expect = Tensor::from_fn([1, 3, 3], |i| {
        let (r, c) = (2 * (i / 3), 2 * (i % 3));
        (x.at(&[0, r, c]) + x.at(&[0, r, c + 1]) + x.at(&[0, r + 1, c]) + x.at(&[0, r + 1, c + 1])) / 4.0
    });
    assert_eq!(pool(&x, 3), expect);
}

fn resize(x: &Tensor<f64>, ho: usize, wo: usize) -> Tensor<f64> {
    eval(|tp| {
        let v = tp.var(x.clone()).unwrap();
        tp.bilinear_resize(v, ho, wo).unwrap()
    })
}

#[test]
fn resize_to_same_size_is_identity() {
    let x = random(10, &[2, 3, 5]);
    assert_eq!(resize(&x, 3, 5), x);
}

#[test]
fn resize_of_constant_is_constant() {
    close(&resize(&Tensor::full([1, 2, 3], -0.5), 7, 4), &Tensor::full([1, 7, 4], -0.5), 1e-12);
}

#[test]
fn resize_two_by_two_to_four_by_four() {
    let x = t(&[1, 2, 2], &[0.0, 1.0, 2.0, 3.0]);
    // Source coordinate of output index i is clamp((i + 0.5) / 2 - 0.5, 0, 1),
    // and the input is the plane f(y, x) = 2y + x.
    let src = |i: usize| ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
    let expect = Tensor::from_fn([1, 4, 4], |i| 2.0 * src(i / 4) + src(i % 4));
    close(&resize(&x, 4, 4), &expect, 1e-6);
}

#[test]
fn concat_of_one_part_and_of_two() {
    let a = random(11, &[2, 3]);
    let b = random(12, &[2, 3]);
    let one = eval(|tp| {
        let av = tp.var(a.clone()).unwrap();
        tp.concat(&[av], 0).unwrap()
    });
    assert_eq!(one, a);
    let two = eval(|tp| {
        let (av, bv) = (tp.var(a.clone()).unwrap(), tp.var(b.clone()).unwrap());
        tp.concat(&[av, bv], 0).unwrap()
    });
    assert_eq!(two.shape(), &[4, 3]);
    assert_eq!(&two.data()[..6], a.data());
    assert_eq!(&two.data()[6..], b.data());
}

#[test]
fn sum_of_squares_gradient() {
    let x = random(13, &[2, 3]);
    let mut tape = Tape::<f64>::new();
    let v = tape.var(x.clone()).unwrap();
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    let expect = Tensor::from_fn([2, 3], |i| 2.0 * x.data()[i]);
    assert_eq!(tape.grad(v).unwrap(), expect);
}

// ---------------------------------------------------------------- fusion

struct Grids {
    store: ParamStore,
    fusion: FusionParams,
}

fn fusion_setup(c: usize, dim: usize, k: usize, out: Init) -> Grids {
    let mut store = ParamStore::new(3);
    let fusion = FusionParams::with_out_init(&mut store, "f", c, dim, k, out);
    let store = verify::randomized(&store, 4, 0.3);
    Grids { store, fusion }
}

#[test]
fn zero_output_projections_make_fusion_identity() {
    let mut store = ParamStore::new(3);
    let fusion = FusionParams::with_out_init(&mut store, "f", 8, 8, 2, Init::Zeros);
    let (rgb, depth) = (random(20, &[16, 8]), random(21, &[16, 8]));
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let r = cx.var(rgb.clone()).unwrap();
    let d = cx.var(depth.clone()).unwrap();
    let (rg, dg) = (TokenGrid::new(&cx, r, 4, 4).unwrap(), TokenGrid::new(&cx, d, 4, 4).unwrap());
    let (ro, do_) = fuse(&mut cx, &rg, &dg, &fusion).unwrap();
    assert_eq!(cx.value(ro.tokens), &rgb);
    assert_eq!(cx.value(do_.tokens), &depth);
}

#[test]
fn constant_inputs_give_identical_query_rows() {
    let g = fusion_setup(4, 6, 2, Init::TruncNormal(0.02));
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &g.store);
    let row: Vec<f64> = vec![0.3, -0.1, 0.7, 0.2];
    let tokens = Tensor::from_fn([16, 4], |i| row[i % 4]);
    let r = cx.var(tokens.clone()).unwrap();
    let d = cx.var(tokens.clone()).unwrap();
    let (rg, dg) = (TokenGrid::new(&cx, r, 4, 4).unwrap(), TokenGrid::new(&cx, d, 4, 4).unwrap());
    let q = make_query(&mut cx, &rg, &dg, &g.fusion).unwrap();
    let q = cx.value(q);
    assert_eq!(q.shape(), &[4, 6]);
    for r in 1..4 {
        for j in 0..6 {
            assert!((q.at(&[r, j]) - q.at(&[0, j])).abs() < 1e-12);
        }
    }
}

#[test]
fn query_matches_pool_then_linear() {
    let g = fusion_setup(3, 5, 2, Init::TruncNormal(0.02));
    let (rgb, depth) = (random(22, &[16, 3]), random(23, &[16, 3]));
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &g.store);
    let r = cx.var(rgb.clone()).unwrap();
    let d = cx.var(depth.clone()).unwrap();
    let (rg, dg) = (TokenGrid::new(&cx, r, 4, 4).unwrap(), TokenGrid::new(&cx, d, 4, 4).unwrap());
    let q = make_query(&mut cx, &rg, &dg, &g.fusion).unwrap();
    // 4 -> 2 pooling averages disjoint 2x2 token blocks.
    let pooled = Tensor::from_fn([4, 6], |i| {
        let (cell, ch) = (i / 6, i % 6);
        let (by, bx) = (2 * (cell / 2), 2 * (cell % 2));
        let src = if ch < 3 { &rgb } else { &depth };
        let mut s = 0.0;
        for dy in 0..2 {
            for dx in 0..2 {
                s += src.at(&[(by + dy) * 4 + bx + dx, ch % 3]);
            }
        }
        s / 4.0
    });
    let w = g.store.get(g.fusion.fc_q.weight).cast::<f64>();
    let b = g.store.get(g.fusion.fc_q.bias).cast::<f64>();
    close(cx.value(q), &surgdepth::oracle::linear(&pooled, &w, &b), 1e-5);
}

#[test]
fn single_query_attends_as_weighted_average() {
    let g = fusion_setup(4, 4, 1, Init::TruncNormal(0.02));
    let (rgb, depth) = (random(24, &[9, 4]), random(25, &[9, 4]));
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &g.store);
    let r = cx.var(rgb.clone()).unwrap();
    let d = cx.var(depth.clone()).unwrap();
    let (rg, dg) = (TokenGrid::new(&cx, r, 3, 3).unwrap(), TokenGrid::new(&cx, d, 3, 3).unwrap());
    let out = fuse_detailed(&mut cx, &rg, &dg, &g.fusion).unwrap();
    let p = |l: &surgdepth::nn::Linear| (g.store.get(l.weight).cast::<f64>(), g.store.get(l.bias).cast::<f64>());
    let (wk, bk) = p(&g.fusion.fc_k);
    let (wv, bv) = p(&g.fusion.fc_v);
    let q = cx.value(out.query).clone();
    let keys = surgdepth::oracle::linear(&rgb, &wk, &bk);
    let vals = surgdepth::oracle::linear(&rgb, &wv, &bv);
    let logits: Vec<f64> =
        (0..9).map(|j| (0..4).map(|c| q.at(&[0, c]) * keys.at(&[j, c])).sum::<f64>() / 2.0).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let expect = Tensor::from_fn([1, 4], |c| (0..9).map(|j| logits[j].exp() / z * vals.at(&[j, c])).sum());
    close(cx.value(out.context), &expect, 1e-5);
}

#[test]
fn attention_oracle_edge_cases() {
    let v = t(&[1, 3], &[0.2, -0.4, 0.9]);
    let one = surgdepth::oracle::attention(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 2], &[-3.0, 0.5]), &v, 1.0).unwrap();
    close(&one, &v, 1e-15);
    let vals = random(26, &[5, 3]);
    let uniform = surgdepth::oracle::attention(&Tensor::zeros([2, 4]), &random(27, &[5, 4]), &vals, 1.0).unwrap();
    let mean = Tensor::from_fn([2, 3], |i| (0..5).map(|r| vals.at(&[r, i % 3])).sum::<f64>() / 5.0);
    close(&uniform, &mean, 1e-12);
}

#[test]
fn fusion_matches_loop_oracle_on_spec_shape() {
    for i in 0..3 {
        assert!(verify::fusion_oracle_diff(i).unwrap() < 1e-5);
    }
}

// ---------------------------------------------------------------- encoder

#[test]
fn patch_equal_to_image_gives_single_token() {
    let mut store = ParamStore::new(0);
    let pe = PatchEmbed::new(&mut store, "pe", 3, 5, 4);
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let img = cx.var(random(30, &[3, 4, 4])).unwrap();
    let g = pe.forward(&mut cx, img).unwrap();
    assert_eq!((g.h, g.w), (1, 1));
    assert_eq!(cx.shape(g.tokens), &[1, 5]);
}

#[test]
fn constant_image_gives_equal_tokens() {
    let mut store = ParamStore::new(0);
    let pe = PatchEmbed::new(&mut store, "pe", 3, 6, 2);
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let img = cx.var(Tensor::full([3, 6, 4], 0.4)).unwrap();
    let g = pe.forward(&mut cx, img).unwrap();
    let tok = cx.value(g.tokens);
    for r in 1..6 {
        for c in 0..6 {
            assert_eq!(tok.at(&[r, c]), tok.at(&[0, c]));
        }
    }
}

#[test]
fn identity_patch_weights_flatten_patches() {
    let mut store = ParamStore::new(0);
    let pe = PatchEmbed::new(&mut store, "pe", 1, 4, 2);
    // Output channel o picks pixel (o / 2, o % 2) of its patch.
    let w = Tensor::from_fn([4, 1, 2, 2], |i| if i / 4 == i % 4 { 1.0f32 } else { 0.0 });
    store.set(pe.conv.weight, w).unwrap();
    let img = Tensor::from_fn([1, 4, 4], |i| i as f64);
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let x = cx.var(img.clone()).unwrap();
    let g = pe.forward(&mut cx, x).unwrap();
    let expect = Tensor::from_fn([4, 4], |i| {
        let (tok, o) = (i / 4, i % 4);
        let (y, x) = (2 * (tok / 2) + o / 2, 2 * (tok % 2) + o % 2);
        img.at(&[0, y, x])
    });
    assert_eq!(cx.value(g.tokens), &expect);
}

fn attention_layer(dim: usize, heads: usize) -> (ParamStore, Attention) {
    let mut store = ParamStore::new(1);
    let a = Attention::new(&mut store, "a", dim, heads).unwrap();
    (verify::randomized(&store, 2, 0.3), a)
}

fn run_mhsa(store: &ParamStore, a: &Attention, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, store);
    let v = cx.var(x.clone()).unwrap();
    let y = mhsa(&mut cx, v, a).unwrap();
    cx.value(y).clone()
}

#[test]
fn single_token_attention_is_projected_value() {
    let (store, a) = attention_layer(6, 2);
    let x = random(31, &[1, 6]);
    let get = |id| store.get(id).cast::<f64>();
    let qkv = surgdepth::oracle::linear(&x, &get(a.qkv.weight), &get(a.qkv.bias));
    let v = Tensor::from_fn([1, 6], |i| qkv.data()[12 + i]);
    let expect = surgdepth::oracle::linear(&v, &get(a.proj.weight), &get(a.proj.bias));
    close(&run_mhsa(&store, &a, &x), &expect, 1e-12);
}

#[test]
fn single_head_matches_loop_oracle() {
    let (store, a) = attention_layer(5, 1);
    let x = random(32, &[7, 5]);
    let get = |id| store.get(id).cast::<f64>();
    let expect = surgdepth::oracle::mhsa(
        &x,
        &get(a.qkv.weight),
        &get(a.qkv.bias),
        &get(a.proj.weight),
        &get(a.proj.bias),
        1,
    )
    .unwrap();
    close(&run_mhsa(&store, &a, &x), &expect, 1e-5);
}

#[test]
fn attention_is_permutation_equivariant() {
    let (store, a) = attention_layer(8, 4);
    let x = random(33, &[6, 8]);
    let perm = [3, 0, 5, 1, 4, 2];
    let px = Tensor::from_fn([6, 8], |i| x.at(&[perm[i / 8], i % 8]));
    let (y, py) = (run_mhsa(&store, &a, &x), run_mhsa(&store, &a, &px));
    let expect = Tensor::from_fn([6, 8], |i| y.at(&[perm[i / 8], i % 8]));
    close(&py, &expect, 1e-12);
}

fn run_encoder(store: &ParamStore, enc: &EncoderParams, rgb: &Tensor<f64>, depth: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, store);
    let r = cx.var(rgb.clone()).unwrap();
    let d = cx.var(depth.clone()).unwrap();
    let (rg, dg) = (TokenGrid::new(&cx, r, 2, 2).unwrap(), TokenGrid::new(&cx, d, 2, 2).unwrap());
    let (out, _) = encode(&mut cx, &rg, &dg, enc).unwrap();
    cx.value(out).clone()
}

#[test]
fn empty_encoder_is_identity() {
    let mut store = ParamStore::new(0);
    let enc = EncoderParams::new(&mut store, "e", 4, 8, 0, 2).unwrap();
    let rgb = random(34, &[4, 8]);
    assert_eq!(run_encoder(&store, &enc, &rgb, &random(35, &[4, 8])), rgb);
}

#[test]
fn depth_tokens_reach_rgb_outputs() {
    let mut store = ParamStore::new(0);
    let enc = EncoderParams::new(&mut store, "e", 4, 8, 1, 2).unwrap();
    let store = verify::randomized(&store, 5, 0.3);
    let rgb = random(36, &[4, 8]);
    let a = run_encoder(&store, &enc, &rgb, &Tensor::zeros([4, 8]));
    let b = run_encoder(&store, &enc, &rgb, &random(37, &[4, 8]));
    assert!(a.max_abs_diff(&b) > 1e-6);
}

// ---------------------------------------------------------------- decoder

#[test]
fn single_token_becomes_one_tile() {
    let x = Tensor::from_fn([1, 16 * 8], |i| i as f64);
    let grid = eval(|tp| {
        let store = ParamStore::new(0);
        let mut cx = Ctx::new(tp, &store);
        let v = cx.var(x.clone()).unwrap();
        tokens_to_grid(&mut cx, v, 1, 1, 4).unwrap()
    });
    assert_eq!(grid.shape(), &[8, 4, 4]);
    // Feature (ty*4 + tx)*8 + c lands at channel c, row ty, column tx.
    for c in 0..8 {
        for ty in 0..4 {
            for tx in 0..4 {
                assert_eq!(grid.at(&[c, ty, tx]), ((ty * 4 + tx) * 8 + c) as f64);
            }
        }
    }
}

#[test]
fn full_config_grid_shape() {
    let plan = ModelConfig { num_classes: 9, ..ModelConfig::full_vitb() }.plan();
    assert_eq!(plan.tokens_per_stream, 1200);
    assert_eq!(plan.encoder_sequence, 2400);
    assert_eq!(plan.decoder_grid, [96, 120, 160]);
    assert_eq!(plan.logits, [9, 480, 640]);
}

#[test]
fn zero_head_gives_constant_bias_plane() {
    let mut store = ParamStore::new(0);
    let dec = DecoderParams::new(&mut store, "d", 16, 8, 2, 1).unwrap();
    let mut store = verify::randomized(&store, 6, 0.3);
    store.set(dec.head.weight, Tensor::zeros([1, 2, 1, 1])).unwrap();
    store.set(dec.head.bias, Tensor::new([1], vec![0.75f32]).unwrap()).unwrap();
    let mut tape = Tape::<f64>::new();
    let mut cx = Ctx::new(&mut tape, &store);
    let tok = cx.var(random(38, &[6, 16])).unwrap();
    let out = decode(&mut cx, tok, 2, 3, 16, 24, &dec).unwrap();
    assert_eq!(cx.value(out), &Tensor::full([1, 16, 24], 0.75));
}

// ---------------------------------------------------------------- model

#[test]
fn depth_input_changes_logits() {
    let cfg = ModelConfig::grad_check_toy();
    let mut model = Model::build(&cfg).unwrap();
    model.store = verify::randomized(&model.store, 7, 0.2);
    let data = generate_dataset(&SceneSpec { num_classes: 3, ..SceneSpec::default() }, 1, 16, 16).unwrap();
    let mut other = data[0].clone();
    for v in other.depth.data_mut() {
        *v = 1.0 - *v;
    }
    assert!(model.logits(&data[0]).unwrap().max_abs_diff(&model.logits(&other).unwrap()) > 1e-6);
}

#[test]
fn widened_decoder_adds_parameters() {
    let count = |input| Model::build_shapes(&ModelConfig { decoder_input: input, ..ModelConfig::toy() })
        .unwrap()
        .param_count()
        .total;
    assert!(count(DecoderInput::RgbOnly) < count(DecoderInput::RgbAndDepth));
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::build(&ModelConfig::toy()).unwrap();
    let b = Model::build(&ModelConfig::toy()).unwrap();
    assert_eq!(a.store.checksum(), b.store.checksum());
    for (x, y) in a.store.params().iter().zip(b.store.params()) {
        assert_eq!(x.value, y.value);
    }
}

// ---------------------------------------------------------------- training

#[test]
fn cross_entropy_two_by_two_by_hand() {
    // K = 2 classes on a 2x2 image, logits listed class-major.
    let logits = [1.0, 0.0, -1.0, 2.0, 0.0, 0.5, 1.0, 2.0];
    let labels = [0u8, 1, 1, 0];
    let mut tape = Tape::<f64>::new();
    let x = tape.var(t(&[2, 2, 2], &logits)).unwrap();
    let m = LabelMask::new(2, 2, labels.to_vec()).unwrap();
    let loss = cross_entropy_loss(&mut tape, x, &m, None).unwrap();
    // -log softmax at each pixel: ln(e^a + e^b) - chosen.
    let hand = [
        (1.0f64.exp() + 0.0f64.exp()).ln() - 1.0,
        (0.0f64.exp() + 0.5f64.exp()).ln() - 0.5,
        ((-1.0f64).exp() + 1.0f64.exp()).ln() - 1.0,
        (2.0f64.exp() + 2.0f64.exp()).ln() - 2.0,
    ];
    let mean = hand.iter().sum::<f64>() / 4.0;
    assert!((tape.value(loss).item() - mean).abs() < 1e-6);
}

#[test]
fn miou_four_by_four_by_hand() {
    // Label: left half class 0, right half class 1. Prediction shifts the
    // boundary one column right.
    let label: Vec<u8> = (0..16).map(|i| u8::from(i % 4 >= 2)).collect();
    let pred: Vec<u8> = (0..16).map(|i| u8::from(i % 4 >= 3)).collect();
    let (l, p) = (LabelMask::new(4, 4, label).unwrap(), LabelMask::new(4, 4, pred).unwrap());
    // class 0: inter 8, union 12; class 1: inter 4, union 8.
    let r = mean_iou(&p, &l, 2, None).unwrap();
    assert_eq!(r.per_class_iou, vec![(0, Some(8.0 / 12.0)), (1, Some(0.5))]);
    assert!((r.mean_iou - (8.0 / 12.0 + 0.5) / 2.0).abs() < 1e-12);
    let mut cm = ConfusionMatrix::new(2);
    cm.add(&p, &l, None).unwrap();
    assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (8, 0, 4, 4));
}

#[test]
fn adam_first_step_on_scalar() {
    let mut store = ParamStore::new(0);
    let id = store.add("p", &[1], Init::Ones);
    let mut opt = AdamW::new(&store, 0.1, 0.0);
    opt.step(&mut store, &[Tensor::new([1], vec![1.0f32]).unwrap()]).unwrap();
    assert!((store.get(id).data()[0] - 0.9).abs() < 1e-6);
}

#[test]
fn adam_decay_only() {
    let mut store = ParamStore::new(0);
    let id = store.add("p", &[2], Init::Ones);
    let mut opt = AdamW::new(&store, 0.1, 0.1);
    for step in 1..=3 {
        opt.step(&mut store, &[Tensor::zeros([2])]).unwrap();
        let expect = 0.99f64.powi(step);
        assert!((store.get(id).data()[0] as f64 - expect).abs() < 1e-6);
    }
}

// ---------------------------------------------------------------- data

#[test]
fn coupled_scenes_are_ambiguous_in_rgb() {
    let spec = SceneSpec { depth_coupling: 1.0, ..SceneSpec::default() };
    let data = generate_dataset(&spec, 8, 64, 64).unwrap();
    assert!(rgb_ambiguous_fraction(&data) > 0.2);
    let plain = generate_dataset(&SceneSpec { depth_coupling: 0.0, ..spec }, 8, 64, 64).unwrap();
    assert_eq!(rgb_ambiguous_fraction(&plain), 0.0);
}

#[test]
fn jitter_stays_in_unit_range() {
    let cfg = AugmentConfig::default();
    let mut r = rng::keyed(0, &[1]);
    for i in 0..1000u64 {
        let img: Tensor<f32> = verify::random_tensor(i, &[2], &[3, 4, 4], 0.0, 1.0);
        let out = color_jitter(&img, JitterFactors::sample(&cfg, &mut r));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn depth_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_dataset(&SceneSpec::default(), 1, 32, 32).unwrap().remove(0);
    write_sample(dir.path(), 0, &s).unwrap();
    let back = read_sample(dir.path(), 0).unwrap();
    assert_eq!(back.label, s.label);
    assert!(back.depth.max_abs_diff(&s.depth) <= 1.0 / 65535.0);
    assert!(back.rgb.max_abs_diff(&s.rgb) <= 1.0 / 255.0);
}

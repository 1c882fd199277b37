use super::*;
use crate::autodiff::{grad_check, Graph};
use crate::image::ImageBuf;
use crate::nn::{Session, LN_EPS};
use crate::rng::stream;
use rand::Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            patch_grid: (2, 2),
            patch_size: 2,
            in_channels: 3,
            feature_dim: 6,
            n_blocks: 1,
            mlp_hidden: 8,
        },
        slots: SlotConfig {
            n_slots: 3,
            n_iterations: 2,
            slot_dim: 8,
            mlp_hidden: 8,
        },
        decoder: DecoderConfig { n_layers: 3, hidden: 8 },
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what} coordinate {i}: {x} vs {y}");
    }
}

fn random_image(cfg: &EncoderConfig, seed: u64) -> ImageBuf {
    let (h, w) = cfg.input_size();
    let mut r = stream(seed, "image");
    ImageBuf {
        width: w,
        height: h,
        pixels: (0..w * h * 3).map(|_| r.random_range(0.0..1.0)).collect(),
    }
}

// -------------------------------------------------------------------------
// encode
// -------------------------------------------------------------------------

#[test]
fn encode_patch_count_follows_grid() {
    let mut cfg = tiny_config();
    cfg.encoder.patch_grid = (8, 8);
    cfg.encoder.patch_size = 4;
    let params = init_params(&cfg, &mut stream(0, "init"));
    let image = random_image(&cfg.encoder, 1);
    assert_eq!((image.height, image.width), (32, 32));
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &params);
    let id = encode(&mut s, &image, &cfg.encoder).unwrap();
    assert_eq!(s.graph.shape(id), &[64, cfg.encoder.feature_dim]);
}

#[test]
fn encode_rejects_indivisible_images() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(0, "init"));
    let image = ImageBuf::filled(5, 4, [0.0; 3]);
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &params);
    match encode(&mut s, &image, &cfg.encoder) {
        Err(ModelError::IndivisibleImage { width: 5, .. }) => {}
        other => panic!("expected IndivisibleImage, got {other:?}"),
    }
}

#[test]
fn encode_with_zero_weights_reduces_to_normed_pos_embed() {
    // Zero image and zero linear weights leave only the positional
    // embedding, transformed by the final layer norm: attention values and
    // MLP outputs vanish, so the residual stream is the embedding itself.
    let cfg = tiny_config();
    let mut params = init_params(&cfg, &mut stream(0, "init"));
    for i in 0..params.len() {
        let p = params.at(i);
        let zero = p.name != "encoder.pos_embed"
            && !p.name.ends_with(".gamma")
            && !p.name.ends_with(".beta");
        if zero {
            let n = p.numel();
            params.at_mut(i).data = vec![0.0; n];
        }
    }
    let (h, w) = cfg.encoder.input_size();
    let image = ImageBuf::filled(w, h, [0.0; 3]);
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &params);
    let id = encode(&mut s, &image, &cfg.encoder).unwrap();
    let got = s.graph.data(id);

    let pos = &params.get("encoder.pos_embed").unwrap().data;
    let d = cfg.encoder.feature_dim;
    let mut expected = Vec::new();
    for row in pos.chunks(d) {
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        expected.extend(row.iter().map(|v| (v - mean) * inv));
    }
    assert_close(got, &expected, 1e-12, "normed pos embed");
}

#[test]
fn encode_is_deterministic() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(3, "init"));
    let image = random_image(&cfg.encoder, 4);
    let run = || {
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, &params);
        let id = encode(&mut s, &image, &cfg.encoder).unwrap();
        s.graph.data(id).to_vec()
    };
    assert_eq!(run(), run());
}

// -------------------------------------------------------------------------
// target_encode
// -------------------------------------------------------------------------

#[test]
fn target_encoder_matches_student_at_start_and_ignores_updates() {
    let cfg = tiny_config();
    let mut params = init_params(&cfg, &mut stream(5, "init"));
    let teacher = params.subset("encoder.");
    let image = random_image(&cfg.encoder, 6);

    let student = {
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, &params);
        let id = encode(&mut s, &image, &cfg.encoder).unwrap();
        s.graph.data(id).to_vec()
    };
    let t0 = target_encode(&image, &teacher, &cfg.encoder).unwrap();
    assert_eq!(student, t0, "teacher initialized as a copy");

    // Mutate the student; the snapshot must be bitwise stable.
    let i = params.position("encoder.patch_embed.w").unwrap();
    for v in &mut params.at_mut(i).data {
        *v += 0.37;
    }
    let t1 = target_encode(&image, &teacher, &cfg.encoder).unwrap();
    assert_eq!(t0, t1);
}

// -------------------------------------------------------------------------
// slot attention
// -------------------------------------------------------------------------

fn random_features(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, "features");
    (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()
}

#[test]
fn single_slot_attention_is_all_ones() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(7, "init"));
    let feats = random_features(4, cfg.encoder.feature_dim, 8);
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &params);
    let f = s.graph.constant(feats, &[4, cfg.encoder.feature_dim]).unwrap();
    let noise = sample_slot_noise(&cfg.slots, 1, &mut stream(9, "noise"));
    let fwd = slot_attention_with_noise(&mut s, f, &cfg.slots, 1, &noise).unwrap();
    let state = fwd.extract(s.graph);
    assert_eq!(state.n_slots, 1);
    assert_close(&state.attn, &vec![1.0; 4], 1e-12, "single-slot attention");
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(10, "init"));
    let n = 4;
    let feats = random_features(n, cfg.encoder.feature_dim, 11);
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &params);
    let f = s.graph.constant(feats, &[n, cfg.encoder.feature_dim]).unwrap();
    let fwd = slot_attention(&mut s, f, &cfg.slots, 3, &mut stream(12, "noise")).unwrap();
    let state = fwd.extract(s.graph);
    for p in 0..n {
        let row = &state.attn[p * 3..(p + 1) * 3];
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6, "row {p} sums to {sum}");
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn permuting_slot_noise_permutes_outputs() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(13, "init"));
    let n = 4;
    let k = 3;
    let ds = cfg.slots.slot_dim;
    let feats = random_features(n, cfg.encoder.feature_dim, 14);
    let noise = sample_slot_noise(&cfg.slots, k, &mut stream(15, "noise"));
    let perm = [2usize, 0, 1];
    let mut permuted = vec![0.0; noise.len()];
    for (to, &from) in perm.iter().enumerate() {
        permuted[to * ds..(to + 1) * ds].copy_from_slice(&noise[from * ds..(from + 1) * ds]);
    }

    let run = |noise: &[f64]| {
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, &params);
        let f = s
            .graph
            .constant(feats.clone(), &[n, cfg.encoder.feature_dim])
            .unwrap();
        let fwd = slot_attention_with_noise(&mut s, f, &cfg.slots, k, noise).unwrap();
        fwd.extract(s.graph)
    };
    let base = run(&noise);
    let swapped = run(&permuted);

    for (to, &from) in perm.iter().enumerate() {
        assert_close(
            &swapped.slots[to * ds..(to + 1) * ds],
            &base.slots[from * ds..(from + 1) * ds],
            1e-6,
            "permuted slots",
        );
        for p in 0..n {
            let a = swapped.attn[p * k + to];
            let b = base.attn[p * k + from];
            assert!((a - b).abs() <= 1e-6, "attention column permutation");
        }
    }
}

#[test]
fn well_separated_clusters_share_slots_within_cluster() {
    // Two tight feature clusters; over 20 seeds the argmax slot labels must
    // agree within each cluster.
    let mut cfg = tiny_config();
    cfg.slots.n_iterations = 3;
    let d = cfg.encoder.feature_dim;
    for seed in 0..20u64 {
        let params = init_params(&cfg, &mut stream(seed, "init"));
        let mut feats = Vec::new();
        let mut r = stream(seed, "jitter");
        for patch in 0..4 {
            let sign = if patch < 2 { 1.0 } else { -1.0 };
            for j in 0..d {
                let base = if j % 2 == 0 { 3.0 } else { -3.0 };
                feats.push(sign * base + r.random_range(-0.05..0.05));
            }
        }
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, &params);
        let f = s.graph.constant(feats, &[4, d]).unwrap();
        let fwd =
            slot_attention(&mut s, f, &cfg.slots, 2, &mut stream(seed, "noise")).unwrap();
        let state = fwd.extract(s.graph);
        let label = |p: usize| {
            let row = &state.attn[p * 2..(p + 1) * 2];
            if row[0] >= row[1] {
                0
            } else {
                1
            }
        };
        assert_eq!(label(0), label(1), "seed {seed}: cluster A split");
        assert_eq!(label(2), label(3), "seed {seed}: cluster B split");
    }
}

#[test]
fn non_finite_attention_is_rejected_with_iteration() {
    let cfg = tiny_config();
    let mut params = init_params(&cfg, &mut stream(16, "init"));
    for name in ["slots.proj_q.w", "slots.proj_k.w"] {
        let i = params.position(name).unwrap();
        for v in &mut params.at_mut(i).data {
            *v = 1e308;
        }
    }
    let feats = random_features(4, cfg.encoder.feature_dim, 17);
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &params);
    let f = s.graph.constant(feats, &[4, cfg.encoder.feature_dim]).unwrap();
    match slot_attention(&mut s, f, &cfg.slots, 3, &mut stream(18, "noise")) {
        Err(ModelError::NonFiniteAttention { iteration: 0 }) => {}
        other => panic!("expected NonFiniteAttention at iteration 0, got {other:?}"),
    }
}

#[test]
fn slot_attention_mse_gradient_matches_finite_differences() {
    // 4 patches, 2 slots; gradient with respect to the input features.
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(19, "init"));
    let d = cfg.encoder.feature_dim;
    let feats = random_features(4, d, 20);
    let noise = sample_slot_noise(&cfg.slots, 2, &mut stream(21, "noise"));
    let target: Vec<f64> = random_features(2, cfg.slots.slot_dim, 22);

    let gap = grad_check(
        |g, x| {
            let mut s = Session::frozen_on(g, &params);
            let fwd = slot_attention_with_noise(&mut s, x, &cfg.slots, 2, &noise)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => crate::autodiff::TensorError::Invalid(other.to_string()),
                })?;
            let slots = fwd.slots;
            let t = s.graph.constant(target.clone(), &[2, cfg.slots.slot_dim])?;
            let diff = s.graph.sub(slots, t)?;
            let sq = s.graph.square(diff)?;
            s.graph.reduce_mean(sq, None)
        },
        &feats,
        &[4, d],
        1e-5,
    )
    .unwrap();
    assert!(gap <= 1e-6, "relative gap {gap}");
}

// -------------------------------------------------------------------------
// decoder
// -------------------------------------------------------------------------

/// Independent scalar-loop re-implementation of the full decode path.
fn decode_oracle(
    params: &crate::nn::ParamSet,
    cfg: &ModelConfig,
    slots: &[f64],
    n_slots: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.encoder.n_patches();
    let ds = cfg.slots.slot_dim;
    let d = cfg.encoder.feature_dim;
    let pos = &params.get("decoder.pos_embed").unwrap().data;
    let mut recon = vec![0.0; n * d];
    let mut masks = vec![0.0; n * n_slots];
    for p in 0..n {
        let mut per_slot: Vec<Vec<f64>> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        for k in 0..n_slots {
            let mut h: Vec<f64> = (0..ds)
                .map(|j| slots[k * ds + j] + pos[p * ds + j])
                .collect();
            for layer in 0..cfg.decoder.n_layers {
                let w = &params.get(&format!("decoder.mlp.fc{layer}.w")).unwrap();
                let b = &params.get(&format!("decoder.mlp.fc{layer}.b")).unwrap();
                let (fan_in, fan_out) = (w.shape[0], w.shape[1]);
                let mut next = vec![0.0; fan_out];
                for (o, outv) in next.iter_mut().enumerate() {
                    let mut acc = b.data[o];
                    for i in 0..fan_in {
                        acc += h[i] * w.data[i * fan_out + o];
                    }
                    *outv = acc;
                }
                if layer + 1 < cfg.decoder.n_layers {
                    for v in &mut next {
                        *v = v.max(0.0);
                    }
                }
                h = next;
            }
            alphas.push(h[d]);
            per_slot.push(h[..d].to_vec());
        }
        let max = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = alphas.iter().map(|a| (a - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for k in 0..n_slots {
            let m = exps[k] / total;
            masks[p * n_slots + k] = m;
            for j in 0..d {
                recon[p * d + j] += per_slot[k][j] * m;
            }
        }
    }
    (recon, masks)
}

struct DecodeFixture {
    cfg: ModelConfig,
    params: crate::nn::ParamSet,
    slots: Vec<f64>,
}

fn decode_fixture(n_slots: usize, seed: u64) -> DecodeFixture {
    let mut cfg = tiny_config();
    cfg.slots.n_slots = n_slots;
    let params = init_params(&cfg, &mut stream(seed, "init"));
    let mut r = stream(seed, "slots");
    let slots: Vec<f64> = (0..n_slots * cfg.slots.slot_dim)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    DecodeFixture { cfg, params, slots }
}

fn run_decode_full(fx: &DecodeFixture) -> DecodeOutput {
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &fx.params);
    let slots = s
        .graph
        .constant(fx.slots.clone(), &[fx.slots.len() / fx.cfg.slots.slot_dim, fx.cfg.slots.slot_dim])
        .unwrap();
    let fwd = decode_full(&mut s, slots, &fx.cfg.decoder, fx.cfg.encoder.feature_dim).unwrap();
    drop(s);
    fwd.extract(&g)
}

fn run_decode_topk(fx: &DecodeFixture, attn: &[f64], k: usize) -> DecodeOutput {
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &fx.params);
    let slots = s
        .graph
        .constant(fx.slots.clone(), &[fx.slots.len() / fx.cfg.slots.slot_dim, fx.cfg.slots.slot_dim])
        .unwrap();
    let fwd =
        decode_topk(&mut s, slots, attn, k, &fx.cfg.decoder, fx.cfg.encoder.feature_dim).unwrap();
    drop(s);
    fwd.extract(&g)
}

fn random_attention(n: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, "attn");
    let mut attn = vec![0.0; n * k];
    for p in 0..n {
        let row: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let sum: f64 = row.iter().sum();
        for j in 0..k {
            attn[p * k + j] = row[j] / sum;
        }
    }
    attn
}

#[test]
fn full_decode_matches_scalar_oracle() {
    let fx = decode_fixture(3, 23);
    let out = run_decode_full(&fx);
    let (recon, masks) = decode_oracle(&fx.params, &fx.cfg, &fx.slots, 3);
    assert_close(&out.recon, &recon, 1e-12, "reconstruction");
    assert_close(&out.masks, &masks, 1e-12, "masks");
    assert_eq!(out.mlp_evals, fx.cfg.encoder.n_patches() * 3);
}

#[test]
fn single_slot_decode_passes_through() {
    let fx = decode_fixture(1, 24);
    let out = run_decode_full(&fx);
    assert_close(&out.masks, &vec![1.0; out.n_patches], 1e-12, "masks");
    assert_close(&out.recon, &out.y_hat, 1e-12, "recon equals the only slot");
}

#[test]
fn identical_slots_average_uniformly() {
    let mut fx = decode_fixture(4, 25);
    let ds = fx.cfg.slots.slot_dim;
    let first: Vec<f64> = fx.slots[..ds].to_vec();
    for k in 1..4 {
        fx.slots[k * ds..(k + 1) * ds].copy_from_slice(&first);
    }
    let out = run_decode_full(&fx);
    assert_close(&out.masks, &vec![0.25; out.n_patches * 4], 1e-12, "uniform masks");
    let d = fx.cfg.encoder.feature_dim;
    for p in 0..out.n_patches {
        for j in 0..d {
            let mean: f64 = (0..4).map(|k| out.y_hat[(p * 4 + k) * d + j]).sum::<f64>() / 4.0;
            assert!((out.recon[p * d + j] - mean).abs() <= 1e-12);
        }
    }
}

#[test]
fn topk_with_k_equal_slots_matches_full_decode() {
    let fx = decode_fixture(4, 26);
    let attn = random_attention(fx.cfg.encoder.n_patches(), 4, 27);
    let full = run_decode_full(&fx);
    let topk = run_decode_topk(&fx, &attn, 4);
    assert_close(&topk.recon, &full.recon, 1e-6, "k = K reconstruction");
    // Masks come out in selection order; compare per original slot index.
    for p in 0..full.n_patches {
        for j in 0..4 {
            let slot = topk.selected[p * 4 + j];
            let a = topk.masks[p * 4 + j];
            let b = full.masks[p * 4 + slot];
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn top1_decode_uses_argmax_slot_only() {
    let fx = decode_fixture(3, 28);
    let n = fx.cfg.encoder.n_patches();
    let attn = random_attention(n, 3, 29);
    let out = run_decode_topk(&fx, &attn, 1);
    assert_close(&out.masks, &vec![1.0; n], 1e-12, "m is one on the argmax slot");
    for p in 0..n {
        let row = &attn[p * 3..(p + 1) * 3];
        let mut best = 0;
        for j in 1..3 {
            if row[j] > row[best] {
                best = j;
            }
        }
        assert_eq!(out.selected[p], best);
    }
    assert_close(&out.recon, &out.y_hat, 1e-12, "recon is the selected slot output");
}

#[test]
fn topk_matches_masked_softmax_oracle() {
    // k = 2 of K = 4: mask non-selected alphas to -inf, then full softmax.
    let fx = decode_fixture(4, 30);
    let n = fx.cfg.encoder.n_patches();
    let d = fx.cfg.encoder.feature_dim;
    let attn = random_attention(n, 4, 31);
    let full = run_decode_full(&fx);
    let out = run_decode_topk(&fx, &attn, 2);

    for p in 0..n {
        // Independent top-2 selection by max scans.
        let row = &attn[p * 4..(p + 1) * 4];
        let first = (0..4).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        let second = (0..4)
            .filter(|&j| j != first)
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        let mut masked = [f64::NEG_INFINITY; 4];
        for &j in &[first, second] {
            masked[j] = full.alpha[p * 4 + j];
        }
        let max = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = masked.iter().map(|&a| (a - max).exp()).collect();
        let total: f64 = exps.iter().sum();

        let mut expected = vec![0.0; d];
        for j in 0..4 {
            let m = exps[j] / total;
            for c in 0..d {
                expected[c] += m * full.y_hat[(p * 4 + j) * d + c];
            }
        }
        assert_close(
            &out.recon[p * d..(p + 1) * d],
            &expected,
            1e-10,
            "masked softmax oracle",
        );
    }
}

#[test]
fn topk_cost_ratio_is_exact() {
    let fx = decode_fixture(4, 32);
    let attn = random_attention(fx.cfg.encoder.n_patches(), 4, 33);
    let full = run_decode_full(&fx);
    for k in 1..=4 {
        let out = run_decode_topk(&fx, &attn, k);
        assert_eq!(out.mlp_evals * 4, full.mlp_evals * k, "k = {k}");
    }
}

#[test]
fn topk_ties_break_toward_lowest_slot_index() {
    let fx = decode_fixture(4, 34);
    let n = fx.cfg.encoder.n_patches();
    let attn = vec![0.25; n * 4];
    let out = run_decode_topk(&fx, &attn, 2);
    for p in 0..n {
        assert_eq!(&out.selected[p * 2..p * 2 + 2], &[0, 1], "patch {p}");
    }
}

#[test]
fn topk_rejects_out_of_range_k() {
    let fx = decode_fixture(3, 35);
    let attn = random_attention(fx.cfg.encoder.n_patches(), 3, 36);
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &fx.params);
    let slots = s.graph.constant(fx.slots.clone(), &[3, fx.cfg.slots.slot_dim]).unwrap();
    for bad in [0usize, 4] {
        let r = decode_topk(&mut s, slots, &attn, bad, &fx.cfg.decoder, fx.cfg.encoder.feature_dim);
        assert!(matches!(r, Err(ModelError::TopKOutOfRange { .. })), "k = {bad}");
    }
}

#[test]
fn non_selected_slots_get_exactly_zero_gradient() {
    let fx = decode_fixture(4, 37);
    let n = fx.cfg.encoder.n_patches();
    // Slot 3 has the least mass at every patch, so k = 3 never selects it.
    let mut attn = vec![0.0; n * 4];
    for p in 0..n {
        attn[p * 4] = 0.5;
        attn[p * 4 + 1] = 0.3;
        attn[p * 4 + 2] = 0.15;
        attn[p * 4 + 3] = 0.05;
    }
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, &fx.params);
    let slots = s
        .graph
        .leaf(fx.slots.clone(), &[4, fx.cfg.slots.slot_dim], true)
        .unwrap();
    let fwd = decode_topk(&mut s, slots, &attn, 3, &fx.cfg.decoder, fx.cfg.encoder.feature_dim)
        .unwrap();
    let sq = s.graph.square(fwd.y).unwrap();
    let loss = s.graph.reduce_mean(sq, None).unwrap();
    s.graph.backward(loss).unwrap();
    let grad = s.graph.grad(slots).unwrap();
    let ds = fx.cfg.slots.slot_dim;
    assert!(grad[3 * ds..4 * ds].iter().all(|&v| v == 0.0), "non-selected slot gradient");
    assert!(grad[..3 * ds].iter().any(|&v| v != 0.0), "selected slots receive gradient");
}

#[test]
fn mask_rows_sum_to_one_for_both_decoders() {
    let fx = decode_fixture(4, 38);
    let n = fx.cfg.encoder.n_patches();
    let attn = random_attention(n, 4, 39);
    for out in [run_decode_full(&fx), run_decode_topk(&fx, &attn, 2)] {
        for p in 0..n {
            let sum: f64 = out.masks[p * out.k_eff..(p + 1) * out.k_eff].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
        }
    }
}

// -------------------------------------------------------------------------
// positional interpolation and resolution adaptation
// -------------------------------------------------------------------------

#[test]
fn identity_resize_is_bitwise_exact() {
    let mut r = stream(40, "pos");
    let pos: Vec<f64> = (0..4 * 4 * 5).map(|_| r.random_range(-1.0..1.0)).collect();
    let out = interpolate_pos_embed(&pos, (4, 4), 5, (4, 4));
    assert_eq!(out, pos);
}

#[test]
fn constant_grids_stay_constant() {
    let pos = vec![0.7; 3 * 2 * 4];
    let out = interpolate_pos_embed(&pos, (3, 2), 4, (7, 5));
    assert_eq!(out.len(), 7 * 5 * 4);
    for v in out {
        assert!((v - 0.7).abs() <= 1e-12);
    }
}

#[test]
fn ramp_upsampling_produces_midpoint_means() {
    // 2x2 ramp, one channel: corners 0, 1, 2, 3. The 3x3 align-corner
    // bilinear result has arithmetic means at edge midpoints and center.
    let pos = vec![0.0, 1.0, 2.0, 3.0];
    let out = interpolate_pos_embed(&pos, (2, 2), 1, (3, 3));
    let expected = [0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0];
    assert_close(&out, &expected, 1e-12, "bilinear ramp");
}

#[test]
fn resolution_adaptation_regrids_both_pos_embeds() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(41, "init"));
    let (adapted, new_cfg) = adapt_resolution(&params, &cfg, (5, 5));
    assert_eq!(new_cfg.encoder.patch_grid, (5, 5));
    assert_eq!(adapted.get("encoder.pos_embed").unwrap().shape, vec![25, cfg.encoder.feature_dim]);
    assert_eq!(adapted.get("decoder.pos_embed").unwrap().shape, vec![25, cfg.slots.slot_dim]);
    // Untouched parameters are preserved exactly, in order.
    for (a, b) in params.iter().zip(adapted.iter()) {
        assert_eq!(a.name, b.name);
        if !a.name.ends_with("pos_embed") {
            assert_eq!(a.data, b.data);
        }
    }
}

// -------------------------------------------------------------------------
// end-to-end permutation equivariance
// -------------------------------------------------------------------------

#[test]
fn slot_permutation_leaves_reconstruction_unchanged() {
    let cfg = tiny_config();
    let params = init_params(&cfg, &mut stream(42, "init"));
    let k = 3;
    let ds = cfg.slots.slot_dim;
    let image = random_image(&cfg.encoder, 43);
    let noise = sample_slot_noise(&cfg.slots, k, &mut stream(44, "noise"));
    let perm = [1usize, 2, 0];
    let mut permuted = vec![0.0; noise.len()];
    for (to, &from) in perm.iter().enumerate() {
        permuted[to * ds..(to + 1) * ds].copy_from_slice(&noise[from * ds..(from + 1) * ds]);
    }

    let run = |noise: &[f64]| {
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, &params);
        let f = encode(&mut s, &image, &cfg.encoder).unwrap();
        let fwd = slot_attention_with_noise(&mut s, f, &cfg.slots, k, noise).unwrap();
        let dec = decode_full(&mut s, fwd.slots, &cfg.decoder, cfg.encoder.feature_dim).unwrap();
        drop(s);
        dec.extract(&g)
    };
    let base = run(&noise);
    let swapped = run(&permuted);
    assert_close(&swapped.recon, &base.recon, 1e-6, "reconstruction under permutation");
    for p in 0..base.n_patches {
        for (to, &from) in perm.iter().enumerate() {
            let a = swapped.masks[p * k + to];
            let b = base.masks[p * k + from];
            assert!((a - b).abs() <= 1e-6, "mask column permutation");
        }
    }
}

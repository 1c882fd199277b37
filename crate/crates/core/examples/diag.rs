use slotbench_core::eval::{evaluate_model, EvalOptions};
use slotbench_core::model::*;
use slotbench_core::nn::Session;
use slotbench_core::autodiff::Graph;
use slotbench_core::rng::stream;
use slotbench_core::scene::{generate_scene, SceneSpec, write_image, write_segmentation, build_manifest};
use slotbench_core::train::*;
use slotbench_core::ImageBuf;

fn binding_stats(params: &slotbench_core::ParamSet, cfg: &ModelConfig, images: &[ImageBuf]) -> (f64, f64) {
    // mean over patches of max-slot attention; and of max mask weight
    let mut attn_acc = 0.0;
    let mut mask_acc = 0.0;
    let mut usage = vec![0usize; cfg.slots.n_slots];
    let mut n = 0.0;
    for (i, img) in images.iter().enumerate() {
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, params);
        let f = encode(&mut s, img, &cfg.encoder).unwrap();
        let noise = sample_slot_noise(&cfg.slots, cfg.slots.n_slots, &mut stream(7777 + i as u64, "d"));
        let fwd = slot_attention_with_noise(&mut s, f, &cfg.slots, cfg.slots.n_slots, &noise).unwrap();
        let dec = decode_full(&mut s, fwd.slots, &cfg.decoder, cfg.encoder.feature_dim).unwrap();
        let state = fwd.extract(s.graph);
        let k = state.n_slots;
        for p in 0..state.n_patches {
            let row = &state.attn[p*k..(p+1)*k];
            attn_acc += row.iter().cloned().fold(f64::MIN, f64::max);
            let arg = (0..k).max_by(|&a,&b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            usage[arg] += 1;
            n += 1.0;
        }
        let out = dec.extract(s.graph);
        for p in 0..out.n_patches {
            let row = &out.masks[p*k..(p+1)*k];
            mask_acc += row.iter().cloned().fold(f64::MIN, f64::max);
        }
    }
    eprintln!("  slot usage: {usage:?}");
    (attn_acc / n, mask_acc / n)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args.get(1).map(|s| s.as_str()).unwrap_or("base");
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1200);

    let mut spec = SceneSpec::desk();
    if variant == "bigobj" || variant == "noisebg" || variant == "noisehi" || variant.ends_with("big") {
        spec.min_radius_frac = 0.20;
        spec.max_radius_frac = 0.34;
    }
    if variant.starts_with("noise") {
        spec.background = slotbench_core::scene::BackgroundMode::Noise;
    }
    let train_scenes: Vec<_> = (0..400).map(|i| generate_scene(&spec, 100 + i).unwrap()).collect();
    let images: Vec<ImageBuf> = train_scenes.iter().map(|s| s.image.clone()).collect();

    // held-out with files for evaluate_model
    let dir = std::env::temp_dir().join(format!("diag-heldout-{variant}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..48 {
        let sc = generate_scene(&spec, 999_000 + i).unwrap();
        write_image(&sc.image, &dir.join(format!("{i:04}.img.bin"))).unwrap();
        write_segmentation(&sc.seg, &dir.join(format!("{i:04}.seg.bin"))).unwrap();
    }
    let manifest = build_manifest(&dir, "diag", 5).unwrap();

    let model = ModelConfig::desk();
    let mut cfg = TrainConfig::desk();
    cfg.total_steps = steps;
    cfg.batch_size = 8;
    cfg.warmup_steps = steps / 10;
    cfg.base_lr = 8e-4;
    cfg.topk = None;

    match variant {
        "base" | "bigobj" => {}
        "lrhi" => { cfg.base_lr = 2e-3; }
        "lrvhi" => { cfg.base_lr = 4e-3; }
        "noisebg" => {}
        "noisehi" => { cfg.base_lr = 2e-3; }
        "topk1" => { cfg.topk = Some(1); }
        "topk2" => { cfg.topk = Some(2); }
        "topk1big" => { cfg.topk = Some(1); }
        "topk2big" => { cfg.topk = Some(2); }
        "lrlo" => { cfg.base_lr = 4e-4; }
        "topk" => { cfg.topk = Some(3); }
        "exp"  => { cfg.schedule = Schedule::Exponential; }
        other => panic!("unknown variant {other}"),
    }

    let out = train(&model, &cfg, &images, 1).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
    println!("variant {variant}: loss {:.4} -> {:.5}", losses[0], losses[losses.len()-1]);
    let (attn_max, mask_max) = binding_stats(&out.params, &out.model_cfg, &images[..16]);
    println!("  binding: mean max-attn {:.3} (uniform = {:.3}), mean max-mask {:.3}", attn_max, 1.0/model.slots.n_slots as f64, mask_max);
    let mut opts = EvalOptions::default();
    opts.topk = cfg.topk;
    let report = evaluate_model(&out.params, &out.model_cfg, &manifest, &dir, &opts).unwrap();
    println!("  fg_ari {:.4}  mbo {:.4}", report.mean("fg_ari").unwrap(), report.mean("mbo").unwrap());
}

use std::time::Instant;
use slotbench_core::model::*;
use slotbench_core::nn::Session;
use slotbench_core::autodiff::Graph;
use slotbench_core::rng::stream;
use slotbench_core::scene::{generate_scene, SceneSpec};

fn bench(name: &str, reps: usize, mut f: impl FnMut()) {
    let t = Instant::now();
    for _ in 0..reps { f(); }
    println!("{name}: {:.2} ms", t.elapsed().as_secs_f64()/reps as f64*1000.0);
}

fn main() {
    let cfg = ModelConfig::desk();
    let params = init_params(&cfg, &mut stream(0, "init"));
    let scene = generate_scene(&SceneSpec::desk(), 0).unwrap();

    bench("encode fwd (frozen)", 300, || {
        let mut g = Graph::new();
        let mut s = Session::frozen_on(&mut g, &params);
        let _ = encode(&mut s, &scene.image, &cfg.encoder).unwrap();
    });
    bench("encode fwd (trainable, no bwd)", 300, || {
        let mut g = Graph::new();
        let mut s = Session::on(&mut g, &params);
        let _ = encode(&mut s, &scene.image, &cfg.encoder).unwrap();
    });
    bench("encode f+b", 300, || {
        let mut g = Graph::new();
        let mut s = Session::on(&mut g, &params);
        let f = encode(&mut s, &scene.image, &cfg.encoder).unwrap();
        let sq = s.graph.square(f).unwrap();
        let loss = s.graph.reduce_mean(sq, None).unwrap();
        s.graph.backward(loss).unwrap();
        let mut grads = params.zero_grads();
        s.accumulate_grads(&mut grads);
    });

    // pure matmul chain f+b: 25 matmuls of 64x64 @ 64x64
    let x0: Vec<f64> = (0..64*64).map(|i| ((i % 97) as f64) * 0.01).collect();
    let w: Vec<f64> = (0..64*64).map(|i| ((i % 89) as f64) * 0.001).collect();
    bench("25-matmul chain f+b", 300, || {
        let mut g = Graph::new();
        let mut x = g.leaf(x0.clone(), &[64,64], true).unwrap();
        for _ in 0..25 {
            let wt = g.leaf(w.clone(), &[64,64], true).unwrap();
            x = g.matmul(x, wt).unwrap();
            x = g.scalar_mul(x, 0.05).unwrap();
        }
        let loss = g.reduce_mean(x, None).unwrap();
        g.backward(loss).unwrap();
    });

    // LayerNorm-only chain f+b: 7 LNs
    bench("7-layernorm chain f+b", 300, || {
        let mut g = Graph::new();
        let gamma = g.leaf(vec![1.0; 64], &[64], true).unwrap();
        let beta = g.leaf(vec![0.0; 64], &[64], true).unwrap();
        let mut x = g.leaf(x0.clone(), &[64,64], true).unwrap();
        for _ in 0..7 {
            x = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        }
        let loss = g.reduce_mean(x, None).unwrap();
        g.backward(loss).unwrap();
    });

    // gelu chain
    bench("3-gelu chain f+b", 300, || {
        let mut g = Graph::new();
        let mut x = g.leaf(x0.clone(), &[64,64], true).unwrap();
        for _ in 0..3 {
            x = g.gelu(x).unwrap();
        }
        let loss = g.reduce_mean(x, None).unwrap();
        g.backward(loss).unwrap();
    });

    // softmax chain
    bench("3-softmax chain f+b", 300, || {
        let mut g = Graph::new();
        let mut x = g.leaf(x0.clone(), &[64,64], true).unwrap();
        for _ in 0..3 {
            x = g.softmax(x, 1).unwrap();
        }
        let loss = g.reduce_mean(x, None).unwrap();
        g.backward(loss).unwrap();
    });
}

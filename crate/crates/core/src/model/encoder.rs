//! Patch feature encoder (small pre-norm ViT) and the frozen target pass.

use crate::autodiff::TensorId;
use crate::image::ImageBuf;
use crate::nn::{self, ParamSet, Session};

use super::{EncoderConfig, ModelError, Result};

/// Flatten an image into per-patch pixel vectors, row-major over the patch
/// grid; each row is `patch_size^2 * channels` values.
pub fn patchify(image: &ImageBuf, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    let p = cfg.patch_size;
    if image.width % p != 0 || image.height % p != 0 {
        return Err(ModelError::IndivisibleImage {
            width: image.width,
            height: image.height,
            patch: p,
        });
    }
    let grid = (image.height / p, image.width / p);
    if grid != cfg.patch_grid {
        return Err(ModelError::GridMismatch { expected: cfg.patch_grid, got: grid });
    }
    let c = cfg.in_channels;
    let mut out = Vec::with_capacity(grid.0 * grid.1 * p * p * c);
    for py in 0..grid.0 {
        for px in 0..grid.1 {
            for dy in 0..p {
                for dx in 0..p {
                    let rgb = image.get(px * p + dx, py * p + dy);
                    for ch in 0..c {
                        out.push(rgb[ch] as f64);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Encode an image into `N x feature_dim` patch features. Deterministic
/// given the bound weights.
pub fn encode(s: &mut Session, image: &ImageBuf, cfg: &EncoderConfig) -> Result<TensorId> {
    let n = cfg.n_patches();
    let d = cfg.feature_dim;
    let patch_dim = cfg.patch_size * cfg.patch_size * cfg.in_channels;
    let patches = patchify(image, cfg)?;
    let g = &mut s.graph;
    let x0 = g.constant(patches, &[n, patch_dim])?;

    let mut x = nn::linear(s, x0, "encoder.patch_embed", true)?;
    let pos = s.p("encoder.pos_embed")?;
    x = s.graph.add(x, pos)?;

    let scale = 1.0 / (d as f64).sqrt();
    for b in 0..cfg.n_blocks {
        let pre = format!("encoder.block{b}");
        // Self-attention with residual.
        let h = nn::layer_norm(s, x, &format!("{pre}.ln1"))?;
        let q = nn::linear(s, h, &format!("{pre}.attn.q"), true)?;
        let k = nn::linear(s, h, &format!("{pre}.attn.k"), true)?;
        let v = nn::linear(s, h, &format!("{pre}.attn.v"), true)?;
        let kt = s.graph.transpose(k)?;
        let logits = s.graph.matmul(q, kt)?;
        let logits = s.graph.scalar_mul(logits, scale)?;
        let attn = s.graph.softmax(logits, 1)?;
        let mixed = s.graph.matmul(attn, v)?;
        let proj = nn::linear(s, mixed, &format!("{pre}.attn.o"), true)?;
        x = s.graph.add(x, proj)?;
        // MLP with residual.
        let h = nn::layer_norm(s, x, &format!("{pre}.ln2"))?;
        let m = nn::mlp(s, h, &format!("{pre}.mlp"), 2, nn::Activation::Gelu)?;
        x = s.graph.add(x, m)?;
    }
    Ok(nn::layer_norm(s, x, "encoder.final_ln")?)
}

/// Run the encoder under a frozen weight snapshot and return the feature
/// values. Never records gradient targets; bitwise-stable for a fixed
/// input and snapshot.
pub fn target_encode(
    image: &ImageBuf,
    frozen: &ParamSet,
    cfg: &EncoderConfig,
) -> Result<Vec<f64>> {
    let mut g = crate::autodiff::Graph::new();
    let mut s = Session::frozen_on(&mut g, frozen);
    let id = encode(&mut s, image, cfg)?;
    drop(s);
    Ok(g.data(id).to_vec())
}

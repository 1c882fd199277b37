//! The model forward path: patch encoder, frozen target encoder, slot
//! attention, and the MLP decoder with full and top-k decoding.

mod checkpoint;
mod decoder;
mod encoder;
mod interp;
mod slots;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use decoder::{decode_full, decode_topk, DecodeForward, DecodeOutput};
pub use encoder::{encode, patchify, target_encode};
pub use interp::{interpolate_pos_embed, resize_bilinear};
pub use slots::{sample_slot_noise, slot_attention, slot_attention_with_noise, SlotState, SlotsForward};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::TensorError;
use crate::nn::{self, ParamSet};

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image {width}x{height} is not divisible by patch size {patch}")]
    IndivisibleImage { width: usize, height: usize, patch: usize },
    #[error("patch grid mismatch: model expects {expected:?}, image yields {got:?}")]
    GridMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite attention logits at slot-attention iteration {iteration}")]
    NonFiniteAttention { iteration: usize },
    #[error("top-k of {k} out of range for {n_slots} slots")]
    TopKOutOfRange { k: usize, n_slots: usize },
    #[error("decoder position embeddings cover {got} patches, expected {expected}")]
    PosEmbedCount { expected: usize, got: usize },
    #[error("target length {got} does not match {expected}")]
    TargetLength { expected: usize, got: usize },
}

/// Patch feature encoder: a small pre-norm ViT over non-overlapping patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Patch counts per axis (rows, cols); the token count is their product.
    pub patch_grid: (usize, usize),
    pub patch_size: usize,
    pub in_channels: usize,
    pub feature_dim: usize,
    /// Transformer blocks; also the unit of blockwise learning-rate decay.
    pub n_blocks: usize,
    pub mlp_hidden: usize,
}

impl EncoderConfig {
    pub fn n_patches(&self) -> usize {
        self.patch_grid.0 * self.patch_grid.1
    }

    /// Expected input image size (height, width) in pixels.
    pub fn input_size(&self) -> (usize, usize) {
        (
            self.patch_grid.0 * self.patch_size,
            self.patch_grid.1 * self.patch_size,
        )
    }

    /// Desk-scale default: trainable on a CPU in minutes.
    pub fn desk() -> Self {
        EncoderConfig {
            patch_grid: (8, 8),
            patch_size: 4,
            in_channels: 3,
            feature_dim: 64,
            n_blocks: 3,
            mlp_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotConfig {
    pub n_slots: usize,
    pub n_iterations: usize,
    pub slot_dim: usize,
    pub mlp_hidden: usize,
}

impl SlotConfig {
    pub fn desk() -> Self {
        SlotConfig {
            n_slots: 5,
            n_iterations: 3,
            slot_dim: 64,
            mlp_hidden: 64,
        }
    }

    /// Reference-scale values: 7 slots, 3 iterations, 256-dim slots,
    /// 1024-wide MLP.
    pub fn reference() -> Self {
        SlotConfig {
            n_slots: 7,
            n_iterations: 3,
            slot_dim: 256,
            mlp_hidden: 1024,
        }
    }
}

/// Per-(patch, slot) MLP decoder emitting features plus one alpha logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
}

impl DecoderConfig {
    pub fn desk() -> Self {
        DecoderConfig { n_layers: 4, hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub slots: SlotConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(),
            slots: SlotConfig::desk(),
            decoder: DecoderConfig::desk(),
        }
    }

    /// Grid used by the short high-resolution adaptation stage.
    pub const HIRES_GRID: (usize, usize) = (14, 14);
}

/// Initialize all model parameters. Names are prefixed `encoder.`,
/// `slots.`, and `decoder.`; the encoder prefix is what the training
/// engine's parameter grouping and the target-encoder snapshot key on.
pub fn init_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut ps = ParamSet::new();
    let e = &cfg.encoder;
    let d = e.feature_dim;
    let patch_dim = e.patch_size * e.patch_size * e.in_channels;

    nn::init_linear(&mut ps, rng, "encoder.patch_embed", patch_dim, d, true);
    ps.insert(
        "encoder.pos_embed",
        vec![e.n_patches(), d],
        nn::normal(rng, e.n_patches() * d, 0.02),
    );
    for b in 0..e.n_blocks {
        let pre = format!("encoder.block{b}");
        nn::init_layer_norm(&mut ps, &format!("{pre}.ln1"), d);
        for proj in ["q", "k", "v", "o"] {
            nn::init_linear(&mut ps, rng, &format!("{pre}.attn.{proj}"), d, d, true);
        }
        nn::init_layer_norm(&mut ps, &format!("{pre}.ln2"), d);
        nn::init_linear(&mut ps, rng, &format!("{pre}.mlp.fc0"), d, e.mlp_hidden, true);
        nn::init_linear(&mut ps, rng, &format!("{pre}.mlp.fc1"), e.mlp_hidden, d, true);
    }
    nn::init_layer_norm(&mut ps, "encoder.final_ln", d);

    let s = &cfg.slots;
    let ds = s.slot_dim;
    // Shared learned Gaussian for slot sampling: slots0 = mean + exp(logstd) * eps.
    ps.insert("slots.init_mean", vec![ds], nn::normal(rng, ds, 1.0));
    ps.insert("slots.init_logstd", vec![ds], vec![0.0; ds]);
    nn::init_layer_norm(&mut ps, "slots.norm_inputs", d);
    nn::init_linear(&mut ps, rng, "slots.proj_k", d, ds, false);
    nn::init_linear(&mut ps, rng, "slots.proj_v", d, ds, false);
    nn::init_layer_norm(&mut ps, "slots.norm_slots", ds);
    nn::init_linear(&mut ps, rng, "slots.proj_q", ds, ds, false);
    nn::init_gru(&mut ps, rng, "slots.gru", ds);
    nn::init_layer_norm(&mut ps, "slots.norm_mlp", ds);
    nn::init_linear(&mut ps, rng, "slots.mlp.fc0", ds, s.mlp_hidden, true);
    nn::init_linear(&mut ps, rng, "slots.mlp.fc1", s.mlp_hidden, ds, true);

    let dec = &cfg.decoder;
    ps.insert(
        "decoder.pos_embed",
        vec![e.n_patches(), ds],
        nn::normal(rng, e.n_patches() * ds, 0.02),
    );
    let mut width_in = ds;
    for layer in 0..dec.n_layers {
        let width_out = if layer + 1 == dec.n_layers { d + 1 } else { dec.hidden };
        nn::init_linear(
            &mut ps,
            rng,
            &format!("decoder.mlp.fc{layer}"),
            width_in,
            width_out,
            true,
        );
        width_in = width_out;
    }
    ps
}

/// Re-grid both positional embeddings for a new patch grid (the
/// high-resolution adaptation step). Returns the adapted parameters and
/// the adjusted config.
pub fn adapt_resolution(
    params: &ParamSet,
    cfg: &ModelConfig,
    new_grid: (usize, usize),
) -> (ParamSet, ModelConfig) {
    let old_grid = cfg.encoder.patch_grid;
    let mut out = ParamSet::new();
    for p in params.iter() {
        if p.name == "encoder.pos_embed" || p.name == "decoder.pos_embed" {
            let dim = p.shape[1];
            let data = interpolate_pos_embed(&p.data, old_grid, dim, new_grid);
            out.insert(&p.name, vec![new_grid.0 * new_grid.1, dim], data);
        } else {
            out.insert(&p.name, p.shape.clone(), p.data.clone());
        }
    }
    let mut new_cfg = cfg.clone();
    new_cfg.encoder.patch_grid = new_grid;
    (out, new_cfg)
}

#[cfg(test)]
mod tests;

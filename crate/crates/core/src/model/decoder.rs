//! MLP decoder: reconstructs per-patch features from slots.
//!
//! Full decoding evaluates the MLP for every (patch, slot) pair; top-k
//! decoding evaluates it only for the k slots with the highest
//! slot-attention mass at each patch, with the alpha softmax renormalized
//! over the selected set.

use crate::autodiff::{Graph, TensorId};
use crate::nn::{self, Session};

use super::{DecoderConfig, ModelError, Result};

/// Graph handles from a decode pass.
#[derive(Debug)]
pub struct DecodeForward {
    /// `N x feature_dim` combined reconstruction.
    pub y: TensorId,
    /// `N x k_eff` normalized masks (rows sum to one).
    pub masks: TensorId,
    /// `N x k_eff` alpha logits.
    pub alpha: TensorId,
    /// `(N * k_eff) x feature_dim` per-(patch, slot) reconstructions,
    /// patch-major.
    pub y_hat: TensorId,
    /// Flattened `N x k_eff` slot indices backing each row of `y_hat`.
    pub selected: Vec<usize>,
    pub n_patches: usize,
    pub k_eff: usize,
    /// Number of per-(patch, slot) MLP evaluations performed.
    pub mlp_evals: usize,
}

/// Value-level snapshot of a decode result.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub n_patches: usize,
    pub k_eff: usize,
    pub feature_dim: usize,
    /// `(N * k_eff) x feature_dim`, patch-major.
    pub y_hat: Vec<f64>,
    pub alpha: Vec<f64>,
    pub masks: Vec<f64>,
    /// `N x feature_dim` combined reconstruction.
    pub recon: Vec<f64>,
    pub selected: Vec<usize>,
    pub mlp_evals: usize,
}

impl DecodeForward {
    pub fn extract(&self, g: &Graph) -> DecodeOutput {
        DecodeOutput {
            n_patches: self.n_patches,
            k_eff: self.k_eff,
            feature_dim: g.shape(self.y)[1],
            y_hat: g.data(self.y_hat).to_vec(),
            alpha: g.data(self.alpha).to_vec(),
            masks: g.data(self.masks).to_vec(),
            recon: g.data(self.y).to_vec(),
            selected: self.selected.clone(),
            mlp_evals: self.mlp_evals,
        }
    }
}

impl DecodeOutput {
    /// Per-patch argmax slot (an index into the full slot range), the
    /// patch-grid segmentation the metrics evaluate.
    pub fn argmax_slots(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_patches);
        for p in 0..self.n_patches {
            let row = &self.masks[p * self.k_eff..(p + 1) * self.k_eff];
            let mut best = 0;
            for (j, &m) in row.iter().enumerate() {
                if m > row[best] {
                    best = j;
                }
            }
            out.push(self.selected[p * self.k_eff + best]);
        }
        out
    }
}

/// Decode every (patch, slot) pair.
pub fn decode_full(
    s: &mut Session,
    slots: TensorId,
    cfg: &DecoderConfig,
    feature_dim: usize,
) -> Result<DecodeForward> {
    let n_slots = s.graph.shape(slots)[0];
    let n = pos_embed_len(s)?;
    let selected: Vec<usize> = (0..n).flat_map(|_| 0..n_slots).collect();
    decode_selected(s, slots, cfg, feature_dim, n, n_slots, selected)
}

/// Decode only the `k` most active slots per patch, judged by the
/// slot-attention mask `attn` (`N x K`, row-major). Ties break toward the
/// lowest slot index. Gradients flow only through the selected slots.
pub fn decode_topk(
    s: &mut Session,
    slots: TensorId,
    attn: &[f64],
    k: usize,
    cfg: &DecoderConfig,
    feature_dim: usize,
) -> Result<DecodeForward> {
    let n_slots = s.graph.shape(slots)[0];
    if k == 0 || k > n_slots {
        return Err(ModelError::TopKOutOfRange { k, n_slots });
    }
    let n = pos_embed_len(s)?;
    if attn.len() != n * n_slots {
        return Err(ModelError::TargetLength { expected: n * n_slots, got: attn.len() });
    }
    let mut selected = Vec::with_capacity(n * k);
    let mut order: Vec<usize> = Vec::with_capacity(n_slots);
    for p in 0..n {
        let row = &attn[p * n_slots..(p + 1) * n_slots];
        order.clear();
        order.extend(0..n_slots);
        // Descending by mass, ascending by index on ties.
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        selected.extend_from_slice(&order[..k]);
    }
    decode_selected(s, slots, cfg, feature_dim, n, k, selected)
}

fn pos_embed_len(s: &mut Session) -> Result<usize> {
    let pos = s.p("decoder.pos_embed")?;
    Ok(s.graph.shape(pos)[0])
}

fn decode_selected(
    s: &mut Session,
    slots: TensorId,
    cfg: &DecoderConfig,
    feature_dim: usize,
    n_patches: usize,
    k_eff: usize,
    selected: Vec<usize>,
) -> Result<DecodeForward> {
    // Broadcast slots to their patches and add the decoder position
    // embedding, packing the selected pairs into one row matrix.
    let slot_rows = s.graph.gather(slots, &selected)?;
    let pos = s.p("decoder.pos_embed")?;
    let patch_of_row: Vec<usize> = (0..n_patches).flat_map(|p| [p].repeat(k_eff)).collect();
    let pos_rows = s.graph.gather(pos, &patch_of_row)?;
    let z = s.graph.add(slot_rows, pos_rows)?;

    let out = nn::mlp(s, z, "decoder.mlp", cfg.n_layers, nn::Activation::Relu)?;
    let mlp_evals = s.graph.shape(out)[0];

    let y_hat = s.graph.slice_cols(out, 0, feature_dim)?;
    let alpha_col = s.graph.slice_cols(out, feature_dim, feature_dim + 1)?;
    let alpha = s.graph.reshape(alpha_col, &[n_patches, k_eff])?;
    let masks = s.graph.softmax(alpha, 1)?;
    let m_flat = s.graph.reshape(masks, &[n_patches * k_eff])?;
    let weighted = s.graph.scale_rows(y_hat, m_flat)?;
    let y = s.graph.sum_row_groups(weighted, k_eff)?;

    Ok(DecodeForward {
        y,
        masks,
        alpha,
        y_hat,
        selected,
        n_patches,
        k_eff,
        mlp_evals,
    })
}

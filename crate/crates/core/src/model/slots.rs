//! Slot attention over patch features.
//!
//! Per iteration: queries come from normalized slots, keys and values from
//! the normalized features; attention is a softmax over the slot axis, so
//! slots compete for patches; per-slot updates are attention-weighted means
//! of the values with the weights renormalized over patches; slots pass
//! through a gated recurrent cell and a residual MLP.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, TensorId};
use crate::nn::{self, Session};

use super::{ModelError, Result, SlotConfig};

/// Additive epsilon in the per-patch weight renormalization.
const ATTN_EPS: f64 = 1e-8;

/// Graph handles from a slot-attention pass.
#[derive(Debug)]
pub struct SlotsForward {
    /// `K x slot_dim` final slots.
    pub slots: TensorId,
    /// `N x K` final-iteration attention; rows sum to one over slots.
    pub attn: TensorId,
}

/// Value-level snapshot of a slot-attention result.
#[derive(Debug, Clone)]
pub struct SlotState {
    pub n_slots: usize,
    pub n_patches: usize,
    pub slot_dim: usize,
    /// `K x slot_dim`, row-major.
    pub slots: Vec<f64>,
    /// `N x K`, row-major; each row sums to one.
    pub attn: Vec<f64>,
}

impl SlotsForward {
    pub fn extract(&self, g: &Graph) -> SlotState {
        let sshape = g.shape(self.slots);
        let ashape = g.shape(self.attn);
        SlotState {
            n_slots: sshape[0],
            n_patches: ashape[0],
            slot_dim: sshape[1],
            slots: g.data(self.slots).to_vec(),
            attn: g.data(self.attn).to_vec(),
        }
    }
}

/// Draw the `K x slot_dim` slot-initialization noise.
pub fn sample_slot_noise(cfg: &SlotConfig, n_slots: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    nn::normal(rng, n_slots * cfg.slot_dim, 1.0)
}

/// Slot attention with internally sampled initialization noise.
pub fn slot_attention(
    s: &mut Session,
    features: TensorId,
    cfg: &SlotConfig,
    n_slots: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SlotsForward> {
    let noise = sample_slot_noise(cfg, n_slots, rng);
    slot_attention_with_noise(s, features, cfg, n_slots, &noise)
}

/// Slot attention from explicit initialization noise (`n_slots x slot_dim`).
/// The slot count may differ from the trained default: the learned
/// initialization distribution is shared across slots.
pub fn slot_attention_with_noise(
    s: &mut Session,
    features: TensorId,
    cfg: &SlotConfig,
    n_slots: usize,
    noise: &[f64],
) -> Result<SlotsForward> {
    if n_slots == 0 || cfg.n_iterations == 0 {
        return Err(ModelError::Tensor(crate::autodiff::TensorError::Invalid(
            "slot attention requires at least one slot and one iteration".into(),
        )));
    }
    let n = s.graph.shape(features)[0];
    let ds = cfg.slot_dim;

    let inputs = nn::layer_norm(s, features, "slots.norm_inputs")?;
    let k = nn::linear(s, inputs, "slots.proj_k", false)?;
    let v = nn::linear(s, inputs, "slots.proj_v", false)?;

    // slots0 = mean + exp(logstd) * noise, shared across slots.
    let mean = s.p("slots.init_mean")?;
    let logstd = s.p("slots.init_logstd")?;
    let std = s.graph.exp(logstd)?;
    let mean_b = s.graph.broadcast_lead(mean, n_slots)?;
    let std_b = s.graph.broadcast_lead(std, n_slots)?;
    let noise_c = s.graph.constant(noise.to_vec(), &[n_slots, ds])?;
    let scaled = s.graph.mul(std_b, noise_c)?;
    let mut slots = s.graph.add(mean_b, scaled)?;

    let scale = 1.0 / (ds as f64).sqrt();
    let mut attn = None;
    for iteration in 0..cfg.n_iterations {
        let normed = nn::layer_norm(s, slots, "slots.norm_slots")?;
        let q = nn::linear(s, normed, "slots.proj_q", false)?;
        let qt = s.graph.transpose(q)?;
        let logits = s.graph.matmul(k, qt)?; // N x K
        let logits = s.graph.scalar_mul(logits, scale)?;
        if let Some(bad) = s.graph.data(logits).iter().find(|v| !v.is_finite()) {
            let _ = bad;
            return Err(ModelError::NonFiniteAttention { iteration });
        }
        // Softmax over the slot axis: slots compete for each patch.
        let a = s.graph.softmax(logits, 1)?;

        // Weighted mean over patches per slot.
        let a_eps = s.graph.scalar_add(a, ATTN_EPS)?;
        let colsum = s.graph.reduce_sum(a_eps, Some(0))?; // K
        let colsum_b = s.graph.broadcast_lead(colsum, n)?;
        let w = s.graph.div(a_eps, colsum_b)?;
        let wt = s.graph.transpose(w)?;
        let updates = s.graph.matmul(wt, v)?; // K x slot_dim

        slots = nn::gru_cell(s, updates, slots, "slots.gru")?;
        let normed = nn::layer_norm(s, slots, "slots.norm_mlp")?;
        let h = nn::mlp(s, normed, "slots.mlp", 2, nn::Activation::Relu)?;
        slots = s.graph.add(slots, h)?;
        attn = Some(a);
    }
    Ok(SlotsForward {
        slots,
        attn: attn.expect("n_iterations >= 1"),
    })
}

//! Gradient clipping and the AdamW update.

use crate::nn::ParamSet;

use super::{Result, TrainError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`;
/// returns the pre-clip norm. Direction is preserved.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64> {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g {
            sq += v * v;
        }
    }
    if !sq.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// One AdamW step with decoupled weight decay (applied to the parameters
/// before the moment update) and bias-corrected moments. `lr` and
/// `weight_decay` are per parameter tensor, aligned with the set.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: &[f64],
    weight_decay: &[f64],
) -> Result<()> {
    let n = params.len();
    for (what, len) in [("grads", grads.len()), ("lr", lr.len()), ("weight decay", weight_decay.len())] {
        if len != n {
            return Err(TrainError::LengthMismatch { what: "adamw parameter count", lhs: len, rhs: n });
        }
        let _ = what;
    }
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - ADAM_BETA1.powf(t);
    let bias2 = 1.0 - ADAM_BETA2.powf(t);

    for i in 0..n {
        let p = params.at_mut(i);
        if grads[i].len() != p.numel() {
            return Err(TrainError::LengthMismatch {
                what: "adamw gradient length",
                lhs: grads[i].len(),
                rhs: p.numel(),
            });
        }
        let decay = 1.0 - lr[i] * weight_decay[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, value) in p.data.iter_mut().enumerate() {
            *value *= decay;
            let g = grads[i][j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *value -= lr[i] * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(data: Vec<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        let n = data.len();
        ps.insert("p", vec![n], data);
        ps
    }

    #[test]
    fn clipping_leaves_small_gradients_untouched() {
        let mut grads = vec![vec![0.03, 0.04]];
        let norm = clip_grad_norm(&mut grads, 0.1).unwrap();
        assert!((norm - 0.05).abs() < 1e-15);
        assert_eq!(grads[0], vec![0.03, 0.04]);
    }

    #[test]
    fn clipping_rescales_to_max_norm_preserving_direction() {
        let mut grads = vec![vec![3.0, 4.0]];
        let norm = clip_grad_norm(&mut grads, 0.1).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = grads[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(clipped <= 0.1 + 1e-9);
        // Cosine similarity with the original direction is one.
        let dot = 3.0 * grads[0][0] + 4.0 * grads[0][1];
        let cos = dot / (5.0 * clipped);
        assert!((cos - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn clipping_rejects_non_finite() {
        let mut grads = vec![vec![f64::NAN]];
        assert!(matches!(
            clip_grad_norm(&mut grads, 0.1),
            Err(TrainError::NonFiniteGradient)
        ));
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut ps = one_param(vec![1.5, -2.0]);
        let mut state = AdamState::new(&ps);
        adamw_step(&mut ps, &[vec![0.0, 0.0]], &mut state, &[0.1], &[0.0]).unwrap();
        assert_eq!(ps.get("p").unwrap().data, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Bias correction makes the first update lr * g / (|g| + eps).
        let mut ps = one_param(vec![0.0]);
        let mut state = AdamState::new(&ps);
        adamw_step(&mut ps, &[vec![1.0]], &mut state, &[0.1], &[0.0]).unwrap();
        let got = ps.get("p").unwrap().data[0];
        assert!((got + 0.1).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn decoupled_decay_scales_parameters() {
        // wd = 0.01, lr = 0.1, g = 0: parameter shrinks by (1 - 0.001).
        let mut ps = one_param(vec![2.0]);
        let mut state = AdamState::new(&ps);
        adamw_step(&mut ps, &[vec![0.0]], &mut state, &[0.1], &[0.01]).unwrap();
        let got = ps.get("p").unwrap().data[0];
        assert!((got - 2.0 * 0.999).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut ps = one_param(vec![1.0, 2.0]);
        let mut state = AdamState::new(&ps);
        let err = adamw_step(&mut ps, &[vec![0.0]], &mut state, &[0.1], &[0.0]).unwrap_err();
        assert!(matches!(err, TrainError::LengthMismatch { .. }));
    }
}

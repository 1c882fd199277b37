//! Learning-rate schedules and blockwise parameter grouping.

use crate::nn::ParamSet;

use super::{Result, Schedule, TrainConfig, TrainError};

/// A set of parameters sharing one learning-rate multiplier and weight
/// decay. Encoder groups carry their block index.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    /// Multiplier on the peak learning rate.
    pub multiplier: f64,
    pub weight_decay: f64,
    /// Encoder block index; `None` for the stem and non-encoder groups.
    pub block: Option<usize>,
    /// Indices into the [`ParamSet`] this grouping was built for.
    pub params: Vec<usize>,
}

/// Schedule of one training stage.
#[derive(Debug, Clone)]
pub struct StageSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub exp_half_life: f64,
}

impl StageSchedule {
    pub fn main(cfg: &TrainConfig) -> Self {
        StageSchedule {
            total_steps: cfg.total_steps,
            warmup_steps: cfg.warmup_steps,
            base_lr: cfg.base_lr,
            batch_size: cfg.batch_size,
            schedule: cfg.schedule,
            exp_half_life: cfg.exp_half_life,
        }
    }

    /// The high-resolution adaptation stage re-warms every group.
    pub fn hires(cfg: &TrainConfig) -> Self {
        StageSchedule {
            total_steps: cfg.hires_steps,
            warmup_steps: cfg.hires_warmup,
            base_lr: cfg.hires_lr,
            batch_size: cfg.batch_size,
            schedule: cfg.schedule,
            exp_half_life: cfg.exp_half_life,
        }
    }
}

/// Learning rate at `step` of a stage for a group multiplier: linear warmup
/// from zero to `base_lr * sqrt(batch/64) * multiplier`, then cosine decay
/// to zero at `total_steps` (or exponential decay at the configured
/// half-life). Endpoints are exact.
pub fn stage_lr(stage: &StageSchedule, step: usize, multiplier: f64) -> Result<f64> {
    if step > stage.total_steps {
        return Err(TrainError::StepOutOfRange { step, total: stage.total_steps });
    }
    let peak = stage.base_lr * (stage.batch_size as f64 / 64.0).sqrt() * multiplier;
    if step <= stage.warmup_steps {
        if stage.warmup_steps == 0 {
            return Ok(peak);
        }
        return Ok(peak * step as f64 / stage.warmup_steps as f64);
    }
    let progress = (step - stage.warmup_steps) as f64;
    match stage.schedule {
        Schedule::Cosine => {
            if step == stage.total_steps {
                return Ok(0.0);
            }
            let span = (stage.total_steps - stage.warmup_steps) as f64;
            Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress / span).cos()))
        }
        Schedule::Exponential => Ok(peak * 0.5f64.powf(progress / stage.exp_half_life)),
    }
}

/// Learning rate for a group at a step of the main stage.
pub fn lr_at_step(step: usize, cfg: &TrainConfig, group: &ParamGroup) -> Result<f64> {
    stage_lr(&StageSchedule::main(cfg), step, group.multiplier)
}

/// Partition the parameters into learning-rate groups. The topmost encoder
/// block runs at `encoder_lr_factor`; each block below runs at
/// `layerwise_decay` times the block above (an exact recurrence); the
/// patch/position stem sits one decay step below block zero; the final
/// encoder norm joins the top block. Non-encoder modules get multiplier one
/// and no weight decay; encoder groups carry the encoder weight decay.
/// With `finetune` off all encoder groups freeze at multiplier zero.
pub fn assign_blockwise_lrs(
    params: &ParamSet,
    n_blocks: usize,
    cfg: &TrainConfig,
) -> Vec<ParamGroup> {
    assert!(n_blocks >= 1, "encoder needs at least one block");
    // Top-down recurrence keeps multiplier(l) == eta * multiplier(l+1) exact.
    let mut multipliers = vec![0.0; n_blocks];
    multipliers[n_blocks - 1] = cfg.encoder_lr_factor;
    for l in (0..n_blocks.saturating_sub(1)).rev() {
        multipliers[l] = cfg.layerwise_decay * multipliers[l + 1];
    }
    let stem_multiplier = cfg.layerwise_decay * multipliers[0];

    let mut groups = Vec::with_capacity(n_blocks + 2);
    let encoder_multiplier = |m: f64| if cfg.finetune { m } else { 0.0 };
    groups.push(ParamGroup {
        name: "encoder.stem".into(),
        multiplier: encoder_multiplier(stem_multiplier),
        weight_decay: cfg.encoder_weight_decay,
        block: None,
        params: Vec::new(),
    });
    for (l, &m) in multipliers.iter().enumerate() {
        groups.push(ParamGroup {
            name: format!("encoder.block{l}"),
            multiplier: encoder_multiplier(m),
            weight_decay: cfg.encoder_weight_decay,
            block: Some(l),
            params: Vec::new(),
        });
    }
    groups.push(ParamGroup {
        name: "rest".into(),
        multiplier: 1.0,
        weight_decay: 0.0,
        block: None,
        params: Vec::new(),
    });

    for (i, p) in params.iter().enumerate() {
        let g = if let Some(rest) = p.name.strip_prefix("encoder.block") {
            let block: usize = rest
                .split('.')
                .next()
                .and_then(|s| s.parse().ok())
                .expect("encoder block parameter names carry their index");
            1 + block
        } else if p.name.starts_with("encoder.final_ln") {
            n_blocks // top block group
        } else if p.name.starts_with("encoder.") {
            0 // stem
        } else {
            n_blocks + 1 // rest
        };
        groups[g].params.push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::rng::stream;

    fn groups_for(cfg: &TrainConfig) -> (ParamSet, Vec<ParamGroup>) {
        let mc = ModelConfig::desk();
        let params = init_params(&mc, &mut stream(0, "init"));
        let groups = assign_blockwise_lrs(&params, mc.encoder.n_blocks, cfg);
        (params, groups)
    }

    #[test]
    fn warmup_endpoint_hits_base_lr_exactly() {
        let mut cfg = TrainConfig::reference();
        cfg.batch_size = 64;
        let group = ParamGroup {
            name: "g".into(),
            multiplier: 1.0,
            weight_decay: 0.0,
            block: None,
            params: vec![],
        };
        assert_eq!(lr_at_step(cfg.warmup_steps, &cfg, &group).unwrap(), cfg.base_lr);
        assert_eq!(lr_at_step(0, &cfg, &group).unwrap(), 0.0);
        assert_eq!(lr_at_step(cfg.total_steps, &cfg, &group).unwrap(), 0.0);
    }

    #[test]
    fn batch_scaling_follows_square_root() {
        let cfg = TrainConfig::reference(); // batch 128, base 3e-4
        let group = ParamGroup {
            name: "g".into(),
            multiplier: 1.0,
            weight_decay: 0.0,
            block: None,
            params: vec![],
        };
        let peak = lr_at_step(cfg.warmup_steps, &cfg, &group).unwrap();
        let expected = 3.0e-4 * 2.0f64.sqrt();
        assert!((peak - expected).abs() < 1e-12);
        assert!((peak - 4.2426e-4).abs() < 1e-8);
    }

    #[test]
    fn cosine_is_continuous_and_non_increasing_after_warmup() {
        let mut cfg = TrainConfig::desk();
        cfg.total_steps = 400;
        cfg.warmup_steps = 50;
        let group = ParamGroup {
            name: "g".into(),
            multiplier: 0.7,
            weight_decay: 0.0,
            block: None,
            params: vec![],
        };
        let lr_warm_end = lr_at_step(cfg.warmup_steps, &cfg, &group).unwrap();
        let lr_next = lr_at_step(cfg.warmup_steps + 1, &cfg, &group).unwrap();
        let peak = cfg.base_lr * (cfg.batch_size as f64 / 64.0).sqrt() * 0.7;
        assert!((lr_warm_end - peak).abs() < 1e-15);
        assert!(lr_next <= lr_warm_end);
        let mut prev = lr_warm_end;
        for step in cfg.warmup_steps + 1..=cfg.total_steps {
            let lr = lr_at_step(step, &cfg, &group).unwrap();
            assert!(lr <= prev + 1e-15, "not monotone at {step}");
            prev = lr;
        }
    }

    #[test]
    fn exponential_half_life_halves() {
        let mut cfg = TrainConfig::desk();
        cfg.schedule = Schedule::Exponential;
        cfg.total_steps = 4000;
        cfg.warmup_steps = 0;
        cfg.exp_half_life = 1000.0;
        let group = ParamGroup {
            name: "g".into(),
            multiplier: 1.0,
            weight_decay: 0.0,
            block: None,
            params: vec![],
        };
        let peak = lr_at_step(0, &cfg, &group).unwrap();
        let half = lr_at_step(1000, &cfg, &group).unwrap();
        assert!((half - peak / 2.0).abs() < 1e-15);
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let cfg = TrainConfig::desk();
        let group = ParamGroup {
            name: "g".into(),
            multiplier: 1.0,
            weight_decay: 0.0,
            block: None,
            params: vec![],
        };
        assert!(matches!(
            lr_at_step(cfg.total_steps + 1, &cfg, &group),
            Err(TrainError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn blockwise_multipliers_match_recurrence() {
        // L = 3, factor 0.5, eta 0.85: [0.36125, 0.425, 0.5] bottom to top.
        let cfg = TrainConfig::desk();
        let (_, groups) = groups_for(&cfg);
        let block = |l: usize| {
            groups
                .iter()
                .find(|g| g.block == Some(l))
                .unwrap()
                .multiplier
        };
        assert_eq!(block(2), 0.5);
        assert_eq!(block(1), 0.85 * 0.5);
        assert_eq!(block(0), 0.85 * (0.85 * 0.5));
        assert!((block(0) - 0.36125).abs() < 1e-15);
        assert!((block(1) - 0.425).abs() < 1e-15);
        // The recurrence holds exactly for every adjacent pair.
        for l in 0..2 {
            assert_eq!(block(l), 0.85 * block(l + 1));
        }
    }

    #[test]
    fn unit_decay_rate_shares_the_encoder_factor() {
        let mut cfg = TrainConfig::desk();
        cfg.layerwise_decay = 1.0;
        let (_, groups) = groups_for(&cfg);
        for g in groups.iter().filter(|g| g.block.is_some()) {
            assert_eq!(g.multiplier, 0.5);
        }
    }

    #[test]
    fn every_parameter_lands_in_exactly_one_group() {
        let cfg = TrainConfig::desk();
        let (params, groups) = groups_for(&cfg);
        let mut seen = vec![0usize; params.len()];
        for g in &groups {
            for &i in &g.params {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn weight_decay_marks_encoder_groups_only() {
        let cfg = TrainConfig::desk();
        let (params, groups) = groups_for(&cfg);
        for g in &groups {
            let is_encoder = g.name.starts_with("encoder");
            assert_eq!(g.weight_decay > 0.0, is_encoder, "group {}", g.name);
            for &i in &g.params {
                assert_eq!(params.at(i).name.starts_with("encoder."), is_encoder);
            }
        }
    }

    #[test]
    fn frozen_encoder_has_zero_multipliers() {
        let mut cfg = TrainConfig::desk();
        cfg.finetune = false;
        let (_, groups) = groups_for(&cfg);
        for g in &groups {
            if g.name.starts_with("encoder") {
                assert_eq!(g.multiplier, 0.0);
            } else {
                assert_eq!(g.multiplier, 1.0);
            }
        }
    }
}

//! Training configuration and its flat `key = value` file format.

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    /// Peak learning rate is `base_lr * sqrt(batch_size / 64)` per group
    /// multiplier.
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    /// Half-life in steps for the exponential schedule.
    pub exp_half_life: f64,
    pub grad_clip_norm: f64,
    /// Train the encoder end-to-end; with `false` the encoder groups get a
    /// zero multiplier (the frozen baseline configuration).
    pub finetune: bool,
    pub encoder_lr_factor: f64,
    /// Blockwise decay rate: each encoder block below the top runs at this
    /// fraction of the block above it.
    pub layerwise_decay: f64,
    pub encoder_weight_decay: f64,
    /// Teacher momentum; 1 keeps the target encoder fixed.
    pub ema_tau: f64,
    /// Decode only this many slots per patch when set.
    pub topk: Option<usize>,
    pub hires: bool,
    pub hires_steps: usize,
    pub hires_lr: f64,
    pub hires_warmup: usize,
    /// Collapse flags when target-feature dispersion falls below this
    /// fraction of its initial value.
    pub collapse_threshold: f64,
}

impl TrainConfig {
    /// Desk-scale defaults, scaled down from the reference recipe by the
    /// same warmup/total ratios.
    pub fn desk() -> Self {
        TrainConfig {
            total_steps: 5000,
            batch_size: 16,
            base_lr: 8e-4,
            warmup_steps: 500,
            schedule: Schedule::Cosine,
            exp_half_life: 1667.0,
            grad_clip_norm: 0.1,
            finetune: true,
            encoder_lr_factor: 0.5,
            layerwise_decay: 0.85,
            encoder_weight_decay: 0.01,
            ema_tau: 1.0,
            topk: None,
            hires: false,
            hires_steps: 500,
            hires_lr: 2.5e-4,
            hires_warmup: 17,
            collapse_threshold: 0.1,
        }
    }

    /// Reference-scale recipe (300k steps, batch 128, cosine with 10k
    /// warmup, clip 0.1, encoder factor 0.5 with 0.85 blockwise decay and
    /// 0.01 weight decay); used by schedule tests, not for desk runs.
    pub fn reference() -> Self {
        TrainConfig {
            total_steps: 300_000,
            batch_size: 128,
            base_lr: 3e-4,
            warmup_steps: 10_000,
            schedule: Schedule::Cosine,
            exp_half_life: 100_000.0,
            grad_clip_norm: 0.1,
            finetune: true,
            encoder_lr_factor: 0.5,
            layerwise_decay: 0.85,
            encoder_weight_decay: 0.01,
            ema_tau: 1.0,
            topk: Some(3),
            hires: true,
            hires_steps: 10_000,
            hires_lr: 1e-4,
            hires_warmup: 333,
            collapse_threshold: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.total_steps == 0 || self.batch_size == 0 {
            return fail("total_steps and batch_size must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return fail("warmup_steps exceeds total_steps".into());
        }
        if !(0.0..=1.0).contains(&self.ema_tau) {
            return fail(format!("ema_tau must lie in [0, 1], got {}", self.ema_tau));
        }
        if !(self.layerwise_decay > 0.0 && self.layerwise_decay <= 1.0) {
            return fail(format!(
                "layerwise_decay must lie in (0, 1], got {}",
                self.layerwise_decay
            ));
        }
        if self.grad_clip_norm <= 0.0 {
            return fail("grad_clip_norm must be positive".into());
        }
        if self.exp_half_life <= 0.0 {
            return fail("exp_half_life must be positive".into());
        }
        if self.topk == Some(0) {
            return fail("topk must be at least 1".into());
        }
        if self.hires && self.hires_steps == 0 {
            return fail("hires_steps must be positive when hires is enabled".into());
        }
        Ok(())
    }
}

/// Parse the flat `key = value` config format (UTF-8, `#` comments) on top
/// of the desk defaults. Unknown keys are rejected with their line number.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::desk();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(TrainError::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value)
            .map_err(|e| TrainError::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("invalid value {value:?} for {key}"))
    }
    match key {
        "total_steps" => cfg.total_steps = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "base_lr" => cfg.base_lr = num(key, value)?,
        "warmup_steps" => cfg.warmup_steps = num(key, value)?,
        "schedule" => {
            cfg.schedule = match value {
                "cosine" => Schedule::Cosine,
                "exponential" => Schedule::Exponential,
                other => return Err(format!("unknown schedule {other:?}")),
            }
        }
        "exp_half_life" => cfg.exp_half_life = num(key, value)?,
        "grad_clip_norm" => cfg.grad_clip_norm = num(key, value)?,
        "finetune" => cfg.finetune = num(key, value)?,
        "encoder_lr_factor" => cfg.encoder_lr_factor = num(key, value)?,
        "layerwise_decay" => cfg.layerwise_decay = num(key, value)?,
        "encoder_weight_decay" => cfg.encoder_weight_decay = num(key, value)?,
        "ema_tau" => cfg.ema_tau = num(key, value)?,
        "topk" => {
            cfg.topk = if value == "none" {
                None
            } else {
                Some(num(key, value)?)
            }
        }
        "hires" => cfg.hires = num(key, value)?,
        "hires_steps" => cfg.hires_steps = num(key, value)?,
        "hires_lr" => cfg.hires_lr = num(key, value)?,
        "hires_warmup" => cfg.hires_warmup = num(key, value)?,
        "collapse_threshold" => cfg.collapse_threshold = num(key, value)?,
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}

/// Render a config in the same `key = value` format `parse_config` reads.
pub fn render_config(cfg: &TrainConfig) -> String {
    let schedule = match cfg.schedule {
        Schedule::Cosine => "cosine",
        Schedule::Exponential => "exponential",
    };
    let topk = cfg.topk.map_or("none".to_string(), |k| k.to_string());
    format!(
        "total_steps = {}\nbatch_size = {}\nbase_lr = {}\nwarmup_steps = {}\n\
         schedule = {}\nexp_half_life = {}\ngrad_clip_norm = {}\nfinetune = {}\n\
         encoder_lr_factor = {}\nlayerwise_decay = {}\nencoder_weight_decay = {}\n\
         ema_tau = {}\ntopk = {}\nhires = {}\nhires_steps = {}\nhires_lr = {}\n\
         hires_warmup = {}\ncollapse_threshold = {}\n",
        cfg.total_steps,
        cfg.batch_size,
        cfg.base_lr,
        cfg.warmup_steps,
        schedule,
        cfg.exp_half_life,
        cfg.grad_clip_norm,
        cfg.finetune,
        cfg.encoder_lr_factor,
        cfg.layerwise_decay,
        cfg.encoder_weight_decay,
        cfg.ema_tau,
        topk,
        cfg.hires,
        cfg.hires_steps,
        cfg.hires_lr,
        cfg.hires_warmup,
        cfg.collapse_threshold,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_comments() {
        let text = "# desk run\ntotal_steps = 100\nwarmup_steps = 10\nschedule = exponential # decay\ntopk = 3\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.total_steps, 100);
        assert_eq!(cfg.schedule, Schedule::Exponential);
        assert_eq!(cfg.topk, Some(3));
    }

    #[test]
    fn rejects_unknown_keys_with_line_numbers() {
        let err = parse_config("total_steps = 10\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_invalid_tau() {
        let err = parse_config("ema_tau = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("ema_tau"), "{err}");
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = TrainConfig::desk();
        cfg.topk = Some(2);
        cfg.schedule = Schedule::Exponential;
        cfg.total_steps = 123;
        cfg.warmup_steps = 12;
        let back = parse_config(&render_config(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }
}

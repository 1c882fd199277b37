//! The training loop and its supporting operations.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, TensorId};
use crate::image::ImageBuf;
use crate::model::{
    adapt_resolution, decode_full, decode_topk, encode, init_params, slot_attention_with_noise,
    sample_slot_noise, target_encode, ModelConfig, ModelError,
};
use crate::nn::{ParamSet, Session};
use crate::parallel;
use crate::rng::stream;

use super::{
    assign_blockwise_lrs, clip_grad_norm, stage_lr, AdamState, ParamGroup, Result, StageSchedule,
    TrainConfig, TrainError,
};

/// Mean squared error between a prediction tensor and target values.
pub fn reconstruction_loss(
    s: &mut Session,
    pred: TensorId,
    targets: &[f64],
) -> std::result::Result<TensorId, ModelError> {
    let numel = s.graph.value(pred).numel();
    if numel != targets.len() {
        return Err(ModelError::TargetLength { expected: numel, got: targets.len() });
    }
    let shape = s.graph.shape(pred).to_vec();
    let t = s.graph.constant(targets.to_vec(), &shape)?;
    let diff = s.graph.sub(pred, t)?;
    let sq = s.graph.square(diff)?;
    Ok(s.graph.reduce_mean(sq, None)?)
}

/// Momentum update of the teacher toward the student:
/// `theta <- tau * theta + (1 - tau) * theta_student`. `tau = 1` leaves the
/// teacher bitwise untouched; `tau = 0` copies the student.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, tau: f64) -> Result<()> {
    if tau == 1.0 {
        return Ok(());
    }
    for i in 0..teacher.len() {
        let name = teacher.at(i).name.clone();
        let src = student
            .get(&name)
            .ok_or_else(|| TrainError::MismatchedParams { name: name.clone() })?;
        if src.shape != teacher.at(i).shape {
            return Err(TrainError::MismatchedParams { name });
        }
        let dst = teacher.at_mut(i);
        if tau == 0.0 {
            dst.data.copy_from_slice(&src.data);
        } else {
            for (t, &s) in dst.data.iter_mut().zip(&src.data) {
                *t = tau * *t + (1.0 - tau) * s;
            }
        }
    }
    Ok(())
}

/// Dispersion statistic: the mean over feature dimensions of the standard
/// deviation over rows.
pub fn feature_dispersion(features: &[f64], dim: usize) -> f64 {
    assert!(dim > 0 && features.len() % dim == 0);
    let rows = features.len() / dim;
    let mut acc = 0.0;
    for d in 0..dim {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..rows {
            let v = features[r * dim + d];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / rows as f64;
        let var = (sumsq / rows as f64 - mean * mean).max(0.0);
        acc += var.sqrt();
    }
    acc / dim as f64
}

/// Flags when target-feature dispersion drops below a fraction of its value
/// at the first observation. Never flags on the observation that sets the
/// baseline.
#[derive(Debug, Clone)]
pub struct CollapseDetector {
    threshold: f64,
    baseline: Option<f64>,
}

impl CollapseDetector {
    pub fn new(threshold: f64) -> Self {
        CollapseDetector { threshold, baseline: None }
    }

    /// Returns `(flagged, statistic)`.
    pub fn observe(&mut self, features: &[f64], dim: usize) -> (bool, f64) {
        let stat = feature_dispersion(features, dim);
        match self.baseline {
            None => {
                self.baseline = Some(stat);
                (false, stat)
            }
            Some(base) => (stat < self.threshold * base, stat),
        }
    }
}

/// Convenience form of the detector for a single batch of features.
pub fn detect_collapse(
    detector: &mut CollapseDetector,
    target_features: &[f64],
    dim: usize,
) -> (bool, f64) {
    detector.observe(target_features, dim)
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// One learning rate per parameter group, in group order.
    pub lrs: Vec<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub teacher: ParamSet,
    /// Final model configuration (the patch grid changes after the
    /// high-resolution stage).
    pub model_cfg: ModelConfig,
    pub log: Vec<StepRecord>,
    pub group_names: Vec<String>,
    /// First step at which the collapse detector fired, if any.
    pub collapse_step: Option<usize>,
}

/// Forward/backward of one sample; returns the loss and per-parameter
/// gradients aligned with `params`.
pub fn sample_loss_and_grads(
    params: &ParamSet,
    trainable: Option<&[bool]>,
    model_cfg: &ModelConfig,
    image: &ImageBuf,
    targets: &[f64],
    topk: Option<usize>,
    noise: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let mut s = match trainable {
        Some(mask) => Session::masked_on(&mut g, params, mask.to_vec()),
        None => Session::on(&mut g, params),
    };
    let feats = encode(&mut s, image, &model_cfg.encoder)?;
    let fwd = slot_attention_with_noise(&mut s, feats, &model_cfg.slots, model_cfg.slots.n_slots, noise)?;
    let dec = match topk {
        Some(k) => {
            let attn = s.graph.data(fwd.attn).to_vec();
            decode_topk(&mut s, fwd.slots, &attn, k, &model_cfg.decoder, model_cfg.encoder.feature_dim)?
        }
        None => decode_full(&mut s, fwd.slots, &model_cfg.decoder, model_cfg.encoder.feature_dim)?,
    };
    let loss_id = reconstruction_loss(&mut s, dec.y, targets)?;
    let loss = s.graph.data(loss_id)[0];
    s.graph.backward(loss_id).map_err(ModelError::Tensor)?;
    let mut grads = params.zero_grads();
    s.accumulate_grads(&mut grads);
    Ok((loss, grads))
}

/// Forward-only single-sample loss (the finite-difference side of the
/// whole-model gradient check).
pub fn sample_loss(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    image: &ImageBuf,
    targets: &[f64],
    topk: Option<usize>,
    noise: &[f64],
) -> Result<f64> {
    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, params);
    let feats = encode(&mut s, image, &model_cfg.encoder)?;
    let fwd = slot_attention_with_noise(&mut s, feats, &model_cfg.slots, model_cfg.slots.n_slots, noise)?;
    let dec = match topk {
        Some(k) => {
            let attn = s.graph.data(fwd.attn).to_vec();
            decode_topk(&mut s, fwd.slots, &attn, k, &model_cfg.decoder, model_cfg.encoder.feature_dim)?
        }
        None => decode_full(&mut s, fwd.slots, &model_cfg.decoder, model_cfg.encoder.feature_dim)?,
    };
    let loss_id = reconstruction_loss(&mut s, dec.y, targets)?;
    Ok(s.graph.data(loss_id)[0])
}

struct Shuffler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Shuffler {
    fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Shuffler { order, pos: 0, rng }
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Run the full recipe: stage one at base resolution, then, when enabled,
/// the short high-resolution stage with interpolated positional embeddings.
/// Ground-truth masks never enter this path. Per-sample forward/backward
/// passes run in parallel; gradients reduce by summation in sample order,
/// so results do not depend on the thread schedule.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    images: &[ImageBuf],
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(TrainError::Config("training requires at least one image".into()));
    }

    let mut params = init_params(model_cfg, &mut stream(seed, "init"));
    let mut teacher = params.subset("encoder.");
    let groups = assign_blockwise_lrs(&params, model_cfg.encoder.n_blocks, cfg);
    let group_names: Vec<String> = groups.iter().map(|g| g.name.clone()).collect();

    let mut multiplier = vec![0.0; params.len()];
    let mut weight_decay = vec![0.0; params.len()];
    for g in &groups {
        for &i in &g.params {
            multiplier[i] = g.multiplier;
            weight_decay[i] = g.weight_decay;
        }
    }
    let trainable: Vec<bool> = multiplier.iter().map(|&m| m != 0.0).collect();

    let mut adam = AdamState::new(&params);
    let mut detector = CollapseDetector::new(cfg.collapse_threshold);
    let mut log = Vec::with_capacity(cfg.total_steps + if cfg.hires { cfg.hires_steps } else { 0 });
    let mut collapse_step = None;

    let mut current_cfg = model_cfg.clone();
    let mut stage_ctx = StageContext {
        cfg,
        groups: &groups,
        multiplier: &multiplier,
        weight_decay: &weight_decay,
        trainable: &trainable,
        seed,
    };

    // Stage 1 at base resolution.
    let stage = StageSchedule::main(cfg);
    run_stage(
        &mut stage_ctx,
        &stage,
        0,
        0,
        &current_cfg,
        images,
        &mut params,
        &mut teacher,
        &mut adam,
        &mut detector,
        &mut log,
        &mut collapse_step,
    )?;

    // Stage 2: adapt to the high-resolution grid.
    if cfg.hires {
        let (new_params, new_cfg) = adapt_resolution(&params, &current_cfg, ModelConfig::HIRES_GRID);
        let (new_teacher, _) = adapt_resolution(&teacher, &current_cfg, ModelConfig::HIRES_GRID);
        // Positional embeddings changed size; reset their optimizer state.
        for i in 0..new_params.len() {
            if new_params.at(i).numel() != params.at(i).numel() {
                adam.m[i] = vec![0.0; new_params.at(i).numel()];
                adam.v[i] = vec![0.0; new_params.at(i).numel()];
            }
        }
        params = new_params;
        teacher = new_teacher;
        current_cfg = new_cfg;

        let (h, w) = current_cfg.encoder.input_size();
        let hires_images: Vec<ImageBuf> = images
            .iter()
            .map(|img| crate::model::resize_bilinear(img, w, h))
            .collect();
        let stage = StageSchedule::hires(cfg);
        run_stage(
            &mut stage_ctx,
            &stage,
            1,
            cfg.total_steps,
            &current_cfg,
            &hires_images,
            &mut params,
            &mut teacher,
            &mut adam,
            &mut detector,
            &mut log,
            &mut collapse_step,
        )?;
    }

    Ok(TrainOutcome {
        params,
        teacher,
        model_cfg: current_cfg,
        log,
        group_names,
        collapse_step,
    })
}

struct StageContext<'a> {
    cfg: &'a TrainConfig,
    groups: &'a [ParamGroup],
    multiplier: &'a [f64],
    weight_decay: &'a [f64],
    trainable: &'a [bool],
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    ctx: &mut StageContext,
    stage: &StageSchedule,
    stage_no: usize,
    step_offset: usize,
    model_cfg: &ModelConfig,
    images: &[ImageBuf],
    params: &mut ParamSet,
    teacher: &mut ParamSet,
    adam: &mut AdamState,
    detector: &mut CollapseDetector,
    log: &mut Vec<StepRecord>,
    collapse_step: &mut Option<usize>,
) -> Result<()> {
    let cfg = ctx.cfg;
    let batch = stage.batch_size;
    let enc_cfg = &model_cfg.encoder;
    let dim = enc_cfg.feature_dim;

    // With a fixed teacher the targets never change within a stage.
    let cached_targets: Option<Vec<Vec<f64>>> = if cfg.ema_tau == 1.0 {
        let teacher_ref = &*teacher;
        let computed = parallel::map_indexed(images.len(), |i| {
            target_encode(&images[i], teacher_ref, enc_cfg)
        });
        Some(computed.into_iter().collect::<std::result::Result<_, _>>()?)
    } else {
        None
    };

    let mut sampler = Shuffler::new(
        images.len(),
        stream(ctx.seed, &format!("data/stage{stage_no}")),
    );

    for step in 0..stage.total_steps {
        let global = step_offset + step;
        let idxs = sampler.next_batch(batch);

        // Targets for this batch (shared slices when cached).
        let batch_targets: Vec<Vec<f64>> = match &cached_targets {
            Some(cache) => idxs.iter().map(|&i| cache[i].clone()).collect(),
            None => {
                let teacher_ref = &*teacher;
                parallel::map_indexed(idxs.len(), |p| {
                    target_encode(&images[idxs[p]], teacher_ref, enc_cfg)
                })
                .into_iter()
                .collect::<std::result::Result<_, _>>()?
            }
        };

        // Per-sample forward/backward in parallel; reduce in sample order.
        let params_ref = &*params;
        let results = parallel::map_indexed(idxs.len(), |p| {
            let noise = sample_slot_noise(
                &model_cfg.slots,
                model_cfg.slots.n_slots,
                &mut stream(ctx.seed, &format!("slots/{global}/{p}")),
            );
            sample_loss_and_grads(
                params_ref,
                Some(ctx.trainable),
                model_cfg,
                &images[idxs[p]],
                &batch_targets[p],
                cfg.topk,
                &noise,
            )
        });

        let mut grads = params.zero_grads();
        let mut loss_sum = 0.0;
        for r in results {
            let (loss, sample_grads) = r?;
            loss_sum += loss;
            for (acc, src) in grads.iter_mut().zip(&sample_grads) {
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
        let loss = loss_sum / batch as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: global });
        }
        let inv = 1.0 / batch as f64;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }

        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm)?;

        let lr_per_param: Vec<f64> = ctx
            .multiplier
            .iter()
            .map(|&m| stage_lr(stage, step, m))
            .collect::<Result<_>>()?;
        super::adamw_step(params, &grads, adam, &lr_per_param, ctx.weight_decay)?;

        if cfg.ema_tau < 1.0 {
            ema_update(teacher, params, cfg.ema_tau)?;
        }

        // Collapse statistic over this batch's target features.
        let concat: Vec<f64> = batch_targets.iter().flatten().copied().collect();
        let (flagged, _stat) = detector.observe(&concat, dim);
        if flagged && collapse_step.is_none() {
            *collapse_step = Some(global);
        }

        let lrs: Vec<f64> = ctx
            .groups
            .iter()
            .map(|g| stage_lr(stage, step, g.multiplier))
            .collect::<Result<_>>()?;
        log.push(StepRecord { step: global, loss, grad_norm, lrs });
    }
    Ok(())
}

//! Batch evaluation: run a trained model (or a directory of precomputed
//! predictions) over a manifest and collect the metric suite per image.

use std::path::Path;

use crate::autodiff::Graph;
use crate::metrics::{
    fg_ari, kmeans_segment, mbo, panoptic_ari, panoptic_quality, upsample_nearest,
    MboDirection, MetricError, MetricReport, PanopticAnnotation, Segmentation,
};
use crate::model::{
    decode_full, decode_topk, encode, resize_bilinear, sample_slot_noise,
    slot_attention_with_noise, ModelConfig, ModelError,
};
use crate::nn::{ParamSet, Session};
use crate::parallel;
use crate::rng::stream;
use crate::scene::{read_image, read_segmentation, Manifest, SceneError};

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mbo_direction: MboDirection,
    /// Decode only the top-k slots per patch when set.
    pub topk: Option<usize>,
    /// Also score per-image k-means clusterings of the encoder features.
    pub kmeans: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mbo_direction: MboDirection::PerGt,
            topk: None,
            kmeans: false,
            seed: 0,
        }
    }
}

/// One image id with its metric values (`None` = skipped for that metric).
type ImageScores = Vec<(&'static str, Option<f64>)>;

fn score_prediction(
    pred: &Segmentation,
    gt: &Segmentation,
    direction: MboDirection,
    prefix_kmeans: bool,
) -> Result<ImageScores> {
    let panoptic = PanopticAnnotation::from_instances(gt);
    let mut out: ImageScores = Vec::new();
    if prefix_kmeans {
        out.push(("fg_ari_kmeans", fg_ari(pred, gt)?));
        out.push(("mbo_kmeans", mbo(pred, gt, direction)?));
    } else {
        out.push(("fg_ari", fg_ari(pred, gt)?));
        out.push(("mbo", mbo(pred, gt, direction)?));
        out.push(("p_ari", panoptic_ari(pred, &panoptic)?));
        out.push(("pq", Some(panoptic_quality(pred, &panoptic)?)));
    }
    Ok(out)
}

/// Evaluate a trained model over every manifest entry. The slot count
/// comes from the manifest; per-image evaluation runs in parallel with
/// deterministic ordering.
pub fn evaluate_model(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    manifest: &Manifest,
    manifest_dir: &Path,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let n_slots = manifest.n_slots;
    let results = parallel::map_indexed(manifest.entries.len(), |i| {
        let entry = &manifest.entries[i];
        eval_model_image(params, model_cfg, manifest_dir, &entry.image, &entry.mask, n_slots, opts)
    });
    let mut report = MetricReport::new(&manifest.dataset, manifest.count());
    for (entry, result) in manifest.entries.iter().zip(results) {
        let id = entry.image.trim_end_matches(".img.bin");
        for (metric, value) in result? {
            report.add(metric, id, value);
        }
    }
    Ok(report)
}

fn eval_model_image(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    dir: &Path,
    image_name: &str,
    mask_name: &str,
    n_slots: usize,
    opts: &EvalOptions,
) -> Result<ImageScores> {
    let image = read_image(&dir.join(image_name))?;
    let gt = read_segmentation(&dir.join(mask_name))?;
    let (h, w) = model_cfg.encoder.input_size();
    let image = if (image.height, image.width) != (h, w) {
        resize_bilinear(&image, w, h)
    } else {
        image
    };

    let mut g = Graph::new();
    let mut s = Session::frozen_on(&mut g, params);
    let feats = encode(&mut s, &image, &model_cfg.encoder)?;
    let noise = sample_slot_noise(
        &model_cfg.slots,
        n_slots,
        &mut stream(opts.seed, &format!("eval/slots/{image_name}")),
    );
    let fwd = slot_attention_with_noise(&mut s, feats, &model_cfg.slots, n_slots, &noise)?;
    let dec = match opts.topk {
        Some(k) => {
            let attn = s.graph.data(fwd.attn).to_vec();
            decode_topk(&mut s, fwd.slots, &attn, k, &model_cfg.decoder, model_cfg.encoder.feature_dim)?
        }
        None => decode_full(&mut s, fwd.slots, &model_cfg.decoder, model_cfg.encoder.feature_dim)?,
    };
    let feat_values = s.graph.data(feats).to_vec();
    drop(s);
    let out = dec.extract(&g);

    let grid = model_cfg.encoder.patch_grid;
    let patch_labels: Vec<u32> = out.argmax_slots().iter().map(|&s| s as u32 + 1).collect();
    let full = upsample_nearest(&patch_labels, grid, (gt.height, gt.width));
    let pred = Segmentation::new(gt.width, gt.height, full)?;
    let mut scores = score_prediction(&pred, &gt, opts.mbo_direction, false)?;

    if opts.kmeans {
        let k = n_slots.min(grid.0 * grid.1);
        let kseg = kmeans_segment(
            &feat_values,
            grid.0 * grid.1,
            model_cfg.encoder.feature_dim,
            k,
            grid,
            &mut stream(opts.seed, &format!("eval/kmeans/{image_name}")),
        )?;
        let up = upsample_nearest(&kseg.labels, grid, (gt.height, gt.width));
        let kpred = Segmentation::new(gt.width, gt.height, up)?;
        scores.extend(score_prediction(&kpred, &gt, opts.mbo_direction, true)?);
    }
    Ok(scores)
}

/// Evaluate a directory of precomputed segmentations (named like the
/// manifest's mask files) against the manifest's ground truth.
pub fn evaluate_predictions(
    pred_dir: &Path,
    manifest: &Manifest,
    manifest_dir: &Path,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let results = parallel::map_indexed(manifest.entries.len(), |i| {
        let entry = &manifest.entries[i];
        let gt = read_segmentation(&manifest_dir.join(&entry.mask))?;
        let pred = read_segmentation(&pred_dir.join(&entry.mask))?;
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(EvalError::Metric(MetricError::SizeMismatch {
                lhs: (pred.width, pred.height),
                rhs: (gt.width, gt.height),
            }));
        }
        score_prediction(&pred, &gt, opts.mbo_direction, false)
    });
    let mut report = MetricReport::new(&manifest.dataset, manifest.count());
    for (entry, result) in manifest.entries.iter().zip(results) {
        let id = entry.image.trim_end_matches(".img.bin");
        for (metric, value) in result? {
            report.add(metric, id, value);
        }
    }
    Ok(report)
}

/// FG-ARI of uniformly random slot assignments against a set of masks;
/// the chance baseline the discovery criterion is judged against.
pub fn random_assignment_fg_ari(
    masks: &[Segmentation],
    n_slots: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    let mut rng = stream(seed, "random-baseline");
    let mut total = 0.0;
    let mut count = 0usize;
    for gt in masks {
        let labels: Vec<u32> = (0..gt.len())
            .map(|_| rng.random_range(1..=n_slots as u32))
            .collect();
        let pred = Segmentation::new(gt.width, gt.height, labels)?;
        if let Some(v) = fg_ari(&pred, gt)? {
            total += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::Metric(MetricError::ZeroCount));
    }
    Ok(total / count as f64)
}

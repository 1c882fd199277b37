//! Adjusted Rand index over a filtered pixel set, from the contingency
//! table of the two labelings.

use std::collections::HashMap;

use super::{PanopticAnnotation, Result, Segmentation};

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// ARI between two labelings restricted to the pixels accepted by
/// `filter`. Returns `None` when the filtered set is empty (the image is
/// skipped in aggregation). Degenerate cases (a single evaluated pixel, or
/// both sides a single cluster) score 1 by convention.
pub fn adjusted_rand_index<F>(
    pred: &Segmentation,
    gt: &Segmentation,
    filter: F,
) -> Result<Option<f64>>
where
    F: Fn(usize) -> bool,
{
    pred.same_size(gt)?;
    let mut contingency: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pred_counts: HashMap<u32, u64> = HashMap::new();
    let mut gt_counts: HashMap<u32, u64> = HashMap::new();
    let mut n: u64 = 0;
    for i in 0..pred.len() {
        if !filter(i) {
            continue;
        }
        n += 1;
        *contingency.entry((pred.labels[i], gt.labels[i])).or_insert(0) += 1;
        *pred_counts.entry(pred.labels[i]).or_insert(0) += 1;
        *gt_counts.entry(gt.labels[i]).or_insert(0) += 1;
    }
    if n == 0 {
        return Ok(None);
    }
    if n == 1 {
        return Ok(Some(1.0));
    }
    let sum_cells: f64 = contingency.values().map(|&c| comb2(c)).sum();
    let sum_pred: f64 = pred_counts.values().map(|&c| comb2(c)).sum();
    let sum_gt: f64 = gt_counts.values().map(|&c| comb2(c)).sum();
    let pairs = comb2(n);
    let expected = sum_pred * sum_gt / pairs;
    let max_index = 0.5 * (sum_pred + sum_gt);
    if max_index == expected {
        // Both sides a single cluster (or otherwise chance-saturated).
        return Ok(Some(1.0));
    }
    Ok(Some((sum_cells - expected) / (max_index - expected)))
}

/// ARI over every pixel.
pub fn ari_all_pixels(pred: &Segmentation, gt: &Segmentation) -> Result<Option<f64>> {
    adjusted_rand_index(pred, gt, |_| true)
}

/// ARI restricted to ground-truth foreground pixels. Prediction labels on
/// background pixels are irrelevant, and the predictions need not
/// distinguish background at all.
pub fn fg_ari(pred: &Segmentation, gt: &Segmentation) -> Result<Option<f64>> {
    pred.same_size(gt)?;
    adjusted_rand_index(pred, gt, |i| gt.labels[i] != 0)
}

/// ARI against panoptic annotations, over all pixels carrying a non-void,
/// non-crowd label. Images with fewer than two panoptic masks are skipped.
pub fn panoptic_ari(pred: &Segmentation, gt: &PanopticAnnotation) -> Result<Option<f64>> {
    pred.same_size(&gt.seg)?;
    if gt.mask_labels().len() < 2 {
        return Ok(None);
    }
    adjusted_rand_index(pred, &gt.seg, |i| gt.evaluated(i))
}

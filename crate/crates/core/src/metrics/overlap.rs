//! IoU-based mask metrics: mean best overlap and panoptic quality.

use std::collections::HashMap;

use super::{PanopticAnnotation, Result, Segmentation};

/// Pairwise intersection counts and per-label sizes for the nonzero masks
/// of two segmentations, in one pass.
struct Overlaps {
    inter: HashMap<(u32, u32), u64>,
    a_size: HashMap<u32, u64>,
    b_size: HashMap<u32, u64>,
}

fn overlaps(a: &Segmentation, b: &Segmentation) -> Overlaps {
    let mut o = Overlaps {
        inter: HashMap::new(),
        a_size: HashMap::new(),
        b_size: HashMap::new(),
    };
    for i in 0..a.len() {
        let (la, lb) = (a.labels[i], b.labels[i]);
        if la != 0 {
            *o.a_size.entry(la).or_insert(0) += 1;
        }
        if lb != 0 {
            *o.b_size.entry(lb).or_insert(0) += 1;
        }
        if la != 0 && lb != 0 {
            *o.inter.entry((la, lb)).or_insert(0) += 1;
        }
    }
    o
}

impl Overlaps {
    fn iou(&self, a: u32, b: u32) -> f64 {
        let inter = self.inter.get(&(a, b)).copied().unwrap_or(0) as f64;
        let union = (self.a_size[&a] + self.b_size[&b]) as f64 - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MboDirection {
    /// For each ground-truth mask, the best IoU over predicted masks
    /// (the default reading).
    PerGt,
    /// For each predicted mask, the best IoU over ground-truth masks
    /// (the alternate assignment direction, exposed behind a flag).
    PerPred,
}

/// Mean best overlap between the nonzero masks of the two segmentations.
/// Returns `None` when the reference side has no masks (image skipped).
pub fn mbo(
    pred: &Segmentation,
    gt: &Segmentation,
    direction: MboDirection,
) -> Result<Option<f64>> {
    pred.same_size(gt)?;
    let o = overlaps(pred, gt);
    let (refs, cands): (Vec<u32>, Vec<u32>) = match direction {
        MboDirection::PerGt => (gt.mask_labels(), pred.mask_labels()),
        MboDirection::PerPred => (pred.mask_labels(), gt.mask_labels()),
    };
    if refs.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &r in &refs {
        let mut best = 0.0f64;
        for &c in &cands {
            let iou = match direction {
                MboDirection::PerGt => o.iou(c, r),
                MboDirection::PerPred => o.iou(r, c),
            };
            best = best.max(iou);
        }
        total += best;
    }
    Ok(Some(total / refs.len() as f64))
}

/// Class-agnostic panoptic quality.
///
/// Matches predicted masks to thing/stuff masks by IoU, keeping matches
/// above 0.5 (which makes the matching unique); matched pairs are true
/// positives, unmatched ground-truth masks false negatives, and unmatched
/// predictions false positives, except predictions overlapping void or
/// crowd pixels with IoU above 0.5, which are dropped from the false
/// positives. The score is the sum of matched IoUs over
/// `|TP| + 0.5 |FP| + 0.5 |FN|`.
pub fn panoptic_quality(pred: &Segmentation, gt: &PanopticAnnotation) -> Result<f64> {
    pred.same_size(&gt.seg)?;
    let o = overlaps(pred, &gt.seg);
    let gt_masks = gt.mask_labels();
    let pred_masks = pred.mask_labels();

    let mut matched_gt: Vec<u32> = Vec::new();
    let mut iou_sum = 0.0;
    let mut tp = 0u64;
    let mut fp = 0u64;

    // Union of all void/crowd pixels, as one region per excluded label set.
    let excluded = gt.excluded_labels();
    let excluded_size: u64 = excluded.iter().map(|l| o.b_size[l]).sum();

    for &p in &pred_masks {
        let mut best: Option<(u32, f64)> = None;
        for &g in &gt_masks {
            let iou = o.iou(p, g);
            if iou > 0.5 {
                best = Some((g, iou));
                break; // unique above 0.5
            }
        }
        match best {
            Some((g, iou)) => {
                matched_gt.push(g);
                iou_sum += iou;
                tp += 1;
            }
            None => {
                // IoU of this prediction against the void/crowd region.
                let inter: u64 = excluded
                    .iter()
                    .map(|&l| o.inter.get(&(p, l)).copied().unwrap_or(0))
                    .sum();
                let union = (o.a_size[&p] + excluded_size - inter) as f64;
                let void_iou = if union == 0.0 { 0.0 } else { inter as f64 / union };
                if void_iou <= 0.5 {
                    fp += 1;
                }
            }
        }
    }
    let fn_count = gt_masks.iter().filter(|g| !matched_gt.contains(g)).count() as u64;
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_count as f64;
    if denom == 0.0 {
        // No masks on either side: vacuous agreement.
        return Ok(1.0);
    }
    Ok(iou_sum / denom)
}

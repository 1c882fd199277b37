//! Mask-based evaluation suite: adjusted Rand index variants, mean best
//! overlap, panoptic quality, per-image k-means segmentation, PCA feature
//! analysis, and per-sample aggregation across datasets.

mod ari;
mod kmeans;
mod overlap;
mod pca;
mod report;

pub use ari::{adjusted_rand_index, ari_all_pixels, fg_ari, panoptic_ari};
pub use kmeans::{kmeans_lloyd, kmeans_segment};
pub use overlap::{mbo, panoptic_quality, MboDirection};
pub use pca::{pca_project, Pca};
pub use report::{
    aggregate_summaries, aggregate_weighted, AggregateSummary, MetricReport, MetricSummary,
    ReportSummary,
};

use std::collections::HashMap;

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum MetricError {
    #[error("segmentation sizes differ: {lhs:?} vs {rhs:?}")]
    SizeMismatch { lhs: (usize, usize), rhs: (usize, usize) },
    #[error("labels length {len} does not match {width}x{height}")]
    LabelLength { len: usize, width: usize, height: usize },
    #[error("panoptic label {label} has no region kind")]
    MissingKind { label: u32 },
    #[error("{0}")]
    Invalid(String),
    #[error("aggregation over a zero total count")]
    ZeroCount,
}

/// Per-pixel integer label map; label 0 is background/unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl Segmentation {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(MetricError::LabelLength { len: labels.len(), width, height });
        }
        Ok(Segmentation { width, height, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distinct nonzero labels, ascending.
    pub fn mask_labels(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn same_size(&self, other: &Segmentation) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(MetricError::SizeMismatch {
                lhs: (self.width, self.height),
                rhs: (other.width, other.height),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Thing,
    Stuff,
    Void,
    Crowd,
}

/// Segmentation plus a region kind for every nonzero label.
#[derive(Debug, Clone)]
pub struct PanopticAnnotation {
    pub seg: Segmentation,
    kinds: HashMap<u32, RegionKind>,
}

impl PanopticAnnotation {
    pub fn new(seg: Segmentation, kinds: HashMap<u32, RegionKind>) -> Result<Self> {
        for &label in seg.labels.iter() {
            if label != 0 && !kinds.contains_key(&label) {
                return Err(MetricError::MissingKind { label });
            }
        }
        Ok(PanopticAnnotation { seg, kinds })
    }

    /// Treat every object mask as a thing and the background as one stuff
    /// region (labelled one past the highest object label).
    pub fn from_instances(seg: &Segmentation) -> Self {
        let mut labels = seg.labels.clone();
        let background = seg.labels.iter().copied().max().unwrap_or(0) + 1;
        let mut kinds = HashMap::new();
        for l in labels.iter_mut() {
            if *l == 0 {
                *l = background;
            } else {
                kinds.insert(*l, RegionKind::Thing);
            }
        }
        kinds.insert(background, RegionKind::Stuff);
        PanopticAnnotation {
            seg: Segmentation {
                width: seg.width,
                height: seg.height,
                labels,
            },
            kinds,
        }
    }

    pub fn kind(&self, label: u32) -> Option<RegionKind> {
        self.kinds.get(&label).copied()
    }

    /// Pixels carrying a non-void, non-crowd panoptic label.
    pub fn evaluated(&self, index: usize) -> bool {
        let label = self.seg.labels[index];
        label != 0
            && !matches!(
                self.kinds.get(&label),
                Some(RegionKind::Void) | Some(RegionKind::Crowd)
            )
    }

    /// Distinct thing/stuff mask labels.
    pub fn mask_labels(&self) -> Vec<u32> {
        self.seg
            .mask_labels()
            .into_iter()
            .filter(|l| {
                matches!(
                    self.kinds.get(l),
                    Some(RegionKind::Thing) | Some(RegionKind::Stuff)
                )
            })
            .collect()
    }

    /// Distinct void/crowd labels.
    pub fn excluded_labels(&self) -> Vec<u32> {
        self.seg
            .mask_labels()
            .into_iter()
            .filter(|l| {
                matches!(
                    self.kinds.get(l),
                    Some(RegionKind::Void) | Some(RegionKind::Crowd)
                )
            })
            .collect()
    }
}

/// Nearest-neighbor label upsampling from a patch grid to the evaluation
/// resolution.
pub fn upsample_nearest(
    labels: &[u32],
    src: (usize, usize),
    dst: (usize, usize),
) -> Vec<u32> {
    let (sh, sw) = src;
    let (dh, dw) = dst;
    assert_eq!(labels.len(), sh * sw);
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let sy = y * sh / dh;
        for x in 0..dw {
            let sx = x * sw / dw;
            out.push(labels[sy * sw + sx]);
        }
    }
    out
}

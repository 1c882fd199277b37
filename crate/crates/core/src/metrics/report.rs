//! Per-image metric collection and the per-sample aggregate across
//! datasets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricError, Result};

/// Metric values collected over one dataset's images. Skipped images
/// (degenerate metric inputs) are recorded but excluded from means.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub dataset: String,
    /// Number of images evaluated (the aggregation weight).
    pub n_images: usize,
    per_image: BTreeMap<String, Vec<(String, f64)>>,
    skipped: BTreeMap<String, Vec<String>>,
}

impl MetricReport {
    pub fn new(dataset: &str, n_images: usize) -> Self {
        MetricReport {
            dataset: dataset.to_string(),
            n_images,
            ..Default::default()
        }
    }

    /// Record a metric for an image; `None` marks the image skipped for
    /// this metric.
    pub fn add(&mut self, metric: &str, image_id: &str, value: Option<f64>) {
        match value {
            Some(v) => self
                .per_image
                .entry(metric.to_string())
                .or_default()
                .push((image_id.to_string(), v)),
            None => self
                .skipped
                .entry(metric.to_string())
                .or_default()
                .push(image_id.to_string()),
        }
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.per_image.keys().map(String::as_str)
    }

    pub fn values(&self, metric: &str) -> &[(String, f64)] {
        self.per_image.get(metric).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn skipped(&self, metric: &str) -> &[String] {
        self.skipped.get(metric).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Arithmetic mean over this dataset's contributing images.
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let vals = self.per_image.get(metric)?;
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().map(|(_, v)| v).sum::<f64>() / vals.len() as f64)
    }

    pub fn count(&self, metric: &str) -> usize {
        self.per_image.get(metric).map_or(0, Vec::len)
    }

    /// `image_id,metric,value` rows, sorted by metric then image order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,metric,value\n");
        for (metric, rows) in &self.per_image {
            for (id, v) in rows {
                out.push_str(&format!("{id},{metric},{v}\n"));
            }
        }
        out
    }

    pub fn summary(&self) -> ReportSummary {
        let mut metrics = BTreeMap::new();
        for metric in self.per_image.keys() {
            metrics.insert(
                metric.clone(),
                MetricSummary {
                    mean: self.mean(metric).unwrap_or(f64::NAN),
                    count: self.count(metric) as u64,
                },
            );
        }
        ReportSummary {
            dataset: self.dataset.clone(),
            n_images: self.n_images as u64,
            metrics,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub count: u64,
}

/// JSON summary of one dataset's evaluation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportSummary {
    pub dataset: String,
    pub n_images: u64,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Aggregate over datasets weighted by count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateSummary {
    pub datasets: Vec<String>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Per-sample average: `sum(n_d * m_d) / sum(n_d)`.
pub fn aggregate_weighted(entries: &[(f64, u64)]) -> Result<f64> {
    let total: u64 = entries.iter().map(|&(_, n)| n).sum();
    if total == 0 {
        return Err(MetricError::ZeroCount);
    }
    Ok(entries.iter().map(|&(m, n)| m * n as f64).sum::<f64>() / total as f64)
}

/// Combine dataset summaries into the per-sample aggregate for every
/// metric present in any of them.
pub fn aggregate_summaries(summaries: &[ReportSummary]) -> Result<AggregateSummary> {
    let mut metrics: BTreeMap<String, Vec<(f64, u64)>> = BTreeMap::new();
    for s in summaries {
        for (name, m) in &s.metrics {
            if m.count > 0 {
                metrics.entry(name.clone()).or_default().push((m.mean, m.count));
            }
        }
    }
    let mut out = BTreeMap::new();
    for (name, entries) in metrics {
        let count = entries.iter().map(|&(_, n)| n).sum();
        out.insert(
            name,
            MetricSummary {
                mean: aggregate_weighted(&entries)?,
                count,
            },
        );
    }
    Ok(AggregateSummary {
        datasets: summaries.iter().map(|s| s.dataset.clone()).collect(),
        metrics: out,
    })
}

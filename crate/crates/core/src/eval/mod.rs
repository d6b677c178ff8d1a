//! Per-sample segmentation metrics and report assembly.

pub mod curves;
pub mod distance;
pub mod metrics;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::{Dataset, Sample, Split};
use crate::error::{AruError, Result};
use crate::nn::Network;
use crate::stats;
use crate::tensor::{Element, Mode};

#[derive(Clone, Debug, Serialize)]
pub struct SampleMetrics {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hd_px: Option<f64>,
    pub asd_px: Option<f64>,
    /// Prediction and target both empty: overlap metrics defaulted to 1.
    pub degenerate_overlap: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

fn aggregate(values: &[f64]) -> Aggregate {
    Aggregate {
        mean: stats::mean(values),
        sd: if values.len() >= 2 { stats::sample_sd(values) } else { 0.0 },
        median: stats::median(values),
        iqr: stats::iqr(values).unwrap_or(0.0),
        n: values.len(),
    }
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub rows: Vec<SampleMetrics>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub degenerate_overlap_count: usize,
    pub undefined_distance_count: usize,
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
    #[serde(skip)]
    pub curves: curves::Curves,
    /// Conventions a reader needs to interpret the numbers.
    pub notes: String,
}

impl MetricsReport {
    pub fn mean_dice(&self) -> f64 {
        self.aggregates["dice"].mean
    }

    /// (id, dice) pairs for paired model comparison.
    pub fn dice_scores(&self) -> Vec<(String, f64)> {
        self.rows.iter().map(|r| (r.id.clone(), r.dice)).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("id,dice,iou,precision,recall,f1,hd_px,asd_px,degenerate_overlap\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            csv.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
                r.id, r.dice, r.iou, r.precision, r.recall, r.f1,
                opt(r.hd_px), opt(r.asd_px), r.degenerate_overlap
            ));
        }
        fs::write(dir.join("metrics.csv"), csv)?;

        let json = serde_json::to_string_pretty(self)
            .map_err(|e| AruError::Format(format!("summary serialization: {e}")))?;
        fs::write(dir.join("summary.json"), json)?;

        let mut roc = String::from("threshold,fpr,tpr\n");
        for &(t, x, y) in &self.curves.roc {
            roc.push_str(&format!("{t:.6},{x:.6},{y:.6}\n"));
        }
        fs::write(dir.join("roc.csv"), roc)?;
        let mut pr = String::from("threshold,recall,precision\n");
        for &(t, x, y) in &self.curves.pr {
            pr.push_str(&format!("{t:.6},{x:.6},{y:.6}\n"));
        }
        fs::write(dir.join("pr.csv"), pr)?;
        Ok(())
    }
}

/// Assembles the report from per-sample probability maps (manifest order).
pub fn report_from_probs(
    dataset: &Dataset,
    samples: &[&Sample],
    probs: &[Vec<f32>],
    threshold: f64,
) -> Result<MetricsReport> {
    assert_eq!(samples.len(), probs.len());
    let (h, w) = dataset.size;
    let mut rows = Vec::with_capacity(samples.len());
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for (s, p) in samples.iter().zip(probs) {
        if p.len() != h * w {
            return Err(AruError::ShapeMismatch {
                op: "evaluate",
                detail: format!("{}: {} probabilities for {h}x{w} image", s.id, p.len()),
            });
        }
        let pred = metrics::binarize(p, threshold as f32);
        let (dice, deg) = metrics::dice(&pred, &s.mask)?;
        let (iou, _) = metrics::iou(&pred, &s.mask)?;
        let conf = metrics::ConfusionCounts::from_masks(&pred, &s.mask)?;
        let dist = distance::surface_distances(&pred, &s.mask, h, w);
        rows.push(SampleMetrics {
            id: s.id.clone(),
            dice,
            iou,
            precision: conf.precision(),
            recall: conf.recall(),
            f1: conf.f1(),
            hd_px: dist.map(|d| d.hausdorff),
            asd_px: dist.map(|d| d.asd),
            degenerate_overlap: deg,
        });
        pooled_scores.extend(p.iter().map(|&v| v as f64));
        pooled_labels.extend_from_slice(&s.mask);
    }

    let curves = curves::roc_pr_curves(&pooled_scores, &pooled_labels)?;
    let mut aggregates = BTreeMap::new();
    let pull = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    aggregates.insert("dice".into(), aggregate(&pull(|r| r.dice)));
    aggregates.insert("iou".into(), aggregate(&pull(|r| r.iou)));
    aggregates.insert("precision".into(), aggregate(&pull(|r| r.precision)));
    aggregates.insert("recall".into(), aggregate(&pull(|r| r.recall)));
    aggregates.insert("f1".into(), aggregate(&pull(|r| r.f1)));
    let hds: Vec<f64> = rows.iter().filter_map(|r| r.hd_px).collect();
    let asds: Vec<f64> = rows.iter().filter_map(|r| r.asd_px).collect();
    if !hds.is_empty() {
        aggregates.insert("hd_px".into(), aggregate(&hds));
        aggregates.insert("asd_px".into(), aggregate(&asds));
    }
    Ok(MetricsReport {
        threshold,
        degenerate_overlap_count: rows.iter().filter(|r| r.degenerate_overlap).count(),
        undefined_distance_count: rows.iter().filter(|r| r.hd_px.is_none()).count(),
        auc_roc: curves.auc_roc,
        auc_pr: curves.auc_pr,
        rows,
        aggregates,
        curves,
        notes: "dice/iou = 1 when prediction and target are both empty (flagged); \
                hd/asd undefined when either mask is empty, excluded from aggregates"
            .into(),
    })
}

/// Runs the network over one split and scores it at the given threshold.
pub fn evaluate<T: Element>(
    net: &mut Network<T>,
    dataset: &Dataset,
    split: Split,
    threshold: f64,
    batch_size: usize,
) -> Result<MetricsReport> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(AruError::Data(format!("no samples in split {split}")));
    }
    let (h, w) = dataset.size;
    let mut probs: Vec<Vec<f32>> = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, _) = dataset.batch::<T>(chunk)?;
        let (p, _) = net.forward(&x, Mode::Eval, None)?;
        let data = p.data();
        for i in 0..chunk.len() {
            probs.push(
                data[i * h * w..(i + 1) * h * w]
                    .iter()
                    .map(|v| v.as_f64() as f32)
                    .collect(),
            );
        }
    }
    report_from_probs(dataset, &samples, &probs, threshold)
}

//! Instance-level evaluation: IoU matching, precision/recall/F1, count and
//! area errors, plus wall-clock timing of detectors.
//!
//! Area fractions here are relative to the full frame (spot pixels / image
//! pixels); leaf-relative severity lives in [`crate::autogt::severity`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::binmorph::InstanceSet;
use crate::color::RgbImage;
use crate::detector::Detector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool tp/fp/fn over all images.
    #[default]
    Micro,
    /// Mean of per-image scores.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub averaging: Averaging,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            averaging: Averaging::Micro,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// True/false positive and false negative counts with the derived scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 if self.fn_ == 0 => 1.0,
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 if self.fp == 0 => 1.0,
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    /// 1 when there is nothing to find and nothing was predicted; 0 when
    /// nothing matched.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return if self.fp + self.fn_ == 0 { 1.0 } else { 0.0 };
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Sparse IoU table between predicted (rows) and ground-truth (columns)
/// instances. Pairs that do not overlap are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    pred_areas: Vec<usize>,
    truth_areas: Vec<usize>,
    intersections: HashMap<(u32, u32), usize>,
}

impl IouMatrix {
    pub fn rows(&self) -> usize {
        self.pred_areas.len()
    }

    pub fn cols(&self) -> usize {
        self.truth_areas.len()
    }

    pub fn intersection(&self, pred: u32, truth: u32) -> usize {
        self.intersections.get(&(pred, truth)).copied().unwrap_or(0)
    }

    /// IoU of 1-based instance ids.
    pub fn get(&self, pred: u32, truth: u32) -> f64 {
        let inter = self.intersection(pred, truth);
        if inter == 0 {
            return 0.0;
        }
        let union =
            self.pred_areas[pred as usize - 1] + self.truth_areas[truth as usize - 1] - inter;
        inter as f64 / union as f64
    }

    /// Overlapping pairs as (pred, truth, iou), in no particular order.
    pub fn overlaps(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.intersections.keys().map(|&(p, t)| (p, t, self.get(p, t)))
    }
}

pub fn pairwise_iou(pred: &InstanceSet, truth: &InstanceSet) -> Result<IouMatrix> {
    if pred.dimensions() != truth.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: truth.dimensions(),
            actual: pred.dimensions(),
        });
    }
    let mut intersections = HashMap::new();
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if p != 0 && t != 0 {
            *intersections.entry((p, t)).or_insert(0) += 1;
        }
    }
    Ok(IouMatrix {
        pred_areas: pred.instances().iter().map(|i| i.area).collect(),
        truth_areas: truth.instances().iter().map(|i| i.area).collect(),
        intersections,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// (pred id, truth id, iou), in selection order.
    pub pairs: Vec<(u32, u32, f64)>,
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
}

impl Matching {
    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.pairs.len(),
            fp: self.false_positives.len(),
            fn_: self.false_negatives.len(),
        }
    }

    pub fn f1(&self) -> f64 {
        self.counts().f1()
    }
}

/// Greedy one-to-one matching by descending IoU; ties go to the lower truth
/// id, then the lower prediction id.
pub fn greedy_match(iou: &IouMatrix, threshold: f64) -> Matching {
    let mut candidates: Vec<_> = iou.overlaps().filter(|&(_, _, v)| v >= threshold).collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let mut pred_used = vec![false; iou.rows() + 1];
    let mut truth_used = vec![false; iou.cols() + 1];
    let mut pairs = Vec::new();
    for (p, t, v) in candidates {
        if !pred_used[p as usize] && !truth_used[t as usize] {
            pred_used[p as usize] = true;
            truth_used[t as usize] = true;
            pairs.push((p, t, v));
        }
    }
    let unused = |used: &[bool]| {
        (1..used.len() as u32)
            .filter(|&i| !used[i as usize])
            .collect::<Vec<_>>()
    };
    Matching {
        false_positives: unused(&pred_used),
        false_negatives: unused(&truth_used),
        pairs,
    }
}

pub fn match_instances(
    pred: &InstanceSet,
    truth: &InstanceSet,
    cfg: &MatchConfig,
) -> Result<Matching> {
    cfg.validate()?;
    Ok(greedy_match(&pairwise_iou(pred, truth)?, cfg.iou_threshold))
}

/// Per-image evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub counts: Counts,
    pub predicted: usize,
    pub truth: usize,
    pub count_error: usize,
    pub predicted_fraction: f64,
    pub truth_fraction: f64,
    pub area_error: f64,
    pub pixel: Counts,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
}

impl ImageEval {
    pub fn compute(pred: &InstanceSet, truth: &InstanceSet, cfg: &MatchConfig) -> Result<Self> {
        let counts = match_instances(pred, truth, cfg)?.counts();
        let mut pixel = Counts::default();
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            match (p != 0, t != 0) {
                (true, true) => pixel.tp += 1,
                (true, false) => pixel.fp += 1,
                (false, true) => pixel.fn_ += 1,
                _ => {}
            }
        }
        let frame = (pred.width() * pred.height()) as f64;
        let predicted_fraction = pred.total_area() as f64 / frame;
        let truth_fraction = truth.total_area() as f64 / frame;
        Ok(Self {
            name: None,
            counts,
            predicted: pred.len(),
            truth: truth.len(),
            count_error: pred.len().abs_diff(truth.len()),
            predicted_fraction,
            truth_fraction,
            area_error: (predicted_fraction - truth_fraction).abs(),
            pixel,
            seconds: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub averaging: Averaging,
    pub iou_threshold: f64,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_count_error: f64,
    pub mean_area_error: f64,
    pub pixel_precision: f64,
    pub pixel_recall: f64,
    pub pixel_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_seconds: Option<f64>,
    pub per_image: Vec<ImageEval>,
}

// Order-independent mean: sum in sorted order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

impl EvalReport {
    pub fn aggregate(per_image: Vec<ImageEval>, cfg: &MatchConfig) -> Self {
        let n = per_image.len();
        let mut counts = Counts::default();
        let mut pixel = Counts::default();
        for e in &per_image {
            counts.add(e.counts);
            pixel.add(e.pixel);
        }
        let (precision, recall, f1) = match cfg.averaging {
            Averaging::Micro => (counts.precision(), counts.recall(), counts.f1()),
            Averaging::Macro => (
                stable_mean(per_image.iter().map(|e| e.counts.precision()).collect()),
                stable_mean(per_image.iter().map(|e| e.counts.recall()).collect()),
                stable_mean(per_image.iter().map(|e| e.counts.f1()).collect()),
            ),
        };
        let total_count_error: usize = per_image.iter().map(|e| e.count_error).sum();
        let seconds: Option<Vec<f64>> = per_image.iter().map(|e| e.seconds).collect();
        Self {
            images: n,
            averaging: cfg.averaging,
            iou_threshold: cfg.iou_threshold,
            counts,
            precision,
            recall,
            f1,
            mean_count_error: if n == 0 { 0.0 } else { total_count_error as f64 / n as f64 },
            mean_area_error: stable_mean(per_image.iter().map(|e| e.area_error).collect()),
            pixel_precision: pixel.precision(),
            pixel_recall: pixel.recall(),
            pixel_f1: pixel.f1(),
            mean_seconds: seconds.filter(|s| !s.is_empty()).map(stable_mean),
            per_image,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28}{:>12}", "Metric", "Value");
        let _ = writeln!(s, "{}", "-".repeat(40));
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<28}{v:>12}");
        };
        row("Images", self.images.to_string());
        row("IoU threshold", format!("{:.2}", self.iou_threshold));
        row("Averaging", format!("{:?}", self.averaging).to_lowercase());
        row("TP / FP / FN", format!("{}/{}/{}", self.counts.tp, self.counts.fp, self.counts.fn_));
        row("Precision", format!("{:.4}", self.precision));
        row("Recall", format!("{:.4}", self.recall));
        row("F1", format!("{:.4}", self.f1));
        row("Mean count error", format!("{:.3}", self.mean_count_error));
        row("Mean area error", format!("{:.6}", self.mean_area_error));
        row("Pixel F1", format!("{:.4}", self.pixel_f1));
        if let Some(t) = self.mean_seconds {
            row("Average time (s)", format!("{t:.3}"));
        }
        s
    }
}

pub fn evaluate(
    preds: &[InstanceSet],
    truths: &[InstanceSet],
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::Misaligned(format!(
            "{} predicted images vs {} ground-truth images",
            preds.len(),
            truths.len()
        )));
    }
    let per_image = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| ImageEval::compute(p, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::aggregate(per_image, cfg))
}

/// Wall-clock seconds of one `detect` call; decoding is the caller's business.
pub fn time_detection(img: &RgbImage, detector: &dyn Detector) -> Result<f64> {
    let start = Instant::now();
    detector.detect(img)?;
    Ok(start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub samples: Vec<f64>,
}

impl TimingStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len();
        let mean = if n == 0 { 0.0 } else { samples.iter().sum::<f64>() / n as f64 };
        let sd = if n < 2 {
            0.0
        } else {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            runs: n,
            mean,
            sd,
            samples,
        }
    }
}

/// Times `runs` detections of each image, serially.
pub fn bench(images: &[RgbImage], detector: &dyn Detector, runs: usize) -> Result<TimingStats> {
    let mut samples = Vec::with_capacity(images.len() * runs);
    for img in images {
        for _ in 0..runs {
            samples.push(time_detection(img, detector)?);
        }
    }
    Ok(TimingStats::from_samples(samples))
}

/// Approach vs. average seconds.
pub fn timing_table(rows: &[(String, TimingStats)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<32}{:>16}{:>12}{:>6}", "Approach", "Average Time (s)", "SD", "Runs");
    let _ = writeln!(s, "{}", "-".repeat(66));
    for (name, t) in rows {
        let _ = writeln!(s, "{:<32}{:>16.3}{:>12.3}{:>6}", name, t.mean, t.sd, t.runs);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(w: usize, h: usize, rows: &[&str]) -> InstanceSet {
        let labels = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| if b == b'.' { 0 } else { (b - b'0') as u32 }))
            .collect();
        InstanceSet::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn identical_and_disjoint_iou() {
        let a = labels(4, 2, &["11.2", "11.2"]);
        let m = pairwise_iou(&a, &a).unwrap();
        assert_eq!(m.get(1, 1), 1.0);
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.get(1, 2), 0.0);
        let b = labels(4, 2, &["..1.", "..1."]);
        assert_eq!(pairwise_iou(&a, &b).unwrap().get(1, 1), 0.0);
        assert!(pairwise_iou(&a, &InstanceSet::empty(3, 2)).is_err());
    }

    #[test]
    fn partial_overlap_iou() {
        let a = labels(4, 1, &["111."]);
        let b = labels(4, 1, &[".111"]);
        assert_eq!(pairwise_iou(&a, &b).unwrap().get(1, 1), 0.5);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let t = labels(5, 1, &["1.2.3"]);
        let cfg = MatchConfig::default();
        let m = match_instances(&t, &t, &cfg).unwrap();
        assert_eq!(m.counts(), Counts { tp: 3, fp: 0, fn_: 0 });
        let m = match_instances(&InstanceSet::empty(5, 1), &t, &cfg).unwrap();
        assert_eq!(m.counts(), Counts { tp: 0, fp: 0, fn_: 3 });
        assert_eq!(m.f1(), 0.0);
    }

    #[test]
    fn f1_conventions() {
        assert_eq!(Counts::default().f1(), 1.0);
        assert_eq!(Counts { tp: 0, fp: 2, fn_: 0 }.f1(), 0.0);
        let c = Counts { tp: 5, fp: 0, fn_: 5 };
        assert_eq!((c.precision(), c.recall()), (1.0, 0.5));
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ten_truths_five_matched() {
        // ten 1-pixel truths, predictions on the first five
        let truth = InstanceSet::from_labels(20, 1, (0..20).map(|i| if i % 2 == 0 { i / 2 + 1 } else { 0 }).collect()).unwrap();
        let pred = InstanceSet::from_labels(20, 1, (0..20).map(|i| if i % 2 == 0 && i < 10 { i / 2 + 1 } else { 0 }).collect()).unwrap();
        let r = evaluate(&[pred], &[truth], &MatchConfig::default()).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.mean_count_error, 5.0);
    }

    #[test]
    fn tie_break_prefers_lower_truth_id() {
        // pred 1 overlaps truths 1 and 2 with equal IoU
        let pred = labels(4, 1, &[".11."]);
        let truth = labels(4, 1, &["1122"]);
        let m = greedy_match(&pairwise_iou(&pred, &truth).unwrap(), 0.3);
        assert_eq!(m.pairs, vec![(1, 1, 1.0 / 3.0)]);
        assert_eq!(m.false_negatives, vec![2]);
    }

    #[test]
    fn misaligned_inputs() {
        let t = InstanceSet::empty(2, 2);
        assert!(matches!(evaluate(&[t.clone()], &[], &MatchConfig::default()), Err(Error::Misaligned(_))));
    }

    #[test]
    fn macro_averaging() {
        let t = labels(3, 1, &["1.2"]);
        let half = labels(3, 1, &["1.."]);
        let cfg = MatchConfig { averaging: Averaging::Macro, ..Default::default() };
        let r = evaluate(&[t.clone(), half], &[t.clone(), t], &cfg).unwrap();
        assert!((r.f1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pixel_counts_and_area_error() {
        let t = labels(4, 1, &["11.."]);
        let p = labels(4, 1, &[".11."]);
        let e = ImageEval::compute(&p, &t, &MatchConfig::default()).unwrap();
        assert_eq!(e.pixel, Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(e.area_error, 0.0);
    }

    #[test]
    fn timing_stats() {
        let t = TimingStats::from_samples(vec![1.0, 2.0, 3.0]);
        assert_eq!((t.mean, t.sd, t.runs), (2.0, 1.0, 3));
        assert_eq!(TimingStats::from_samples(vec![4.0]).sd, 0.0);
        assert!(timing_table(&[("Classical".into(), t)]).contains("Classical"));
    }

    #[test]
    fn invalid_iou_threshold() {
        let cfg = MatchConfig { iou_threshold: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}

//! Detection scoring: matching, precision/recall sweeps, AP and OIoU.
//!
//! A prediction is a true positive when it is assigned to a ground-truth box
//! of the same base class with IoU above the threshold. Assignment is greedy
//! in descending confidence; equal confidences keep their input order.
//! Orientation quality does not affect matching, it is reported through OIoU.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodingError, LoopCodec, ObjectCatalog, OrientedLabel, UnorientedLabel};
use crate::geometry::{oriented_iou, polygon_iou};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("frame {frame}: {source}")]
    Decode {
        frame: usize,
        #[source]
        source: EncodingError,
    },
    #[error("ground-truth class {class_id} is not in the catalog")]
    UnknownGroundTruthClass { class_id: u32 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Outcome for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionMatch {
    pub prediction: usize,
    pub gt: Option<usize>,
    /// IoU with the assigned box, or the best same-class IoU that was
    /// still available for a false positive.
    pub iou: f64,
    pub oiou: f64,
}

impl PredictionMatch {
    pub fn is_true_positive(&self) -> bool {
        self.gt.is_some()
    }
}

/// Assignment of one frame's predictions; `matches` is in processing order.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub matches: Vec<PredictionMatch>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.matches.iter().filter(|m| m.is_true_positive()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.matches.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.unmatched_gt.len()
    }
}

pub fn match_predictions(preds: &[OrientedLabel], gts: &[OrientedLabel], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(preds.len());
    for p in order {
        let pred = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != pred.class_id {
                continue;
            }
            let iou = polygon_iou(&pred.obb, &gt.obb);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let m = match best {
            Some((g, iou)) if iou > iou_threshold => {
                taken[g] = true;
                PredictionMatch {
                    prediction: p,
                    gt: Some(g),
                    iou,
                    oiou: oriented_iou(&pred.obb, &gts[g].obb),
                }
            }
            other => PredictionMatch {
                prediction: p,
                gt: None,
                iou: other.map_or(0.0, |(_, iou)| iou),
                oiou: 0.0,
            },
        };
        matches.push(m);
    }
    let unmatched_gt = (0..gts.len()).filter(|&g| !taken[g]).collect();
    MatchResult { matches, unmatched_gt }
}

/// Running IoU/OIoU sums over true positives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IouAccumulator {
    pub count: usize,
    pub iou_sum: f64,
    pub oiou_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouStats {
    pub mean_iou: f64,
    pub mean_oiou: f64,
    pub count: usize,
}

impl IouAccumulator {
    pub fn add(&mut self, m: &PredictionMatch) {
        if m.is_true_positive() {
            self.count += 1;
            self.iou_sum += m.iou;
            self.oiou_sum += m.oiou;
        }
    }

    pub fn merge(mut self, other: IouAccumulator) -> Self {
        self.count += other.count;
        self.iou_sum += other.iou_sum;
        self.oiou_sum += other.oiou_sum;
        self
    }

    /// `None` when no true positive was seen.
    pub fn stats(&self) -> Option<IouStats> {
        (self.count > 0).then(|| IouStats {
            mean_iou: self.iou_sum / self.count as f64,
            mean_oiou: self.oiou_sum / self.count as f64,
            count: self.count,
        })
    }
}

/// Mean IoU and OIoU over the true positives of one frame.
pub fn oiou_stats(result: &MatchResult) -> Option<IouStats> {
    let mut acc = IouAccumulator::default();
    result.matches.iter().for_each(|m| acc.add(m));
    acc.stats()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Zero when there is no ground truth.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn fscore(&self) -> f64 {
        fscore(self.precision(), self.recall())
    }

    fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

pub fn fscore(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// The 21 confidence thresholds 0.00, 0.05, ..., 1.00.
pub fn sweep_thresholds() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Area under precision over recall.
///
/// Points are taken from the highest threshold down, preceded by
/// `(recall 0, precision at the highest threshold)`, stably ordered by
/// recall and integrated with the trapezoid rule.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let n = curve.thresholds.len().min(curve.precision.len()).min(curve.recall.len());
    if n == 0 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| curve.thresholds[b].total_cmp(&curve.thresholds[a]));
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(n + 1);
    points.push((0.0, curve.precision[idx[0]]));
    points.extend(idx.iter().map(|&i| (curve.recall[i], curve.precision[i])));
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// Ground truth and raw detector output of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalFrame {
    pub gts: Vec<OrientedLabel>,
    pub preds: Vec<UnorientedLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Confidence cut for the precision/recall/IoU columns.
    pub operating_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            operating_threshold: 0.5,
        }
    }
}

fn decode_frames(frames: &[EvalFrame], codec: &LoopCodec) -> Result<Vec<Vec<OrientedLabel>>, EvalError> {
    frames
        .par_iter()
        .enumerate()
        .map(|(frame, f)| {
            f.preds
                .iter()
                .map(|p| codec.decode(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| EvalError::Decode { frame, source })
        })
        .collect()
}

fn check_gt_classes(frames: &[EvalFrame], catalog: &ObjectCatalog) -> Result<(), EvalError> {
    for f in frames {
        if let Some(bad) = f.gts.iter().find(|g| catalog.get(g.class_id).is_none()) {
            return Err(EvalError::UnknownGroundTruthClass { class_id: bad.class_id });
        }
    }
    Ok(())
}

/// Per-class counts and IoU sums at one confidence threshold.
fn score_at(
    frames: &[EvalFrame],
    decoded: &[Vec<OrientedLabel>],
    classes: usize,
    threshold: f64,
    iou_threshold: f64,
) -> (Vec<Counts>, Vec<IouAccumulator>) {
    let identity = || (vec![Counts::default(); classes], vec![IouAccumulator::default(); classes]);
    frames
        .par_iter()
        .zip(decoded.par_iter())
        .map(|(frame, preds)| {
            let kept: Vec<OrientedLabel> = preds.iter().copied().filter(|p| p.confidence >= threshold).collect();
            let result = match_predictions(&kept, &frame.gts, iou_threshold);
            let (mut counts, mut ious) = identity();
            for m in &result.matches {
                let c = kept[m.prediction].class_id as usize;
                if m.is_true_positive() {
                    counts[c].tp += 1;
                } else {
                    counts[c].fp += 1;
                }
                ious[c].add(m);
            }
            for &g in &result.unmatched_gt {
                counts[frame.gts[g].class_id as usize].fn_ += 1;
            }
            (counts, ious)
        })
        .reduce(identity, |(mut ca, ia), (cb, ib)| {
            for (a, b) in ca.iter_mut().zip(&cb) {
                a.add(b);
            }
            let merged = ia.into_iter().zip(ib).map(|(a, b)| a.merge(b)).collect();
            (ca, merged)
        })
}

/// One precision/recall curve per catalog class over the standard sweep.
pub fn pr_curves(frames: &[EvalFrame], codec: &LoopCodec, iou_threshold: f64) -> Result<Vec<PrCurve>, EvalError> {
    check_gt_classes(frames, &codec.catalog)?;
    let decoded = decode_frames(frames, codec)?;
    Ok(curves_from_decoded(frames, &decoded, codec.catalog.len(), iou_threshold))
}

fn curves_from_decoded(
    frames: &[EvalFrame],
    decoded: &[Vec<OrientedLabel>],
    classes: usize,
    iou_threshold: f64,
) -> Vec<PrCurve> {
    let thresholds = sweep_thresholds();
    let per_threshold: Vec<Vec<Counts>> = thresholds
        .iter()
        .map(|&t| score_at(frames, decoded, classes, t, iou_threshold).0)
        .collect();
    (0..classes)
        .map(|c| PrCurve {
            thresholds: thresholds.clone(),
            precision: per_threshold.iter().map(|counts| counts[c].precision()).collect(),
            recall: per_threshold.iter().map(|counts| counts[c].recall()).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub gt_count: usize,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub mean_iou: Option<f64>,
    pub mean_oiou: Option<f64>,
    pub ap: f64,
    pub curve: PrCurve,
}

/// Unweighted means over the member classes that have ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub classes: Vec<u32>,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub mean_iou: Option<f64>,
    pub mean_oiou: Option<f64>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub classes: Vec<ClassReport>,
    pub groups: Vec<GroupReport>,
    pub global: GroupReport,
    pub map: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(name: &str, members: &[&ClassReport]) -> GroupReport {
    let scored: Vec<&&ClassReport> = members.iter().filter(|c| c.gt_count > 0).collect();
    GroupReport {
        name: name.to_owned(),
        classes: members.iter().map(|c| c.class_id).collect(),
        precision: mean(scored.iter().map(|c| c.precision)).unwrap_or(0.0),
        recall: mean(scored.iter().map(|c| c.recall)).unwrap_or(0.0),
        fscore: mean(scored.iter().map(|c| c.fscore)).unwrap_or(0.0),
        mean_iou: mean(scored.iter().filter_map(|c| c.mean_iou)),
        mean_oiou: mean(scored.iter().filter_map(|c| c.mean_oiou)),
        map: mean(scored.iter().map(|c| c.ap)).unwrap_or(0.0),
    }
}

/// Mean AP over classes that have ground truth; classes without any are
/// left out rather than counted as zero.
pub fn mean_average_precision(classes: &[ClassReport]) -> f64 {
    mean(classes.iter().filter(|c| c.gt_count > 0).map(|c| c.ap)).unwrap_or(0.0)
}

pub fn evaluate(frames: &[EvalFrame], codec: &LoopCodec, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    check_gt_classes(frames, &codec.catalog)?;
    let decoded = decode_frames(frames, codec)?;
    let n = codec.catalog.len();
    let curves = curves_from_decoded(frames, &decoded, n, config.iou_threshold);
    let (counts, ious) = score_at(frames, &decoded, n, config.operating_threshold, config.iou_threshold);
    let mut gt_count = vec![0usize; n];
    for f in frames {
        for g in &f.gts {
            gt_count[g.class_id as usize] += 1;
        }
    }

    let classes: Vec<ClassReport> = codec
        .catalog
        .entries()
        .iter()
        .zip(curves)
        .enumerate()
        .map(|(c, (entry, curve))| {
            let stats = ious[c].stats();
            ClassReport {
                class_id: entry.id,
                name: entry.name.clone(),
                group: entry.group.clone(),
                gt_count: gt_count[c],
                counts: counts[c],
                precision: counts[c].precision(),
                recall: counts[c].recall(),
                fscore: counts[c].fscore(),
                mean_iou: stats.map(|s| s.mean_iou),
                mean_oiou: stats.map(|s| s.mean_oiou),
                ap: average_precision(&curve),
                curve,
            }
        })
        .collect();

    let groups = codec
        .catalog
        .groups()
        .into_iter()
        .map(|g| {
            let members: Vec<&ClassReport> = classes.iter().filter(|c| c.group.as_deref() == Some(g)).collect();
            aggregate(g, &members)
        })
        .collect();
    let global = aggregate("global", &classes.iter().collect::<Vec<_>>());
    let map = mean_average_precision(&classes);
    Ok(EvalReport {
        config: *config,
        classes,
        groups,
        global,
        map,
    })
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per class, then one per group, then the global row.
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["object", "group", "precision", "recall", "fscore", "iou", "oiou", "ap"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.4}"));
        for c in &self.classes {
            w.write_record([
                c.name.clone(),
                c.group.clone().unwrap_or_default(),
                format!("{:.4}", c.precision),
                format!("{:.4}", c.recall),
                format!("{:.4}", c.fscore),
                opt(c.mean_iou),
                opt(c.mean_oiou),
                format!("{:.4}", c.ap),
            ])?;
        }
        for g in self.groups.iter().chain(std::iter::once(&self.global)) {
            w.write_record([
                g.name.clone(),
                String::new(),
                format!("{:.4}", g.precision),
                format!("{:.4}", g.recall),
                format!("{:.4}", g.fscore),
                opt(g.mean_iou),
                opt(g.mean_oiou),
                format!("{:.4}", g.map),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

//! Detection to ground-truth matching and the evaluation metrics built on it:
//! mF1 of detection and depth, their harmonic mean (F1-Comb), Fitness, 2D mAP
//! and mean absolute localization error.
//!
//! Matching is greedy by descending confidence within each `(frame, class)`
//! group. A detection is matched to the still unmatched ground truth with the
//! highest IoU, and the match is accepted when that IoU reaches the threshold.
//! Ties are broken by static keys (box coordinates, then input order), so the
//! greedy pass over a confidence-filtered set is exactly the prefix of the
//! unfiltered pass. The threshold sweep relies on this.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bins::{argmax, refine_depth, softmax, DepthBinSpec, InterpolationKind};
use crate::error::{Error, Result};
use crate::losses::ordinal_decode;
use crate::types::{iou, DepthPrediction, Detection, GroundTruthObject};

/// Confidence and IoU thresholds spanned by the Fitness search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    conf_thresholds: Vec<f64>,
    iou_thresholds: Vec<f64>,
}

impl Default for ThresholdGrid {
    /// `t_c` in 0.00..=1.00 step 0.01 and `t_iou` in 0.50..=0.95 step 0.05.
    fn default() -> Self {
        Self {
            conf_thresholds: (0..=100).map(|i| i as f64 / 100.0).collect(),
            iou_thresholds: default_iou_thresholds(),
        }
    }
}

/// The ten COCO IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl ThresholdGrid {
    pub fn new(conf_thresholds: Vec<f64>, iou_thresholds: Vec<f64>) -> Result<Self> {
        for (name, values) in [("confidence", &conf_thresholds), ("IoU", &iou_thresholds)] {
            if values.is_empty() {
                return Err(Error::Config(format!(
                    "{name} thresholds must not be empty"
                )));
            }
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!(
                    "{name} thresholds must lie in [0, 1]"
                )));
            }
            if values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "{name} thresholds must be strictly increasing"
                )));
            }
        }
        Ok(Self {
            conf_thresholds,
            iou_thresholds,
        })
    }

    /// Confidence thresholds `0, step, 2 step, ...` up to and including 1.
    pub fn with_conf_step(step: f64, iou_thresholds: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::Config(format!(
                "confidence step {step} must lie in (0, 1]"
            )));
        }
        let n = (1.0 / step).round() as usize;
        if ((n as f64) * step - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "confidence step {step} must divide 1"
            )));
        }
        let conf = (0..=n).map(|i| i as f64 / n as f64).collect();
        Self::new(conf, iou_thresholds)
    }

    pub fn conf_thresholds(&self) -> &[f64] {
        &self.conf_thresholds
    }

    pub fn iou_thresholds(&self) -> &[f64] {
        &self.iou_thresholds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// Outcome of matching at one `(t_c, t_iou)` pair.
///
/// Indices refer to the input slices. Detections below `t_c` appear nowhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    /// Kept detections without a match (false positives).
    pub unmatched_detections: Vec<usize>,
    /// Ground truth left unmatched (false negatives).
    pub unmatched_ground_truth: Vec<usize>,
}

/// How a detection's depth output is turned into meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "kind")]
pub enum DepthDecode {
    /// Use the regressed value as is; only valid for continuous predictions.
    Continuous,
    /// Center of the predicted bin.
    BinCenter,
    /// Sub-bin refinement of the predicted bin; only valid for binned predictions.
    Interpolated(InterpolationKind),
}

impl std::fmt::Display for DepthDecode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DepthDecode::Continuous => f.write_str("continuous"),
            DepthDecode::BinCenter => f.write_str("center"),
            DepthDecode::Interpolated(kind) => write!(f, "interp:{kind}"),
        }
    }
}

impl std::str::FromStr for DepthDecode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(DepthDecode::Continuous),
            "center" | "bin_center" => Ok(DepthDecode::BinCenter),
            other => match other.strip_prefix("interp:") {
                Some(kind) => Ok(DepthDecode::Interpolated(kind.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown decode mode '{other}' (expected continuous|center|interp:<kind>)"
                ))),
            },
        }
    }
}

/// Bin predicted by a detection's depth output.
///
/// Continuous values are clamped into the binned range first; binned logits
/// use argmax (lowest index on ties); ordinal outputs count thresholds >= 0.5.
pub fn predicted_bin(pred: &DepthPrediction, bins: &DepthBinSpec) -> usize {
    match pred {
        DepthPrediction::Continuous(v) => bins.bin_index_clamped(*v),
        DepthPrediction::Binned(logits) => argmax(logits).min(bins.k - 1),
        DepthPrediction::OrdinalBinned(probs) => ordinal_decode(probs).min(bins.k - 1),
    }
}

/// Per-bin probabilities implied by ordinal threshold probabilities
/// `P(bin > k)`: `p_k = P(bin > k-1) - P(bin > k)`, negatives clipped, renormalized.
pub fn ordinal_bin_probabilities(threshold_probs: &[f64]) -> Vec<f64> {
    let k = threshold_probs.len() + 1;
    let above = |j: isize| -> f64 {
        if j < 0 {
            1.0
        } else if j as usize >= k - 1 {
            0.0
        } else {
            threshold_probs[j as usize]
        }
    };
    let raw: Vec<f64> = (0..k as isize)
        .map(|j| (above(j - 1) - above(j)).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        let mut one_hot = vec![0.0; k];
        one_hot[ordinal_decode(threshold_probs).min(k - 1)] = 1.0;
        return one_hot;
    }
    raw.into_iter().map(|p| p / total).collect()
}

/// Checks that `decode` can be applied to `pred`.
pub fn check_decode_compatible(pred: &DepthPrediction, decode: DepthDecode) -> Result<()> {
    match (decode, pred) {
        (DepthDecode::Continuous, DepthPrediction::Continuous(_)) => Ok(()),
        (DepthDecode::Continuous, _) => Err(Error::Config(
            "continuous decoding requires continuous depth predictions".into(),
        )),
        (DepthDecode::Interpolated(_), DepthPrediction::Continuous(_)) => Err(Error::Config(
            "interpolated decoding requires binned depth predictions".into(),
        )),
        _ => Ok(()),
    }
}

/// Depth in meters for a detection under `decode`. `beta` scales binned
/// logits before the softmax that feeds interpolation.
pub fn decode_depth(
    pred: &DepthPrediction,
    bins: &DepthBinSpec,
    decode: DepthDecode,
    beta: f64,
) -> Result<f64> {
    check_decode_compatible(pred, decode)?;
    match (decode, pred) {
        (DepthDecode::Continuous, DepthPrediction::Continuous(v)) => Ok(*v),
        (DepthDecode::BinCenter, _) => bins.bin_center(predicted_bin(pred, bins)),
        (DepthDecode::Interpolated(kind), DepthPrediction::Binned(logits)) => {
            refine_depth(bins, &softmax(logits, beta), kind)
        }
        (DepthDecode::Interpolated(kind), DepthPrediction::OrdinalBinned(probs)) => {
            refine_depth(bins, &ordinal_bin_probabilities(probs), kind)
        }
        _ => unreachable!("rejected by check_decode_compatible"),
    }
}

/// `2 tp / (2 tp + fp + fn)`, or 0 when nothing was counted.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Harmonic mean of the detection and depth mF1 (0 when both are 0).
pub fn f1_comb(mf1_od: f64, mf1_de: f64) -> f64 {
    if mf1_od + mf1_de == 0.0 {
        0.0
    } else {
        2.0 * mf1_od * mf1_de / (mf1_od + mf1_de)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

/// Macro-F1 over ground-truth classes. Predictions of classes absent from the
/// ground truth are pooled into one extra class that scores 0.
fn od_macro(per_class: &[Counts], phantom_fp: usize) -> f64 {
    let extra = usize::from(phantom_fp > 0);
    let n = per_class.len() + extra;
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = per_class
        .iter()
        .map(|c| f1_from_counts(c.tp, c.fp, c.fn_))
        .sum();
    sum / n as f64
}

/// Macro-F1 over depth bins that occur among the true positives, either as
/// ground truth or as prediction.
fn de_macro(per_bin: &[Counts]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in per_bin {
        if c.tp + c.fp + c.fn_ > 0 {
            sum += f1_from_counts(c.tp, c.fp, c.fn_);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One `(frame, class)` cell with its detections in greedy order.
#[derive(Debug)]
struct Group {
    frame: String,
    dets: Vec<usize>,
    gts: Vec<usize>,
    /// Row-major `dets.len() x gts.len()` IoU matrix in the sorted orders.
    ious: Vec<f64>,
}

/// Per-detection outcome of a greedy pass: the matched ground truth and IoU.
type Assignment = Option<(usize, f64)>;

/// Matching index reused across thresholds.
#[derive(Debug)]
pub struct MatchIndex<'a> {
    dets: &'a [Detection],
    gts: &'a [GroundTruthObject],
    groups: Vec<Group>,
    /// Ground-truth class names in sorted order; their position is the class id.
    class_names: Vec<String>,
    /// Class id per detection; `None` for classes absent from the ground truth.
    det_class: Vec<Option<usize>>,
    gt_per_class: Vec<usize>,
    /// Within-group greedy rank per detection.
    det_rank: Vec<usize>,
    /// Detection group index per detection.
    det_group: Vec<usize>,
}

impl<'a> MatchIndex<'a> {
    pub fn new(dets: &'a [Detection], gts: &'a [GroundTruthObject]) -> Self {
        let class_names: Vec<String> = gts
            .iter()
            .map(|g| g.class_label.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let class_id: HashMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let det_class = dets
            .iter()
            .map(|d| class_id.get(d.class_label.as_str()).copied())
            .collect();
        let mut gt_per_class = vec![0; class_names.len()];
        for c in gts.iter().map(|g| class_id[g.class_label.as_str()]) {
            gt_per_class[c] += 1;
        }

        // (frame, class) -> (detections, ground truth)
        type Cells<'k> = BTreeMap<(&'k str, &'k str), (Vec<usize>, Vec<usize>)>;
        let mut keyed: Cells = BTreeMap::new();
        for (i, d) in dets.iter().enumerate() {
            keyed
                .entry((d.frame_id.as_str(), d.class_label.as_str()))
                .or_default()
                .0
                .push(i);
        }
        for (j, g) in gts.iter().enumerate() {
            keyed
                .entry((g.frame_id.as_str(), g.class_label.as_str()))
                .or_default()
                .1
                .push(j);
        }

        let mut det_rank = vec![0; dets.len()];
        let mut det_group = vec![0; dets.len()];
        let groups: Vec<Group> = keyed
            .into_iter()
            .enumerate()
            .map(|(gi, ((frame, _), (mut ds, gs)))| {
                let best_iou = |d: usize| {
                    gs.iter()
                        .map(|&g| iou(&dets[d].bbox, &gts[g].bbox))
                        .fold(0.0, f64::max)
                };
                let best: HashMap<usize, f64> = ds.iter().map(|&d| (d, best_iou(d))).collect();
                ds.sort_by(|&a, &b| {
                    dets[b]
                        .confidence
                        .total_cmp(&dets[a].confidence)
                        .then(best[&b].total_cmp(&best[&a]))
                        .then(a.cmp(&b))
                });
                for (rank, &d) in ds.iter().enumerate() {
                    det_rank[d] = rank;
                    det_group[d] = gi;
                }
                let ious = ds
                    .iter()
                    .flat_map(|&d| gs.iter().map(move |&g| iou(&dets[d].bbox, &gts[g].bbox)))
                    .collect();
                Group {
                    frame: frame.to_string(),
                    dets: ds,
                    gts: gs,
                    ious,
                }
            })
            .collect();

        Self {
            dets,
            gts,
            groups,
            class_names,
            det_class,
            gt_per_class,
            det_rank,
            det_group,
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Greedy pass over every group, considering detections with confidence >= `t_c`.
    fn greedy(&self, t_c: f64, t_iou: f64) -> Vec<Assignment> {
        let mut out = vec![None; self.dets.len()];
        for group in &self.groups {
            let mut taken = vec![false; group.gts.len()];
            for (r, &d) in group.dets.iter().enumerate() {
                if self.dets[d].confidence < t_c {
                    break;
                }
                let row = &group.ious[r * group.gts.len()..(r + 1) * group.gts.len()];
                let mut best: Option<(usize, f64)> = None;
                for (j, &v) in row.iter().enumerate() {
                    if !taken[j] && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((j, v));
                    }
                }
                if let Some((j, v)) = best {
                    if v >= t_iou {
                        taken[j] = true;
                        out[d] = Some((group.gts[j], v));
                    }
                }
            }
        }
        out
    }

    /// Matches at a single threshold pair.
    pub fn match_at(&self, t_c: f64, t_iou: f64) -> MatchResult {
        let assignment = self.greedy(t_c, t_iou);
        let mut gt_matched = vec![false; self.gts.len()];
        let mut result = MatchResult::default();
        for (d, a) in assignment.iter().enumerate() {
            match a {
                Some((g, v)) => {
                    gt_matched[*g] = true;
                    result.pairs.push(MatchedPair {
                        detection: d,
                        ground_truth: *g,
                        iou: *v,
                    });
                }
                None if self.dets[d].confidence >= t_c => result.unmatched_detections.push(d),
                None => {}
            }
        }
        result.unmatched_ground_truth = gt_matched
            .iter()
            .enumerate()
            .filter(|(_, m)| !**m)
            .map(|(j, _)| j)
            .collect();
        result
    }

    /// Order used to rank detections of one class for the PR curve.
    fn rank_cmp(&self, a: usize, b: usize) -> Ordering {
        let (da, db) = (&self.dets[a], &self.dets[b]);
        db.confidence
            .total_cmp(&da.confidence)
            .then_with(|| {
                self.groups[self.det_group[a]]
                    .frame
                    .cmp(&self.groups[self.det_group[b]].frame)
            })
            .then(self.det_rank[a].cmp(&self.det_rank[b]))
    }

    /// AP per ground-truth class (in class-id order) at one IoU threshold.
    fn average_precision(&self, assignment: &[Assignment]) -> Vec<f64> {
        let n_classes = self.gt_per_class.len();
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (d, c) in self.det_class.iter().enumerate() {
            if let Some(c) = c {
                per_class[*c].push(d);
            }
        }
        per_class
            .into_iter()
            .enumerate()
            .map(|(c, mut ds)| {
                ds.sort_by(|&a, &b| self.rank_cmp(a, b));
                let hits: Vec<bool> = ds.iter().map(|&d| assignment[d].is_some()).collect();
                ap_all_point(&hits, self.gt_per_class[c])
            })
            .collect()
    }
}

/// Greedy matching of `detections` to `ground_truth` at one threshold pair.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    t_c: f64,
    t_iou: f64,
) -> MatchResult {
    MatchIndex::new(detections, ground_truth).match_at(t_c, t_iou)
}

/// Class-macro F1 of the detector for one match result.
pub fn f1_od(
    matches: &MatchResult,
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
) -> f64 {
    let mut per_class: BTreeMap<&str, Counts> = ground_truth
        .iter()
        .map(|g| (g.class_label.as_str(), Counts::default()))
        .collect();
    for p in &matches.pairs {
        per_class
            .get_mut(ground_truth[p.ground_truth].class_label.as_str())
            .unwrap()
            .tp += 1;
    }
    let mut phantom = 0;
    for &d in &matches.unmatched_detections {
        match per_class.get_mut(detections[d].class_label.as_str()) {
            Some(c) => c.fp += 1,
            None => phantom += 1,
        }
    }
    for &g in &matches.unmatched_ground_truth {
        per_class
            .get_mut(ground_truth[g].class_label.as_str())
            .unwrap()
            .fn_ += 1;
    }
    let counts: Vec<Counts> = per_class.into_values().collect();
    od_macro(&counts, phantom)
}

/// Bin-macro F1 of depth classification over true positives whose ground
/// truth carries a depth annotation.
pub fn f1_de(
    matches: &MatchResult,
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    bins: &DepthBinSpec,
) -> f64 {
    let mut per_bin = vec![Counts::default(); bins.k];
    for p in &matches.pairs {
        let Some(depth) = ground_truth[p.ground_truth].depth_m else {
            continue;
        };
        let truth = bins.bin_index_clamped(depth);
        let pred = predicted_bin(&detections[p.detection].depth, bins);
        tally_bin(&mut per_bin, truth, pred);
    }
    de_macro(&per_bin)
}

fn tally_bin(per_bin: &mut [Counts], truth: usize, pred: usize) {
    if truth == pred {
        per_bin[truth].tp += 1;
    } else {
        per_bin[truth].fn_ += 1;
        per_bin[pred].fp += 1;
    }
}

/// Mean absolute depth error in meters over true positives with annotated depth.
pub fn male(
    matches: &MatchResult,
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    bins: &DepthBinSpec,
    decode: DepthDecode,
    beta: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for p in &matches.pairs {
        let Some(depth) = ground_truth[p.ground_truth].depth_m else {
            continue;
        };
        let estimate = decode_depth(&detections[p.detection].depth, bins, decode, beta)?;
        total += (estimate - depth).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoSample(
            "no true positive with an annotated depth".into(),
        ));
    }
    Ok(total / n as f64)
}

/// mF1 grids over the threshold grid, indexed `[conf][iou]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessResult {
    pub fitness: f64,
    pub best_t_c: f64,
    pub best_t_iou: f64,
    pub f1_comb_grid: Vec<Vec<f64>>,
    pub mf1_od_grid: Vec<Vec<f64>>,
    pub mf1_de_grid: Vec<Vec<f64>>,
}

/// 2D mAP and per-class AP (each averaged over the IoU thresholds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub per_class: BTreeMap<String, f64>,
}

/// Ground-truth-derived values the grid sweep needs.
struct Prepared<'a> {
    index: MatchIndex<'a>,
    bins: DepthBinSpec,
    det_bin: Vec<usize>,
    gt_bin: Vec<Option<usize>>,
    /// Detection indices by descending confidence.
    by_confidence: Vec<usize>,
}

impl<'a> Prepared<'a> {
    fn new(dets: &'a [Detection], gts: &'a [GroundTruthObject], bins: DepthBinSpec) -> Self {
        let index = MatchIndex::new(dets, gts);
        let det_bin = dets
            .iter()
            .map(|d| predicted_bin(&d.depth, &bins))
            .collect();
        let gt_bin = gts
            .iter()
            .map(|g| g.depth_m.map(|d| bins.bin_index_clamped(d)))
            .collect();
        let mut by_confidence: Vec<usize> = (0..dets.len()).collect();
        by_confidence.sort_by(|&a, &b| {
            dets[b]
                .confidence
                .total_cmp(&dets[a].confidence)
                .then(a.cmp(&b))
        });
        Self {
            index,
            bins,
            det_bin,
            gt_bin,
            by_confidence,
        }
    }

    /// `(mF1_OD, mF1_DE)` for every confidence threshold at one IoU threshold.
    fn sweep_column(&self, assignment: &[Assignment], conf: &[f64]) -> Vec<(f64, f64)> {
        let dets = self.index.dets;
        let n_classes = self.index.gt_per_class.len();
        let mut class_counts = vec![Counts::default(); n_classes];
        let mut phantom = 0usize;
        let mut per_bin = vec![Counts::default(); self.bins.k];
        let mut out = vec![(0.0, 0.0); conf.len()];
        let mut next = 0;
        for ci in (0..conf.len()).rev() {
            let t_c = conf[ci];
            while next < self.by_confidence.len()
                && dets[self.by_confidence[next]].confidence >= t_c
            {
                let d = self.by_confidence[next];
                next += 1;
                match (assignment[d], self.index.det_class[d]) {
                    (Some((g, _)), Some(c)) => {
                        class_counts[c].tp += 1;
                        if let Some(truth) = self.gt_bin[g] {
                            tally_bin(&mut per_bin, truth, self.det_bin[d]);
                        }
                    }
                    (None, Some(c)) => class_counts[c].fp += 1,
                    (None, None) => phantom += 1,
                    (Some(_), None) => unreachable!("matches join equal classes"),
                }
            }
            let with_fn: Vec<Counts> = class_counts
                .iter()
                .zip(&self.index.gt_per_class)
                .map(|(c, &n)| Counts {
                    fn_: n - c.tp,
                    ..*c
                })
                .collect();
            out[ci] = (od_macro(&with_fn, phantom), de_macro(&per_bin));
        }
        out
    }
}

/// All-point interpolated AP from ranked TP flags and the ground-truth count.
pub fn ap_all_point(ranked_hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked_hits.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope: max precision at any later rank
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    // each hit raises recall by 1 / n_gt
    let area: f64 = ranked_hits
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum();
    area / n_gt as f64
}

fn best_cell(grid: &[Vec<f64>]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (ci, row) in grid.iter().enumerate() {
        for (ii, &v) in row.iter().enumerate() {
            if v > best.2 {
                best = (ci, ii, v);
            }
        }
    }
    best
}

fn fitness_from_columns(grid: &ThresholdGrid, columns: &[Vec<(f64, f64)>]) -> FitnessResult {
    let n_conf = grid.conf_thresholds.len();
    let n_iou = grid.iou_thresholds.len();
    let mut od = vec![vec![0.0; n_iou]; n_conf];
    let mut de = vec![vec![0.0; n_iou]; n_conf];
    let mut comb = vec![vec![0.0; n_iou]; n_conf];
    for (ii, column) in columns.iter().enumerate() {
        for (ci, &(o, d)) in column.iter().enumerate() {
            od[ci][ii] = o;
            de[ci][ii] = d;
            comb[ci][ii] = f1_comb(o, d);
        }
    }
    let (ci, ii, fitness) = best_cell(&comb);
    FitnessResult {
        fitness,
        best_t_c: grid.conf_thresholds[ci],
        best_t_iou: grid.iou_thresholds[ii],
        f1_comb_grid: comb,
        mf1_od_grid: od,
        mf1_de_grid: de,
    }
}

/// Fills the F1-Comb grid and returns its maximum (Fitness) with the
/// thresholds that attain it (lowest `t_c`, then lowest `t_iou`, on ties).
pub fn fitness(
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    grid: &ThresholdGrid,
    bins: &DepthBinSpec,
) -> FitnessResult {
    let prep = Prepared::new(detections, ground_truth, *bins);
    let columns: Vec<Vec<(f64, f64)>> = grid
        .iou_thresholds
        .par_iter()
        .map(|&t| {
            prep.sweep_column(
                &prep.index.greedy(f64::NEG_INFINITY, t),
                &grid.conf_thresholds,
            )
        })
        .collect();
    fitness_from_columns(grid, &columns)
}

fn map_from_columns(class_names: &[String], columns: &[Vec<f64>]) -> MapResult {
    if class_names.is_empty() || columns.is_empty() {
        return MapResult {
            map: 0.0,
            per_class: BTreeMap::new(),
        };
    }
    let n_classes = class_names.len() as f64;
    let n_thresholds = columns.len() as f64;
    let map = columns
        .iter()
        .map(|col| col.iter().sum::<f64>() / n_classes)
        .sum::<f64>()
        / n_thresholds;
    let per_class = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            (
                name.clone(),
                columns.iter().map(|col| col[c]).sum::<f64>() / n_thresholds,
            )
        })
        .collect();
    MapResult { map, per_class }
}

/// 2D mAP over ground-truth classes and the given IoU thresholds (no
/// confidence cutoff). Classes that only occur in predictions are not scored.
pub fn map_2d(
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    iou_thresholds: &[f64],
) -> MapResult {
    let index = MatchIndex::new(detections, ground_truth);
    let columns: Vec<Vec<f64>> = iou_thresholds
        .par_iter()
        .map(|&t| index.average_precision(&index.greedy(f64::NEG_INFINITY, t)))
        .collect();
    map_from_columns(&index.class_names, &columns)
}

/// Everything needed to reproduce an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bins: DepthBinSpec,
    pub grid: ThresholdGrid,
    pub decode: DepthDecode,
    /// Logit scale applied before the softmax used for interpolated decoding.
    pub beta: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: DepthBinSpec::default(),
            grid: ThresholdGrid::default(),
            decode: DepthDecode::BinCenter,
            beta: 3.0,
        }
    }
}

/// Full metric suite for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fitness: f64,
    pub best_t_c: f64,
    pub best_t_iou: f64,
    pub map_2d: f64,
    /// MALE at the Fitness thresholds; `None` when no depth-annotated TP exists there.
    pub male_m: Option<f64>,
    pub per_class_ap: BTreeMap<String, f64>,
    pub num_detections: usize,
    pub num_ground_truth: usize,
    pub conf_thresholds: Vec<f64>,
    pub iou_thresholds: Vec<f64>,
    pub f1_comb_grid: Vec<Vec<f64>>,
    pub mf1_od_grid: Vec<Vec<f64>>,
    pub mf1_de_grid: Vec<Vec<f64>>,
}

/// Checks inputs against the configuration before evaluating.
pub fn validate_inputs(
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    cfg: &EvalConfig,
) -> Result<()> {
    cfg.bins.validate()?;
    if !(cfg.beta.is_finite() && cfg.beta > 0.0) {
        return Err(Error::Config(format!("beta = {} must be > 0", cfg.beta)));
    }
    for (i, d) in detections.iter().enumerate() {
        d.depth
            .validate(cfg.bins.k)
            .map_err(|e| Error::Config(format!("detection {i}: {e}")))?;
        check_decode_compatible(&d.depth, cfg.decode)
            .map_err(|e| Error::Config(format!("detection {i}: {e}")))?;
    }
    for (j, g) in ground_truth.iter().enumerate() {
        if let Some(depth) = g.depth_m {
            if !cfg.bins.contains(depth) {
                return Err(Error::Invalid(format!(
                    "ground truth {j}: depth {depth} outside [{}, {}]",
                    cfg.bins.d_min, cfg.bins.d_max
                )));
            }
        }
    }
    Ok(())
}

/// Runs the full metric suite. Results do not depend on the rayon pool it
/// runs on; wrap the call in `ThreadPool::install` to bound parallelism.
pub fn evaluate(
    detections: &[Detection],
    ground_truth: &[GroundTruthObject],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    validate_inputs(detections, ground_truth, cfg)?;
    let prep = Prepared::new(detections, ground_truth, cfg.bins);

    type Column = (Vec<(f64, f64)>, Vec<f64>);
    let columns: Vec<Column> = cfg
        .grid
        .iou_thresholds
        .par_iter()
        .map(|&t| {
            let assignment = prep.index.greedy(f64::NEG_INFINITY, t);
            (
                prep.sweep_column(&assignment, &cfg.grid.conf_thresholds),
                prep.index.average_precision(&assignment),
            )
        })
        .collect();
    let (f1_columns, ap_columns): (Vec<_>, Vec<_>) = columns.into_iter().unzip();
    let fit = fitness_from_columns(&cfg.grid, &f1_columns);

    let map_iou = default_iou_thresholds();
    let ap_columns = if cfg.grid.iou_thresholds == map_iou {
        ap_columns
    } else {
        map_iou
            .par_iter()
            .map(|&t| {
                prep.index
                    .average_precision(&prep.index.greedy(f64::NEG_INFINITY, t))
            })
            .collect()
    };
    let map = map_from_columns(&prep.index.class_names, &ap_columns);

    let matches = prep.index.match_at(fit.best_t_c, fit.best_t_iou);
    let male_m = match male(
        &matches,
        detections,
        ground_truth,
        &cfg.bins,
        cfg.decode,
        cfg.beta,
    ) {
        Ok(v) => Some(v),
        Err(Error::NoSample(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(EvalReport {
        fitness: fit.fitness,
        best_t_c: fit.best_t_c,
        best_t_iou: fit.best_t_iou,
        map_2d: map.map,
        male_m,
        per_class_ap: map.per_class,
        num_detections: detections.len(),
        num_ground_truth: ground_truth.len(),
        conf_thresholds: cfg.grid.conf_thresholds.clone(),
        iou_thresholds: cfg.grid.iou_thresholds.clone(),
        f1_comb_grid: fit.f1_comb_grid,
        mf1_od_grid: fit.mf1_od_grid,
        mf1_de_grid: fit.mf1_de_grid,
    })
}

//! Average precision at an IoU threshold, with all-point interpolation, and
//! the motion-split variant.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::detect::DetectionSet;
use crate::error::{Result, SelsaError};
use crate::proposal::{iou, GroundTruthObject, Motion};

/// Per-class AP and their mean over classes that have ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    /// `None` for a class without ground truth.
    pub per_class: Vec<Option<f64>>,
    /// `None` when no class has ground truth.
    pub map: Option<f64>,
    pub true_positives: usize,
}

/// What a detection matched to ground truth outside the evaluated split counts as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfSplitPolicy {
    /// Neither true nor false positive.
    #[default]
    Ignore,
    FalsePositive,
}

/// For every detection, the index of the ground-truth object it matched.
///
/// Per frame and class, detections are visited by decreasing score and each
/// takes the unmatched ground truth of highest IoU, if that IoU reaches
/// `iou_thresh`.
pub fn match_detections(
    dets: &DetectionSet,
    gt: &[GroundTruthObject],
    iou_thresh: f64,
) -> Vec<Option<usize>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.detections.iter().enumerate() {
        groups
            .entry((d.frame_index, d.class_id))
            .or_default()
            .push(i);
    }
    let mut gt_groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (g, obj) in gt.iter().enumerate() {
        gt_groups
            .entry((obj.frame_index, obj.class_id))
            .or_default()
            .push(g);
    }

    let mut matches = vec![None; dets.len()];
    for (key, mut members) in groups {
        let Some(candidates) = gt_groups.get(&key) else {
            continue;
        };
        members.sort_by(|&a, &b| score_order(dets, a, b));
        let mut taken = vec![false; candidates.len()];
        for i in members {
            let mut best: Option<(usize, f64)> = None;
            for (slot, &g) in candidates.iter().enumerate() {
                if taken[slot] {
                    continue;
                }
                let overlap = iou(&dets.detections[i].bbox, &gt[g].bbox);
                if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((slot, overlap));
                }
            }
            if let Some((slot, _)) = best {
                taken[slot] = true;
                matches[i] = Some(candidates[slot]);
            }
        }
    }
    matches
}

/// Descending score, ties broken by position.
fn score_order(dets: &DetectionSet, a: usize, b: usize) -> Ordering {
    let (sa, sb) = (dets.detections[a].score, dets.detections[b].score);
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Area under the all-point interpolated precision/recall curve.
///
/// `ranked` holds `is_true_positive` for detections sorted by decreasing score.
pub fn average_precision(ranked: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for (rank, &hit) in ranked.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

fn validate_threshold(iou_thresh: f64) -> Result<()> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(SelsaError::Config(format!(
            "iou threshold {iou_thresh} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Evaluates with ground truth restricted to `in_split`.
fn evaluate_split(
    dets: &DetectionSet,
    gt: &[GroundTruthObject],
    matches: &[Option<usize>],
    n_classes: usize,
    in_split: impl Fn(&GroundTruthObject) -> bool,
    policy: OutOfSplitPolicy,
) -> ApReport {
    let mut n_gt = vec![0usize; n_classes];
    for g in gt.iter().filter(|g| in_split(g)) {
        if g.class_id < n_classes {
            n_gt[g.class_id] += 1;
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| score_order(dets, a, b));

    let mut ranked: Vec<Vec<bool>> = vec![Vec::new(); n_classes];
    for i in order {
        let d = &dets.detections[i];
        if d.class_id >= n_classes {
            continue;
        }
        let hit = match matches[i] {
            Some(g) if in_split(&gt[g]) => Some(true),
            Some(_) => match policy {
                OutOfSplitPolicy::Ignore => None,
                OutOfSplitPolicy::FalsePositive => Some(false),
            },
            None => Some(false),
        };
        if let Some(h) = hit {
            ranked[d.class_id].push(h);
        }
    }

    let per_class: Vec<Option<f64>> = (0..n_classes)
        .map(|c| (n_gt[c] > 0).then(|| average_precision(&ranked[c], n_gt[c])))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    let true_positives = ranked.iter().flatten().filter(|&&h| h).count();
    ApReport {
        per_class,
        map,
        true_positives,
    }
}

/// Per-class AP and mAP over all ground truth.
pub fn ap_at_iou(
    dets: &DetectionSet,
    gt: &[GroundTruthObject],
    n_classes: usize,
    iou_thresh: f64,
) -> Result<ApReport> {
    validate_threshold(iou_thresh)?;
    let matches = match_detections(dets, gt, iou_thresh);
    Ok(evaluate_split(
        dets,
        gt,
        &matches,
        n_classes,
        |_| true,
        OutOfSplitPolicy::Ignore,
    ))
}

/// AP restricted to slow, medium and fast ground truth. A split without ground
/// truth has `map == None`.
pub fn motion_split_map(
    dets: &DetectionSet,
    gt: &[GroundTruthObject],
    n_classes: usize,
    iou_thresh: f64,
    policy: OutOfSplitPolicy,
) -> Result<BTreeMap<Motion, ApReport>> {
    validate_threshold(iou_thresh)?;
    let matches = match_detections(dets, gt, iou_thresh);
    Ok(Motion::ALL
        .iter()
        .map(|&m| {
            let report = evaluate_split(dets, gt, &matches, n_classes, |g| g.motion == m, policy);
            (m, report)
        })
        .collect())
}

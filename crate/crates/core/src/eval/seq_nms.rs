//! Seq-NMS: link same-class boxes across consecutive frames, repeatedly pull
//! out the maximum-score linkage and rescore its boxes, then run per-frame NMS.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::detect::{Detection, DetectionSet};
use crate::proposal::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescore {
    #[default]
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqNmsConfig {
    /// Minimum IoU for two boxes in consecutive frames to be linked.
    pub link_iou: f64,
    /// IoU above which the final per-frame NMS suppresses a box.
    pub nms_iou: f64,
    pub rescore: Rescore,
}

impl Default for SeqNmsConfig {
    fn default() -> Self {
        SeqNmsConfig {
            link_iou: 0.5,
            nms_iou: 0.3,
            rescore: Rescore::Avg,
        }
    }
}

/// Boxes of one class, grouped by frame. `frames[t]` lists `(box, score)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    pub frames: Vec<Vec<(BoundingBox, f64)>>,
    pub link_iou: f64,
}

impl LinkGraph {
    pub fn linked(&self, t: usize, i: usize, j: usize) -> bool {
        iou(&self.frames[t][i].0, &self.frames[t + 1][j].0) >= self.link_iou
    }
}

/// A path through consecutive frames: `(start frame, box index per frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linkage {
    pub start: usize,
    pub boxes: Vec<usize>,
    pub total: f64,
}

/// Maximum-total-score path among boxes still `alive`, by dynamic programming
/// over frames. Ties go to the earliest-ending path, then the lowest box index.
pub fn best_linkage(graph: &LinkGraph, alive: &[Vec<bool>]) -> Option<Linkage> {
    let n = graph.frames.len();
    let mut best: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut back: Vec<Vec<Option<usize>>> = Vec::with_capacity(n);
    let mut top: Option<(usize, usize, f64)> = None;
    for t in 0..n {
        let mut row = vec![f64::NEG_INFINITY; graph.frames[t].len()];
        let mut prev_row = vec![None; graph.frames[t].len()];
        for (i, &(_, score)) in graph.frames[t].iter().enumerate() {
            if !alive[t][i] {
                continue;
            }
            let mut carry = 0.0;
            if t > 0 {
                for (j, &b) in best[t - 1].iter().enumerate() {
                    if b.is_finite() && b > carry && graph.linked(t - 1, j, i) {
                        carry = b;
                        prev_row[i] = Some(j);
                    }
                }
            }
            row[i] = score + carry;
            if top.is_none_or(|(_, _, v)| row[i] > v) {
                top = Some((t, i, row[i]));
            }
        }
        best.push(row);
        back.push(prev_row);
    }
    let (mut t, mut i, total) = top?;
    let mut boxes = vec![i];
    while let Some(j) = back[t][i] {
        t -= 1;
        i = j;
        boxes.push(i);
    }
    boxes.reverse();
    Some(Linkage {
        start: t,
        boxes,
        total,
    })
}

fn any_link(graph: &LinkGraph, alive: &[Vec<bool>]) -> bool {
    (0..graph.frames.len().saturating_sub(1)).any(|t| {
        (0..graph.frames[t].len()).any(|i| {
            alive[t][i]
                && (0..graph.frames[t + 1].len()).any(|j| alive[t + 1][j] && graph.linked(t, i, j))
        })
    })
}

/// Standard greedy NMS, independently per frame and class.
pub fn nms(dets: &DetectionSet, iou_thresh: f64) -> DetectionSet {
    let mut groups: BTreeMap<(usize, usize), Vec<Detection>> = BTreeMap::new();
    for d in dets.iter() {
        groups
            .entry((d.frame_index, d.class_id))
            .or_default()
            .push(*d);
    }
    let mut kept = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
        let mut keep: Vec<Detection> = Vec::new();
        for d in group {
            if keep.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_thresh) {
                keep.push(d);
            }
        }
        kept.extend(keep);
    }
    DetectionSet::new(kept)
}

/// Seq-NMS over one video. The output boxes are a subset of the input boxes;
/// only scores change.
pub fn seq_nms(dets: &DetectionSet, config: &SeqNmsConfig) -> DetectionSet {
    let Some(last_frame) = dets.iter().map(|d| d.frame_index).max() else {
        return DetectionSet::default();
    };
    let mut by_class: BTreeMap<usize, Vec<Vec<Detection>>> = BTreeMap::new();
    for d in dets.iter() {
        by_class
            .entry(d.class_id)
            .or_insert_with(|| vec![Vec::new(); last_frame + 1])[d.frame_index]
            .push(*d);
    }

    let mut rescored = Vec::with_capacity(dets.len());
    for (_, mut frames) in by_class {
        let graph = LinkGraph {
            frames: frames
                .iter()
                .map(|f| f.iter().map(|d| (d.bbox, d.score)).collect())
                .collect(),
            link_iou: config.link_iou,
        };
        let mut alive: Vec<Vec<bool>> = frames.iter().map(|f| vec![true; f.len()]).collect();
        while any_link(&graph, &alive) {
            let path = best_linkage(&graph, &alive).expect("a link implies a path");
            let scores: Vec<f64> = path
                .boxes
                .iter()
                .enumerate()
                .map(|(k, &i)| graph.frames[path.start + k][i].1)
                .collect();
            let value = match config.rescore {
                Rescore::Avg => path.total / scores.len() as f64,
                Rescore::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            for (k, &i) in path.boxes.iter().enumerate() {
                let t = path.start + k;
                frames[t][i].score = value;
                alive[t][i] = false;
            }
        }
        rescored.extend(frames.into_iter().flatten());
    }
    let mut out = nms(&DetectionSet::new(rescored), config.nms_iou);
    out.detections.sort_by(|a, b| {
        (a.frame_index, a.class_id)
            .cmp(&(b.frame_index, b.class_id))
            .then(b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal))
    });
    out
}

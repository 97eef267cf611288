use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sampling::{sample_frames, SamplingPlan};
use crate::error::{Result, SelsaError};
use crate::proposal::{write_csv, BoundingBox, VideoSequence};
use crate::seed::derive_seed;
use crate::selsa::{network_forward, SelsaParams};
use crate::training::AggregationMode;

/// A scored, classed box. `class_id` is always a foreground class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(detections: Vec<Detection>) -> Self {
        DetectionSet { detections }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter()
    }

    /// Shifts every frame index by `offset`; used to pool several videos into one evaluation.
    pub fn offset_frames(mut self, offset: usize) -> Self {
        for d in &mut self.detections {
            d.frame_index += offset;
        }
        self
    }

    pub fn extend(&mut self, other: DetectionSet) {
        self.detections.extend(other.detections);
    }

    /// Writes `frame_index, class_id, score, x1, y1, x2, y2`, one row per detection.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = ["frame_index", "class_id", "score", "x1", "y1", "x2", "y2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        write_csv(
            path,
            &header,
            self.detections.iter().map(|d| {
                vec![
                    d.frame_index.to_string(),
                    d.class_id.to_string(),
                    d.score.to_string(),
                    d.bbox.x1.to_string(),
                    d.bbox.y1.to_string(),
                    d.bbox.x2.to_string(),
                    d.bbox.y2.to_string(),
                ]
            }),
        )
    }
}

/// Pool frames the given mode uses for `reference`.
pub fn pool_frames(
    n_frames: usize,
    reference: usize,
    mode: AggregationMode,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<Vec<usize>> {
    match mode {
        AggregationMode::None | AggregationMode::WithinFrame => Ok(vec![reference]),
        AggregationMode::FullSequence => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[reference as u64]));
            sample_frames(n_frames, reference, plan, &mut rng)
        }
    }
}

/// Runs the head on every frame and emits one detection per proposal per
/// foreground class whose softmax score reaches `score_threshold`.
///
/// Pool frames are drawn per reference frame from a stream derived from `seed`,
/// so the result does not depend on how frames are scheduled across threads.
pub fn detect(
    video: &VideoSequence,
    params: &SelsaParams,
    mode: AggregationMode,
    plan: &SamplingPlan,
    score_threshold: f64,
    seed: u64,
) -> Result<DetectionSet> {
    if params.feature_dim() != video.feature_dim || params.n_classes() != video.n_classes {
        return Err(SelsaError::Config(format!(
            "parameters for d = {}, C = {} cannot score a video with d = {}, C = {}",
            params.feature_dim(),
            params.n_classes(),
            video.feature_dim,
            video.n_classes
        )));
    }
    let n_classes = video.n_classes;
    let per_frame: Vec<Vec<Detection>> = (0..video.len())
        .into_par_iter()
        .map(|reference| -> Result<Vec<Detection>> {
            let omega = pool_frames(video.len(), reference, mode, plan, seed)?;
            let (scores, _) =
                network_forward(video, reference, &omega, params, mode.aggregation())?;
            let mut out = Vec::new();
            for (row, proposal) in scores
                .rows()
                .into_iter()
                .zip(&video.frames[reference].proposals)
            {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&s| (s - max).exp()).sum();
                for class_id in 0..n_classes {
                    let score = (row[class_id] - max).exp() / z;
                    if score >= score_threshold {
                        out.push(Detection {
                            frame_index: reference,
                            bbox: proposal.bbox,
                            class_id,
                            score,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(DetectionSet::new(per_frame.into_iter().flatten().collect()))
}

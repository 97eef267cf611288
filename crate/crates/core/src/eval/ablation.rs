//! The full evaluation table: aggregation modes with motion split, pool
//! sampling curves, and the Seq-NMS delta on top of sequence-level aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::{ap_at_iou, motion_split_map, OutOfSplitPolicy};
use super::detect::{detect, DetectionSet};
use super::sampling::{SamplingMode, SamplingPlan};
use super::seq_nms::{nms, seq_nms, SeqNmsConfig};
use crate::error::{Result, SelsaError};
use crate::proposal::{write_csv, GroundTruthObject, Motion, VideoSequence};
use crate::seed::derive_seed;
use crate::selsa::SelsaParams;
use crate::training::AggregationMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pool sampling used for the sequence-level row of the mode table.
    pub main_plan: SamplingPlan,
    /// Extra plans evaluated with the sequence-level parameters.
    pub sampling_plans: Vec<SamplingPlan>,
    pub score_threshold: f64,
    pub iou_threshold: f64,
    /// Per-frame NMS applied to raw detections before scoring; `null` disables it.
    pub nms_iou: Option<f64>,
    pub out_of_split: OutOfSplitPolicy,
    pub seq_nms: SeqNmsConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let ks = [1, 5, 9, 13, 17, 21];
        let mut plans: Vec<SamplingPlan> =
            ks.iter().map(|&k| SamplingPlan::consecutive(k)).collect();
        plans.extend([1, 2, 5, 10].iter().map(|&s| SamplingPlan::strided(21, s)));
        plans.extend(ks.iter().map(|&k| SamplingPlan::shuffled(k)));
        EvalConfig {
            main_plan: SamplingPlan::shuffled(21),
            sampling_plans: plans,
            score_threshold: 0.05,
            iou_threshold: 0.5,
            nms_iou: Some(0.3),
            out_of_split: OutOfSplitPolicy::Ignore,
            seq_nms: SeqNmsConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.main_plan.validate()?;
        for p in &self.sampling_plans {
            p.validate()?;
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(SelsaError::Config(
                "eval.iou_threshold: must lie in (0, 1)".into(),
            ));
        }
        if !self.score_threshold.is_finite() {
            return Err(SelsaError::Config(
                "eval.score_threshold: must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the results table. `value == None` means the metric is absent
/// (no ground truth in that split).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub metric: String,
    pub split: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationResults {
    pub rows: Vec<ResultRow>,
    pub curves: Vec<Curve>,
}

impl AblationResults {
    pub fn value(&self, experiment: &str, metric: &str, split: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.experiment == experiment && r.metric == metric && r.split == split)
            .and_then(|r| r.value)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = ["experiment", "metric", "split", "value"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        write_csv(
            path,
            &header,
            self.rows.iter().map(|r| {
                vec![
                    r.experiment.clone(),
                    r.metric.clone(),
                    r.split.clone(),
                    r.value
                        .map_or_else(|| "absent".to_string(), |v| v.to_string()),
                ]
            }),
        )
    }

    /// One `x,y` file per curve, named `<dir>/<curve>.csv`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        for curve in &self.curves {
            let path = dir.join(format!("{}.csv", curve.name));
            write_csv(
                &path,
                &["x".to_string(), "y".to_string()],
                curve
                    .points
                    .iter()
                    .map(|(x, y)| vec![x.to_string(), y.to_string()]),
            )?;
        }
        Ok(())
    }
}

pub fn mode_experiment(mode: AggregationMode) -> String {
    format!("mode={}", mode.as_str())
}

pub fn plan_experiment(plan: &SamplingPlan) -> String {
    format!("plan={}", plan.label())
}

pub const SEQ_NMS_EXPERIMENT: &str = "seq_nms";

/// Detections of every video pooled into one frame-index space, and the
/// matching pooled ground truth.
struct Pooled {
    dets: DetectionSet,
    gt: Vec<GroundTruthObject>,
}

enum PostProcess<'a> {
    Nms(Option<f64>),
    SeqNms(&'a SeqNmsConfig),
}

fn run_detection(
    videos: &[VideoSequence],
    params: &SelsaParams,
    mode: AggregationMode,
    plan: &SamplingPlan,
    config: &EvalConfig,
    post: PostProcess<'_>,
    seed: u64,
) -> Result<Pooled> {
    let mut pooled = Pooled {
        dets: DetectionSet::default(),
        gt: Vec::new(),
    };
    let mut offset = 0;
    for (v, video) in videos.iter().enumerate() {
        let raw = detect(
            video,
            params,
            mode,
            plan,
            config.score_threshold,
            derive_seed(seed, &[v as u64]),
        )?;
        let processed = match post {
            PostProcess::Nms(Some(t)) => nms(&raw, t),
            PostProcess::Nms(None) => raw,
            PostProcess::SeqNms(cfg) => seq_nms(&raw, cfg),
        };
        pooled.dets.extend(processed.offset_frames(offset));
        pooled
            .gt
            .extend(video.ground_truth().map(|g| GroundTruthObject {
                frame_index: g.frame_index + offset,
                ..g.clone()
            }));
        offset += video.len();
    }
    Ok(pooled)
}

fn score_rows(
    experiment: &str,
    pooled: &Pooled,
    n_classes: usize,
    config: &EvalConfig,
    rows: &mut Vec<ResultRow>,
) -> Result<Option<f64>> {
    let overall = ap_at_iou(&pooled.dets, &pooled.gt, n_classes, config.iou_threshold)?;
    let split = motion_split_map(
        &pooled.dets,
        &pooled.gt,
        n_classes,
        config.iou_threshold,
        config.out_of_split,
    )?;
    let row = |metric: &str, split: &str, value: Option<f64>| ResultRow {
        experiment: experiment.to_string(),
        metric: metric.to_string(),
        split: split.to_string(),
        value,
    };
    rows.push(row("mAP", "all", overall.map));
    for m in Motion::ALL {
        rows.push(row("mAP", m.as_str(), split[&m].map));
    }
    for (c, ap) in overall.per_class.iter().enumerate() {
        rows.push(row(&format!("AP_class{c}"), "all", *ap));
    }
    Ok(overall.map)
}

/// Runs every configured experiment. `params` maps each trained mode to its
/// parameters; modes without parameters are skipped, and the sampling curves
/// and Seq-NMS rows need `FullSequence`.
pub fn ablation_suite(
    params: &BTreeMap<AggregationMode, SelsaParams>,
    videos: &[VideoSequence],
    config: &EvalConfig,
    with_seq_nms: bool,
    seed: u64,
) -> Result<AblationResults> {
    config.validate()?;
    let n_classes = videos
        .first()
        .ok_or_else(|| SelsaError::Config("evaluation set is empty".into()))?
        .n_classes;
    let mut results = AblationResults::default();

    for mode in AggregationMode::ALL {
        let Some(p) = params.get(&mode) else {
            continue;
        };
        let pooled = run_detection(
            videos,
            p,
            mode,
            &config.main_plan,
            config,
            PostProcess::Nms(config.nms_iou),
            seed,
        )?;
        score_rows(
            &mode_experiment(mode),
            &pooled,
            n_classes,
            config,
            &mut results.rows,
        )?;
    }

    let Some(full) = params.get(&AggregationMode::FullSequence) else {
        return Ok(results);
    };

    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for plan in &config.sampling_plans {
        let pooled = run_detection(
            videos,
            full,
            AggregationMode::FullSequence,
            plan,
            config,
            PostProcess::Nms(config.nms_iou),
            seed,
        )?;
        let map = score_rows(
            &plan_experiment(plan),
            &pooled,
            n_classes,
            config,
            &mut results.rows,
        )?;
        let (name, x) = match plan.mode {
            SamplingMode::Consecutive => ("consecutive_vs_k".to_string(), plan.k_frames as f64),
            SamplingMode::Strided => (
                format!("strided_k{}_vs_stride", plan.k_frames),
                plan.stride as f64,
            ),
            SamplingMode::Shuffled => ("shuffled_vs_k".to_string(), plan.k_frames as f64),
        };
        if let Some(y) = map {
            curves.entry(name).or_default().push((x, y));
        }
    }
    results.curves = curves
        .into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Curve { name, points }
        })
        .collect();

    if with_seq_nms {
        let pooled = run_detection(
            videos,
            full,
            AggregationMode::FullSequence,
            &config.main_plan,
            config,
            PostProcess::SeqNms(&config.seq_nms),
            seed,
        )?;
        score_rows(
            SEQ_NMS_EXPERIMENT,
            &pooled,
            n_classes,
            config,
            &mut results.rows,
        )?;
        let base = mode_experiment(AggregationMode::FullSequence);
        for split in ["all", "slow", "medium", "fast"] {
            let delta = match (
                results.value(SEQ_NMS_EXPERIMENT, "mAP", split),
                results.value(&base, "mAP", split),
            ) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            };
            results.rows.push(ResultRow {
                experiment: SEQ_NMS_EXPERIMENT.to_string(),
                metric: "mAP_delta".to_string(),
                split: split.to_string(),
                value: delta,
            });
        }
    }
    Ok(results)
}

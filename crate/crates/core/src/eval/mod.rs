//! Inference-time pool sampling, detection, AP metrics and post-processing.

mod ablation;
mod ap;
mod detect;
mod sampling;
mod seq_nms;

pub use ablation::{
    ablation_suite, mode_experiment, plan_experiment, AblationResults, Curve, EvalConfig,
    ResultRow, SEQ_NMS_EXPERIMENT,
};
pub use ap::{
    ap_at_iou, average_precision, match_detections, motion_split_map, ApReport, OutOfSplitPolicy,
};
pub use detect::{detect, pool_frames, Detection, DetectionSet};
pub use sampling::{sample_frames, SamplingMode, SamplingPlan};
pub use seq_nms::{best_linkage, nms, seq_nms, LinkGraph, Linkage, Rescore, SeqNmsConfig};

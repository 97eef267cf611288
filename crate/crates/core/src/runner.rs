//! The experiment stages behind the CLI. Each stage reads an
//! [`ExperimentConfig`] and writes its artifacts below `output_dir`:
//!
//! ```text
//! data/spec.json
//! data/{train,eval}/video_XXX.{proposals,gt}.csv
//! checkpoints/<mode>.ckpt
//! train/loss_<mode>.csv
//! eval/results.csv
//! eval/plots/<curve>.csv          (with plot data enabled)
//! spectral/cluster_risk.csv
//! ```
//!
//! Datasets are regenerated from the config by every stage, so stages only
//! share checkpoints through the file system.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;

use crate::config::ExperimentConfig;
use crate::error::{Result, SelsaError};
use crate::eval::{ablation_suite, AblationResults};
use crate::proposal::VideoSequence;
use crate::selsa::{read_checkpoint, write_checkpoint, SelsaParams};
use crate::spectral::{cluster_risk_report, learned_similarity, write_cluster_risk_csv, ClassRisk};
use crate::synthetic::{generate_dataset_video, write_spec_json, PrototypeSet};
use crate::training::{initial_params, train, write_loss_csv, AggregationMode, TrainOutcome};

/// Offset separating evaluation video indices from training video indices.
const EVAL_VIDEO_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub with_seq_nms: bool,
    pub plot_data: bool,
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<VideoSequence>,
    pub eval: Vec<VideoSequence>,
}

pub fn build_datasets(config: &ExperimentConfig) -> Result<Datasets> {
    config.validate()?;
    let spec = &config.synthetic;
    let prototypes = PrototypeSet::for_spec(spec)?;
    let videos = |base: u64, n: usize| -> Result<Vec<VideoSequence>> {
        (0..n as u64)
            .map(|i| generate_dataset_video(spec, &prototypes, base + i))
            .collect()
    };
    Ok(Datasets {
        train: videos(0, config.n_train_videos)?,
        eval: videos(EVAL_VIDEO_BASE, config.n_eval_videos)?,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SelsaError::io(dir, e))
}

pub fn checkpoint_path(out: &Path, mode: AggregationMode) -> PathBuf {
    out.join("checkpoints")
        .join(format!("{}.ckpt", mode.as_str()))
}

pub fn results_path(out: &Path) -> PathBuf {
    out.join("eval").join("results.csv")
}

pub fn cluster_risk_path(out: &Path) -> PathBuf {
    out.join("spectral").join("cluster_risk.csv")
}

/// Writes both datasets as CSV plus the generating spec.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<Datasets> {
    let data = build_datasets(config)?;
    let root = config.output_dir.join("data");
    for (split, videos) in [("train", &data.train), ("eval", &data.eval)] {
        let dir = root.join(split);
        ensure_dir(&dir)?;
        for (i, v) in videos.iter().enumerate() {
            v.write_proposals_csv(&dir.join(format!("video_{i:03}.proposals.csv")))?;
            v.write_ground_truth_csv(&dir.join(format!("video_{i:03}.gt.csv")))?;
        }
    }
    write_spec_json(&root.join("spec.json"), &config.synthetic)?;
    info!(
        "wrote {} training and {} evaluation videos to {}",
        data.train.len(),
        data.eval.len(),
        root.display()
    );
    Ok(data)
}

/// Trains one parameter set per configured mode, all from the same
/// initialization.
pub fn cmd_train(config: &ExperimentConfig) -> Result<BTreeMap<AggregationMode, TrainOutcome>> {
    let data = build_datasets(config)?;
    let out = &config.output_dir;
    ensure_dir(&out.join("checkpoints"))?;
    ensure_dir(&out.join("train"))?;
    let mut outcomes = BTreeMap::new();
    for &mode in &config.modes {
        let outcome = train(&data.train, &config.train_for(mode))?;
        write_checkpoint(&checkpoint_path(out, mode), &outcome.params)?;
        write_loss_csv(
            &out.join("train")
                .join(format!("loss_{}.csv", mode.as_str())),
            &outcome.history,
        )?;
        if let Some(last) = outcome.history.last() {
            info!("trained {}: final loss {:.4}", mode.as_str(), last.loss);
        }
        outcomes.insert(mode, outcome);
    }
    Ok(outcomes)
}

/// Loads the checkpoint of `mode` and checks it against the dataset shape.
pub fn load_checkpoint(config: &ExperimentConfig, mode: AggregationMode) -> Result<SelsaParams> {
    let path = checkpoint_path(&config.output_dir, mode);
    let params = read_checkpoint(&path)?;
    let spec = &config.synthetic;
    if params.feature_dim() != spec.feature_dim || params.n_classes() != spec.n_classes {
        return Err(SelsaError::Config(format!(
            "{}: checkpoint has d = {}, C = {} but synthetic.feature_dim = {}, synthetic.n_classes = {}",
            path.display(),
            params.feature_dim(),
            params.n_classes(),
            spec.feature_dim,
            spec.n_classes
        )));
    }
    Ok(params)
}

/// Evaluates the stored checkpoints of every configured mode.
pub fn cmd_eval(config: &ExperimentConfig, options: RunOptions) -> Result<AblationResults> {
    let data = build_datasets(config)?;
    let params = config
        .modes
        .iter()
        .map(|&m| Ok((m, load_checkpoint(config, m)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    evaluate(config, &params, &data.eval, options)
}

/// Evaluation on explicit parameters; writes the same files as [`cmd_eval`].
pub fn evaluate(
    config: &ExperimentConfig,
    params: &BTreeMap<AggregationMode, SelsaParams>,
    videos: &[VideoSequence],
    options: RunOptions,
) -> Result<AblationResults> {
    let results = ablation_suite(
        params,
        videos,
        &config.eval,
        options.with_seq_nms,
        config.train.seed,
    )?;
    let dir = config.output_dir.join("eval");
    ensure_dir(&dir)?;
    results.write_csv(&results_path(&config.output_dir))?;
    if options.plot_data {
        let plots = dir.join("plots");
        ensure_dir(&plots)?;
        results.write_plot_data(&plots)?;
    }
    Ok(results)
}

/// Cluster risk of the first aggregation block before and after training,
/// averaged over the evaluation videos. Uses the sequence-level checkpoint.
pub fn cmd_spectral(config: &ExperimentConfig) -> Result<Vec<ClassRisk>> {
    let data = build_datasets(config)?;
    let trained = load_checkpoint(config, AggregationMode::FullSequence)?;
    let initial = initial_params(
        &config.train_for(AggregationMode::FullSequence),
        config.synthetic.feature_dim,
        config.synthetic.n_classes,
    );
    if (initial.sim_dim(), initial.feature_dim()) != (trained.sim_dim(), trained.feature_dim()) {
        return Err(SelsaError::Config(format!(
            "train.sim_dim: checkpoint has {} but config yields {}",
            trained.sim_dim(),
            initial.sim_dim()
        )));
    }
    let rows = spectral_report(&data.eval, &initial, &trained)?;
    let path = cluster_risk_path(&config.output_dir);
    ensure_dir(path.parent().expect("report path has a parent"))?;
    write_cluster_risk_csv(&path, &rows)?;
    Ok(rows)
}

/// Per-class report averaged over videos. Videos whose proposals cover fewer
/// than two classes are skipped with a warning; if none remain the report is
/// empty.
pub fn spectral_report(
    videos: &[VideoSequence],
    before: &SelsaParams,
    after: &SelsaParams,
) -> Result<Vec<ClassRisk>> {
    let mut sums: BTreeMap<usize, (ClassRisk, usize)> = BTreeMap::new();
    for (v, video) in videos.iter().enumerate() {
        let frames: Vec<usize> = (0..video.len()).collect();
        let features: Array2<f64> = video.joint_features(&frames);
        let labels: Vec<usize> = video.proposals().map(|p| p.class_id).collect();
        let s_before = learned_similarity(features.view(), before)?;
        let s_after = learned_similarity(features.view(), after)?;
        let rows = match cluster_risk_report(&s_before, &s_after, &labels, 0..video.n_classes) {
            Ok(rows) => rows,
            Err(SelsaError::Precondition(msg)) => {
                warn!("video {v}: partition impossible ({msg}); skipped");
                continue;
            }
            Err(e) => return Err(e),
        };
        for r in rows {
            let entry = sums.entry(r.class_id).or_insert_with(|| {
                (
                    ClassRisk {
                        class_id: r.class_id,
                        n_proposals: 0,
                        p_out_in_before: 0.0,
                        p_out_in_after: 0.0,
                        ncut_before: 0.0,
                        ncut_after: 0.0,
                    },
                    0,
                )
            });
            entry.0.n_proposals += r.n_proposals;
            entry.0.p_out_in_before += r.p_out_in_before;
            entry.0.p_out_in_after += r.p_out_in_after;
            entry.0.ncut_before += r.ncut_before;
            entry.0.ncut_after += r.ncut_after;
            entry.1 += 1;
        }
    }
    if sums.is_empty() {
        warn!("no video holds two or more classes; cluster risk report is empty");
    }
    Ok(sums
        .into_values()
        .map(|(mut r, n)| {
            let k = n as f64;
            r.p_out_in_before /= k;
            r.p_out_in_after /= k;
            r.ncut_before /= k;
            r.ncut_after /= k;
            r
        })
        .collect())
}

/// generate, train, eval and spectral in sequence. The spectral stage runs
/// only when the sequence-level mode is configured.
pub fn cmd_all(config: &ExperimentConfig, options: RunOptions) -> Result<()> {
    cmd_generate(config)?;
    cmd_train(config)?;
    cmd_eval(config, options)?;
    if config.modes.contains(&AggregationMode::FullSequence) {
        cmd_spectral(config)?;
    } else {
        warn!("full_sequence not in modes; spectral report skipped");
    }
    Ok(())
}

//! Reproducible multi-shot synthetic videos.
//!
//! Every class has a unit-norm prototype feature. Each object in a video gets a
//! class, a motion category and a random-walk box trajectory; its appearance in
//! frame `t` is the prototype rotated by a bounded pose angle plus Gaussian
//! noise whose scale grows with motion speed. Pose and noise evolve as AR(1)
//! processes over time, so degraded stretches last several frames; marginally
//! every frame is still `rotate(prototype) + N(0, sigma^2)`. Proposals are
//! jittered ground-truth boxes; background proposals carry random features.

use std::path::Path;

use ndarray::Array2;
use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SelsaError};
use crate::proposal::{
    BoundingBox, Frame, GroundTruthObject, Motion, Proposal, VideoSequence, BACKGROUND_OBJECT,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationLevels {
    pub slow: f64,
    pub medium: f64,
    pub fast: f64,
}

impl DegradationLevels {
    pub fn get(&self, motion: Motion) -> f64 {
        match motion {
            Motion::Slow => self.slow,
            Motion::Medium => self.medium,
            Motion::Fast => self.fast,
        }
    }

    pub fn uniform(sigma: f64) -> Self {
        DegradationLevels {
            slow: sigma,
            medium: sigma,
            fast: sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

/// Complete recipe for a synthetic video (or a set of videos sharing prototypes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub n_frames: usize,
    pub proposals_per_frame: usize,
    /// Objects of one video share a class only when they outnumber the classes.
    pub n_objects_per_video: usize,
    pub degradation_sigma: DegradationLevels,
    /// Radians.
    pub pose_angle_max: f64,
    pub background_fraction: f64,
    /// Lag-one autocorrelation of the per-object pose and noise processes, in `[0, 1)`.
    pub temporal_correlation: f64,
    /// Share of the noise variance drawn independently per proposal rather than
    /// per object and frame, in `[0, 1]`.
    pub proposal_noise_share: f64,
    /// Norm of each object's fixed instance appearance, a random direction
    /// orthogonal to every class prototype.
    pub instance_norm: f64,
    pub canvas: Canvas,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 5,
            feature_dim: 16,
            n_frames: 60,
            proposals_per_frame: 8,
            n_objects_per_video: 4,
            degradation_sigma: DegradationLevels {
                slow: 0.1,
                medium: 0.3,
                fast: 0.8,
            },
            pose_angle_max: 0.5,
            background_fraction: 0.25,
            temporal_correlation: 0.5,
            proposal_noise_share: 0.25,
            instance_norm: 1.0,
            canvas: Canvas {
                width: 100.0,
                height: 100.0,
            },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The same spec with every degradation switched off: each foreground
    /// proposal carries its class prototype exactly.
    pub fn noise_free(self) -> Self {
        SyntheticSpec {
            degradation_sigma: DegradationLevels::uniform(0.0),
            pose_angle_max: 0.0,
            instance_norm: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(SelsaError::Config(format!("synthetic.{key}: {why}")));
        if self.n_classes < 2 {
            return bad("n_classes", "must be at least 2");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim", "must be at least 2");
        }
        if self.n_frames < 1 {
            return bad("n_frames", "must be at least 1");
        }
        if self.proposals_per_frame < 1 {
            return bad("proposals_per_frame", "must be at least 1");
        }
        let s = self.degradation_sigma;
        if !(s.slow >= 0.0 && s.slow <= s.medium && s.medium <= s.fast && s.fast.is_finite()) {
            return bad(
                "degradation_sigma",
                "must satisfy 0 <= slow <= medium <= fast",
            );
        }
        if !(self.pose_angle_max >= 0.0 && self.pose_angle_max.is_finite()) {
            return bad("pose_angle_max", "must be a finite non-negative angle");
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad("background_fraction", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.temporal_correlation) {
            return bad("temporal_correlation", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.proposal_noise_share) {
            return bad("proposal_noise_share", "must lie in [0, 1]");
        }
        if !(self.instance_norm >= 0.0 && self.instance_norm.is_finite()) {
            return bad("instance_norm", "must be finite and non-negative");
        }
        if !(self.canvas.width >= 10.0 && self.canvas.height >= 10.0) {
            return bad("canvas", "width and height must be at least 10");
        }
        Ok(())
    }

    /// Number of background proposal slots per frame.
    pub fn n_background(&self) -> usize {
        if self.n_objects_per_video == 0 {
            return self.proposals_per_frame;
        }
        ((self.proposals_per_frame as f64) * self.background_fraction).round() as usize
    }

    fn step_size(&self, motion: Motion) -> f64 {
        let scale = self.canvas.width.min(self.canvas.height) / 100.0;
        scale
            * match motion {
                Motion::Slow => 0.5,
                Motion::Medium => 2.0,
                Motion::Fast => 6.0,
            }
    }
}

/// One unit-norm prototype per class, rows of a `C x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub vectors: Array2<f64>,
}

/// Largest inner product allowed between two prototypes.
pub const PROTOTYPE_MAX_COSINE: f64 = 0.5;

impl PrototypeSet {
    /// Rejection-samples unit vectors until all pairwise inner products are at most 0.5.
    pub fn sample<R: Rng + ?Sized>(n_classes: usize, dim: usize, rng: &mut R) -> Result<Self> {
        const MAX_ATTEMPTS: usize = 100_000;
        let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
        let mut attempts = 0;
        while accepted.len() < n_classes {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(SelsaError::Config(format!(
                    "cannot place {n_classes} prototypes in {dim} dimensions with pairwise cosine <= {PROTOTYPE_MAX_COSINE}"
                )));
            }
            let v = random_unit(dim, rng);
            let ok = accepted.iter().all(|u| dot(u, &v) <= PROTOTYPE_MAX_COSINE);
            if ok {
                accepted.push(v);
            }
        }
        let vectors = Array2::from_shape_fn((n_classes, dim), |(c, j)| accepted[c][j]);
        Ok(PrototypeSet { vectors })
    }

    /// Prototypes shared by every video generated from `spec`.
    pub fn for_spec(spec: &SyntheticSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x9707]));
        PrototypeSet::sample(spec.n_classes, spec.feature_dim, &mut rng)
    }

    /// Random unit vector orthogonal to every prototype; zero when the
    /// prototypes span the whole space.
    pub fn orthogonal_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dim = self.vectors.ncols();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for row in self.vectors.rows() {
            let mut v = row.to_vec();
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-9 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        if basis.len() >= dim {
            return vec![0.0; dim];
        }
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-9 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    pub fn get(&self, class: usize) -> Vec<f64> {
        self.vectors.row(class).to_vec()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Rotates `v` by `angle` in the coordinate plane `(i, j)`.
pub fn rotate_in_plane(v: &mut [f64], i: usize, j: usize, angle: f64) {
    let (s, c) = angle.sin_cos();
    let (a, b) = (v[i], v[j]);
    v[i] = c * a - s * b;
    v[j] = s * a + c * b;
}

fn random_plane<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.random_range(0..dim);
    let mut j = rng.random_range(0..dim - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Rotation by a uniform angle in `[-angle, angle]` within a random coordinate
/// plane, then i.i.d. Gaussian noise of standard deviation `sigma`.
pub fn degrade<R: Rng + ?Sized>(feature: &[f64], sigma: f64, angle: f64, rng: &mut R) -> Vec<f64> {
    let mut out = feature.to_vec();
    if out.len() >= 2 && angle > 0.0 {
        let (i, j) = random_plane(out.len(), rng);
        let theta = rng.random_range(-angle..=angle);
        rotate_in_plane(&mut out, i, j, theta);
    }
    if sigma > 0.0 {
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    out
}

/// Stationary AR(1) process with unit marginal variance.
struct Ar1 {
    rho: f64,
    state: Vec<f64>,
}

impl Ar1 {
    fn new<R: Rng + ?Sized>(rho: f64, dim: usize, rng: &mut R) -> Self {
        Ar1 {
            rho,
            state: (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        let innovation = (1.0 - self.rho * self.rho).sqrt();
        for v in self.state.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = self.rho * *v + innovation * z;
        }
        &self.state
    }
}

struct ObjectTrack {
    object_id: i64,
    class_id: usize,
    motion: Motion,
    bbox: BoundingBox,
    plane: (usize, usize),
    pose: Ar1,
    noise: Ar1,
    instance: Vec<f64>,
}

fn clamp_box(b: BoundingBox, canvas: &Canvas) -> BoundingBox {
    let dx = if b.x1 < 0.0 {
        -b.x1
    } else if b.x2 > canvas.width {
        canvas.width - b.x2
    } else {
        0.0
    };
    let dy = if b.y1 < 0.0 {
        -b.y1
    } else if b.y2 > canvas.height {
        canvas.height - b.y2
    } else {
        0.0
    };
    b.translate(dx, dy)
}

fn random_box<R: Rng + ?Sized>(
    canvas: &Canvas,
    min_frac: f64,
    max_frac: f64,
    rng: &mut R,
) -> BoundingBox {
    let w = canvas.width * rng.random_range(min_frac..=max_frac);
    let h = canvas.height * rng.random_range(min_frac..=max_frac);
    let x1 = rng.random_range(0.0..=canvas.width - w);
    let y1 = rng.random_range(0.0..=canvas.height - h);
    BoundingBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

/// Each coordinate moves by up to 10% of the box extent, then is clamped to the canvas.
fn jitter_box<R: Rng + ?Sized>(b: &BoundingBox, canvas: &Canvas, rng: &mut R) -> BoundingBox {
    let (w, h) = (b.width(), b.height());
    let mut j = |v: f64, extent: f64, limit: f64| {
        (v + extent * rng.random_range(-0.1..=0.1)).clamp(0.0, limit)
    };
    BoundingBox {
        x1: j(b.x1, w, canvas.width),
        y1: j(b.y1, h, canvas.height),
        x2: j(b.x2, w, canvas.width),
        y2: j(b.y2, h, canvas.height),
    }
}

/// Generates one video whose prototypes and content both come from `spec.seed`.
pub fn generate_video(spec: &SyntheticSpec) -> Result<VideoSequence> {
    spec.validate()?;
    let prototypes = PrototypeSet::for_spec(spec)?;
    generate_video_with(spec, &prototypes, spec.seed)
}

/// Generates video number `index` of the dataset described by `spec`; all
/// videos of a dataset share the prototypes of `spec.seed`.
pub fn generate_dataset_video(
    spec: &SyntheticSpec,
    prototypes: &PrototypeSet,
    index: u64,
) -> Result<VideoSequence> {
    generate_video_with(spec, prototypes, derive_seed(spec.seed, &[0x71de0, index]))
}

/// Generates a video from explicit prototypes and a content seed.
pub fn generate_video_with(
    spec: &SyntheticSpec,
    prototypes: &PrototypeSet,
    seed: u64,
) -> Result<VideoSequence> {
    spec.validate()?;
    if prototypes.vectors.dim() != (spec.n_classes, spec.feature_dim) {
        return Err(SelsaError::Config(format!(
            "prototype matrix {:?} does not match {} classes x {} dims",
            prototypes.vectors.dim(),
            spec.n_classes,
            spec.feature_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.feature_dim;
    let rho = spec.temporal_correlation;

    let n_obj = spec.n_objects_per_video;
    let classes: Vec<usize> = if n_obj <= spec.n_classes {
        index::sample(&mut rng, spec.n_classes, n_obj).into_vec()
    } else {
        (0..n_obj)
            .map(|_| rng.random_range(0..spec.n_classes))
            .collect()
    };
    let mut tracks: Vec<ObjectTrack> = classes
        .into_iter()
        .enumerate()
        .map(|(o, class_id)| ObjectTrack {
            object_id: o as i64,
            class_id,
            motion: *Motion::ALL.choose(&mut rng).expect("non-empty"),
            bbox: random_box(&spec.canvas, 0.15, 0.35, &mut rng),
            plane: random_plane(d, &mut rng),
            pose: Ar1::new(rho, 1, &mut rng),
            noise: Ar1::new(rho, d, &mut rng),
            instance: prototypes.orthogonal_direction(&mut rng),
        })
        .collect();

    let n_bg = spec.n_background();
    let n_fg = spec.proposals_per_frame - n_bg;
    let object_share = (1.0 - spec.proposal_noise_share).sqrt();
    let proposal_share = spec.proposal_noise_share.sqrt();
    let bg_scale = 1.0 / (d as f64).sqrt();

    let mut frames = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let mut appearance = Vec::with_capacity(tracks.len());
        for track in tracks.iter_mut() {
            if t > 0 {
                let step = spec.step_size(track.motion);
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                let moved = track
                    .bbox
                    .translate(step * heading.cos(), step * heading.sin());
                track.bbox = clamp_box(moved, &spec.canvas);
                track.pose.step(&mut rng);
                track.noise.step(&mut rng);
            }
            let sigma = spec.degradation_sigma.get(track.motion);
            let mut f = prototypes.get(track.class_id);
            let theta = spec.pose_angle_max * track.pose.state[0].tanh();
            if theta != 0.0 {
                rotate_in_plane(&mut f, track.plane.0, track.plane.1, theta);
            }
            for (v, e) in f.iter_mut().zip(&track.instance) {
                *v += spec.instance_norm * e;
            }
            if sigma > 0.0 {
                for (v, n) in f.iter_mut().zip(&track.noise.state) {
                    *v += sigma * object_share * n;
                }
            }
            appearance.push(f);
        }

        let objects: Vec<GroundTruthObject> = tracks
            .iter()
            .map(|tr| GroundTruthObject {
                frame_index: t,
                object_id: tr.object_id,
                class_id: tr.class_id,
                motion: tr.motion,
                bbox: tr.bbox,
            })
            .collect();

        let mut proposals = Vec::with_capacity(spec.proposals_per_frame);
        for slot in 0..n_fg {
            let o = slot % tracks.len();
            let tr = &tracks[o];
            let sigma = spec.degradation_sigma.get(tr.motion);
            let mut feature = appearance[o].clone();
            if sigma > 0.0 && proposal_share > 0.0 {
                for v in feature.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * proposal_share * z;
                }
            }
            proposals.push(Proposal {
                feature,
                bbox: jitter_box(&tr.bbox, &spec.canvas, &mut rng),
                frame_index: t,
                class_id: tr.class_id,
                object_id: tr.object_id,
                motion: tr.motion,
            });
        }
        for _ in 0..n_bg {
            let feature: Vec<f64> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    bg_scale * z
                })
                .collect();
            proposals.push(Proposal {
                feature,
                bbox: random_box(&spec.canvas, 0.1, 0.4, &mut rng),
                frame_index: t,
                class_id: spec.n_classes,
                object_id: BACKGROUND_OBJECT,
                motion: Motion::Slow,
            });
        }
        frames.push(Frame {
            index: t,
            proposals,
            objects,
        });
    }
    VideoSequence::new(d, spec.n_classes, frames)
}

/// Writes a spec as pretty JSON.
pub fn write_spec_json(path: &Path, spec: &SyntheticSpec) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).map_err(|e| SelsaError::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| SelsaError::io(path, e))
}

pub fn read_spec_json(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| SelsaError::io(path, e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| SelsaError::json(path, e))?;
    spec.validate()?;
    Ok(spec)
}

//! Domain types shared across the crate: boxes, proposals, ground truth and
//! video sequences, plus the proposal/ground-truth CSV formats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SelsaError};

/// Axis-aligned box in corner form. Area is `(x2 - x1) * (y2 - y1)`, no pixel `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(SelsaError::Input(format!("non-finite box {b:?}")));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(SelsaError::Input(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Speed category of a ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Slow,
    Medium,
    Fast,
}

impl Motion {
    pub const ALL: [Motion; 3] = [Motion::Slow, Motion::Medium, Motion::Fast];

    pub fn as_str(&self) -> &'static str {
        match self {
            Motion::Slow => "slow",
            Motion::Medium => "medium",
            Motion::Fast => "fast",
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Motion {
    type Err = SelsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow" => Ok(Motion::Slow),
            "medium" => Ok(Motion::Medium),
            "fast" => Ok(Motion::Fast),
            other => Err(SelsaError::Input(format!(
                "unknown motion category {other:?}"
            ))),
        }
    }
}

/// `object_id` carried by background proposals.
pub const BACKGROUND_OBJECT: i64 = -1;

/// One region candidate. `class_id == n_classes` marks background; background
/// proposals carry [`BACKGROUND_OBJECT`] and `Motion::Slow`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub feature: Vec<f64>,
    pub bbox: BoundingBox,
    pub frame_index: usize,
    pub class_id: usize,
    pub object_id: i64,
    pub motion: Motion,
}

/// Ground-truth annotation of one object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub frame_index: usize,
    pub object_id: i64,
    pub class_id: usize,
    pub motion: Motion,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub proposals: Vec<Proposal>,
    pub objects: Vec<GroundTruthObject>,
}

/// An ordered sequence of frames, each with the same number of proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub frames: Vec<Frame>,
}

impl VideoSequence {
    /// Checks the structural invariants and returns the validated sequence.
    pub fn new(feature_dim: usize, n_classes: usize, frames: Vec<Frame>) -> Result<Self> {
        let video = VideoSequence {
            feature_dim,
            n_classes,
            frames,
        };
        video.validate()?;
        Ok(video)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn proposals_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.proposals.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.proposals_per_frame();
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.index != i {
                return Err(SelsaError::Input(format!(
                    "frame at position {i} has index {}",
                    frame.index
                )));
            }
            if frame.proposals.len() != n {
                return Err(SelsaError::Input(format!(
                    "frame {i} holds {} proposals, expected {n}",
                    frame.proposals.len()
                )));
            }
            for p in &frame.proposals {
                if p.feature.len() != self.feature_dim {
                    return Err(SelsaError::Input(format!(
                        "proposal in frame {i} has feature dimension {}, expected {}",
                        p.feature.len(),
                        self.feature_dim
                    )));
                }
                if p.frame_index != i {
                    return Err(SelsaError::Input(format!(
                        "proposal stored in frame {i} claims frame {}",
                        p.frame_index
                    )));
                }
                if p.class_id > self.n_classes {
                    return Err(SelsaError::Input(format!(
                        "proposal class {} out of range [0, {}]",
                        p.class_id, self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Features of one frame as an `N x d` matrix.
    pub fn frame_features(&self, frame: usize) -> Array2<f64> {
        let props = &self.frames[frame].proposals;
        Array2::from_shape_fn((props.len(), self.feature_dim), |(i, j)| {
            props[i].feature[j]
        })
    }

    /// Concatenated features of the given frames, in order.
    pub fn joint_features(&self, frames: &[usize]) -> Array2<f64> {
        let n = self.proposals_per_frame();
        let mut out = Array2::zeros((n * frames.len(), self.feature_dim));
        for (slot, &f) in frames.iter().enumerate() {
            for (i, p) in self.frames[f].proposals.iter().enumerate() {
                for (j, &v) in p.feature.iter().enumerate() {
                    out[[slot * n + i, j]] = v;
                }
            }
        }
        out
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Proposal> {
        self.frames.iter().flat_map(|f| f.proposals.iter())
    }

    pub fn ground_truth(&self) -> impl Iterator<Item = &GroundTruthObject> {
        self.frames.iter().flat_map(|f| f.objects.iter())
    }

    /// Writes the proposal CSV: `frame_index, object_id, class_id, motion,
    /// x1, y1, x2, y2, f0 .. f{d-1}`, one row per proposal.
    pub fn write_proposals_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = [
            "frame_index",
            "object_id",
            "class_id",
            "motion",
            "x1",
            "y1",
            "x2",
            "y2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..self.feature_dim).map(|j| format!("f{j}")));
        let rows = self.proposals().map(|p| {
            let mut row = vec![
                p.frame_index.to_string(),
                p.object_id.to_string(),
                p.class_id.to_string(),
                p.motion.to_string(),
            ];
            row.extend(box_fields(&p.bbox));
            row.extend(p.feature.iter().map(|v| v.to_string()));
            row
        });
        write_csv(path, &header, rows)
    }

    /// Writes the ground-truth CSV: `frame_index, object_id, class_id, motion, x1, y1, x2, y2`.
    pub fn write_ground_truth_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = [
            "frame_index",
            "object_id",
            "class_id",
            "motion",
            "x1",
            "y1",
            "x2",
            "y2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let rows = self.ground_truth().map(|g| {
            let mut row = vec![
                g.frame_index.to_string(),
                g.object_id.to_string(),
                g.class_id.to_string(),
                g.motion.to_string(),
            ];
            row.extend(box_fields(&g.bbox));
            row
        });
        write_csv(path, &header, rows)
    }

    /// Reads a video back from its proposal and ground-truth CSV files.
    pub fn read_csv(
        proposals_path: &Path,
        ground_truth_path: &Path,
        feature_dim: usize,
        n_classes: usize,
    ) -> Result<Self> {
        let mut frames: Vec<Frame> = Vec::new();
        let ensure_frame = |frames: &mut Vec<Frame>, idx: usize| {
            while frames.len() <= idx {
                let index = frames.len();
                frames.push(Frame {
                    index,
                    proposals: Vec::new(),
                    objects: Vec::new(),
                });
            }
        };

        for record in read_records(proposals_path)? {
            if record.len() != 8 + feature_dim {
                return Err(SelsaError::Input(format!(
                    "{}: row has {} columns, expected {}",
                    proposals_path.display(),
                    record.len(),
                    8 + feature_dim
                )));
            }
            let frame_index: usize = parse_field(proposals_path, &record[0])?;
            let feature = record[8..]
                .iter()
                .map(|s| parse_field(proposals_path, s))
                .collect::<Result<Vec<f64>>>()?;
            let proposal = Proposal {
                feature,
                bbox: parse_box(proposals_path, &record[4..8])?,
                frame_index,
                class_id: parse_field(proposals_path, &record[2])?,
                object_id: parse_field(proposals_path, &record[1])?,
                motion: record[3].parse()?,
            };
            ensure_frame(&mut frames, frame_index);
            frames[frame_index].proposals.push(proposal);
        }

        for record in read_records(ground_truth_path)? {
            if record.len() != 8 {
                return Err(SelsaError::Input(format!(
                    "{}: row has {} columns, expected 8",
                    ground_truth_path.display(),
                    record.len()
                )));
            }
            let frame_index: usize = parse_field(ground_truth_path, &record[0])?;
            let object = GroundTruthObject {
                frame_index,
                object_id: parse_field(ground_truth_path, &record[1])?,
                class_id: parse_field(ground_truth_path, &record[2])?,
                motion: record[3].parse()?,
                bbox: parse_box(ground_truth_path, &record[4..8])?,
            };
            ensure_frame(&mut frames, frame_index);
            frames[frame_index].objects.push(object);
        }

        VideoSequence::new(feature_dim, n_classes, frames)
    }
}

fn box_fields(b: &BoundingBox) -> [String; 4] {
    [
        b.x1.to_string(),
        b.y1.to_string(),
        b.x2.to_string(),
        b.y2.to_string(),
    ]
}

fn parse_field<T: FromStr>(path: &Path, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| SelsaError::Input(format!("{}: cannot parse field {s:?}", path.display())))
}

fn parse_box(path: &Path, fields: &[String]) -> Result<BoundingBox> {
    BoundingBox::new(
        parse_field(path, &fields[0])?,
        parse_field(path, &fields[1])?,
        parse_field(path, &fields[2])?,
        parse_field(path, &fields[3])?,
    )
}

fn read_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| SelsaError::csv(path, e))?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| SelsaError::csv(path, e))
        })
        .collect()
}

/// Writes a header plus rows with `\n` line endings.
pub(crate) fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| SelsaError::csv(path, e))?;
    writer
        .write_record(header)
        .map_err(|e| SelsaError::csv(path, e))?;
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| SelsaError::csv(path, e))?;
    }
    writer.flush().map_err(|e| SelsaError::io(path, e))
}

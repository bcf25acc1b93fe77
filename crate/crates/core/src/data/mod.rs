//! Clip records, their invariants, and the frame-level augmentations used by
//! training.

mod diff;
mod format;
mod stats;

pub use diff::{apply_diff, load_diff, parse_diff, AnnotationDiff, ChangeReport, DiffEntry, DiffOp};
pub use format::{
    load_dataset, read_dataset, read_header, save_dataset, write_dataset, BoxUnits, Dataset, DatasetHeader, LoadIssue,
    Loaded, Strictness, FORMAT_NAME, FORMAT_VERSION,
};
pub use stats::{format_stats_json, format_stats_table, label_stats, LabelCounts};

use rand::Rng;

use crate::coord::{check_box, BoxCoords};
use crate::error::{Error, Result};
use crate::labels::TaskConfig;

/// Box coordinates are stored as multiples of this step, so mirroring
/// (`1 − x`) is exact in floating point.
pub const COORD_STEP: f64 = 1.0 / (1u64 << 20) as f64;

pub fn quantize_coord(x: f64) -> f64 {
    (x / COORD_STEP).round() * COORD_STEP
}

pub fn quantize_box(b: BoxCoords) -> BoxCoords {
    b.map(quantize_coord)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub boxes: Vec<BoxCoords>,
    /// One feature row per actor.
    pub features: Vec<Vec<f64>>,
    /// Individual action per actor; `None` when unlabeled.
    pub actions: Vec<Option<usize>>,
}

impl FrameRecord {
    pub fn num_actors(&self) -> usize {
        self.boxes.len()
    }

    pub fn has_actions(&self) -> bool {
        self.actions.iter().any(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub video_id: String,
    pub group_label: usize,
    pub frames: Vec<FrameRecord>,
}

impl ClipRecord {
    pub fn num_actors(&self) -> usize {
        self.frames.first().map_or(0, FrameRecord::num_actors)
    }

    fn violation(&self, location: String, message: impl Into<String>) -> Error {
        Error::Validation {
            clip: self.clip_id.clone(),
            location,
            message: message.into(),
        }
    }

    /// Checks every record invariant. `feature_dim` of `None` only requires
    /// equal row lengths within the clip.
    pub fn validate(&self, task: &TaskConfig, feature_dim: Option<usize>) -> Result<()> {
        if self.frames.is_empty() {
            return Err(self.violation(String::new(), "clip has no frames"));
        }
        if self.group_label >= task.num_groups() {
            return Err(self.violation(
                String::new(),
                format!("group label {} out of range", self.group_label),
            ));
        }
        let n = self.num_actors();
        let width = feature_dim.or_else(|| self.frames[0].features.first().map(Vec::len));
        for (f, frame) in self.frames.iter().enumerate() {
            let at = |a: Option<usize>| match a {
                Some(a) => format!(", frame {f}, actor {a}"),
                None => format!(", frame {f}"),
            };
            if frame.num_actors() == 0 {
                return Err(self.violation(at(None), "frame has no actors"));
            }
            if frame.num_actors() != n {
                return Err(self.violation(
                    at(None),
                    format!("{} actors, but the first frame has {n}", frame.num_actors()),
                ));
            }
            if frame.features.len() != n || frame.actions.len() != n {
                return Err(self.violation(
                    at(None),
                    format!(
                        "{n} boxes, {} feature rows, {} actions",
                        frame.features.len(),
                        frame.actions.len()
                    ),
                ));
            }
            if let Some(expected) = task.actors {
                if task.strict_actors && n != expected {
                    return Err(self.violation(at(None), format!("{n} actors, expected {expected}")));
                }
            }
            for a in 0..n {
                check_box(&frame.boxes[a]).map_err(|m| self.violation(at(Some(a)), m))?;
                let row = &frame.features[a];
                if Some(row.len()) != width || row.is_empty() {
                    return Err(self.violation(
                        at(Some(a)),
                        format!("feature row of length {}, expected {}", row.len(), width.unwrap_or(0)),
                    ));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(self.violation(at(Some(a)), "non-finite feature value"));
                }
                if let Some(act) = frame.actions[a] {
                    if act >= task.num_individual() {
                        return Err(self.violation(at(Some(a)), format!("action {act} out of range")));
                    }
                }
            }
        }
        if task.is_volleyball() && n < 2 {
            return Err(self.violation(String::new(), "volleyball frames need at least two actors"));
        }
        Ok(())
    }
}

/// Mirrors a box about the vertical center line.
pub fn flip_box(b: &BoxCoords) -> BoxCoords {
    [1.0 - b[2], b[1], 1.0 - b[0], b[3]]
}

/// Horizontal flip at feature level: boxes are mirrored, actor order is
/// reversed, the group label changes side. Feature rows are left as they
/// are because the image-level flip cannot be replayed on them.
pub fn flip_augment(frame: &FrameRecord, group: usize, task: &TaskConfig) -> Result<(FrameRecord, usize)> {
    let flipped = task.flip_group(group)?;
    let frame = FrameRecord {
        boxes: frame.boxes.iter().rev().map(flip_box).collect(),
        features: frame.features.iter().rev().cloned().collect(),
        actions: frame.actions.iter().rev().copied().collect(),
    };
    Ok((frame, flipped))
}

/// One frame drawn uniformly from the clip.
pub fn sample_frame<'a>(clip: &'a ClipRecord, rng: &mut impl Rng) -> Result<&'a FrameRecord> {
    if clip.frames.is_empty() {
        return Err(Error::Validation {
            clip: clip.clip_id.clone(),
            location: String::new(),
            message: "cannot sample from a clip without frames".into(),
        });
    }
    Ok(&clip.frames[rng.gen_range(0..clip.frames.len())])
}

//! Newline-delimited clip files: one header object, then one object per clip.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{quantize_box, ClipRecord, FrameRecord};
use crate::coord::BoxCoords;
use crate::error::{Error, Result};
use crate::labels::{Mode, TaskConfig};

pub const FORMAT_NAME: &str = "decompl-clips";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxUnits {
    #[default]
    Normalized,
    /// Pixel coordinates, normalized on load by the header's image size.
    Pixels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub feature_dim: usize,
    #[serde(default)]
    pub box_units: BoxUnits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actors: Option<usize>,
    pub group_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub side_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub team_labels: Vec<String>,
    pub individual_labels: Vec<String>,
}

impl DatasetHeader {
    pub fn new(task: &TaskConfig, feature_dim: usize) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            mode: task.mode,
            feature_dim,
            box_units: BoxUnits::Normalized,
            image_width: None,
            image_height: None,
            actors: task.actors,
            group_labels: task.group_labels.clone(),
            side_labels: task.side_labels.clone(),
            team_labels: task.team_labels.clone(),
            individual_labels: task.individual_labels.clone(),
        }
    }

    /// The label algebra declared by the file.
    pub fn task(&self) -> TaskConfig {
        TaskConfig {
            mode: self.mode,
            group_labels: self.group_labels.clone(),
            side_labels: self.side_labels.clone(),
            team_labels: self.team_labels.clone(),
            individual_labels: self.individual_labels.clone(),
            actors: self.actors,
            strict_actors: self.actors.is_some(),
            beta: 1.0,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.format != FORMAT_NAME {
            return Err(format!("expected format {FORMAT_NAME:?}, got {:?}", self.format));
        }
        if self.version != FORMAT_VERSION {
            return Err(format!("unsupported format version {}", self.version));
        }
        if self.feature_dim == 0 {
            return Err("feature_dim must be positive".into());
        }
        if self.box_units == BoxUnits::Pixels {
            let ok = |d: Option<f64>| d.is_some_and(|v| v.is_finite() && v > 0.0);
            if !ok(self.image_width) || !ok(self.image_height) {
                return Err("pixel boxes need positive image_width and image_height".into());
            }
        }
        self.task().validate().map_err(|e| e.to_string())
    }

    fn matches(&self, task: &TaskConfig) -> bool {
        self.mode == task.mode
            && self.group_labels == task.group_labels
            && self.side_labels == task.side_labels
            && self.team_labels == task.team_labels
            && self.individual_labels == task.individual_labels
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    boxes: Vec<BoxCoords>,
    features: Vec<Vec<f64>>,
    actions: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipJson {
    clip_id: String,
    video_id: String,
    group_label: String,
    frames: Vec<FrameJson>,
}

/// A validated set of clips together with the label algebra they follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskConfig,
    pub feature_dim: usize,
    pub clips: Vec<ClipRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader::new(&self.task, self.feature_dim)
    }

    /// Same task and feature width, different clips.
    pub fn with_clips(&self, clips: Vec<ClipRecord>) -> Self {
        Self {
            task: self.task.clone(),
            feature_dim: self.feature_dim,
            clips,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut keys = HashSet::new();
        for clip in &self.clips {
            clip.validate(&self.task, Some(self.feature_dim))?;
            if !keys.insert((clip.video_id.as_str(), clip.clip_id.as_str())) {
                return Err(Error::Validation {
                    clip: clip.clip_id.clone(),
                    location: String::new(),
                    message: format!("duplicate clip in video {}", clip.video_id),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Abort on the first malformed record.
    Strict,
    /// Skip malformed records and report them.
    Lenient,
}

/// A skipped record, reported in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub issues: Vec<LoadIssue>,
}

fn parse_clip(json: ClipJson, header: &DatasetHeader, task: &TaskConfig) -> Result<ClipRecord> {
    let invalid = |location: String, message: String| Error::Validation {
        clip: json.clip_id.clone(),
        location,
        message,
    };
    let group_label = task
        .group_id(&json.group_label)
        .map_err(|e| invalid(String::new(), e.to_string()))?;
    let scale = match header.box_units {
        BoxUnits::Normalized => [1.0; 4],
        BoxUnits::Pixels => {
            let (w, h) = (header.image_width.unwrap_or(1.0), header.image_height.unwrap_or(1.0));
            [w, h, w, h]
        }
    };
    let mut frames = Vec::with_capacity(json.frames.len());
    for (f, frame) in json.frames.iter().enumerate() {
        let mut actions = Vec::with_capacity(frame.actions.len());
        for (a, &act) in frame.actions.iter().enumerate() {
            actions.push(match act {
                -1 => None,
                v if v >= 0 => Some(v as usize),
                v => {
                    return Err(invalid(format!(", frame {f}, actor {a}"), format!("action {v} is neither an id nor -1")))
                }
            });
        }
        let boxes = frame
            .boxes
            .iter()
            .map(|b| quantize_box([b[0] / scale[0], b[1] / scale[1], b[2] / scale[2], b[3] / scale[3]]))
            .collect();
        frames.push(FrameRecord {
            boxes,
            features: frame.features.clone(),
            actions,
        });
    }
    let clip = ClipRecord {
        clip_id: json.clip_id.clone(),
        video_id: json.video_id.clone(),
        group_label,
        frames,
    };
    clip.validate(task, Some(header.feature_dim))?;
    Ok(clip)
}

/// Reads only the header record, if the file has one.
pub fn read_header(path: &Path) -> Result<Option<DatasetHeader>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let header: DatasetHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("header: {e}"),
        })?;
        header.check().map_err(|message| Error::Parse { line: i + 1, message })?;
        return Ok(Some(header));
    }
    Ok(None)
}

/// Loads a clip file. With `task` given, the file's vocabularies must match
/// it and the loaded dataset carries `task`; otherwise the header's label
/// algebra is used.
pub fn load_dataset(path: &Path, task: Option<&TaskConfig>, strictness: Strictness) -> Result<Loaded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), task, strictness).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_dataset(reader: impl Read, task: Option<&TaskConfig>, strictness: Strictness) -> Result<Loaded> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let mut header = None;
    for (i, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let h: DatasetHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("header: {e}"),
        })?;
        h.check().map_err(|message| Error::Parse { line: i + 1, message })?;
        if let Some(t) = task {
            if !h.matches(t) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "header vocabularies differ from the configured task".into(),
                });
            }
        }
        header = Some(h);
        break;
    }
    let Some(header) = header else {
        log::warn!("dataset is empty");
        return Ok(Loaded {
            dataset: Dataset {
                task: task.cloned().unwrap_or_else(TaskConfig::volleyball),
                feature_dim: 0,
                clips: Vec::new(),
            },
            issues: Vec::new(),
        });
    };
    let task = task.cloned().unwrap_or_else(|| header.task());

    let mut clips = Vec::new();
    let mut issues = Vec::new();
    let mut keys = HashSet::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parsed = serde_json::from_str::<ClipJson>(&line)
            .map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })
            .and_then(|json| parse_clip(json, &header, &task))
            .and_then(|clip| {
                if keys.insert((clip.video_id.clone(), clip.clip_id.clone())) {
                    Ok(clip)
                } else {
                    Err(Error::Validation {
                        clip: clip.clip_id.clone(),
                        location: String::new(),
                        message: format!("duplicate clip in video {}", clip.video_id),
                    })
                }
            });
        match (parsed, strictness) {
            (Ok(clip), _) => clips.push(clip),
            (Err(e), Strictness::Strict) => {
                return Err(match e {
                    Error::Validation { clip, location, message } => Error::Validation {
                        clip,
                        location,
                        message: format!("{message} (line {lineno})"),
                    },
                    other => other,
                })
            }
            (Err(e), Strictness::Lenient) => {
                log::warn!("line {lineno}: skipped: {e}");
                issues.push(LoadIssue {
                    line: lineno,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(Loaded {
        dataset: Dataset {
            task,
            feature_dim: header.feature_dim,
            clips,
        },
        issues,
    })
}

/// Canonical serialization: normalized boxes, fixed key order, shortest
/// round-trip float formatting.
pub fn write_dataset(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    let to_io = |e: serde_json::Error| Error::io("<output>", e.into());
    serde_json::to_writer(&mut out, &dataset.header()).map_err(to_io)?;
    out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    for clip in &dataset.clips {
        let json = ClipJson {
            clip_id: clip.clip_id.clone(),
            video_id: clip.video_id.clone(),
            group_label: dataset.task.group_name(clip.group_label)?.to_string(),
            frames: clip
                .frames
                .iter()
                .map(|f| FrameJson {
                    boxes: f.boxes.clone(),
                    features: f.features.clone(),
                    actions: f.actions.iter().map(|a| a.map_or(-1, |v| v as i64)).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &json).map_err(to_io)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_dataset(dataset, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(&tmp, source),
        other => other,
    })?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let task = TaskConfig::volleyball();
        let frame = FrameRecord {
            boxes: (0..12)
                .map(|i| {
                    let x = i as f64 / 16.0;
                    [x, 0.25, x + 0.03125, 0.5]
                })
                .collect(),
            features: (0..12).map(|i| vec![0.1 * i as f64, -1.5e-3]).collect(),
            actions: (0..12).map(|i| if i == 0 { None } else { Some(i % 9) }).collect(),
        };
        Dataset {
            task,
            feature_dim: 2,
            clips: vec![ClipRecord {
                clip_id: "7".into(),
                video_id: "3".into(),
                group_label: 6,
                frames: vec![frame.clone(), frame],
            }],
        }
    }

    fn text(d: &Dataset) -> String {
        let mut buf = Vec::new();
        write_dataset(d, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let d = sample();
        let first = text(&d);
        let loaded = read_dataset(first.as_bytes(), None, Strictness::Strict).unwrap();
        assert_eq!(loaded.dataset, d);
        assert_eq!(text(&loaded.dataset), first);
        assert!(first.lines().nth(1).unwrap().contains("\"group_label\":\"left pass\""));
    }

    #[test]
    fn empty_input_is_an_empty_dataset() {
        let loaded = read_dataset("".as_bytes(), None, Strictness::Strict).unwrap();
        assert!(loaded.dataset.is_empty());
    }

    #[test]
    fn strict_reports_line_and_lenient_skips() {
        let good = text(&sample());
        let bad_line = good.lines().nth(1).unwrap().replacen("0.25", "0.75", 1);
        let input = format!("{good}{bad_line}\nnot json\n");
        let err = read_dataset(input.as_bytes(), None, Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("actor 0"), "{err}");
        let loaded = read_dataset(input.as_bytes(), None, Strictness::Lenient).unwrap();
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.issues.iter().map(|i| i.line).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn duplicate_clip_is_rejected() {
        let good = text(&sample());
        let input = format!("{good}{}\n", good.lines().nth(1).unwrap());
        assert!(matches!(
            read_dataset(input.as_bytes(), None, Strictness::Strict),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn pixel_boxes_are_normalized() {
        let d = sample();
        let mut h = d.header();
        h.box_units = BoxUnits::Pixels;
        h.image_width = Some(1280.0);
        h.image_height = Some(720.0);
        let clip_line = text(&d).lines().nth(1).unwrap().replacen("[0.0,0.25,0.03125,0.5]", "[0.0,180.0,40.0,360.0]", 1);
        let input = format!("{}\n{clip_line}\n", serde_json::to_string(&h).unwrap());
        let loaded = read_dataset(input.as_bytes(), None, Strictness::Strict).unwrap();
        assert_eq!(loaded.dataset.clips[0].frames[0].boxes[0], [0.0, 0.25, 0.03125, 0.5]);
    }

    #[test]
    fn mismatched_task_is_rejected() {
        let input = text(&sample());
        assert!(matches!(
            read_dataset(input.as_bytes(), Some(&TaskConfig::cad()), Strictness::Strict),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}

//! Annotation diffs: ordered relabel and removal entries keyed by
//! `(video_id, clip_id)`, stored as CSV with canonical label strings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClipRecord;
use crate::error::{Error, Result};
use crate::labels::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffOp {
    Relabel,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub video_id: String,
    pub clip_id: String,
    pub op: DiffOp,
    pub old_label: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub new_label: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s = Option::<String>::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationDiff {
    pub entries: Vec<DiffEntry>,
}

impl AnnotationDiff {
    /// Structural checks: unique keys, relabels carry a different new label,
    /// removals carry none.
    pub fn validate(&self) -> Result<()> {
        let mut keys = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let row = i + 2;
            if !keys.insert((e.video_id.as_str(), e.clip_id.as_str())) {
                return Err(Error::Diff(format!(
                    "row {row}: duplicate entry for video {} clip {}",
                    e.video_id, e.clip_id
                )));
            }
            match (e.op, &e.new_label) {
                (DiffOp::Relabel, None) => {
                    return Err(Error::Diff(format!("row {row}: relabel without new_label")));
                }
                (DiffOp::Relabel, Some(new)) if *new == e.old_label => {
                    return Err(Error::Diff(format!("row {row}: relabel keeps label {new:?}")));
                }
                (DiffOp::Remove, Some(_)) => {
                    return Err(Error::Diff(format!("row {row}: remove must not carry new_label")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn relabels(&self) -> usize {
        self.entries.iter().filter(|e| e.op == DiffOp::Relabel).count()
    }

    pub fn removals(&self) -> usize {
        self.entries.iter().filter(|e| e.op == DiffOp::Remove).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["video_id", "clip_id", "op", "old_label", "new_label"])
            .map_err(|e| Error::Diff(e.to_string()))?;
        for e in &self.entries {
            let op = match e.op {
                DiffOp::Relabel => "relabel",
                DiffOp::Remove => "remove",
            };
            w.write_record([
                e.video_id.as_str(),
                e.clip_id.as_str(),
                op,
                e.old_label.as_str(),
                e.new_label.as_deref().unwrap_or(""),
            ])
            .map_err(|e| Error::Diff(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Diff(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Diff(e.to_string()))
    }
}

pub fn parse_diff(reader: impl Read) -> Result<AnnotationDiff> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(|e| Error::Diff(e.to_string()))?.clone();
    let expected = ["video_id", "clip_id", "op", "old_label", "new_label"];
    if header.iter().ne(expected) {
        return Err(Error::Diff(format!(
            "header must be {}, got {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let entry: DiffEntry = rec.map_err(|e| Error::Diff(format!("row {}: {e}", i + 2)))?;
        entries.push(entry);
    }
    let diff = AnnotationDiff { entries };
    diff.validate()?;
    Ok(diff)
}

pub fn load_diff(path: &Path) -> Result<AnnotationDiff> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_diff(file)
}

/// Counts of applied changes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChangeReport {
    /// `(old label, new label) → count`.
    pub relabels: BTreeMap<(String, String), usize>,
    pub removals: usize,
}

impl ChangeReport {
    pub fn relabel_total(&self) -> usize {
        self.relabels.values().sum()
    }

    pub fn totals(&self) -> (usize, usize) {
        (self.relabel_total(), self.removals)
    }
}

impl std::fmt::Display for ChangeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = self.relabels.keys().map(|(o, _)| o.len()).max().unwrap_or(0);
        for ((old, new), n) in &self.relabels {
            writeln!(f, "{old:<width$} -> {new}: {n}")?;
        }
        writeln!(f, "relabeled: {}", self.relabel_total())?;
        write!(f, "removed:   {}", self.removals)
    }
}

/// Applies every entry or none. Entries are checked against the clips
/// before anything changes, so a failing diff leaves no partial edit.
pub fn apply_diff(
    clips: &[ClipRecord],
    diff: &AnnotationDiff,
    task: &TaskConfig,
) -> Result<(Vec<ClipRecord>, ChangeReport)> {
    diff.validate()?;
    let index: HashMap<(&str, &str), usize> = clips
        .iter()
        .enumerate()
        .map(|(i, c)| ((c.video_id.as_str(), c.clip_id.as_str()), i))
        .collect();

    let mut new_labels = vec![None; clips.len()];
    let mut removed = vec![false; clips.len()];
    let mut report = ChangeReport::default();
    for e in &diff.entries {
        let old = task
            .group_id(&e.old_label)
            .map_err(|_| Error::Diff(format!("unknown label {:?}", e.old_label)))?;
        let target = index.get(&(e.video_id.as_str(), e.clip_id.as_str())).copied();
        let Some(i) = target else {
            return Err(match e.op {
                DiffOp::Relabel => Error::Diff(format!("unknown clip {} in video {}", e.clip_id, e.video_id)),
                DiffOp::Remove => Error::Stale(format!(
                    "clip {} in video {} is already absent",
                    e.clip_id, e.video_id
                )),
            });
        };
        if clips[i].group_label != old {
            return Err(Error::Stale(format!(
                "clip {} in video {} is labeled {:?}, diff expects {:?}",
                e.clip_id,
                e.video_id,
                task.group_name(clips[i].group_label)?,
                e.old_label
            )));
        }
        match e.op {
            DiffOp::Relabel => {
                let new_name = e.new_label.as_deref().unwrap_or_default();
                let new = task
                    .group_id(new_name)
                    .map_err(|_| Error::Diff(format!("unknown label {new_name:?}")))?;
                new_labels[i] = Some(new);
                *report
                    .relabels
                    .entry((e.old_label.clone(), new_name.to_string()))
                    .or_default() += 1;
            }
            DiffOp::Remove => {
                removed[i] = true;
                report.removals += 1;
            }
        }
    }

    let out = clips
        .iter()
        .zip(new_labels)
        .zip(removed)
        .filter(|(_, gone)| !gone)
        .map(|((clip, label), _)| {
            let mut clip = clip.clone();
            if let Some(l) = label {
                clip.group_label = l;
            }
            clip
        })
        .collect();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameRecord;

    fn clips(task: &TaskConfig) -> Vec<ClipRecord> {
        let frame = FrameRecord {
            boxes: vec![[0.1, 0.1, 0.2, 0.2], [0.6, 0.1, 0.7, 0.2]],
            features: vec![vec![0.0], vec![1.0]],
            actions: vec![None, None],
        };
        ["left pass", "right set", "right spike", "left set"]
            .iter()
            .enumerate()
            .map(|(i, l)| ClipRecord {
                clip_id: i.to_string(),
                video_id: "9".into(),
                group_label: task.group_id(l).unwrap(),
                frames: vec![frame.clone()],
            })
            .collect()
    }

    const DIFF: &str = "video_id,clip_id,op,old_label,new_label\n\
        9,0,relabel,left pass,left spike\n\
        9,1,remove,right set,\n\
        9,2,relabel,right spike,right pass\n";

    #[test]
    fn applies_counts_and_guards() {
        let task = TaskConfig::volleyball();
        let data = clips(&task);
        let diff = parse_diff(DIFF.as_bytes()).unwrap();
        let (after, report) = apply_diff(&data, &diff, &task).unwrap();
        assert_eq!(after.len(), 3);
        assert_eq!(report.totals(), (2, 1));
        assert_eq!(after[0].group_label, task.group_id("left spike").unwrap());
        assert!(matches!(apply_diff(&after, &diff, &task), Err(Error::Stale(_))));
    }

    #[test]
    fn empty_diff_is_identity() {
        let task = TaskConfig::volleyball();
        let data = clips(&task);
        let (after, report) = apply_diff(&data, &AnnotationDiff::default(), &task).unwrap();
        assert_eq!(after, data);
        assert_eq!(report.totals(), (0, 0));
    }

    #[test]
    fn unknown_clip_is_a_diff_error() {
        let task = TaskConfig::volleyball();
        let diff = parse_diff("video_id,clip_id,op,old_label,new_label\n9,77,relabel,left pass,left set\n".as_bytes()).unwrap();
        assert!(matches!(apply_diff(&clips(&task), &diff, &task), Err(Error::Diff(_))));
    }

    #[test]
    fn malformed_diffs_are_rejected() {
        let dup = "video_id,clip_id,op,old_label,new_label\n9,0,remove,left pass,\n9,0,remove,left pass,\n";
        assert!(parse_diff(dup.as_bytes()).is_err());
        let same = "video_id,clip_id,op,old_label,new_label\n9,0,relabel,left pass,left pass\n";
        assert!(parse_diff(same.as_bytes()).is_err());
        let header = "video,clip,op,old,new\n";
        assert!(parse_diff(header.as_bytes()).is_err());
        let op = "video_id,clip_id,op,old_label,new_label\n9,0,merge,left pass,\n";
        assert!(parse_diff(op.as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let diff = parse_diff(DIFF.as_bytes()).unwrap();
        assert_eq!(diff.to_csv().unwrap(), DIFF);
        assert_eq!(parse_diff(diff.to_csv().unwrap().as_bytes()).unwrap(), diff);
    }
}

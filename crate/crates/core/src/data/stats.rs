//! Group-label distribution tables.

use serde::Serialize;

use super::ClipRecord;
use crate::labels::TaskConfig;

/// Clip counts per group label, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label).map(|i| self.counts[i])
    }
}

pub fn label_stats(clips: &[ClipRecord], task: &TaskConfig) -> LabelCounts {
    let mut counts = vec![0; task.num_groups()];
    for clip in clips {
        if let Some(c) = counts.get_mut(clip.group_label) {
            *c += 1;
        }
    }
    LabelCounts {
        labels: task.group_labels.clone(),
        counts,
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Aligned text table; a second column is added when `after` is given.
/// Both sides must share the label vocabulary.
pub fn format_stats_table(before: &LabelCounts, after: Option<&LabelCounts>) -> String {
    let name_w = before
        .labels
        .iter()
        .map(|l| l.len())
        .chain(["Group Activity Class".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let row = |out: &mut String, name: &str, b: &str, a: Option<&str>| {
        out.push_str(&format!("{name:<name_w$}  {b:>8}"));
        if let Some(a) = a {
            out.push_str(&format!("  {a:>8}"));
        }
        out.push('\n');
    };
    row(&mut out, "Group Activity Class", "Before", after.map(|_| "After"));
    for (i, label) in before.labels.iter().enumerate() {
        let a = after.map(|a| a.counts[i].to_string());
        row(&mut out, &capitalize(label), &before.counts[i].to_string(), a.as_deref());
    }
    let total_after = after.map(|a| a.total().to_string());
    row(&mut out, "Total", &before.total().to_string(), total_after.as_deref());
    out
}

pub fn format_stats_json(before: &LabelCounts, after: Option<&LabelCounts>) -> serde_json::Value {
    let column = |c: &LabelCounts| {
        let mut map = serde_json::Map::new();
        for (l, n) in c.labels.iter().zip(&c.counts) {
            map.insert(l.clone(), (*n).into());
        }
        serde_json::json!({ "counts": map, "total": c.total() })
    };
    match after {
        Some(a) => serde_json::json!({ "before": column(before), "after": column(a) }),
        None => column(before),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameRecord;

    fn counts(values: &[usize]) -> LabelCounts {
        LabelCounts {
            labels: TaskConfig::volleyball().group_labels,
            counts: values.to_vec(),
        }
    }

    #[test]
    fn counts_by_label() {
        let task = TaskConfig::volleyball();
        let frame = FrameRecord {
            boxes: vec![[0.1, 0.1, 0.2, 0.2]],
            features: vec![vec![0.0]],
            actions: vec![None],
        };
        let clip = |id: &str| ClipRecord {
            clip_id: id.into(),
            video_id: "0".into(),
            group_label: task.group_id("left pass").unwrap(),
            frames: vec![frame.clone()],
        };
        let s = label_stats(&[clip("a"), clip("b")], &task);
        assert_eq!(s.get("left pass"), Some(2));
        assert_eq!(s.total(), 2);
        assert_eq!(s.counts.iter().filter(|&&c| c == 0).count(), 7);
    }

    #[test]
    fn table_has_both_columns_in_vocabulary_order() {
        let before = counts(&[644, 623, 801, 295, 633, 642, 826, 367]);
        let after = counts(&[596, 640, 830, 297, 605, 654, 831, 368]);
        let table = format_stats_table(&before, Some(&after));
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 10);
        assert!(lines[0].starts_with("Group Activity Class"));
        assert!(lines[3].starts_with("Right pass") && lines[3].ends_with("801       830"));
        assert!(lines[9].ends_with("4821"));
        let json = format_stats_json(&before, Some(&after));
        assert_eq!(json["after"]["counts"]["right pass"], 830);
        assert_eq!(json["after"]["total"], 4821);
    }
}

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{ClipRecord, Dataset};
use crate::error::{Error, Result};
use crate::model::{argmax, predict_clip, ClipPrediction, GateValues, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: usize,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class has no clips.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub clips: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub side_accuracy: Option<f64>,
    pub team_accuracy: Option<f64>,
    /// Over every labeled actor of every frame.
    pub individual_accuracy: Option<f64>,
    /// Share of clips whose group decision agrees with the side and team
    /// decisions.
    pub consistency: Option<f64>,
    pub gates: GateValues,
}

pub(crate) fn accuracy_on(clips: &[ClipRecord], params: &ModelParams) -> Result<f64> {
    let hits = clips
        .iter()
        .map(|c| predict_clip(params, c).map(|p| usize::from(p.group == c.group_label)))
        .sum::<Result<usize>>()?;
    Ok(hits as f64 / clips.len() as f64)
}

fn ratio(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn aggregate(dataset: &Dataset, params: &ModelParams, preds: &[ClipPrediction]) -> Result<EvalReport> {
    let task = &params.task;
    let k = task.num_groups();
    let mut confusion = vec![vec![0usize; k]; k];
    let (mut side_hits, mut team_hits, mut consistent, mut aux_total) = (0, 0, 0, 0);
    let (mut ind_hits, mut ind_total) = (0, 0);
    for (clip, pred) in dataset.clips.iter().zip(preds) {
        confusion[clip.group_label][pred.group] += 1;
        if let (Some(sp), Some(tp)) = (&pred.side_probs, &pred.team_probs) {
            let (s, t) = task.decompose(clip.group_label)?;
            let (ps, pt) = (argmax(sp), argmax(tp));
            side_hits += usize::from(ps == s);
            team_hits += usize::from(pt == t);
            consistent += usize::from(task.decompose(pred.group)? == (ps, pt));
            aux_total += 1;
        }
        for (frame, predicted) in clip.frames.iter().zip(&pred.individual) {
            for (truth, guess) in frame.actions.iter().zip(predicted) {
                if let Some(t) = truth {
                    ind_hits += usize::from(t == guess);
                    ind_total += 1;
                }
            }
        }
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = (0..k)
        .map(|c| {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            ClassMetrics {
                label: task.group_labels[c].clone(),
                support,
                precision: ratio(confusion[c][c], predicted),
                recall: ratio(confusion[c][c], support),
            }
        })
        .collect();
    Ok(EvalReport {
        clips: dataset.len(),
        accuracy: correct as f64 / dataset.len() as f64,
        confusion,
        per_class,
        side_accuracy: ratio(side_hits, aux_total),
        team_accuracy: ratio(team_hits, aux_total),
        individual_accuracy: ratio(ind_hits, ind_total),
        consistency: ratio(consistent, aux_total),
        gates: params.gate_values(),
    })
}

fn check(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Validation {
            clip: "-".into(),
            location: String::new(),
            message: "cannot evaluate an empty dataset".into(),
        });
    }
    Ok(())
}

/// Clip-level metrics from frame-averaged decisions.
pub fn evaluate(dataset: &Dataset, params: &ModelParams) -> Result<EvalReport> {
    check(dataset)?;
    let preds = dataset
        .clips
        .iter()
        .map(|c| predict_clip(params, c))
        .collect::<Result<Vec<_>>>()?;
    aggregate(dataset, params, &preds)
}

/// As [`evaluate`], with clips predicted concurrently. Predictions are
/// reduced in dataset order, so the report equals the serial one.
pub fn evaluate_parallel(dataset: &Dataset, params: &ModelParams) -> Result<EvalReport> {
    check(dataset)?;
    let preds = dataset
        .clips
        .par_iter()
        .map(|c| predict_clip(params, c))
        .collect::<Result<Vec<_>>>()?;
    aggregate(dataset, params, &preds)
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "clips: {}", self.clips)?;
        writeln!(f, "group accuracy: {:.4}", self.accuracy)?;
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        if self.side_accuracy.is_some() {
            writeln!(f, "side accuracy: {}", opt(self.side_accuracy))?;
            writeln!(f, "team accuracy: {}", opt(self.team_accuracy))?;
            writeln!(f, "group/side/team agreement: {}", opt(self.consistency))?;
        }
        writeln!(f, "individual accuracy: {}", opt(self.individual_accuracy))?;
        let g = self.gates;
        writeln!(f, "gates: group {} side {} team {}", opt(g.group), opt(g.side), opt(g.team))?;
        let w = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<w$}  {:>7}  {:>9}  {:>6}", "class", "support", "precision", "recall")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<w$}  {:>7}  {:>9}  {:>6}",
                c.label,
                c.support,
                opt(c.precision),
                opt(c.recall)
            )?;
        }
        writeln!(f, "confusion (rows: truth, columns: prediction):")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
            writeln!(f, "{}", cells.join(""))?;
        }
        Ok(())
    }
}

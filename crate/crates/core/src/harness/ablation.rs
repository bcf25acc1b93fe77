use serde::Serialize;

use super::eval::evaluate;
use super::train::{build_model, train, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Test accuracy per seed.
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Trains every variant once per seed on `train_set` and scores it on
/// `test_set`.
pub fn run_ablations(
    train_set: &Dataset,
    test_set: &Dataset,
    model: &ModelConfig,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablations need at least one variant and one seed".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig { seed, variant, ..*base };
            let params = build_model(model, &train_set.task, &cfg)?;
            let outcome = train(train_set, params, &cfg)?;
            let report = evaluate(test_set, &outcome.model)?;
            log::info!("ablation {variant} seed {seed}: accuracy {:.4}", report.accuracy);
            accuracies.push(report.accuracy);
        }
        rows.push(AblationRow {
            variant,
            seeds: seeds.to_vec(),
            accuracies,
        });
    }
    Ok(AblationTable { rows })
}

/// Two-column accuracy tables: head-count rows under a "Heads" header,
/// every other variant under "Ablation".
pub fn format_ablation_table(table: &AblationTable) -> String {
    let (heads, others): (Vec<_>, Vec<_>) = table
        .rows
        .iter()
        .partition(|r| matches!(r.variant, Variant::Heads(_)));
    let mut out = String::new();
    for (title, rows) in [("Ablation", others), ("Heads", heads)] {
        if rows.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let labels: Vec<String> = rows.iter().map(|r| r.variant.table_label()).collect();
        let w = labels.iter().map(String::len).chain([title.len()]).max().unwrap_or(0);
        out.push_str(&format!("{title:<w$}  Accuracy\n"));
        for (label, row) in labels.iter().zip(&rows) {
            out.push_str(&format!("{label:<w$}  {:>8.1}\n", 100.0 * row.mean()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let row = |variant, acc: f64| AblationRow {
            variant,
            seeds: vec![0, 1],
            accuracies: vec![acc, acc],
        };
        let table = AblationTable {
            rows: vec![
                row(Variant::OnlyCoordinate, 0.735),
                row(Variant::Full, 0.952),
                row(Variant::Heads(1), 0.948),
                row(Variant::Heads(2), 0.952),
                row(Variant::Heads(4), 0.947),
                row(Variant::Heads(8), 0.948),
            ],
        };
        let text = format_ablation_table(&table);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Ablation") && lines[0].ends_with("Accuracy"));
        assert!(lines[1].starts_with("only coordinate module") && lines[1].ends_with("73.5"));
        assert!(lines[2].starts_with("DECOMPL") && lines[2].ends_with("95.2"));
        assert!(lines[4].starts_with("Heads"));
        assert_eq!(lines.len(), 9);
        assert!((table.get(Variant::Full).unwrap().mean() - 0.952).abs() < 1e-12);
    }
}

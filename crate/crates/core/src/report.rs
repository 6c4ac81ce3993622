//! Side-by-side parameter budgets across model configurations.
//!
//! The first entry is the reference model; every later entry gets a savings
//! percentage saying how much smaller the reference is.

use std::fmt;

use serde::Serialize;

use crate::model::{count_parameters, ModelConfig, ParamBudget};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub label: String,
    pub vocab_size: usize,
    pub budget: ParamBudget,
    /// 100 * (1 - reference_total / this_total); None on the reference row
    /// itself. Negative when the reference is larger.
    pub reference_savings_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsReport {
    pub entries: Vec<ReportEntry>,
}

impl ParamsReport {
    /// Budgets for `(label, config, vocab_size)` rows, first row as
    /// reference.
    pub fn compare(rows: &[(String, ModelConfig, usize)]) -> ParamsReport {
        let budgets: Vec<ParamBudget> =
            rows.iter().map(|(_, config, vocab)| count_parameters(config, *vocab)).collect();
        let reference = budgets.first().map(|b| b.total);
        let entries = rows
            .iter()
            .zip(budgets)
            .enumerate()
            .map(|(i, ((label, _, vocab_size), budget))| ReportEntry {
                label: label.clone(),
                vocab_size: *vocab_size,
                reference_savings_percent: (i > 0).then(|| {
                    100.0 * (1.0 - reference.expect("nonempty") as f64 / budget.total as f64)
                }),
                budget,
            })
            .collect();
        ParamsReport { entries }
    }

    pub fn totals(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.budget.total).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

impl fmt::Display for ParamsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label_width = self
            .entries
            .iter()
            .map(|e| e.label.len())
            .chain(["model".len()])
            .max()
            .unwrap_or(5);
        writeln!(
            f,
            "{:<label_width$}  {:>10}  {:>12}  {:>10}",
            "model", "vocab", "parameters", "savings"
        )?;
        for entry in &self.entries {
            let savings = match entry.reference_savings_percent {
                None => "reference".to_string(),
                Some(p) => format!("{p:.2}%"),
            };
            writeln!(
                f,
                "{:<label_width$}  {:>10}  {:>12}  {:>10}",
                entry.label, entry.vocab_size, entry.budget.total, savings
            )?;
        }
        for entry in &self.entries {
            writeln!(f)?;
            writeln!(f, "{} (vocab {})", entry.label, entry.vocab_size)?;
            let name_width =
                entry.budget.items.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(5);
            for (name, count) in &entry.budget.items {
                writeln!(f, "  {name:<name_width$}  {count:>12}")?;
            }
            writeln!(f, "  {:<name_width$}  {:>12}", "total", entry.budget.total)?;
        }
        Ok(())
    }
}

/// The standard three-granularity comparison at the given vocabulary sizes.
pub fn standard_report(
    radical_vocab: usize,
    character_vocab: usize,
    word_vocabs: &[(String, usize)],
) -> ParamsReport {
    let mut rows = vec![
        ("radical".to_string(), ModelConfig::radical_default(), radical_vocab),
        ("character".to_string(), ModelConfig::character_default(), character_vocab),
    ];
    for (label, vocab) in word_vocabs {
        rows.push((format!("word-{label}"), ModelConfig::word_default(), *vocab));
    }
    ParamsReport::compare(&rows)
}

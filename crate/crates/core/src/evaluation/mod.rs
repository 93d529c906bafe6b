//! ROC-AUC, subgroup reports, and the lab-test label-noise calculator.

mod auc;
mod noise;

pub use auc::{roc_auc, roc_curve};
pub use noise::{label_noise_table, NoiseTable};

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::IndividualPrediction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("AUC is undefined with {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score/label length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("scores contain NaN")]
    NanScore,
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelColumn {
    Cough,
    Context,
    Ensemble,
}

impl ModelColumn {
    pub const ALL: [ModelColumn; 3] = [ModelColumn::Cough, ModelColumn::Context, ModelColumn::Ensemble];

    pub fn title(self) -> &'static str {
        match self {
            ModelColumn::Cough => "Cough-based",
            ModelColumn::Context => "Context-based",
            ModelColumn::Ensemble => "Ensembling",
        }
    }

    fn pick(self, p: &IndividualPrediction) -> Option<f64> {
        match self {
            ModelColumn::Cough => p.p_cough,
            ModelColumn::Context => p.p_context,
            ModelColumn::Ensemble => p.p_ensemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    All,
    Symptomatic,
    Asymptomatic,
}

impl Population {
    pub const ALL: [Population; 3] = [Population::All, Population::Symptomatic, Population::Asymptomatic];

    fn admits(self, p: &IndividualPrediction) -> bool {
        match self {
            Population::All => true,
            Population::Symptomatic => p.symptomatic,
            Population::Asymptomatic => !p.symptomatic,
        }
    }
}

/// One (model, population) entry. `auc` is `None` when the metric is
/// undefined (one class only, or the model was not run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub model: ModelColumn,
    pub population: Population,
    pub auc: Option<f64>,
    pub n: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub name: String,
    pub set_size: usize,
    pub positives: usize,
    pub symptomatic: usize,
    pub asymptomatic: usize,
    /// Individuals that could not be scored.
    pub excluded: usize,
    pub cells: Vec<ReportCell>,
}

impl EvaluationReport {
    pub fn auc(&self, model: ModelColumn, population: Population) -> Option<f64> {
        self.cell(model, population).and_then(|c| c.auc)
    }

    pub fn cell(&self, model: ModelColumn, population: Population) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.model == model && c.population == population)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table with rows per model and `All` / `S / A` columns.
    pub fn render_table(reports: &[EvaluationReport]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}"));
        let mut header = vec!["Model".to_string()];
        header.extend(reports.iter().map(|r| r.name.clone()));
        header.extend(reports.iter().map(|r| format!("{} - S/A", r.name)));
        let mut rows = vec![header];
        for m in ModelColumn::ALL {
            let mut row = vec![m.title().to_string()];
            row.extend(reports.iter().map(|r| fmt(r.auc(m, Population::All))));
            row.extend(reports.iter().map(|r| {
                format!(
                    "{} / {}",
                    fmt(r.auc(m, Population::Symptomatic)),
                    fmt(r.auc(m, Population::Asymptomatic))
                )
            }));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        for r in reports {
            let _ = writeln!(
                out,
                "{}: n={} positives={} symptomatic={} asymptomatic={} excluded={}",
                r.name, r.set_size, r.positives, r.symptomatic, r.asymptomatic, r.excluded
            );
        }
        out
    }
}

/// AUC per model and population over the successfully scored predictions.
pub fn evaluate(name: &str, predictions: &[IndividualPrediction]) -> EvaluationReport {
    let mut seen = HashSet::new();
    let scored: Vec<&IndividualPrediction> = predictions
        .iter()
        .filter(|p| p.error.is_none() && seen.insert(p.individual_id.as_str()))
        .collect();
    let positive = |p: &IndividualPrediction| p.label.as_class() == 1;
    let mut cells = Vec::new();
    for model in ModelColumn::ALL {
        for population in Population::ALL {
            let rows: Vec<(f64, bool)> = scored
                .iter()
                .filter(|p| population.admits(p))
                .filter_map(|p| model.pick(p).map(|s| (s, positive(p))))
                .collect();
            let (scores, labels): (Vec<f64>, Vec<bool>) = rows.iter().copied().unzip();
            cells.push(ReportCell {
                model,
                population,
                auc: roc_auc(&scores, &labels).ok(),
                n: rows.len(),
                positives: labels.iter().filter(|&&l| l).count(),
            });
        }
    }
    EvaluationReport {
        name: name.to_string(),
        set_size: scored.len(),
        positives: scored.iter().filter(|p| positive(p)).count(),
        symptomatic: scored.iter().filter(|p| p.symptomatic).count(),
        asymptomatic: scored.iter().filter(|p| !p.symptomatic).count(),
        excluded: predictions.len() - scored.len(),
        cells,
    }
}

/// `fpr,tpr,threshold` CSV of the ROC curve for one model column.
pub fn roc_csv(predictions: &[IndividualPrediction], model: ModelColumn) -> Result<String, EvalError> {
    let (scores, labels): (Vec<f64>, Vec<bool>) = predictions
        .iter()
        .filter(|p| p.error.is_none())
        .filter_map(|p| model.pick(p).map(|s| (s, p.label.as_class() == 1)))
        .unzip();
    let mut out = String::from("fpr,tpr,threshold\n");
    for (fpr, tpr, thr) in roc_curve(&scores, &labels)? {
        let _ = writeln!(out, "{fpr},{tpr},{thr}");
    }
    Ok(out)
}

//! Aggregation of externally produced category-detector scores.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub entity: String,
    pub original: f64,
    pub general: f64,
    pub specific: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl DetectorScoreTable {
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self, EvalError> {
        for r in &rows {
            for (name, v) in [
                ("original", r.original),
                ("general", r.general),
                ("specific", r.specific),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(EvalError::InvalidInput(format!(
                        "{}: {name} score {v} outside [0, 1]",
                        r.entity
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    /// CSV with header `entity,original,general,specific`.
    pub fn from_csv(reader: impl Read) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<ScoreRow>, _>>()
            .map_err(|e| EvalError::InvalidInput(e.to_string()))?;
        Self::new(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSuppression {
    pub entity: String,
    pub suppressed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean_original: f64,
    pub mean_general: f64,
    pub mean_specific: f64,
    /// `1 - mean_specific / mean_original`, when the original mean is positive.
    pub specific_reduction: Option<f64>,
    pub rows: Vec<RowSuppression>,
}

/// Column means; a row counts as suppressed when its specific score is 0.
pub fn aggregate_detector_scores(table: &DetectorScoreTable) -> Result<ScoreSummary, EvalError> {
    if table.rows.is_empty() {
        return Err(EvalError::InvalidInput("score table is empty".into()));
    }
    let n = table.rows.len() as f64;
    let mean = |f: fn(&ScoreRow) -> f64| table.rows.iter().map(f).sum::<f64>() / n;
    let mean_original = mean(|r| r.original);
    let mean_specific = mean(|r| r.specific);
    Ok(ScoreSummary {
        mean_original,
        mean_general: mean(|r| r.general),
        mean_specific,
        specific_reduction: (mean_original > 0.0).then(|| 1.0 - mean_specific / mean_original),
        rows: table
            .rows
            .iter()
            .map(|r| RowSuppression {
                entity: r.entity.clone(),
                suppressed: r.specific == 0.0,
            })
            .collect(),
    })
}

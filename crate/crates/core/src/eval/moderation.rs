//! Human-moderation recognizability rates.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Original,
    Edited,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Original => "original",
            Condition::Edited => "edited",
        })
    }
}

/// The five categories annotators were asked about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyCategory {
    CopyrightedCharacters,
    DrugsAlcohol,
    WeaponsViolence,
    PublicFigures,
    Nudity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    Yes,
    No,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub image_id: String,
    pub condition: Condition,
    pub category: StudyCategory,
    pub response: Response,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub label_text: Option<String>,
    #[serde(default, deserialize_with = "flexible_bool")]
    pub generic_flag: bool,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let v: Option<String> = Option::deserialize(d)?;
    Ok(v.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()))
}

fn flexible_bool<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let v: Option<String> = Option::deserialize(d)?;
    match v
        .as_deref()
        .map(str::trim)
        .map(str::to_lowercase)
        .as_deref()
    {
        None | Some("") | Some("false") | Some("0") | Some("no") => Ok(false),
        Some("true") | Some("1") | Some("yes") => Ok(true),
        Some(other) => Err(serde::de::Error::custom(format!(
            "bad generic_flag `{other}`"
        ))),
    }
}

impl JudgmentRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.response != Response::Yes && self.label_text.is_some() {
            return Err(EvalError::InvalidInput(format!(
                "{}: label_text is only allowed on Yes responses",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Whether the judgment counts as a recognition.
    pub fn recognized(&self, exclude_generic: bool) -> bool {
        self.response == Response::Yes && !(exclude_generic && self.generic_flag)
    }
}

/// Reads the judgment CSV (`image_id,condition,category,response,label_text,generic_flag`).
pub fn read_judgments(reader: impl Read) -> Result<Vec<JudgmentRecord>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: JudgmentRecord = rec.map_err(|e| EvalError::InvalidInput(e.to_string()))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModerationReport {
    pub recognizable_pct: f64,
    pub suppression_pct: f64,
    pub n: usize,
    pub recognized: usize,
}

/// Recognizable and suppression percentages for one condition. Unsure counts
/// as a non-detection; with `exclude_generic`, generic Yes labels do too.
pub fn moderation_rates(
    records: &[JudgmentRecord],
    condition: Condition,
    exclude_generic: bool,
) -> Result<ModerationReport, EvalError> {
    let selected: Vec<&JudgmentRecord> = records
        .iter()
        .filter(|r| r.condition == condition)
        .collect();
    if selected.is_empty() {
        return Err(EvalError::NoJudgments);
    }
    let recognized = selected
        .iter()
        .filter(|r| r.recognized(exclude_generic))
        .count();
    let n = selected.len();
    let recognizable_pct = 100.0 * recognized as f64 / n as f64;
    Ok(ModerationReport {
        recognizable_pct,
        suppression_pct: 100.0 - recognizable_pct,
        n,
        recognized,
    })
}

//! Cohort data model, JSONL manifest ingestion, context-feature encoding and
//! the random / time-based / site-based split strategies.

mod encoder;
mod split;

pub use encoder::{encode_context, fit_context_encoder, CategoricalTable, ContinuousStat, EncoderState, FeatureVector};
pub use split::{
    auto_time_cutoffs, greedy_site_selection, split_random, split_site, split_time, SplitAssignment,
    SplitStrategy, Subset,
};

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("cannot read manifest {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: duplicate individual_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown value {value:?} for {field}")]
    UnknownEnum {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: missing required field {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: invalid {field}: {message}")]
    Invalid {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("split error: {0}")]
    Split(String),
    #[error("encoder error: {0}")]
    Encoder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_class(self) -> usize {
        match self {
            Label::Positive => 1,
            Label::Negative => 0,
        }
    }

    pub fn from_class(class: usize) -> Self {
        if class == 1 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TravelHistory {
    No,
    InterDistrict,
    InterState,
    InterCountry,
}

impl TravelHistory {
    pub const ALL: [TravelHistory; 4] = [
        TravelHistory::No,
        TravelHistory::InterDistrict,
        TravelHistory::InterState,
        TravelHistory::InterCountry,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TravelHistory::No => "No",
            TravelHistory::InterDistrict => "InterDistrict",
            TravelHistory::InterState => "InterState",
            TravelHistory::InterCountry => "InterCountry",
        }
    }

    /// Accepts case, hyphen, underscore and space variants ("inter-state",
    /// "Inter State", "INTER_STATE", "interstate").
    pub fn parse(raw: &str) -> Option<Self> {
        let key: String = raw
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "no" | "none" => Some(TravelHistory::No),
            "interdistrict" => Some(TravelHistory::InterDistrict),
            "interstate" => Some(TravelHistory::InterState),
            "intercountry" | "international" => Some(TravelHistory::InterCountry),
            _ => None,
        }
    }
}

impl fmt::Display for TravelHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TravelHistory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

fn ser_yes_no<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(true) => s.serialize_str("yes"),
        Some(false) => s.serialize_str("no"),
        None => s.serialize_none(),
    }
}

/// Context features collected alongside the cough recordings. `None` marks a
/// missing answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContextRecord {
    pub age: Option<f64>,
    pub temperature: Option<f64>,
    pub days_cough: Option<f64>,
    pub days_sob: Option<f64>,
    pub days_fever: Option<f64>,
    #[serde(serialize_with = "ser_yes_no")]
    pub has_cough: Option<bool>,
    #[serde(serialize_with = "ser_yes_no")]
    pub has_sob: Option<bool>,
    #[serde(serialize_with = "ser_yes_no")]
    pub has_fever: Option<bool>,
    #[serde(serialize_with = "ser_yes_no")]
    pub contact_confirmed: Option<bool>,
    #[serde(serialize_with = "ser_yes_no")]
    pub is_health_worker: Option<bool>,
    pub travel_history: Option<TravelHistory>,
}

pub const CONTINUOUS_FIELDS: [&str; 5] = ["age", "temperature", "days_cough", "days_sob", "days_fever"];
pub const CATEGORICAL_FIELDS: [&str; 6] = [
    "has_cough",
    "has_sob",
    "has_fever",
    "contact_confirmed",
    "is_health_worker",
    "travel_history",
];

impl ContextRecord {
    pub fn continuous(&self) -> [Option<f64>; 5] {
        [self.age, self.temperature, self.days_cough, self.days_sob, self.days_fever]
    }

    /// Categorical answers as their canonical string labels.
    pub fn categorical(&self) -> [Option<&'static str>; 6] {
        let yn = |v: Option<bool>| v.map(|b| if b { "yes" } else { "no" });
        [
            yn(self.has_cough),
            yn(self.has_sob),
            yn(self.has_fever),
            yn(self.contact_confirmed),
            yn(self.is_health_worker),
            self.travel_history.map(TravelHistory::as_str),
        ]
    }

    /// Parses the manifest's `context` object. `line` is only used for diagnostics.
    pub fn from_json(value: &Value, line: usize) -> Result<Self, CohortError> {
        let obj = value.as_object().ok_or(CohortError::Invalid {
            line,
            field: "context",
            message: "expected an object".into(),
        })?;
        let num = |field: &'static str| -> Result<Option<f64>, CohortError> {
            match obj.get(field) {
                None | Some(Value::Null) => Ok(None),
                Some(v) => {
                    let x = v.as_f64().ok_or_else(|| CohortError::Invalid {
                        line,
                        field,
                        message: format!("expected a number, got {v}"),
                    })?;
                    if !x.is_finite() || x < 0.0 {
                        return Err(CohortError::Invalid {
                            line,
                            field,
                            message: format!("must be a non-negative number, got {x}"),
                        });
                    }
                    Ok(Some(x))
                }
            }
        };
        let yes_no = |field: &'static str| -> Result<Option<bool>, CohortError> {
            match obj.get(field) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::Bool(b)) => Ok(Some(*b)),
                Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
                    "yes" | "y" | "true" => Ok(Some(true)),
                    "no" | "n" | "false" => Ok(Some(false)),
                    "" => Ok(None),
                    _ => Err(CohortError::UnknownEnum {
                        line,
                        field,
                        value: s.clone(),
                    }),
                },
                Some(other) => Err(CohortError::UnknownEnum {
                    line,
                    field,
                    value: other.to_string(),
                }),
            }
        };
        let travel_history = match obj.get("travel_history") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(TravelHistory::parse(s).ok_or_else(|| {
                CohortError::UnknownEnum {
                    line,
                    field: "travel_history",
                    value: s.clone(),
                }
            })?),
            Some(other) => {
                return Err(CohortError::UnknownEnum {
                    line,
                    field: "travel_history",
                    value: other.to_string(),
                })
            }
        };
        Ok(ContextRecord {
            age: num("age")?,
            temperature: num("temperature")?,
            days_cough: num("days_cough")?,
            days_sob: num("days_sob")?,
            days_fever: num("days_fever")?,
            has_cough: yes_no("has_cough")?,
            has_sob: yes_no("has_sob")?,
            has_fever: yes_no("has_fever")?,
            contact_confirmed: yes_no("contact_confirmed")?,
            is_health_worker: yes_no("is_health_worker")?,
            travel_history,
        })
    }
}

/// At least one of cough, fever or shortness of breath. Missing flags count as "no".
pub fn is_symptomatic(r: &ContextRecord) -> bool {
    r.has_cough.unwrap_or(false) || r.has_fever.unwrap_or(false) || r.has_sob.unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndividualRecord {
    pub individual_id: String,
    #[serde(rename = "samples")]
    pub cough_sample_paths: Vec<PathBuf>,
    pub label: Label,
    pub site_id: String,
    #[serde(rename = "date")]
    pub enrollment_date: NaiveDate,
    pub context: ContextRecord,
}

impl IndividualRecord {
    pub fn from_json_line(text: &str, line: usize) -> Result<Self, CohortError> {
        let v: Value = serde_json::from_str(text).map_err(|e| CohortError::Json {
            line,
            message: e.to_string(),
        })?;
        let obj = v.as_object().ok_or(CohortError::Json {
            line,
            message: "expected a JSON object".into(),
        })?;
        let string = |field: &'static str| -> Result<String, CohortError> {
            match obj.get(field) {
                None | Some(Value::Null) => Err(CohortError::MissingField { line, field }),
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(other) => Err(CohortError::Invalid {
                    line,
                    field,
                    message: format!("expected a non-empty string, got {other}"),
                }),
            }
        };
        let individual_id = string("individual_id")?;
        let label_raw = string("label")?;
        let label = match label_raw.trim().to_ascii_lowercase().as_str() {
            "positive" => Label::Positive,
            "negative" => Label::Negative,
            _ => {
                return Err(CohortError::UnknownEnum {
                    line,
                    field: "label",
                    value: label_raw,
                })
            }
        };
        let site_id = string("site_id")?;
        let date_raw = string("date")?;
        let enrollment_date =
            NaiveDate::parse_from_str(&date_raw, "%Y-%m-%d").map_err(|e| CohortError::Invalid {
                line,
                field: "date",
                message: format!("{date_raw:?}: {e}"),
            })?;
        let samples = match obj.get("samples") {
            None | Some(Value::Null) => return Err(CohortError::MissingField { line, field: "samples" }),
            Some(Value::Array(items)) => items
                .iter()
                .map(|s| {
                    s.as_str().map(PathBuf::from).ok_or_else(|| CohortError::Invalid {
                        line,
                        field: "samples",
                        message: format!("expected a path string, got {s}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
            Some(other) => {
                return Err(CohortError::Invalid {
                    line,
                    field: "samples",
                    message: format!("expected an array, got {other}"),
                })
            }
        };
        if !(1..=3).contains(&samples.len()) {
            return Err(CohortError::Invalid {
                line,
                field: "samples",
                message: format!("expected 1 to 3 recordings, got {}", samples.len()),
            });
        }
        let context = match obj.get("context") {
            None | Some(Value::Null) => ContextRecord::default(),
            Some(c) => ContextRecord::from_json(c, line)?,
        };
        Ok(IndividualRecord {
            individual_id,
            cough_sample_paths: samples,
            label,
            site_id,
            enrollment_date,
            context,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    pub records: Vec<IndividualRecord>,
    /// Directory that relative sample paths are resolved against.
    pub base_dir: PathBuf,
}

impl Cohort {
    pub fn new(records: Vec<IndividualRecord>, base_dir: impl Into<PathBuf>) -> Result<Self, CohortError> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.individual_id.as_str()) {
                return Err(CohortError::DuplicateId {
                    line: i + 1,
                    id: r.individual_id.clone(),
                });
            }
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&IndividualRecord> {
        self.records.iter().find(|r| r.individual_id == id)
    }

    pub fn resolve(&self, sample: &Path) -> PathBuf {
        if sample.is_absolute() {
            sample.to_path_buf()
        } else {
            self.base_dir.join(sample)
        }
    }

    pub fn sample_paths(&self, r: &IndividualRecord) -> Vec<PathBuf> {
        r.cough_sample_paths.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<(), CohortError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|source| CohortError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Parses a JSONL manifest; blank lines are skipped, line numbers are 1-based.
pub fn parse_manifest(text: &str, base_dir: impl Into<PathBuf>) -> Result<Cohort, CohortError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = IndividualRecord::from_json_line(line, line_no)?;
        if !seen.insert(rec.individual_id.clone()) {
            return Err(CohortError::DuplicateId {
                line: line_no,
                id: rec.individual_id,
            });
        }
        records.push(rec);
    }
    Ok(Cohort {
        records,
        base_dir: base_dir.into(),
    })
}

pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Cohort, CohortError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base)
}

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{CaseImage, MedicalCase, OptionLetter};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: duplicate case_id {case_id:?}")]
    DuplicateCaseId { line: usize, case_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Closed,
    Open,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Closed => "closed",
            Self::Open => "open",
        }
    }
}

/// One dataset line as stored on disk (JSON Lines).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    case_id: String,
    #[serde(default)]
    image_path: Option<PathBuf>,
    question: String,
    options: Vec<String>,
    gold: String,
    subset: Subset,
    #[serde(default)]
    field_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub case_id: String,
    /// Resolved against the dataset file's directory.
    pub image_path: Option<PathBuf>,
    pub question: String,
    pub options: Vec<String>,
    pub gold: OptionLetter,
    pub subset: Subset,
    pub field_hint: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CaseLoadError {
    #[error("cannot read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("image {path} is {size} bytes, above the {limit}-byte limit")]
    ImageTooLarge { path: PathBuf, size: u64, limit: u64 },
}

impl DatasetRecord {
    /// Builds the protocol case, reading the image if there is one.
    pub fn to_case(&self, max_image_bytes: u64) -> Result<MedicalCase, CaseLoadError> {
        let mut case = MedicalCase::new(self.case_id.clone(), self.question.clone(), self.options.iter().cloned())
            .with_gold(self.gold);
        case.field_hint = self.field_hint.clone();
        if let Some(path) = &self.image_path {
            let err = |e: std::io::Error| CaseLoadError::Image { path: path.clone(), reason: e.to_string() };
            let size = std::fs::metadata(path).map_err(err)?.len();
            if size > max_image_bytes {
                return Err(CaseLoadError::ImageTooLarge { path: path.clone(), size, limit: max_image_bytes });
            }
            let bytes = std::fs::read(path).map_err(err)?;
            case = case.with_image(CaseImage::new(media_type_for(path), bytes));
        }
        Ok(case)
    }
}

pub fn media_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// Reads a JSON Lines dataset. Blank lines are skipped; every other line
/// must be a complete, valid record.
pub fn ingest(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedRecord { line: line_no, reason };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let record = validate(raw, base).map_err(malformed)?;
        if !seen.insert(record.case_id.clone()) {
            return Err(DatasetError::DuplicateCaseId { line: line_no, case_id: record.case_id });
        }
        records.push(record);
    }
    Ok(records)
}

fn validate(raw: RawRecord, base: &Path) -> Result<DatasetRecord, String> {
    if raw.case_id.trim().is_empty() {
        return Err("case_id is empty".into());
    }
    if !(2..=26).contains(&raw.options.len()) {
        return Err(format!("expected 2-26 options, got {}", raw.options.len()));
    }
    if raw.options.iter().any(|o| o.trim().is_empty()) {
        return Err("an option is empty".into());
    }
    let gold: OptionLetter = raw.gold.parse().map_err(|e| format!("gold: {e}"))?;
    if gold.index() >= raw.options.len() {
        let last = OptionLetter::from_index(raw.options.len() - 1).map_or('?', OptionLetter::as_char);
        return Err(format!("gold letter {gold} outside options A-{last}"));
    }
    let image_path = match raw.image_path {
        Some(p) => {
            let resolved = if p.is_absolute() { p } else { base.join(p) };
            if !resolved.is_file() {
                return Err(format!("image {} is not a readable file", resolved.display()));
            }
            Some(resolved)
        }
        None => None,
    };
    let case = MedicalCase::new(raw.case_id.clone(), raw.question.clone(), raw.options.iter().cloned()).with_gold(gold);
    case.validate().map_err(|e| e.to_string())?;
    Ok(DatasetRecord {
        case_id: raw.case_id,
        image_path,
        question: raw.question,
        options: raw.options,
        gold,
        subset: raw.subset,
        field_hint: raw.field_hint,
    })
}

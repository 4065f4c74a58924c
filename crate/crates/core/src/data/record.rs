//! Reasoning-sample records: a strict JSON schema with typed validation.
//!
//! The schema is this project's own interchange format. Parsing validates
//! every field and names the offending field in errors; strict mode rejects
//! unknown fields while lenient mode collects them as warnings.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ReasoningType;
use crate::raster::{BinaryMask, ImageBuf};

pub const ALTITUDES_M: [u32; 3] = [30, 60, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Illumination {
    Day,
    Night,
}

impl Illumination {
    pub const ALL: [Illumination; 2] = [Illumination::Day, Illumination::Night];

    pub fn as_str(self) -> &'static str {
        match self {
            Illumination::Day => "day",
            Illumination::Night => "night",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Illumination::Day),
            "night" => Ok(Illumination::Night),
            other => Err(Error::input(format!(
                "illumination: expected one of day, night; got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Illumination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub reasoning_type: ReasoningType,
    pub question: String,
    pub cot: Vec<String>,
    pub answer: String,
    pub altitude_m: u32,
    pub illumination: Illumination,
}

/// Raw mirror with loose types so every constraint failure can name its
/// field instead of surfacing a serde enum error.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    image_path: String,
    mask_path: String,
    reasoning_type: String,
    question: String,
    #[serde(default)]
    cot: Vec<String>,
    answer: String,
    altitude_m: u32,
    illumination: String,
}

const KNOWN_FIELDS: [&str; 9] = [
    "id",
    "image_path",
    "mask_path",
    "reasoning_type",
    "question",
    "cot",
    "answer",
    "altitude_m",
    "illumination",
];

fn field_names(json_text: &str) -> Result<BTreeSet<String>> {
    let value: serde_json::Value = serde_json::from_str(json_text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::input("record must be a JSON object"))?;
    Ok(obj.keys().cloned().collect())
}

fn validate(raw: RawRecord) -> Result<ReasoningSample> {
    let reasoning_type = ReasoningType::parse(&raw.reasoning_type).map_err(|_| {
        Error::input(format!(
            "reasoning_type: expected one of spatial, attribute, scene; got {:?}",
            raw.reasoning_type
        ))
    })?;
    let illumination = Illumination::parse(&raw.illumination)?;
    if raw.question.trim().is_empty() {
        return Err(Error::input("question: must be non-empty"));
    }
    if raw.answer.trim().is_empty() {
        return Err(Error::input("answer: must be non-empty"));
    }
    if !ALTITUDES_M.contains(&raw.altitude_m) {
        return Err(Error::input(format!(
            "altitude_m: expected one of 30, 60, 100; got {}",
            raw.altitude_m
        )));
    }
    if raw.image_path.is_empty() {
        return Err(Error::input("image_path: must be non-empty"));
    }
    if raw.mask_path.is_empty() {
        return Err(Error::input("mask_path: must be non-empty"));
    }
    // records without an explicit id take the image file stem
    let id = match raw.id {
        Some(id) if !id.is_empty() => id,
        _ => Path::new(&raw.image_path)
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::input("id: absent and not derivable from image_path"))?,
    };
    Ok(ReasoningSample {
        id,
        image_path: raw.image_path,
        mask_path: raw.mask_path,
        reasoning_type,
        question: raw.question,
        cot: raw.cot,
        answer: raw.answer,
        altitude_m: raw.altitude_m,
        illumination,
    })
}

/// Strict parse: unknown fields are errors.
pub fn parse_record(json_text: &str) -> Result<ReasoningSample> {
    let present = field_names(json_text)?;
    for key in &present {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            return Err(Error::input(format!("unknown field {key:?} in record")));
        }
    }
    validate(serde_json::from_str(json_text)?)
}

/// Lenient parse: unknown fields are returned as warnings.
pub fn parse_record_lenient(json_text: &str) -> Result<(ReasoningSample, Vec<String>)> {
    let present = field_names(json_text)?;
    let warnings = present
        .iter()
        .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
        .map(|k| format!("ignoring unknown field {k:?}"))
        .collect();
    Ok((validate(serde_json::from_str(json_text)?)?, warnings))
}

impl ReasoningSample {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }

    /// Resolves paths against `root`, decodes both files, and enforces
    /// image/mask shape consistency.
    pub fn load(&self, root: &Path) -> Result<(ImageBuf, BinaryMask)> {
        let image_path = root.join(&self.image_path);
        if !image_path.is_file() {
            return Err(Error::input(format!(
                "image_path: {} does not resolve to a file",
                image_path.display()
            )));
        }
        let mask_path = root.join(&self.mask_path);
        if !mask_path.is_file() {
            return Err(Error::input(format!(
                "mask_path: {} does not resolve to a file",
                mask_path.display()
            )));
        }
        let image = ImageBuf::load_png(&image_path)?;
        let mask = crate::data::codec::decode_mask_png(&mask_path)?;
        if (image.height, image.width) != (mask.height, mask.width) {
            return Err(Error::input(format!(
                "sample {}: mask is {}x{} but image is {}x{}",
                self.id, mask.height, mask.width, image.height, image.width
            )));
        }
        Ok((image, mask))
    }
}

/// JSON-lines corpus reader; `strict` controls unknown-field handling.
pub fn read_corpus_jsonl(path: &Path, strict: bool) -> Result<Vec<ReasoningSample>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read corpus {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample = if strict {
            parse_record(line)
        } else {
            parse_record_lenient(line).map(|(s, _)| s)
        };
        out.push(sample.map_err(|e| {
            Error::input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

pub fn write_corpus_jsonl(path: &Path, samples: &[ReasoningSample]) -> Result<()> {
    let mut text = String::new();
    for s in samples {
        text.push_str(&s.to_json());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

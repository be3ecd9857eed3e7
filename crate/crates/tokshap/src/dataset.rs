//! JSONL file formats: datasets, attributions, reference sets.
//!
//! Every file is one JSON object per line. Files written by the CLI start
//! with a header line `{"kind": ..., "manifest": ...}` tying the file to
//! its run manifest; readers accept files with or without the header, so
//! hand-built datasets work too. Floats round-trip exactly through the
//! shortest-representation encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::amortized::{Provenance, ReferenceRecord};
use crate::error::{Error, Result};
use crate::types::{Attribution, Method, TokenSequence, ValueMode};

pub const KIND_DATASET: &str = "dataset";
pub const KIND_ATTRIBUTIONS: &str = "attributions";
pub const KIND_REFERENCES: &str = "references";

/// First line of CLI-written files: file kind plus the manifest hash of
/// the run that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub kind: String,
    pub manifest: String,
}

/// One dataset instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
}

impl DatasetRecord {
    pub fn to_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(self.id.clone(), self.tokens.clone())
    }
}

/// One attribution line: `{"id", "label", "method", "m", "seed",
/// "value_mode", "scores"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionLine {
    pub id: String,
    pub label: usize,
    pub method: Method,
    pub m: u64,
    pub seed: u64,
    pub value_mode: ValueMode,
    pub scores: Vec<f64>,
}

impl From<Attribution<f64>> for AttributionLine {
    fn from(a: Attribution<f64>) -> Self {
        AttributionLine {
            id: a.instance_id,
            label: a.label,
            method: a.method,
            m: a.samples,
            seed: a.seed,
            value_mode: a.value_mode,
            scores: a.scores,
        }
    }
}

impl From<AttributionLine> for Attribution<f64> {
    fn from(line: AttributionLine) -> Self {
        Attribution {
            instance_id: line.id,
            label: line.label,
            scores: line.scores,
            method: line.method,
            samples: line.m,
            seed: line.seed,
            value_mode: line.value_mode,
        }
    }
}

/// One reference-set line: instance, explained label, scores, provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLine {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub scores: Vec<f64>,
    pub provenance: Provenance,
}

impl From<ReferenceRecord<f64>> for ReferenceLine {
    fn from(r: ReferenceRecord<f64>) -> Self {
        ReferenceLine {
            id: r.sequence.id,
            tokens: r.sequence.tokens,
            label: r.label,
            scores: r.scores,
            provenance: r.provenance,
        }
    }
}

impl ReferenceLine {
    pub fn into_record(self) -> Result<ReferenceRecord<f64>> {
        let sequence = TokenSequence::new(self.id, self.tokens)?;
        if self.scores.len() != sequence.len() {
            return Err(Error::Contract(format!(
                "reference {}: {} scores for {} tokens",
                sequence.id,
                self.scores.len(),
                sequence.len()
            )));
        }
        Ok(ReferenceRecord {
            sequence,
            label: self.label,
            scores: self.scores,
            provenance: self.provenance,
        })
    }
}

/// A parsed JSONL file: optional header plus records.
#[derive(Debug, Clone)]
pub struct JsonlFile<T> {
    pub header: Option<FileHeader>,
    pub records: Vec<T>,
}

fn looks_like_header(line: &str) -> bool {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(map)) => {
            map.contains_key("kind") && map.contains_key("manifest")
        }
        _ => false,
    }
}

/// Reads a JSONL file, validating the header kind when one is present.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<JsonlFile<T>> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(shown.clone(), e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(shown.clone(), e))?;
        let number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        if records.is_empty() && header.is_none() && looks_like_header(&line) {
            let h: FileHeader =
                serde_json::from_str(&line).map_err(|e| Error::json(shown.clone(), number, e))?;
            if h.kind != kind {
                return Err(Error::Validation(format!(
                    "{shown}: file kind '{}' where '{kind}' was expected",
                    h.kind
                )));
            }
            header = Some(h);
            continue;
        }
        records
            .push(serde_json::from_str(&line).map_err(|e| Error::json(shown.clone(), number, e))?);
    }
    Ok(JsonlFile { header, records })
}

/// Writes records as JSONL, prefixed by a header line when a manifest
/// hash is given.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    kind: &str,
    manifest: Option<&str>,
    records: &[T],
) -> Result<()> {
    let shown = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(shown.clone(), e))?;
    let mut w = BufWriter::new(file);
    if let Some(hash) = manifest {
        let header = FileHeader {
            kind: kind.to_string(),
            manifest: hash.to_string(),
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| Error::json(shown.clone(), 1, e))?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(shown.clone(), e))?;
    }
    for (index, record) in records.iter().enumerate() {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| Error::json(shown.clone(), index + 1, e))?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(shown.clone(), e))?;
    }
    w.flush().map_err(|e| Error::io(shown, e))
}

pub fn read_dataset(path: &Path) -> Result<JsonlFile<DatasetRecord>> {
    read_jsonl(path, KIND_DATASET)
}

pub fn write_dataset(path: &Path, manifest: Option<&str>, records: &[DatasetRecord]) -> Result<()> {
    write_jsonl(path, KIND_DATASET, manifest, records)
}

pub fn read_attributions(path: &Path) -> Result<JsonlFile<AttributionLine>> {
    read_jsonl(path, KIND_ATTRIBUTIONS)
}

pub fn write_attributions(
    path: &Path,
    manifest: Option<&str>,
    records: &[AttributionLine],
) -> Result<()> {
    write_jsonl(path, KIND_ATTRIBUTIONS, manifest, records)
}

pub fn read_references(path: &Path) -> Result<JsonlFile<ReferenceLine>> {
    read_jsonl(path, KIND_REFERENCES)
}

pub fn write_references(
    path: &Path,
    manifest: Option<&str>,
    records: &[ReferenceLine],
) -> Result<()> {
    write_jsonl(path, KIND_REFERENCES, manifest, records)
}

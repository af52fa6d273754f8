//! Raw dataset loading and harmonization into [`UnifiedInstance`] records.
//!
//! Harmonization resolves each row's target keyword through a mapping table.
//! Rows whose keyword is unmapped are skipped and counted. A keyword mapped
//! to `k` targets yields `k` instances that share the row's text. The result
//! is deduplicated on the exact `(text, target, source_dataset)` triple,
//! keeping the first occurrence; text is never case-folded or trimmed.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mapping::{MappingError, MappingTable, Resolution};
use crate::taxonomy::Taxonomy;

const DEFAULT_DESCRIPTORS_JSON: &str = include_str!("../resources/datasets_default.json");

/// One source record: field name -> string value.
pub type RawRow = IndexMap<String, String>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("dataset `{dataset}` is not available: {reason}\n{notes}")]
    Unavailable {
        dataset: String,
        reason: String,
        notes: String,
    },
    #[error("dataset `{dataset}`, row {row}: {message}")]
    Malformed {
        dataset: String,
        row: usize,
        message: String,
    },
    #[error("dataset `{dataset}`, row {row}: missing field `{field}`")]
    MissingField {
        dataset: String,
        row: usize,
        field: String,
    },
    #[error("invalid descriptor `{dataset}`: {message}")]
    InvalidDescriptor { dataset: String, message: String },
    #[error("dataset `{dataset}`: mapping target `{target}` is not in taxonomy `{taxonomy}`")]
    TargetOutsideTaxonomy {
        dataset: String,
        target: String,
        taxonomy: String,
    },
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl IngestError {
    /// True for errors that mean "go get the data", as opposed to broken data.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, IngestError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    Open,
    TokenRequired,
    ManualDownload,
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Access::Open => "open",
            Access::TokenRequired => "token-required",
            Access::ManualDownload => "manual-download",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Tsv,
    Json,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowFilter {
    pub field: String,
    pub allowed: Vec<String>,
}

/// Where a dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_id: String,
    /// Local path (relative to the resources directory unless absolute) or
    /// an `http(s)://` URL.
    pub location: String,
    pub access: Access,
    pub format: Format,
    pub text_field: String,
    pub target_field: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_filters: Vec<RowFilter>,
    #[serde(default)]
    pub notes: String,
}

impl DatasetDescriptor {
    /// The ten shipped descriptors.
    pub fn builtin_defaults() -> Vec<DatasetDescriptor> {
        serde_json::from_str(DEFAULT_DESCRIPTORS_JSON).expect("bundled descriptors are valid JSON")
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |message: &str| IngestError::InvalidDescriptor {
            dataset: self.dataset_id.clone(),
            message: message.to_string(),
        };
        if self.dataset_id.trim().is_empty() {
            return Err(bad("dataset_id is empty"));
        }
        if self.text_field == self.target_field {
            return Err(bad("text_field and target_field must differ"));
        }
        Ok(())
    }

    pub fn is_remote(&self) -> bool {
        self.location.starts_with("http://") || self.location.starts_with("https://")
    }

    /// Resolves a local location against `base`.
    pub fn local_path(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.location);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Fields every row must carry.
    fn required_fields(&self) -> Vec<&str> {
        let mut f = vec![self.text_field.as_str(), self.target_field.as_str()];
        for filter in &self.row_filters {
            if !f.contains(&filter.field.as_str()) {
                f.push(&filter.field);
            }
        }
        f
    }

    fn passes_filters(&self, row: &RawRow) -> bool {
        self.row_filters.iter().all(|f| {
            row.get(&f.field)
                .is_some_and(|v| f.allowed.iter().any(|a| a == v))
        })
    }

    fn unavailable(&self, reason: impl Into<String>) -> IngestError {
        IngestError::Unavailable {
            dataset: self.dataset_id.clone(),
            reason: reason.into(),
            notes: self.notes.clone(),
        }
    }
}

/// Reads the raw rows of one dataset.
///
/// Manual-download datasets are only ever read from disk. Remote
/// token-required datasets are fetched only when `token` is given.
pub fn load_raw(
    descriptor: &DatasetDescriptor,
    base: &Path,
    token: Option<&str>,
) -> Result<Vec<RawRow>, IngestError> {
    descriptor.validate()?;
    let bytes = if descriptor.is_remote() {
        match (descriptor.access, token) {
            (Access::ManualDownload, _) => {
                return Err(descriptor.unavailable(
                    "this dataset must be downloaded manually and referenced by a local path",
                ))
            }
            (Access::TokenRequired, None) => {
                return Err(descriptor.unavailable("an access token is required"));
            }
            _ => fetch(descriptor, token)?,
        }
    } else {
        let path = descriptor.local_path(base);
        match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let reason = match descriptor.access {
                    Access::ManualDownload => format!("manual download required, expected at {}", path.display()),
                    _ => format!("file not found: {}", path.display()),
                };
                return Err(descriptor.unavailable(reason));
            }
            Err(e) => return Err(e.into()),
        }
    };
    parse_rows(descriptor, &bytes[..])
}

fn fetch(descriptor: &DatasetDescriptor, token: Option<&str>) -> Result<Vec<u8>, IngestError> {
    let client = reqwest::blocking::Client::new();
    let mut req = client.get(&descriptor.location);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req
        .send()
        .map_err(|e| descriptor.unavailable(format!("fetching {} failed: {e}", descriptor.location)))?;
    if !resp.status().is_success() {
        return Err(descriptor.unavailable(format!(
            "fetching {} returned HTTP {}",
            descriptor.location,
            resp.status()
        )));
    }
    let body = resp
        .bytes()
        .map_err(|e| descriptor.unavailable(format!("reading {} failed: {e}", descriptor.location)))?;
    Ok(body.to_vec())
}

/// Parses raw bytes according to the descriptor's format and checks that
/// every declared field is present on every row.
pub fn parse_rows<R: Read>(descriptor: &DatasetDescriptor, mut input: R) -> Result<Vec<RawRow>, IngestError> {
    let rows = match descriptor.format {
        Format::Csv => parse_delimited(descriptor, input, b',')?,
        Format::Tsv => parse_delimited(descriptor, input, b'\t')?,
        Format::Json => {
            let value: serde_json::Value = serde_json::from_reader(input)?;
            let serde_json::Value::Array(items) = value else {
                return Err(IngestError::Malformed {
                    dataset: descriptor.dataset_id.clone(),
                    row: 0,
                    message: "expected a top-level JSON array".into(),
                });
            };
            items
                .into_iter()
                .enumerate()
                .map(|(i, v)| json_row(descriptor, i + 1, v))
                .collect::<Result<_, _>>()?
        }
        Format::Jsonl => {
            let mut text = String::new();
            input.read_to_string(&mut text)?;
            let mut rows = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let v = serde_json::from_str(line).map_err(|e| IngestError::Malformed {
                    dataset: descriptor.dataset_id.clone(),
                    row: i + 1,
                    message: e.to_string(),
                })?;
                rows.push(json_row(descriptor, i + 1, v)?);
            }
            rows
        }
    };
    let required = descriptor.required_fields();
    for (i, row) in rows.iter().enumerate() {
        for field in &required {
            if !row.contains_key(*field) {
                return Err(IngestError::MissingField {
                    dataset: descriptor.dataset_id.clone(),
                    row: i + 1,
                    field: field.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

fn parse_delimited<R: Read>(descriptor: &DatasetDescriptor, input: R, delimiter: u8) -> Result<Vec<RawRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::Malformed {
            dataset: descriptor.dataset_id.clone(),
            row: i + 1,
            message: e.to_string(),
        })?;
        rows.push(
            headers
                .iter()
                .zip(record.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

fn json_row(descriptor: &DatasetDescriptor, row: usize, value: serde_json::Value) -> Result<RawRow, IngestError> {
    let serde_json::Value::Object(map) = value else {
        return Err(IngestError::Malformed {
            dataset: descriptor.dataset_id.clone(),
            row,
            message: "expected a JSON object".into(),
        });
    };
    Ok(map.into_iter().map(|(k, v)| (k, json_scalar(v))).collect())
}

/// Flattens a JSON value to the string a keyword table would key on.
/// Arrays become their elements joined by `", "`.
fn json_scalar(v: serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Null => String::new(),
        Value::String(s) => s,
        Value::Array(items) => items.into_iter().map(json_scalar).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// A harmonized record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnifiedInstance {
    pub id: String,
    pub text: String,
    pub target: String,
    pub source_dataset: String,
}

impl UnifiedInstance {
    pub fn new(text: impl Into<String>, target: impl Into<String>, source_dataset: impl Into<String>) -> Self {
        let (text, target, source_dataset) = (text.into(), target.into(), source_dataset.into());
        Self {
            id: instance_id_of(&text, &target, &source_dataset),
            text,
            target,
            source_dataset,
        }
    }

    pub fn key(&self) -> (&str, &str, &str) {
        (&self.text, &self.target, &self.source_dataset)
    }
}

/// Content-derived identifier: the first 128 bits of SHA-256 over the
/// length-prefixed triple, as lowercase hex.
pub fn instance_id_of(text: &str, target: &str, source_dataset: &str) -> String {
    let mut h = Sha256::new();
    for part in [text, target, source_dataset] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Tallies of one harmonization pass.
///
/// `emitted + skipped_unmapped + duplicates_removed == input_rows + split_expansions`
/// always holds. Rows rejected by the descriptor's row filters are counted in
/// `filtered_out` and are not part of `input_rows`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dataset_id: String,
    pub input_rows: usize,
    pub filtered_out: usize,
    pub emitted: usize,
    pub split_expansions: usize,
    pub skipped_unmapped: usize,
    pub duplicates_removed: usize,
    /// Unmapped raw keywords with their row counts.
    pub unmapped_keywords: IndexMap<String, usize>,
}

impl IngestReport {
    pub fn is_conserved(&self) -> bool {
        self.emitted + self.skipped_unmapped + self.duplicates_removed == self.input_rows + self.split_expansions
    }
}

pub fn harmonize(
    rows: &[RawRow],
    descriptor: &DatasetDescriptor,
    mapping: &MappingTable,
    taxonomy: &Taxonomy,
) -> Result<(Vec<UnifiedInstance>, IngestReport), IngestError> {
    if mapping.taxonomy != taxonomy.name {
        return Err(MappingError::TaxonomyMismatch {
            mapping: mapping.name.clone(),
            expected: mapping.taxonomy.clone(),
            found: taxonomy.name.clone(),
        }
        .into());
    }
    let dataset = descriptor.dataset_id.as_str();
    mapping.ensure_dataset(dataset)?;

    let mut report = IngestReport {
        dataset_id: dataset.to_string(),
        ..Default::default()
    };
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if !descriptor.passes_filters(row) {
            report.filtered_out += 1;
            continue;
        }
        report.input_rows += 1;
        let field = |name: &str| {
            row.get(name).ok_or_else(|| IngestError::MissingField {
                dataset: dataset.to_string(),
                row: i + 1,
                field: name.to_string(),
            })
        };
        let text = field(&descriptor.text_field)?;
        let keyword = field(&descriptor.target_field)?;
        let targets = match mapping.resolve(dataset, keyword)? {
            Resolution::Mapped(t) => t,
            Resolution::Unmapped => {
                report.skipped_unmapped += 1;
                *report.unmapped_keywords.entry(keyword.clone()).or_default() += 1;
                continue;
            }
        };
        report.split_expansions += targets.len() - 1;
        for target in targets {
            if !taxonomy.contains_target(target) {
                return Err(IngestError::TargetOutsideTaxonomy {
                    dataset: dataset.to_string(),
                    target: target.clone(),
                    taxonomy: taxonomy.name.clone(),
                });
            }
            if seen.insert((text.as_str(), target.as_str())) {
                out.push(UnifiedInstance::new(text.clone(), target.clone(), dataset));
            } else {
                report.duplicates_removed += 1;
            }
        }
    }
    report.emitted = out.len();
    debug_assert!(report.is_conserved());
    if report.skipped_unmapped > 0 {
        log::debug!(
            "{dataset}: skipped {} rows with unmapped keywords",
            report.skipped_unmapped
        );
    }
    Ok((out, report))
}

/// Loads and harmonizes one dataset.
pub fn ingest_dataset(
    descriptor: &DatasetDescriptor,
    base: &Path,
    mapping: &MappingTable,
    taxonomy: &Taxonomy,
    token: Option<&str>,
) -> Result<(Vec<UnifiedInstance>, IngestReport), IngestError> {
    let rows = load_raw(descriptor, base, token)?;
    harmonize(&rows, descriptor, mapping, taxonomy)
}

/// Writes one JSON object per line with fields `id, text, target, source_dataset`.
pub fn write_jsonl<W: Write>(instances: &[UnifiedInstance], mut w: W) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<UnifiedInstance>, IngestError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(IngestError::from))
        .collect()
}

/// CSV export with the same columns as the JSONL export.
pub fn write_csv<W: Write>(instances: &[UnifiedInstance], w: W) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(w);
    for inst in instances {
        writer.serialize(inst)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::KeywordTable;

    fn descriptor(format: Format) -> DatasetDescriptor {
        DatasetDescriptor {
            dataset_id: "vidgen2021learning".into(),
            location: "raw/x".into(),
            access: Access::Open,
            format,
            text_field: "text".into(),
            target_field: "target".into(),
            row_filters: vec![],
            notes: "see the project page".into(),
        }
    }

    fn row(text: &str, target: &str) -> RawRow {
        RawRow::from([("text".to_string(), text.to_string()), ("target".to_string(), target.to_string())])
    }

    fn defaults() -> (MappingTable, Taxonomy) {
        (MappingTable::builtin_default(), Taxonomy::builtin_default())
    }

    #[test]
    fn csv_three_rows() {
        let d = descriptor(Format::Csv);
        let data = "id,text,target\n1,hello,bla\n2,\"quoted, text\",wom\n3,x,y\n";
        let rows = parse_rows(&d, data.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1]["text"], "quoted, text");
    }

    #[test]
    fn tsv_keeps_quoted_tab() {
        let d = descriptor(Format::Tsv);
        let data = "text\ttarget\n\"a\tb\"\tjew\n";
        let rows = parse_rows(&d, data.as_bytes()).unwrap();
        assert_eq!(rows[0]["text"], "a\tb");
    }

    #[test]
    fn malformed_csv_reports_row() {
        let d = descriptor(Format::Csv);
        let data = "text,target\nok,a\ntoo,many,fields\n";
        let err = parse_rows(&d, data.as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Malformed { row: 2, .. }), "{err}");
    }

    #[test]
    fn missing_declared_field() {
        let d = descriptor(Format::Jsonl);
        let data = "{\"text\": \"a\", \"target\": \"b\"}\n{\"text\": \"c\"}\n";
        let err = parse_rows(&d, data.as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::MissingField { row: 2, ref field, .. } if field == "target"));
    }

    #[test]
    fn json_array_values_join() {
        let d = descriptor(Format::Json);
        let data = r#"[{"text": "t", "target": ["bla", "jew"], "n": 3}]"#;
        let rows = parse_rows(&d, data.as_bytes()).unwrap();
        assert_eq!(rows[0]["target"], "bla, jew");
        assert_eq!(rows[0]["n"], "3");
    }

    #[test]
    fn absent_manual_file_echoes_notes() {
        let mut d = descriptor(Format::Csv);
        d.access = Access::ManualDownload;
        let dir = tempfile::tempdir().unwrap();
        let err = load_raw(&d, dir.path(), None).unwrap_err();
        assert!(err.is_unavailable());
        assert!(err.to_string().contains("see the project page"));
    }

    #[test]
    fn remote_token_dataset_without_token_is_unavailable() {
        let mut d = descriptor(Format::Csv);
        d.access = Access::TokenRequired;
        d.location = "https://example.invalid/data.csv".into();
        let err = load_raw(&d, Path::new("."), None).unwrap_err();
        assert!(err.is_unavailable());
    }

    #[test]
    fn multi_target_row_splits() {
        let (m, t) = defaults();
        let d = descriptor(Format::Csv);
        let (out, report) = harmonize(&[row("some text", "bla, jew")], &d, &m, &t).unwrap();
        assert_eq!(out.len(), 2);
        let targets: HashSet<_> = out.iter().map(|i| i.target.as_str()).collect();
        assert_eq!(targets, HashSet::from(["jews", "blacks"]));
        assert!(out.iter().all(|i| i.text == "some text"));
        assert_eq!(report.split_expansions, 1);
        assert!(report.is_conserved());
    }

    #[test]
    fn duplicate_rows_collapse() {
        let (m, t) = defaults();
        let mut d = descriptor(Format::Csv);
        d.dataset_id = "fanton2021human".into();
        let rows = [row("same", "JEWS"), row("same", "JEWS")];
        let (out, report) = harmonize(&rows, &d, &m, &t).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(report.duplicates_removed, 1);
    }

    #[test]
    fn unmapped_keyword_skipped() {
        let (m, t) = defaults();
        let d = descriptor(Format::Csv);
        let (out, report) = harmonize(&[row("x", "other")], &d, &m, &t).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.skipped_unmapped, 1);
        assert_eq!(report.unmapped_keywords["other"], 1);
    }

    #[test]
    fn row_filters_apply_before_counting() {
        let (m, t) = defaults();
        let mut d = descriptor(Format::Csv);
        d.row_filters = vec![RowFilter {
            field: "label".into(),
            allowed: vec!["hate".into()],
        }];
        let mut keep = row("a", "bla, african");
        keep.insert("label".into(), "hate".into());
        let mut drop = row("b", "bla, african");
        drop.insert("label".into(), "nothate".into());
        let (out, report) = harmonize(&[keep, drop], &d, &m, &t).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(report.filtered_out, 1);
        assert_eq!(report.input_rows, 1);
    }

    #[test]
    fn companion_taxonomy_must_match() {
        let (m, mut t) = defaults();
        t.name = "other".into();
        let d = descriptor(Format::Csv);
        assert!(harmonize(&[], &d, &m, &t).is_err());
    }

    #[test]
    fn mapping_pointing_outside_taxonomy_is_rejected() {
        let (mut m, t) = defaults();
        m.datasets["vidgen2021learning"] = KeywordTable::from([("x".to_string(), vec!["ghost".to_string()])]);
        let d = descriptor(Format::Csv);
        assert!(matches!(
            harmonize(&[row("a", "x")], &d, &m, &t),
            Err(IngestError::TargetOutsideTaxonomy { .. })
        ));
    }

    #[test]
    fn instance_ids() {
        let a = instance_id_of("text", "jews", "d");
        assert_eq!(a, instance_id_of("text", "jews", "d"));
        assert_ne!(a, instance_id_of("text", "blacks", "d"));
        assert_eq!(a.len(), 32);
        // Length prefixing keeps field boundaries apart.
        assert_ne!(instance_id_of("ab", "c", "d"), instance_id_of("a", "bc", "d"));
    }

    #[test]
    fn jsonl_and_csv_exports() {
        let insts = vec![UnifiedInstance::new("hello, \"world\"", "jews", "d")];
        let mut buf = Vec::new();
        write_jsonl(&insts, &mut buf).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), insts);
        let mut csv_buf = Vec::new();
        write_csv(&insts, &mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.starts_with("id,text,target,source_dataset\n"));
    }
}

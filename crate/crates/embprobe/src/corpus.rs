//! Manifest and embedding ingestion.
//!
//! A corpus is described by a metadata manifest (CSV, fixed header) and one
//! embedding file per architecture (binary `EMB1` or CSV). [`build_dataset`]
//! joins the two on utterance key and rejects anything the downstream
//! metrics cannot handle, such as speakers with a single utterance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed manifest header, in order.
pub const MANIFEST_HEADER: [&str; 10] = [
    "utterance_key",
    "speaker_id",
    "gender",
    "subset",
    "session_id",
    "utterance_id",
    "duration_s",
    "char_count",
    "snr_db",
    "f0_hz",
];

const EMB1_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate utterance key {0:?}")]
    DuplicateKey(String),
    #[error("missing manifest column {0:?}")]
    MissingColumn(String),
    #[error("manifest header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },
    #[error("bad value in row {row}, column {column:?}: {reason}")]
    BadValue {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("bad magic bytes: not an EMB1 file")]
    BadMagic,
    #[error("dimension mismatch for key {0:?}")]
    DimMismatch(String),
    #[error("non-finite embedding component for key {0:?}")]
    NonFinite(String),
    #[error("manifest record {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("embedding key {0:?} has no manifest record")]
    OrphanEmbedding(String),
    #[error("speaker {0:?} has fewer than 2 utterances")]
    SingletonSpeaker(String),
    #[error("embedding set is empty")]
    EmptyEmbeddings,
    #[error("embedding key {0:?} exceeds the 65535-byte key limit")]
    KeyTooLong(String),
    #[error("truncated or malformed embedding file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

impl std::fmt::Display for Gender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-utterance metadata row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_key: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub subset: String,
    pub session_id: Option<String>,
    /// Prompt identifier, shared across speakers reading the same text.
    pub utterance_id: String,
    pub duration_s: f64,
    pub char_count: u32,
    pub snr_db: Option<f64>,
    pub f0_hz: Option<f64>,
}

/// One architecture's embeddings, keyed by utterance.
///
/// Entry order mirrors the source file so that a load/store round trip of
/// the binary format is byte-identical. Equality ignores order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub architecture: String,
    pub dim: usize,
    pub entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingSet {
    pub fn new(architecture: impl Into<String>, dim: usize) -> Self {
        EmbeddingSet {
            architecture: architecture.into(),
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    /// Insert one vector, validating dimension and finiteness.
    pub fn insert(&mut self, key: String, values: Vec<f32>) -> Result<(), CorpusError> {
        if values.len() != self.dim {
            return Err(CorpusError::DimMismatch(key));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(key));
        }
        if self.entries.contains_key(&key) {
            return Err(CorpusError::DuplicateKey(key));
        }
        self.entries.insert(key, values);
        Ok(())
    }
}

/// On-disk embedding layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

/// Joined, validated view of a manifest plus one embedding set.
///
/// Records are held in utterance-key order, so datasets built from permuted
/// manifests compare equal. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationDataset {
    records: Vec<UtteranceRecord>,
    embeddings: EmbeddingSet,
    speaker_index: BTreeMap<String, Vec<String>>,
    key_index: HashMap<String, usize>,
}

impl EvaluationDataset {
    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn architecture(&self) -> &str {
        &self.embeddings.architecture
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Speaker ids in sorted order.
    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.speaker_index.keys().map(String::as_str)
    }

    pub fn n_speakers(&self) -> usize {
        self.speaker_index.len()
    }

    /// Utterance keys of one speaker, sorted. Empty for unknown speakers.
    pub fn speaker_utterances(&self, speaker_id: &str) -> &[String] {
        self.speaker_index
            .get(speaker_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn record(&self, key: &str) -> Option<&UtteranceRecord> {
        self.key_index.get(key).map(|&i| &self.records[i])
    }

    pub fn embedding(&self, key: &str) -> Option<&[f32]> {
        self.embeddings.get(key)
    }
}

fn bad_value(row: usize, column: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::BadValue {
        row,
        column: column.to_string(),
        reason: reason.into(),
    }
}

fn opt_str(field: &str) -> Option<String> {
    if field.is_empty() {
        None
    } else {
        Some(field.to_string())
    }
}

/// Load and validate a manifest CSV.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers != MANIFEST_HEADER {
        for expected in MANIFEST_HEADER {
            if !headers.iter().any(|h| h == expected) {
                return Err(CorpusError::MissingColumn(expected.to_string()));
            }
        }
        return Err(CorpusError::HeaderMismatch {
            expected: MANIFEST_HEADER.join(","),
            found: headers.join(","),
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let field = |col: usize| row.get(col).unwrap_or("").trim();

        let utterance_key = field(0).to_string();
        if utterance_key.is_empty() {
            return Err(bad_value(row_no, "utterance_key", "empty"));
        }
        if !seen.insert(utterance_key.clone()) {
            return Err(CorpusError::DuplicateKey(utterance_key));
        }
        let speaker_id = field(1).to_string();
        if speaker_id.is_empty() {
            return Err(bad_value(row_no, "speaker_id", "empty"));
        }
        let gender = match field(2) {
            "F" => Gender::F,
            "M" => Gender::M,
            other => return Err(bad_value(row_no, "gender", format!("{other:?} not in {{F,M}}"))),
        };
        let subset = field(3).to_string();
        if subset.is_empty() {
            return Err(bad_value(row_no, "subset", "empty"));
        }
        let session_id = opt_str(field(4));
        let utterance_id = field(5).to_string();
        if utterance_id.is_empty() {
            return Err(bad_value(row_no, "utterance_id", "empty"));
        }
        let duration_s: f64 = field(6)
            .parse()
            .map_err(|_| bad_value(row_no, "duration_s", "not a number"))?;
        if !duration_s.is_finite() || duration_s <= 0.0 {
            return Err(bad_value(row_no, "duration_s", "must be > 0"));
        }
        let char_count: u32 = field(7)
            .parse()
            .map_err(|_| bad_value(row_no, "char_count", "not a non-negative integer"))?;
        let snr_db = match field(8) {
            "" => None,
            s => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| bad_value(row_no, "snr_db", "not a number"))?;
                if !v.is_finite() {
                    return Err(bad_value(row_no, "snr_db", "not finite"));
                }
                Some(v)
            }
        };
        let f0_hz = match field(9) {
            "" => None,
            s => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| bad_value(row_no, "f0_hz", "not a number"))?;
                if !v.is_finite() || v <= 0.0 {
                    return Err(bad_value(row_no, "f0_hz", "must be > 0"));
                }
                Some(v)
            }
        };

        records.push(UtteranceRecord {
            utterance_key,
            speaker_id,
            gender,
            subset,
            session_id,
            utterance_id,
            duration_s,
            char_count,
            snr_db,
            f0_hz,
        });
    }
    Ok(records)
}

/// Write a manifest CSV with the fixed header.
pub fn write_manifest(
    records: &[UtteranceRecord],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(MANIFEST_HEADER)?;
    for r in records {
        writer.write_record([
            r.utterance_key.as_str(),
            r.speaker_id.as_str(),
            r.gender.as_str(),
            r.subset.as_str(),
            r.session_id.as_deref().unwrap_or(""),
            r.utterance_id.as_str(),
            &r.duration_s.to_string(),
            &r.char_count.to_string(),
            &r.snr_db.map(|v| v.to_string()).unwrap_or_default(),
            &r.f0_hz.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn architecture_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Load an embedding file. The architecture name is the file stem.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    format: EmbeddingFormat,
) -> Result<EmbeddingSet, CorpusError> {
    let path = path.as_ref();
    let architecture = architecture_from_path(path);
    match format {
        EmbeddingFormat::Binary => load_embeddings_binary(path, architecture),
        EmbeddingFormat::Csv => load_embeddings_csv(path, architecture),
    }
}

fn read_exact_or(
    reader: &mut impl Read,
    buf: &mut [u8],
    what: &str,
) -> Result<(), CorpusError> {
    reader
        .read_exact(buf)
        .map_err(|_| CorpusError::Malformed(format!("unexpected end of file reading {what}")))
}

fn load_embeddings_binary(path: &Path, architecture: String) -> Result<EmbeddingSet, CorpusError> {
    let mut reader = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or(&mut reader, &mut magic, "magic")?;
    if &magic != EMB1_MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut reader, &mut word, "dim")?;
    let dim = u32::from_le_bytes(word) as usize;
    read_exact_or(&mut reader, &mut word, "count")?;
    let count = u32::from_le_bytes(word) as usize;

    let mut set = EmbeddingSet::new(architecture, dim);
    for _ in 0..count {
        let mut len_bytes = [0u8; 2];
        read_exact_or(&mut reader, &mut len_bytes, "key length")?;
        let key_len = u16::from_le_bytes(len_bytes) as usize;
        let mut key_buf = vec![0u8; key_len];
        read_exact_or(&mut reader, &mut key_buf, "key")?;
        let key = String::from_utf8(key_buf)
            .map_err(|_| CorpusError::Malformed("key is not valid UTF-8".to_string()))?;
        let mut values = Vec::with_capacity(dim);
        let mut value_bytes = vec![0u8; dim * 4];
        read_exact_or(&mut reader, &mut value_bytes, "values")
            .map_err(|_| CorpusError::DimMismatch(key.clone()))?;
        for chunk in value_bytes.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().expect("chunk of 4")));
        }
        set.insert(key, values)?;
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(CorpusError::Malformed("trailing bytes after last record".to_string()));
    }
    if set.is_empty() {
        return Err(CorpusError::EmptyEmbeddings);
    }
    Ok(set)
}

fn load_embeddings_csv(path: &Path, architecture: String) -> Result<EmbeddingSet, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("utterance_key") {
        return Err(CorpusError::MissingColumn("utterance_key".to_string()));
    }
    let dim = headers.len().saturating_sub(1);
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("v{i}") {
            return Err(CorpusError::HeaderMismatch {
                expected: format!("v{i}"),
                found: h.to_string(),
            });
        }
    }

    let mut set = EmbeddingSet::new(architecture, dim);
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let key = row
            .get(0)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| bad_value(i + 1, "utterance_key", "empty"))?
            .to_string();
        if row.len() != dim + 1 {
            return Err(CorpusError::DimMismatch(key));
        }
        let mut values = Vec::with_capacity(dim);
        for j in 1..row.len() {
            let v: f32 = row
                .get(j)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad_value(i + 1, &format!("v{}", j - 1), "not a number"))?;
            values.push(v);
        }
        set.insert(key, values)?;
    }
    if set.is_empty() {
        return Err(CorpusError::EmptyEmbeddings);
    }
    Ok(set)
}

/// Write an embedding set in the requested format.
///
/// For the binary format, a load followed by a write reproduces the source
/// file byte for byte.
pub fn write_embeddings(
    set: &EmbeddingSet,
    path: impl AsRef<Path>,
    format: EmbeddingFormat,
) -> Result<(), CorpusError> {
    match format {
        EmbeddingFormat::Binary => write_embeddings_binary(set, path.as_ref()),
        EmbeddingFormat::Csv => write_embeddings_csv(set, path.as_ref()),
    }
}

fn write_embeddings_binary(set: &EmbeddingSet, path: &Path) -> Result<(), CorpusError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(EMB1_MAGIC)?;
    writer.write_all(&(set.dim as u32).to_le_bytes())?;
    writer.write_all(&(set.entries.len() as u32).to_le_bytes())?;
    for (key, values) in &set.entries {
        let key_bytes = key.as_bytes();
        if key_bytes.len() > u16::MAX as usize {
            return Err(CorpusError::KeyTooLong(key.clone()));
        }
        writer.write_all(&(key_bytes.len() as u16).to_le_bytes())?;
        writer.write_all(key_bytes)?;
        for v in values {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn write_embeddings_csv(set: &EmbeddingSet, path: &Path) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["utterance_key".to_string()];
    header.extend((0..set.dim).map(|i| format!("v{i}")));
    writer.write_record(&header)?;
    for (key, values) in &set.entries {
        let mut row = vec![key.clone()];
        row.extend(values.iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Join manifest records with an embedding set.
///
/// Fails if the key sets differ or any speaker contributes fewer than two
/// utterances; intra-speaker similarity and same-speaker trials are
/// undefined otherwise.
pub fn build_dataset(
    records: Vec<UtteranceRecord>,
    embeddings: EmbeddingSet,
) -> Result<EvaluationDataset, CorpusError> {
    let mut records = records;
    records.sort_by(|a, b| a.utterance_key.cmp(&b.utterance_key));

    let mut key_index = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if key_index.insert(r.utterance_key.clone(), i).is_some() {
            return Err(CorpusError::DuplicateKey(r.utterance_key.clone()));
        }
        if embeddings.get(&r.utterance_key).is_none() {
            return Err(CorpusError::MissingEmbedding(r.utterance_key.clone()));
        }
    }
    for key in embeddings.entries.keys() {
        if !key_index.contains_key(key) {
            return Err(CorpusError::OrphanEmbedding(key.clone()));
        }
    }

    let mut speaker_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &records {
        speaker_index
            .entry(r.speaker_id.clone())
            .or_default()
            .push(r.utterance_key.clone());
    }
    for (speaker, utts) in &speaker_index {
        if utts.len() < 2 {
            return Err(CorpusError::SingletonSpeaker(speaker.clone()));
        }
    }

    Ok(EvaluationDataset {
        records,
        embeddings,
        speaker_index,
        key_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_csv(rows: &[&str]) -> String {
        let mut s = MANIFEST_HEADER.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("temp file");
        f.write_all(content.as_bytes()).expect("write");
        f
    }

    #[test]
    fn parses_two_valid_rows() {
        let f = write_temp(&manifest_csv(&[
            "u1,spk1,F,SWARA1.0,sess1,p001,2.5,40,25.0,210.5",
            "u2,spk1,M,SWARA2.0,,p002,1.0,20,,",
        ]));
        let records = load_manifest(f.path()).expect("load");
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].utterance_key, "u1");
        assert_eq!(records[0].gender, Gender::F);
        assert_eq!(records[0].snr_db, Some(25.0));
        assert_eq!(records[1].session_id, None);
        assert_eq!(records[1].snr_db, None);
        assert_eq!(records[1].f0_hz, None);
    }

    #[test]
    fn duplicate_key_rejected() {
        let f = write_temp(&manifest_csv(&[
            "u1,spk1,F,s,x,p001,2.5,40,,",
            "u1,spk1,F,s,x,p002,2.5,40,,",
        ]));
        assert!(matches!(
            load_manifest(f.path()),
            Err(CorpusError::DuplicateKey(k)) if k == "u1"
        ));
    }

    #[test]
    fn negative_duration_rejected() {
        let f = write_temp(&manifest_csv(&["u1,spk1,F,s,x,p001,-1.0,40,,"]));
        assert!(matches!(
            load_manifest(f.path()),
            Err(CorpusError::BadValue { column, .. }) if column == "duration_s"
        ));
    }

    #[test]
    fn bad_gender_rejected() {
        let f = write_temp(&manifest_csv(&["u1,spk1,X,s,x,p001,1.0,40,,"]));
        assert!(matches!(
            load_manifest(f.path()),
            Err(CorpusError::BadValue { column, .. }) if column == "gender"
        ));
    }

    #[test]
    fn missing_column_reported_by_name() {
        let f = write_temp("utterance_key,speaker_id,gender\na,b,F\n");
        assert!(matches!(
            load_manifest(f.path()),
            Err(CorpusError::MissingColumn(c)) if c == "subset"
        ));
    }

    fn emb1_fixture() -> Vec<u8> {
        // dim=3, count=1, key "a", values (1,0,0)
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(b"a");
        for v in [1.0f32, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn binary_header_and_record_round_trip() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("arch.emb");
        std::fs::write(&path, emb1_fixture()).expect("write");
        let set = load_embeddings(&path, EmbeddingFormat::Binary).expect("load");
        assert_eq!(set.architecture, "arch");
        assert_eq!(set.dim, 3);
        assert_eq!(set.get("a"), Some(&[1.0f32, 0.0, 0.0][..]));

        let out = dir.path().join("copy.emb");
        write_embeddings(&set, &out, EmbeddingFormat::Binary).expect("write");
        assert_eq!(std::fs::read(&out).expect("read"), emb1_fixture());
    }

    #[test]
    fn truncated_record_is_dim_mismatch() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("bad.emb");
        let mut bytes = emb1_fixture();
        bytes.truncate(bytes.len() - 4); // drop one f32: 2 values under a dim=3 header
        std::fs::write(&path, bytes).expect("write");
        assert!(matches!(
            load_embeddings(&path, EmbeddingFormat::Binary),
            Err(CorpusError::DimMismatch(k)) if k == "a"
        ));
    }

    #[test]
    fn nan_component_rejected() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("nan.emb");
        let mut bytes = emb1_fixture();
        let len = bytes.len();
        bytes[len - 12..len - 8].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).expect("write");
        assert!(matches!(
            load_embeddings(&path, EmbeddingFormat::Binary),
            Err(CorpusError::NonFinite(k)) if k == "a"
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("bad.emb");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").expect("write");
        assert!(matches!(
            load_embeddings(&path, EmbeddingFormat::Binary),
            Err(CorpusError::BadMagic)
        ));
    }

    #[test]
    fn csv_embeddings_parse_and_reject_short_rows() {
        let f = write_temp("utterance_key,v0,v1,v2\na,1,0,0\n");
        let set = load_embeddings(f.path(), EmbeddingFormat::Csv).expect("load");
        assert_eq!(set.dim, 3);

        let f = write_temp("utterance_key,v0,v1,v2\na,1,0\n");
        assert!(matches!(
            load_embeddings(f.path(), EmbeddingFormat::Csv),
            Err(CorpusError::DimMismatch(k)) if k == "a"
        ));
    }

    fn record(key: &str, speaker: &str) -> UtteranceRecord {
        UtteranceRecord {
            utterance_key: key.to_string(),
            speaker_id: speaker.to_string(),
            gender: Gender::F,
            subset: "s".to_string(),
            session_id: None,
            utterance_id: format!("p_{key}"),
            duration_s: 1.0,
            char_count: 10,
            snr_db: None,
            f0_hz: None,
        }
    }

    fn small_set(keys: &[&str]) -> EmbeddingSet {
        let mut set = EmbeddingSet::new("toy", 2);
        for (i, k) in keys.iter().enumerate() {
            set.insert(k.to_string(), vec![1.0 + i as f32, 0.5]).expect("insert");
        }
        set
    }

    #[test]
    fn build_joins_and_indexes() {
        let records = vec![
            record("u1", "a"),
            record("u2", "a"),
            record("u3", "b"),
            record("u4", "b"),
        ];
        let ds = build_dataset(records, small_set(&["u1", "u2", "u3", "u4"])).expect("build");
        assert_eq!(ds.n_speakers(), 2);
        assert_eq!(ds.speaker_utterances("a"), ["u1", "u2"]);
        assert_eq!(ds.speaker_utterances("b"), ["u3", "u4"]);
    }

    #[test]
    fn missing_embedding_rejected() {
        let records = vec![record("u1", "a"), record("u2", "a")];
        assert!(matches!(
            build_dataset(records, small_set(&["u1"])),
            Err(CorpusError::MissingEmbedding(k)) if k == "u2"
        ));
    }

    #[test]
    fn orphan_embedding_rejected() {
        let records = vec![record("u1", "a"), record("u2", "a")];
        assert!(matches!(
            build_dataset(records, small_set(&["u1", "u2", "u3"])),
            Err(CorpusError::OrphanEmbedding(k)) if k == "u3"
        ));
    }

    #[test]
    fn singleton_speaker_rejected() {
        let records = vec![record("u1", "a"), record("u2", "a"), record("u3", "b")];
        assert!(matches!(
            build_dataset(records, small_set(&["u1", "u2", "u3"])),
            Err(CorpusError::SingletonSpeaker(s)) if s == "b"
        ));
    }

    #[test]
    fn manifest_order_does_not_matter() {
        let fwd = vec![record("u1", "a"), record("u2", "a")];
        let rev = vec![record("u2", "a"), record("u1", "a")];
        let a = build_dataset(fwd, small_set(&["u1", "u2"])).expect("build");
        let b = build_dataset(rev, small_set(&["u1", "u2"])).expect("build");
        assert_eq!(a, b);
    }
}

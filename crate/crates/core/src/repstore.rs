// SPDX-License-Identifier: MIT OR Apache-2.0

//! Representation data model and on-disk formats.
//!
//! ## REPB layout
//!
//! ```text
//! "REPB" | 0x01 | <UTF-8 JSON header> '\n' | N*D little-endian f32, row-major
//! ```
//!
//! The same container carries representation sets, vocabulary heads (bias,
//! when present, follows `W` as |V| extra floats) and territory bases. The
//! header's `kind` field tells them apart; plain sets omit it.
//!
//! CSV is accepted for interop: no header row, `,` separator, one sample per
//! line. Values are written with Rust's shortest round-trip formatting, so a
//! CSV round trip is value-exact.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPB_MAGIC: &[u8; 4] = b"REPB";
pub const REPB_VERSION: u8 = 0x01;

/// Storage format tag used by the manifest and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Repb,
    Csv,
}

impl Format {
    /// Guess from a file extension, defaulting to REPB.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Repb,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "repb" => Ok(Format::Repb),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Format::Repb => f.write_str("repb"),
            Format::Csv => f.write_str("csv"),
        }
    }
}

// ---------------------------------------------------------------------------
// REPB container
// ---------------------------------------------------------------------------

/// JSON header of a REPB file. Every field besides `n` and `d` is optional so
/// one struct covers sets, heads and territories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepbHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub n: usize,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular_values: Option<Vec<f64>>,
}

/// Serialize a header and payload into REPB bytes.
pub fn encode_repb(header: &RepbHeader, payload: &[f32]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serialization is infallible");
    let mut out = Vec::with_capacity(6 + json.len() + payload.len() * 4);
    out.extend_from_slice(REPB_MAGIC);
    out.push(REPB_VERSION);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse REPB bytes. The payload length is checked against `expected_len`
/// computed from the header, so a short or long file is always an error.
pub fn decode_repb(
    path: &Path,
    bytes: &[u8],
    expected_len: impl Fn(&RepbHeader) -> usize,
) -> Result<(RepbHeader, Vec<f32>)> {
    if bytes.len() < 5 || &bytes[..4] != REPB_MAGIC {
        return Err(Error::format(path, "missing REPB magic"));
    }
    if bytes[4] != REPB_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported REPB version {:#04x}", bytes[4]),
        ));
    }
    let rest = &bytes[5..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "unterminated header line"))?;
    let header: RepbHeader = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::format(path, format!("malformed header: {e}")))?;
    let payload = &rest[nl + 1..];
    let want = expected_len(&header);
    if payload.len() != want * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes but header implies {} ({} floats)",
                payload.len(),
                want * 4,
                want
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

pub fn read_repb(
    path: &Path,
    expected_len: impl Fn(&RepbHeader) -> usize,
) -> Result<(RepbHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_repb(path, &bytes, expected_len)
}

pub fn write_repb(path: &Path, header: &RepbHeader, payload: &[f32]) -> Result<()> {
    write_bytes(path, &encode_repb(header, payload))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn check_finite(path: &Path, values: &[f32], d: usize) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value at row {}, column {}", pos / d.max(1), pos % d.max(1)),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// RepresentationSet
// ---------------------------------------------------------------------------

/// N×d matrix of hidden vectors for one category. Row i is the last-token
/// state of sample `sample_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    category: String,
    n: usize,
    d: usize,
    data: Vec<f32>,
    sample_ids: Vec<String>,
}

impl RepresentationSet {
    pub fn new(
        category: impl Into<String>,
        n: usize,
        d: usize,
        data: Vec<f32>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Invalid(format!(
                "representation set must be non-empty (n = {n}, d = {d})"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                actual: data.len(),
            });
        }
        if sample_ids.len() != n {
            return Err(Error::Invalid(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                n
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample id '{id}'")));
            }
        }
        Ok(Self {
            category: category.into(),
            n,
            d,
            data,
            sample_ids,
        })
    }

    /// Build from rows, numbering ids `0..n`.
    pub fn from_rows(category: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Invalid(format!(
                    "row {i} has {} columns, expected {d}",
                    r.len()
                )));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::new(category, n, d, data, ids)
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// All rows widened to f64.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row_f64(i)).collect()
    }

    /// N×d f64 matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.d, |i, j| f64::from(self.data[i * self.d + j]))
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = category.into();
        self
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::Invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
            ids.push(self.sample_ids[i].clone());
        }
        Self::new(self.category.clone(), indices.len(), self.d, data, ids)
    }

    /// Copy with every row scaled to unit L2 norm; zero rows stay zero.
    pub fn normalized_rows(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.d) {
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        out
    }

    fn header(&self) -> RepbHeader {
        RepbHeader {
            n: self.n,
            d: self.d,
            category: Some(self.category.clone()),
            ids: Some(self.sample_ids.clone()),
            ..Default::default()
        }
    }

    /// REPB bytes for this set.
    pub fn to_repb_bytes(&self) -> Vec<u8> {
        encode_repb(&self.header(), &self.data)
    }

    /// CSV text for this set (ids and category are not representable).
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn load_representations(path: &Path, format: Format) -> Result<RepresentationSet> {
    match format {
        Format::Repb => {
            let (h, values) = read_repb(path, |h| h.n * h.d)?;
            if h.kind.as_deref().is_some_and(|k| k != "representations") {
                return Err(Error::format(
                    path,
                    format!("expected a representation set, found kind '{}'", h.kind.unwrap()),
                ));
            }
            check_finite(path, &values, h.d)?;
            let ids = h
                .ids
                .unwrap_or_else(|| (0..h.n).map(|i| i.to_string()).collect());
            let category = h.category.unwrap_or_else(|| file_stem(path));
            RepresentationSet::new(category, h.n, h.d, values, ids)
                .map_err(|e| Error::format(path, e.to_string()))
        }
        Format::Csv => load_csv(path),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unnamed")
        .to_string()
}

fn load_csv(path: &Path) -> Result<RepresentationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut d = 0usize;
    let mut n = 0usize;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = 0usize;
        for (col, field) in line.split(',').enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::format(
                    path,
                    format!("cannot parse '{}' at row {row}, column {col}", field.trim()),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("non-finite value at row {row}, column {col}"),
                ));
            }
            data.push(v);
            cols += 1;
        }
        if n == 0 {
            d = cols;
        } else if cols != d {
            return Err(Error::format(
                path,
                format!("row {row} has {cols} columns, expected {d}"),
            ));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::format(path, "no rows"));
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    RepresentationSet::new(file_stem(path), n, d, data, ids)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_representations(set: &RepresentationSet, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Repb => write_bytes(path, &set.to_repb_bytes()),
        Format::Csv => write_bytes(path, set.to_csv_string().as_bytes()),
    }
}

// ---------------------------------------------------------------------------
// VocabHead
// ---------------------------------------------------------------------------

/// Output projection `W` (|V|×d) and bias `b`, with a name per row. Values
/// are held in f64; files carry f32.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabHead {
    vocab: usize,
    d: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    has_bias: bool,
    token_names: Vec<String>,
    index: HashMap<String, usize>,
}

impl VocabHead {
    pub fn new(
        vocab: usize,
        d: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        token_names: Vec<String>,
    ) -> Result<Self> {
        Self::from_f64(
            vocab,
            d,
            weights.into_iter().map(f64::from).collect(),
            bias.map(|b| b.into_iter().map(f64::from).collect()),
            token_names,
        )
    }

    pub fn from_f64(
        vocab: usize,
        d: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
        token_names: Vec<String>,
    ) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::Invalid(format!("vocabulary size {vocab} < 2")));
        }
        if d == 0 {
            return Err(Error::Invalid("head dimension is zero".into()));
        }
        if weights.len() != vocab * d {
            return Err(Error::DimensionMismatch {
                expected: vocab * d,
                actual: weights.len(),
            });
        }
        if token_names.len() != vocab {
            return Err(Error::Invalid(format!(
                "{} token names for {vocab} rows",
                token_names.len()
            )));
        }
        if let Some(pos) = weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        let has_bias = bias.is_some();
        let bias = bias.unwrap_or_else(|| vec![0.0; vocab]);
        if bias.len() != vocab {
            return Err(Error::DimensionMismatch {
                expected: vocab,
                actual: bias.len(),
            });
        }
        if let Some(pos) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos, col: 0 });
        }
        let mut index = HashMap::with_capacity(vocab);
        for (i, name) in token_names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate token name '{name}'")));
            }
        }
        Ok(Self {
            vocab,
            d,
            weights,
            bias,
            has_bias,
            token_names,
            index,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    /// Row-major `W`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn token_names(&self) -> &[String] {
        &self.token_names
    }

    pub fn token_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).to_vec()
    }

    /// `W·h + b`.
    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: h.len(),
            });
        }
        Ok((0..self.vocab)
            .map(|i| self.row(i).iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.bias[i])
            .collect())
    }

    /// |V|×d matrix of `W`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.vocab, self.d, &self.weights)
    }

    pub fn to_repb_bytes(&self) -> Vec<u8> {
        let header = RepbHeader {
            kind: Some("head".into()),
            n: self.vocab,
            d: self.d,
            tokens: Some(self.token_names.clone()),
            bias: Some(self.has_bias),
            ..Default::default()
        };
        let mut payload: Vec<f32> = self.weights.iter().map(|&v| v as f32).collect();
        if self.has_bias {
            payload.extend(self.bias.iter().map(|&v| v as f32));
        }
        encode_repb(&header, &payload)
    }
}

pub fn load_vocab_head(path: &Path) -> Result<VocabHead> {
    let (h, mut values) = read_repb(path, |h| {
        h.n * h.d + if h.bias.unwrap_or(false) { h.n } else { 0 }
    })?;
    if h.kind.as_deref() != Some("head") {
        return Err(Error::format(path, "header kind is not 'head'"));
    }
    let tokens = h
        .tokens
        .ok_or_else(|| Error::format(path, "head file lacks a token-name section"))?;
    check_finite(path, &values, h.d)?;
    let bias = if h.bias.unwrap_or(false) {
        Some(values.split_off(h.n * h.d))
    } else {
        None
    };
    VocabHead::new(h.n, h.d, values, bias, tokens).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_vocab_head(head: &VocabHead, path: &Path) -> Result<()> {
    write_bytes(path, &head.to_repb_bytes())
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub category: String,
    pub path: PathBuf,
    pub format: Format,
}

/// Index of category files plus an optional head. Relative paths resolve
/// against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub head: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, head: Option<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            head,
            base_dir: PathBuf::new(),
        };
        m.check_categories()?;
        Ok(m)
    }

    fn check_categories(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.category.as_str()) {
                return Err(Error::Config(format!(
                    "category '{}' listed twice in manifest",
                    e.category
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("malformed manifest: {e}")))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_categories()?;
        for e in &m.entries {
            let p = m.resolve(&e.path);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry missing"),
                ));
            }
        }
        if let Some(h) = &m.head {
            let p = m.resolve(h);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest head missing"),
                ));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn categories(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.category.as_str()).collect()
    }

    /// Load every entry; the manifest's category name wins over the file's.
    pub fn load_sets(&self) -> Result<Vec<RepresentationSet>> {
        self.entries
            .iter()
            .map(|e| {
                load_representations(&self.resolve(&e.path), e.format)
                    .map(|s| s.with_category(e.category.clone()))
            })
            .collect()
    }

    pub fn load_head(&self) -> Result<Option<VocabHead>> {
        self.head
            .as_ref()
            .map(|h| load_vocab_head(&self.resolve(h)))
            .transpose()
    }
}

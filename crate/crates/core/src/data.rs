//! Domain types and file ingestion.
//!
//! Embeddings are exchanged in one of two formats:
//!
//! - CSV: a header line `lang=<code>,n=<rows>,d=<cols>` followed by `n` rows of `d`
//!   comma-separated floats.
//! - Binary: the magic bytes `XLG1`, then `n` and `d` as little-endian `u32`, then
//!   `n * d` little-endian IEEE-754 `f32` values in row-major order. The language is
//!   taken from the file name (`eng.xlg` is `eng`).
//!
//! Both formats carry 32-bit values; CSV fields are parsed at `f32` precision so the two
//! readers agree exactly on identical content. Arithmetic downstream is `f64`.
//!
//! Probability sets use the CSV layout with `k` in place of `d` and are parsed at full
//! `f64` precision, since rows must sum to one within `1e-9`.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::ops::Index;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"XLG1";
const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Lowercase ISO-639-3 style language tag such as `eng` or `swa`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let valid = !code.is_empty()
            && code
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
        if valid {
            Ok(Self(code))
        } else {
            Err(Error::InvalidLanguage(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Language named by a file stem: everything before the first `.`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidLanguage(path.display().to_string()))?;
        let stem = name.split('.').next().unwrap_or_default();
        Self::new(stem)
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for LanguageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl Serialize for LanguageId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for LanguageId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LanguageId::new(s).map_err(de::Error::custom)
    }
}

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Invalid(format!(
                "matrix of {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Invalid(format!(
                    "ragged rows: row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in dst.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

/// Sentence representations for one language, one row per sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    language: LanguageId,
    matrix: Matrix,
}

impl EmbeddingSet {
    pub fn new(language: LanguageId, matrix: Matrix) -> Result<Self> {
        if matrix.rows() < 2 {
            return Err(Error::Invalid(format!(
                "embedding set {language} needs at least 2 rows, got {}",
                matrix.rows()
            )));
        }
        if matrix.cols() < 1 {
            return Err(Error::Invalid(format!(
                "embedding set {language} has zero columns"
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::Invalid(format!(
                "embedding set {language} contains non-finite values"
            )));
        }
        Ok(Self { language, matrix })
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }
}

/// Token vectors of a single sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequenceEmbedding {
    tokens: Vec<Vec<f64>>,
}

impl TokenSequenceEmbedding {
    pub fn new(tokens: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = tokens.first() else {
            return Err(Error::Invalid("token sequence is empty".into()));
        };
        let d = first.len();
        if let Some(i) = tokens.iter().position(|t| t.len() != d) {
            return Err(Error::Invalid(format!(
                "token {i} has dimension {}, expected {d}",
                tokens[i].len()
            )));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[Vec<f64>] {
        &self.tokens
    }
}

/// Component-wise mean of the token vectors.
pub fn mean_pool(seq: &TokenSequenceEmbedding) -> Result<Vec<f64>> {
    let tokens = seq.tokens();
    let Some(first) = tokens.first() else {
        return Err(Error::Invalid("cannot pool an empty token sequence".into()));
    };
    let mut acc = vec![0.0; first.len()];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    let len = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= len);
    Ok(acc)
}

/// Class-probability rows for one language.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilitySet {
    language: LanguageId,
    rows: Matrix,
}

impl ProbabilitySet {
    pub fn new(language: LanguageId, rows: Matrix) -> Result<Self> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(Error::Invalid(format!(
                "probability set {language} is empty"
            )));
        }
        for (i, row) in rows.iter_rows().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Invalid(format!(
                    "probability set {language}, row {i}: entry {v} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::Invalid(format!(
                    "probability set {language}, row {i}: sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { language, rows })
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.rows()
    }

    pub fn k(&self) -> usize {
        self.rows.cols()
    }
}

/// Downstream scores per language, on the percentage scale, in input order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScoreTable {
    entries: IndexMap<LanguageId, f64>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a score; duplicates and non-finite scores are rejected.
    pub fn insert(&mut self, language: LanguageId, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Invalid(format!(
                "score for {language} is not finite"
            )));
        }
        if self.entries.contains_key(&language) {
            return Err(Error::Invalid(format!("duplicate language {language}")));
        }
        self.entries.insert(language, score);
        Ok(())
    }

    pub fn get(&self, language: &LanguageId) -> Option<f64> {
        self.entries.get(language).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageId> + '_ {
        self.entries.keys()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LanguageId, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (k, *v))
    }
}

impl FromIterator<(LanguageId, f64)> for ScoreTable {
    /// Panics on duplicate languages or non-finite scores; use [`ScoreTable::insert`] for
    /// fallible construction.
    fn from_iter<I: IntoIterator<Item = (LanguageId, f64)>>(iter: I) -> Self {
        let mut table = ScoreTable::new();
        for (lang, score) in iter {
            table.insert(lang, score).expect("valid score entry");
        }
        table
    }
}

impl<'de> Deserialize<'de> for ScoreTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct TableVisitor;

        impl<'de> Visitor<'de> for TableVisitor {
            type Value = ScoreTable;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a flat object mapping language codes to numbers")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<ScoreTable, A::Error> {
                let mut table = ScoreTable::new();
                while let Some(key) = map.next_key::<String>()? {
                    let lang = LanguageId::new(key).map_err(de::Error::custom)?;
                    let score: f64 = map.next_value()?;
                    table.insert(lang, score).map_err(de::Error::custom)?;
                }
                Ok(table)
            }
        }

        deserializer.deserialize_map(TableVisitor)
    }
}

/// Reads a score JSON file: a flat object of language code to number.
pub fn load_scores(path: &Path) -> Result<ScoreTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::parse(path, line, msg),
        other => other,
    })
}

pub fn parse_scores(text: &str) -> Result<ScoreTable> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<scores>".into(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Embedding file encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Csv,
    Binary,
}

impl EmbeddingFormat {
    /// `.xlg` and `.bin` are binary, anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xlg") | Some("bin") => EmbeddingFormat::Binary,
            _ => EmbeddingFormat::Csv,
        }
    }
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    match format {
        EmbeddingFormat::Csv => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let (lang, matrix) = parse_header_csv(&text, "d", Precision::Single)
                .map_err(|(line, msg)| Error::parse(path, line, msg))?;
            EmbeddingSet::new(lang, matrix)
        }
        EmbeddingFormat::Binary => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let lang = LanguageId::from_path(path)?;
            let matrix = decode_binary(&bytes).map_err(|(offset, msg)| Error::Binary {
                path: path.display().to_string(),
                offset,
                msg,
            })?;
            EmbeddingSet::new(lang, matrix)
        }
    }
}

/// Parses embedding CSV text held in memory.
pub fn parse_embeddings_csv(text: &str) -> Result<EmbeddingSet> {
    let (lang, matrix) = parse_header_csv(text, "d", Precision::Single)
        .map_err(|(line, msg)| Error::parse(Path::new("<csv>"), line, msg))?;
    EmbeddingSet::new(lang, matrix)
}

/// Decodes the binary embedding layout for a language supplied by the caller.
pub fn decode_embeddings_binary(bytes: &[u8], language: LanguageId) -> Result<EmbeddingSet> {
    let matrix = decode_binary(bytes).map_err(|(offset, msg)| Error::Binary {
        path: "<binary>".into(),
        offset,
        msg,
    })?;
    EmbeddingSet::new(language, matrix)
}

/// Reads a probability CSV (`lang=<code>,n=<rows>,k=<classes>` header).
pub fn load_probabilities(path: &Path) -> Result<ProbabilitySet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (lang, matrix) = parse_header_csv(&text, "k", Precision::Double)
        .map_err(|(line, msg)| Error::parse(path, line, msg))?;
    ProbabilitySet::new(lang, matrix)
}

#[derive(Clone, Copy)]
enum Precision {
    Single,
    Double,
}

type LineError = (usize, String);

fn parse_header_csv(
    text: &str,
    width_key: &str,
    precision: Precision,
) -> std::result::Result<(LanguageId, Matrix), LineError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| (1, "missing header line".to_string()))?;

    let mut lang = None;
    let mut rows = None;
    let mut width = None;
    for field in header.trim().split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| (1, format!("malformed header field {field:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let parse_dim = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| (1, format!("header field {key} is not a count: {v:?}")))
        };
        match key {
            "lang" => lang = Some(LanguageId::new(value).map_err(|e| (1, e.to_string()))?),
            "n" => rows = Some(parse_dim(value)?),
            k if k == width_key => width = Some(parse_dim(value)?),
            other => return Err((1, format!("unknown header field {other:?}"))),
        }
    }
    let lang = lang.ok_or_else(|| (1, "header lacks lang=".to_string()))?;
    let rows = rows.ok_or_else(|| (1, "header lacks n=".to_string()))?;
    let width = width.ok_or_else(|| (1, format!("header lacks {width_key}=")))?;

    let mut data = Vec::with_capacity(rows.saturating_mul(width));
    let mut seen = 0usize;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err((line_no, format!("more than the declared {rows} rows")));
        }
        let before = data.len();
        for field in line.split(',') {
            let field = field.trim();
            let value = match precision {
                Precision::Single => field.parse::<f32>().map(f64::from).ok(),
                Precision::Double => field.parse::<f64>().ok(),
            }
            .ok_or_else(|| (line_no, format!("not a number: {field:?}")))?;
            if !value.is_finite() {
                return Err((line_no, format!("non-finite value {field:?}")));
            }
            data.push(value);
        }
        let got = data.len() - before;
        if got != width {
            return Err((line_no, format!("expected {width} values, got {got}")));
        }
        seen += 1;
    }
    if seen != rows {
        let last = text.lines().count().max(1);
        return Err((last, format!("declared {rows} rows, found {seen}")));
    }
    let matrix = Matrix::new(rows, width, data).map_err(|e| (1, e.to_string()))?;
    Ok((lang, matrix))
}

fn decode_binary(bytes: &[u8]) -> std::result::Result<Matrix, (usize, String)> {
    if bytes.len() < 12 {
        return Err((bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err((0, "bad magic, expected XLG1".into()));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let rows = read_u32(4);
    let cols = read_u32(8);
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| (4, "dimensions overflow".to_string()))?;
    let body = &bytes[12..];
    if body.len() != count * 4 {
        return Err((
            12 + body.len().min(count * 4),
            format!(
                "expected {} payload bytes for {rows}x{cols}, found {}",
                count * 4,
                body.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err((12 + 4 * i, format!("non-finite value {v}")));
        }
        data.push(f64::from(v));
    }
    Matrix::new(rows, cols, data).map_err(|e| (0, e.to_string()))
}

/// Encodes the binary layout. Values are narrowed to `f32`.
pub fn encode_embeddings_binary(set: &EmbeddingSet) -> Vec<u8> {
    let m = set.matrix();
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Encodes the CSV layout. Values are narrowed to `f32` and printed in shortest
/// round-trip form.
pub fn encode_embeddings_csv(set: &EmbeddingSet) -> String {
    let m = set.matrix();
    let mut out = format!("lang={},n={},d={}\n", set.language(), m.rows(), m.cols());
    for row in m.iter_rows() {
        let fields: Vec<String> = row.iter().map(|v| (*v as f32).to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Encodes a probability set as CSV at full precision.
pub fn encode_probabilities_csv(set: &ProbabilitySet) -> String {
    let m = set.rows();
    let mut out = format!("lang={},n={},k={}\n", set.language(), m.rows(), m.cols());
    for row in m.iter_rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Rejects repeated languages among a list of sets.
pub(crate) fn ensure_distinct<'a>(langs: impl IntoIterator<Item = &'a LanguageId>) -> Result<()> {
    let mut seen = HashSet::new();
    for lang in langs {
        if !seen.insert(lang) {
            return Err(Error::Invalid(format!("language {lang} appears twice")));
        }
    }
    Ok(())
}

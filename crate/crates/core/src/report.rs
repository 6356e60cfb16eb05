//! The aggregated gap report, its JSON form, the CKA heatmap CSV and directory runs.
//!
//! A report directory holds:
//!
//! - `scores.json`: language code to task score; its key order fixes the language order;
//! - `<lang>.csv` or `<lang>.xlg` per language: row-aligned sentence embeddings;
//! - optionally `<lang>.probs.csv` for every language: output probabilities, which add a
//!   Sinkhorn matrix to the report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_embeddings, load_probabilities, load_scores, write_atomic, EmbeddingFormat, EmbeddingSet,
    LanguageId, ProbabilitySet, ScoreTable,
};
use crate::error::{Error, Result};
use crate::gap::{pairwise_cka, rpd_matrix, score_spread, Centering, PairwiseMatrix};
use crate::transport::{pairwise_sinkhorn, SinkhornConfig};

pub const SCORES_FILE: &str = "scores.json";
pub const PROBABILITIES_SUFFIX: &str = ".probs.csv";

const DIAGONAL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub languages: Vec<LanguageId>,
    pub rpd: Vec<Vec<f64>>,
    pub std: f64,
    pub mean_rpd: f64,
    pub cka: Vec<Vec<f64>>,
    pub sinkhorn: Option<Vec<Vec<f64>>>,
    pub meta: ReportMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub centering: Centering,
    /// Mean of the off-diagonal CKA entries.
    pub mean_cka: f64,
    /// Sentences per language.
    pub sentences: usize,
    pub sinkhorn: Option<SinkhornMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornMeta {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Pairs whose solver stopped before reaching the tolerance.
    pub unconverged: Vec<[LanguageId; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReportOptions {
    pub centering: Centering,
    pub sinkhorn: SinkhornConfig,
}

impl GapReport {
    /// Computes every report entry. `embeddings` (and `probabilities`, when given) must
    /// list the score table's languages in the same order.
    pub fn compute(
        scores: &ScoreTable,
        embeddings: &[EmbeddingSet],
        probabilities: Option<&[ProbabilitySet]>,
        options: &ReportOptions,
    ) -> Result<Self> {
        let languages: Vec<LanguageId> = scores.languages().cloned().collect();
        let order_matches = |langs: Vec<&LanguageId>| {
            langs.len() == languages.len() && langs.iter().zip(&languages).all(|(a, b)| *a == b)
        };
        if !order_matches(embeddings.iter().map(|e| e.language()).collect()) {
            return Err(Error::Invalid(
                "embedding languages do not match the score table".into(),
            ));
        }
        let spread = score_spread(scores)?;
        let rpd = rpd_matrix(scores)?;
        let cka = pairwise_cka(embeddings, options.centering)?;

        let (sinkhorn, sinkhorn_meta) = match probabilities {
            Some(probs) => {
                if !order_matches(probs.iter().map(|p| p.language()).collect()) {
                    return Err(Error::Invalid(
                        "probability languages do not match the score table".into(),
                    ));
                }
                let result = pairwise_sinkhorn(probs, &options.sinkhorn)?;
                let meta = SinkhornMeta {
                    epsilon: options.sinkhorn.epsilon,
                    max_iters: options.sinkhorn.max_iters,
                    tolerance: options.sinkhorn.tolerance,
                    unconverged: result.unconverged().map(|p| p.pair.clone()).collect(),
                };
                (Some(result.matrix.into_values()), Some(meta))
            }
            None => (None, None),
        };

        let report = GapReport {
            languages,
            rpd: rpd.into_values(),
            std: spread.std,
            mean_rpd: spread.mean_rpd,
            cka: cka.matrix.into_values(),
            sinkhorn,
            meta: ReportMeta {
                centering: options.centering,
                mean_cka: cka.mean,
                sentences: embeddings[0].n(),
                sinkhorn: sinkhorn_meta,
            },
        };
        report.validate()?;
        Ok(report)
    }

    /// Checks shapes, finiteness, symmetry and the diagonal conventions
    /// (0 for RPD and Sinkhorn, 1 for CKA).
    pub fn validate(&self) -> Result<()> {
        let n = self.languages.len();
        if n < 2 {
            return Err(Error::Invalid(format!(
                "report needs at least 2 languages, got {n}"
            )));
        }
        crate::data::ensure_distinct(&self.languages)?;
        check_matrix("rpd", &self.rpd, n, 0.0)?;
        check_matrix("cka", &self.cka, n, 1.0)?;
        if let Some(s) = &self.sinkhorn {
            check_matrix("sinkhorn", s, n, 0.0)?;
        }
        if self.sinkhorn.is_some() != self.meta.sinkhorn.is_some() {
            return Err(Error::Invalid(
                "sinkhorn matrix and sinkhorn metadata must appear together".into(),
            ));
        }
        for (name, v) in [
            ("std", self.std),
            ("mean_rpd", self.mean_rpd),
            ("mean_cka", self.meta.mean_cka),
        ] {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    pub fn cka_matrix(&self) -> PairwiseMatrix {
        PairwiseMatrix::new(self.languages.clone(), self.cka.clone()).expect("validated report")
    }

    pub fn rpd_matrix(&self) -> PairwiseMatrix {
        PairwiseMatrix::new(self.languages.clone(), self.rpd.clone()).expect("validated report")
    }

    pub fn sinkhorn_matrix(&self) -> Option<PairwiseMatrix> {
        self.sinkhorn.as_ref().map(|s| {
            PairwiseMatrix::new(self.languages.clone(), s.clone()).expect("validated report")
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

fn check_matrix(name: &str, m: &[Vec<f64>], n: usize, diagonal: f64) -> Result<()> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::Invalid(format!("{name} matrix is not {n} x {n}")));
    }
    for i in 0..n {
        if (m[i][i] - diagonal).abs() > DIAGONAL_TOLERANCE {
            return Err(Error::Invalid(format!(
                "{name} diagonal entry {i} is {}, expected {diagonal}",
                m[i][i]
            )));
        }
        for j in 0..n {
            if !m[i][j].is_finite() {
                return Err(Error::Invalid(format!("{name}[{i}][{j}] is not finite")));
            }
            if m[i][j] != m[j][i] {
                return Err(Error::Invalid(format!(
                    "{name} matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Writes the report as pretty-printed JSON, atomically.
pub fn write_report(report: &GapReport, path: &Path) -> Result<()> {
    report.validate()?;
    write_atomic(path, report.to_json().as_bytes())
}

pub fn read_report(path: &Path) -> Result<GapReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: GapReport =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    report.validate()?;
    Ok(report)
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed, exponent
/// notation below `1e-4` and from `1e6` on.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let fixed = format!("{:.*}", (5 - exp) as usize, v);
        trim_fraction(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Heatmap CSV: header `lang_i,lang_j,<value_name>`, one row per unordered pair in input
/// order, values at six significant digits.
pub fn heatmap_csv(matrix: &PairwiseMatrix, value_name: &str) -> String {
    let mut out = format!("lang_i,lang_j,{value_name}\n");
    for (a, b, v) in matrix.upper_triangle() {
        out.push_str(&format!("{a},{b},{}\n", format_g6(v)));
    }
    out
}

/// Writes the CKA heatmap CSV atomically.
pub fn emit_heatmap(matrix: &PairwiseMatrix, path: &Path) -> Result<()> {
    write_atomic(path, heatmap_csv(matrix, "cka").as_bytes())
}

/// Input files found in a report directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportInputs {
    pub scores: ScoreTable,
    pub embeddings: Vec<EmbeddingSet>,
    pub probabilities: Option<Vec<ProbabilitySet>>,
}

/// Loads `scores.json`, one embedding file per scored language and, if present for every
/// language, its probability file.
pub fn load_dir(dir: &Path) -> Result<ReportInputs> {
    let scores = load_scores(&dir.join(SCORES_FILE))?;
    let mut embeddings = Vec::with_capacity(scores.len());
    let mut probabilities = Vec::new();
    let mut missing_probs = Vec::new();
    for lang in scores.languages() {
        let candidates: Vec<_> = ["csv", "xlg"]
            .iter()
            .map(|ext| dir.join(format!("{lang}.{ext}")))
            .filter(|p| p.is_file())
            .collect();
        let path = match candidates.as_slice() {
            [one] => one,
            [] => {
                return Err(Error::Invalid(format!(
                    "no embedding file {lang}.csv or {lang}.xlg in {}",
                    dir.display()
                )))
            }
            _ => {
                return Err(Error::Invalid(format!(
                    "both {lang}.csv and {lang}.xlg exist in {}",
                    dir.display()
                )))
            }
        };
        let set = load_embeddings(path, EmbeddingFormat::from_path(path))?;
        if set.language() != lang {
            return Err(Error::Invalid(format!(
                "{} declares language {}, expected {lang}",
                path.display(),
                set.language()
            )));
        }
        embeddings.push(set);

        let probs = dir.join(format!("{lang}{PROBABILITIES_SUFFIX}"));
        if probs.is_file() {
            let set = load_probabilities(&probs)?;
            if set.language() != lang {
                return Err(Error::Invalid(format!(
                    "{} declares language {}, expected {lang}",
                    probs.display(),
                    set.language()
                )));
            }
            probabilities.push(set);
        } else {
            missing_probs.push(lang.to_string());
        }
    }
    let probabilities = if missing_probs.is_empty() {
        Some(probabilities)
    } else if probabilities.is_empty() {
        None
    } else {
        return Err(Error::Invalid(format!(
            "probability files missing for {}; provide them for every language or none",
            missing_probs.join(", ")
        )));
    };
    Ok(ReportInputs {
        scores,
        embeddings,
        probabilities,
    })
}

/// [`load_dir`] followed by [`GapReport::compute`].
pub fn build_from_dir(dir: &Path, options: &ReportOptions) -> Result<GapReport> {
    let inputs = load_dir(dir)?;
    GapReport::compute(
        &inputs.scores,
        &inputs.embeddings,
        inputs.probabilities.as_deref(),
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;

    fn lang(s: &str) -> LanguageId {
        LanguageId::new(s).unwrap()
    }

    fn langs(n: usize) -> Vec<LanguageId> {
        (0..n).map(|i| lang(&format!("l{i}"))).collect()
    }

    fn embeddings(code: &str, rows: &[Vec<f64>]) -> EmbeddingSet {
        EmbeddingSet::new(lang(code), Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn two_language_report() -> GapReport {
        let scores: ScoreTable = [(lang("eng"), 80.8), (lang("swa"), 62.93)]
            .into_iter()
            .collect();
        let sets = vec![
            embeddings("eng", &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]),
            embeddings("swa", &[vec![2.0, 1.0], vec![0.5, 1.0], vec![1.0, 3.0]]),
        ];
        GapReport::compute(&scores, &sets, None, &ReportOptions::default()).unwrap()
    }

    #[test]
    fn two_language_shapes() {
        let r = two_language_report();
        assert_eq!(r.cka.len(), 2);
        assert_eq!(r.cka[0][0], 1.0);
        assert_eq!(r.cka[1][1], 1.0);
        assert_eq!(r.rpd[0][0], 0.0);
        assert!((r.rpd[0][1] - 24.866).abs() < 1e-3);
        assert_eq!(r.meta.mean_cka, r.cka[0][1]);
        assert!(r.sinkhorn.is_none());
        let json = r.to_json();
        let keys: Vec<usize> = [
            "\"languages\"",
            "\"rpd\"",
            "\"std\"",
            "\"mean_rpd\"",
            "\"cka\"",
            "\"sinkhorn\"",
            "\"meta\"",
        ]
        .iter()
        .map(|k| json.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let r = two_language_report();
        write_report(&r, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.cka[0][1].to_bits(), r.cka[0][1].to_bits());
        assert_eq!(back.std.to_bits(), r.std.to_bits());
    }

    #[test]
    fn validation_rejects_broken_reports() {
        let good = two_language_report();
        let mut r = good.clone();
        r.cka[0][0] = 0.9;
        assert!(r.validate().is_err());
        let mut r = good.clone();
        r.rpd[0][1] = 1.0;
        assert!(r.validate().is_err());
        let mut r = good.clone();
        r.sinkhorn = Some(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(r.validate().is_err());
        let mut r = good;
        r.std = f64::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn write_to_missing_directory_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent").join("report.json");
        assert!(matches!(
            write_report(&two_language_report(), &path),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn g6_formatting() {
        for (v, s) in [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (0.123456789, "0.123457"),
            (0.9999996, "1"),
            (123456.7, "123457"),
            (999999.6, "1e+06"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234567, "1.23457e-05"),
            (-0.25, "-0.25"),
            (100.0, "100"),
        ] {
            assert_eq!(format_g6(v), s, "{v}");
        }
    }

    #[test]
    fn heatmap_rows() {
        let m = PairwiseMatrix::from_upper(langs(2), 1.0, &[0.5]).unwrap();
        assert_eq!(heatmap_csv(&m, "cka"), "lang_i,lang_j,cka\nl0,l1,0.5\n");

        let upper: Vec<f64> = (0..45).map(|k| k as f64 / 45.0).collect();
        let m = PairwiseMatrix::from_upper(langs(10), 1.0, &upper).unwrap();
        let csv = heatmap_csv(&m, "cka");
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 45);
        let mut pairs: Vec<(&str, &str)> = rows
            .iter()
            .map(|r| {
                let mut f = r.split(',');
                (f.next().unwrap(), f.next().unwrap())
            })
            .collect();
        assert!(pairs.iter().all(|(a, b)| a != b));
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 45);
        assert!(rows[0].starts_with("l0,l1,"));
        assert!(rows[44].starts_with("l8,l9,"));
    }
}

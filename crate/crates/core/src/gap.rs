//! Performance gaps (relative percentage difference) and representation gaps (linear CKA).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ensure_distinct, EmbeddingSet, LanguageId, Matrix, ScoreTable};
use crate::error::{Error, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Relative percentage difference `|a - b| / ((a + b) / 2) * 100`.
///
/// Scores must be non-negative and not both zero. The result lies in `[0, 200]`.
pub fn rpd(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "scores must be finite, got {a} and {b}"
        )));
    }
    if a < 0.0 || b < 0.0 {
        return Err(Error::Domain(format!(
            "scores must be non-negative, got {a} and {b}"
        )));
    }
    let mean = 0.5 * (a + b);
    if mean == 0.0 {
        return Err(Error::UndefinedGap);
    }
    Ok((a - b).abs() / mean * 100.0)
}

/// Spread of a score table: sample standard deviation on the fraction scale and the mean
/// RPD over unordered language pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub std: f64,
    pub mean_rpd: f64,
}

pub fn score_spread(table: &ScoreTable) -> Result<Spread> {
    let n = table.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "score spread needs at least 2 languages, got {n}"
        )));
    }
    let fractions: Vec<f64> = table.scores().map(|s| s / 100.0).collect();
    let mean = fractions.iter().sum::<f64>() / n as f64;
    let ss: f64 = fractions.iter().map(|x| (x - mean) * (x - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();

    let scores: Vec<f64> = table.scores().collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += rpd(scores[i], scores[j])?;
            pairs += 1;
        }
    }
    Ok(Spread {
        std,
        mean_rpd: total / pairs as f64,
    })
}

/// Symmetric language-by-language matrix with a fixed diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    languages: Vec<LanguageId>,
    values: Vec<Vec<f64>>,
}

impl PairwiseMatrix {
    /// Builds the matrix from upper-triangle entries in row-major order
    /// (`(0,1), (0,2), …, (1,2), …`).
    pub fn from_upper(languages: Vec<LanguageId>, diagonal: f64, upper: &[f64]) -> Result<Self> {
        let n = languages.len();
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::Invalid(format!(
                "{} upper-triangle values for {n} languages",
                upper.len()
            )));
        }
        let mut values = vec![vec![diagonal; n]; n];
        let mut it = upper.iter();
        for i in 0..n {
            for j in i + 1..n {
                let v = *it.next().unwrap();
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        Ok(Self { languages, values })
    }

    /// Wraps an explicit matrix after checking shape and symmetry.
    pub fn new(languages: Vec<LanguageId>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = languages.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid(format!("pairwise matrix is not {n}x{n}")));
        }
        let m = Self { languages, values };
        if !m.is_symmetric() {
            return Err(Error::Invalid("pairwise matrix is not symmetric".into()));
        }
        Ok(m)
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.languages
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            (i + 1..n).all(|j| (self.values[i][j] - self.values[j][i]).abs() <= SYMMETRY_TOLERANCE)
        })
    }

    /// Unordered pairs `i < j` in input order.
    pub fn upper_triangle(&self) -> impl Iterator<Item = (&LanguageId, &LanguageId, f64)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| {
            (i + 1..n).map(move |j| (&self.languages[i], &self.languages[j], self.values[i][j]))
        })
    }

    /// Mean of the off-diagonal entries; `None` for fewer than two languages.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let (sum, count) = self
            .upper_triangle()
            .fold((0.0, 0usize), |(s, c), (_, _, v)| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    pub fn into_values(self) -> Vec<Vec<f64>> {
        self.values
    }
}

/// RPD for every unordered pair of the table, zero diagonal.
pub fn rpd_matrix(table: &ScoreTable) -> Result<PairwiseMatrix> {
    let langs: Vec<LanguageId> = table.languages().cloned().collect();
    let scores: Vec<f64> = table.scores().collect();
    let mut upper = Vec::new();
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            upper
                .push(rpd(scores[i], scores[j]).map_err(|e| Error::pair(&langs[i], &langs[j], e))?);
        }
    }
    PairwiseMatrix::from_upper(langs, 0.0, &upper)
}

/// Whether features are column-centered before alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    #[default]
    Centered,
    Uncentered,
}

/// Linear CKA between two row-aligned embedding sets, with column centering.
pub fn linear_cka(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<f64> {
    linear_cka_with(x.matrix(), y.matrix(), Centering::Centered).map_err(|e| match e {
        Error::Alignment { expected, got, .. } => Error::Alignment {
            language: y.language().to_string(),
            expected,
            got,
        },
        other => other,
    })
}

/// `‖XᵀY‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on raw matrices.
///
/// When there are fewer rows than columns the Frobenius norms are evaluated through the
/// `n × n` Gram matrices instead, using `‖AᵀB‖²_F = ⟨AAᵀ, BBᵀ⟩_F`.
pub fn linear_cka_with(x: &Matrix, y: &Matrix, centering: Centering) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::Alignment {
            language: "<y>".into(),
            expected: x.rows(),
            got: y.rows(),
        });
    }
    if x.rows() == 0 || x.cols() == 0 || y.cols() == 0 {
        return Err(Error::Degenerate("empty feature matrix".into()));
    }
    let (x, y) = match centering {
        Centering::Centered => (center_columns(x), center_columns(y)),
        Centering::Uncentered => (x.clone(), y.clone()),
    };
    if x.as_slice().iter().all(|v| *v == 0.0) || y.as_slice().iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate(
            "feature matrix has zero variance after centering".into(),
        ));
    }

    let (cross, xx, yy) = if x.rows() < x.cols().max(y.cols()) {
        let kx = gram_rows(&x);
        let ky = gram_rows(&y);
        (
            frobenius_inner(&kx, &ky),
            frobenius_inner(&kx, &kx),
            frobenius_inner(&ky, &ky),
        )
    } else {
        let xty = cross_cols(&x, &y);
        let sq = |m: &Matrix| m.as_slice().iter().map(|v| v * v).sum::<f64>();
        (sq(&xty), sq(&cross_cols(&x, &x)), sq(&cross_cols(&y, &y)))
    };
    let denom = xx.sqrt() * yy.sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Degenerate("zero self-similarity".into()));
    }
    Ok(cross / denom)
}

fn center_columns(m: &Matrix) -> Matrix {
    let (n, d) = (m.rows(), m.cols());
    let mut means = vec![0.0; d];
    for row in m.iter_rows() {
        for (acc, v) in means.iter_mut().zip(row) {
            *acc += v;
        }
    }
    means.iter_mut().for_each(|v| *v /= n as f64);
    let mut out = m.clone();
    for chunk in out.as_mut_slice().chunks_mut(d) {
        for (v, mu) in chunk.iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    out
}

/// `AᵀB`, accumulated row by row.
fn cross_cols(a: &Matrix, b: &Matrix) -> Matrix {
    let (da, db) = (a.cols(), b.cols());
    let mut out = vec![0.0; da * db];
    for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
        for (p, va) in ra.iter().enumerate() {
            let dst = &mut out[p * db..(p + 1) * db];
            for (o, vb) in dst.iter_mut().zip(rb) {
                *o += va * vb;
            }
        }
    }
    Matrix::new(da, db, out).expect("shape")
}

/// `AAᵀ`.
fn gram_rows(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = a.row(i).iter().zip(a.row(j)).map(|(p, q)| p * q).sum();
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Matrix::new(n, n, out).expect("shape")
}

fn frobenius_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| p * q)
        .sum()
}

/// Pairwise CKA over several languages plus the mean of the off-diagonal entries.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseCka {
    pub matrix: PairwiseMatrix,
    pub mean: f64,
}

/// CKA for every unordered pair of row-aligned sets.
///
/// Pairs are evaluated on the current rayon pool; the output does not depend on the
/// number of threads.
pub fn pairwise_cka(sets: &[EmbeddingSet], centering: Centering) -> Result<PairwiseCka> {
    if sets.len() < 2 {
        return Err(Error::Invalid(format!(
            "pairwise CKA needs at least 2 languages, got {}",
            sets.len()
        )));
    }
    ensure_distinct(sets.iter().map(|s| s.language()))?;
    let n = sets[0].n();
    if let Some(bad) = sets.iter().find(|s| s.n() != n) {
        return Err(Error::Alignment {
            language: bad.language().to_string(),
            expected: n,
            got: bad.n(),
        });
    }

    let pairs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|i| (i + 1..sets.len()).map(move |j| (i, j)))
        .collect();
    let upper = pairs
        .par_iter()
        .map(|&(i, j)| {
            linear_cka_with(sets[i].matrix(), sets[j].matrix(), centering)
                .map_err(|e| Error::pair(sets[i].language(), sets[j].language(), e))
        })
        .collect::<Result<Vec<f64>>>()?;

    let langs = sets.iter().map(|s| s.language().clone()).collect();
    let matrix = PairwiseMatrix::from_upper(langs, 1.0, &upper)?;
    let mean = matrix.mean_off_diagonal().expect("at least one pair");
    Ok(PairwiseCka { matrix, mean })
}

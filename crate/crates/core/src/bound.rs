//! Empirical H-divergence and HΔH-divergence over axis-aligned decision stumps, and a
//! check that the risk gap of a stump between two labelled samples respects the
//! divergence bound.
//!
//! Stump thresholds only matter between consecutive sample values, so both suprema
//! are computed exactly by sweeping sorted coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Default limit on the number of stump pairs enumerated by [`h_delta_h_divergence`].
pub const HDH_PAIR_BUDGET: u64 = 1_000_000;

/// Points drawn from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: Matrix,
}

impl SampleSet {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::Invalid(
                "sample set must have at least one point and one dimension".into(),
            ));
        }
        if !points.is_finite() {
            return Err(Error::Invalid(
                "sample set contains non-finite values".into(),
            ));
        }
        Ok(SampleSet { points })
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    fn column(&self, d: usize) -> Vec<f64> {
        self.points.iter_rows().map(|r| r[d]).collect()
    }
}

/// Which side of the threshold is labelled 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// `x[dim] <= threshold` maps to 1.
    LeOne,
    /// `x[dim] <= threshold` maps to 0.
    LeZero,
}

/// Single-coordinate threshold classifier. Thresholds may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StumpHypothesis {
    pub dim: usize,
    #[serde(with = "extended_real")]
    pub threshold: f64,
    pub polarity: Polarity,
}

impl StumpHypothesis {
    pub fn predict(&self, x: &[f64]) -> u8 {
        let below = x[self.dim] <= self.threshold;
        match self.polarity {
            Polarity::LeOne => below as u8,
            Polarity::LeZero => !below as u8,
        }
    }
}

/// Inputs to the complexity term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub pdim: u32,
    pub n: usize,
    pub delta: f64,
}

/// Points with binary labels from the labelling function.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    samples: SampleSet,
    labels: Vec<u8>,
}

impl LabeledSample {
    pub fn new(points: Matrix, labels: Vec<u8>) -> Result<Self> {
        let samples = SampleSet::new(points)?;
        if labels.len() != samples.len() {
            return Err(Error::Invalid(format!(
                "{} labels for {} points",
                labels.len(),
                samples.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Invalid(format!("label {l} is not 0 or 1")));
        }
        Ok(LabeledSample { samples, labels })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Result of [`verify_bound`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub h_div: f64,
    pub hdh_div: f64,
    pub complexity: f64,
    pub bound: f64,
    pub gap: f64,
    pub holds: bool,
}

fn check_dims(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `2 |c_a / n_a - c_b / n_b|`, evaluated from the integer cross difference so that an
/// event and its complement give bit-identical values.
fn disagreement(ca: usize, na: usize, cb: usize, nb: usize) -> f64 {
    let cross = (ca as i128 * nb as i128 - cb as i128 * na as i128).unsigned_abs();
    2.0 * cross as f64 / (na as f64 * nb as f64)
}

/// Coordinate values of both samples on one axis, tagged by origin and sorted.
/// Points with equal values form one group: a threshold never separates them.
struct Axis {
    /// `(value, from_a, point index)` in ascending value order.
    entries: Vec<(f64, bool, usize)>,
}

impl Axis {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let mut entries: Vec<(f64, bool, usize)> = a
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, true, i))
            .chain(b.iter().enumerate().map(|(i, &v)| (v, false, i)))
            .collect();
        entries.sort_by(|x, y| x.0.total_cmp(&y.0));
        Axis { entries }
    }

    /// Ranges of `entries` sharing one value.
    fn groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.entries.len() {
            if k == self.entries.len() || self.entries[k].0 != self.entries[start].0 {
                out.push(start..k);
                start = k;
            }
        }
        out
    }

    /// Number of distinct stump behaviours: one per gap between groups plus the sentinels.
    fn thresholds(&self) -> u64 {
        self.groups().len() as u64 + 1
    }
}

/// `2 max_h |P_A(h = 1) - P_B(h = 1)|` over all stumps.
pub fn empirical_h_divergence(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let best = (0..a.dim())
        .into_par_iter()
        .map(|d| {
            let axis = Axis::new(&a.column(d), &b.column(d));
            let (mut ca, mut cb) = (0, 0);
            let mut best = disagreement(0, na, 0, nb);
            for g in axis.groups() {
                for &(_, from_a, _) in &axis.entries[g] {
                    if from_a {
                        ca += 1;
                    } else {
                        cb += 1;
                    }
                }
                best = best.max(disagreement(ca, na, cb, nb));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// `2 max_{h,h'} |P_A(h != h') - P_B(h != h')|` over all stump pairs, refusing more than
/// [`HDH_PAIR_BUDGET`] pairs.
pub fn h_delta_h_divergence(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    h_delta_h_divergence_with_budget(a, b, HDH_PAIR_BUDGET)
}

pub fn h_delta_h_divergence_with_budget(a: &SampleSet, b: &SampleSet, budget: u64) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let axes: Vec<Axis> = (0..a.dim())
        .map(|d| Axis::new(&a.column(d), &b.column(d)))
        .collect();
    let counts: Vec<u64> = axes.iter().map(Axis::thresholds).collect();
    let mut pairs = 0u64;
    for i in 0..counts.len() {
        for j in i..counts.len() {
            pairs = pairs.saturating_add(counts[i].saturating_mul(counts[j]));
        }
    }
    if pairs > budget {
        return Err(Error::UnsupportedSize(format!(
            "{pairs} stump pairs exceed the budget of {budget}"
        )));
    }

    // Polarities only complement the disagreement event, which leaves |P_A - P_B|
    // unchanged, so the event is [x_i <= t] xor [x_j <= t'].
    let dim_pairs: Vec<(usize, usize)> = (0..axes.len())
        .flat_map(|i| (i..axes.len()).map(move |j| (i, j)))
        .collect();
    let best = dim_pairs
        .par_iter()
        .map(|&(i, j)| {
            let (outer, inner) = (&axes[i], &axes[j]);
            let inner_groups = inner.groups();
            let mut in_a = vec![false; na];
            let mut in_b = vec![false; nb];
            let mut best = sweep_inner(inner, &inner_groups, &in_a, &in_b);
            for g in outer.groups() {
                for &(_, from_a, idx) in &outer.entries[g] {
                    if from_a {
                        in_a[idx] = true;
                    } else {
                        in_b[idx] = true;
                    }
                }
                best = best.max(sweep_inner(inner, &inner_groups, &in_a, &in_b));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// With the outer indicator fixed, sweeps the inner threshold from -inf to +inf.
fn sweep_inner(
    inner: &Axis,
    groups: &[std::ops::Range<usize>],
    in_a: &[bool],
    in_b: &[bool],
) -> f64 {
    let (na, nb) = (in_a.len(), in_b.len());
    let mut ca = in_a.iter().filter(|&&v| v).count();
    let mut cb = in_b.iter().filter(|&&v| v).count();
    let mut best = disagreement(ca, na, cb, nb);
    for g in groups {
        for &(_, from_a, idx) in &inner.entries[g.clone()] {
            // The inner indicator turns on, flipping the xor for this point.
            let (count, outer) = if from_a {
                (&mut ca, in_a[idx])
            } else {
                (&mut cb, in_b[idx])
            };
            if outer {
                *count -= 1;
            } else {
                *count += 1;
            }
        }
        best = best.max(disagreement(ca, na, cb, nb));
    }
    best
}

/// `2 sqrt((d ln(2n) + ln(2/delta)) / n)`.
pub fn complexity_term(p: &BoundParams) -> Result<f64> {
    if p.pdim == 0 {
        return Err(Error::Domain("pdim must be positive".into()));
    }
    if p.n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, 1), got {}",
            p.delta
        )));
    }
    let n = p.n as f64;
    let inner = (f64::from(p.pdim) * (2.0 * n).ln() + (2.0 / p.delta).ln()) / n;
    Ok(2.0 * inner.sqrt())
}

/// Fraction of points where the stump disagrees with the label.
pub fn empirical_risk(h: &StumpHypothesis, s: &LabeledSample) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Invalid("empirical risk of an empty sample".into()));
    }
    if h.dim >= s.samples.dim() {
        return Err(Error::Invalid(format!(
            "stump dimension {} out of range for {}-dimensional points",
            h.dim,
            s.samples.dim()
        )));
    }
    let errors = s
        .samples
        .points
        .iter_rows()
        .zip(&s.labels)
        .filter(|(x, &y)| h.predict(x) != y)
        .count();
    Ok(errors as f64 / s.len() as f64)
}

/// Compares the risk gap of `h` between `a` and `b` with half the HΔH-divergence of their
/// points plus the complexity term. `p.n` must equal the smaller sample size.
pub fn verify_bound(
    a: &LabeledSample,
    b: &LabeledSample,
    h: &StumpHypothesis,
    p: &BoundParams,
) -> Result<BoundCheck> {
    check_dims(&a.samples, &b.samples)?;
    let n = a.len().min(b.len());
    if p.n != n {
        return Err(Error::Config(format!(
            "bound n = {} but the smaller sample has {n} points",
            p.n
        )));
    }
    let gap = (empirical_risk(h, a)? - empirical_risk(h, b)?).abs();
    let h_div = empirical_h_divergence(&a.samples, &b.samples)?;
    let hdh_div = h_delta_h_divergence(&a.samples, &b.samples)?;
    let complexity = complexity_term(p)?;
    let bound = 0.5 * hdh_div + complexity;
    Ok(BoundCheck {
        h_div,
        hdh_div,
        complexity,
        bound,
        gap,
        holds: gap <= bound,
    })
}

/// Stump with the lowest empirical risk on `s`. Ties go to the lowest dimension, then the
/// lowest threshold, then [`Polarity::LeOne`].
pub fn fit_stump(s: &LabeledSample) -> StumpHypothesis {
    let n = s.len();
    let positives = s.labels.iter().filter(|&&l| l == 1).count();
    let mut best = StumpHypothesis {
        dim: 0,
        threshold: f64::NEG_INFINITY,
        polarity: Polarity::LeOne,
    };
    // With nothing below the threshold, LeOne predicts 0 everywhere.
    let mut best_errors = positives;
    for d in 0..s.samples.dim() {
        let mut column: Vec<(f64, u8)> = s
            .samples
            .points
            .iter_rows()
            .map(|r| r[d])
            .zip(s.labels.iter().copied())
            .collect();
        column.sort_by(|x, y| x.0.total_cmp(&y.0));
        // Errors of LeOne at threshold t: positives above t plus negatives at or below t.
        let mut errors = positives;
        let consider =
            |threshold: f64, errors: usize, best: &mut StumpHypothesis, best_errors: &mut usize| {
                for (polarity, e) in [(Polarity::LeOne, errors), (Polarity::LeZero, n - errors)] {
                    if e < *best_errors {
                        *best_errors = e;
                        *best = StumpHypothesis {
                            dim: d,
                            threshold,
                            polarity,
                        };
                    }
                }
            };
        consider(f64::NEG_INFINITY, errors, &mut best, &mut best_errors);
        let mut k = 0;
        while k < column.len() {
            let value = column[k].0;
            while k < column.len() && column[k].0 == value {
                if column[k].1 == 1 {
                    errors -= 1;
                } else {
                    errors += 1;
                }
                k += 1;
            }
            let threshold = if k < column.len() {
                value + 0.5 * (column[k].0 - value)
            } else {
                f64::INFINITY
            };
            consider(threshold, errors, &mut best, &mut best_errors);
        }
    }
    best
}

/// Serializes reals with `"inf"` / `"-inf"` for the infinite threshold sentinels.
mod extended_real {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "invalid threshold {other:?}"
                ))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn set(rows: &[Vec<f64>]) -> SampleSet {
        SampleSet::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn line(values: &[f64]) -> SampleSet {
        set(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>())
    }

    fn labeled(rows: &[Vec<f64>], labels: &[u8]) -> LabeledSample {
        LabeledSample::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    /// Midpoints of consecutive distinct values plus both infinities.
    fn candidate_thresholds(values: &[f64]) -> Vec<f64> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        let mut t = vec![f64::NEG_INFINITY];
        t.extend(v.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        t.push(f64::INFINITY);
        t
    }

    fn stumps(a: &SampleSet, b: &SampleSet) -> Vec<StumpHypothesis> {
        let mut out = Vec::new();
        for dim in 0..a.dim() {
            let mut values = a.column(dim);
            values.extend(b.column(dim));
            for threshold in candidate_thresholds(&values) {
                for polarity in [Polarity::LeOne, Polarity::LeZero] {
                    out.push(StumpHypothesis {
                        dim,
                        threshold,
                        polarity,
                    });
                }
            }
        }
        out
    }

    fn count(s: &SampleSet, f: impl Fn(&[f64]) -> bool) -> usize {
        s.points().iter_rows().filter(|x| f(x)).count()
    }

    fn h_div_oracle(a: &SampleSet, b: &SampleSet) -> f64 {
        stumps(a, b)
            .iter()
            .map(|h| {
                let ca = count(a, |x| h.predict(x) == 1);
                let cb = count(b, |x| h.predict(x) == 1);
                disagreement(ca, a.len(), cb, b.len())
            })
            .fold(0.0, f64::max)
    }

    fn hdh_oracle(a: &SampleSet, b: &SampleSet) -> f64 {
        let hs = stumps(a, b);
        let mut best = 0.0f64;
        for h in &hs {
            for g in &hs {
                let ca = count(a, |x| h.predict(x) != g.predict(x));
                let cb = count(b, |x| h.predict(x) != g.predict(x));
                best = best.max(disagreement(ca, a.len(), cb, b.len()));
            }
        }
        best
    }

    #[test]
    fn h_divergence_examples() {
        let a = line(&[0.1, 0.5, 0.9]);
        assert_eq!(empirical_h_divergence(&a, &a).unwrap(), 0.0);
        let neg = line(&[-3.0, -2.0, -0.5]);
        let pos = line(&[0.5, 1.0, 4.0, 7.0]);
        assert_eq!(empirical_h_divergence(&neg, &pos).unwrap(), 2.0);
        assert_eq!(h_delta_h_divergence(&neg, &pos).unwrap(), 2.0);
        assert_eq!(h_delta_h_divergence(&a, &a).unwrap(), 0.0);
        let two_d = set(&[vec![0.0, 1.0]]);
        assert!(matches!(
            empirical_h_divergence(&a, &two_d),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            h_delta_h_divergence(&a, &two_d),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn h_divergence_matches_threshold_enumeration() {
        let mut rng = StdRng::seed_from_u64(20);
        for _ in 0..20 {
            let a: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 1.3 - 0.1).collect();
            let (a, b) = (line(&a), line(&b));
            assert_eq!(
                candidate_thresholds(&[a.column(0), b.column(0)].concat()).len(),
                41
            );
            assert_eq!(
                empirical_h_divergence(&a, &b).unwrap(),
                h_div_oracle(&a, &b)
            );
        }
    }

    #[test]
    fn multi_dimensional_matches_oracles() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..10 {
            let na = rng.random_range(1..8);
            let nb = rng.random_range(1..8);
            // Coarse grid values force ties within and across samples.
            let mut draw = |n: usize| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| {
                        (0..3)
                            .map(|_| f64::from(rng.random_range(0..5u8)))
                            .collect()
                    })
                    .collect()
            };
            let (a, b) = (set(&draw(na)), set(&draw(nb)));
            let h = empirical_h_divergence(&a, &b).unwrap();
            let hdh = h_delta_h_divergence(&a, &b).unwrap();
            assert_eq!(h, h_div_oracle(&a, &b));
            assert_eq!(hdh, hdh_oracle(&a, &b));
            assert!(hdh >= h - 1e-12);
        }
    }

    #[test]
    fn interval_separated_matches_pair_enumeration() {
        // B sits inside an interval that A surrounds: only an xor of two stumps isolates it.
        let a = line(&[-5.0, -4.0, -3.0, 3.0, 4.0, 5.0]);
        let b = line(&[-1.0, 0.0, 1.0]);
        assert_eq!(empirical_h_divergence(&a, &b).unwrap(), 1.0);
        assert_eq!(h_delta_h_divergence(&a, &b).unwrap(), 2.0);
        assert_eq!(hdh_oracle(&a, &b), 2.0);
    }

    #[test]
    fn budget_is_enforced() {
        let a = line(&(0..40).map(f64::from).collect::<Vec<_>>());
        // 80 distinct values: 81 thresholds, 6561 pairs.
        let b = line(&(0..40).map(|v| f64::from(v) + 0.5).collect::<Vec<_>>());
        assert!(h_delta_h_divergence_with_budget(&a, &b, 6561).is_ok());
        assert!(matches!(
            h_delta_h_divergence_with_budget(&a, &b, 6560),
            Err(Error::UnsupportedSize(_))
        ));
    }

    #[test]
    fn complexity_values() {
        let two_over_e = 2.0 / std::f64::consts::E;
        let closed = 2.0 * ((4.0f64.ln() + 1.0) / 2.0).sqrt();
        let v = complexity_term(&BoundParams {
            pdim: 1,
            n: 2,
            delta: two_over_e,
        })
        .unwrap();
        assert!((v - closed).abs() < 1e-15);
        assert!((v - 2.184_625_533_641_814_f64).abs() < 1e-14);

        let v = complexity_term(&BoundParams {
            pdim: 3,
            n: 1000,
            delta: 0.05,
        })
        .unwrap();
        assert!((v - 0.325_524_726_143_745_85).abs() < 1e-15);

        for (pdim, n, delta) in [
            (0, 10, 0.1),
            (1, 0, 0.1),
            (1, 10, 0.0),
            (1, 10, 1.0),
            (1, 10, f64::NAN),
        ] {
            assert!(matches!(
                complexity_term(&BoundParams { pdim, n, delta }),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn complexity_monotone_on_grid() {
        for pdim in [1, 2, 5, 10] {
            for delta in [0.01, 0.05, 0.1, 0.5] {
                for n in [8usize, 10, 50, 100, 1000, 10_000] {
                    let at = |n| complexity_term(&BoundParams { pdim, n, delta }).unwrap();
                    assert!(at(4 * n) < at(n));
                    assert!(at(n + 1) < at(n));
                    let looser = complexity_term(&BoundParams {
                        pdim,
                        n,
                        delta: delta / 2.0,
                    })
                    .unwrap();
                    assert!(looser > at(n));
                }
            }
        }
    }

    #[test]
    fn risk_examples() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let s = labeled(&rows, &[1, 1, 0, 0]);
        let h = StumpHypothesis {
            dim: 0,
            threshold: 1.5,
            polarity: Polarity::LeOne,
        };
        assert_eq!(empirical_risk(&h, &s).unwrap(), 0.0);
        let flipped = StumpHypothesis {
            polarity: Polarity::LeZero,
            ..h
        };
        assert_eq!(empirical_risk(&flipped, &s).unwrap(), 1.0);
        let bad = StumpHypothesis { dim: 1, ..h };
        assert!(empirical_risk(&bad, &s).is_err());
        assert!(LabeledSample::new(Matrix::from_rows(&rows).unwrap(), vec![0, 1, 2, 0]).is_err());
        assert!(LabeledSample::new(Matrix::from_rows(&rows).unwrap(), vec![0, 1]).is_err());
    }

    #[test]
    fn risk_matches_counting_loop() {
        let mut rng = StdRng::seed_from_u64(30);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random(), rng.random()]).collect();
            let labels: Vec<u8> = (0..30).map(|_| rng.random_range(0..2)).collect();
            let s = labeled(&rows, &labels);
            let h = StumpHypothesis {
                dim: rng.random_range(0..2),
                threshold: rng.random(),
                polarity: if rng.random() {
                    Polarity::LeOne
                } else {
                    Polarity::LeZero
                },
            };
            let mut wrong = 0;
            for k in 0..30 {
                let below = rows[k][h.dim] <= h.threshold;
                let pred = if h.polarity == Polarity::LeOne {
                    below
                } else {
                    !below
                };
                if u8::from(pred) != labels[k] {
                    wrong += 1;
                }
            }
            assert_eq!(empirical_risk(&h, &s).unwrap(), wrong as f64 / 30.0);
        }
    }

    #[test]
    fn fit_stump_minimises_risk() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..12)
                .map(|_| vec![f64::from(rng.random_range(0..6u8)), rng.random()])
                .collect();
            let labels: Vec<u8> = (0..12).map(|_| rng.random_range(0..2)).collect();
            let s = labeled(&rows, &labels);
            let fitted = empirical_risk(&fit_stump(&s), &s).unwrap();
            let best = stumps(s.samples(), s.samples())
                .iter()
                .map(|h| empirical_risk(h, &s).unwrap())
                .fold(1.0, f64::min);
            assert_eq!(fitted, best);
        }
        let s = labeled(&[vec![0.0], vec![1.0], vec![2.0]], &[0, 0, 1]);
        let h = fit_stump(&s);
        assert_eq!(
            h,
            StumpHypothesis {
                dim: 0,
                threshold: 1.5,
                polarity: Polarity::LeZero
            }
        );
    }

    #[test]
    fn verify_bound_examples() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let a = labeled(&rows, &[1, 0, 1, 0]);
        let h = fit_stump(&a);
        let p = BoundParams {
            pdim: 2,
            n: 4,
            delta: 0.05,
        };
        let check = verify_bound(&a, &a, &h, &p).unwrap();
        assert_eq!(check.gap, 0.0);
        assert_eq!(check.hdh_div, 0.0);
        assert!(check.holds);
        assert!(check.bound >= 0.0);
        assert!(matches!(
            verify_bound(&a, &a, &h, &BoundParams { n: 3, ..p }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn verify_bound_on_mixtures() {
        let mut rng = StdRng::seed_from_u64(32);
        let draw = |rng: &mut StdRng, shift: f64| -> LabeledSample {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..50 {
                let label = rng.random_range(0..2u8);
                let centre = if label == 1 { 1.0 } else { -1.0 } + shift;
                rows.push(vec![Normal::new(centre, 1.0).unwrap().sample(rng)]);
                labels.push(label);
            }
            labeled(&rows, &labels)
        };
        for _ in 0..5 {
            let a = draw(&mut rng, 0.0);
            let b = draw(&mut rng, 0.7);
            let h = fit_stump(&a);
            let check = verify_bound(
                &a,
                &b,
                &h,
                &BoundParams {
                    pdim: 2,
                    n: 50,
                    delta: 0.05,
                },
            )
            .unwrap();
            assert!(check.holds);
            assert!(check.hdh_div >= check.h_div - 1e-12);
            assert!((0.0..=2.0).contains(&check.hdh_div));
        }
    }

    #[test]
    fn stump_serde_handles_infinite_thresholds() {
        let h = StumpHypothesis {
            dim: 0,
            threshold: f64::NEG_INFINITY,
            polarity: Polarity::LeZero,
        };
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, r#"{"dim":0,"threshold":"-inf","polarity":"le_zero"}"#);
        assert_eq!(serde_json::from_str::<StumpHypothesis>(&json).unwrap(), h);
        let finite = StumpHypothesis {
            threshold: 0.25,
            ..h
        };
        let back: StumpHypothesis =
            serde_json::from_str(&serde_json::to_string(&finite).unwrap()).unwrap();
        assert_eq!(back, finite);
    }

    fn samples_1d() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-50.0f64..50.0, 1..12),
            prop::collection::vec(-50.0f64..50.0, 1..12),
        )
    }

    proptest! {
        #[test]
        fn h_divergence_properties((a, b) in samples_1d()) {
            let (sa, sb) = (line(&a), line(&b));
            let ab = empirical_h_divergence(&sa, &sb).unwrap();
            prop_assert_eq!(ab, empirical_h_divergence(&sb, &sa).unwrap());
            prop_assert!((0.0..=2.0).contains(&ab));
            let warp = |v: &f64| v * v * v + 3.0 * v;
            let ta: Vec<f64> = a.iter().map(warp).collect();
            let tb: Vec<f64> = b.iter().map(warp).collect();
            prop_assert_eq!(ab, empirical_h_divergence(&line(&ta), &line(&tb)).unwrap());
            let hdh = h_delta_h_divergence(&sa, &sb).unwrap();
            prop_assert!(hdh >= ab - 1e-12);
            prop_assert!(hdh <= 2.0);
            prop_assert_eq!(h_delta_h_divergence(&sa, &sa).unwrap(), 0.0);
        }
    }
}

//! Rank correlation: Spearman's rho and Kendall's tau-b with two-sided p-values.
//!
//! Small samples (`n <= 10`) get exact permutation p-values by enumerating every
//! reordering of `y`; larger samples fall back to the usual asymptotic approximations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Largest sample for which exact permutation p-values are enumerated.
pub const EXACT_MAX_N: usize = 10;

/// Values closer than this are treated as ties.
pub const TIE_EPSILON: f64 = 1e-12;

/// Slack applied to the observed statistic when counting permutations at least as extreme.
const EXTREME_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spearman,
    KendallTauB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    ExactPermutation,
    Asymptotic,
}

/// How the p-value is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PValueMode {
    /// Exact for `n <= EXACT_MAX_N`, asymptotic otherwise.
    #[default]
    Auto,
    Exact,
    Asymptotic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub p_value: f64,
    pub method: Method,
    pub p_method: PMethod,
    pub n: usize,
}

/// Ranks starting at 1, with tied values (within [`TIE_EPSILON`] of their neighbour in
/// sorted order) sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] - values[order[end - 1]] <= TIE_EPSILON {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    spearman_with(x, y, PValueMode::Auto)
}

pub fn spearman_with(x: &[f64], y: &[f64], mode: PValueMode) -> Result<CorrelationResult> {
    correlate(Method::Spearman, x, y, mode)
}

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    kendall_tau_b_with(x, y, PValueMode::Auto)
}

pub fn kendall_tau_b_with(x: &[f64], y: &[f64], mode: PValueMode) -> Result<CorrelationResult> {
    correlate(Method::KendallTauB, x, y, mode)
}

/// Two-sided exact permutation p-value: the fraction of the `n!` reorderings of `y`
/// whose statistic is at least as extreme as the observed one.
pub fn exact_perm_pvalue(method: Method, x: &[f64], y: &[f64]) -> Result<f64> {
    let prepared = Prepared::new(x, y)?;
    prepared.exact_p(method)
}

fn correlate(method: Method, x: &[f64], y: &[f64], mode: PValueMode) -> Result<CorrelationResult> {
    let prepared = Prepared::new(x, y)?;
    let n = prepared.n();
    let coefficient = prepared.statistic(method, &prepared.ry).clamp(-1.0, 1.0);
    let exact = match mode {
        PValueMode::Auto => n <= EXACT_MAX_N,
        PValueMode::Exact => true,
        PValueMode::Asymptotic => false,
    };
    let (p_value, p_method) = if exact {
        (prepared.exact_p(method)?, PMethod::ExactPermutation)
    } else {
        let p = match method {
            Method::Spearman => spearman_asymptotic_p(coefficient, n),
            Method::KendallTauB => prepared.kendall_asymptotic_p(),
        };
        (p, PMethod::Asymptotic)
    };
    Ok(CorrelationResult {
        coefficient,
        p_value: p_value.clamp(0.0, 1.0),
        method,
        p_method,
        n,
    })
}

struct Prepared {
    rx: Vec<f64>,
    ry: Vec<f64>,
    // Spearman: centred x ranks and the product of rank norms.
    cx: Vec<f64>,
    y_mean: f64,
    norm: f64,
    // Kendall: signs of x-rank differences over pairs i < j, and sqrt((n0 - n1)(n0 - n2)).
    x_signs: Vec<i64>,
    tau_denominator: f64,
}

impl Prepared {
    fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Invalid(format!(
                "length mismatch: x has {} values, y has {}",
                x.len(),
                y.len()
            )));
        }
        let n = x.len();
        if n < 3 {
            return Err(Error::Invalid(format!(
                "rank correlation needs at least 3 observations, got {n}"
            )));
        }
        if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value {v}")));
        }
        let rx = average_ranks(x);
        let ry = average_ranks(y);
        let x_mean = rx.iter().sum::<f64>() / n as f64;
        let y_mean = ry.iter().sum::<f64>() / n as f64;
        let cx: Vec<f64> = rx.iter().map(|r| r - x_mean).collect();
        let sxx: f64 = cx.iter().map(|c| c * c).sum();
        let syy: f64 = ry.iter().map(|r| (r - y_mean) * (r - y_mean)).sum();
        if sxx == 0.0 || syy == 0.0 {
            return Err(Error::Degenerate(
                "constant input has zero rank variance".into(),
            ));
        }
        let n0 = (n * (n - 1) / 2) as f64;
        let n1 = tie_pairs(&rx) as f64;
        let n2 = tie_pairs(&ry) as f64;
        let mut x_signs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                x_signs.push(sign(rx[i] - rx[j]));
            }
        }
        Ok(Prepared {
            x_signs,
            tau_denominator: ((n0 - n1) * (n0 - n2)).sqrt(),
            norm: (sxx * syy).sqrt(),
            rx,
            ry,
            cx,
            y_mean,
        })
    }

    fn n(&self) -> usize {
        self.rx.len()
    }

    fn statistic(&self, method: Method, ry: &[f64]) -> f64 {
        match method {
            Method::Spearman => {
                let cov: f64 = self
                    .cx
                    .iter()
                    .zip(ry)
                    .map(|(c, r)| c * (r - self.y_mean))
                    .sum();
                cov / self.norm
            }
            Method::KendallTauB => self.kendall_s(ry) as f64 / self.tau_denominator,
        }
    }

    /// Concordant minus discordant pairs.
    fn kendall_s(&self, ry: &[f64]) -> i64 {
        let n = self.n();
        let mut signs = self.x_signs.iter();
        let mut s = 0;
        for i in 0..n {
            for j in i + 1..n {
                let sx = *signs.next().expect("one sign per pair");
                s += sx * sign(ry[i] - ry[j]);
            }
        }
        s
    }

    fn exact_p(&self, method: Method) -> Result<f64> {
        let n = self.n();
        if n > EXACT_MAX_N {
            return Err(Error::UnsupportedSize(format!(
                "exact permutation p-values support n <= {EXACT_MAX_N}, got {n}"
            )));
        }
        let threshold = self.statistic(method, &self.ry).abs() - EXTREME_SLACK;
        let extreme: u64 = (0..n)
            .into_par_iter()
            .map(|first| {
                let mut arr = self.ry.clone();
                arr.swap(0, first);
                let mut count = 0u64;
                heap_permutations(&mut arr, 1, &mut |perm| {
                    if self.statistic(method, perm).abs() >= threshold {
                        count += 1;
                    }
                });
                count
            })
            .sum();
        let total: u64 = (1..=n as u64).product();
        Ok(extreme as f64 / total as f64)
    }

    fn kendall_asymptotic_p(&self) -> f64 {
        let n = self.n() as f64;
        let s = self.kendall_s(&self.ry);
        let (xt, x0, x1) = tie_sums(&self.rx);
        let (yt, y0, y1) = tie_sums(&self.ry);
        let m = n * (n - 1.0);
        let var = (m * (2.0 * n + 5.0) - x1 - y1) / 18.0
            + 2.0 * xt * yt / m
            + x0 * y0 / (9.0 * m * (n - 2.0));
        if var <= 0.0 {
            return 1.0;
        }
        // Continuity correction: S moves in steps of 2 between adjacent orderings.
        let corrected = (s.unsigned_abs() as f64 - 1.0).max(0.0);
        let z = corrected / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * normal.sf(z)
    }
}

fn spearman_asymptotic_p(rho: f64, n: usize) -> f64 {
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * dist.sf(t.abs())
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Sizes of groups of equal ranks.
fn tie_groups(ranks: &[f64]) -> Vec<usize> {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=sorted.len() {
        if k == sorted.len() || sorted[k] != sorted[start] {
            groups.push(k - start);
            start = k;
        }
    }
    groups
}

fn tie_pairs(ranks: &[f64]) -> usize {
    tie_groups(ranks).iter().map(|t| t * (t - 1) / 2).sum()
}

/// `(sum t(t-1), sum t(t-1)(t-2), sum t(t-1)(2t+5))` over tie groups.
fn tie_sums(ranks: &[f64]) -> (f64, f64, f64) {
    tie_groups(ranks)
        .into_iter()
        .map(|t| t as f64)
        .fold((0.0, 0.0, 0.0), |(a, b, c), t| {
            (
                a + t * (t - 1.0),
                b + t * (t - 1.0) * (t - 2.0),
                c + t * (t - 1.0) * (2.0 * t + 5.0),
            )
        })
}

/// Visits every permutation of `arr[start..]` (Heap's algorithm, iterative form).
fn heap_permutations(arr: &mut [f64], start: usize, visit: &mut impl FnMut(&[f64])) {
    let k = arr.len() - start;
    visit(arr);
    let mut c = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                arr.swap(start, start + i);
            } else {
                arr.swap(start + c[i], start + i);
            }
            visit(arr);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    // Textbook formulas for untied data.
    fn rho_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let rank = |v: &[f64], i: usize| v.iter().filter(|w| **w < v[i]).count() as f64;
        let d2: f64 = (0..x.len())
            .map(|i| (rank(x, i) - rank(y, i)).powi(2))
            .sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    fn tau_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d) = (0, 0);
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    let prod = (x[i] - x[j]) * (y[i] - y[j]);
                    if prod > 0.0 {
                        c += 1;
                    } else if prod < 0.0 {
                        d += 1;
                    }
                }
            }
        }
        (c - d) as f64 / (n * (n - 1) / 2) as f64
    }

    fn p_oracle(stat: fn(&[f64], &[f64]) -> f64, x: &[f64], y: &[f64]) -> f64 {
        let obs = stat(x, y).abs();
        let perms = all_permutations(x.len());
        let hits = perms
            .iter()
            .filter(|p| {
                let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
                stat(x, &yp).abs() >= obs - 1e-12
            })
            .count();
        hits as f64 / perms.len() as f64
    }

    fn random_untied(rng: &mut StdRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn perfect_monotone_examples() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(r.coefficient, 1.0);
        assert_eq!(r.p_value, 2.0 / 24.0);
        assert_eq!(r.p_method, PMethod::ExactPermutation);
        assert_eq!(r.n, 4);

        let r = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.coefficient, -1.0);
        assert_eq!(r.p_value, 2.0 / 6.0);

        let p = exact_perm_pvalue(Method::Spearman, &[0.1, 0.5, 0.9], &[2.0, 4.0, 8.0]).unwrap();
        assert_eq!(p, 2.0 / 6.0);

        let r = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 9.0]).unwrap();
        assert_eq!(r.coefficient, 1.0);
    }

    #[test]
    fn kendall_hand_count() {
        let r = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.coefficient - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.method, Method::KendallTauB);
    }

    #[test]
    fn kendall_tau_b_with_ties() {
        // x ties one pair, y ties one pair; 6 pairs total.
        // Untied-in-both pairs: (0,2) c, (0,3) c, (1,2) c, (1,3) c, (2,3) d
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 3.0];
        let r = kendall_tau_b_with(&x, &y, PValueMode::Asymptotic).unwrap();
        let expected = (4.0 - 0.0) / ((6.0f64 - 1.0) * (6.0 - 1.0)).sqrt();
        // (2,3): y tied -> neither. So 4 concordant, 0 discordant.
        assert!((r.coefficient - expected).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_ties_and_epsilon() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(
            average_ranks(&[5.0, 5.0, 1.0, 5.0]),
            vec![3.0, 3.0, 1.0, 3.0]
        );
        assert_eq!(average_ranks(&[1.0, 1.0 + 1e-13, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[1.0, 1.0 + 1e-9, 2.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            exact_perm_pvalue(Method::KendallTauB, &[1.0, 2.0, 3.0], &[7.0; 3]),
            Err(Error::Degenerate(_))
        ));
        let big: Vec<f64> = (0..11).map(f64::from).collect();
        assert!(matches!(
            exact_perm_pvalue(Method::Spearman, &big, &big),
            Err(Error::UnsupportedSize(_))
        ));
        assert!(matches!(
            spearman_with(&big, &big, PValueMode::Exact),
            Err(Error::UnsupportedSize(_))
        ));
        let r = spearman(&big, &big).unwrap();
        assert_eq!(r.p_method, PMethod::Asymptotic);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn exact_p_matches_full_enumeration_n6() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..10 {
            let x = random_untied(&mut rng, 6);
            let y = random_untied(&mut rng, 6);
            let s = spearman(&x, &y).unwrap();
            assert!((s.coefficient - rho_oracle(&x, &y)).abs() < 1e-12);
            assert_eq!(s.p_value, p_oracle(rho_oracle, &x, &y));
            let k = kendall_tau_b(&x, &y).unwrap();
            assert!((k.coefficient - tau_oracle(&x, &y)).abs() < 1e-12);
            assert_eq!(k.p_value, p_oracle(tau_oracle, &x, &y));
        }
    }

    #[test]
    fn shuffled_pair_order_is_bit_identical() {
        let mut rng = StdRng::seed_from_u64(7);
        let x = random_untied(&mut rng, 7);
        let y = random_untied(&mut rng, 7);
        let mut idx: Vec<usize> = (0..7).collect();
        idx.shuffle(&mut rng);
        let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        for method in [Method::Spearman, Method::KendallTauB] {
            let a = exact_perm_pvalue(method, &x, &y).unwrap();
            let b = exact_perm_pvalue(method, &xs, &ys).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn asymptotic_close_to_exact_at_n10() {
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..3 {
            let x = random_untied(&mut rng, 10);
            let y = random_untied(&mut rng, 10);
            for (exact, asym) in [
                (
                    spearman_with(&x, &y, PValueMode::Exact).unwrap(),
                    spearman_with(&x, &y, PValueMode::Asymptotic).unwrap(),
                ),
                (
                    kendall_tau_b_with(&x, &y, PValueMode::Exact).unwrap(),
                    kendall_tau_b_with(&x, &y, PValueMode::Asymptotic).unwrap(),
                ),
            ] {
                assert_eq!(exact.coefficient, asym.coefficient);
                assert!((exact.p_value - asym.p_value).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn serde_names() {
        assert_eq!(
            serde_json::to_string(&Method::KendallTauB).unwrap(),
            "\"kendall_tau_b\""
        );
        assert_eq!(
            serde_json::to_string(&PMethod::ExactPermutation).unwrap(),
            "\"exact_permutation\""
        );
    }

    fn untied_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..8).prop_flat_map(|n| {
            (
                prop::collection::hash_set(-1000i32..1000, n),
                prop::collection::hash_set(-1000i32..1000, n),
            )
                .prop_map(|(a, b)| {
                    (
                        a.into_iter().map(f64::from).collect(),
                        b.into_iter().map(f64::from).collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn monotone_invariance_and_antisymmetry((x, y) in untied_pair(), shift in -5.0f64..5.0) {
            let xt: Vec<f64> = x.iter().map(|v| (v / 100.0).exp() + shift).collect();
            let yt: Vec<f64> = y.iter().map(|v| v * v * v).collect();
            let yn: Vec<f64> = y.iter().map(|v| -v).collect();
            for f in [spearman_with, kendall_tau_b_with] {
                let base = f(&x, &y, PValueMode::Asymptotic).unwrap();
                let mapped = f(&xt, &yt, PValueMode::Asymptotic).unwrap();
                let neg = f(&x, &yn, PValueMode::Asymptotic).unwrap();
                prop_assert!((-1.0..=1.0).contains(&base.coefficient));
                prop_assert!((base.coefficient - mapped.coefficient).abs() < 1e-12);
                prop_assert!((base.coefficient + neg.coefficient).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&base.p_value));
            }
        }
    }
}

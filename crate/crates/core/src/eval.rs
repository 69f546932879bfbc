//! Scoring metrics, the PL-KNN averaging baseline, paired significance
//! testing and win/tie/loss aggregation.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::PartialDataset;
use crate::error::{Error, Result};

/// Per-run scores of one method on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub transductive_accuracy: f64,
    /// `(tolerance, accuracy)` pairs for ordinal label spaces.
    pub mae_k: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

/// Outcome of a paired comparison from the first method's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Loss,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Win => "win",
            Verdict::Tie => "tie",
            Verdict::Loss => "loss",
        };
        f.write_str(s)
    }
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Fraction of predictions within `tol` of the true ordinal label
/// (boundary inclusive).
pub fn mae_k_accuracy(predicted: &[usize], truth: &[usize], tol: f64) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(&a, &b)| (a as f64 - b as f64).abs() <= tol)
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// PL-KNN: each test point sums the candidate-label vectors of its k
/// nearest training points and predicts the argmax, ties toward the lowest
/// class index.
pub fn pl_knn_fit_predict(
    train: &PartialDataset,
    x_test: &ArrayView2<f64>,
    k: usize,
) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if x_test.ncols() != train.q() {
        return Err(Error::DimensionMismatch(format!(
            "test features have {} columns but training has {}",
            x_test.ncols(),
            train.q()
        )));
    }
    let n = train.n();
    let kk = k.min(n);
    let x_train = train.features();
    let y = train.labels().matrix();
    let l = train.l();

    let mut out = Vec::with_capacity(x_test.nrows());
    for test_row in x_test.rows() {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let d2: f64 = x_train
                    .row(i)
                    .iter()
                    .zip(test_row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2, i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));

        let mut votes = vec![0.0f64; l];
        for &(_, i) in &dists[..kk] {
            for (j, vote) in votes.iter_mut().enumerate() {
                *vote += y[[i, j]];
            }
        }
        let mut best = 0;
        let mut best_v = votes[0];
        for (j, &v) in votes.iter().enumerate().skip(1) {
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        out.push(best);
    }
    Ok(out)
}

// ---- Student's t machinery ------------------------------------------------

/// Lanczos approximation of ln Γ(x) for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Continued-fraction evaluation for the incomplete beta function.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t))
}

/// Two-sided critical value: the t at which the two-sided p equals
/// `significance`. Found by bisection; the p-value is monotone in |t|.
pub fn t_critical(df: usize, significance: f64) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidInput("degrees of freedom must be >= 1".into()));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidInput(format!(
            "significance must be in (0,1), got {significance}"
        )));
    }
    let mut lo = 0.0f64;
    let mut hi = 1e6f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_p(mid, df) > significance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided paired t-test on per-split scores, reporting from the first
/// argument's perspective. Zero variance degenerates to the sign of the
/// mean difference.
pub fn paired_t_test(a: &[f64], b: &[f64], significance: f64) -> Result<Verdict> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} scores",
            a.len(),
            b.len()
        )));
    }
    let m = a.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "paired t-test needs at least 2 pairs, got {m}"
        )));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidInput(format!(
            "significance must be in (0,1), got {significance}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / m as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
    let sd = var.sqrt();

    if sd == 0.0 {
        return Ok(if mean > 0.0 {
            Verdict::Win
        } else if mean < 0.0 {
            Verdict::Loss
        } else {
            Verdict::Tie
        });
    }
    let t = mean / (sd / (m as f64).sqrt());
    let crit = t_critical(m - 1, significance)?;
    Ok(if t > crit {
        Verdict::Win
    } else if t < -crit {
        Verdict::Loss
    } else {
        Verdict::Tie
    })
}

/// Sum verdicts into `(wins, ties, losses)`.
pub fn aggregate_wtl(verdicts: &[Verdict]) -> Result<(usize, usize, usize)> {
    if verdicts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = (0, 0, 0);
    for v in verdicts {
        match v {
            Verdict::Win => counts.0 += 1,
            Verdict::Tie => counts.1 += 1,
            Verdict::Loss => counts.2 += 1,
        }
    }
    Ok(counts)
}

/// Mean and sample standard deviation (n−1 denominator; 0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::PartialLabelMatrix;
    use ndarray::array;

    #[test]
    fn accuracy_counts_exact_matches() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 9]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(
            accuracy(&[1], &[1, 2]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mae_tolerance_is_boundary_inclusive() {
        assert_eq!(
            mae_k_accuracy(&[5, 6], &[5, 6], 0.0).unwrap(),
            accuracy(&[5, 6], &[5, 6]).unwrap()
        );
        // off by exactly three years still counts at tol 3
        assert_eq!(mae_k_accuracy(&[10, 13], &[13, 10], 3.0).unwrap(), 1.0);
        assert_eq!(mae_k_accuracy(&[10, 14], &[14, 10], 3.0).unwrap(), 0.0);
    }

    #[test]
    fn pl_knn_with_k_one_is_nearest_neighbor() {
        let data = make_blobs(30, 3, 2, 8.0, 3).unwrap();
        let preds = pl_knn_fit_predict(&data, &data.features().view(), 1).unwrap();
        let truth = data.true_labels().unwrap();
        // the nearest neighbor of a training point is itself
        assert_eq!(accuracy(&preds, truth).unwrap(), 1.0);
    }

    #[test]
    fn pl_knn_with_huge_k_votes_by_column_sums() {
        let x = array![[0.0], [1.0], [2.0]];
        let y = array![[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
        let data = crate::data::PartialDataset::new(
            x,
            PartialLabelMatrix::new(y).unwrap(),
            None,
        )
        .unwrap();
        let test = array![[0.4], [1.9]];
        let preds = pl_knn_fit_predict(&data, &test.view(), 100).unwrap();
        // column sums are [1, 3, 1]; every test point gets class 1
        assert_eq!(preds, vec![1, 1]);
    }

    #[test]
    fn pl_knn_favors_a_shared_candidate() {
        // all five training rows carry label 0 plus a distinct extra label
        let x = array![[0.0], [0.1], [0.2], [0.3], [0.4]];
        let y = array![
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        ];
        let data = crate::data::PartialDataset::new(
            x,
            PartialLabelMatrix::new(y).unwrap(),
            None,
        )
        .unwrap();
        let test = array![[0.2]];
        let preds = pl_knn_fit_predict(&data, &test.view(), 3).unwrap();
        assert_eq!(preds, vec![0]);
    }

    #[test]
    fn critical_value_matches_tables() {
        // df 9, two-sided 0.05
        let c = t_critical(9, 0.05).unwrap();
        assert!((c - 2.2622).abs() < 1e-3, "{c}");
        // df 4, two-sided 0.05
        let c = t_critical(4, 0.05).unwrap();
        assert!((c - 2.7764).abs() < 1e-3, "{c}");
        // df 30, two-sided 0.01
        let c = t_critical(30, 0.01).unwrap();
        assert!((c - 2.7500).abs() < 1e-3, "{c}");
    }

    #[test]
    fn identical_samples_tie() {
        let a = vec![0.5, 0.6, 0.7];
        assert_eq!(paired_t_test(&a, &a, 0.05).unwrap(), Verdict::Tie);
    }

    #[test]
    fn zero_variance_with_positive_mean_wins() {
        let a: Vec<f64> = (0..10).map(|i| 0.5 + 0.1 + i as f64 * 0.0).collect();
        let b: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 0.0).collect();
        assert_eq!(paired_t_test(&a, &b, 0.05).unwrap(), Verdict::Win);
        assert_eq!(paired_t_test(&b, &a, 0.05).unwrap(), Verdict::Loss);
    }

    #[test]
    fn small_effect_with_noise_ties() {
        // mean(d) = 0.01, sd(d) = 0.1, m = 10 -> t ~ 0.316 < 2.262
        let d = [
            0.11186427, 0.09650688, -0.05639919, -0.01725297, 0.03918696, -0.13677545,
            -0.09815155, 0.11371094, 0.13278026, -0.08547015,
        ];
        // rescale so the sample stats are exactly mean 0.01, sd 0.1
        let (m0, s0) = mean_std(&d);
        let d: Vec<f64> = d.iter().map(|x| (x - m0) / s0 * 0.1 + 0.01).collect();
        let (m1, s1) = mean_std(&d);
        assert!((m1 - 0.01).abs() < 1e-12 && (s1 - 0.1).abs() < 1e-12);
        let b = vec![0.0; 10];
        assert_eq!(paired_t_test(&d, &b, 0.05).unwrap(), Verdict::Tie);
    }

    #[test]
    fn swapping_arguments_flips_the_verdict() {
        let a = vec![0.9, 0.8, 0.95, 0.85, 0.9];
        let b = vec![0.5, 0.55, 0.6, 0.5, 0.45];
        assert_eq!(paired_t_test(&a, &b, 0.05).unwrap(), Verdict::Win);
        assert_eq!(paired_t_test(&b, &a, 0.05).unwrap(), Verdict::Loss);
    }

    #[test]
    fn shifting_both_samples_keeps_the_verdict() {
        let a = vec![0.7, 0.72, 0.68, 0.71];
        let b = vec![0.6, 0.63, 0.59, 0.61];
        let v0 = paired_t_test(&a, &b, 0.05).unwrap();
        let a2: Vec<f64> = a.iter().map(|x| x + 0.17).collect();
        let b2: Vec<f64> = b.iter().map(|x| x + 0.17).collect();
        assert_eq!(paired_t_test(&a2, &b2, 0.05).unwrap(), v0);
    }

    #[test]
    fn verdict_counts_are_conserved() {
        let vs = vec![Verdict::Win, Verdict::Win, Verdict::Tie];
        assert_eq!(aggregate_wtl(&vs).unwrap(), (2, 1, 0));
        let ties = vec![Verdict::Tie; 7];
        assert_eq!(aggregate_wtl(&ties).unwrap(), (0, 7, 0));
        assert!(matches!(aggregate_wtl(&[]), Err(Error::EmptyInput)));
    }
}

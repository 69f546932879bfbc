//! Dataset representation, delimited-text I/O, train/test splitting, the
//! controlled candidate-label corruption protocol and a synthetic blob
//! generator for desk-scale experiments.
//!
//! The on-disk format is three plain text files: features (one row of `q`
//! numbers per sample), candidates (one row of `l` entries in {0,1}) and an
//! optional truth file (one 0-based class index per line). Values are
//! comma- or whitespace-delimited (auto-detected) and `#` starts a comment
//! line.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PartialLabelMatrix;

/// Features, candidate labels and (optionally) the concealed ground truth,
/// which is held for evaluation only.
#[derive(Debug, Clone)]
pub struct PartialDataset {
    features: Array2<f64>,
    labels: PartialLabelMatrix,
    true_labels: Option<Vec<usize>>,
}

impl PartialDataset {
    pub fn new(
        features: Array2<f64>,
        labels: PartialLabelMatrix,
        true_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            true_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.labels.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} candidate rows",
                self.features.nrows(),
                self.labels.n()
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        if let Some(truth) = &self.true_labels {
            if truth.len() != self.labels.n() {
                return Err(Error::DimensionMismatch(format!(
                    "{} truth labels but {} samples",
                    truth.len(),
                    self.labels.n()
                )));
            }
            for (i, &t) in truth.iter().enumerate() {
                if t >= self.labels.l() {
                    return Err(Error::InvariantViolation {
                        row: i,
                        msg: format!("truth label {t} out of range"),
                    });
                }
                if self.labels.matrix()[[i, t]] != 1.0 {
                    return Err(Error::InvariantViolation {
                        row: i,
                        msg: format!("truth label {t} is not among the candidates"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &PartialLabelMatrix {
        &self.labels
    }

    pub fn true_labels(&self) -> Option<&[usize]> {
        self.true_labels.as_deref()
    }

    pub fn n(&self) -> usize {
        self.labels.n()
    }

    pub fn l(&self) -> usize {
        self.labels.l()
    }

    pub fn q(&self) -> usize {
        self.features.ncols()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let features = self.features.select(Axis(0), idx);
        let y = self.labels.matrix().select(Axis(0), idx);
        let true_labels = self
            .true_labels
            .as_ref()
            .map(|t| idx.iter().map(|&i| t[i]).collect());
        Self {
            features,
            labels: PartialLabelMatrix::new(y).expect("subset of valid labels stays valid"),
            true_labels,
        }
    }
}

/// How candidate sets are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// One designated per-class partner label co-occurs with probability ε;
    /// otherwise one of the remaining labels is drawn uniformly. Exactly one
    /// false positive per corrupted sample.
    CoupledEpsilon,
    /// `r` false positives drawn uniformly without replacement from the
    /// non-true labels.
    RandomR,
}

/// Parameters of the controlled corruption protocol.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Fraction of samples receiving false-positive labels.
    pub p: f64,
    /// False positives per corrupted sample (random-r mode; fixed at 1 in
    /// coupled-epsilon mode).
    pub r: usize,
    /// Co-occurrence probability of the coupling label (coupled-epsilon
    /// mode; implied `1/(l−1)` in random-r mode).
    pub epsilon: f64,
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self, l: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidSpec(format!("p must be in [0,1], got {}", self.p)));
        }
        match self.mode {
            CorruptionMode::CoupledEpsilon => {
                if !(0.0..=1.0).contains(&self.epsilon) {
                    return Err(Error::InvalidSpec(format!(
                        "epsilon must be in [0,1], got {}",
                        self.epsilon
                    )));
                }
                if self.r != 1 {
                    return Err(Error::InvalidSpec(
                        "coupled-epsilon mode fixes r = 1".into(),
                    ));
                }
                if l < 3 {
                    return Err(Error::InvalidSpec(format!(
                        "coupled-epsilon mode needs at least 3 labels, got {l}"
                    )));
                }
            }
            CorruptionMode::RandomR => {
                if self.r < 1 || self.r >= l {
                    return Err(Error::InvalidSpec(format!(
                        "random-r mode needs 1 <= r <= l-1, got r = {} with l = {l}",
                        self.r
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Inject false-positive candidates around the given ground truth.
///
/// Exactly `⌊p·n⌋` samples, chosen uniformly without replacement, receive
/// extra labels; every row keeps its ground truth and uncorrupted rows stay
/// one-hot.
pub fn synthesize_candidates(
    true_labels: &[usize],
    l: usize,
    spec: &CorruptionSpec,
) -> Result<PartialLabelMatrix> {
    spec.validate(l)?;
    let n = true_labels.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = true_labels.iter().find(|&&t| t >= l) {
        return Err(Error::InvalidInput(format!(
            "true label {bad} out of range for {l} classes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut y = Array2::<f64>::zeros((n, l));
    for (i, &t) in true_labels.iter().enumerate() {
        y[[i, t]] = 1.0;
    }

    // fixed per-class coupling partner, drawn once per dataset
    let partners: Vec<usize> = match spec.mode {
        CorruptionMode::CoupledEpsilon => (0..l)
            .map(|c| {
                let offset = rng.random_range(1..l);
                (c + offset) % l
            })
            .collect(),
        CorruptionMode::RandomR => Vec::new(),
    };

    let corrupted = (spec.p * n as f64).floor() as usize;
    let mut chosen = rand::seq::index::sample(&mut rng, n, corrupted).into_vec();
    chosen.sort_unstable();

    for &i in &chosen {
        let t = true_labels[i];
        match spec.mode {
            CorruptionMode::CoupledEpsilon => {
                let partner = partners[t];
                let extra = if rng.random_range(0.0..1.0) < spec.epsilon {
                    partner
                } else {
                    // uniform over the l−2 labels that are neither the truth
                    // nor the partner
                    let mut pick = rng.random_range(0..l - 2);
                    let mut label = 0;
                    for c in 0..l {
                        if c == t || c == partner {
                            continue;
                        }
                        if pick == 0 {
                            label = c;
                            break;
                        }
                        pick -= 1;
                    }
                    label
                };
                y[[i, extra]] = 1.0;
            }
            CorruptionMode::RandomR => {
                let others: Vec<usize> = (0..l).filter(|&c| c != t).collect();
                let picks = rand::seq::index::sample(&mut rng, others.len(), spec.r);
                for pick in picks {
                    y[[i, others[pick]]] = 1.0;
                }
            }
        }
    }

    PartialLabelMatrix::new(y)
}

/// Disjoint, exhaustive random train/test split; deterministic per seed.
pub fn split(
    dataset: &PartialDataset,
    ratio: f64,
    seed: u64,
) -> Result<(PartialDataset, PartialDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split ratio must be in (0,1), got {ratio}"
        )));
    }
    let n = dataset.n();
    let train_size = (ratio * n as f64).floor() as usize;
    if train_size == 0 || train_size == n {
        return Err(Error::InvalidInput(format!(
            "split of {n} samples at ratio {ratio} leaves an empty side"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (train_idx, test_idx) = idx.split_at(train_size);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

fn parse_line(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in parse_line(line) {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("cannot parse `{tok}` as a number"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, path: &Path) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "file holds no data rows".into(),
        });
    }
    let cols = rows[0].len();
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("row has {} values, expected {cols}", row.len()),
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / cols, cols), flat)
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Load a dataset from the three-file format; all invariants are validated.
pub fn load_dataset(
    features_path: &Path,
    candidates_path: &Path,
    truth_path: Option<&Path>,
) -> Result<PartialDataset> {
    let features = rows_to_matrix(read_numeric_rows(features_path)?, features_path)?;
    let y = rows_to_matrix(read_numeric_rows(candidates_path)?, candidates_path)?;
    let labels = PartialLabelMatrix::new(y)?;
    let true_labels = match truth_path {
        Some(path) => {
            let rows = read_numeric_rows(path)?;
            let mut truth = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                if row.len() != 1 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: format!("expected one label per line, got {}", row.len()),
                    });
                }
                let v = row[0];
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: format!("label {v} is not a nonnegative integer"),
                    });
                }
                truth.push(v as usize);
            }
            Some(truth)
        }
        None => None,
    };
    PartialDataset::new(features, labels, true_labels)
}

/// Write a dataset in the three-file format. Byte-deterministic: floats use
/// the shortest round-trip representation.
pub fn save_dataset(
    dataset: &PartialDataset,
    features_path: &Path,
    candidates_path: &Path,
    truth_path: Option<&Path>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(features_path)?);
    for row in dataset.features().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;

    let mut c = std::io::BufWriter::new(std::fs::File::create(candidates_path)?);
    for row in dataset.labels().matrix().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{}", *v as u8)).collect();
        writeln!(c, "{}", line.join(" "))?;
    }
    c.flush()?;

    if let (Some(path), Some(truth)) = (truth_path, dataset.true_labels()) {
        let mut t = std::io::BufWriter::new(std::fs::File::create(path)?);
        for label in truth {
            writeln!(t, "{label}")?;
        }
        t.flush()?;
    }
    Ok(())
}

/// Isotropic Gaussian clusters (unit standard deviation) with means
/// separated by `separation`, balanced class counts and one-hot labels.
pub fn make_blobs(
    n: usize,
    l: usize,
    q: usize,
    separation: f64,
    seed: u64,
) -> Result<PartialDataset> {
    if l < 1 || q < 1 {
        return Err(Error::InvalidInput("need at least one class and one feature".into()));
    }
    if n < l {
        return Err(Error::InvalidInput(format!(
            "need at least one sample per class: n = {n}, l = {l}"
        )));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidInput(format!(
            "separation must be a finite nonnegative number, got {separation}"
        )));
    }

    // class means: scaled coordinate axes give exact pairwise separation
    // when l <= q, otherwise a 1-D lattice along the first axis
    let mut means = Array2::<f64>::zeros((l, q));
    if l <= q {
        let scale = separation / std::f64::consts::SQRT_2;
        for c in 0..l {
            means[[c, c]] = scale;
        }
    } else {
        for c in 0..l {
            means[[c, 0]] = separation * c as f64;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::<f64>::zeros((n, q));
    let mut truth = Vec::with_capacity(n);
    let mut y = Array2::<f64>::zeros((n, l));
    for i in 0..n {
        let class = i % l;
        truth.push(class);
        y[[i, class]] = 1.0;
        for j in 0..q {
            let noise: f64 = rng.sample(StandardNormal);
            features[[i, j]] = means[[class, j]] + noise;
        }
    }
    PartialDataset::new(features, PartialLabelMatrix::new(y)?, Some(truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(p: f64, r: usize, epsilon: f64, mode: CorruptionMode, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            p,
            r,
            epsilon,
            mode,
            seed,
        }
    }

    #[test]
    fn zero_p_keeps_labels_one_hot() {
        let truth = vec![0, 1, 2, 1, 0];
        let y = synthesize_candidates(&truth, 3, &spec(0.0, 1, 0.5, CorruptionMode::RandomR, 1))
            .unwrap();
        for (i, &t) in truth.iter().enumerate() {
            assert_eq!(y.matrix().row(i).sum(), 1.0);
            assert_eq!(y.matrix()[[i, t]], 1.0);
        }
    }

    #[test]
    fn random_r_rows_have_exactly_r_plus_one_candidates() {
        let truth: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let y = synthesize_candidates(&truth, 5, &spec(1.0, 2, 0.0, CorruptionMode::RandomR, 3))
            .unwrap();
        for row in y.matrix().rows() {
            assert_eq!(row.sum(), 3.0);
        }
    }

    #[test]
    fn epsilon_one_always_adds_the_partner() {
        let truth: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let y = synthesize_candidates(
            &truth,
            4,
            &spec(1.0, 1, 1.0, CorruptionMode::CoupledEpsilon, 5),
        )
        .unwrap();
        // per class, the added label is always the same partner
        let mut partner_of = vec![None; 4];
        for (i, &t) in truth.iter().enumerate() {
            let extras: Vec<usize> = (0..4)
                .filter(|&j| j != t && y.matrix()[[i, j]] == 1.0)
                .collect();
            assert_eq!(extras.len(), 1);
            match partner_of[t] {
                None => partner_of[t] = Some(extras[0]),
                Some(p) => assert_eq!(p, extras[0], "partner changed for class {t}"),
            }
        }
    }

    #[test]
    fn ground_truth_is_never_removed() {
        for seed in 0..5 {
            let truth: Vec<usize> = (0..40).map(|i| (i * 7) % 6).collect();
            for mode in [CorruptionMode::RandomR, CorruptionMode::CoupledEpsilon] {
                let s = spec(0.7, 1, 0.4, mode, seed);
                let y = synthesize_candidates(&truth, 6, &s).unwrap();
                for (i, &t) in truth.iter().enumerate() {
                    assert_eq!(y.matrix()[[i, t]], 1.0);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let truth = vec![0, 1, 2];
        assert!(matches!(
            synthesize_candidates(&truth, 3, &spec(1.0, 3, 0.0, CorruptionMode::RandomR, 0)),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            synthesize_candidates(&truth, 3, &spec(0.5, 1, 1.5, CorruptionMode::CoupledEpsilon, 0)),
            Err(Error::InvalidSpec(_))
        ));
        let two_class = vec![0, 1];
        assert!(matches!(
            synthesize_candidates(&two_class, 2, &spec(0.5, 1, 0.5, CorruptionMode::CoupledEpsilon, 0)),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn split_halves_and_is_deterministic() {
        let data = make_blobs(100, 4, 3, 5.0, 9).unwrap();
        let (train, test) = split(&data, 0.5, 42).unwrap();
        assert_eq!(train.n(), 50);
        assert_eq!(test.n(), 50);
        let (train2, _) = split(&data, 0.5, 42).unwrap();
        assert_eq!(train.features(), train2.features());
        assert!(test.true_labels().is_some());
    }

    #[test]
    fn distinct_seeds_give_distinct_partitions() {
        let data = make_blobs(60, 3, 2, 5.0, 1).unwrap();
        let mut partitions = HashSet::new();
        for seed in 0..10 {
            let (train, _) = split(&data, 0.5, seed).unwrap();
            // fingerprint the partition by the training features
            let key: Vec<u64> = train
                .features()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            partitions.insert(key);
        }
        assert!(partitions.len() >= 9, "only {} distinct splits", partitions.len());
    }

    #[test]
    fn blobs_are_balanced_and_one_hot() {
        let data = make_blobs(10, 3, 2, 4.0, 7).unwrap();
        let mut counts = [0usize; 3];
        for &t in data.true_labels().unwrap() {
            counts[t] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert!(counts.iter().all(|&c| c == 3 || c == 4));
        for row in data.labels().matrix().rows() {
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn one_point_per_class_is_allowed() {
        let data = make_blobs(3, 3, 3, 2.0, 0).unwrap();
        assert_eq!(data.n(), 3);
    }

    #[test]
    fn wide_separation_makes_nearest_neighbor_trivial() {
        let data = make_blobs(90, 3, 3, 10.0, 11).unwrap();
        let x = data.features();
        let truth = data.true_labels().unwrap();
        let mut correct = 0;
        for i in 0..data.n() {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..data.n() {
                if j == i {
                    continue;
                }
                let d: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if truth[best] == truth[i] {
                correct += 1;
            }
        }
        assert!(correct as f64 / data.n() as f64 >= 0.99);
    }

    #[test]
    fn dataset_roundtrips_through_files() {
        let dir = std::env::temp_dir().join(format!("plcl-data-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let data = make_blobs(12, 3, 2, 3.0, 13).unwrap();
        let fx = dir.join("features.txt");
        let fc = dir.join("candidates.txt");
        let ft = dir.join("labels.txt");
        save_dataset(&data, &fx, &fc, Some(&ft)).unwrap();
        let loaded = load_dataset(&fx, &fc, Some(&ft)).unwrap();
        assert_eq!(loaded.features(), data.features());
        assert_eq!(loaded.labels().matrix(), data.labels().matrix());
        assert_eq!(loaded.true_labels(), data.true_labels());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_rows_are_rejected_with_line_numbers() {
        let dir = std::env::temp_dir().join(format!("plcl-data-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let fx = dir.join("features.txt");
        let fc = dir.join("candidates.txt");
        std::fs::write(&fx, "1.0 2.0\n# comment\n3.0 oops\n").unwrap();
        std::fs::write(&fc, "1 0\n0 1\n").unwrap();
        match load_dataset(&fx, &fc, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        // all-zero candidate row
        std::fs::write(&fx, "1.0 2.0\n3.0 4.0\n").unwrap();
        std::fs::write(&fc, "1 0\n0 0\n").unwrap();
        match load_dataset(&fx, &fc, None) {
            Err(Error::InvariantViolation { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected invariant violation, got {other:?}"),
        }

        // truth label outside the candidate set
        std::fs::write(&fc, "1 0\n0 1\n").unwrap();
        let ft = dir.join("labels.txt");
        std::fs::write(&ft, "1\n1\n").unwrap();
        match load_dataset(&fx, &fc, Some(&ft)) {
            Err(Error::InvariantViolation { row, .. }) => assert_eq!(row, 0),
            other => panic!("expected invariant violation, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn comma_delimited_files_parse_too() {
        let dir = std::env::temp_dir().join(format!("plcl-data-commas-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let fx = dir.join("features.csv");
        let fc = dir.join("candidates.csv");
        std::fs::write(&fx, "1.0, 2.0\n3.0, 4.0\n").unwrap();
        std::fs::write(&fc, "1, 1\n0, 1\n").unwrap();
        let ds = load_dataset(&fx, &fc, None).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.features()[[1, 1]], 4.0);
        std::fs::remove_dir_all(&dir).ok();
    }
}

//! Gaussian kernel construction and the closed-form regularized regressor
//! solves shared by the ordinary and complementary classifiers.
//!
//! Both classifiers minimize a least-squares loss plus a ridge penalty. In
//! kernel form the solution is expressed through dual coefficients `A` and a
//! bias `b` such that the training outputs are `H = c·K·A + 1·bᵀ`, where `c`
//! is `1/(2λ)` for the ordinary classifier and `α/(2λ)` for the complementary
//! one. The stationarity system solved here is
//!
//! ```text
//!   (c·K + I/2) A = T − 1·bᵀ,      Aᵀ·1 = 0,
//! ```
//!
//! with `b` chosen so that the zero-column-sum condition holds exactly.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Precomputed Gaussian kernel matrix together with the data needed to
/// evaluate cross-kernels at predict time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelCache {
    gram: Array2<f64>,
    sigma: f64,
    features: Array2<f64>,
}

impl KernelCache {
    /// Wrap an externally built Gram matrix. The matrix is symmetrized; use
    /// this for non-Gaussian grams (e.g. a linear kernel `X·Xᵀ`) where only
    /// the in-sample solves are meaningful.
    pub fn from_gram(gram: Array2<f64>, sigma: f64, features: Array2<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "gram matrix must be square, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.nrows() != features.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "gram has {} rows but features has {}",
                gram.nrows(),
                features.nrows()
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        let mut gram = gram;
        symmetrize(&mut gram);
        Ok(Self { gram, sigma, features })
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

/// Dual-form solution of a kernel ridge solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorSolution {
    /// n×l dual coefficients; every column sums to zero.
    pub dual: Array2<f64>,
    /// Per-class bias.
    pub bias: Array1<f64>,
    /// Kernel coefficient, `1/(2λ)` or `α/(2λ)`.
    pub coeff: f64,
}

impl RegressorSolution {
    /// `c²·tr(AᵀKA)`, which equals `‖W‖²_F` of the implicit primal weights.
    pub fn primal_norm_sq(&self, cache: &KernelCache) -> f64 {
        let ka = cache.gram.dot(&self.dual);
        let tr: f64 = self
            .dual
            .iter()
            .zip(ka.iter())
            .map(|(a, k)| a * k)
            .sum();
        self.coeff * self.coeff * tr
    }
}

/// Primal-form solution used when the kernel is ablated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSolution {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearSolution {
    /// Scores `X·W + 1·bᵀ` for arbitrary feature rows.
    pub fn scores(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} columns but weights expect {}",
                x.ncols(),
                self.weights.nrows()
            )));
        }
        let mut h = x.dot(&self.weights);
        h += &self.bias;
        Ok(h)
    }
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

fn squared_distance(x: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    let xi = x.row(i);
    let xj = x.row(j);
    let mut d2 = 0.0;
    for (a, b) in xi.iter().zip(xj.iter()) {
        let d = a - b;
        d2 += d * d;
    }
    d2
}

/// Build the Gaussian kernel `k(xᵢ,xⱼ) = exp(−‖xᵢ−xⱼ‖²/(2σ²))` with the
/// bandwidth σ set to the mean Euclidean distance over all unordered pairs
/// of training rows.
pub fn gaussian_kernel(x: &ArrayView2<f64>) -> Result<KernelCache> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "kernel construction needs at least 2 points, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }

    let mut d2 = Array2::<f64>::zeros((n, n));
    let mut dist_sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(x, i, j);
            d2[[i, j]] = v;
            d2[[j, i]] = v;
            dist_sum += v.sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let sigma = dist_sum / pairs;
    if sigma == 0.0 {
        return Err(Error::AllPointsIdentical);
    }

    let denom = 2.0 * sigma * sigma;
    let mut gram = d2.mapv(|v| (-v / denom).exp());
    for i in 0..n {
        gram[[i, i]] = 1.0;
    }
    symmetrize(&mut gram);
    Ok(KernelCache {
        gram,
        sigma,
        features: x.to_owned(),
    })
}

/// Closed-form dual ridge solve: factor `M = c·K + I/2` once, then
///
/// ```text
///   z = M⁻¹·1,   b = Tᵀz / (1ᵀz),   A = M⁻¹(T − 1·bᵀ).
/// ```
pub fn fit_kernel_regressor(
    cache: &KernelCache,
    targets: &ArrayView2<f64>,
    coeff: f64,
) -> Result<RegressorSolution> {
    let n = cache.n();
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} rows but kernel has {n}",
            targets.nrows()
        )));
    }
    if !(coeff > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kernel coefficient must be > 0, got {coeff}"
        )));
    }

    let mut m = cache.gram.mapv(|v| coeff * v);
    for i in 0..n {
        m[[i, i]] += 0.5;
    }
    let chol = Cholesky::new(&m.view())?;

    let ones = Array1::<f64>::ones(n);
    let z = chol.solve_vec(&ones.view());
    let z_sum: f64 = z.sum();
    if z_sum.abs() < 1e-300 {
        return Err(Error::NumericalFailure(
            "degenerate bias normalization in kernel solve".into(),
        ));
    }
    let bias = targets.t().dot(&z) / z_sum;

    let mut shifted = targets.to_owned();
    shifted -= &bias.view().insert_axis(Axis(0));
    let dual = chol.solve_mat(&shifted.view());

    Ok(RegressorSolution { dual, bias, coeff })
}

/// Training-set outputs `H = c·K·A + 1·bᵀ`.
pub fn regressor_outputs(cache: &KernelCache, sol: &RegressorSolution) -> Result<Array2<f64>> {
    if sol.dual.nrows() != cache.n() {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} dual rows but kernel has {}",
            sol.dual.nrows(),
            cache.n()
        )));
    }
    let mut h = cache.gram.dot(&sol.dual);
    h.mapv_inplace(|v| v * sol.coeff);
    h += &sol.bias.view().insert_axis(Axis(0));
    Ok(h)
}

/// Ridge regression with an unpenalized bias, solved jointly by centering:
/// `W = (XcᵀXc + λI)⁻¹ Xcᵀ Tc`, `b = t̄ − Wᵀx̄`. The gradient of the
/// penalized least-squares objective vanishes at the returned pair.
pub fn fit_linear_regressor(
    x: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    lambda: f64,
) -> Result<LinearSolution> {
    let n = x.nrows();
    let q = x.ncols();
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} rows but features have {n}",
            targets.nrows()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty feature matrix".into()));
    }

    let x_mean = x.mean_axis(Axis(0)).expect("n > 0");
    let t_mean = targets.mean_axis(Axis(0)).expect("n > 0");
    let xc = x - &x_mean.view().insert_axis(Axis(0));
    let tc = targets - &t_mean.view().insert_axis(Axis(0));

    let mut gram = xc.t().dot(&xc);
    for i in 0..q {
        gram[[i, i]] += lambda;
    }
    let chol = Cholesky::new(&gram.view())?;
    let rhs = xc.t().dot(&tc);
    let weights = chol.solve_mat(&rhs.view());
    let bias = &t_mean - &weights.t().dot(&x_mean);

    Ok(LinearSolution { weights, bias })
}

/// Kernel scores for test rows: `c·K(X*,X)·A + 1·bᵀ` with the Gaussian
/// cross-kernel evaluated against the retained training features.
pub fn predict_scores(
    cache: &KernelCache,
    sol: &RegressorSolution,
    x_test: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if x_test.ncols() != cache.features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "test features have {} columns but training had {}",
            x_test.ncols(),
            cache.features.ncols()
        )));
    }
    let m = x_test.nrows();
    let n = cache.n();
    let denom = 2.0 * cache.sigma * cache.sigma;
    let mut cross = Array2::<f64>::zeros((m, n));
    for i in 0..m {
        let xi = x_test.row(i);
        for j in 0..n {
            let xj = cache.features.row(j);
            let mut d2 = 0.0;
            for (a, b) in xi.iter().zip(xj.iter()) {
                let d = a - b;
                d2 += d * d;
            }
            cross[[i, j]] = (-d2 / denom).exp();
        }
    }
    let mut scores = cross.dot(&sol.dual);
    scores.mapv_inplace(|v| v * sol.coeff);
    scores += &sol.bias.view().insert_axis(Axis(0));
    Ok(scores)
}

/// Row-wise argmax with ties broken toward the lowest class index.
pub fn argmax_rows(scores: &ArrayView2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

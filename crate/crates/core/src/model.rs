//! The PL-CL model: state, initialization, the five block updates, the
//! objective, the alternating fit loop and prediction.
//!
//! Training alternates exact or monotone solves of five blocks — the
//! ordinary classifier, the complementary classifier, the complementary
//! confidence `Q`, the similarity graph `G` and the labeling confidence `P`
//! — so the joint objective never increases across a block update.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::PartialDataset;
use crate::error::{Error, Result};
use crate::graph::{init_graph, knn_mask, update_graph, GraphSupport, SimilarityGraph};
use crate::kernel::{
    argmax_rows, fit_kernel_regressor, fit_linear_regressor, gaussian_kernel, predict_scores,
    regressor_outputs, KernelCache,
};
use crate::qp::{
    project_capped_simplex, solve_projected_gradient_qp, QpSolveReport, DEFAULT_MAX_ITERS,
    DEFAULT_PG_TOL,
};

/// Binary candidate-label matrix; every row carries at least one candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialLabelMatrix {
    y: Array2<f64>,
}

impl PartialLabelMatrix {
    pub fn new(y: Array2<f64>) -> Result<Self> {
        for (i, row) in y.rows().into_iter().enumerate() {
            let mut count = 0;
            for &v in row.iter() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvariantViolation {
                        row: i,
                        msg: format!("candidate entry {v} is not 0 or 1"),
                    });
                }
                if v == 1.0 {
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::InvariantViolation {
                    row: i,
                    msg: "empty candidate set".into(),
                });
            }
        }
        Ok(Self { y })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.y
    }

    /// The complementary label matrix `Ŷ = 1 − Y`.
    pub fn complement(&self) -> Array2<f64> {
        self.y.mapv(|v| 1.0 - v)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn l(&self) -> usize {
        self.y.ncols()
    }
}

/// Labeling confidence `P` and complementary confidence `Q`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceMatrices {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
}

impl ConfidenceMatrices {
    /// Check the fitted-state invariants: `P` rows on the candidate simplex,
    /// `Q` between `Ŷ` and 1.
    pub fn validate(&self, labels: &PartialLabelMatrix) -> Result<()> {
        let y = labels.matrix();
        for (i, row) in self.p.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvariantViolation {
                    row: i,
                    msg: format!("P row sums to {sum}"),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v < -1e-12 || v > y[[i, j]] + 1e-12 {
                    return Err(Error::InvariantViolation {
                        row: i,
                        msg: format!("P entry {v} outside [0, y] at column {j}"),
                    });
                }
            }
        }
        let y_hat = labels.complement();
        for (i, row) in self.q.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < y_hat[[i, j]] - 1e-12 || v > 1.0 + 1e-12 {
                    return Err(Error::InvariantViolation {
                        row: i,
                        msg: format!("Q entry {v} outside [yhat, 1] at column {j}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Hyper-parameters of the solver, with the ablation switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub lambda: f64,
    pub k: usize,
    pub tol: f64,
    pub max_outer_iters: usize,
    pub use_kernel: bool,
    pub use_complementary: bool,
    pub use_graph: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            mu: 1.0,
            lambda: 0.03,
            k: 10,
            tol: 1e-4,
            max_outer_iters: 50,
            use_kernel: true,
            use_complementary: true,
            use_graph: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_outer_iters < 1 {
            return Err(Error::InvalidInput("max_outer_iters must be >= 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu", self.mu),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.use_complementary && self.alpha + self.beta <= 0.0 {
            return Err(Error::InvalidInput(
                "complementary classifier needs alpha + beta > 0".into(),
            ));
        }
        if self.use_complementary && self.alpha <= 0.0 {
            return Err(Error::InvalidInput(
                "complementary classifier needs alpha > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted classifier in either kernel (dual) or linear (primal) form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ClassifierFit {
    Kernel(crate::kernel::RegressorSolution),
    Linear(crate::kernel::LinearSolution),
}

/// Everything `fit` produces; immutable and safe to share for prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub ordinary: ClassifierFit,
    pub complementary: Option<ClassifierFit>,
    pub confidences: ConfidenceMatrices,
    pub graph: Option<SimilarityGraph>,
    pub kernel: Option<KernelCache>,
    pub params: HyperParams,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedModel {
    /// Classify test rows through the ordinary classifier.
    pub fn predict(&self, x_test: &ArrayView2<f64>) -> Result<Vec<usize>> {
        let scores = self.predict_score_matrix(x_test)?;
        Ok(argmax_rows(&scores.view()))
    }

    /// Raw per-class scores for test rows.
    pub fn predict_score_matrix(&self, x_test: &ArrayView2<f64>) -> Result<Array2<f64>> {
        match &self.ordinary {
            ClassifierFit::Kernel(sol) => {
                let cache = self.kernel.as_ref().ok_or_else(|| {
                    Error::InvalidInput("kernel classifier without a kernel cache".into())
                })?;
                predict_scores(cache, sol, x_test)
            }
            ClassifierFit::Linear(sol) => sol.scores(x_test),
        }
    }

    /// Disambiguated training labels: row-wise argmax of the final `P`.
    pub fn transductive_labels(&self) -> Vec<usize> {
        argmax_rows(&self.confidences.p.view())
    }
}

/// Complementary confidence initialization: uniform mass over the
/// non-candidate labels, zero on candidates.
pub fn init_q(labels: &PartialLabelMatrix) -> Array2<f64> {
    let y = labels.matrix();
    let (n, l) = y.dim();
    let mut q = Array2::<f64>::zeros((n, l));
    for i in 0..n {
        let non_candidates = l as f64 - y.row(i).sum();
        if non_candidates == 0.0 {
            continue;
        }
        for j in 0..l {
            if y[[i, j]] == 0.0 {
                q[[i, j]] = 1.0 / non_candidates;
            }
        }
    }
    q
}

/// Uniform-over-candidates confidence matrix, the start of every `P` solve.
fn uniform_over_candidates(labels: &PartialLabelMatrix) -> Array2<f64> {
    let y = labels.matrix();
    let mut p = y.clone();
    for mut row in p.rows_mut() {
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

fn recover_report(result: Result<QpSolveReport>) -> Result<QpSolveReport> {
    match result {
        Ok(report) => Ok(report),
        Err(Error::MaxIterations(report)) => Ok(*report),
        Err(other) => Err(other),
    }
}

/// Labeling-confidence initialization: minimize the graph reconstruction
/// error of `P` over the candidate simplices, starting from the uniform
/// spread over candidates. Without a graph the uniform spread is returned.
pub fn init_p(
    labels: &PartialLabelMatrix,
    graph: Option<&SimilarityGraph>,
    mu_weight: f64,
) -> Result<Array2<f64>> {
    let start = uniform_over_candidates(labels);
    let graph = match graph {
        Some(g) if mu_weight > 0.0 => g,
        _ => return Ok(start),
    };
    let caps = labels.matrix();
    let linear = Array2::<f64>::zeros(start.raw_dim());
    let apply = |p: &Array2<f64>| graph.apply_t(&p.view()) * mu_weight;
    let report = recover_report(solve_projected_gradient_qp(
        apply,
        &linear.view(),
        &caps.view(),
        &start.view(),
        DEFAULT_PG_TOL,
        DEFAULT_MAX_ITERS,
    ))?;
    Ok(report.solution)
}

/// Complementary-confidence update: the weighted average of the
/// complementary scores and `1 − P`, clamped below by `Ŷ` and above by 1.
pub fn update_q(
    h_hat: &ArrayView2<f64>,
    p: &ArrayView2<f64>,
    y_hat: &ArrayView2<f64>,
    alpha: f64,
    beta: f64,
) -> Result<Array2<f64>> {
    if alpha + beta <= 0.0 {
        return Err(Error::InvalidInput(
            "Q update needs alpha + beta > 0".into(),
        ));
    }
    if h_hat.dim() != p.dim() || h_hat.dim() != y_hat.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Q update shapes disagree: {:?} vs {:?} vs {:?}",
            h_hat.dim(),
            p.dim(),
            y_hat.dim()
        )));
    }
    let mut q = Array2::<f64>::zeros(p.raw_dim());
    for (qv, (hv, (pv, yv))) in q
        .iter_mut()
        .zip(h_hat.iter().zip(p.iter().zip(y_hat.iter())))
    {
        let raw = (alpha * hv + beta * (1.0 - pv)) / (alpha + beta);
        *qv = raw.max(*yv).min(1.0);
    }
    Ok(q)
}

/// Labeling-confidence update. Minimizes
/// `‖H − P‖² + β‖E − Q − P‖² + μ‖Pᵀ − PᵀG‖²` over the candidate simplices,
/// warm-started at the incumbent `P` so the value never increases. With
/// `μ = 0` (or no graph) this is the exact row-wise projection of
/// `(H + β(E − Q))/(1 + β)`.
pub fn update_p(
    h: &ArrayView2<f64>,
    q: &ArrayView2<f64>,
    p_current: &ArrayView2<f64>,
    graph: Option<&SimilarityGraph>,
    labels: &PartialLabelMatrix,
    beta: f64,
    mu: f64,
) -> Result<Array2<f64>> {
    let caps = labels.matrix();
    if h.dim() != caps.dim() || q.dim() != caps.dim() || p_current.dim() != caps.dim() {
        return Err(Error::DimensionMismatch(format!(
            "P update shapes disagree with labels {:?}",
            caps.dim()
        )));
    }
    let target = {
        let mut t = q.mapv(|v| beta * (1.0 - v));
        t += h;
        t.mapv(|v| v / (1.0 + beta))
    };

    let graph = match graph {
        Some(g) if mu > 0.0 => g,
        _ => {
            let mut p = Array2::<f64>::zeros(caps.raw_dim());
            for (i, row) in target.rows().into_iter().enumerate() {
                let projected = project_capped_simplex(&row, &caps.row(i))?;
                p.row_mut(i).assign(&projected);
            }
            return Ok(p);
        }
    };

    // normalized form of the quadratic: ‖P − O‖² + μ/(1+β)·‖Pᵀ − PᵀG‖²,
    // which keeps the gradient scale near unity for any β
    let graph_weight = mu / (1.0 + beta);
    let linear = target.mapv(|v| 2.0 * v);
    let apply = move |p: &Array2<f64>| {
        let mut out = graph.apply_t(&p.view()) * graph_weight;
        out.scaled_add(2.0, p);
        out
    };
    let report = recover_report(solve_projected_gradient_qp(
        apply,
        &linear.view(),
        &caps.view(),
        &p_current.to_owned().view(),
        DEFAULT_PG_TOL,
        DEFAULT_MAX_ITERS,
    ))?;
    Ok(report.solution)
}

/// Mutable solver state exposing the individual block updates; `fit` drives
/// it, and tests use it to watch the objective across single blocks.
pub struct Solver {
    features: Array2<f64>,
    labels: PartialLabelMatrix,
    y_hat: Array2<f64>,
    params: HyperParams,
    kernel: Option<KernelCache>,
    support: Option<GraphSupport>,
    graph: Option<SimilarityGraph>,
    ordinary: Option<ClassifierFit>,
    complementary: Option<ClassifierFit>,
    h: Array2<f64>,
    h_hat: Array2<f64>,
    p: Array2<f64>,
    q: Array2<f64>,
}

impl Solver {
    pub fn new(data: &PartialDataset, params: &HyperParams) -> Result<Self> {
        params.validate()?;
        data.validate()?;
        let n = data.n();
        let l = data.l();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "fitting needs at least 2 samples, got {n}"
            )));
        }
        if l < 2 {
            return Err(Error::InvalidInput(format!(
                "fitting needs at least 2 labels, got {l}"
            )));
        }
        let features = data.features().to_owned();
        let labels = data.labels().clone();

        let kernel = if params.use_kernel {
            Some(gaussian_kernel(&features.view())?)
        } else {
            None
        };
        let (support, graph) = if params.use_graph {
            let support = knn_mask(&features.view(), params.k)?;
            let graph = init_graph(&features.view(), &support)?;
            (Some(support), Some(graph))
        } else {
            (None, None)
        };
        let p = init_p(&labels, graph.as_ref(), params.mu)?;
        let q = init_q(&labels);
        let y_hat = labels.complement();

        Ok(Self {
            features,
            labels,
            y_hat,
            params: params.clone(),
            kernel,
            support,
            graph,
            ordinary: None,
            complementary: None,
            h: Array2::zeros((n, l)),
            h_hat: Array2::zeros((n, l)),
            p,
            q,
        })
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn graph(&self) -> Option<&SimilarityGraph> {
        self.graph.as_ref()
    }

    pub fn labels(&self) -> &PartialLabelMatrix {
        &self.labels
    }

    fn fit_classifier(&self, targets: &ArrayView2<f64>, coeff_scale: f64) -> Result<(ClassifierFit, Array2<f64>)> {
        if let Some(cache) = &self.kernel {
            let coeff = coeff_scale / (2.0 * self.params.lambda);
            let sol = fit_kernel_regressor(cache, targets, coeff)?;
            let outputs = regressor_outputs(cache, &sol)?;
            Ok((ClassifierFit::Kernel(sol), outputs))
        } else {
            let lambda = self.params.lambda / coeff_scale;
            let sol = fit_linear_regressor(&self.features.view(), targets, lambda)?;
            let outputs = sol.scores(&self.features.view())?;
            Ok((ClassifierFit::Linear(sol), outputs))
        }
    }

    /// Closed-form refit of the ordinary classifier against the current `P`.
    pub fn step_ordinary(&mut self) -> Result<()> {
        let p = self.p.clone();
        let (fit, outputs) = self.fit_classifier(&p.view(), 1.0)?;
        self.ordinary = Some(fit);
        self.h = outputs;
        Ok(())
    }

    /// Closed-form refit of the complementary classifier against `Q`.
    pub fn step_complementary(&mut self) -> Result<()> {
        if !self.params.use_complementary {
            return Ok(());
        }
        let q = self.q.clone();
        let (fit, outputs) = self.fit_classifier(&q.view(), self.params.alpha)?;
        self.complementary = Some(fit);
        self.h_hat = outputs;
        Ok(())
    }

    /// Thresholded update of the complementary confidence.
    pub fn step_q(&mut self) -> Result<()> {
        if !self.params.use_complementary {
            return Ok(());
        }
        self.q = update_q(
            &self.h_hat.view(),
            &self.p.view(),
            &self.y_hat.view(),
            self.params.alpha,
            self.params.beta,
        )?;
        Ok(())
    }

    /// Column-wise re-solve of the similarity graph.
    pub fn step_graph(&mut self) -> Result<()> {
        let (Some(support), Some(graph)) = (&self.support, &self.graph) else {
            return Ok(());
        };
        let updated = update_graph(
            &self.features.view(),
            &self.p.view(),
            support,
            self.params.gamma,
            self.params.mu,
            graph,
        )?;
        self.graph = Some(updated);
        Ok(())
    }

    /// Constrained update of the labeling confidence.
    pub fn step_p(&mut self) -> Result<()> {
        let beta = if self.params.use_complementary {
            self.params.beta
        } else {
            0.0
        };
        let mu = if self.params.use_graph { self.params.mu } else { 0.0 };
        self.p = update_p(
            &self.h.view(),
            &self.q.view(),
            &self.p.view(),
            self.graph.as_ref(),
            &self.labels,
            beta,
            mu,
        )?;
        Ok(())
    }

    /// The joint objective in its kernel form: classifier fits, the
    /// adversarial coupling, the two graph reconstruction errors and the
    /// ridge penalties expressed through the dual coefficients.
    pub fn objective(&self) -> f64 {
        let params = &self.params;
        let mut total: f64 = (&self.h - &self.p).iter().map(|v| v * v).sum();

        if params.use_complementary {
            let coupling: f64 = self
                .p
                .iter()
                .zip(self.q.iter())
                .map(|(pv, qv)| {
                    let d = 1.0 - pv - qv;
                    d * d
                })
                .sum();
            total += params.beta * coupling;
            let comp_fit: f64 = (&self.h_hat - &self.q).iter().map(|v| v * v).sum();
            total += params.alpha * comp_fit;
        }

        if let Some(graph) = &self.graph {
            total += params.gamma * graph.reconstruction_error(&self.features.view());
            total += params.mu * graph.reconstruction_error(&self.p.view());
        }

        let reg = |fit: &Option<ClassifierFit>| -> f64 {
            match fit {
                Some(ClassifierFit::Kernel(sol)) => {
                    sol.primal_norm_sq(self.kernel.as_ref().expect("kernel fit implies cache"))
                }
                Some(ClassifierFit::Linear(sol)) => {
                    sol.weights.iter().map(|v| v * v).sum()
                }
                None => 0.0,
            }
        };
        total += params.lambda * (reg(&self.ordinary) + reg(&self.complementary));
        total
    }

    /// One outer iteration in the fixed block order; returns the relative
    /// Frobenius change of `P`.
    pub fn iterate(&mut self) -> Result<f64> {
        let p_before = self.p.clone();
        self.step_ordinary()?;
        self.step_complementary()?;
        self.step_q()?;
        self.step_graph()?;
        self.step_p()?;
        let diff: f64 = (&self.p - &p_before).iter().map(|v| v * v).sum::<f64>().sqrt();
        let base: f64 = p_before.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(diff / base.max(1e-12))
    }

    /// Consume the solver into the fitted model.
    pub fn into_model(self, objective_trace: Vec<f64>, iterations: usize, converged: bool) -> FittedModel {
        FittedModel {
            ordinary: self
                .ordinary
                .expect("into_model requires at least one outer iteration"),
            complementary: self.complementary,
            confidences: ConfidenceMatrices { p: self.p, q: self.q },
            graph: self.graph,
            kernel: self.kernel,
            params: self.params,
            objective_trace,
            iterations,
            converged,
        }
    }
}

/// Fit PL-CL by alternating the five block updates until the relative
/// change of `P` drops below `params.tol` or the iteration cap is reached.
/// Hitting the cap is not an error; the model is returned with
/// `converged = false`.
pub fn fit(data: &PartialDataset, params: &HyperParams) -> Result<FittedModel> {
    let mut solver = Solver::new(data, params)?;
    let mut trace = vec![solver.objective()];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_outer_iters {
        let rel_change = solver.iterate()?;
        iterations += 1;
        trace.push(solver.objective());
        if rel_change < params.tol {
            converged = true;
            break;
        }
    }
    Ok(solver.into_model(trace, iterations, converged))
}

//! KNN support construction and the adaptive local similarity graph.
//!
//! Each column `i` of the graph holds reconstruction weights of sample `i`
//! over its k nearest neighbors: nonnegative, summing to one, supported on
//! the KNN mask. Columns are independent small QPs over the Gram matrix of
//! neighbor differences, optionally blending the feature-space and
//! confidence-space geometry.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{solve_projected_gradient_qp, solve_small_qp, DEFAULT_MAX_ITERS};

/// Diagonal jitter added to the column Grams; duplicated neighbors make the
/// Gram exactly singular and this sits far below the solver tolerance.
const GRAM_JITTER: f64 = 1e-12;
const COLUMN_QP_TOL: f64 = 1e-8;

/// KNN location mask: `neighbors[j]` lists the rows that are among the
/// k nearest neighbors of sample `j`, ascending by index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSupport {
    neighbors: Vec<Vec<usize>>,
    k: usize,
}

impl GraphSupport {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors_of(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    /// Dense 0/1 mask with `mask[[i, j]] = 1` iff `i` is a neighbor of `j`.
    pub fn mask(&self) -> Array2<f64> {
        let n = self.n();
        let mut u = Array2::<f64>::zeros((n, n));
        for (j, neigh) in self.neighbors.iter().enumerate() {
            for &i in neigh {
                u[[i, j]] = 1.0;
            }
        }
        u
    }
}

/// Column-stochastic similarity graph supported on a KNN mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityGraph {
    n: usize,
    /// `cols[j]` holds `(row index, weight)` pairs, ascending by row index.
    cols: Vec<Vec<(usize, f64)>>,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut g = Array2::<f64>::zeros((self.n, self.n));
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                g[[i, j]] = w;
            }
        }
        g
    }

    /// Build a graph from a dense column-stochastic matrix; nonzero entries
    /// become the support.
    pub fn from_dense(g: &ArrayView2<f64>) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "graph must be square, got {}x{}",
                n,
                g.ncols()
            )));
        }
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut col = Vec::new();
            let mut sum = 0.0;
            for i in 0..n {
                let w = g[[i, j]];
                if w < -1e-12 {
                    return Err(Error::InvariantViolation {
                        row: j,
                        msg: format!("negative graph weight {w}"),
                    });
                }
                if w != 0.0 {
                    col.push((i, w));
                    sum += w;
                }
            }
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvariantViolation {
                    row: j,
                    msg: format!("graph column sums to {sum}"),
                });
            }
            cols.push(col);
        }
        Ok(Self { n, cols })
    }

    /// `M − GᵀM`, the row-wise reconstruction residual `(I − G)ᵀ M`.
    /// `‖residual(M)‖²_F` equals `‖Mᵀ − MᵀG‖²_F`.
    pub fn residual(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = m.to_owned();
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                let source = m.row(i).to_owned();
                let mut row = out.row_mut(j);
                row.scaled_add(-w, &source);
            }
        }
        out
    }

    /// Squared reconstruction error `‖Mᵀ − MᵀG‖²_F`.
    pub fn reconstruction_error(&self, m: &ArrayView2<f64>) -> f64 {
        self.residual(m).iter().map(|v| v * v).sum()
    }

    /// Apply `T = 2(I−G)(I−G)ᵀ` to every column of `P` without forming `T`,
    /// in O(nnz(G)·l) time.
    pub fn apply_t(&self, p: &ArrayView2<f64>) -> Array2<f64> {
        let v = self.residual(p); // (I−G)ᵀ P
        let mut out = v.clone(); // (I−G) V = V − G V
        for (j, col) in self.cols.iter().enumerate() {
            let vj = v.row(j).to_owned();
            for &(i, w) in col {
                let mut row = out.row_mut(i);
                row.scaled_add(-w, &vj);
            }
        }
        out * 2.0
    }

    /// Check column sums, support containment and nonnegativity.
    pub fn validate(&self, support: &GraphSupport) -> Result<()> {
        for (j, col) in self.cols.iter().enumerate() {
            let sum: f64 = col.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvariantViolation {
                    row: j,
                    msg: format!("graph column sums to {sum}"),
                });
            }
            for &(i, w) in col {
                if w < -1e-12 || w > 1.0 + 1e-12 {
                    return Err(Error::InvariantViolation {
                        row: j,
                        msg: format!("graph weight {w} outside [0, 1]"),
                    });
                }
                if !support.neighbors_of(j).contains(&i) {
                    return Err(Error::InvariantViolation {
                        row: j,
                        msg: format!("graph entry at row {i} is outside the KNN support"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Build the KNN mask: column `j` marks the `min(k, n−1)` rows closest to
/// `xⱼ` in Euclidean distance, self excluded, ties broken by lower index.
pub fn knn_mask(x: &ArrayView2<f64>, k: usize) -> Result<GraphSupport> {
    let n = x.nrows();
    if k < 1 {
        return Err(Error::InvalidInput("neighbor count k must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "KNN mask needs at least 2 samples, got {n}"
        )));
    }
    let kk = k.min(n - 1);
    let mut neighbors = Vec::with_capacity(n);
    for j in 0..n {
        let xj = x.row(j);
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&i| i != j)
            .map(|i| {
                let mut d2 = 0.0;
                for (a, b) in x.row(i).iter().zip(xj.iter()) {
                    let d = a - b;
                    d2 += d * d;
                }
                (d2, i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = dists[..kk].iter().map(|&(_, i)| i).collect();
        chosen.sort_unstable();
        neighbors.push(chosen);
    }
    Ok(GraphSupport { neighbors, k })
}

/// Gram matrix of stacked difference rows `γ·DˣDˣᵀ + μ·DᵖDᵖᵀ` for column `i`.
fn column_gram(
    x: &ArrayView2<f64>,
    p: Option<&ArrayView2<f64>>,
    gamma: f64,
    mu: f64,
    i: usize,
    neighbors: &[usize],
) -> Array2<f64> {
    let kk = neighbors.len();
    let mut gram = Array2::<f64>::zeros((kk, kk));

    let mut accumulate = |m: &ArrayView2<f64>, weight: f64| {
        if weight == 0.0 {
            return;
        }
        let center = m.row(i);
        let diffs: Vec<Array1<f64>> = neighbors
            .iter()
            .map(|&j| &center.to_owned() - &m.row(j))
            .collect();
        for a in 0..kk {
            for b in a..kk {
                let dot = diffs[a].dot(&diffs[b]);
                gram[[a, b]] += weight * dot;
                if b != a {
                    gram[[b, a]] += weight * dot;
                }
            }
        }
    };
    accumulate(x, gamma);
    if let Some(p) = p {
        accumulate(p, mu);
    }
    gram
}

/// Rescale a Gram to unit diagonal magnitude and add the jitter, so the QP
/// tolerance means the same thing at any feature scale. The argmin is
/// unchanged.
fn normalize_gram(mut gram: Array2<f64>) -> Array2<f64> {
    let scale = gram
        .diag()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale > 0.0 {
        gram.mapv_inplace(|v| v / scale);
    }
    let kk = gram.nrows();
    for d in 0..kk {
        gram[[d, d]] += GRAM_JITTER;
    }
    gram
}

/// Feature-only graph initialization: per column, minimize the
/// reconstruction error of `xᵢ` by its neighbors over the capped simplex.
pub fn init_graph(x: &ArrayView2<f64>, support: &GraphSupport) -> Result<SimilarityGraph> {
    let n = support.n();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let neighbors = support.neighbors_of(i);
        let gram = normalize_gram(column_gram(x, None, 1.0, 0.0, i, neighbors));
        let caps = Array1::<f64>::ones(neighbors.len());
        let report = solve_small_qp(&gram.view(), &caps.view(), COLUMN_QP_TOL)?;
        let weights = report.solution_vector();
        cols.push(neighbors.iter().copied().zip(weights).collect());
    }
    let graph = SimilarityGraph { n, cols };
    graph.validate(support)?;
    Ok(graph)
}

/// Joint feature + confidence graph update. Each column is re-solved over
/// the blended Gram `γBˣ + μBᵖ`, warm-started at the previous column so the
/// blended objective never increases.
pub fn update_graph(
    x: &ArrayView2<f64>,
    p: &ArrayView2<f64>,
    support: &GraphSupport,
    gamma: f64,
    mu: f64,
    prev: &SimilarityGraph,
) -> Result<SimilarityGraph> {
    if gamma < 0.0 || mu < 0.0 || (gamma == 0.0 && mu == 0.0) {
        return Err(Error::InvalidInput(
            "graph update needs gamma, mu >= 0 and not both zero".into(),
        ));
    }
    let n = support.n();
    if p.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "confidence matrix has {} rows but support has {n}",
            p.nrows()
        )));
    }
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let neighbors = support.neighbors_of(i);
        let kk = neighbors.len();
        let gram = normalize_gram(column_gram(x, Some(p), gamma, mu, i, neighbors));
        let caps = Array2::<f64>::ones((1, kk));
        let linear = Array2::<f64>::zeros((1, kk));
        let mut start = Array2::<f64>::zeros((1, kk));
        for (t, &(_, w)) in prev.column(i).iter().enumerate() {
            start[[0, t]] = w;
        }
        let apply = |v: &Array2<f64>| -> Array2<f64> {
            let g = gram.dot(&v.row(0)) * 2.0;
            g.insert_axis(Axis(0))
        };
        let report = solve_projected_gradient_qp(
            apply,
            &linear.view(),
            &caps.view(),
            &start.view(),
            COLUMN_QP_TOL,
            DEFAULT_MAX_ITERS,
        )?;
        let weights = report.solution_vector();
        cols.push(neighbors.iter().copied().zip(weights).collect());
    }
    let graph = SimilarityGraph { n, cols };
    graph.validate(support)?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_points_pick_expected_neighbors() {
        let x = array![[0.0], [1.0], [3.0]];
        let support = knn_mask(&x.view(), 1).unwrap();
        assert_eq!(support.neighbors_of(0), &[1]);
        assert_eq!(support.neighbors_of(1), &[0]);
        assert_eq!(support.neighbors_of(2), &[1]);
    }

    #[test]
    fn large_k_marks_everything_off_diagonal() {
        let x = array![[0.0], [1.0], [2.0], [5.0]];
        let support = knn_mask(&x.view(), 10).unwrap();
        let mask = support.mask();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 };
                assert_eq!(mask[[i, j]], expected);
            }
        }
    }

    #[test]
    fn duplicate_point_is_chosen_first() {
        let x = array![[0.0], [0.0], [10.0]];
        let support = knn_mask(&x.view(), 1).unwrap();
        assert_eq!(support.neighbors_of(0), &[1]);
        assert_eq!(support.neighbors_of(1), &[0]);
    }

    #[test]
    fn midpoint_gets_symmetric_weights() {
        let x = array![[0.0], [2.0], [1.0]];
        let support = knn_mask(&x.view(), 2).unwrap();
        let graph = init_graph(&x.view(), &support).unwrap();
        // column 2 reconstructs the midpoint from the two endpoints
        let col: Vec<f64> = graph.column(2).iter().map(|&(_, w)| w).collect();
        assert!((col[0] - 0.5).abs() < 1e-6, "{col:?}");
        assert!((col[1] - 0.5).abs() < 1e-6, "{col:?}");
    }

    #[test]
    fn coincident_neighbor_takes_all_weight() {
        let x = array![[0.0, 0.0], [0.0, 0.0], [3.0, 1.0]];
        let support = knn_mask(&x.view(), 2).unwrap();
        let graph = init_graph(&x.view(), &support).unwrap();
        let col = graph.column(0);
        let w_dup = col.iter().find(|&&(i, _)| i == 1).unwrap().1;
        assert!((w_dup - 1.0).abs() < 1e-5, "{col:?}");
    }

    #[test]
    fn k_one_graph_is_a_single_indicator_per_column() {
        let x = array![[0.0], [1.0], [4.0]];
        let support = knn_mask(&x.view(), 1).unwrap();
        let graph = init_graph(&x.view(), &support).unwrap();
        for j in 0..3 {
            let col = graph.column(j);
            assert_eq!(col.len(), 1);
            assert!((col[0].1 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_mu_update_fixes_the_initial_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        let p = Array2::from_shape_fn((7, 2), |_| rng.random_range(0.0..1.0));
        let support = knn_mask(&x.view(), 3).unwrap();
        let init = init_graph(&x.view(), &support).unwrap();
        let updated = update_graph(&x.view(), &p.view(), &support, 1.0, 0.0, &init).unwrap();
        for j in 0..7 {
            for (a, b) in init.column(j).iter().zip(updated.column(j)) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_confidence_rows_leave_the_graph_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let p = Array2::from_shape_fn((6, 3), |(_, j)| [0.2, 0.5, 0.3][j]);
        let support = knn_mask(&x.view(), 2).unwrap();
        let init = init_graph(&x.view(), &support).unwrap();
        let updated = update_graph(&x.view(), &p.view(), &support, 1.0, 2.0, &init).unwrap();
        for j in 0..6 {
            for (a, b) in init.column(j).iter().zip(updated.column(j)) {
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gram_quadratic_form_equals_reconstruction_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let p = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        let support = knn_mask(&x.view(), 3).unwrap();
        let (gamma, mu) = (0.7, 1.3);
        for i in 0..n {
            let neighbors = support.neighbors_of(i);
            let kk = neighbors.len();
            let gram = column_gram(&x.view(), Some(&p.view()), gamma, mu, i, neighbors);
            // random feasible weights
            let mut g = Array1::from_shape_fn(kk, |_| rng.random_range(0.0..1.0f64));
            let s: f64 = g.sum();
            g.mapv_inplace(|v| v / s);

            let quad = g.dot(&gram.dot(&g));

            let mut x_rec = Array1::<f64>::zeros(x.ncols());
            let mut p_rec = Array1::<f64>::zeros(p.ncols());
            for (t, &j) in neighbors.iter().enumerate() {
                x_rec.scaled_add(g[t], &x.row(j));
                p_rec.scaled_add(g[t], &p.row(j));
            }
            let ex: f64 = (&x.row(i).to_owned() - &x_rec).iter().map(|v| v * v).sum();
            let ep: f64 = (&p.row(i).to_owned() - &p_rec).iter().map(|v| v * v).sum();
            let direct = gamma * ex + mu * ep;
            assert!((quad - direct).abs() < 1e-10, "{quad} vs {direct}");
        }
    }

    #[test]
    fn update_never_increases_the_blended_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let n = 8;
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
            let p = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.0..1.0));
            let support = knn_mask(&x.view(), 3).unwrap();
            let init = init_graph(&x.view(), &support).unwrap();
            let (gamma, mu) = (0.9, 1.7);
            let before =
                gamma * init.reconstruction_error(&x.view()) + mu * init.reconstruction_error(&p.view());
            let updated = update_graph(&x.view(), &p.view(), &support, gamma, mu, &init).unwrap();
            let after = gamma * updated.reconstruction_error(&x.view())
                + mu * updated.reconstruction_error(&p.view());
            assert!(after <= before + 1e-8, "{after} > {before}");
        }
    }

    #[test]
    fn apply_t_matches_dense_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 6;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let support = knn_mask(&x.view(), 2).unwrap();
        let graph = init_graph(&x.view(), &support).unwrap();
        let p = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));

        let g = graph.to_dense();
        let eye = Array2::<f64>::eye(n);
        let i_minus_g = &eye - &g;
        let t = i_minus_g.dot(&i_minus_g.t()) * 2.0;
        let dense = t.dot(&p);
        let sparse = graph.apply_t(&p.view());
        for (a, b) in dense.iter().zip(sparse.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

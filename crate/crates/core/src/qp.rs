//! Constrained quadratic-programming primitives.
//!
//! Three entry points:
//! - [`project_capped_simplex`]: exact Euclidean projection onto
//!   `{p : Σp = 1, 0 ≤ p ≤ caps}` by a breakpoint sweep on the dual variable.
//! - [`solve_small_qp`]: minimize `gᵀMg` over a capped simplex, for the
//!   per-column graph subproblems (dimension ≈ neighbor count).
//! - [`solve_projected_gradient_qp`]: minimize `½⟨x,Qx⟩ − ⟨l,x⟩` over a
//!   product of row-wise capped simplices, with `Q` supplied as an operator
//!   so the block-diagonal graph Hessian is never materialized.
//!
//! Both solvers run the same accelerated projected-gradient loop with a
//! restart-on-increase rule, so the objective never increases along the
//! accepted iterates.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Default KKT tolerance for the small dense QPs.
pub const DEFAULT_SMALL_QP_TOL: f64 = 1e-8;
/// Default projected-gradient tolerance for the large confidence QP.
pub const DEFAULT_PG_TOL: f64 = 1e-6;
/// Default iteration cap for both solvers.
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Outcome of a QP solve. `solution` has one row per simplex block.
#[derive(Debug, Clone)]
pub struct QpSolveReport {
    pub solution: Array2<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `‖x − Π(x − ∇F(x))‖_∞`, zero exactly at a KKT point.
    pub kkt_residual: f64,
}

impl QpSolveReport {
    /// The solution of a single-block solve as a vector.
    pub fn solution_vector(&self) -> Array1<f64> {
        self.solution.row(0).to_owned()
    }
}

/// Exact projection of `v` onto `{p : Σp = 1, 0 ≤ p ≤ caps}`.
///
/// The projection is `pᵢ(τ) = clamp(vᵢ − τ, 0, capᵢ)` for the dual value τ
/// at which the coordinates sum to one; τ is located by sweeping the sorted
/// breakpoints `{vᵢ} ∪ {vᵢ − capᵢ}`. Coordinates are canonicalized by value
/// before the sweep so the result is bit-identical under permutation.
pub fn project_capped_simplex(v: &ArrayView1<f64>, caps: &ArrayView1<f64>) -> Result<Array1<f64>> {
    let m = v.len();
    if caps.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "value has {m} entries but caps has {}",
            caps.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in projection input".into()));
    }
    if caps.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidInput("caps must be finite and nonnegative".into()));
    }
    let cap_sum: f64 = caps.sum();
    if cap_sum < 1.0 - 1e-9 {
        return Err(Error::Infeasible(format!(
            "caps sum to {cap_sum}, cannot reach 1"
        )));
    }
    // Degenerate simplex: the caps themselves are the only feasible point.
    if cap_sum <= 1.0 {
        return Ok(caps.to_owned());
    }
    // Already feasible: return the input untouched so projection is an exact
    // fixed point.
    let v_sum: f64 = v.sum();
    if (v_sum - 1.0).abs() <= 1e-12
        && v.iter().zip(caps.iter()).all(|(x, c)| *x >= 0.0 && x <= c)
    {
        return Ok(v.to_owned());
    }

    // Canonical order: sort (v, cap) pairs by value so every permutation of
    // the input walks the breakpoints in the same sequence.
    let mut pairs: Vec<(f64, f64)> = v.iter().copied().zip(caps.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Events in decreasing τ: at τ = vᵢ coordinate i enters the interior,
    // at τ = vᵢ − capᵢ it saturates at its cap.
    #[derive(Clone, Copy)]
    enum Kind {
        Enter,
        Saturate,
    }
    let mut events: Vec<(f64, Kind, usize)> = Vec::with_capacity(2 * m);
    for (idx, &(vi, ci)) in pairs.iter().enumerate() {
        events.push((vi, Kind::Enter, idx));
        events.push((vi - ci, Kind::Saturate, idx));
    }
    events.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.2.cmp(&b.2))
            .then_with(|| match (a.1, b.1) {
                (Kind::Enter, Kind::Saturate) => std::cmp::Ordering::Less,
                (Kind::Saturate, Kind::Enter) => std::cmp::Ordering::Greater,
                _ => std::cmp::Ordering::Equal,
            })
    });

    // g(τ) = saturated_cap_sum + Σ_{interior}(vᵢ − τ); sweep τ downward and
    // solve for g(τ) = 1 inside the segment where it is crossed.
    let mut active = 0usize;
    let mut active_v_sum = 0.0;
    let mut saturated_sum = 0.0;
    let mut tau = f64::INFINITY;
    let mut idx = 0;
    while idx < events.len() {
        let seg_tau = events[idx].0;
        let g_here = saturated_sum + active_v_sum - active as f64 * seg_tau;
        if g_here >= 1.0 {
            if active > 0 {
                tau = (saturated_sum + active_v_sum - 1.0) / active as f64;
            } else {
                tau = seg_tau;
            }
            break;
        }
        // apply every event at this τ before looking at the next segment
        let group_tau = seg_tau;
        while idx < events.len() && events[idx].0 == group_tau {
            let (_, kind, pair_idx) = events[idx];
            match kind {
                Kind::Enter => {
                    active += 1;
                    active_v_sum += pairs[pair_idx].0;
                }
                Kind::Saturate => {
                    active -= 1;
                    active_v_sum -= pairs[pair_idx].0;
                    saturated_sum += pairs[pair_idx].1;
                }
            }
            idx += 1;
        }
    }
    if !tau.is_finite() {
        // all coordinates saturated without reaching 1; only possible through
        // rounding when Σcaps is barely above 1
        tau = events.last().map(|e| e.0).unwrap_or(0.0);
    }

    let out = Array1::from_iter(
        v.iter()
            .zip(caps.iter())
            .map(|(&vi, &ci)| (vi - tau).clamp(0.0, ci)),
    );
    Ok(out)
}

fn project_rows(x: &Array2<f64>, caps: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros(x.raw_dim());
    for (r, row) in x.rows().into_iter().enumerate() {
        let p = project_capped_simplex(&row, &caps.row(r))
            .map_err(|e| match e {
                Error::Infeasible(msg) => Error::Infeasible(format!("row {r}: {msg}")),
                other => other,
            })?;
        out.row_mut(r).assign(&p);
    }
    Ok(out)
}

/// Spectral-norm estimate of a PSD operator by power iteration from a
/// deterministic start.
fn estimate_operator_norm(
    apply: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    shape: (usize, usize),
) -> f64 {
    let mut y = Array2::<f64>::ones(shape);
    let mut norm = 0.0;
    for _ in 0..50 {
        let z = apply(&y);
        let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if z_norm < 1e-300 {
            return 0.0;
        }
        norm = z_norm / y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y = z / z_norm;
    }
    norm
}

/// Accelerated projected gradient with restart-on-increase for
/// `F(x) = ½⟨x, apply(x)⟩ − ⟨linear, x⟩` over row-wise capped simplices.
fn apg_minimize(
    apply: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    linear: &ArrayView2<f64>,
    caps: &ArrayView2<f64>,
    start: &ArrayView2<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<QpSolveReport> {
    let shape = (linear.nrows(), linear.ncols());
    if caps.dim() != shape || start.dim() != shape {
        return Err(Error::DimensionMismatch(format!(
            "linear {:?}, caps {:?} and start {:?} must agree",
            shape,
            caps.dim(),
            start.dim()
        )));
    }

    let objective = |x: &Array2<f64>| -> f64 {
        let qx = apply(x);
        0.5 * x.iter().zip(qx.iter()).map(|(a, b)| a * b).sum::<f64>()
            - x.iter().zip(linear.iter()).map(|(a, b)| a * b).sum::<f64>()
    };

    let residual = |x: &Array2<f64>| -> Result<f64> {
        let grad = apply(x) - linear;
        let stepped = x - &grad;
        let projected = project_rows(&stepped, caps)?;
        Ok((x - &projected)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs())))
    };

    let mut x = project_rows(&start.to_owned(), caps)?;
    let mut f_x = objective(&x);
    let mut res = residual(&x)?;
    if res <= tol {
        return Ok(QpSolveReport {
            solution: x,
            objective: f_x,
            iterations: 0,
            kkt_residual: res,
        });
    }

    let norm_est = estimate_operator_norm(apply, shape);
    let mut lipschitz = (norm_est * 1.2).max(1e-12);

    let mut x_prev = x.clone();
    let mut t_prev = 1.0f64;
    let mut best = x.clone();
    let mut best_f = f_x;
    let mut best_res = res;
    let mut iterations = 0;
    for iter in 1..=max_iters {
        iterations = iter;
        // objective comparisons cannot resolve differences below the
        // rounding noise of the sums; accepting within this band lets the
        // iterate keep contracting once the objective has flattened out
        let slack = 1e-12 * (1.0 + f_x.abs());
        let t = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
        let momentum = (t_prev - 1.0) / t;
        let y = &x + &((&x - &x_prev) * momentum);
        let grad_y = apply(&y) - linear;
        let stepped = &y - &(grad_y / lipschitz);
        let mut candidate = project_rows(&stepped, caps)?;
        let mut f_candidate = objective(&candidate);

        if f_candidate > f_x + slack {
            // accelerated step overshot: restart momentum and take a plain
            // projected-gradient step, backing the step size off until the
            // objective stops increasing
            t_prev = 1.0;
            loop {
                let grad_x = apply(&x) - linear;
                let stepped = &x - &(grad_x / lipschitz);
                candidate = project_rows(&stepped, caps)?;
                f_candidate = objective(&candidate);
                if f_candidate <= f_x + slack || lipschitz > 1e18 {
                    break;
                }
                lipschitz *= 2.0;
            }
        } else {
            t_prev = t;
        }

        if f_candidate <= f_x + slack {
            x_prev = std::mem::replace(&mut x, candidate);
            f_x = f_candidate;
        } else {
            x_prev = x.clone();
        }

        res = residual(&x)?;
        if f_x < best_f {
            best = x.clone();
            best_f = f_x;
            best_res = res;
        }
        if res <= tol {
            return Ok(QpSolveReport {
                solution: x,
                objective: f_x,
                iterations,
                kkt_residual: res,
            });
        }
    }

    if best_res <= tol {
        return Ok(QpSolveReport {
            solution: best,
            objective: best_f,
            iterations,
            kkt_residual: best_res,
        });
    }
    Err(Error::MaxIterations(Box::new(QpSolveReport {
        solution: best,
        objective: best_f,
        iterations,
        kkt_residual: best_res,
    })))
}

/// Minimize `gᵀMg` subject to `Σg = 1, 0 ≤ g ≤ caps` for a symmetric PSD `M`.
///
/// The matrix is symmetrized on entry; the iteration starts at the projected
/// uniform point, so the reported objective never exceeds the objective
/// there.
pub fn solve_small_qp(
    m: &ArrayView2<f64>,
    caps: &ArrayView1<f64>,
    tol: f64,
) -> Result<QpSolveReport> {
    let dim = m.nrows();
    if m.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "QP matrix must be square, got {}x{}",
            dim,
            m.ncols()
        )));
    }
    if caps.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "QP matrix is {dim}-dimensional but caps has {} entries",
            caps.len()
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("empty QP".into()));
    }
    let mut sym = m.to_owned();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = 0.5 * (sym[[i, j]] + sym[[j, i]]);
            sym[[i, j]] = v;
            sym[[j, i]] = v;
        }
    }

    let caps_row = caps.to_owned().insert_axis(ndarray::Axis(0));
    let uniform = Array2::<f64>::from_elem((1, dim), 1.0 / dim as f64);
    let linear = Array2::<f64>::zeros((1, dim));
    let apply = move |x: &Array2<f64>| -> Array2<f64> {
        let g = sym.dot(&x.row(0));
        let mut out = Array2::<f64>::zeros((1, dim));
        out.row_mut(0).assign(&(g * 2.0));
        out
    };
    apg_minimize(
        &apply,
        &linear.view(),
        &caps_row.view(),
        &uniform.view(),
        tol,
        DEFAULT_MAX_ITERS,
    )
}

/// Minimize `½⟨x, apply(x)⟩ − ⟨linear, x⟩` where every row of `x` is
/// constrained to its own capped simplex. `apply` must be a symmetric PSD
/// operator on the matrix layout; it is only ever evaluated, never formed.
pub fn solve_projected_gradient_qp<F>(
    apply: F,
    linear: &ArrayView2<f64>,
    caps: &ArrayView2<f64>,
    start: &ArrayView2<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<QpSolveReport>
where
    F: Fn(&Array2<f64>) -> Array2<f64>,
{
    apg_minimize(&apply, linear, caps, start, tol, max_iters)
}

//! Model-averaging weight estimators that need no posterior sampling:
//! pseudo-BMA, pseudo-BMA+ (Bayesian-bootstrap regularized), and
//! maximum-likelihood stacking.
//!
//! All three consume per-model pointwise elpd values and produce a
//! column-stochastic [`WeightMatrix`] with one column (the weights do not
//! vary across datapoints; see the hierarchical fit for per-point weights).

use indexmap::IndexMap;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::loo::PointwiseElpd;
use crate::math::{softmax, softmax_suffix_zero};

/// Nonnegative model weights, one row per model, columns summing to one.
///
/// Pooled estimators produce a single column; hierarchical stacking produces
/// one column per datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    model_names: Vec<String>,
    weights: Array2<f64>,
}

impl WeightMatrix {
    /// Validates entries in [0, 1] and column sums within 1e-12 of 1.
    pub fn new(model_names: Vec<String>, weights: Array2<f64>) -> Result<Self> {
        Self::with_tolerance(model_names, weights, 1e-12)
    }

    /// Same as [`WeightMatrix::new`] with a caller-chosen column-sum
    /// tolerance. Text round-trips re-validate at 1e-9.
    pub fn with_tolerance(
        model_names: Vec<String>,
        weights: Array2<f64>,
        tol: f64,
    ) -> Result<Self> {
        let (k, n) = weights.dim();
        if k != model_names.len() || k < 2 {
            return Err(Error::LengthMismatch(format!(
                "{} model names for a {k}x{n} weight matrix",
                model_names.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyMatrix { rows: k, cols: n });
        }
        for ((row, col), &v) in weights.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::WeightOutOfRange { row, col, value: v });
            }
        }
        for col in 0..n {
            let sum: f64 = weights.column(col).sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::WeightColumnSum { col, sum, tol });
            }
        }
        Ok(WeightMatrix {
            model_names,
            weights,
        })
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn n_models(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.weights.ncols()
    }

    /// Weight of model `row` at datapoint `i`, reading a single column as
    /// constant across datapoints.
    pub fn at(&self, row: usize, i: usize) -> f64 {
        if self.weights.ncols() == 1 {
            self.weights[[row, 0]]
        } else {
            self.weights[[row, i]]
        }
    }
}

/// Report from the stacking optimizer.
///
/// `grad_inf_norm` is the infinity norm of the objective gradient in the
/// unconstrained score coordinates of the models carrying weight (a
/// simplex-tangent measure: it vanishes where no feasible direction along
/// the final face improves the objective). `converged` requires that norm
/// at tolerance (or ascent exhausting float resolution with the norm still
/// small) and, for models pinned to zero weight, that none has marginal
/// density value above the mixture average, so no ascent direction remains
/// anywhere on the simplex.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeReport {
    pub converged: bool,
    pub iterations: usize,
    /// Maximized objective, in nats (a sum over datapoints, not a mean).
    pub final_objective: f64,
    pub grad_inf_norm: f64,
    /// True when the objective was flat to 1e-13 across iterates with a
    /// uniform gradient: the models are indistinguishable and the returned
    /// weights are uniform by convention.
    pub flat_objective: bool,
}

/// Extracts (names, K x N value matrix) from an ordered elpd map, checking
/// that all models share a datapoint count.
pub fn pointwise_matrix(elpd: &IndexMap<String, PointwiseElpd>) -> Result<(Vec<String>, Array2<f64>)> {
    if elpd.len() < 2 {
        return Err(Error::TooFewModels(elpd.len()));
    }
    let n = elpd[0].n_datapoints();
    for (name, e) in elpd {
        if e.n_datapoints() != n {
            return Err(Error::LengthMismatch(format!(
                "model \"{name}\" has {} datapoints, expected {n}",
                e.n_datapoints()
            )));
        }
    }
    let k = elpd.len();
    let mut m = Array2::zeros((k, n));
    for (row, (_, e)) in elpd.iter().enumerate() {
        for i in 0..n {
            m[[row, i]] = e.values[i];
        }
    }
    Ok((elpd.keys().cloned().collect(), m))
}

/// Pseudo-BMA weights: the softmax of total elpd per model.
///
/// w_k = exp(E_k - max_j E_j) / sum_j exp(E_j - max_j E_j), E_k the summed
/// pointwise elpd. A model with -inf total gets weight zero; all models at
/// -inf is an error since no weight assignment is meaningful.
pub fn pseudo_bma(elpd: &IndexMap<String, PointwiseElpd>) -> Result<WeightMatrix> {
    let (names, m) = pointwise_matrix(elpd)?;
    let totals: Vec<f64> = m.rows().into_iter().map(|r| r.sum()).collect();
    if totals.iter().all(|t| *t == f64::NEG_INFINITY) {
        return Err(Error::AllElpdNegInf);
    }
    let w = softmax(&totals);
    let k = names.len();
    let weights = Array2::from_shape_vec((k, 1), w).expect("K x 1");
    WeightMatrix::new(names, weights)
}

/// Pseudo-BMA+ weights: pseudo-BMA regularized by the Bayesian bootstrap.
///
/// Each replication draws datapoint weights alpha ~ Dirichlet(1, ..., 1)
/// (standard exponentials normalized, consumed in datapoint order from one
/// seeded generator so runs reproduce bit for bit), forms the resampled
/// totals z_k = N * sum_i alpha_i * values_(k,i), and softmaxes them. The
/// returned weights are the replication mean, renormalized.
pub fn pseudo_bma_plus(
    elpd: &IndexMap<String, PointwiseElpd>,
    replications: usize,
    seed: u64,
) -> Result<WeightMatrix> {
    if replications < 1 {
        return Err(Error::InvalidArgument(
            "pseudo-BMA+ needs at least 1 replication".to_string(),
        ));
    }
    let (names, m) = pointwise_matrix(elpd)?;
    let (k, n) = m.dim();
    if m
        .rows()
        .into_iter()
        .all(|r| r.iter().any(|&v| v == f64::NEG_INFINITY))
    {
        return Err(Error::AllElpdNegInf);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; k];
    let mut alpha = vec![0.0; n];
    for _ in 0..replications {
        let mut total = 0.0;
        for a in alpha.iter_mut() {
            *a = Exp1.sample(&mut rng);
            total += *a;
        }
        for a in alpha.iter_mut() {
            *a /= total;
        }
        let mut z = vec![0.0; k];
        for (kk, zk) in z.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                s += alpha[i] * m[[kk, i]];
            }
            *zk = n as f64 * s;
        }
        for (a, w) in acc.iter_mut().zip(softmax(&z)) {
            *a += w;
        }
    }
    let mean_sum: f64 = acc.iter().sum();
    let w: Vec<f64> = acc.iter().map(|a| a / mean_sum).collect();
    let weights = Array2::from_shape_vec((k, 1), w).expect("K x 1");
    WeightMatrix::new(names, weights)
}

/// Stacking objective and gradient at fixed weights.
///
/// objective = sum_i log sum_k w_k exp(lpd_(k,i)), computed with a per-point
/// max shift; gradient_k = sum_i exp(lpd_(k,i) - m_i) / sum_j w_j
/// exp(lpd_(j,i) - m_i), the partial before any simplex projection.
///
/// A datapoint where every model has -inf lpd makes the objective -inf for
/// all w and is an error carrying the index. At boundary weights that zero
/// out every model with mass at some point the returned objective is -inf
/// and gradient entries are infinite; the optimizer stays interior and never
/// sees that.
pub fn stacking_objective(w: &[f64], lpd: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    let (k, n) = lpd.dim();
    if w.len() != k {
        return Err(Error::LengthMismatch(format!(
            "{} weights for {k} models",
            w.len()
        )));
    }
    let mut obj = 0.0;
    let mut grad = vec![0.0; k];
    for i in 0..n {
        let col = lpd.column(i);
        let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::AllModelsZeroDensity(i));
        }
        let mut z = 0.0;
        for kk in 0..k {
            z += w[kk] * (col[kk] - m).exp();
        }
        obj += m + z.ln();
        for kk in 0..k {
            grad[kk] += (col[kk] - m).exp() / z;
        }
    }
    Ok((obj, grad))
}

/// Options for [`mle_stacking`]. `init` seeds the K-1 unconstrained scores
/// (zeros, the uniform simplex point, when absent).
#[derive(Debug, Clone)]
pub struct StackingOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Option<Vec<f64>>,
}

impl Default for StackingOptions {
    fn default() -> Self {
        StackingOptions {
            tol: 1e-10,
            max_iter: 10_000,
            init: None,
        }
    }
}

/// State at one optimizer iterate: weights, objective, gradients in both
/// coordinate systems, and the per-point ratio matrix the Hessian needs.
struct IterPoint {
    w: Vec<f64>,
    f: f64,
    g_w: Vec<f64>,
    gv: Vec<f64>,
    ratios: Array2<f64>,
}

fn eval_point(v: &[f64], lpd: &Array2<f64>) -> Result<IterPoint> {
    let (k, n) = lpd.dim();
    let w = softmax_suffix_zero(v);
    let mut obj = 0.0;
    let mut ratios = Array2::zeros((k, n));
    for i in 0..n {
        let col = lpd.column(i);
        let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::AllModelsZeroDensity(i));
        }
        let mut z = 0.0;
        for kk in 0..k {
            z += w[kk] * (col[kk] - m).exp();
        }
        obj += m + z.ln();
        for kk in 0..k {
            ratios[[kk, i]] = (col[kk] - m).exp() / z;
        }
    }
    let g_w: Vec<f64> = ratios.rows().into_iter().map(|r| r.sum()).collect();
    let gbar: f64 = g_w.iter().zip(&w).map(|(g, wk)| g * wk).sum();
    let gv: Vec<f64> = (0..k - 1).map(|a| w[a] * (g_w[a] - gbar)).collect();
    Ok(IterPoint {
        w,
        f: obj,
        g_w,
        gv,
        ratios,
    })
}

/// Hessian of the objective in the unconstrained score coordinates.
///
/// With J_ka = dw_k/dv_a = w_k (delta_ka - w_a) and A = R R^T the ratio
/// Gram matrix, H = -J^T A J + sum_k g_k d2w_k/dv dv, where the softmax
/// second derivative is w_k[(delta_ka - w_a)(delta_kb - w_b)
/// - w_a(delta_ab - w_b)].
fn hessian_v(p: &IterPoint) -> Vec<Vec<f64>> {
    let k = p.w.len();
    let d = k - 1;
    let n = p.ratios.ncols();
    let mut a_mat = vec![vec![0.0; k]; k];
    for i in 0..n {
        for r in 0..k {
            let ri = p.ratios[[r, i]];
            if ri == 0.0 {
                continue;
            }
            for c in 0..k {
                a_mat[r][c] += ri * p.ratios[[c, i]];
            }
        }
    }
    let gbar: f64 = p.g_w.iter().zip(&p.w).map(|(g, wk)| g * wk).sum();
    let mut h = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            let mut jaj = 0.0;
            let mut s2 = 0.0;
            for kk in 0..k {
                let ja = p.w[kk] * (f64::from(u8::from(kk == a)) - p.w[a]);
                let jb_factor = f64::from(u8::from(kk == b)) - p.w[b];
                s2 += p.g_w[kk] * p.w[kk] * (f64::from(u8::from(kk == a)) - p.w[a]) * jb_factor;
                for ll in 0..k {
                    let jb = p.w[ll] * (f64::from(u8::from(ll == b)) - p.w[b]);
                    jaj += ja * a_mat[kk][ll] * jb;
                }
            }
            let s3 = gbar * p.w[a] * (f64::from(u8::from(a == b)) - p.w[b]);
            h[a][b] = -jaj + s2 - s3;
        }
    }
    h
}

/// Solves H x = rhs by Gaussian elimination with partial pivoting. None when
/// the pivot collapses.
fn solve_dense(mut h: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let (piv, piv_val) = (col..n)
            .map(|r| (r, h[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite pivots"))?;
        if piv_val < 1e-300 {
            return None;
        }
        h.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let factor = h[r][col] / h[col][col];
            for c in col..n {
                h[r][c] -= factor * h[col][c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for c in col + 1..n {
            acc -= h[col][c] * x[c];
        }
        x[col] = acc / h[col][col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weights this small are treated as boundary-bound and pinned to exactly
/// zero. The objective cost of the truncation is quadratic in the floor,
/// far below the optimizer tolerances, and first-order conditions for
/// pinned models are re-verified before reporting convergence.
const WEIGHT_FLOOR: f64 = 1e-10;

/// Outcome of monotone ascent over one active set.
struct Ascent {
    w: Vec<f64>,
    g_w: Vec<f64>,
    f_enter: f64,
    f_exit: f64,
    gv_norm: f64,
    iterations: usize,
    converged: bool,
}

/// Monotone ascent in the score coordinates of the given lpd rows. Each
/// iteration takes the better of two candidates: a Newton step from the
/// analytic Hessian, capped in score space and backtracked until it
/// improves the objective, and the mixture fixed-point update
/// w_k <- w_k g_k / n, which makes guaranteed progress wherever the
/// quadratic model is poor and drives boundary-bound weights toward zero
/// geometrically. Exits at the gradient tolerance, when a weight decays
/// to the boundary floor (the caller prunes the model and reoptimizes),
/// or when neither candidate can improve the objective at float
/// resolution (accepted as converged only if the gradient is already
/// small).
fn ascend(lpd: &Array2<f64>, w0: &[f64], tol: f64, max_iter: usize) -> Result<Ascent> {
    let (k, n) = lpd.dim();
    let n_f = n as f64;
    let mut v: Vec<f64> = (0..k - 1)
        .map(|a| (w0[a].max(1e-15) / w0[k - 1].max(1e-15)).ln())
        .collect();
    let mut point = eval_point(&v, lpd)?;
    let f_enter = point.f;
    let mut iterations = 0usize;
    // Near a corner the score-space gradient w_k (g_k - gbar) is scaled
    // down by the tiny weights, so a small norm alone can mask a model
    // that still wants mass. Convergence therefore also demands the
    // simplex first-order conditions: every model either carries real
    // weight (its gradient entry is then honest) or has marginal value
    // at most the mixture average.
    let kkt_ok = |p: &IterPoint| {
        p.w
            .iter()
            .zip(&p.g_w)
            .all(|(&w_k, &g_k)| w_k >= 1e-6 || g_k <= n_f * (1.0 + 1e-9) + 1e-9)
    };
    // A weight at the floor whose model has below-average marginal value
    // belongs on the boundary; the caller pins it to zero.
    let prunable = |p: &IterPoint| {
        p.w
            .iter()
            .zip(&p.g_w)
            .any(|(&w_k, &g_k)| w_k < WEIGHT_FLOOR && g_k < n_f)
    };
    let mut converged = inf_norm(&point.gv) <= tol && kkt_ok(&point);
    let stall_floor = 1e-6 * n_f.max(1.0);

    while !converged && iterations < max_iter {
        let h = hessian_v(&point);
        let neg_g: Vec<f64> = point.gv.iter().map(|g| -g).collect();
        let mut dir = match solve_dense(h, neg_g) {
            Some(d) if dot(&d, &point.gv) > 0.0 => d,
            _ => point.gv.clone(),
        };
        // Cap the move in score space: an unguarded Newton step on a
        // nearly flat Hessian can fling the iterate into a corner where
        // score-space gradients vanish and progress dies.
        let norm = inf_norm(&dir);
        if norm > 2.0 {
            for d in &mut dir {
                *d *= 2.0 / norm;
            }
        }
        let slope = dot(&dir, &point.gv);
        let mut best: Option<(Vec<f64>, IterPoint)> = None;
        let mut step = 1.0;
        for _ in 0..40 {
            let cand: Vec<f64> = v.iter().zip(&dir).map(|(vi, di)| vi + step * di).collect();
            let cand_point = eval_point(&cand, lpd)?;
            if cand_point.f.is_finite()
                && cand_point.f > point.f
                && cand_point.f >= point.f + 1e-4 * step * slope
            {
                best = Some((cand, cand_point));
                break;
            }
            step *= 0.5;
        }
        if n > 0 {
            let w_em: Vec<f64> = point
                .w
                .iter()
                .zip(&point.g_w)
                .map(|(wi, gi)| wi * gi / n_f)
                .collect();
            if w_em[k - 1] > 0.0 {
                let v_em: Vec<f64> = (0..k - 1)
                    .map(|a| (w_em[a].max(f64::MIN_POSITIVE) / w_em[k - 1]).ln())
                    .collect();
                let em_point = eval_point(&v_em, lpd)?;
                if em_point.f > point.f && best.as_ref().is_none_or(|(_, p)| em_point.f > p.f) {
                    best = Some((v_em, em_point));
                }
            }
        }
        let Some((new_v, new_point)) = best else {
            // Neither candidate improves at float resolution: accept the
            // point as converged only if it is first-order optimal.
            converged = inf_norm(&point.gv) <= stall_floor && kkt_ok(&point);
            break;
        };
        v = new_v;
        point = new_point;
        iterations += 1;
        if prunable(&point) {
            break;
        }
        if inf_norm(&point.gv) <= tol && kkt_ok(&point) {
            converged = true;
        }
    }
    Ok(Ascent {
        w: point.w.clone(),
        g_w: point.g_w.clone(),
        f_enter,
        f_exit: point.f,
        gv_norm: inf_norm(&point.gv),
        iterations,
        converged,
    })
}

/// Maximum-likelihood stacking weights.
///
/// Maximizes [`stacking_objective`] over the simplex by monotone ascent in
/// the score parameterization w = softmax(v_1, ..., v_(K-1), 0), combining
/// capped Newton steps with the mixture fixed-point update (see [`ascend`])
/// inside an active-set loop: a weight that decays to the boundary floor
/// while its model's marginal value g_k sits below the mixture average n
/// is pinned to exactly zero (which raises the objective, to first order,
/// by w_k (n - g_k)) and the remaining models are reoptimized. Pinned
/// models are re-admitted if the first-order check g_k <= n fails at the
/// end, so the reported optimum satisfies the full simplex optimality
/// conditions. Starts at uniform weights unless `init` scores are given.
///
/// The objective is concave in w, so every interior start reaches the same
/// maximum. When it is flat across iterates (below 1e-13) with a uniform
/// gradient the models are indistinguishable: uniform weights are returned
/// and the report's `flat_objective` is set.
pub fn mle_stacking(
    model_names: Vec<String>,
    lpd: &Array2<f64>,
    opts: &StackingOptions,
) -> Result<(WeightMatrix, OptimizeReport)> {
    let (k, n) = lpd.dim();
    if k < 2 {
        return Err(Error::TooFewModels(k));
    }
    if model_names.len() != k {
        return Err(Error::LengthMismatch(format!(
            "{} model names for {k} lpd rows",
            model_names.len()
        )));
    }
    let n_f = n as f64;
    let mut w_full = match &opts.init {
        Some(init) => {
            if init.len() != k - 1 {
                return Err(Error::LengthMismatch(format!(
                    "init has {} scores, expected {}",
                    init.len(),
                    k - 1
                )));
            }
            softmax_suffix_zero(init)
        }
        None => vec![1.0 / k as f64; k],
    };

    let mut active: Vec<usize> = (0..k).collect();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut gv_norm = f64::INFINITY;
    let mut f_lo = f64::INFINITY;
    let mut f_hi = f64::NEG_INFINITY;

    for _round in 0..4 * k + 8 {
        let sub_lpd = lpd.select(Axis(0), &active);
        let mut w_sub: Vec<f64> = active.iter().map(|&r| w_full[r]).collect();
        let total: f64 = w_sub.iter().sum();
        for x in &mut w_sub {
            *x /= total;
        }

        let (exit_w, exit_g, exit_converged, exit_norm) = if active.len() == 1 {
            let f = sub_lpd.row(0).sum();
            f_lo = f_lo.min(f);
            f_hi = f_hi.max(f);
            (vec![1.0], vec![n_f], true, 0.0)
        } else {
            let budget = opts.max_iter.saturating_sub(iterations);
            let out = ascend(&sub_lpd, &w_sub, opts.tol, budget)?;
            iterations += out.iterations;
            f_lo = f_lo.min(out.f_enter);
            f_hi = f_hi.max(out.f_exit);
            (out.w, out.g_w, out.converged, out.gv_norm)
        };
        w_full = vec![0.0; k];
        for (slot, &row) in active.iter().enumerate() {
            w_full[row] = exit_w[slot];
        }
        gv_norm = exit_norm;

        // Prune models the ascent drove to the boundary, but only when
        // the data agree that they belong there (marginal value below the
        // mixture average; a model that is some point's only support has
        // exploding marginal value and is never pruned).
        let keep: Vec<usize> = (0..active.len())
            .filter(|&s| !(exit_w[s] < WEIGHT_FLOOR && exit_g[s] < n_f))
            .map(|s| active[s])
            .collect();
        debug_assert!(!keep.is_empty(), "some model always has g >= n");
        if keep.len() < active.len() && !keep.is_empty() {
            for &row in &active {
                if !keep.contains(&row) {
                    w_full[row] = 0.0;
                }
            }
            active = keep;
            continue;
        }

        // First-order optimality for pinned models: none may have marginal
        // value above the mixture average, else it re-enters with a little
        // mass (raising the objective) and the face is re-solved.
        let (_, g_all) = stacking_objective(&w_full, lpd)?;
        let violator = (0..k)
            .filter(|m| !active.contains(m))
            .filter(|&m| g_all[m] > n_f * (1.0 + 1e-9) + 1e-9)
            .max_by(|&a, &b| g_all[a].partial_cmp(&g_all[b]).expect("finite gradient"));
        match violator {
            Some(m) if iterations < opts.max_iter => {
                let eps = 1e-6;
                for x in &mut w_full {
                    *x *= 1.0 - eps;
                }
                w_full[m] = eps;
                active.push(m);
                active.sort_unstable();
            }
            v => {
                converged = exit_converged && v.is_none();
                break;
            }
        }
    }

    let (f_final, g_final) = stacking_objective(&w_full, lpd)?;
    f_lo = f_lo.min(f_final);
    f_hi = f_hi.max(f_final);
    let g_spread = g_final.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - g_final.iter().copied().fold(f64::INFINITY, f64::min);
    let g_scale = g_final.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let flat = (f_hi - f_lo) < 1e-13 && g_spread <= 1e-9 * g_scale;

    let (weights, f_report, grad_report) = if flat {
        let uniform = vec![1.0 / k as f64; k];
        let flat_point = eval_point(&vec![0.0; k - 1], lpd)?;
        (uniform, flat_point.f, inf_norm(&flat_point.gv))
    } else {
        (w_full, f_final, gv_norm)
    };

    let matrix = Array2::from_shape_vec((k, 1), weights).expect("K x 1");
    Ok((
        WeightMatrix::new(model_names, matrix)?,
        OptimizeReport {
            converged,
            iterations,
            final_objective: f_report,
            grad_inf_norm: grad_report,
            flat_objective: flat,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn elpd_map(entries: &[(&str, &[f64])]) -> IndexMap<String, PointwiseElpd> {
        entries
            .iter()
            .map(|(name, vals)| {
                (
                    name.to_string(),
                    PointwiseElpd {
                        values: ndarray::Array1::from_vec(vals.to_vec()),
                        pareto_k: None,
                        method: crate::loo::ElpdMethod::TestSet,
                        flagged: Vec::new(),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn pseudo_bma_softmax_algebra() {
        let m = elpd_map(&[("a", &[3.0f64.ln()]), ("b", &[0.0])]);
        let w = pseudo_bma(&m).unwrap();
        assert!((w.weights()[[0, 0]] - 0.75).abs() < 1e-15);
        assert!((w.weights()[[1, 0]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pseudo_bma_equal_totals_exactly_uniform() {
        let m = elpd_map(&[("a", &[1.0, -2.0]), ("b", &[-2.0, 1.0]), ("c", &[-0.5, -0.5])]);
        let w = pseudo_bma(&m).unwrap();
        for k in 0..3 {
            assert_eq!(w.weights()[[k, 0]], 1.0 / 3.0);
        }
    }

    #[test]
    fn pseudo_bma_huge_gap_does_not_overflow() {
        let m = elpd_map(&[("a", &[0.0]), ("b", &[-1000.0])]);
        let w = pseudo_bma(&m).unwrap();
        assert_eq!(w.weights()[[0, 0]], 1.0);
        assert!(w.weights()[[1, 0]] < 1e-300);
    }

    #[test]
    fn pseudo_bma_shift_invariance() {
        let base = elpd_map(&[("a", &[-1.0, -2.0, -0.5]), ("b", &[-1.5, -1.0, -1.2])]);
        let shifted = elpd_map(&[
            ("a", &[-1.0 + 7.3, -2.0 + 7.3, -0.5 + 7.3]),
            ("b", &[-1.5 + 7.3, -1.0 + 7.3, -1.2 + 7.3]),
        ]);
        let w0 = pseudo_bma(&base).unwrap();
        let w1 = pseudo_bma(&shifted).unwrap();
        for k in 0..2 {
            assert!((w0.weights()[[k, 0]] - w1.weights()[[k, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudo_bma_rejects_length_mismatch() {
        let m = elpd_map(&[("a", &[1.0, 2.0]), ("b", &[1.0])]);
        assert!(matches!(pseudo_bma(&m), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn pseudo_bma_plus_identical_models_uniform_for_any_seed() {
        let vals = [-1.3, -0.2, -2.8, -0.9];
        let m = elpd_map(&[("a", &vals), ("b", &vals), ("c", &vals)]);
        for seed in [0, 1, 99] {
            for b in [1, 7, 500] {
                let w = pseudo_bma_plus(&m, b, seed).unwrap();
                let first = w.weights()[[0, 0]];
                for k in 0..3 {
                    assert_eq!(w.weights()[[k, 0]], first);
                    assert!((w.weights()[[k, 0]] - 1.0 / 3.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn pseudo_bma_plus_single_datapoint_degenerates_to_pseudo_bma() {
        let m = elpd_map(&[("a", &[-0.4]), ("b", &[-1.1])]);
        let plain = pseudo_bma(&m).unwrap();
        let plus = pseudo_bma_plus(&m, 25, 3).unwrap();
        for k in 0..2 {
            assert!((plain.weights()[[k, 0]] - plus.weights()[[k, 0]]).abs() < 1e-15);
        }
    }

    #[test]
    fn pseudo_bma_plus_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a: Vec<f64> = (0..50).map(|_| -rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..50).map(|_| -rng.random::<f64>() - 0.1).collect();
        let m = elpd_map(&[("a", &a), ("b", &b)]);
        let w1 = pseudo_bma_plus(&m, 200, 5).unwrap();
        let w2 = pseudo_bma_plus(&m, 200, 5).unwrap();
        assert_eq!(w1.weights(), w2.weights());
        let w3 = pseudo_bma_plus(&m, 200, 6).unwrap();
        assert_ne!(w1.weights(), w3.weights());
    }

    /// Independent oracle: the whole estimator rewritten as one plain loop
    /// over replications, consuming the generator the same pinned way.
    #[test]
    fn pseudo_bma_plus_matches_single_loop_reimplementation() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..n).map(|_| -1.0 - 0.3 * rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|i| a[i] - 0.1 + 0.2 * rng.random::<f64>()).collect();
        let m = elpd_map(&[("a", &a), ("b", &b)]);
        let seed = 12345;
        let reps = 400;
        let got = pseudo_bma_plus(&m, reps, seed).unwrap();

        let mut oracle_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for _ in 0..reps {
            let exps: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut oracle_rng)).collect();
            let tot: f64 = exps.iter().sum();
            let mut za = 0.0;
            let mut zb = 0.0;
            for i in 0..n {
                za += exps[i] / tot * a[i];
                zb += exps[i] / tot * b[i];
            }
            za *= n as f64;
            zb *= n as f64;
            let mx = za.max(zb);
            let ea = (za - mx).exp();
            let eb = (zb - mx).exp();
            sum_a += ea / (ea + eb);
            sum_b += eb / (ea + eb);
        }
        let wa = sum_a / (sum_a + sum_b);
        let wb = sum_b / (sum_a + sum_b);
        assert!((got.weights()[[0, 0]] - wa).abs() < 1e-12);
        assert!((got.weights()[[1, 0]] - wb).abs() < 1e-12);
    }

    #[test]
    fn stacking_objective_hand_arithmetic() {
        let lpd = array![[0.8f64.ln()], [0.2f64.ln()]];
        let (obj, grad) = stacking_objective(&[0.5, 0.5], &lpd).unwrap();
        assert!((obj - 0.5f64.ln()).abs() < 1e-15);
        assert!((grad[0] - 1.6).abs() < 1e-15);
        assert!((grad[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn stacking_objective_identical_rows_flat_gradient() {
        let lpd = array![[-1.0, -2.0, -0.3], [-1.0, -2.0, -0.3]];
        let (o1, g1) = stacking_objective(&[0.3, 0.7], &lpd).unwrap();
        let (o2, g2) = stacking_objective(&[0.9, 0.1], &lpd).unwrap();
        assert!((o1 - o2).abs() < 1e-12);
        assert_eq!(g1[0], g1[1]);
        assert!((g1[0] - 3.0).abs() < 1e-12);
        assert_eq!(g2[0], g2[1]);
    }

    #[test]
    fn stacking_objective_all_neg_inf_point_is_an_error() {
        let lpd = array![
            [-1.0, f64::NEG_INFINITY],
            [-2.0, f64::NEG_INFINITY]
        ];
        match stacking_objective(&[0.5, 0.5], &lpd) {
            Err(Error::AllModelsZeroDensity(1)) => {}
            other => panic!("expected AllModelsZeroDensity(1), got {other:?}"),
        }
    }

    /// Central finite differences along simplex-tangent directions.
    #[test]
    fn stacking_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = 3;
        let n = 20;
        let mut lpd = Array2::zeros((k, n));
        for v in lpd.iter_mut() {
            *v = -3.0 * rng.random::<f64>();
        }
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
        let tot: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|r| r / tot).collect();
        let (_, grad) = stacking_objective(&w, &lpd).unwrap();

        let h = 1e-6;
        for a in 0..k {
            for b in (a + 1)..k {
                // Direction e_a - e_b keeps the weight sum fixed.
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[a] += h;
                wp[b] -= h;
                wm[a] -= h;
                wm[b] += h;
                let (fp, _) = stacking_objective(&wp, &lpd).unwrap();
                let (fm, _) = stacking_objective(&wm, &lpd).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let analytic = grad[a] - grad[b];
                let rel = (fd - analytic).abs() / analytic.abs().max(1.0);
                assert!(rel < 1e-6, "dir ({a},{b}): fd {fd}, analytic {analytic}");
            }
        }
    }

    /// The analytic Hessian backs the Newton direction; check it against
    /// central differences of the analytic gradient in v.
    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = 4;
        let n = 15;
        let mut lpd = Array2::zeros((k, n));
        for v in lpd.iter_mut() {
            *v = -2.5 * rng.random::<f64>();
        }
        let v: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>() - 0.5).collect();
        let p = eval_point(&v, &lpd).unwrap();
        let h_mat = hessian_v(&p);
        let h = 1e-6;
        for b in 0..k - 1 {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[b] += h;
            vm[b] -= h;
            let gp = eval_point(&vp, &lpd).unwrap().gv;
            let gm = eval_point(&vm, &lpd).unwrap().gv;
            for a in 0..k - 1 {
                let fd = (gp[a] - gm[a]) / (2.0 * h);
                assert!(
                    (fd - h_mat[a][b]).abs() < 1e-5 * h_mat[a][b].abs().max(1.0),
                    "H[{a}][{b}]: fd {fd} vs analytic {}",
                    h_mat[a][b]
                );
            }
        }
    }

    #[test]
    fn mle_symmetric_case_is_half_half() {
        let lpd = array![
            [0.8f64.ln(), 0.2f64.ln()],
            [0.2f64.ln(), 0.8f64.ln()]
        ];
        let (w, rep) = mle_stacking(
            vec!["a".into(), "b".into()],
            &lpd,
            &StackingOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!((w.weights()[[0, 0]] - 0.5).abs() < 1e-8);
        assert!((rep.final_objective - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mle_matches_stationarity_solution() {
        // d/dw [ln(.9w + .3(1-w)) + ln(.1w + .7(1-w))] = 0 at w = 1/3.
        let lpd = array![
            [0.9f64.ln(), 0.1f64.ln(), 0.5f64.ln()],
            [0.3f64.ln(), 0.7f64.ln(), 0.5f64.ln()]
        ];
        let (w, rep) = mle_stacking(
            vec!["a".into(), "b".into()],
            &lpd,
            &StackingOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!(
            (w.weights()[[0, 0]] - 1.0 / 3.0).abs() < 1e-9,
            "w = {}",
            w.weights()[[0, 0]]
        );

        // Grid oracle at 1e-4 steps agrees.
        let mut best = (f64::NEG_INFINITY, 0.0);
        for step in 0..=10_000 {
            let wa = step as f64 / 10_000.0;
            let (f, _) = stacking_objective(&[wa, 1.0 - wa], &lpd).unwrap();
            if f > best.0 {
                best = (f, wa);
            }
        }
        assert!((w.weights()[[0, 0]] - best.1).abs() < 1e-4);
        assert!((rep.final_objective - best.0).abs() < 1e-8);
        assert!(rep.final_objective >= best.0 - 1e-12, "optimizer below grid");
    }

    #[test]
    fn mle_flat_objective_flags_and_returns_uniform() {
        let lpd = array![[-1.0, -0.5], [-1.0, -0.5], [-1.0, -0.5]];
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let (w, rep) = mle_stacking(names.clone(), &lpd, &StackingOptions::default()).unwrap();
        assert!(rep.flat_objective);
        assert!(rep.converged);
        for k in 0..3 {
            assert_eq!(w.weights()[[k, 0]], 1.0 / 3.0);
        }
        // Same from a random interior start.
        let opts = StackingOptions {
            init: Some(vec![0.8, -1.3]),
            ..StackingOptions::default()
        };
        let (w2, rep2) = mle_stacking(names, &lpd, &opts).unwrap();
        assert!(rep2.flat_objective);
        for k in 0..3 {
            assert_eq!(w2.weights()[[k, 0]], 1.0 / 3.0);
        }
    }

    #[test]
    fn mle_boundary_optimum_converges_to_dominating_model() {
        // Model a strictly better everywhere: optimum at the w = (1, 0) corner.
        let lpd = array![
            [0.9f64.ln(), 0.8f64.ln(), 0.95f64.ln()],
            [0.1f64.ln(), 0.2f64.ln(), 0.05f64.ln()]
        ];
        let (w, rep) = mle_stacking(
            vec!["a".into(), "b".into()],
            &lpd,
            &StackingOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!(w.weights()[[0, 0]] > 0.9999, "w_a = {}", w.weights()[[0, 0]]);
        let (uniform_obj, _) = stacking_objective(&[0.5, 0.5], &lpd).unwrap();
        assert!(rep.final_objective >= uniform_obj);
    }

    #[test]
    fn mle_ascent_property_from_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lpd = Array2::zeros((3, 40));
        for v in lpd.iter_mut() {
            *v = (0.05 + 0.9 * rng.random::<f64>()).ln();
        }
        let (_, rep) = mle_stacking(
            vec!["a".into(), "b".into(), "c".into()],
            &lpd,
            &StackingOptions::default(),
        )
        .unwrap();
        let (uniform_obj, _) = stacking_objective(&[1.0 / 3.0; 3], &lpd).unwrap();
        assert!(rep.final_objective >= uniform_obj - 1e-12);
        assert!(rep.converged);
        assert!(rep.grad_inf_norm <= 1e-10);
    }

    #[test]
    fn weight_matrix_validation() {
        let bad = Array2::from_shape_vec((2, 1), vec![0.7, 0.2]).unwrap();
        assert!(matches!(
            WeightMatrix::new(vec!["a".into(), "b".into()], bad),
            Err(Error::WeightColumnSum { .. })
        ));
        let neg = Array2::from_shape_vec((2, 1), vec![1.2, -0.2]).unwrap();
        assert!(matches!(
            WeightMatrix::new(vec!["a".into(), "b".into()], neg),
            Err(Error::WeightOutOfRange { .. })
        ));
    }
}

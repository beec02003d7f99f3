//! Warm-user embedding updates against a frozen model.
//!
//! The flagship path is the closed-form linear update
//! `e_uᵀ = (1/β_u) (a_uᵀ B_I⁻¹) V⁺` driven by a precomputed plan; the rest of
//! the module holds the baselines it is measured against: gradient descent on
//! the same quadratic (with optional mean mixing), the exact weighted
//! least-squares minimizer, SVD fold-in for the spectral model, and the
//! zero / mean / full-retrain fallbacks.

use crate::data::{build_matrix, graph_stats, InteractionLog, UserHistory};
use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, DenseMatrix, DEFAULT_RANK_TOL};
use crate::model::{train_ultragcn, EmbeddingModel, ModelKind, TrainConfig, TrainOutcome};
use crate::scalar::{axpy, norm2, Scalar};

/// Embedding-norm bound beyond which gradient fold-in is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Warm-user update strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Keep the trained embedding (zero vector for users new to training).
    Zero,
    /// Replace with the mean trained user embedding.
    Mean,
    /// Closed-form linear update via the precomputed pseudo-inverse.
    Linear,
    /// Gradient descent on the weighted reconstruction loss, then mean mixing.
    Sgd,
    /// Exact minimizer of the weighted least-squares objective.
    ExactWls,
    /// Spectral fold-in for the SVD model.
    SvdFold,
    /// Retrain from scratch on train + warm events.
    FullRetrain,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Zero => "zero",
            Strategy::Mean => "mean",
            Strategy::Linear => "linear",
            Strategy::Sgd => "sgd",
            Strategy::ExactWls => "exact_wls",
            Strategy::SvdFold => "svd",
            Strategy::FullRetrain => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero" => Ok(Strategy::Zero),
            "mean" => Ok(Strategy::Mean),
            "linear" => Ok(Strategy::Linear),
            "sgd" => Ok(Strategy::Sgd),
            "exact_wls" | "wls" => Ok(Strategy::ExactWls),
            "svd" => Ok(Strategy::SvdFold),
            "full" | "retrain" => Ok(Strategy::FullRetrain),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy {other:?}; expected zero|mean|linear|sgd|exact_wls|svd|full"
            ))),
        }
    }
}

/// A user's interaction vector plus the refreshed user weight, the inputs of
/// every per-user update.
#[derive(Debug, Clone)]
pub struct FoldInRequest<T> {
    pub user: usize,
    /// Support of the interaction vector: sorted, deduplicated item indices.
    pub items: Vec<u32>,
    /// Interaction values on the support; all ones for binary feedback.
    pub values: Vec<T>,
    pub beta_u: T,
}

impl<T: Scalar> FoldInRequest<T> {
    pub fn binary(user: usize, items: Vec<u32>, beta_u: T) -> Self {
        let values = vec![T::one(); items.len()];
        Self {
            user,
            items,
            values,
            beta_u,
        }
    }

    pub fn from_history(h: UserHistory<T>) -> Self {
        Self::binary(h.user, h.items, h.beta_u)
    }

    fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::ColdUser { user: self.user });
        }
        if !self.beta_u.is_finite() || self.beta_u <= T::zero() {
            return Err(Error::ColdUser { user: self.user });
        }
        Ok(())
    }
}

/// Precomputed state for the closed-form update: the materialized
/// pseudo-inverse and the inverse item weights, reusable across every warm
/// user of one model.
///
/// The `d x N` pseudo-inverse is held transposed (`N x d` row-major) so the
/// per-user product streams it and the scaled interaction vector exactly
/// once each.
#[derive(Debug, Clone)]
pub struct FoldInPlan<T> {
    v_pinv_t: DenseMatrix<T>,
    /// `sqrt(d_i + 1)`: the algebraic inverse of each item weight.
    inv_beta_i: Vec<T>,
    rank: usize,
    built_from: u64,
}

impl<T: Scalar> FoldInPlan<T> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_items(&self) -> usize {
        self.inv_beta_i.len()
    }

    pub fn inv_beta_items(&self) -> &[T] {
        &self.inv_beta_i
    }

    /// The materialized `d x N` pseudo-inverse.
    pub fn pseudo_inverse_matrix(&self) -> DenseMatrix<T> {
        self.v_pinv_t.transposed()
    }

    pub fn built_from(&self) -> u64 {
        self.built_from
    }

    /// A plan may only serve the exact model state it was built from.
    pub fn verify(&self, model: &EmbeddingModel<T>) -> Result<()> {
        let current = model.fingerprint();
        if current != self.built_from {
            return Err(Error::StalePlan {
                plan: self.built_from,
                model: current,
            });
        }
        Ok(())
    }
}

/// Build the reusable plan: pseudo-invert the item factor once and invert the
/// item weights.
pub fn build_plan<T: Scalar>(model: &EmbeddingModel<T>) -> Result<FoldInPlan<T>> {
    if model.kind != ModelKind::UltraGcn {
        return Err(Error::InvalidArgument(
            "fold-in plans are built for the graph-weighted model".into(),
        ));
    }
    let pinv = pseudo_inverse(&model.item_embeddings, T::from_f64_lossy(DEFAULT_RANK_TOL))?;
    if pinv.is_zero_rank() {
        return Err(Error::Degenerate(
            "item factor has rank 0; cannot build a fold-in plan".into(),
        ));
    }
    let inv_beta_i = model
        .stats
        .item_degrees
        .iter()
        .map(|&d| T::from_f64_lossy((d as f64 + 1.0).sqrt()))
        .collect();
    Ok(FoldInPlan {
        v_pinv_t: pinv.materialized.transposed(),
        inv_beta_i,
        rank: model.rank,
        built_from: model.fingerprint(),
    })
}

/// Closed-form warm-user update in two passes: scale the interaction vector
/// by the inverse item weights on its support, then one dense matrix-vector
/// product with the materialized pseudo-inverse. No allocation grows with
/// the catalogue; the scaled vector stays restricted to the support and a
/// merge walk supplies its zeros during the product.
pub fn linear_foldin<T: Scalar>(plan: &FoldInPlan<T>, req: &FoldInRequest<T>) -> Result<Vec<T>> {
    req.validate()?;
    let n = plan.num_items();
    let d = plan.rank;

    // c = a_uᵀ B_I⁻¹ on the support of a_u.
    let mut scaled = Vec::with_capacity(req.items.len());
    for (&i, &v) in req.items.iter().zip(&req.values) {
        let i = i as usize;
        if i >= n {
            return Err(Error::DimensionMismatch(format!(
                "item {i} outside catalogue of {n}"
            )));
        }
        scaled.push(v * plan.inv_beta_i[i]);
    }

    // e_uᵀ = (1/β_u) c V⁺: one matrix-vector product over the full
    // catalogue, accumulated row by row of the transposed plan.
    let mut e = vec![T::zero(); d];
    let mut sp = 0usize;
    for i in 0..n {
        let ci = if sp < req.items.len() && req.items[sp] as usize == i {
            let v = scaled[sp];
            sp += 1;
            v
        } else {
            T::zero()
        };
        axpy(ci, plan.v_pinv_t.row(i), &mut e);
    }
    let inv_beta_u = T::one() / req.beta_u;
    for x in e.iter_mut() {
        *x *= inv_beta_u;
    }
    Ok(e)
}

/// Update output carrying a degradation flag (spectrum truncated or ridge
/// regularization applied).
#[derive(Debug, Clone)]
pub struct FoldResult<T> {
    pub embedding: Vec<T>,
    pub flagged: bool,
}

/// Exact minimizer of `‖a_uᵀ − β_u e_uᵀ Vᵀ B_I‖₂²` via the normal equations
/// `(Vᵀ B_I² V) e = (1/β_u) Vᵀ B_I a_u`.
///
/// This coincides with [`linear_foldin`] exactly when all item weights are
/// equal; it is kept as the reference variant for when they are not.
pub fn exact_wls_foldin<T: Scalar>(
    model: &EmbeddingModel<T>,
    req: &FoldInRequest<T>,
) -> Result<FoldResult<T>> {
    let plan = WlsPlan::build(model)?;
    plan.solve(req)
}

/// Factored normal equations of the weighted objective, reusable across
/// users of one model.
#[derive(Debug, Clone)]
pub struct WlsPlan<T> {
    /// Cholesky factor of `Vᵀ B_I² V` (lower triangle), possibly ridged.
    chol: DenseMatrix<T>,
    ridged: bool,
    beta_i: Vec<T>,
    items: DenseMatrix<T>,
    rank: usize,
}

impl<T: Scalar> WlsPlan<T> {
    pub fn build(model: &EmbeddingModel<T>) -> Result<Self> {
        if model.kind != ModelKind::UltraGcn {
            return Err(Error::InvalidArgument(
                "weighted least-squares fold-in applies to the graph-weighted model".into(),
            ));
        }
        let d = model.rank;
        let n = model.num_items();
        let v = &model.item_embeddings;
        let beta_i: Vec<T> = (0..n).map(|i| model.stats.beta_item(i)).collect();

        // G = Vᵀ B_I² V
        let mut gram = DenseMatrix::zeros(d, d);
        for i in 0..n {
            let w = beta_i[i] * beta_i[i];
            let row = v.row(i);
            for a in 0..d {
                let wa = w * row[a];
                if wa == T::zero() {
                    continue;
                }
                let grow = gram.row_mut(a);
                for b in 0..d {
                    grow[b] += wa * row[b];
                }
            }
        }

        let (chol, ridged) = match cholesky(&gram) {
            Some(c) => (c, false),
            None => {
                let trace: T = (0..d).map(|k| gram.get(k, k)).sum();
                let ridge = T::from_f64_lossy(1e-10) * trace / T::from_usize_lossy(d);
                let mut g = gram.clone();
                for k in 0..d {
                    let v = g.get(k, k);
                    g.set(k, k, v + ridge);
                }
                let c = cholesky(&g).ok_or_else(|| {
                    Error::Degenerate("normal matrix not positive definite after ridge".into())
                })?;
                (c, true)
            }
        };

        Ok(Self {
            chol,
            ridged,
            beta_i,
            items: v.clone(),
            rank: d,
        })
    }

    pub fn solve(&self, req: &FoldInRequest<T>) -> Result<FoldResult<T>> {
        req.validate()?;
        let d = self.rank;
        // rhs = (1/β_u) Vᵀ B_I a_u: only the support contributes.
        let mut rhs = vec![T::zero(); d];
        for (&i, &val) in req.items.iter().zip(&req.values) {
            let i = i as usize;
            if i >= self.items.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "item {i} outside catalogue of {}",
                    self.items.rows()
                )));
            }
            axpy(self.beta_i[i] * val, self.items.row(i), &mut rhs);
        }
        let inv_beta_u = T::one() / req.beta_u;
        for x in rhs.iter_mut() {
            *x *= inv_beta_u;
        }
        let embedding = cholesky_solve(&self.chol, &rhs);
        Ok(FoldResult {
            embedding,
            flagged: self.ridged,
        })
    }
}

/// Lower-triangular Cholesky factor; `None` when the matrix is not
/// numerically positive definite.
fn cholesky<T: Scalar>(a: &DenseMatrix<T>) -> Option<DenseMatrix<T>> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= T::zero() || !sum.is_finite() {
                    return None;
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Some(l)
}

fn cholesky_solve<T: Scalar>(l: &DenseMatrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.get(i, k) * y[k];
        }
        y[i] = sum / l.get(i, i);
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l.get(k, i) * x[k];
        }
        x[i] = sum / l.get(i, i);
    }
    x
}

/// Spectral fold-in `e_uᵀ = (a_uᵀ V) Σ⁻¹` for the SVD model. Zero singular
/// values are excluded from the inversion and flagged.
pub fn svd_foldin<T: Scalar>(
    model: &EmbeddingModel<T>,
    req: &FoldInRequest<T>,
) -> Result<FoldResult<T>> {
    if model.kind != ModelKind::PureSvd {
        return Err(Error::InvalidArgument(
            "spectral fold-in applies to the SVD model".into(),
        ));
    }
    let sigma = model.sigma.as_ref().expect("PureSvd carries sigma");
    let d = model.rank;
    let n = model.num_items();
    let mut projected = vec![T::zero(); d];
    for (&i, &val) in req.items.iter().zip(&req.values) {
        let i = i as usize;
        if i >= n {
            return Err(Error::DimensionMismatch(format!(
                "item {i} outside catalogue of {n}"
            )));
        }
        axpy(val, model.item_embeddings.row(i), &mut projected);
    }
    let mut flagged = false;
    for (k, x) in projected.iter_mut().enumerate() {
        if sigma[k] > T::zero() {
            *x /= sigma[k];
        } else {
            *x = T::zero();
            flagged = true;
        }
    }
    Ok(FoldResult {
        embedding: projected,
        flagged,
    })
}

/// Gradient of the weighted reconstruction objective at `e`:
/// `2 β_u Vᵀ (B_I (β_u B_I (V e) − a_u))`, evaluated with exactly two
/// matrix-vector products.
pub fn foldin_gradient<T: Scalar>(
    items: &DenseMatrix<T>,
    beta_i: &[T],
    req: &FoldInRequest<T>,
    e: &[T],
) -> Result<Vec<T>> {
    let n = items.rows();
    let beta_u = req.beta_u;
    let mut w = items.matvec(e)?; // V e
    for (i, x) in w.iter_mut().enumerate() {
        *x = beta_u * beta_i[i] * beta_i[i] * *x;
    }
    for (&i, &val) in req.items.iter().zip(&req.values) {
        let i = i as usize;
        if i >= n {
            return Err(Error::DimensionMismatch(format!(
                "item {i} outside catalogue of {n}"
            )));
        }
        w[i] -= beta_i[i] * val;
    }
    let mut g = items.matvec_t(&w)?; // Vᵀ w
    let two_beta_u = beta_u + beta_u;
    for x in g.iter_mut() {
        *x = two_beta_u * *x;
    }
    Ok(g)
}

/// Initialization of the gradient fold-in iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SgdInit {
    Zero,
    /// The user's trained embedding when available, else zero.
    #[default]
    Previous,
    Mean,
}

#[derive(Debug, Clone)]
pub struct SgdFoldInConfig<T> {
    pub steps: usize,
    pub learning_rate: T,
    /// Mean-mix weight in [0, 1] applied after the gradient steps.
    pub mix: T,
    pub init: SgdInit,
}

impl<T: Scalar> Default for SgdFoldInConfig<T> {
    fn default() -> Self {
        Self {
            steps: 50,
            learning_rate: T::from_f64_lossy(1e-2),
            mix: T::from_f64_lossy(0.1),
            init: SgdInit::Previous,
        }
    }
}

impl<T: Scalar> SgdFoldInConfig<T> {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sgd fold-in needs >= 1 step".into()));
        }
        if self.learning_rate <= T::zero() {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.mix < T::zero() || self.mix > T::one() {
            return Err(Error::InvalidArgument("mix must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Gradient-descent fold-in: `k` steps on the weighted objective, then the
/// mean mix `e ← μ e_m + (1 − μ) e`.
pub fn sgd_foldin<T: Scalar>(
    model: &EmbeddingModel<T>,
    req: &FoldInRequest<T>,
    config: &SgdFoldInConfig<T>,
) -> Result<Vec<T>> {
    req.validate()?;
    config.validate()?;
    if model.kind != ModelKind::UltraGcn {
        return Err(Error::InvalidArgument(
            "gradient fold-in applies to the graph-weighted model".into(),
        ));
    }
    let d = model.rank;
    let beta_i: Vec<T> = (0..model.num_items())
        .map(|i| model.stats.beta_item(i))
        .collect();
    let mean = model.mean_user_embedding();

    let mut e = match config.init {
        SgdInit::Zero => vec![T::zero(); d],
        SgdInit::Previous => {
            if req.user < model.num_users() {
                model.user_embeddings.row(req.user).to_vec()
            } else {
                vec![T::zero(); d]
            }
        }
        SgdInit::Mean => mean.clone(),
    };

    let limit = T::from_f64_lossy(DIVERGENCE_LIMIT);
    for step in 0..config.steps {
        let g = foldin_gradient(&model.item_embeddings, &beta_i, req, &e)?;
        axpy(-config.learning_rate, &g, &mut e);
        if norm2(&e) > limit {
            return Err(Error::FoldInDiverged {
                step,
                limit: DIVERGENCE_LIMIT,
            });
        }
    }

    let mu = config.mix;
    let keep = T::one() - mu;
    for (x, m) in e.iter_mut().zip(&mean) {
        *x = mu * *m + keep * *x;
    }
    Ok(e)
}

/// The untouched trained embedding; users new to training keep the zero
/// vector.
pub fn zero_foldin<T: Scalar>(model: &EmbeddingModel<T>, user: usize) -> Vec<T> {
    if user < model.num_users() {
        model.user_embeddings.row(user).to_vec()
    } else {
        vec![T::zero(); model.rank]
    }
}

/// The mean trained user embedding.
pub fn mean_foldin<T: Scalar>(model: &EmbeddingModel<T>) -> Vec<T> {
    model.mean_user_embedding()
}

/// Retrain from scratch on the union of train and warm events with fresh
/// graph statistics.
pub fn full_retrain<T: Scalar>(
    train: &InteractionLog,
    warm: &InteractionLog,
    config: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    let mut events = train.events().to_vec();
    events.extend_from_slice(warm.events());
    let merged = InteractionLog::new(
        events,
        train.num_users().max(warm.num_users()),
        train.num_items().max(warm.num_items()),
    )?;
    let matrix = build_matrix(&merged, (merged.num_users(), merged.num_items()))?;
    let stats = graph_stats(&matrix);
    train_ultragcn(&matrix, &stats, config)
}

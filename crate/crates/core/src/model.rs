//! Embedding models and training: the degree-weighted bilinear model and the
//! truncated-SVD baseline.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::{GraphStats, InteractionMatrix};
use crate::error::{Error, Result};
use crate::linalg::{truncated_svd, DenseMatrix};
use crate::rng::{self, Stream};
use crate::scalar::{axpy, dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    UltraGcn,
    PureSvd,
}

/// User/item embedding matrices plus the graph statistics they were trained
/// against.
///
/// For the `UltraGcn` kind the relevance score is
/// `r_ui = beta_u * beta_i * <e_u, e_i>`. For `PureSvd` it is
/// `<e_u, diag(sigma) v_i>`, i.e. user rows of the left factor against
/// sigma-scaled right-factor rows.
#[derive(Debug, Clone)]
pub struct EmbeddingModel<T> {
    pub kind: ModelKind,
    /// M x d.
    pub user_embeddings: DenseMatrix<T>,
    /// N x d.
    pub item_embeddings: DenseMatrix<T>,
    pub stats: GraphStats<T>,
    /// Singular values, present for the `PureSvd` kind.
    pub sigma: Option<Vec<T>>,
    pub rank: usize,
    /// Weight of the unweighted ranking loss term.
    pub lambda: T,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn num_users(&self) -> usize {
        self.user_embeddings.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_embeddings.rows()
    }

    fn check_indices(&self, u: usize, i: usize) -> Result<()> {
        if u >= self.num_users() || i >= self.num_items() {
            return Err(Error::DimensionMismatch(format!(
                "(user {u}, item {i}) outside {} x {}",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(())
    }

    /// Relevance score of one (user, item) pair.
    pub fn score(&self, u: usize, i: usize) -> Result<T> {
        self.check_indices(u, i)?;
        let e_u = self.user_embeddings.row(u);
        let e_i = self.item_embeddings.row(i);
        match self.kind {
            ModelKind::UltraGcn => {
                let beta_u = self.stats.beta_user(u).ok_or(Error::ColdUser { user: u })?;
                Ok(beta_u * self.stats.beta_item(i) * dot(e_u, e_i))
            }
            ModelKind::PureSvd => {
                let sigma = self.sigma.as_ref().expect("PureSvd carries sigma");
                let mut acc = T::zero();
                for k in 0..self.rank {
                    acc += e_u[k] * sigma[k] * e_i[k];
                }
                Ok(acc)
            }
        }
    }

    /// Scores of one user against the whole catalogue: one matrix-vector
    /// product plus elementwise weight scaling.
    pub fn score_all(&self, u: usize) -> Result<Vec<T>> {
        self.check_indices(u, 0)?;
        let e_u = self.user_embeddings.row(u);
        match self.kind {
            ModelKind::UltraGcn => {
                let beta_u = self.stats.beta_user(u).ok_or(Error::ColdUser { user: u })?;
                let mut scores = self.item_embeddings.matvec(e_u)?;
                for (i, s) in scores.iter_mut().enumerate() {
                    *s = *s * beta_u * self.stats.beta_item(i);
                }
                Ok(scores)
            }
            ModelKind::PureSvd => {
                let sigma = self.sigma.as_ref().expect("PureSvd carries sigma");
                let scaled: Vec<T> = e_u.iter().zip(sigma).map(|(&e, &s)| e * s).collect();
                self.item_embeddings.matvec(&scaled)
            }
        }
    }

    /// Mean of all trained user embeddings.
    pub fn mean_user_embedding(&self) -> Vec<T> {
        let m = self.num_users();
        let mut mean = vec![T::zero(); self.rank];
        for u in 0..m {
            axpy(T::one(), self.user_embeddings.row(u), &mut mean);
        }
        let inv = T::one() / T::from_usize_lossy(m.max(1));
        for x in mean.iter_mut() {
            *x *= inv;
        }
        mean
    }

    /// Hash of the serialized container; identifies the exact model state.
    pub fn fingerprint(&self) -> u64 {
        crate::persist::model_fingerprint(self)
    }
}

/// Hyperparameters of the sampled pairwise training loop.
#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub rank: usize,
    pub lambda: T,
    pub negatives_per_positive: usize,
    pub learning_rate: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scale: T,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            rank: 64,
            lambda: T::one(),
            negatives_per_positive: 64,
            learning_rate: T::from_f64_lossy(1e-3),
            epochs: 50,
            batch_size: 1024,
            init_scale: T::from_f64_lossy(1e-2),
            seed: 42,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    fn validate(&self) -> Result<()> {
        if self.rank == 0
            || self.negatives_per_positive == 0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidArgument(
                "rank, negatives, epochs and batch size must be positive".into(),
            ));
        }
        if self.learning_rate <= T::zero() || self.init_scale <= T::zero() {
            return Err(Error::InvalidArgument(
                "learning rate and init scale must be positive".into(),
            ));
        }
        if self.lambda < T::zero() {
            return Err(Error::InvalidArgument("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training sample: a positive interaction plus sampled negatives.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub user: u32,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

/// Sparse embedding gradients accumulated over a batch, keyed by row in
/// deterministic order.
#[derive(Debug, Clone, Default)]
pub struct BatchGradients<T> {
    pub users: BTreeMap<u32, Vec<T>>,
    pub items: BTreeMap<u32, Vec<T>>,
}

/// `1 / (1 + exp(-x))` without overflow.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(sigmoid(x))` computed as `-softplus(-x)`.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    -softplus(-x)
}

fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Sampled pairwise loss and gradients for a batch.
///
/// Each (user, positive, negative) pair contributes
/// `-ln s(b_u b_i <e_u,e_i> - b_u b_j <e_u,e_j>) - lambda ln s(<e_u,e_i> - <e_u,e_j>)`;
/// the returned loss is the sum over pairs, gradients are with respect to the
/// involved embedding rows.
pub fn loss_and_gradient<T: Scalar>(
    model: &EmbeddingModel<T>,
    batch: &[TrainSample],
) -> Result<(T, BatchGradients<T>)> {
    let d = model.rank;
    let lambda = model.lambda;
    let mut grads = BatchGradients::default();
    let mut loss = T::zero();

    for sample in batch {
        let u = sample.user as usize;
        let i = sample.positive as usize;
        model.check_indices(u, i)?;
        let beta_u = model
            .stats
            .beta_user(u)
            .ok_or(Error::ColdUser { user: u })?;
        let beta_i = model.stats.beta_item(i);
        let e_u = model.user_embeddings.row(u);
        let e_i = model.item_embeddings.row(i);
        let s_ui = dot(e_u, e_i);

        let mut grad_u = vec![T::zero(); d];
        let mut coef_i = T::zero();
        for &jn in &sample.negatives {
            let j = jn as usize;
            model.check_indices(u, j)?;
            let beta_j = model.stats.beta_item(j);
            let e_j = model.item_embeddings.row(j);
            let s_uj = dot(e_u, e_j);

            let x_b = beta_u * (beta_i * s_ui - beta_j * s_uj);
            let x_o = s_ui - s_uj;
            loss = loss - log_sigmoid(x_b) - lambda * log_sigmoid(x_o);

            let g_b = sigmoid(-x_b);
            let g_o = sigmoid(-x_o);

            // d/d e_u
            coef_i += g_b * beta_u * beta_i + lambda * g_o;
            let coef_j = g_b * beta_u * beta_j + lambda * g_o;
            axpy(coef_j, e_j, &mut grad_u);
            // d/d e_j
            let gj = grads.items.entry(jn).or_insert_with(|| vec![T::zero(); d]);
            axpy(coef_j, e_u, gj);
        }
        axpy(-coef_i, e_i, &mut grad_u);
        let gu = grads
            .users
            .entry(sample.user)
            .or_insert_with(|| vec![T::zero(); d]);
        axpy(T::one(), &grad_u, gu);
        let gi = grads
            .items
            .entry(sample.positive)
            .or_insert_with(|| vec![T::zero(); d]);
        axpy(-coef_i, e_u, gi);
    }
    Ok((loss, grads))
}

/// Adam moments for the two embedding matrices, updated sparsely on the rows
/// a batch touches with a shared global step count.
struct Adam<T> {
    m_user: DenseMatrix<T>,
    v_user: DenseMatrix<T>,
    m_item: DenseMatrix<T>,
    v_item: DenseMatrix<T>,
    step: i32,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    fn new(num_users: usize, num_items: usize, rank: usize) -> Self {
        Self {
            m_user: DenseMatrix::zeros(num_users, rank),
            v_user: DenseMatrix::zeros(num_users, rank),
            m_item: DenseMatrix::zeros(num_items, rank),
            v_item: DenseMatrix::zeros(num_items, rank),
            step: 0,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
        }
    }

    fn apply(
        &mut self,
        users: &mut DenseMatrix<T>,
        items: &mut DenseMatrix<T>,
        grads: &BatchGradients<T>,
        lr: T,
    ) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        let scale = lr * c2.sqrt() / c1;
        for (&row, g) in &grads.users {
            Self::apply_row(
                users.row_mut(row as usize),
                self.m_user.row_mut(row as usize),
                self.v_user.row_mut(row as usize),
                g,
                scale,
                self.beta1,
                self.beta2,
                self.eps,
            );
        }
        for (&row, g) in &grads.items {
            Self::apply_row(
                items.row_mut(row as usize),
                self.m_item.row_mut(row as usize),
                self.v_item.row_mut(row as usize),
                g,
                scale,
                self.beta1,
                self.beta2,
                self.eps,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_row(
        param: &mut [T],
        m: &mut [T],
        v: &mut [T],
        grad: &[T],
        scale: T,
        beta1: T,
        beta2: T,
        eps: T,
    ) {
        for k in 0..param.len() {
            m[k] = beta1 * m[k] + (T::one() - beta1) * grad[k];
            v[k] = beta2 * v[k] + (T::one() - beta2) * grad[k] * grad[k];
            param[k] -= scale * m[k] / (v[k].sqrt() + eps);
        }
    }
}

/// A trained model together with the per-epoch mean pair loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: EmbeddingModel<T>,
    pub epoch_losses: Vec<T>,
}

/// Train the degree-weighted bilinear model with uniform negative sampling.
/// Deterministic for a given config and seed.
pub fn train_ultragcn<T: Scalar>(
    matrix: &InteractionMatrix,
    stats: &GraphStats<T>,
    config: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if matrix.nnz() == 0 {
        return Err(Error::EmptyInput("cannot train on an empty matrix".into()));
    }
    if stats.num_users() != matrix.rows() || stats.num_items() != matrix.cols() {
        return Err(Error::DimensionMismatch(
            "graph statistics do not match the matrix".into(),
        ));
    }
    let m = matrix.rows();
    let n = matrix.cols();
    let d = config.rank;

    let mut init_rng = rng::stream(config.seed, Stream::ModelInit);
    let mut user_embeddings = DenseMatrix::zeros(m, d);
    for u in 0..m {
        for k in 0..d {
            user_embeddings.set(
                u,
                k,
                rng::standard_normal::<T>(&mut init_rng) * config.init_scale,
            );
        }
    }
    let mut item_embeddings = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            item_embeddings.set(
                i,
                k,
                rng::standard_normal::<T>(&mut init_rng) * config.init_scale,
            );
        }
    }

    let mut model = EmbeddingModel {
        kind: ModelKind::UltraGcn,
        user_embeddings,
        item_embeddings,
        stats: stats.clone(),
        sigma: None,
        rank: d,
        lambda: config.lambda,
    };

    let positives: Vec<(u32, u32)> = (0..m as u32)
        .flat_map(|u| matrix.row(u as usize).iter().map(move |&i| (u, i)))
        .collect();
    let mut order: Vec<usize> = (0..positives.len()).collect();

    let mut shuffle_rng = rng::stream(config.seed, Stream::EpochShuffle);
    let mut sample_rng = rng::stream(config.seed, Stream::NegativeSampling);
    let mut adam = Adam::new(m, n, d);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // Fisher-Yates
        for idx in (1..order.len()).rev() {
            let swap = shuffle_rng.gen_range(0..=idx);
            order.swap(idx, swap);
        }

        let mut epoch_loss = T::zero();
        let mut epoch_pairs = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (u, i) = positives[idx];
                let row = matrix.row(u as usize);
                if row.len() >= n {
                    continue; // user saw every item: no negatives exist
                }
                let mut negatives = Vec::with_capacity(config.negatives_per_positive);
                while negatives.len() < config.negatives_per_positive {
                    let j = sample_rng.gen_range(0..n as u32);
                    if row.binary_search(&j).is_err() {
                        negatives.push(j);
                    }
                }
                epoch_pairs += negatives.len();
                batch.push(TrainSample {
                    user: u,
                    positive: i,
                    negatives,
                });
            }
            if batch.is_empty() {
                continue;
            }
            let (loss, grads) = loss_and_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss;
            adam.apply(
                &mut model.user_embeddings,
                &mut model.item_embeddings,
                &grads,
                config.learning_rate,
            );
        }
        epoch_losses.push(epoch_loss / T::from_usize_lossy(epoch_pairs.max(1)));
    }

    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Wrap a truncated SVD of the interaction matrix as an embedding model:
/// left-factor rows are user embeddings, the right factor plus the spectrum
/// gives item embeddings.
pub fn train_puresvd<T: Scalar>(
    matrix: &InteractionMatrix,
    rank: usize,
    seed: u64,
) -> Result<EmbeddingModel<T>> {
    let svd = truncated_svd::<T>(matrix, rank, seed)?;
    let stats = crate::data::graph_stats(matrix);
    Ok(EmbeddingModel {
        kind: ModelKind::PureSvd,
        user_embeddings: svd.left,
        item_embeddings: svd.right,
        stats,
        sigma: Some(svd.singular_values),
        rank,
        lambda: T::zero(),
    })
}

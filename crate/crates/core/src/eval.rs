//! Top-k recommendation, ranking metrics, and the latency benchmarks.

use std::collections::HashSet;
use std::time::Instant;

use crate::data::{build_matrix, merge_for_foldin, TemporalSplit};
use crate::error::{Error, Result};
use crate::foldin::{
    build_plan, full_retrain, linear_foldin, mean_foldin, sgd_foldin, svd_foldin, zero_foldin,
    FoldInPlan, FoldInRequest, SgdFoldInConfig, Strategy, WlsPlan,
};
use crate::model::{EmbeddingModel, TrainConfig};
use crate::rng::{self, Stream};
use crate::scalar::{norm2, Scalar};
use crate::synthetic::{bench_model, sample_history, ZipfSampler};

/// One user's ranking request: how many items, and which to leave out
/// (their already-seen history).
#[derive(Debug, Clone)]
pub struct RankingRequest {
    pub user: usize,
    pub k: usize,
    /// Mask over the catalogue; `true` removes the item from candidates.
    pub excluded: Vec<bool>,
}

/// Score one user against the catalogue and return their top-k items.
pub fn rank<T: Scalar>(model: &EmbeddingModel<T>, request: &RankingRequest) -> Result<Vec<usize>> {
    let scores = model.score_all(request.user)?;
    topk(&scores, request.k, &request.excluded)
}

/// Top-k item indices by descending score; ties break toward the lower item
/// index. Excluded items never appear.
pub fn topk<T: Scalar>(scores: &[T], k: usize, excluded: &[bool]) -> Result<Vec<usize>> {
    if excluded.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "exclusion mask of {} vs {} scores",
            excluded.len(),
            scores.len()
        )));
    }
    let candidates = excluded.iter().filter(|&&e| !e).count();
    if k > candidates {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {candidates} candidate items"
        )));
    }
    // (score desc, index asc) order; a small insertion buffer beats sorting
    // the whole catalogue for the k in actual use.
    let better = |a: (T, usize), b: (T, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut buf: Vec<(T, usize)> = Vec::with_capacity(k + 1);
    for (i, &s) in scores.iter().enumerate() {
        if excluded[i] {
            continue;
        }
        if buf.len() == k {
            if let Some(&last) = buf.last() {
                if !better((s, i), last) {
                    continue;
                }
            }
        }
        let pos = buf.partition_point(|&entry| better(entry, (s, i)));
        buf.insert(pos, (s, i));
        if buf.len() > k {
            buf.pop();
        }
    }
    Ok(buf.into_iter().map(|(_, i)| i).collect())
}

/// Fraction of evaluated users whose top-k list hits at least one test item.
/// Users with an empty ground truth are excluded from the mean.
pub fn hit_rate(recommendations: &[Vec<usize>], ground_truth: &[Vec<u32>], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut users = 0usize;
    for (recs, truth) in recommendations.iter().zip(ground_truth) {
        if truth.is_empty() {
            continue;
        }
        users += 1;
        let set: HashSet<u32> = truth.iter().copied().collect();
        if recs.iter().take(k).any(|&i| set.contains(&(i as u32))) {
            hits += 1;
        }
    }
    if users == 0 {
        0.0
    } else {
        hits as f64 / users as f64
    }
}

/// Mean normalized discounted cumulative gain at k with binary relevance:
/// DCG counts `1/log2(rank + 1)` over hit ranks (1-based), normalized by the
/// ideal placement of `min(|truth|, k)` items.
pub fn ndcg(recommendations: &[Vec<usize>], ground_truth: &[Vec<u32>], k: usize) -> f64 {
    let mut total = 0.0;
    let mut users = 0usize;
    for (recs, truth) in recommendations.iter().zip(ground_truth) {
        if truth.is_empty() {
            continue;
        }
        users += 1;
        let set: HashSet<u32> = truth.iter().copied().collect();
        let mut dcg = 0.0;
        for (pos, &item) in recs.iter().take(k).enumerate() {
            if set.contains(&(item as u32)) {
                dcg += 1.0 / ((pos + 2) as f64).log2();
            }
        }
        let ideal = truth.len().min(k);
        let idcg: f64 = (0..ideal).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
        total += dcg / idcg;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

/// Fraction of the catalogue recommended to at least one user.
pub fn coverage(recommendations: &[Vec<usize>], k: usize, num_items: usize) -> f64 {
    let mut seen: HashSet<usize> = HashSet::new();
    for recs in recommendations {
        seen.extend(recs.iter().take(k).copied());
    }
    seen.len() as f64 / num_items as f64
}

/// One warm user's fold-in record.
#[derive(Debug, Clone)]
pub struct UserFold<T> {
    pub user: usize,
    pub time_ns: u128,
    pub norm: T,
    pub embedding: Vec<T>,
}

/// A strategy applied to every warm user: the model to evaluate plus the
/// per-user timings.
#[derive(Debug)]
pub struct StrategyOutcome<T> {
    pub strategy: Strategy,
    pub model: EmbeddingModel<T>,
    pub per_user: Vec<UserFold<T>>,
    /// One-off preparation (pseudo-inverse, normal-equation factorization or
    /// retraining), reported separately from per-user time.
    pub plan_build_ns: u128,
}

/// Evaluation protocol parameters.
#[derive(Debug, Clone)]
pub struct EvalConfig<T> {
    pub ks: Vec<usize>,
    pub coverage_k: usize,
    pub sgd: SgdFoldInConfig<T>,
    /// Used by the full-retrain strategy.
    pub train: TrainConfig<T>,
    pub timing_warmup: usize,
}

impl<T: Scalar> Default for EvalConfig<T> {
    fn default() -> Self {
        Self {
            ks: vec![5, 10],
            coverage_k: 10,
            sgd: SgdFoldInConfig::default(),
            train: TrainConfig::default(),
            timing_warmup: 5,
        }
    }
}

/// Apply one strategy to every warm user of the split.
///
/// Fold computations are timed per user with a monotonic clock after
/// `timing_warmup` discarded warm-up calls; plan building is timed
/// separately. The returned model carries the updated user rows and refreshed
/// per-user weights (item weights stay frozen, matching the precomputed
/// plan).
pub fn apply_strategy<T: Scalar>(
    model: &EmbeddingModel<T>,
    split: &TemporalSplit,
    strategy: Strategy,
    config: &EvalConfig<T>,
) -> Result<StrategyOutcome<T>> {
    let train_matrix = build_matrix(
        &split.train,
        (split.train.num_users(), split.train.num_items()),
    )?;
    let warm_users = split.warm.active_users();

    if strategy == Strategy::FullRetrain {
        let started = Instant::now();
        let outcome = full_retrain(&split.train, &split.warm, &config.train)?;
        let total_ns = started.elapsed().as_nanos();
        let per_user_ns = total_ns / warm_users.len().max(1) as u128;
        let per_user = warm_users
            .iter()
            .map(|&u| {
                let embedding = outcome.model.user_embeddings.row(u).to_vec();
                UserFold {
                    user: u,
                    time_ns: per_user_ns,
                    norm: norm2(&embedding),
                    embedding,
                }
            })
            .collect();
        return Ok(StrategyOutcome {
            strategy,
            model: outcome.model,
            per_user,
            plan_build_ns: total_ns,
        });
    }

    // One-off preparation.
    let plan_started = Instant::now();
    let linear_plan = if strategy == Strategy::Linear {
        let plan = build_plan(model)?;
        plan.verify(model)?;
        Some(plan)
    } else {
        None
    };
    let wls_plan = if strategy == Strategy::ExactWls {
        Some(WlsPlan::build(model)?)
    } else {
        None
    };
    let mean_embedding = if strategy == Strategy::Mean {
        Some(mean_foldin(model))
    } else {
        None
    };
    let plan_build_ns = plan_started.elapsed().as_nanos();

    let fold_one = |user: usize| -> Result<Vec<T>> {
        match strategy {
            Strategy::Zero => Ok(zero_foldin(model, user)),
            Strategy::Mean => Ok(mean_embedding.clone().expect("prepared above")),
            Strategy::Linear => {
                let history = merge_for_foldin::<T>(&train_matrix, &split.warm, user)?;
                linear_foldin(
                    linear_plan.as_ref().expect("prepared above"),
                    &FoldInRequest::from_history(history),
                )
            }
            Strategy::Sgd => {
                let history = merge_for_foldin::<T>(&train_matrix, &split.warm, user)?;
                sgd_foldin(model, &FoldInRequest::from_history(history), &config.sgd)
            }
            Strategy::ExactWls => {
                let history = merge_for_foldin::<T>(&train_matrix, &split.warm, user)?;
                Ok(wls_plan
                    .as_ref()
                    .expect("prepared above")
                    .solve(&FoldInRequest::from_history(history))?
                    .embedding)
            }
            Strategy::SvdFold => {
                let history = merge_for_foldin::<T>(&train_matrix, &split.warm, user)?;
                Ok(svd_foldin(model, &FoldInRequest::from_history(history))?.embedding)
            }
            Strategy::FullRetrain => unreachable!("handled above"),
        }
    };

    if let Some(&first) = warm_users.first() {
        for _ in 0..config.timing_warmup {
            let _ = fold_one(first)?;
        }
    }

    let mut per_user = Vec::with_capacity(warm_users.len());
    for &user in &warm_users {
        let started = Instant::now();
        let embedding = fold_one(user)?;
        let time_ns = started.elapsed().as_nanos();
        per_user.push(UserFold {
            user,
            time_ns,
            norm: norm2(&embedding),
            embedding,
        });
    }

    // Write updated rows and refreshed user weights into a copy of the model.
    let mut updated = model.clone();
    let mut user_degrees = updated.stats.user_degrees.clone();
    for fold in &per_user {
        for (kk, &x) in fold.embedding.iter().enumerate() {
            updated.user_embeddings.set(fold.user, kk, x);
        }
        if strategy != Strategy::Zero {
            if let Ok(history) = merge_for_foldin::<T>(&train_matrix, &split.warm, fold.user) {
                user_degrees[fold.user] = history.degree;
            }
        }
    }
    updated.stats =
        crate::data::GraphStats::from_degrees(user_degrees, updated.stats.item_degrees.clone());
    Ok(StrategyOutcome {
        strategy,
        model: updated,
        per_user,
        plan_build_ns,
    })
}

/// Ranking metrics over all test users.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub coverage_k: usize,
    pub coverage: f64,
    pub users_evaluated: usize,
    /// Test users without a defined model state, served zero scores.
    pub cold_served: usize,
}

/// Rank for every test user, excluding each user's train + warm history and
/// items the training split never saw, then compute HR / NDCG / coverage.
pub fn rank_and_score<T: Scalar>(
    model: &EmbeddingModel<T>,
    split: &TemporalSplit,
    ks: &[usize],
    coverage_k: usize,
) -> Result<MetricsTable> {
    let train_matrix = build_matrix(
        &split.train,
        (split.train.num_users(), split.train.num_items()),
    )?;
    let n = train_matrix.cols();
    let max_k = ks.iter().copied().max().unwrap_or(10).max(coverage_k);

    // Items absent from training have no trained embedding; they never enter
    // rankings, for any strategy.
    let untrained: Vec<bool> = {
        let d = train_matrix.col_degrees();
        d.iter().map(|&deg| deg == 0).collect()
    };

    let test_users = split.test.active_users();
    let mut recommendations = Vec::with_capacity(test_users.len());
    let mut ground_truth = Vec::with_capacity(test_users.len());
    let mut cold_served = 0usize;

    for &u in &test_users {
        let mut excluded = untrained.clone();
        for &i in train_matrix.row(u) {
            excluded[i as usize] = true;
        }
        for e in split.warm.events() {
            if e.user as usize == u {
                excluded[e.item as usize] = true;
            }
        }
        let candidates = excluded.iter().filter(|&&e| !e).count();
        let request = RankingRequest {
            user: u,
            k: max_k.min(candidates),
            excluded,
        };
        let top = match rank(model, &request) {
            Ok(t) => t,
            Err(Error::ColdUser { .. }) => {
                cold_served += 1;
                let zeros = vec![T::zero(); n];
                topk(&zeros, request.k, &request.excluded)?
            }
            Err(other) => return Err(other),
        };
        let excluded = request.excluded;
        let truth: Vec<u32> = split
            .test
            .events()
            .iter()
            .filter(|e| e.user as usize == u && !excluded[e.item as usize])
            .map(|e| e.item)
            .collect();
        recommendations.push(top);
        ground_truth.push(truth);
    }

    let hr: Vec<f64> = ks
        .iter()
        .map(|&k| hit_rate(&recommendations, &ground_truth, k))
        .collect();
    let ndcg_values: Vec<f64> = ks
        .iter()
        .map(|&k| ndcg(&recommendations, &ground_truth, k))
        .collect();
    let cov = coverage(&recommendations, coverage_k, n);
    let users_evaluated = ground_truth.iter().filter(|t| !t.is_empty()).count();

    Ok(MetricsTable {
        ks: ks.to_vec(),
        hr,
        ndcg: ndcg_values,
        coverage_k,
        coverage: cov,
        users_evaluated,
        cold_served,
    })
}

/// Per-user timing summary in nanoseconds.
#[derive(Debug, Clone, Default)]
pub struct TimingStats {
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    pub count: usize,
}

impl TimingStats {
    pub fn from_times(times_ns: &[u128]) -> Self {
        if times_ns.is_empty() {
            return Self::default();
        }
        let mut sorted: Vec<u128> = times_ns.to_vec();
        sorted.sort_unstable();
        let mean = sorted.iter().sum::<u128>() as f64 / sorted.len() as f64;
        let pick = |q: f64| sorted[(q * (sorted.len() - 1) as f64).round() as usize] as f64;
        Self {
            mean_ns: mean,
            p50_ns: pick(0.5),
            p99_ns: pick(0.99),
            count: sorted.len(),
        }
    }

    pub fn sec_per_user(&self) -> f64 {
        self.mean_ns / 1e9
    }
}

/// One strategy's evaluation row: metrics, timing, and provenance.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub strategy: String,
    pub metrics: MetricsTable,
    pub timing: TimingStats,
    pub plan_build_ns: u128,
    pub model_fingerprint: u64,
    /// Content hash of the split's source events (or the raw file when the
    /// caller knows it).
    pub dataset_fingerprint: u64,
}

/// Fold every warm user with `strategy`, rank every test user on the updated
/// model, and assemble the report.
pub fn evaluate_strategy<T: Scalar>(
    model: &EmbeddingModel<T>,
    split: &TemporalSplit,
    strategy: Strategy,
    config: &EvalConfig<T>,
) -> Result<EvalReport> {
    let outcome = apply_strategy(model, split, strategy, config)?;
    let metrics = rank_and_score(&outcome.model, split, &config.ks, config.coverage_k)?;
    let times: Vec<u128> = outcome.per_user.iter().map(|f| f.time_ns).collect();
    let mut events = split.train.events().to_vec();
    events.extend_from_slice(split.warm.events());
    events.extend_from_slice(split.test.events());
    let whole =
        crate::data::InteractionLog::new(events, split.train.num_users(), split.train.num_items())?;
    Ok(EvalReport {
        strategy: strategy.name().to_owned(),
        metrics,
        timing: TimingStats::from_times(&times),
        plan_build_ns: outcome.plan_build_ns,
        model_fingerprint: model.fingerprint(),
        dataset_fingerprint: crate::persist::log_fingerprint(&whole),
    })
}

/// Scaling benchmark parameters.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rank: usize,
    /// Catalogue sizes, ascending.
    pub sizes: Vec<usize>,
    /// Timed fold calls per catalogue size for the closed-form path.
    pub trials: usize,
    /// Timed fold calls for the gradient path (heavier per call).
    pub sgd_trials: usize,
    pub sgd_steps: usize,
    /// Target user history length, drawn from the popularity curve.
    pub history_len: usize,
    pub seed: u64,
    /// Which update paths to time.
    pub strategies: Vec<Strategy>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rank: 32,
            sizes: vec![1_000, 10_000, 100_000, 1_000_000],
            trials: 100,
            sgd_trials: 20,
            sgd_steps: 50,
            history_len: 20,
            seed: 42,
            strategies: vec![Strategy::Linear, Strategy::Sgd],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub catalogue: usize,
    pub strategy: Strategy,
    pub rank: usize,
    pub trials: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
    /// Median call time; robust to scheduler noise on shared machines.
    pub p50_ns: f64,
}

struct BenchPoint {
    catalogue: usize,
    model: EmbeddingModel<f64>,
    plan: FoldInPlan<f64>,
    sampler: ZipfSampler,
    rng: rand_chacha::ChaCha8Rng,
}

impl BenchPoint {
    fn request(&mut self, history_len: usize) -> FoldInRequest<f64> {
        let items = sample_history(&self.sampler, history_len, &mut self.rng);
        let degree = items.len() as u32;
        let beta_u = crate::data::beta_user_from_degree::<f64>(degree.max(1)).expect("degree >= 1");
        FoldInRequest::binary(0, items, beta_u)
    }

    /// Largest curvature of the fold-in quadratic, by power iteration; the
    /// gradient path needs a step below `2 / lambda_max` to stay stable.
    fn lambda_max(&self, rank: usize, history_len: usize) -> Result<f64> {
        let n = self.catalogue;
        let beta_u_typ = crate::data::beta_user_from_degree::<f64>(history_len.max(1) as u32)
            .expect("history >= 1");
        let beta_sq: Vec<f64> = (0..n)
            .map(|i| {
                let b = self.model.stats.beta_item(i);
                b * b
            })
            .collect();
        let mut x = vec![1.0f64; rank];
        let mut norm = 1.0;
        for _ in 0..10 {
            let mut w = self.model.item_embeddings.matvec(&x)?;
            for (i, wi) in w.iter_mut().enumerate() {
                *wi *= beta_sq[i];
            }
            let mut y = self.model.item_embeddings.matvec_t(&w)?;
            let scale = 2.0 * beta_u_typ * beta_u_typ;
            for yi in y.iter_mut() {
                *yi *= scale;
            }
            norm = crate::scalar::norm2(&y);
            if norm == 0.0 {
                break;
            }
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi = yi / norm;
            }
        }
        Ok(norm.max(1e-30))
    }
}

/// Time per-user fold updates over synthetic catalogues of increasing size.
///
/// Single-threaded by design so the kernel cost is what gets measured. All
/// catalogues are built up front and timed calls are interleaved round-robin
/// across sizes, so drift in the host's throughput lands on every size
/// equally instead of biasing whichever size happens to run last.
pub fn scaling_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.trials < 10 || config.sgd_trials < 1 {
        return Err(Error::InvalidArgument(
            "need at least 10 linear trials and 1 sgd trial per point".into(),
        ));
    }
    let mut points = Vec::with_capacity(config.sizes.len());
    for (idx, &n) in config.sizes.iter().enumerate() {
        let seed = config.seed.wrapping_add(idx as u64);
        let model: EmbeddingModel<f64> = bench_model(8, n, config.rank, seed)?;
        let plan = build_plan(&model)?;
        points.push(BenchPoint {
            catalogue: n,
            model,
            plan,
            sampler: ZipfSampler::new(n, 1.1),
            rng: rng::stream(seed, Stream::SynthUsers),
        });
    }

    let mut rows = Vec::new();
    if config.strategies.contains(&Strategy::Linear) {
        let mut times: Vec<Vec<u128>> = vec![Vec::with_capacity(config.trials); points.len()];
        for round in 0..config.trials + 5 {
            for (idx, point) in points.iter_mut().enumerate() {
                let req = point.request(config.history_len);
                let started = Instant::now();
                let e = linear_foldin(&point.plan, &req)?;
                let elapsed = started.elapsed().as_nanos();
                std::hint::black_box(e);
                if round >= 5 {
                    times[idx].push(elapsed);
                }
            }
        }
        for (point, times) in points.iter().zip(&times) {
            rows.push(make_row(
                point.catalogue,
                Strategy::Linear,
                config.rank,
                times,
            ));
        }
    }

    if config.strategies.contains(&Strategy::Sgd) {
        let mut configs = Vec::with_capacity(points.len());
        for point in &points {
            let lambda_max = point.lambda_max(config.rank, config.history_len)?;
            configs.push(SgdFoldInConfig {
                steps: config.sgd_steps,
                learning_rate: (2.0 / 3.0) / lambda_max,
                mix: 0.1,
                init: crate::foldin::SgdInit::Previous,
            });
        }
        let mut times: Vec<Vec<u128>> = vec![Vec::with_capacity(config.sgd_trials); points.len()];
        for round in 0..config.sgd_trials + 2 {
            for (idx, point) in points.iter_mut().enumerate() {
                let req = point.request(config.history_len);
                let started = Instant::now();
                let e = sgd_foldin(&point.model, &req, &configs[idx])?;
                let elapsed = started.elapsed().as_nanos();
                std::hint::black_box(e);
                if round >= 2 {
                    times[idx].push(elapsed);
                }
            }
        }
        for (point, times) in points.iter().zip(&times) {
            rows.push(make_row(point.catalogue, Strategy::Sgd, config.rank, times));
        }
    }

    rows.sort_by_key(|r| (r.catalogue, r.strategy.name()));
    Ok(rows)
}

fn make_row(n: usize, strategy: Strategy, rank: usize, times: &[u128]) -> BenchRow {
    let mean = times.iter().sum::<u128>() as f64 / times.len() as f64;
    let var = times
        .iter()
        .map(|&t| {
            let d = t as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / times.len() as f64;
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    let p50 = sorted[sorted.len() / 2] as f64;
    BenchRow {
        catalogue: n,
        strategy,
        rank,
        trials: times.len(),
        mean_ns: mean,
        std_ns: var.sqrt(),
        p50_ns: p50,
    }
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Fitted scaling exponent of the strategy's median time against catalogue
/// size. Medians keep one preempted call from bending the fit.
pub fn fitted_slope(rows: &[BenchRow], strategy: Strategy) -> Option<f64> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.strategy == strategy)
        .map(|r| (r.catalogue as f64, r.p50_ns))
        .collect();
    if points.len() < 2 {
        None
    } else {
        Some(log_log_slope(&points))
    }
}

/// CSV renderings with fixed headers.
pub mod csv {
    use super::{BenchRow, EvalReport, StrategyOutcome};
    use crate::scalar::Scalar;

    pub const METRICS_HEADER: &str = "strategy,hr@5,hr@10,ndcg@5,ndcg@10,coverage@10,users_evaluated,cold_served,model_fingerprint,dataset_fingerprint";
    pub const TIMING_HEADER: &str = "user_id,strategy,time_ns,embedding_norm";
    pub const TIMING_SUMMARY_HEADER: &str =
        "strategy,users,mean_s,p50_s,p99_s,sec_per_user,plan_build_s";
    pub const SCALING_HEADER: &str = "catalogue_size,strategy,rank,trials,mean_ns,std_ns,p50_ns";

    pub fn metrics_csv(reports: &[EvalReport]) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in reports {
            let at = |ks: &[usize], vals: &[f64], k: usize| {
                ks.iter()
                    .position(|&x| x == k)
                    .map(|i| vals[i])
                    .unwrap_or(f64::NAN)
            };
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:016x},{:016x}\n",
                r.strategy,
                at(&r.metrics.ks, &r.metrics.hr, 5),
                at(&r.metrics.ks, &r.metrics.hr, 10),
                at(&r.metrics.ks, &r.metrics.ndcg, 5),
                at(&r.metrics.ks, &r.metrics.ndcg, 10),
                r.metrics.coverage,
                r.metrics.users_evaluated,
                r.metrics.cold_served,
                r.model_fingerprint,
                r.dataset_fingerprint,
            ));
        }
        out
    }

    pub fn timing_csv<T: Scalar>(outcomes: &[&StrategyOutcome<T>]) -> String {
        let mut out = String::from(TIMING_HEADER);
        out.push('\n');
        for o in outcomes {
            for f in &o.per_user {
                out.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    f.user,
                    o.strategy.name(),
                    f.time_ns,
                    f.norm.to_f64_lossy()
                ));
            }
        }
        out
    }

    pub fn timing_summary_csv(reports: &[EvalReport]) -> String {
        let mut out = String::from(TIMING_SUMMARY_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
                r.strategy,
                r.timing.count,
                r.timing.mean_ns / 1e9,
                r.timing.p50_ns / 1e9,
                r.timing.p99_ns / 1e9,
                r.timing.sec_per_user(),
                r.plan_build_ns as f64 / 1e9,
            ));
        }
        out
    }

    pub fn scaling_csv(rows: &[BenchRow]) -> String {
        let mut out = String::from(SCALING_HEADER);
        out.push('\n');
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{:.1},{:.1},{:.1}\n",
                r.catalogue,
                r.strategy.name(),
                r.rank,
                r.trials,
                r.mean_ns,
                r.std_ns,
                r.p50_ns
            ));
        }
        out
    }
}

/// Human-readable metric table, one row per strategy.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>12} {:>12}\n",
        "strategy", "HR@5", "HR@10", "N@5", "N@10", "cov@10", "sec/user", "plan build s"
    ));
    for r in reports {
        let at = |ks: &[usize], vals: &[f64], k: usize| {
            ks.iter()
                .position(|&x| x == k)
                .map(|i| vals[i])
                .unwrap_or(f64::NAN)
        };
        out.push_str(&format!(
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>12.6} {:>12.3}\n",
            r.strategy,
            at(&r.metrics.ks, &r.metrics.hr, 5),
            at(&r.metrics.ks, &r.metrics.hr, 10),
            at(&r.metrics.ks, &r.metrics.ndcg, 5),
            at(&r.metrics.ks, &r.metrics.ndcg, 10),
            r.metrics.coverage,
            r.timing.sec_per_user(),
            r.plan_build_ns as f64 / 1e9,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{graph_stats, InteractionLog};
    use crate::model::train_ultragcn;
    use crate::synthetic::{block_flip_warm_log, block_log, block_of};
    use rand::Rng;

    #[test]
    fn topk_basics_and_ties() {
        let scores = [0.1f64, 0.9, 0.5];
        let excluded = [false; 3];
        assert_eq!(topk(&scores, 2, &excluded).unwrap(), vec![1, 2]);

        let tied = [0.9f64, 0.9];
        assert_eq!(topk(&tied, 1, &[false, false]).unwrap(), vec![0]);

        assert!(topk(&scores, 4, &excluded).is_err());
        assert_eq!(topk(&scores, 2, &[false, true, false]).unwrap(), vec![2, 0]);
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = rng::stream(2, Stream::Misc);
        for _ in 0..20 {
            let n = 200;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..50) as f64 * 0.1).collect();
            let excluded: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
            let got = topk(&scores, 10, &excluded).unwrap();
            let mut all: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
            all.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            assert_eq!(got, all[..10].to_vec());
        }
    }

    #[test]
    fn hit_rate_hand_cases() {
        // test item at rank 1 within k=5
        let recs = vec![vec![7usize, 1, 2, 3, 4, 5, 6]];
        let truth = vec![vec![7u32]];
        assert_eq!(hit_rate(&recs, &truth, 5), 1.0);
        // at rank 7 beyond k=5
        let recs = vec![vec![0usize, 1, 2, 3, 4, 5, 7]];
        assert_eq!(hit_rate(&recs, &truth, 5), 0.0);
        // mean over two users
        let recs = vec![vec![7usize, 1], vec![0usize, 1]];
        let truth = vec![vec![7u32], vec![9u32]];
        assert_eq!(hit_rate(&recs, &truth, 2), 0.5);
        // empty truth excluded
        let truth = vec![vec![7u32], vec![]];
        assert_eq!(hit_rate(&recs, &truth, 2), 1.0);
    }

    #[test]
    fn ndcg_hand_cases() {
        // single relevant item at rank 1
        let recs = vec![vec![3usize, 0, 1, 2]];
        let truth = vec![vec![3u32]];
        assert!((ndcg(&recs, &truth, 10) - 1.0).abs() < 1e-12);

        // single relevant item at rank 3: 1/log2(4) = 0.5
        let recs = vec![vec![0usize, 1, 3, 2]];
        assert!((ndcg(&recs, &truth, 10) - 0.5).abs() < 1e-12);

        // two relevant at ranks 2 and 5 with k=5
        let recs = vec![vec![0usize, 8, 1, 2, 9]];
        let truth = vec![vec![8u32, 9u32]];
        let got = ndcg(&recs, &truth, 5);
        let dcg = 1.0 / 3f64.log2() + 1.0 / 6f64.log2();
        let idcg = 1.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / idcg).abs() < 1e-12);
        assert!((got - 0.62406).abs() < 1e-5, "got {got}");
    }

    #[test]
    fn ndcg_invariant_below_k() {
        let truth = vec![vec![5u32]];
        let short = vec![vec![0usize, 5, 1]];
        let long = vec![vec![0usize, 5, 1, 2, 3, 4, 6, 7]];
        assert_eq!(ndcg(&short, &truth, 3), ndcg(&long, &truth, 3));
    }

    #[test]
    fn coverage_hand_cases() {
        let n = 50;
        // everyone gets the same list
        let list: Vec<usize> = (0..10).collect();
        let recs = vec![list.clone(), list.clone(), list];
        assert!((coverage(&recs, 10, n) - 10.0 / 50.0).abs() < 1e-12);

        // disjoint lists
        let recs: Vec<Vec<usize>> = (0..3).map(|u| (u * 10..u * 10 + 10).collect()).collect();
        assert!((coverage(&recs, 10, n) - 30.0 / 50.0).abs() < 1e-12);

        // union oracle on random lists
        let mut rng = rng::stream(7, Stream::Misc);
        let recs: Vec<Vec<usize>> = (0..20)
            .map(|_| (0..10).map(|_| rng.gen_range(0..n)).collect())
            .collect();
        let mut union = std::collections::HashSet::new();
        for r in &recs {
            union.extend(r.iter().copied());
        }
        assert!((coverage(&recs, 10, n) - union.len() as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn timing_stats_quantiles() {
        let times: Vec<u128> = (1..=100).map(|i| i * 1000).collect();
        let stats = TimingStats::from_times(&times);
        assert_eq!(stats.count, 100);
        assert!((stats.mean_ns - 50_500.0).abs() < 1e-9);
        assert!(stats.p50_ns <= stats.p99_ns);
    }

    /// Block world end to end: train on block-structured data, flip half the
    /// users via warm events, check strategy behavior on test events.
    /// Two-community world where a handful of users switch sides: they carry
    /// two stale train events and ten warm events from the new block, so the
    /// warm history is the signal. Test events continue the new preference.
    fn block_world() -> (EmbeddingModel<f64>, TemporalSplit) {
        let users = 40;
        let items = 60;
        let flip: Vec<usize> = vec![0, 1, 2, 3, 20, 21, 22, 23];
        let full_train = block_log(users, items, 10, 0, 11);
        let mut kept_per_flip = vec![0usize; users];
        let events: Vec<_> = full_train
            .events()
            .iter()
            .filter(|e| {
                let u = e.user as usize;
                if flip.contains(&u) {
                    kept_per_flip[u] += 1;
                    kept_per_flip[u] <= 2
                } else {
                    true
                }
            })
            .copied()
            .collect();
        let train = InteractionLog::new(events, users, items).unwrap();
        let warm = block_flip_warm_log(users, items, 10, &flip, 10_000, 13);
        let test = block_flip_warm_log(users, items, 6, &flip, 20_000, 17);
        let split = TemporalSplit {
            train: train.clone(),
            warm,
            test,
            t1: 9_999,
            t2: 19_999,
        };

        let matrix = build_matrix(&train, (users, items)).unwrap();
        let stats = graph_stats::<f64>(&matrix);
        let config = TrainConfig {
            rank: 8,
            epochs: 40,
            batch_size: 64,
            negatives_per_positive: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let model = train_ultragcn(&matrix, &stats, &config).unwrap().model;
        (model, split)
    }

    #[test]
    fn trained_block_model_ranks_own_block() {
        let users = 20;
        let items = 16;
        let train = block_log(users, items, 12, 0, 11);
        let matrix = build_matrix(&train, (users, items)).unwrap();
        let stats = graph_stats::<f64>(&matrix);
        let config = TrainConfig {
            rank: 8,
            epochs: 40,
            batch_size: 64,
            negatives_per_positive: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let model = train_ultragcn(&matrix, &stats, &config).unwrap().model;
        let mut within = 0usize;
        let mut total = 0usize;
        for u in 0..users {
            let scores = model.score_all(u).unwrap();
            let top = topk(&scores, 3, &vec![false; items]).unwrap();
            for i in top {
                total += 1;
                if block_of(i, items) == block_of(u, users) {
                    within += 1;
                }
            }
        }
        assert!(
            within as f64 / total as f64 >= 0.9,
            "{within}/{total} in-block"
        );
    }

    #[test]
    fn linear_beats_zero_on_flipped_users() {
        let (model, split) = block_world();
        let config = EvalConfig::default();
        let zero = evaluate_strategy(&model, &split, Strategy::Zero, &config).unwrap();
        let linear = evaluate_strategy(&model, &split, Strategy::Linear, &config).unwrap();
        // warm interactions carry the signal: fold-in must help
        assert!(
            linear.metrics.hr[0] > zero.metrics.hr[0],
            "linear {:?} vs zero {:?}",
            linear.metrics.hr,
            zero.metrics.hr
        );
        let linear_n10 = linear.metrics.ndcg[1];
        let mean = evaluate_strategy(&model, &split, Strategy::Mean, &config).unwrap();
        assert!(
            linear_n10 >= mean.metrics.ndcg[1],
            "linear {linear_n10} vs mean {}",
            mean.metrics.ndcg[1]
        );
    }

    #[test]
    fn exclusions_never_recommended() {
        let (model, split) = block_world();
        let config = EvalConfig::default();
        let outcome = apply_strategy(&model, &split, Strategy::Linear, &config).unwrap();
        let train_matrix = build_matrix(&split.train, (40, 60)).unwrap();
        for &u in &split.test.active_users() {
            let mut excluded = vec![false; 60];
            for &i in train_matrix.row(u) {
                excluded[i as usize] = true;
            }
            for e in split.warm.events() {
                if e.user as usize == u {
                    excluded[e.item as usize] = true;
                }
            }
            let scores = outcome.model.score_all(u).unwrap();
            let k = 5.min(excluded.iter().filter(|&&e| !e).count());
            let top = topk(&scores, k, &excluded).unwrap();
            for i in top {
                assert!(!excluded[i], "user {u} got excluded item {i}");
            }
        }
    }

    #[test]
    fn strategies_share_exclusion_protocol_and_bounds() {
        let (model, split) = block_world();
        let config = EvalConfig::default();
        for strategy in [
            Strategy::Zero,
            Strategy::Mean,
            Strategy::Linear,
            Strategy::Sgd,
        ] {
            let report = evaluate_strategy(&model, &split, strategy, &config).unwrap();
            for v in report.metrics.hr.iter().chain(&report.metrics.ndcg) {
                assert!((0.0..=1.0).contains(v), "{strategy:?}: {v}");
            }
            assert!((0.0..=1.0).contains(&report.metrics.coverage));
            assert!(
                report.metrics.hr[0] <= report.metrics.hr[1] + 1e-12,
                "HR@5 > HR@10 for {strategy:?}"
            );
        }
    }

    #[test]
    fn svd_and_retrain_strategies_evaluate() {
        let (_, split) = block_world();
        // spectral model trained on the same split
        let matrix = build_matrix(&split.train, (40, 60)).unwrap();
        let svd_model: EmbeddingModel<f64> = crate::model::train_puresvd(&matrix, 8, 3).unwrap();
        let config = EvalConfig::default();
        let report = evaluate_strategy(&svd_model, &split, Strategy::SvdFold, &config).unwrap();
        assert!(report.metrics.hr.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(report.strategy, "svd");

        // full retrain on train + warm
        let (model, split) = block_world();
        let config = EvalConfig {
            train: TrainConfig {
                rank: 8,
                epochs: 10,
                batch_size: 64,
                negatives_per_positive: 4,
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
            ..EvalConfig::default()
        };
        let report = evaluate_strategy(&model, &split, Strategy::FullRetrain, &config).unwrap();
        assert!(report.metrics.ndcg.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(report.plan_build_ns > 0, "retrain time is the plan cost");
    }

    #[test]
    fn sgd_to_linear_ratio_grows_with_step_count() {
        let mut ratios = Vec::new();
        for steps in [2usize, 20] {
            let config = BenchConfig {
                sizes: vec![4_000],
                trials: 20,
                sgd_trials: 5,
                sgd_steps: steps,
                rank: 8,
                ..BenchConfig::default()
            };
            let rows = scaling_bench(&config).unwrap();
            let linear = rows
                .iter()
                .find(|r| r.strategy == Strategy::Linear)
                .unwrap()
                .mean_ns;
            let sgd = rows
                .iter()
                .find(|r| r.strategy == Strategy::Sgd)
                .unwrap()
                .mean_ns;
            ratios.push(sgd / linear);
        }
        assert!(
            ratios[1] > ratios[0],
            "ratio should grow with steps: {ratios:?}"
        );
    }

    #[test]
    fn scaling_bench_smoke_and_slope() {
        let config = BenchConfig {
            sizes: vec![1_000, 4_000],
            trials: 10,
            sgd_trials: 2,
            sgd_steps: 5,
            rank: 8,
            ..BenchConfig::default()
        };
        let rows = scaling_bench(&config).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(fitted_slope(&rows, Strategy::Linear).is_some());
        let csv = csv::scaling_csv(&rows);
        assert!(csv.starts_with(csv::SCALING_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn log_log_slope_of_exact_power_law() {
        let points: Vec<(f64, f64)> = vec![1e3f64, 1e4, 1e5]
            .into_iter()
            .map(|x| (x, 3.0 * x.powf(1.1)))
            .collect();
        assert!((log_log_slope(&points) - 1.1).abs() < 1e-9);
    }

    #[test]
    fn csv_headers_are_stable() {
        assert!(csv::METRICS_HEADER.starts_with("strategy,hr@5"));
        assert!(csv::TIMING_HEADER.starts_with("user_id"));
        assert!(csv::SCALING_HEADER.starts_with("catalogue_size"));
    }
}

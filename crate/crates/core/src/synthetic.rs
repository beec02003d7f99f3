//! Synthetic data generators: block-community interaction logs for
//! signal-carrying tests and Zipf-skewed catalogues for latency benchmarks.

use rand::Rng;

use crate::data::{Event, GraphStats, InteractionLog};
use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::model::{EmbeddingModel, ModelKind};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// Interaction log over two disjoint user/item communities: each user
/// interacts only with items of their own block. Timestamps are sequential
/// starting at `t0`.
pub fn block_log(
    users: usize,
    items: usize,
    events_per_user: usize,
    t0: i64,
    seed: u64,
) -> InteractionLog {
    let mut rng = rng::stream(seed, Stream::SynthUsers);
    let half_users = users / 2;
    let half_items = items / 2;
    let mut events = Vec::with_capacity(users * events_per_user);
    let mut t = t0;
    for u in 0..users {
        let (lo, hi) = if u < half_users {
            (0, half_items)
        } else {
            (half_items, items)
        };
        for _ in 0..events_per_user {
            let item = rng.gen_range(lo..hi) as u32;
            events.push(Event {
                user: u as u32,
                item,
                timestamp: t,
            });
            t += 1;
        }
    }
    InteractionLog::new(events, users, items).expect("indices in range by construction")
}

/// Warm events for `flip_users` drawn from the opposite block, signalling a
/// preference change after training.
pub fn block_flip_warm_log(
    users: usize,
    items: usize,
    events_per_user: usize,
    flip_users: &[usize],
    t0: i64,
    seed: u64,
) -> InteractionLog {
    let mut rng = rng::stream(seed, Stream::SynthUsers);
    let half_users = users / 2;
    let half_items = items / 2;
    let mut events = Vec::new();
    let mut t = t0;
    for &u in flip_users {
        // opposite block of the user's home block
        let (lo, hi) = if u < half_users {
            (half_items, items)
        } else {
            (0, half_items)
        };
        for _ in 0..events_per_user {
            let item = rng.gen_range(lo..hi) as u32;
            events.push(Event {
                user: u as u32,
                item,
                timestamp: t,
            });
            t += 1;
        }
    }
    InteractionLog::new(events, users, items).expect("indices in range by construction")
}

/// Home block (0 or 1) of a user or item under the two-community layout.
pub fn block_of(index: usize, total: usize) -> usize {
    usize::from(index >= total / 2)
}

/// Zipf(exponent) sampler over `n` ranked items via inverse-CDF lookup.
pub struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, exponent: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            acc += 1.0 / ((i + 1) as f64).powf(exponent);
            cumulative.push(acc);
        }
        let total = acc;
        for c in cumulative.iter_mut() {
            *c /= total;
        }
        Self { cumulative }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let x: f64 = rng.gen();
        self.cumulative
            .partition_point(|&c| c < x)
            .min(self.cumulative.len() - 1)
    }
}

/// Synthetic graph-weighted model for latency benchmarks: Gaussian item and
/// user factors, item degrees skewed like a Zipf(1.1) popularity curve.
pub fn bench_model<T: Scalar>(
    num_users: usize,
    num_items: usize,
    rank: usize,
    seed: u64,
) -> Result<EmbeddingModel<T>> {
    let mut rng = rng::stream(seed, Stream::SynthModel);
    let item_embeddings =
        DenseMatrix::from_fn(num_items, rank, |_, _| rng::standard_normal::<T>(&mut rng));
    let user_embeddings =
        DenseMatrix::from_fn(num_users, rank, |_, _| rng::standard_normal::<T>(&mut rng));
    // Degrees fall off like a popularity curve; the long tail sits at zero.
    let item_degrees: Vec<u32> = (0..num_items)
        .map(|i| (2000.0 / ((i + 1) as f64).powf(1.1)).floor() as u32)
        .collect();
    let user_degrees: Vec<u32> = (0..num_users).map(|u| 20 + (u as u32 % 7)).collect();
    Ok(EmbeddingModel {
        kind: ModelKind::UltraGcn,
        user_embeddings,
        item_embeddings,
        stats: GraphStats::from_degrees(user_degrees, item_degrees),
        sigma: None,
        rank,
        lambda: T::one(),
    })
}

/// A user history of roughly `len` distinct items drawn from the Zipf
/// popularity curve.
pub fn sample_history(sampler: &ZipfSampler, len: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut items: Vec<u32> = (0..len).map(|_| sampler.sample(rng) as u32).collect();
    items.sort_unstable();
    items.dedup();
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_log_respects_communities() {
        let log = block_log(20, 15, 8, 0, 3);
        assert_eq!(log.len(), 160);
        for e in log.events() {
            assert_eq!(
                block_of(e.user as usize, 20),
                block_of(e.item as usize, 15),
                "event {e:?} crosses blocks"
            );
        }
    }

    #[test]
    fn flip_log_crosses_communities() {
        let warm = block_flip_warm_log(20, 15, 5, &[0, 12], 1000, 4);
        for e in warm.events() {
            assert_ne!(block_of(e.user as usize, 20), block_of(e.item as usize, 15));
        }
    }

    #[test]
    fn zipf_head_is_heavier_than_tail() {
        let sampler = ZipfSampler::new(1000, 1.1);
        let mut rng = rng::stream(5, Stream::Misc);
        let mut head = 0usize;
        let draws = 5000;
        for _ in 0..draws {
            if sampler.sample(&mut rng) < 10 {
                head += 1;
            }
        }
        assert!(head > draws / 4, "head draws {head} of {draws}");
    }

    #[test]
    fn bench_model_shapes() {
        let model: EmbeddingModel<f64> = bench_model(10, 500, 16, 9).unwrap();
        assert_eq!(model.num_items(), 500);
        assert_eq!(model.rank, 16);
        assert!(model.stats.item_degrees[0] > model.stats.item_degrees[499]);
        assert!(model.stats.beta_user(0).is_some());
    }
}

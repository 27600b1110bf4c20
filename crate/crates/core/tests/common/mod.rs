//! Brute-force reference implementations and instance generators shared by
//! the integration tests. Nothing here calls into the prediction or gradient
//! code under test.

#![allow(dead_code)]

use dpnb::{Rating, RatingDataset, RatingScale, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(n_users: usize, n_items: usize, triples: &[(u32, u32, f64)]) -> RatingDataset {
    RatingDataset::new(
        n_users,
        n_items,
        RatingScale::MOVIELENS,
        triples.iter().map(|&(user, item, value)| Rating { user, item, value }).collect(),
    )
    .unwrap()
}

/// Random instance where every user rates at least two items, with
/// continuous ratings in [1, 5] so no two residuals coincide.
pub fn random_instance(seed: u64, max_users: usize, max_items: usize) -> RatingDataset {
    let mut r = rng(seed);
    let n_users = r.random_range(2..=max_users);
    let n_items = r.random_range(3..=max_items);
    let mut triples = Vec::new();
    for u in 0..n_users {
        let mut items: Vec<usize> = (0..n_items).filter(|_| r.random_bool(0.7)).collect();
        while items.len() < 2 {
            let i = r.random_range(0..n_items);
            if !items.contains(&i) {
                items.push(i);
            }
        }
        for i in items {
            triples.push((u as u32, i as u32, r.random_range(1.0..5.0)));
        }
    }
    dataset(n_users, n_items, &triples)
}

/// Dense matrix with off-diagonal entries of random sign and magnitude in
/// [0.2, 1.5], keeping |s| away from the kink at zero.
pub fn random_similarity(seed: u64, n: usize) -> SimilarityMatrix {
    let mut r = rng(seed ^ 0x5151);
    SimilarityMatrix::from_fn(n, |i, j| {
        if i == j {
            0.0
        } else {
            let m: f64 = r.random_range(0.2..1.5);
            if r.random_bool(0.3) { -m } else { m }
        }
    })
}

pub fn triples(data: &RatingDataset) -> Vec<(usize, usize, f64)> {
    data.ratings().iter().map(|r| (r.user as usize, r.item as usize, r.value)).collect()
}

/// Item means by direct averaging; items without ratings get the scale
/// midpoint.
pub fn oracle_means(data: &RatingDataset) -> Vec<f64> {
    let t = triples(data);
    (0..data.n_items())
        .map(|i| {
            let vals: Vec<f64> = t.iter().filter(|x| x.1 == i).map(|x| x.2).collect();
            if vals.is_empty() {
                data.scale().midpoint()
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect()
}

pub fn oracle_predict(
    s: &SimilarityMatrix,
    data: &RatingDataset,
    u: usize,
    i: usize,
    limit: Option<usize>,
) -> f64 {
    let means = oracle_means(data);
    let mut neigh: Vec<(usize, f64)> = triples(data)
        .into_iter()
        .filter(|&(uu, j, _)| uu == u && j != i)
        .map(|(_, j, r)| (j, r))
        .collect();
    if let Some(n) = limit {
        neigh.sort_by(|a, b| {
            s.get(i, b.0).abs().partial_cmp(&s.get(i, a.0).abs()).unwrap().then(a.0.cmp(&b.0))
        });
        neigh.truncate(n);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, r) in neigh {
        num += s.get(i, j) * (r - means[j]);
        den += s.get(i, j).abs();
    }
    if den == 0.0 { means[i] } else { means[i] + num / den }
}

/// Individual summands of the loss: one squared residual per rating, then
/// one λ s² per matrix entry.
pub fn oracle_loss_terms(s: &SimilarityMatrix, data: &RatingDataset, lambda: f64) -> Vec<f64> {
    let mut terms: Vec<f64> = triples(data)
        .into_iter()
        .map(|(u, i, r)| {
            let e = r - oracle_predict(s, data, u, i, None);
            e * e
        })
        .collect();
    terms.extend(s.as_slice().iter().map(|v| lambda * v * v));
    terms
}

pub fn oracle_loss(s: &SimilarityMatrix, data: &RatingDataset, lambda: f64) -> f64 {
    oracle_loss_terms(s, data, lambda).iter().sum()
}

/// Central finite-difference gradient of `Σ f(s)` at `s` with step `h`.
/// Summands are differenced one by one before adding up, which keeps the
/// cancellation error at the scale of a single term.
pub fn finite_difference(
    s: &SimilarityMatrix,
    h: f64,
    mut f: impl FnMut(&SimilarityMatrix) -> Vec<f64>,
) -> SimilarityMatrix {
    let n = s.dim();
    let mut out = SimilarityMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut plus = s.clone();
            plus.set(i, j, s.get(i, j) + h);
            let mut minus = s.clone();
            minus.set(i, j, s.get(i, j) - h);
            let diff: f64 = f(&plus).iter().zip(f(&minus)).map(|(p, m)| p - m).sum();
            out.set(i, j, diff / (2.0 * h));
        }
    }
    out
}

/// Worst entrywise relative error, with an absolute floor for entries that
/// are structurally zero.
pub fn max_relative_error(actual: &SimilarityMatrix, expected: &SimilarityMatrix, floor: f64) -> f64 {
    actual
        .as_slice()
        .iter()
        .zip(expected.as_slice())
        .map(|(a, e)| (a - e).abs() / e.abs().max(floor))
        .fold(0.0, f64::max)
}

/// The MovieLens 100K ratings file, if present.
pub fn ml100k_path() -> Option<std::path::PathBuf> {
    if let Ok(p) = std::env::var("DPNB_ML100K") {
        let p = std::path::PathBuf::from(p);
        return p.exists().then_some(p);
    }
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    p.exists().then_some(p)
}

/// Integer ratings from a rank-2 latent model with user and item biases;
/// each user rates between 15 and 30 items.
pub fn synthetic_ratings(seed: u64, n_users: usize, n_items: usize) -> RatingDataset {
    let mut r = rng(seed);
    let item_f: Vec<(f64, f64, f64)> = (0..n_items)
        .map(|_| (r.random_range(-0.8..0.8), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let mut triples = Vec::new();
    for u in 0..n_users {
        let bias: f64 = r.random_range(-0.7..0.7);
        let p: (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let count = r.random_range(15..=30.min(n_items));
        for i in rand::seq::index::sample(&mut r, n_items, count) {
            let (b, q0, q1) = item_f[i];
            let noise: f64 = r.random_range(-0.5..0.5);
            let v = (3.2 + bias + b + 0.8 * (p.0 * q0 + p.1 * q1) + noise).round().clamp(1.0, 5.0);
            triples.push((u as u32, i as u32, v));
        }
    }
    dataset(n_users, n_items, &triples)
}

/// Four users who rated all five items. With a batch of 20 draws this
/// instance keeps the per-entry standard error of the mini-batch gradient
/// mean under 0.2% at 10^5 batches, so a 1% tolerance is about 5 sigma.
pub fn dense_four_by_five() -> (RatingDataset, SimilarityMatrix, usize) {
    let rows = [[5.0, 2.0, 1.0, 4.0, 1.0], [1.0, 5.0, 5.0, 3.0, 5.0], [1.0, 2.0, 1.0, 1.0, 2.0], [5.0, 2.0, 1.0, 5.0, 1.0]];
    let mut t = Vec::new();
    for (u, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            t.push((u as u32, i as u32, v));
        }
    }
    (dataset(4, 5, &t), dpnb::dpps::init_similarity(5, 1.0, 3736), 20)
}

mod common;

use common::*;
use dpnb::baselines::{compute_similarity, CorrelationKind};
use dpnb::RatingDataset;
use rand::Rng;

/// Textbook double loop over item pairs and users.
fn naive(data: &RatingDataset, kind: CorrelationKind) -> Vec<Vec<f64>> {
    let t = triples(data);
    let rating = |u: usize, i: usize| t.iter().find(|x| x.0 == u && x.1 == i).map(|x| x.2);
    let m = data.n_items();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for u in 0..data.n_users() {
                if let (Some(a), Some(b)) = (rating(u, i), rating(u, j)) {
                    xs.push(a);
                    ys.push(b);
                }
            }
            if xs.len() < 2 {
                continue;
            }
            let (mx, my) = match kind {
                CorrelationKind::Pearson => (
                    xs.iter().sum::<f64>() / xs.len() as f64,
                    ys.iter().sum::<f64>() / ys.len() as f64,
                ),
                CorrelationKind::Cosine => (0.0, 0.0),
            };
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            for k in 0..xs.len() {
                sxy += (xs[k] - mx) * (ys[k] - my);
                sxx += (xs[k] - mx) * (xs[k] - mx);
                syy += (ys[k] - my) * (ys[k] - my);
            }
            out[i][j] = if sxx > 0.0 && syy > 0.0 { sxy / (sxx.sqrt() * syy.sqrt()) } else { 0.0 };
        }
    }
    out
}

#[test]
fn matches_naive_oracle() {
    let toy = dataset(3, 3, &[(0, 0, 5.0), (0, 1, 3.0), (0, 2, 1.0), (1, 0, 4.0), (1, 1, 1.0), (2, 0, 2.0), (2, 1, 4.0), (2, 2, 4.0)]);
    let mut cases = vec![toy];
    cases.extend((0..20).map(|seed| random_instance(seed, 8, 6)));
    for data in cases {
        for kind in [CorrelationKind::Pearson, CorrelationKind::Cosine] {
            let s = compute_similarity(&data, kind);
            let want = naive(&data, kind);
            for i in 0..data.n_items() {
                for j in 0..data.n_items() {
                    assert!((s.get(i, j) - want[i][j]).abs() < 1e-12, "{kind:?} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn symmetric_and_bounded() {
    for seed in 0..10 {
        let data = random_instance(seed, 8, 6);
        for kind in [CorrelationKind::Pearson, CorrelationKind::Cosine] {
            let s = compute_similarity(&data, kind);
            for i in 0..s.dim() {
                assert_eq!(s.get(i, i), 0.0);
                for j in 0..s.dim() {
                    assert_eq!(s.get(i, j), s.get(j, i));
                    assert!(s.get(i, j).abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}

#[test]
fn pearson_is_invariant_to_per_item_affine_maps() {
    for seed in 0..10 {
        let data = random_instance(seed, 8, 6);
        let mut r = rng(seed + 100);
        let maps: Vec<(f64, f64)> =
            (0..data.n_items()).map(|_| (r.random_range(0.2..3.0), r.random_range(-2.0..2.0))).collect();
        let mapped: Vec<(u32, u32, f64)> = data
            .ratings()
            .iter()
            .map(|x| {
                let (a, b) = maps[x.item as usize];
                (x.user, x.item, a * x.value + b)
            })
            .collect();
        // the mapped values leave [1, 5], so use a wide scale
        let wide = RatingDataset::new(
            data.n_users(),
            data.n_items(),
            dpnb::RatingScale::new(-20.0, 20.0).unwrap(),
            mapped.iter().map(|&(user, item, value)| dpnb::Rating { user, item, value }).collect(),
        )
        .unwrap();
        let before = compute_similarity(&data, CorrelationKind::Pearson);
        let after = compute_similarity(&wide, CorrelationKind::Pearson);
        for (a, b) in before.as_slice().iter().zip(after.as_slice()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn identical_columns_correlate_perfectly() {
    let data = dataset(3, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 3.0), (1, 1, 3.0), (2, 0, 5.0), (2, 1, 5.0)]);
    let s = compute_similarity(&data, CorrelationKind::Pearson);
    assert!((s.get(0, 1) - 1.0).abs() < 1e-12);
}

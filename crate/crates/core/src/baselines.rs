//! Non-private correlation similarities (Pearson and cosine) used as
//! comparison anchors.

use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Pearson,
    Cosine,
}

/// Pairs with fewer co-rating users than this get similarity 0.
pub const MIN_CO_RATERS: usize = 2;

#[derive(Debug, Clone)]
pub struct CorrelationSimilarity {
    pub kind: CorrelationKind,
    pub values: SimilarityMatrix,
    pub neighbor_cap: usize,
}

// Upper-triangle accumulators over co-rating users.
#[derive(Clone, Copy, Default)]
struct PairSums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl PairSums {
    fn similarity(&self, kind: CorrelationKind) -> f64 {
        if (self.n as usize) < MIN_CO_RATERS {
            return 0.0;
        }
        let (num, vx, vy) = match kind {
            // n Σxy − ΣxΣy over sqrt of the matching variance terms; exact
            // for integer-valued ratings
            CorrelationKind::Pearson => (
                self.n * self.xy - self.x * self.y,
                self.n * self.xx - self.x * self.x,
                self.n * self.yy - self.y * self.y,
            ),
            CorrelationKind::Cosine => (self.xy, self.xx, self.yy),
        };
        if vx <= 0.0 || vy <= 0.0 {
            return 0.0;
        }
        (num / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Symmetric item-item similarity over co-rating users.
///
/// Pearson centres each item's ratings on its mean over the co-raters of the
/// pair; cosine uses raw ratings. Pairs with fewer than two co-raters or a
/// zero-variance side get 0.
pub fn compute_similarity(data: &RatingDataset, kind: CorrelationKind) -> SimilarityMatrix {
    let m = data.n_items();
    let tri = |i: usize, j: usize| i * m - i * (i + 1) / 2 + (j - i - 1);
    let mut sums = vec![PairSums::default(); m * m.saturating_sub(1) / 2];
    for u in 0..data.n_users() {
        let hist = data.user_ratings(u);
        for (a, &(i, x)) in hist.iter().enumerate() {
            for &(j, y) in &hist[a + 1..] {
                // hist is sorted by item, so i < j
                let p = &mut sums[tri(i as usize, j as usize)];
                p.n += 1.0;
                p.x += x;
                p.y += y;
                p.xx += x * x;
                p.yy += y * y;
                p.xy += x * y;
            }
        }
    }
    let mut s = SimilarityMatrix::zeros(m);
    for i in 0..m {
        for j in i + 1..m {
            let v = sums[tri(i, j)].similarity(kind);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

impl CorrelationSimilarity {
    pub fn fit(data: &RatingDataset, kind: CorrelationKind, neighbor_cap: usize) -> Self {
        CorrelationSimilarity { kind, values: compute_similarity(data, kind), neighbor_cap }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Rating, RatingScale};

    fn dataset(ratings: &[(u32, u32, f64)], n_users: usize, n_items: usize) -> RatingDataset {
        RatingDataset::new(
            n_users,
            n_items,
            RatingScale::MOVIELENS,
            ratings.iter().map(|&(user, item, value)| Rating { user, item, value }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_vectors_have_unit_pearson() {
        let data = dataset(
            &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 4.0), (1, 1, 4.0), (2, 0, 2.0), (2, 1, 2.0)],
            3,
            2,
        );
        let s = compute_similarity(&data, CorrelationKind::Pearson);
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(s.get(0, 1), s.get(1, 0));
    }

    #[test]
    fn no_co_raters_is_zero() {
        let data = dataset(&[(0, 0, 1.0), (1, 1, 5.0)], 2, 2);
        for kind in [CorrelationKind::Pearson, CorrelationKind::Cosine] {
            assert_eq!(compute_similarity(&data, kind).get(0, 1), 0.0);
        }
    }

    #[test]
    fn single_co_rater_is_zero() {
        let data = dataset(&[(0, 0, 1.0), (0, 1, 5.0)], 1, 2);
        assert_eq!(compute_similarity(&data, CorrelationKind::Cosine).get(0, 1), 0.0);
    }

    #[test]
    fn zero_variance_is_zero_not_nan() {
        let data = dataset(&[(0, 0, 3.0), (0, 1, 1.0), (1, 0, 3.0), (1, 1, 5.0)], 2, 2);
        let s = compute_similarity(&data, CorrelationKind::Pearson);
        assert_eq!(s.get(0, 1), 0.0);
    }

    #[test]
    fn cosine_on_positive_ratings_is_non_negative() {
        let data = dataset(&[(0, 0, 1.0), (0, 1, 5.0), (1, 0, 5.0), (1, 1, 1.0)], 2, 2);
        let v = compute_similarity(&data, CorrelationKind::Cosine).get(0, 1);
        assert!((v - 10.0 / 26.0).abs() < 1e-15);
    }
}

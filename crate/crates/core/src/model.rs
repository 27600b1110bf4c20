//! Probabilistic item-item neighbourhood model: prediction, negative
//! log-posterior and its gradient.
//!
//! A prediction is the item mean plus a similarity-weighted mean of the
//! user's centred ratings of other items:
//!
//! ```text
//! r̂_ui = r̄_i + Σ_j s_ij (r_uj − r̄_j) / Σ_j |s_ij|,   j ∈ rated(u) \ {i}
//! ```
//!
//! The same routines serve both trainers; the private SGD trainer
//! additionally floors the denominator at a constant `C`.

use crate::data::RatingDataset;
use crate::error::{Error, Result};
use crate::similarity::{by_magnitude, SimilarityMatrix};

/// A single prediction together with the size of the neighbourhood used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub neighbors: usize,
}

/// Intermediate sums of one prediction, shared with the gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Terms {
    pub value: f64,
    pub item_mean: f64,
    /// Denominator actually divided by (after flooring).
    pub denominator: f64,
    pub floored: bool,
}

/// sign with sign(0) = 0.
#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn prediction_terms(
    row: &[f64],
    history: &[(u32, f64)],
    means: &[f64],
    item: usize,
    floor: f64,
) -> Terms {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(j, r) in history {
        let j = j as usize;
        if j == item {
            continue;
        }
        let s = row[j];
        num += s * (r - means[j]);
        den += s.abs();
    }
    let item_mean = means[item];
    let floored = den < floor;
    let denominator = if floored { floor } else { den };
    let value = if denominator > 0.0 { item_mean + num / denominator } else { item_mean };
    Terms { value, item_mean, denominator, floored }
}

/// Add `coeff · ∂r̂_ui/∂S_i` into `out_row`.
#[inline]
pub(crate) fn accumulate_row_gradient(
    row: &[f64],
    history: &[(u32, f64)],
    means: &[f64],
    item: usize,
    terms: &Terms,
    coeff: f64,
    out_row: &mut [f64],
) {
    if terms.denominator <= 0.0 || coeff == 0.0 {
        return;
    }
    let scaled = coeff / terms.denominator;
    let offset = terms.value - terms.item_mean;
    for &(j, r) in history {
        let j = j as usize;
        if j == item {
            continue;
        }
        let centred = r - means[j];
        // a floored denominator is constant in S
        let d = if terms.floored { centred } else { centred - offset * sign(row[j]) };
        out_row[j] += scaled * d;
    }
}

fn check_dims(s: &SimilarityMatrix, data: &RatingDataset) -> Result<()> {
    if s.dim() != data.n_items() {
        return Err(Error::DimensionMismatch { matrix: s.dim(), items: data.n_items() });
    }
    Ok(())
}

/// Predicted rating of `item` by `user`, optionally restricted to the
/// `neighbor_limit` largest-|s_ij| items among those the user rated (ties by
/// smaller item index). Not clamped to the rating scale.
pub fn predict(
    s: &SimilarityMatrix,
    data: &RatingDataset,
    user: usize,
    item: usize,
    neighbor_limit: Option<usize>,
) -> Result<f64> {
    predict_detailed(s, data, user, item, neighbor_limit).map(|p| p.value)
}

pub fn predict_detailed(
    s: &SimilarityMatrix,
    data: &RatingDataset,
    user: usize,
    item: usize,
    neighbor_limit: Option<usize>,
) -> Result<Prediction> {
    check_dims(s, data)?;
    data.check_user(user)?;
    data.check_item(item)?;
    let row = s.row(item);
    let means = data.item_means();
    let history = data.user_ratings(user);
    let available = history.iter().filter(|&&(j, _)| j as usize != item).count();

    match neighbor_limit {
        Some(limit) if limit < available => {
            let mut candidates: Vec<(u32, f64)> =
                history.iter().copied().filter(|&(j, _)| j as usize != item).collect();
            if limit > 0 {
                candidates.select_nth_unstable_by(limit - 1, |a, b| {
                    by_magnitude(row[a.0 as usize], a.0 as usize, row[b.0 as usize], b.0 as usize)
                });
            }
            candidates.truncate(limit);
            candidates.sort_unstable_by_key(|&(j, _)| j);
            let terms = prediction_terms(row, &candidates, means, item, 0.0);
            Ok(Prediction { value: terms.value, neighbors: candidates.len() })
        }
        _ => {
            let terms = prediction_terms(row, history, means, item, 0.0);
            Ok(Prediction { value: terms.value, neighbors: available })
        }
    }
}

/// Σ_(u,i) (r_ui − r̂_ui)² + λ Σ_i ‖S_i‖².
pub fn loss(s: &SimilarityMatrix, data: &RatingDataset, lambda: f64) -> Result<f64> {
    check_dims(s, data)?;
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
    }
    let means = data.item_means();
    let mut sse = 0.0;
    for r in data.ratings() {
        let (u, i) = (r.user as usize, r.item as usize);
        let terms = prediction_terms(s.row(i), data.user_ratings(u), means, i, 0.0);
        let e = r.value - terms.value;
        sse += e * e;
    }
    let reg: f64 = s.as_slice().iter().map(|v| v * v).sum();
    Ok(sse + lambda * reg)
}

/// Σ_(u,i)∈batch e_ui ∂r̂_ui/∂S_i + λS with e_ui = r̂_ui − r_ui.
///
/// This is the gradient of half of [`loss`]. Each rating only touches row `i`.
/// Batch entries are `(user, item)` pairs and may repeat.
pub fn gradient(
    s: &SimilarityMatrix,
    data: &RatingDataset,
    batch: &[(usize, usize)],
    lambda: f64,
) -> Result<SimilarityMatrix> {
    check_dims(s, data)?;
    let mut grad = SimilarityMatrix::zeros(s.dim());
    for (g, v) in grad.as_mut_slice().iter_mut().zip(s.as_slice()) {
        *g = lambda * v;
    }
    let means = data.item_means();
    for &(u, i) in batch {
        data.check_user(u)?;
        data.check_item(i)?;
        let actual = data.rating(u, i).ok_or(Error::NotObserved { user: u, item: i })?;
        let history = data.user_ratings(u);
        let row = s.row(i);
        let terms = prediction_terms(row, history, means, i, 0.0);
        let e = terms.value - actual;
        accumulate_row_gradient(row, history, means, i, &terms, e, grad.row_mut(i));
    }
    Ok(grad)
}

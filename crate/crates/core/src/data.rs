//! Sparse rating store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed rating interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub const MOVIELENS: RatingScale = RatingScale { min: 1.0, max: 5.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::config(format!("invalid rating scale [{min}, {max}]")));
        }
        Ok(RatingScale { min, max })
    }

    /// φ = r_max − r_min.
    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

/// Observed ratings with per-user and per-item indices.
///
/// Users and items are dense indices in `0..n_users` and `0..n_items`. A
/// training fold keeps the full index space of its parent so similarity
/// matrices stay aligned across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    ratings: Vec<Rating>,
    // (item, value) sorted by item
    by_user: Vec<Vec<(u32, f64)>>,
    // users sorted ascending
    by_item: Vec<Vec<u32>>,
    n_users: usize,
    n_items: usize,
    scale: RatingScale,
    item_means: Vec<f64>,
}

impl RatingDataset {
    pub fn new(
        n_users: usize,
        n_items: usize,
        scale: RatingScale,
        ratings: Vec<Rating>,
    ) -> Result<Self> {
        let mut by_user: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_users];
        let mut by_item: Vec<Vec<u32>> = vec![Vec::new(); n_items];
        let mut sums = vec![0.0; n_items];
        for r in &ratings {
            let (u, i) = (r.user as usize, r.item as usize);
            if u >= n_users {
                return Err(Error::IndexOutOfRange { what: "user", index: u, size: n_users });
            }
            if i >= n_items {
                return Err(Error::IndexOutOfRange { what: "item", index: i, size: n_items });
            }
            if !r.value.is_finite() || !scale.contains(r.value) {
                return Err(Error::RatingOutOfScale {
                    value: r.value,
                    min: scale.min,
                    max: scale.max,
                });
            }
            by_user[u].push((r.item, r.value));
            by_item[i].push(r.user);
            sums[i] += r.value;
        }
        for (u, hist) in by_user.iter_mut().enumerate() {
            hist.sort_unstable_by_key(|&(i, _)| i);
            if let Some(w) = hist.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::DuplicateRating { user: u as u64, item: w[0].0 as u64 });
            }
        }
        for users in &mut by_item {
            users.sort_unstable();
        }
        let item_means = sums
            .iter()
            .zip(&by_item)
            .map(|(&s, users)| {
                if users.is_empty() {
                    scale.midpoint()
                } else {
                    s / users.len() as f64
                }
            })
            .collect();
        Ok(RatingDataset { ratings, by_user, by_item, n_users, n_items, scale, item_means })
    }

    /// Ratings at `indices` (into [`ratings`](Self::ratings)), same index space.
    pub fn subset(&self, indices: &[usize]) -> Result<RatingDataset> {
        let ratings = indices.iter().map(|&k| self.ratings[k]).collect();
        RatingDataset::new(self.n_users, self.n_items, self.scale, ratings)
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    /// 𝓛, the number of observed ratings.
    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn item_means(&self) -> &[f64] {
        &self.item_means
    }

    pub fn item_mean(&self, item: usize) -> f64 {
        self.item_means[item]
    }

    /// Items rated by `user` with their values, ascending by item.
    pub fn user_ratings(&self, user: usize) -> &[(u32, f64)] {
        &self.by_user[user]
    }

    /// Users who rated `item`, ascending.
    pub fn item_raters(&self, item: usize) -> &[u32] {
        &self.by_item[item]
    }

    /// |I_i|, the number of ratings of `item`.
    pub fn item_count(&self, item: usize) -> usize {
        self.by_item[item].len()
    }

    pub fn user_count(&self, user: usize) -> usize {
        self.by_user[user].len()
    }

    pub fn max_user_count(&self) -> usize {
        self.by_user.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<f64> {
        let hist = self.by_user.get(user)?;
        hist.binary_search_by_key(&(item as u32), |&(i, _)| i).ok().map(|k| hist[k].1)
    }

    pub(crate) fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n_users {
            return Err(Error::IndexOutOfRange { what: "user", index: user, size: self.n_users });
        }
        Ok(())
    }

    pub(crate) fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.n_items {
            return Err(Error::IndexOutOfRange { what: "item", index: item, size: self.n_items });
        }
        Ok(())
    }
}

//! MovieLens parsing, preprocessing and cross-validation folds.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Rating, RatingDataset, RatingScale};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MovieLensFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`
    Ml100k,
    /// `user::item::rating::timestamp`
    Ml1m,
}

impl MovieLensFormat {
    fn separator(self) -> &'static str {
        match self {
            MovieLensFormat::Ml100k => "\t",
            MovieLensFormat::Ml1m => "::",
        }
    }
}

impl std::str::FromStr for MovieLensFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml100k" => Ok(MovieLensFormat::Ml100k),
            "ml1m" => Ok(MovieLensFormat::Ml1m),
            other => Err(Error::config(format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRatingRecord {
    pub user_id: u64,
    pub item_id: u64,
    pub value: f64,
    pub timestamp: i64,
}

pub fn parse_movielens(path: &Path, format: MovieLensFormat) -> Result<Vec<RawRatingRecord>> {
    let text = fs::read_to_string(path)?;
    parse_movielens_str(&text, format)
}

pub fn parse_movielens_str(text: &str, format: MovieLensFormat) -> Result<Vec<RawRatingRecord>> {
    let sep = format.separator();
    let scale = RatingScale::MOVIELENS;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields separated by {sep:?}, found {}", fields.len()),
            });
        }
        let field = |k: usize, name: &str| -> Result<&str> {
            let f = fields[k].trim();
            if f.is_empty() {
                return Err(Error::Parse { line: line_no, message: format!("empty {name}") });
            }
            Ok(f)
        };
        let bad = |name: &str, v: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {name} `{v}`"),
        };
        let user = field(0, "user id")?;
        let item = field(1, "item id")?;
        let rating = field(2, "rating")?;
        let ts = field(3, "timestamp")?;
        let value: f64 = rating.parse().map_err(|_| bad("rating", rating))?;
        if !scale.contains(value) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("rating {value} outside [{}, {}]", scale.min, scale.max),
            });
        }
        records.push(RawRatingRecord {
            user_id: user.parse().map_err(|_| bad("user id", user))?,
            item_id: item.parse().map_err(|_| bad("item id", item))?,
            value,
            timestamp: ts.parse().map_err(|_| bad("timestamp", ts))?,
        });
    }
    if records.is_empty() {
        return Err(Error::Empty("no ratings in input".into()));
    }
    Ok(records)
}

/// External ids of the dense user and item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<u64>,
    pub items: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub min_ratings: usize,
    pub tau: usize,
    pub seed: u64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams { min_ratings: 20, tau: 200, seed: 0 }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_ratings == 0 {
            return Err(Error::config("min ratings per user must be at least 1"));
        }
        if self.tau < self.min_ratings {
            return Err(Error::config(format!(
                "tau ({}) must be at least the minimum ratings per user ({})",
                self.tau, self.min_ratings
            )));
        }
        Ok(())
    }
}

pub fn preprocess(records: &[RawRatingRecord], params: &PreprocessParams) -> Result<RatingDataset> {
    preprocess_with_ids(records, params).map(|(data, _)| data)
}

/// Keep users with at least `min_ratings` ratings, subsample users above
/// `tau` down to exactly `tau` ratings, and remap ids to dense indices in
/// ascending external-id order.
pub fn preprocess_with_ids(
    records: &[RawRatingRecord],
    params: &PreprocessParams,
) -> Result<(RatingDataset, IdMap)> {
    params.validate()?;
    let mut by_user: BTreeMap<u64, Vec<&RawRatingRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_id).or_default().push(r);
    }
    let mut kept: Vec<(u64, Vec<&RawRatingRecord>)> = Vec::new();
    for (user, mut list) in by_user {
        if list.len() < params.min_ratings {
            continue;
        }
        list.sort_by_key(|r| r.item_id);
        if let Some(w) = list.windows(2).find(|w| w[0].item_id == w[1].item_id) {
            return Err(Error::DuplicateRating { user, item: w[0].item_id });
        }
        if list.len() > params.tau {
            let mut rng = rng::stream(params.seed, rng::INGEST, &[user]);
            let mut keep = index::sample(&mut rng, list.len(), params.tau).into_vec();
            keep.sort_unstable();
            list = keep.into_iter().map(|k| list[k]).collect();
        }
        kept.push((user, list));
    }
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "every user has fewer than {} ratings",
            params.min_ratings
        )));
    }

    let mut items: Vec<u64> =
        kept.iter().flat_map(|(_, l)| l.iter().map(|r| r.item_id)).collect();
    items.sort_unstable();
    items.dedup();
    let users: Vec<u64> = kept.iter().map(|(u, _)| *u).collect();

    let mut ratings = Vec::with_capacity(kept.iter().map(|(_, l)| l.len()).sum());
    for (u, (_, list)) in kept.iter().enumerate() {
        for r in list {
            let i = items.binary_search(&r.item_id).expect("item collected above");
            ratings.push(Rating { user: u as u32, item: i as u32, value: r.value });
        }
    }
    let data = RatingDataset::new(users.len(), items.len(), RatingScale::MOVIELENS, ratings)?;
    Ok((data, IdMap { users, items }))
}

/// Dense-index records of a dataset, e.g. to re-run preprocessing on it.
pub fn to_records(data: &RatingDataset) -> Vec<RawRatingRecord> {
    data.ratings()
        .iter()
        .map(|r| RawRatingRecord {
            user_id: r.user as u64,
            item_id: r.item as u64,
            value: r.value,
            timestamp: 0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    /// Fold of each rating, aligned with `RatingDataset::ratings`.
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&r| self.assignments[r] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&r| self.assignments[r] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// (train, test) datasets of `fold`, both in the parent's index space.
    pub fn split(&self, data: &RatingDataset, fold: usize) -> Result<(RatingDataset, RatingDataset)> {
        let train = self.train_indices(fold);
        let test = self.test_indices(fold);
        let train_set: HashSet<usize> = train.iter().copied().collect();
        assert!(
            test.iter().all(|k| !train_set.contains(k)),
            "fold {fold}: test rating leaked into training"
        );
        Ok((data.subset(&train)?, data.subset(&test)?))
    }
}

/// Random k-fold partition of the ratings, stratified by user.
///
/// Users are visited in random order; each user's ratings are shuffled and
/// dealt to consecutive folds from a running counter. Fold sizes therefore
/// differ by at most one, every rating's fold is uniform, and a user with at
/// least two ratings is never entirely inside one test fold.
pub fn split_folds(data: &RatingDataset, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    if let Some(u) = (0..data.n_users()).find(|&u| data.user_count(u) == 1) {
        return Err(Error::config(format!(
            "user {u} has a single rating and would have no training data in one fold"
        )));
    }
    let mut rng = rng::stream(seed, rng::FOLD, &[k as u64]);
    let mut position: Vec<Vec<usize>> = vec![Vec::new(); data.n_users()];
    for (idx, r) in data.ratings().iter().enumerate() {
        position[r.user as usize].push(idx);
    }
    let mut users: Vec<usize> = (0..data.n_users()).collect();
    users.shuffle(&mut rng);
    let mut counter: usize = rng.random_range(0..k);
    let mut assignments = vec![0; data.len()];
    for u in users {
        let list = &mut position[u];
        list.shuffle(&mut rng);
        for &idx in list.iter() {
            assignments[idx] = counter % k;
            counter += 1;
        }
    }
    Ok(FoldSplit { k, assignments })
}

/// Sidecar describing a cached preprocessed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    #[serde(rename = "N")]
    pub n_users: usize,
    #[serde(rename = "M")]
    pub n_items: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Rating span r_max - r_min.
    pub phi: f64,
    pub seed: u64,
    pub min_ratings: usize,
    pub tau: usize,
}

/// Write `user,item,rating` CSV plus `<csv>.json` sidecar.
pub fn write_cache(data: &RatingDataset, params: &PreprocessParams, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["user", "item", "rating"])?;
    for r in data.ratings() {
        w.write_record(&[r.user.to_string(), r.item.to_string(), r.value.to_string()])?;
    }
    w.flush()?;
    let sidecar = DatasetSidecar {
        n_users: data.n_users(),
        n_items: data.n_items(),
        r_min: data.scale().min,
        r_max: data.scale().max,
        phi: data.scale().span(),
        seed: params.seed,
        min_ratings: params.min_ratings,
        tau: params.tau,
    };
    let mut f = fs::File::create(sidecar_path(csv_path))?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

pub fn read_cache(csv_path: &Path) -> Result<(RatingDataset, DatasetSidecar)> {
    let sidecar: DatasetSidecar = serde_json::from_reader(fs::File::open(sidecar_path(csv_path))?)?;
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let mut ratings = Vec::new();
    for row in rdr.deserialize() {
        let (user, item, value): (u32, u32, f64) = row?;
        ratings.push(Rating { user, item, value });
    }
    let scale = RatingScale::new(sidecar.r_min, sidecar.r_max)?;
    let data = RatingDataset::new(sidecar.n_users, sidecar.n_items, scale, ratings)?;
    Ok((data, sidecar))
}

//! Random-hyperplane (sign random projection) LSH for cosine similarity, and
//! the thresholded nearest-neighbour check applied inside a bucket.
//!
//! Two vectors at angle `theta` land in the same bucket of one table with
//! probability `(1 - theta / pi)^k` for `k` hyperplanes per table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bucket, BucketId, FeatureVector, StoredEntry};

/// Hash values are packed into an integer bucket key.
pub const MAX_HYPERPLANES_PER_TABLE: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LshError {
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("num_tables must be positive")]
    ZeroTables,
    #[error("hyperplanes_per_table must be in 1..={MAX_HYPERPLANES_PER_TABLE}, got {0}")]
    BadHyperplaneCount(u32),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("similarity threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("zero-norm vector")]
    ZeroNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshConfig {
    pub dimension: usize,
    pub num_tables: u32,
    pub hyperplanes_per_table: u32,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        LshConfig {
            dimension: 32,
            num_tables: 4,
            hyperplanes_per_table: 16,
            seed: 0x5eed,
        }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<(), LshError> {
        if self.dimension == 0 {
            return Err(LshError::ZeroDimension);
        }
        if self.num_tables == 0 {
            return Err(LshError::ZeroTables);
        }
        if self.hyperplanes_per_table == 0 || self.hyperplanes_per_table > MAX_HYPERPLANES_PER_TABLE {
            return Err(LshError::BadHyperplaneCount(self.hyperplanes_per_table));
        }
        Ok(())
    }
}

/// Minimum cosine similarity for a stored result to answer a query.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SimilarityThreshold(f64);

impl SimilarityThreshold {
    pub fn new(value: f64) -> Result<Self, LshError> {
        if value > 0.0 && value <= 1.0 {
            Ok(SimilarityThreshold(value))
        } else {
            Err(LshError::BadThreshold(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SimilarityThreshold {
    type Error = LshError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        SimilarityThreshold::new(v)
    }
}

impl From<SimilarityThreshold> for f64 {
    fn from(t: SimilarityThreshold) -> f64 {
        t.0
    }
}

/// Immutable set of hash tables; each table is `k` Gaussian hyperplanes.
#[derive(Clone, Debug)]
pub struct LshIndex {
    cfg: LshConfig,
    // tables[t][h] is one hyperplane normal of length `dimension`
    tables: Vec<Vec<Vec<f64>>>,
}

impl LshIndex {
    pub fn build(cfg: LshConfig) -> Result<Self, LshError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tables = (0..cfg.num_tables)
            .map(|_| {
                (0..cfg.hyperplanes_per_table)
                    .map(|_| {
                        (0..cfg.dimension)
                            .map(|_| StandardNormal.sample(&mut rng))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(LshIndex { cfg, tables })
    }

    pub fn config(&self) -> &LshConfig {
        &self.cfg
    }

    /// One bucket id per table, in table order. Bit `i` of a hash value is set
    /// when the projection on hyperplane `i` is strictly positive.
    pub fn hash_vector(&self, v: &FeatureVector) -> Result<Vec<BucketId>, LshError> {
        if v.dimension() != self.cfg.dimension {
            return Err(LshError::DimensionMismatch {
                expected: self.cfg.dimension,
                actual: v.dimension(),
            });
        }
        let x = v.components();
        Ok(self
            .tables
            .iter()
            .enumerate()
            .map(|(t, planes)| {
                let hash = planes.iter().enumerate().fold(0u64, |acc, (i, plane)| {
                    let proj: f64 = plane.iter().zip(x).map(|(p, c)| p * c).sum();
                    if proj > 0.0 {
                        acc | (1 << i)
                    } else {
                        acc
                    }
                });
                BucketId::new(t as u32, hash)
            })
            .collect())
    }
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64, LshError> {
    if a.dimension() != b.dimension() {
        return Err(LshError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Err(LshError::ZeroNorm);
    }
    Ok((a.dot(b) / denom).clamp(-1.0, 1.0))
}

/// Best candidate with similarity at or above `t`. Ties go to the earliest
/// `stored_at`, then to iteration order. Entries that are not vectors or do
/// not share `v`'s dimension are skipped.
pub fn nearest_similar_in<'a, I>(
    candidates: I,
    v: &FeatureVector,
    t: SimilarityThreshold,
) -> Option<(&'a StoredEntry, f64)>
where
    I: IntoIterator<Item = &'a StoredEntry>,
{
    let mut best: Option<(&StoredEntry, f64)> = None;
    for entry in candidates {
        let crate::model::EntryKey::Vector(stored) = &entry.key else {
            continue;
        };
        let Ok(sim) = cosine_similarity(stored, v) else {
            continue;
        };
        if sim < t.value() {
            continue;
        }
        best = match best {
            None => Some((entry, sim)),
            Some((b, bs)) if sim > bs || (sim == bs && entry.stored_at < b.stored_at) => {
                Some((entry, sim))
            }
            keep => keep,
        };
    }
    best
}

pub fn nearest_similar<'a>(
    bucket: &'a Bucket,
    v: &FeatureVector,
    t: SimilarityThreshold,
) -> Option<(&'a StoredEntry, f64)> {
    nearest_similar_in(&bucket.entries, v, t)
}

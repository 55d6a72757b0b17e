//! Domain types shared by every layer of the simulator: simulated time,
//! application tags, feature vectors, queries, buckets and their statistics.
//!
//! All of these are plain values. Mutation of buckets happens only through
//! [`crate::store::ReuseStore`].

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of an EDR inside a topology.
pub type NodeId = usize;

/// Identifier of a query, unique within one run.
pub type QueryId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("feature vector has zero dimension")]
    EmptyVector,
    #[error("feature vector contains a non-finite component at index {0}")]
    NonFinite(usize),
    #[error("feature vector has zero norm")]
    ZeroNorm,
    #[error("dimension mismatch for app `{app}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        app: String,
        expected: usize,
        actual: usize,
    },
    #[error("query size must be positive")]
    NonPositiveSize,
    #[error("invalid simulated time {0}")]
    InvalidTime(f64),
    #[error("unknown dataset profile `{0}`")]
    UnknownProfile(String),
}

/// Milliseconds since simulation start. Never negative, never NaN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn from_ms(ms: f64) -> Result<Self, ModelError> {
        if ms.is_finite() && ms >= 0.0 {
            Ok(SimTime(ms))
        } else {
            Err(ModelError::InvalidTime(ms))
        }
    }

    pub fn as_ms(self) -> f64 {
        self.0
    }

    /// Time `delay_ms` later. Panics on a negative or non-finite delay, which
    /// would break event causality.
    pub fn after(self, delay_ms: f64) -> SimTime {
        assert!(
            delay_ms.is_finite() && delay_ms >= 0.0,
            "delay must be finite and non-negative, got {delay_ms}"
        );
        SimTime(self.0 + delay_ms)
    }

    pub fn since(self, earlier: SimTime) -> f64 {
        self.0 - earlier.0
    }
}

impl TryFrom<f64> for SimTime {
    type Error = ModelError;
    fn try_from(ms: f64) -> Result<Self, Self::Error> {
        SimTime::from_ms(ms)
    }
}

impl From<SimTime> for f64 {
    fn from(t: SimTime) -> f64 {
        t.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Application class of a query. Reuse is only legal between equal tags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppTag(String);

impl AppTag {
    pub fn new(id: impl Into<String>) -> Self {
        AppTag(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A non-empty, finite, non-zero vector of reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(components: Vec<f64>) -> Result<Self, ModelError> {
        if components.is_empty() {
            return Err(ModelError::EmptyVector);
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        let v = FeatureVector(components);
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ModelError::ZeroNorm);
        }
        Ok(v)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Bitwise equality of all components.
    pub fn bit_eq(&self, other: &FeatureVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Vec<f64> {
        v.0
    }
}

/// What a query carries: a real vector, or (profile mode) a pre-sampled
/// bucket key plus the Bernoulli reuse coin for that bucket's rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Vector(FeatureVector),
    Profile { bucket_key: u64, reuse_coin: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub app: AppTag,
    pub payload: Payload,
    pub size_bytes: u64,
    pub arrival_time: SimTime,
    pub ingress_edr: NodeId,
}

/// Registered feature dimension per application.
#[derive(Clone, Debug, Default)]
pub struct AppRegistry {
    dims: HashMap<AppTag, usize>,
}

impl AppRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, app: AppTag, dimension: usize) {
        self.dims.insert(app, dimension);
    }

    pub fn dimension(&self, app: &AppTag) -> Option<usize> {
        self.dims.get(app).copied()
    }
}

/// Check a query against the type invariants. Returns it unchanged on success.
pub fn validate_query(q: Query, registry: &AppRegistry) -> Result<Query, ModelError> {
    if q.size_bytes == 0 {
        return Err(ModelError::NonPositiveSize);
    }
    if let Payload::Vector(v) = &q.payload {
        // FeatureVector construction already rejects zero norms, but payloads
        // can arrive through deserialization paths too.
        if v.norm() == 0.0 {
            return Err(ModelError::ZeroNorm);
        }
        if let Some(expected) = registry.dimension(&q.app) {
            if expected != v.dimension() {
                return Err(ModelError::DimensionMismatch {
                    app: q.app.to_string(),
                    expected,
                    actual: v.dimension(),
                });
            }
        }
    }
    Ok(q)
}

/// An LSH collision class: one hash table and the sign pattern within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketId {
    pub table_index: u32,
    pub hash_value: u64,
}

impl BucketId {
    pub fn new(table_index: u32, hash_value: u64) -> Self {
        BucketId {
            table_index,
            hash_value,
        }
    }

    /// Routing key used in profile mode, where the workload samples buckets directly.
    pub fn profile(bucket_key: u64) -> Self {
        BucketId::new(0, bucket_key)
    }

    /// Static owner before any orchestration has happened.
    pub fn default_owner(&self, num_nodes: usize) -> NodeId {
        (self.hash_value % num_nodes as u64) as NodeId
    }
}

impl fmt::Display for BucketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.table_index, self.hash_value)
    }
}

/// The stored side of a query: its vector (or bucket key in profile mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EntryKey {
    Vector(FeatureVector),
    Profile(u64),
}

impl EntryKey {
    pub fn same_content(&self, other: &EntryKey) -> bool {
        match (self, other) {
            (EntryKey::Vector(a), EntryKey::Vector(b)) => a.bit_eq(b),
            (EntryKey::Profile(a), EntryKey::Profile(b)) => a == b,
            _ => false,
        }
    }
}

/// Opaque handle to a computed result; the id of the query that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResultHandle(pub QueryId);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub key: EntryKey,
    pub app: AppTag,
    pub result: ResultHandle,
    pub query_size_bytes: u64,
    pub result_size_bytes: u64,
    pub stored_at: SimTime,
    /// Per-table bucket ids of the stored vector (vector mode only).
    pub signature: Vec<BucketId>,
}

impl StoredEntry {
    pub fn total_bytes(&self) -> u64 {
        self.query_size_bytes + self.result_size_bytes
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub hits: u64,
    pub misses: u64,
    pub cpu_time_since_update: f64,
    pub max_queue_delay: f64,
    pub bytes_stored: u64,
}

impl BucketStats {
    pub fn reuse_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }

    /// Clears the per-window counters. `bytes_stored` tracks content and is kept.
    pub fn reset_window(&mut self) {
        self.hits = 0;
        self.misses = 0;
        self.cpu_time_since_update = 0.0;
        self.max_queue_delay = 0.0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub id: BucketId,
    pub app: AppTag,
    pub entries: Vec<StoredEntry>,
    pub reuse_rating: f64,
    pub stats: BucketStats,
}

impl Bucket {
    pub fn new(id: BucketId, app: AppTag, reuse_rating: f64) -> Self {
        Bucket {
            id,
            app,
            entries: Vec::new(),
            reuse_rating: reuse_rating.clamp(0.0, 1.0),
            stats: BucketStats::default(),
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(StoredEntry::total_bytes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector_query(dim: usize, fill: f64) -> Query {
        Query {
            id: 1,
            app: AppTag::new("traffic"),
            payload: Payload::Vector(FeatureVector(vec![fill; dim])),
            size_bytes: 40_000,
            arrival_time: SimTime::ZERO,
            ingress_edr: 0,
        }
    }

    #[test]
    fn valid_query_passes_unchanged() {
        let mut reg = AppRegistry::new();
        reg.register(AppTag::new("traffic"), 128);
        let q = vector_query(128, 0.5);
        assert_eq!(validate_query(q.clone(), &reg).unwrap(), q);
    }

    #[test]
    fn zero_vector_rejected() {
        assert_eq!(FeatureVector::new(vec![0.0; 4]), Err(ModelError::ZeroNorm));
        let reg = AppRegistry::new();
        let err = validate_query(vector_query(4, 0.0), &reg).unwrap_err();
        assert_eq!(err, ModelError::ZeroNorm);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut reg = AppRegistry::new();
        reg.register(AppTag::new("traffic"), 128);
        let err = validate_query(vector_query(64, 1.0), &reg).unwrap_err();
        assert!(matches!(
            err,
            ModelError::DimensionMismatch {
                expected: 128,
                actual: 64,
                ..
            }
        ));
    }

    #[test]
    fn zero_size_rejected() {
        let mut q = vector_query(4, 1.0);
        q.size_bytes = 0;
        assert_eq!(
            validate_query(q, &AppRegistry::new()),
            Err(ModelError::NonPositiveSize)
        );
    }

    #[test]
    fn sim_time_rejects_negative_and_nan() {
        assert!(SimTime::from_ms(-1.0).is_err());
        assert!(SimTime::from_ms(f64::NAN).is_err());
        assert!(SimTime::from_ms(0.0).is_ok());
    }

    #[test]
    fn reuse_rate_of_empty_stats_is_zero() {
        assert_eq!(BucketStats::default().reuse_rate(), 0.0);
    }
}

//! Per-EDR bucket storage and the HIT/MISS reuse decision.
//!
//! A store owns a set of buckets. Buckets leave a store only through
//! [`ReuseStore::export_bucket`] and enter through [`ReuseStore::import_bucket`];
//! entries leave only through logged evictions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use log::debug;
use thiserror::Error;

use crate::lsh::{nearest_similar_in, SimilarityThreshold};
use crate::model::{
    AppTag, Bucket, BucketId, EntryKey, NodeId, Payload, Query, ResultHandle, SimTime, StoredEntry,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("bucket {bucket} is not owned by node {node}")]
    NotOwned { bucket: BucketId, node: NodeId },
    #[error("bucket {bucket} is already owned by node {node}")]
    DuplicateOwnership { bucket: BucketId, node: NodeId },
    #[error("transfer of bucket {bucket} is addressed to node {expected}, not {actual}")]
    WrongDestination {
        bucket: BucketId,
        expected: NodeId,
        actual: NodeId,
    },
    #[error("bucket {0} cannot be transferred to its own node")]
    SelfTransfer(BucketId),
    #[error("entry of {size} bytes exceeds the storage budget of {budget} bytes")]
    Capacity { size: u64, budget: u64 },
    #[error("entry app `{entry}` does not match bucket app `{bucket}`")]
    AppMismatch { bucket: AppTag, entry: AppTag },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReuseKind {
    Hit { entry: StoredEntry, similarity: f64 },
    Miss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReuseDecision {
    pub kind: ReuseKind,
    pub lookup_cost_ms: f64,
}

impl ReuseDecision {
    pub fn is_hit(&self) -> bool {
        matches!(self.kind, ReuseKind::Hit { .. })
    }

    pub fn miss(lookup_cost_ms: f64) -> Self {
        ReuseDecision {
            kind: ReuseKind::Miss,
            lookup_cost_ms,
        }
    }
}

/// A bucket with everything it carries, on its way between two nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketTransfer {
    pub bucket: Bucket,
    pub total_bytes: u64,
    pub origin: NodeId,
    pub destination: NodeId,
}

/// Parameters of a lookup that come from the workload rather than the query.
#[derive(Clone, Copy, Debug)]
pub struct LookupParams {
    pub threshold: SimilarityThreshold,
    pub lsh_search_ms: f64,
    pub reuse_enabled: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InsertOutcome {
    /// False when an entry with identical content was already stored.
    pub stored: bool,
    /// Entries dropped to get back under the byte budget, oldest first.
    pub evicted: Vec<(BucketId, ResultHandle)>,
}

#[derive(Clone, Debug)]
pub struct ReuseStore {
    node: NodeId,
    buckets: BTreeMap<BucketId, Bucket>,
    // secondary-table bucket id -> routing buckets holding an entry with that signature
    aux: HashMap<BucketId, BTreeSet<BucketId>>,
    budget_bytes: Option<u64>,
    bytes: u64,
    evictions: u64,
}

impl ReuseStore {
    pub fn new(node: NodeId, budget_bytes: Option<u64>) -> Self {
        ReuseStore {
            node,
            buckets: BTreeMap::new(),
            aux: HashMap::new(),
            budget_bytes,
            bytes: 0,
            evictions: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn owns(&self, id: &BucketId) -> bool {
        self.buckets.contains_key(id)
    }

    pub fn bucket(&self, id: &BucketId) -> Option<&Bucket> {
        self.buckets.get(id)
    }

    pub fn bucket_mut(&mut self, id: &BucketId) -> Option<&mut Bucket> {
        self.buckets.get_mut(id)
    }

    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.values()
    }

    pub fn buckets_mut(&mut self) -> impl Iterator<Item = &mut Bucket> {
        self.buckets.values_mut()
    }

    pub fn bytes_stored(&self) -> u64 {
        self.bytes
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    /// Takes ownership of a fresh, empty bucket.
    pub fn create_bucket(&mut self, id: BucketId, app: AppTag, reuse_rating: f64) -> Result<(), StoreError> {
        if self.owns(&id) {
            return Err(StoreError::DuplicateOwnership {
                bucket: id,
                node: self.node,
            });
        }
        self.buckets.insert(id, Bucket::new(id, app, reuse_rating));
        Ok(())
    }

    /// HIT/MISS decision for a query routed to bucket `id`. Counts the
    /// outcome in the bucket's statistics.
    ///
    /// `signature` holds the query's per-table bucket ids (vector mode); the
    /// entries reachable through tables other than the routing one widen the
    /// candidate set.
    pub fn lookup(
        &mut self,
        q: &Query,
        id: BucketId,
        signature: &[BucketId],
        params: &LookupParams,
    ) -> Result<ReuseDecision, StoreError> {
        let bucket = self.buckets.get(&id).ok_or(StoreError::NotOwned {
            bucket: id,
            node: self.node,
        })?;

        let kind = if !params.reuse_enabled || bucket.app != q.app {
            ReuseKind::Miss
        } else {
            match &q.payload {
                Payload::Profile { reuse_coin, .. } => match bucket.entries.first() {
                    Some(entry) if *reuse_coin => ReuseKind::Hit {
                        entry: entry.clone(),
                        similarity: 1.0,
                    },
                    _ => ReuseKind::Miss,
                },
                Payload::Vector(v) => {
                    let widened = self.widened_candidates(id, signature);
                    let candidates = bucket
                        .entries
                        .iter()
                        .chain(widened.iter().flat_map(|(other, table)| {
                            self.buckets[other].entries.iter().filter(move |e| {
                                e.signature.get(*table) == signature.get(*table)
                            })
                        }))
                        .filter(|e| e.app == q.app);
                    match nearest_similar_in(candidates, v, params.threshold) {
                        Some((entry, similarity)) => ReuseKind::Hit {
                            entry: entry.clone(),
                            similarity,
                        },
                        None => ReuseKind::Miss,
                    }
                }
            }
        };

        let stats = &mut self.buckets.get_mut(&id).expect("checked above").stats;
        match kind {
            ReuseKind::Hit { .. } => stats.hits += 1,
            ReuseKind::Miss => stats.misses += 1,
        }
        Ok(ReuseDecision {
            kind,
            lookup_cost_ms: params.lsh_search_ms,
        })
    }

    fn widened_candidates(&self, routing: BucketId, signature: &[BucketId]) -> Vec<(BucketId, usize)> {
        let mut out = Vec::new();
        for (table, sig) in signature.iter().enumerate().skip(1) {
            if let Some(set) = self.aux.get(sig) {
                out.extend(set.iter().filter(|b| **b != routing).map(|b| (*b, table)));
            }
        }
        out
    }

    /// Stores a processed query's result in bucket `id`. Entries with content
    /// identical to an existing one are not duplicated.
    pub fn insert(
        &mut self,
        q: &Query,
        id: BucketId,
        signature: &[BucketId],
        result_size_bytes: u64,
        now: SimTime,
    ) -> Result<InsertOutcome, StoreError> {
        let entry = make_entry(q, signature, result_size_bytes, now);
        if let Some(budget) = self.budget_bytes {
            if entry.total_bytes() > budget {
                return Err(StoreError::Capacity {
                    size: entry.total_bytes(),
                    budget,
                });
            }
        }
        let bucket = self.buckets.get_mut(&id).ok_or(StoreError::NotOwned {
            bucket: id,
            node: self.node,
        })?;
        if bucket.app != entry.app {
            return Err(StoreError::AppMismatch {
                bucket: bucket.app.clone(),
                entry: entry.app,
            });
        }
        if bucket.entries.iter().any(|e| e.key.same_content(&entry.key)) {
            return Ok(InsertOutcome::default());
        }
        let size = entry.total_bytes();
        for sig in entry.signature.iter().skip(1) {
            self.aux.entry(*sig).or_default().insert(id);
        }
        bucket.stats.bytes_stored += size;
        bucket.entries.push(entry);
        self.bytes += size;
        let evicted = self.enforce_budget();
        Ok(InsertOutcome { stored: true, evicted })
    }

    fn enforce_budget(&mut self) -> Vec<(BucketId, ResultHandle)> {
        let Some(budget) = self.budget_bytes else {
            return Vec::new();
        };
        let mut evicted = Vec::new();
        while self.bytes > budget {
            // oldest stored_at across the whole store
            let victim = self
                .buckets
                .iter()
                .flat_map(|(id, b)| b.entries.iter().enumerate().map(move |(i, e)| (e.stored_at, *id, i)))
                .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let Some((_, id, i)) = victim else { break };
            let bucket = self.buckets.get_mut(&id).expect("victim bucket exists");
            let entry = bucket.entries.remove(i);
            bucket.stats.bytes_stored -= entry.total_bytes();
            self.bytes -= entry.total_bytes();
            self.evictions += 1;
            debug!(
                "node {} evicted result {} from bucket {} (stored at {})",
                self.node, entry.result.0, id, entry.stored_at
            );
            evicted.push((id, entry.result));
            self.rebuild_aux_for(id);
        }
        evicted
    }

    fn rebuild_aux_for(&mut self, id: BucketId) {
        for set in self.aux.values_mut() {
            set.remove(&id);
        }
        self.aux.retain(|_, s| !s.is_empty());
        if let Some(b) = self.buckets.get(&id) {
            for e in &b.entries {
                for sig in e.signature.iter().skip(1) {
                    self.aux.entry(*sig).or_default().insert(id);
                }
            }
        }
    }

    /// Removes a bucket for shipment to `destination`.
    pub fn export_bucket(&mut self, id: BucketId, destination: NodeId) -> Result<BucketTransfer, StoreError> {
        if destination == self.node {
            return Err(StoreError::SelfTransfer(id));
        }
        let bucket = self.buckets.remove(&id).ok_or(StoreError::NotOwned {
            bucket: id,
            node: self.node,
        })?;
        let total_bytes = bucket.total_bytes();
        self.bytes -= total_bytes;
        self.rebuild_aux_for(id);
        Ok(BucketTransfer {
            bucket,
            total_bytes,
            origin: self.node,
            destination,
        })
    }

    /// Accepts a shipped bucket. Statistics carry over unchanged.
    pub fn import_bucket(&mut self, xfer: BucketTransfer) -> Result<Vec<(BucketId, ResultHandle)>, StoreError> {
        let id = xfer.bucket.id;
        if xfer.destination != self.node {
            return Err(StoreError::WrongDestination {
                bucket: id,
                expected: xfer.destination,
                actual: self.node,
            });
        }
        if self.owns(&id) {
            return Err(StoreError::DuplicateOwnership {
                bucket: id,
                node: self.node,
            });
        }
        self.bytes += xfer.bucket.total_bytes();
        self.buckets.insert(id, xfer.bucket);
        self.rebuild_aux_for(id);
        Ok(self.enforce_budget())
    }

    /// One line per entry: `bucket_id,app_tag,stored_at_ms,result_size_bytes`.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (id, b) in &self.buckets {
            for e in &b.entries {
                writeln!(w, "{},{},{},{}", id, e.app, e.stored_at.as_ms(), e.result_size_bytes)?;
            }
        }
        Ok(())
    }
}

pub fn make_entry(q: &Query, signature: &[BucketId], result_size_bytes: u64, now: SimTime) -> StoredEntry {
    let key = match &q.payload {
        Payload::Vector(v) => EntryKey::Vector(v.clone()),
        Payload::Profile { bucket_key, .. } => EntryKey::Profile(*bucket_key),
    };
    StoredEntry {
        key,
        app: q.app.clone(),
        result: ResultHandle(q.id),
        query_size_bytes: q.size_bytes,
        result_size_bytes,
        stored_at: now,
        signature: signature.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsh::{LshConfig, LshIndex};
    use crate::model::FeatureVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const APP: &str = "traffic";

    fn params(t: f64) -> LookupParams {
        LookupParams {
            threshold: SimilarityThreshold::new(t).unwrap(),
            lsh_search_ms: 0.6,
            reuse_enabled: true,
        }
    }

    fn vq(id: u64, c: &[f64]) -> Query {
        Query {
            id,
            app: AppTag::new(APP),
            payload: Payload::Vector(FeatureVector::new(c.to_vec()).unwrap()),
            size_bytes: 1000,
            arrival_time: SimTime::ZERO,
            ingress_edr: 0,
        }
    }

    fn pq(id: u64, key: u64, coin: bool) -> Query {
        Query {
            id,
            app: AppTag::new(APP),
            payload: Payload::Profile {
                bucket_key: key,
                reuse_coin: coin,
            },
            size_bytes: 2_000_000,
            arrival_time: SimTime::ZERO,
            ingress_edr: 0,
        }
    }

    fn t(ms: f64) -> SimTime {
        SimTime::from_ms(ms).unwrap()
    }

    fn store_with_bucket(id: BucketId) -> ReuseStore {
        let mut s = ReuseStore::new(0, None);
        s.create_bucket(id, AppTag::new(APP), 0.7).unwrap();
        s
    }

    #[test]
    fn identical_query_hits_with_similarity_one() {
        let id = BucketId::new(0, 5);
        let mut s = store_with_bucket(id);
        let q = vq(1, &[1.0, 2.0, 3.0]);
        assert!(!s.lookup(&q, id, &[id], &params(0.9)).unwrap().is_hit());
        s.insert(&q, id, &[id], 10, t(1.0)).unwrap();
        let d = s.lookup(&vq(2, &[1.0, 2.0, 3.0]), id, &[id], &params(0.9)).unwrap();
        match d.kind {
            ReuseKind::Hit { similarity, entry } => {
                assert!((similarity - 1.0).abs() < 1e-12);
                assert_eq!(entry.result, ResultHandle(1));
            }
            ReuseKind::Miss => panic!("expected hit"),
        }
        assert_eq!(d.lookup_cost_ms, 0.6);
    }

    #[test]
    fn app_mismatch_is_a_miss() {
        let id = BucketId::new(0, 5);
        let mut s = store_with_bucket(id);
        s.insert(&vq(1, &[1.0, 0.0]), id, &[id], 10, t(0.0)).unwrap();
        let mut q = vq(2, &[1.0, 0.0]);
        q.app = AppTag::new("wakeword");
        assert!(!s.lookup(&q, id, &[id], &params(0.5)).unwrap().is_hit());
    }

    #[test]
    fn lookup_on_foreign_bucket_is_not_owned() {
        let mut s = ReuseStore::new(3, None);
        let id = BucketId::new(0, 1);
        assert_eq!(
            s.lookup(&vq(1, &[1.0]), id, &[id], &params(0.5)).unwrap_err(),
            StoreError::NotOwned { bucket: id, node: 3 }
        );
    }

    #[test]
    fn first_query_is_always_a_miss() {
        let id = BucketId::profile(0);
        let mut s = store_with_bucket(id);
        assert!(!s.lookup(&pq(1, 0, true), id, &[], &params(0.6)).unwrap().is_hit());
    }

    #[test]
    fn profile_mode_hit_fraction_tracks_rating() {
        let id = BucketId::profile(0);
        let mut s = store_with_bucket(id);
        s.insert(&pq(0, 0, false), id, &[], 10, t(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut hits = 0;
        for i in 1..=n {
            let coin = rng.random::<f64>() < 0.70;
            if s.lookup(&pq(i, 0, coin), id, &[], &params(0.6)).unwrap().is_hit() {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.70).abs() <= 0.02, "hit fraction {frac}");
    }

    #[test]
    fn reuse_disabled_never_hits() {
        let id = BucketId::profile(0);
        let mut s = store_with_bucket(id);
        s.insert(&pq(0, 0, false), id, &[], 10, t(0.0)).unwrap();
        let mut p = params(0.6);
        p.reuse_enabled = false;
        assert!(!s.lookup(&pq(1, 0, true), id, &[], &p).unwrap().is_hit());
    }

    #[test]
    fn equal_vectors_deduplicate() {
        let id = BucketId::new(0, 5);
        let mut s = store_with_bucket(id);
        let a = s.insert(&vq(1, &[1.0, 1.0]), id, &[id], 10, t(0.0)).unwrap();
        let b = s.insert(&vq(2, &[1.0, 1.0]), id, &[id], 10, t(1.0)).unwrap();
        assert!(a.stored);
        assert!(!b.stored);
        let entries = &s.bucket(&id).unwrap().entries;
        let same = entries
            .iter()
            .filter(|e| e.key.same_content(&EntryKey::Vector(FeatureVector::new(vec![1.0, 1.0]).unwrap())))
            .count();
        assert_eq!(same, 1);
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn budget_evicts_oldest() {
        let id = BucketId::new(0, 5);
        let mut s = ReuseStore::new(0, Some(2500));
        s.create_bucket(id, AppTag::new(APP), 0.5).unwrap();
        // each entry: 1000 query bytes + 100 result bytes
        s.insert(&vq(1, &[1.0, 0.0]), id, &[id], 100, t(1.0)).unwrap();
        s.insert(&vq(2, &[0.0, 1.0]), id, &[id], 100, t(2.0)).unwrap();
        let out = s.insert(&vq(3, &[1.0, 1.0]), id, &[id], 100, t(3.0)).unwrap();
        assert_eq!(out.evicted, vec![(id, ResultHandle(1))]);
        assert!(s.bytes_stored() <= 2500);
        assert_eq!(s.evictions(), 1);
    }

    #[test]
    fn entry_larger_than_budget_is_capacity_error() {
        let id = BucketId::new(0, 5);
        let mut s = ReuseStore::new(0, Some(500));
        s.create_bucket(id, AppTag::new(APP), 0.5).unwrap();
        assert!(matches!(
            s.insert(&vq(1, &[1.0]), id, &[id], 100, t(0.0)),
            Err(StoreError::Capacity { .. })
        ));
    }

    #[test]
    fn move_preserves_lookup_behaviour() {
        let id = BucketId::new(0, 9);
        let mut origin = store_with_bucket(id);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..20 {
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            origin.insert(&vq(i, &c), id, &[id], 64, t(i as f64)).unwrap();
        }
        let probes: Vec<Query> = (100..140)
            .map(|i| vq(i, &(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let mut before = origin.clone();
        let expected: Vec<bool> = probes
            .iter()
            .map(|q| before.lookup(q, id, &[id], &params(0.8)).unwrap().is_hit())
            .collect();

        let xfer = origin.export_bucket(id, 1).unwrap();
        assert!(!origin.owns(&id));
        // independent recomputation of the shipped byte count
        let mut sum = 0;
        for e in &xfer.bucket.entries {
            sum += e.query_size_bytes + e.result_size_bytes;
        }
        assert_eq!(xfer.total_bytes, sum);
        assert_eq!(sum, 20 * (1000 + 64));

        let mut dest = ReuseStore::new(1, None);
        dest.import_bucket(xfer).unwrap();
        let got: Vec<bool> = probes
            .iter()
            .map(|q| dest.lookup(q, id, &[id], &params(0.8)).unwrap().is_hit())
            .collect();
        assert_eq!(got, expected);
        assert_eq!(origin.bytes_stored(), 0);
        assert_eq!(dest.bytes_stored(), 20 * 1064);
    }

    #[test]
    fn export_unknown_bucket_errors() {
        let mut s = ReuseStore::new(0, None);
        let id = BucketId::new(0, 1);
        assert_eq!(
            s.export_bucket(id, 1).unwrap_err(),
            StoreError::NotOwned { bucket: id, node: 0 }
        );
    }

    #[test]
    fn import_errors() {
        let id = BucketId::new(0, 1);
        let mut a = store_with_bucket(id);
        let xfer = a.export_bucket(id, 1).unwrap();
        let mut wrong = ReuseStore::new(2, None);
        assert!(matches!(
            wrong.import_bucket(xfer.clone()),
            Err(StoreError::WrongDestination { .. })
        ));
        let mut dup = ReuseStore::new(1, None);
        dup.create_bucket(id, AppTag::new(APP), 0.1).unwrap();
        assert!(matches!(
            dup.import_bucket(xfer),
            Err(StoreError::DuplicateOwnership { .. })
        ));
    }

    #[test]
    fn import_keeps_stats() {
        let id = BucketId::profile(3);
        let mut a = store_with_bucket(id);
        a.insert(&pq(0, 3, false), id, &[], 10, t(0.0)).unwrap();
        a.lookup(&pq(1, 3, true), id, &[], &params(0.6)).unwrap();
        let stats = a.bucket(&id).unwrap().stats.clone();
        let xfer = a.export_bucket(id, 4).unwrap();
        let mut b = ReuseStore::new(4, None);
        b.import_bucket(xfer).unwrap();
        assert_eq!(b.bucket(&id).unwrap().stats, stats);
        assert_eq!(stats.hits, 1);
    }

    #[test]
    fn secondary_tables_widen_candidates() {
        let idx = LshIndex::build(LshConfig {
            dimension: 8,
            num_tables: 4,
            hyperplanes_per_table: 8,
            seed: 1,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // find a near pair whose table-0 ids differ but some other table agrees
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect();
            let (qa, qb) = (vq(1, &a), vq(2, &b));
            let Payload::Vector(va) = &qa.payload else { unreachable!() };
            let Payload::Vector(vb) = &qb.payload else { unreachable!() };
            let sa = idx.hash_vector(va).unwrap();
            let sb = idx.hash_vector(vb).unwrap();
            if sa[0] == sb[0] || !sa.iter().zip(&sb).skip(1).any(|(x, y)| x == y) {
                continue;
            }
            let mut s = ReuseStore::new(0, None);
            s.create_bucket(sa[0], AppTag::new(APP), 0.5).unwrap();
            s.create_bucket(sb[0], AppTag::new(APP), 0.5).unwrap();
            s.insert(&qa, sa[0], &sa, 1, t(0.0)).unwrap();
            let d = s.lookup(&qb, sb[0], &sb, &params(0.95)).unwrap();
            assert!(d.is_hit());
            return;
        }
        panic!("no suitable pair found");
    }

    #[test]
    fn dump_format() {
        let id = BucketId::profile(7);
        let mut s = store_with_bucket(id);
        s.insert(&pq(3, 7, false), id, &[], 512, t(12.5)).unwrap();
        let mut out = Vec::new();
        s.dump(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0:7,traffic,12.5,512\n");
    }
}

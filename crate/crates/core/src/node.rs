//! One EDR: a FIFO queue in front of `cores` identical non-pipelined cores,
//! a forwarding table, a reuse store, and the windowed metrics the
//! orchestration strategies read.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::model::{BucketId, NodeId, QueryId, SimTime};
use crate::profile::DatasetProfile;
use crate::store::{ReuseDecision, ReuseStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum WorkKind {
    LshHash,
    Process,
    ReuseFetch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkItem {
    pub query: QueryId,
    pub bucket: BucketId,
    pub kind: WorkKind,
    pub service_ms: f64,
    pub enqueued_at: SimTime,
}

/// A work item that just took a core.
#[derive(Clone, Debug, PartialEq)]
pub struct Started {
    pub core: usize,
    pub query: QueryId,
    pub bucket: BucketId,
    pub kind: WorkKind,
    pub wait_ms: f64,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeMetricsWindow {
    pub node: NodeId,
    pub window_ms: f64,
    pub busy_ms: f64,
    pub cpu_utilisation: f64,
    pub mean_req_proc_time: f64,
    pub max_queue_delay: f64,
    pub per_bucket_cpu_ms: BTreeMap<BucketId, f64>,
    pub per_bucket_reuse_rate: BTreeMap<BucketId, f64>,
}

#[derive(Clone, Debug)]
struct Running {
    item: WorkItem,
    start: SimTime,
}

#[derive(Clone, Debug)]
struct Window {
    start: SimTime,
    busy_closed_ms: f64,
    per_bucket_cpu: BTreeMap<BucketId, f64>,
    max_queue_delay: f64,
}

impl Window {
    fn new(start: SimTime) -> Self {
        Window {
            start,
            busy_closed_ms: 0.0,
            per_bucket_cpu: BTreeMap::new(),
            max_queue_delay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EdrNode {
    pub id: NodeId,
    cores: usize,
    num_nodes: usize,
    queue: VecDeque<WorkItem>,
    running: Vec<Option<Running>>,
    forwarding: BTreeMap<BucketId, NodeId>,
    pub store: ReuseStore,
    window: Window,
    proc_sum_ms: f64,
    proc_count: u64,
    bin_ms: f64,
    busy_bins: Vec<f64>,
    default_routes: u64,
}

impl EdrNode {
    pub fn new(id: NodeId, cores: usize, num_nodes: usize, store: ReuseStore, bin_ms: f64, num_bins: usize) -> Self {
        assert!(cores > 0, "an EDR needs at least one core");
        EdrNode {
            id,
            cores,
            num_nodes,
            queue: VecDeque::new(),
            running: vec![None; cores],
            forwarding: BTreeMap::new(),
            store,
            window: Window::new(SimTime::ZERO),
            proc_sum_ms: 0.0,
            proc_count: 0,
            bin_ms,
            busy_bins: vec![0.0; num_bins],
            default_routes: 0,
        }
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn in_service(&self) -> usize {
        self.running.iter().filter(|r| r.is_some()).count()
    }

    /// Owner of `bucket` according to this node's forwarding table. A missing
    /// entry falls back to the static default owner and is counted.
    pub fn route(&mut self, bucket: BucketId) -> NodeId {
        match self.forwarding.get(&bucket) {
            Some(n) => *n,
            None => {
                self.default_routes += 1;
                bucket.default_owner(self.num_nodes)
            }
        }
    }

    pub fn set_forwarding(&mut self, bucket: BucketId, owner: NodeId) {
        self.forwarding.insert(bucket, owner);
    }

    pub fn forwarding_entry(&self, bucket: &BucketId) -> Option<NodeId> {
        self.forwarding.get(bucket).copied()
    }

    pub fn default_routes(&self) -> u64 {
        self.default_routes
    }

    /// Puts an item at the back of the FIFO and starts it if a core is free.
    pub fn enqueue(&mut self, item: WorkItem, now: SimTime) -> Option<Started> {
        assert!(item.service_ms > 0.0, "work items need positive service time");
        self.queue.push_back(item);
        let started = self.try_start(now);
        self.check_work_conserving();
        started
    }

    fn try_start(&mut self, now: SimTime) -> Option<Started> {
        let core = self.running.iter().position(Option::is_none)?;
        let item = self.queue.pop_front()?;
        let wait_ms = now.since(item.enqueued_at);
        self.window.max_queue_delay = self.window.max_queue_delay.max(wait_ms);
        let started = Started {
            core,
            query: item.query,
            bucket: item.bucket,
            kind: item.kind,
            wait_ms,
            start: now,
            end: now.after(item.service_ms),
        };
        self.running[core] = Some(Running { item, start: now });
        Some(started)
    }

    /// Frees `core`, accounts its busy time, and starts the next queued item.
    pub fn complete(&mut self, core: usize, now: SimTime) -> (WorkItem, Option<Started>) {
        let Running { item, start } = self.running[core]
            .take()
            .expect("completion for an idle core");
        self.account_busy(item.bucket, start, now);
        if item.kind == WorkKind::Process {
            self.proc_sum_ms += item.service_ms;
            self.proc_count += 1;
        }
        let next = self.try_start(now);
        self.check_work_conserving();
        (item, next)
    }

    fn account_busy(&mut self, bucket: BucketId, start: SimTime, end: SimTime) {
        let from = start.max(self.window.start);
        if end > from {
            let ms = end.since(from);
            self.window.busy_closed_ms += ms;
            *self.window.per_bucket_cpu.entry(bucket).or_insert(0.0) += ms;
        }
        self.add_to_bins(start.as_ms(), end.as_ms());
    }

    fn add_to_bins(&mut self, from: f64, to: f64) {
        let mut t = from;
        while t < to {
            let bin = (t / self.bin_ms) as usize;
            if bin >= self.busy_bins.len() {
                break;
            }
            let bin_end = (bin as f64 + 1.0) * self.bin_ms;
            let seg_end = to.min(bin_end);
            self.busy_bins[bin] += seg_end - t;
            t = seg_end;
        }
    }

    /// Counts the elapsed part of still-running items into the time bins.
    /// Called once, at the simulation horizon.
    pub fn finalize(&mut self, horizon: SimTime) {
        let spans: Vec<(f64, f64)> = self
            .running
            .iter()
            .flatten()
            .map(|r| (r.start.as_ms(), horizon.as_ms()))
            .collect();
        for (s, e) in spans {
            self.add_to_bins(s, e);
        }
    }

    /// Busy core-milliseconds per time bin.
    pub fn busy_bins(&self) -> &[f64] {
        &self.busy_bins
    }

    pub fn utilisation_bins(&self) -> Vec<f64> {
        let cap = self.bin_ms * self.cores as f64;
        self.busy_bins.iter().map(|b| (b / cap).clamp(0.0, 1.0)).collect()
    }

    pub fn mean_req_proc_time(&self) -> f64 {
        if self.proc_count == 0 {
            0.0
        } else {
            self.proc_sum_ms / self.proc_count as f64
        }
    }

    pub fn proc_totals(&self) -> (f64, u64) {
        (self.proc_sum_ms, self.proc_count)
    }

    /// Metrics of the current window, ending at `window_end`. Work still in
    /// service counts up to `window_end`; the head-of-line wait counts toward
    /// the maximum queue delay.
    pub fn window_metrics(&self, window_end: SimTime) -> NodeMetricsWindow {
        self.metrics(window_end, true)
    }

    /// Like [`EdrNode::window_metrics`] but without the per-bucket maps.
    pub fn load_metrics(&self, window_end: SimTime) -> NodeMetricsWindow {
        self.metrics(window_end, false)
    }

    fn metrics(&self, window_end: SimTime, per_bucket_maps: bool) -> NodeMetricsWindow {
        let mut busy = self.window.busy_closed_ms;
        let mut per_bucket = if per_bucket_maps {
            self.window.per_bucket_cpu.clone()
        } else {
            BTreeMap::new()
        };
        for r in self.running.iter().flatten() {
            let from = r.start.max(self.window.start);
            if window_end > from {
                let ms = window_end.since(from);
                busy += ms;
                if per_bucket_maps {
                    *per_bucket.entry(r.item.bucket).or_insert(0.0) += ms;
                }
            }
        }
        let window_ms = window_end.since(self.window.start).max(0.0);
        let cpu_utilisation = if window_ms > 0.0 {
            (busy / (window_ms * self.cores as f64)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let head_wait = self
            .queue
            .front()
            .map(|i| window_end.since(i.enqueued_at))
            .unwrap_or(0.0);
        let per_bucket_reuse_rate = if per_bucket_maps {
            self.store
                .buckets()
                .map(|b| (b.id, b.stats.reuse_rate()))
                .collect()
        } else {
            BTreeMap::new()
        };
        NodeMetricsWindow {
            node: self.id,
            window_ms,
            busy_ms: busy,
            cpu_utilisation,
            mean_req_proc_time: self.mean_req_proc_time(),
            max_queue_delay: self.window.max_queue_delay.max(head_wait),
            per_bucket_cpu_ms: per_bucket,
            per_bucket_reuse_rate,
        }
    }

    /// Starts a new window at `now`; in-service work carries its remainder
    /// into the new window.
    pub fn reset_window(&mut self, now: SimTime) {
        self.window = Window::new(now);
    }

    /// Returns the window's metrics and then resets it.
    pub fn snapshot_metrics(&mut self, window_end: SimTime) -> NodeMetricsWindow {
        let m = self.window_metrics(window_end);
        self.reset_window(window_end);
        m
    }

    fn check_work_conserving(&self) {
        debug_assert!(
            self.queue.is_empty() || self.running.iter().all(Option::is_some),
            "node {} idles a core with {} items queued",
            self.id,
            self.queue.len()
        );
    }
}

/// Turns a reuse decision into the work item that serves it.
pub fn serve<R: Rng + ?Sized>(
    decision: &ReuseDecision,
    query: QueryId,
    bucket: BucketId,
    profile: &DatasetProfile,
    rng: &mut R,
    now: SimTime,
) -> WorkItem {
    let (kind, service_ms) = if decision.is_hit() {
        (WorkKind::ReuseFetch, profile.reuse_fetch.sample(rng))
    } else {
        (WorkKind::Process, profile.process_time.sample(rng))
    };
    WorkItem {
        query,
        bucket,
        kind,
        service_ms,
        enqueued_at: now,
    }
}

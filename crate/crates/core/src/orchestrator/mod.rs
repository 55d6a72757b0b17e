//! Epoch/trigger machinery and the bucket redistribution strategies.
//!
//! Strategies are pure planners over an immutable [`EnvState`] snapshot; the
//! engine applies the resulting [`OrchestrationPlan`].

mod gate;
mod strategies;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{BucketId, NodeId, SimTime};
use crate::node::NodeMetricsWindow;

pub use gate::{EpochGate, GateOutcome};
pub use strategies::{
    cpu_reuse_strategy, cpu_usage_strategy, cpu_workload_strategy, plan, queue_delay_strategy,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    None,
    QueueDelay,
    CpuUsage,
    CpuWorkload,
    CpuReuse,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::None,
        Strategy::QueueDelay,
        Strategy::CpuUsage,
        Strategy::CpuWorkload,
        Strategy::CpuReuse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "NONE",
            Strategy::QueueDelay => "QUEUE_DELAY",
            Strategy::CpuUsage => "CPU_USAGE",
            Strategy::CpuWorkload => "CPU_WORKLOAD",
            Strategy::CpuReuse => "CPU_REUSE",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    #[serde(rename = "name")]
    pub strategy: Strategy,
    pub epoch_ticks: u64,
    pub trigger_threshold: f64,
    /// Number of high/low bucket pairs exchanged by the queue-delay strategy.
    pub bucket_pairs: usize,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            strategy: Strategy::None,
            epoch_ticks: 500,
            trigger_threshold: 0.75,
            bucket_pairs: 1,
        }
    }
}

/// Move `bucket` from `origin` to `destination`; with a paired bucket, the
/// paired one travels the other way.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveDirective {
    pub origin: NodeId,
    pub destination: NodeId,
    pub bucket: BucketId,
    pub paired_bucket: Option<BucketId>,
}

impl fmt::Display for MoveDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.paired_bucket {
            Some(p) => write!(
                f,
                "{}@{}<->{}@{}",
                self.bucket, self.origin, p, self.destination
            ),
            None => write!(f, "{}@{}->{}", self.bucket, self.origin, self.destination),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrchestrationPlan {
    pub directives: Vec<MoveDirective>,
    pub created_at: SimTime,
    pub strategy: Strategy,
    pub call_index: u64,
}

impl OrchestrationPlan {
    /// `time_ms strategy directive;directive;...`
    pub fn log_line(&self) -> String {
        let moves: Vec<String> = self.directives.iter().map(|d| d.to_string()).collect();
        format!(
            "{:.3} {} {}",
            self.created_at.as_ms(),
            self.strategy,
            if moves.is_empty() { "-".to_string() } else { moves.join(";") }
        )
    }
}

/// Per-bucket view used by the strategies. Only settled (not in-flight)
/// buckets appear.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketState {
    pub id: BucketId,
    pub owner: NodeId,
    pub cpu_ms: f64,
    pub reuse_rate: f64,
    pub max_queue_delay: f64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvState {
    /// Indexed by node id.
    pub nodes: Vec<NodeMetricsWindow>,
    pub buckets: Vec<BucketState>,
    pub mean_req_proc_time: f64,
}

/// The metric condition each strategy checks once its epoch has elapsed.
pub fn metric_condition(strategy: Strategy, s: &EnvState, trigger_threshold: f64) -> bool {
    match strategy {
        Strategy::None => false,
        Strategy::CpuWorkload => true,
        Strategy::QueueDelay => s
            .nodes
            .iter()
            .any(|n| n.max_queue_delay > 2.0 * s.mean_req_proc_time),
        Strategy::CpuUsage | Strategy::CpuReuse => {
            s.nodes.iter().any(|n| n.cpu_utilisation > trigger_threshold)
        }
    }
}

/// Splits a plan into directives that still match `owner_of` (applied in
/// order) and stale ones. A directive is stale when either bucket is no longer
/// where the plan expected or was already touched earlier in the plan.
pub fn validate_plan<F>(plan: &OrchestrationPlan, owner_of: F) -> (Vec<MoveDirective>, Vec<MoveDirective>)
where
    F: Fn(&BucketId) -> Option<NodeId>,
{
    let mut seen = BTreeSet::new();
    let mut valid = Vec::new();
    let mut stale = Vec::new();
    for d in &plan.directives {
        let ok = d.origin != d.destination
            && owner_of(&d.bucket) == Some(d.origin)
            && !seen.contains(&d.bucket)
            && d.paired_bucket.is_none_or(|p| {
                p != d.bucket && owner_of(&p) == Some(d.destination) && !seen.contains(&p)
            });
        if ok {
            seen.insert(d.bucket);
            if let Some(p) = d.paired_bucket {
                seen.insert(p);
            }
            valid.push(*d);
        } else {
            stale.push(*d);
        }
    }
    (valid, stale)
}

/// When a bucket of `total_bytes` sent at `now` has fully arrived.
pub fn transfer_completion(now: SimTime, total_bytes: u64, bandwidth_bits_per_s: f64, hop_delay_ms: f64) -> SimTime {
    let serialisation_ms = total_bytes as f64 * 8.0 / bandwidth_bits_per_s * 1000.0;
    now.after(serialisation_ms + hop_delay_ms)
}

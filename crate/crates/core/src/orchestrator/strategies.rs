use std::cmp::Ordering;

use super::{BucketState, EnvState, EpochConfig, MoveDirective, OrchestrationPlan, Strategy};
use crate::model::SimTime;

/// Ordering for "smaller value wins", ties to lowest node then lowest bucket.
fn min_order(a: &BucketState, b: &BucketState, f: fn(&BucketState) -> f64) -> Ordering {
    f(a).total_cmp(&f(b))
        .then(a.owner.cmp(&b.owner))
        .then(a.id.cmp(&b.id))
}

/// Ordering for "larger value wins", same tie-break as [`min_order`].
fn max_order(a: &BucketState, b: &BucketState, f: fn(&BucketState) -> f64) -> Ordering {
    f(b).total_cmp(&f(a))
        .then(a.owner.cmp(&b.owner))
        .then(a.id.cmp(&b.id))
}

fn pick(pool: &[BucketState], skip: Option<usize>, by: impl Fn(&BucketState, &BucketState) -> Ordering) -> Option<usize> {
    pool.iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .min_by(|(_, a), (_, b)| by(a, b))
        .map(|(i, _)| i)
}

fn cpu(b: &BucketState) -> f64 {
    b.cpu_ms
}

fn reuse(b: &BucketState) -> f64 {
    b.reuse_rate
}

fn delay(b: &BucketState) -> f64 {
    b.max_queue_delay
}

fn exchange(first: &BucketState, second: &BucketState) -> Option<MoveDirective> {
    (first.owner != second.owner).then_some(MoveDirective {
        origin: first.owner,
        destination: second.owner,
        bucket: first.id,
        paired_bucket: Some(second.id),
    })
}

/// Removes two pool entries, higher index first so the lower stays valid.
fn take_pair(pool: &mut Vec<BucketState>, i: usize, j: usize) -> (BucketState, BucketState) {
    if i > j {
        let a = pool.swap_remove(i);
        let b = pool.swap_remove(j);
        (a, b)
    } else {
        let b = pool.swap_remove(j);
        let a = pool.swap_remove(i);
        (a, b)
    }
}

/// Exchanges the `k` highest-delay buckets with the `k` lowest-delay ones.
pub fn queue_delay_strategy(s: &EnvState, k: usize) -> Vec<MoveDirective> {
    let mut sorted = s.buckets.clone();
    sorted.sort_by(|a, b| max_order(a, b, delay));
    let k = k.min(sorted.len() / 2);
    let high = &sorted[..k];
    let mut low: Vec<&BucketState> = sorted[k..].iter().collect();
    low.sort_by(|a, b| min_order(a, b, delay));
    high.iter()
        .zip(low.into_iter().take(k))
        .filter(|(h, l)| h.max_queue_delay > l.max_queue_delay)
        .filter_map(|(h, l)| exchange(h, l))
        .collect()
}

/// Repeatedly swaps the most CPU-hungry bucket with the least one.
pub fn cpu_usage_strategy(s: &EnvState, iterations: usize) -> Vec<MoveDirective> {
    let mut pool = s.buckets.clone();
    let mut out = Vec::new();
    for _ in 0..iterations {
        let Some(h) = pick(&pool, None, |a, b| max_order(a, b, cpu)) else { break };
        let Some(l) = pick(&pool, Some(h), |a, b| min_order(a, b, cpu)) else { break };
        let (hot, cold) = take_pair(&mut pool, h, l);
        if hot.cpu_ms > cold.cpu_ms {
            out.extend(exchange(&hot, &cold));
        }
    }
    out
}

/// Greedy longest-processing-time placement: heaviest bucket first, each onto
/// the node with the least assigned workload.
pub fn cpu_workload_strategy(s: &EnvState, iterations: usize) -> Vec<MoveDirective> {
    let n = s
        .nodes
        .len()
        .max(s.buckets.iter().map(|b| b.owner + 1).max().unwrap_or(0));
    let mut load = vec![0.0; n];
    for b in &s.buckets {
        load[b.owner] += b.cpu_ms;
    }
    let mut order = s.buckets.clone();
    order.sort_by(|a, b| max_order(a, b, cpu));
    let mut out = Vec::new();
    for b in order.iter().take(iterations) {
        if b.cpu_ms <= 0.0 {
            break;
        }
        load[b.owner] -= b.cpu_ms;
        let dest = (0..n)
            .min_by(|&x, &y| load[x].total_cmp(&load[y]).then(x.cmp(&y)))
            .expect("at least one node");
        load[dest] += b.cpu_ms;
        if dest != b.owner {
            out.push(MoveDirective {
                origin: b.owner,
                destination: dest,
                bucket: b.id,
                paired_bucket: None,
            });
        }
    }
    out
}

/// Phase 1 swaps compute-heavy buckets with reuse-rich ones; phase 2 swaps
/// reuse-poor buckets with the least CPU-hungry ones.
pub fn cpu_reuse_strategy(s: &EnvState, iterations: usize) -> Vec<MoveDirective> {
    let mut pool = s.buckets.clone();
    let mut out = Vec::new();
    let same = |a: &BucketState, b: &BucketState| a.cpu_ms == b.cpu_ms && a.reuse_rate == b.reuse_rate;
    for _ in 0..iterations {
        let Some(h) = pick(&pool, None, |a, b| max_order(a, b, cpu)) else { break };
        let Some(r) = pick(&pool, Some(h), |a, b| max_order(a, b, reuse)) else { break };
        let (hot, rich) = take_pair(&mut pool, h, r);
        if !same(&hot, &rich) {
            out.extend(exchange(&hot, &rich));
        }
    }
    for _ in 0..iterations {
        let Some(p) = pick(&pool, None, |a, b| min_order(a, b, reuse)) else { break };
        let Some(c) = pick(&pool, Some(p), |a, b| min_order(a, b, cpu)) else { break };
        let (poor, cold) = take_pair(&mut pool, p, c);
        if !same(&poor, &cold) {
            out.extend(exchange(&poor, &cold));
        }
    }
    out
}

/// Runs the configured strategy. Iteration counts follow the node and bucket
/// counts in the snapshot.
pub fn plan(cfg: &EpochConfig, s: &EnvState, created_at: SimTime, call_index: u64) -> OrchestrationPlan {
    let n_nodes = s.nodes.len();
    let directives = match cfg.strategy {
        Strategy::None => vec![],
        Strategy::QueueDelay => queue_delay_strategy(s, cfg.bucket_pairs),
        Strategy::CpuUsage => cpu_usage_strategy(s, n_nodes),
        Strategy::CpuWorkload => cpu_workload_strategy(s, s.buckets.len()),
        Strategy::CpuReuse => cpu_reuse_strategy(s, n_nodes),
    };
    OrchestrationPlan {
        directives,
        created_at,
        strategy: cfg.strategy,
        call_index,
    }
}

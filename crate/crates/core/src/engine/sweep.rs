//! Batches of independent runs, optionally in parallel.

use rayon::prelude::*;

use super::config::{ConfigError, SimConfig};
use super::metrics::MetricsReport;
use super::sim::{run, SimError};
use crate::orchestrator::Strategy;
use crate::rng::derive_seed;

/// Runs every config; results come back in input order. One failing config
/// does not stop the others.
pub fn sweep(configs: &[SimConfig], workers: usize) -> Vec<Result<MetricsReport, SimError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| configs.par_iter().map(run).collect())
}

/// Gives run `i` the seed derived from `master` and `i`.
pub fn assign_seeds(configs: &mut [SimConfig], master: u64) {
    for (i, c) in configs.iter_mut().enumerate() {
        c.workload.seed = derive_seed(master, i as u64);
    }
}

/// The profile's listed rates crossed with every strategy, with seeds
/// derived from the base config's seed.
pub fn expand_grid(base: &SimConfig) -> Result<Vec<SimConfig>, ConfigError> {
    let resolved = base.resolve()?;
    let mut out = Vec::new();
    for rate in &resolved.profile.rates_reqs_per_s {
        for strategy in Strategy::ALL {
            let mut c = base.clone();
            c.workload.rate_reqs_per_s = Some(*rate);
            c.strategy.strategy = strategy;
            c.output.run_id = format!("{}-{}-{}", resolved.profile.name, rate, strategy);
            out.push(c);
        }
    }
    assign_seeds(&mut out, base.workload.seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_three_rates_by_five_strategies() {
        let mut base = SimConfig::default();
        base.workload.profile = "MNIST".into();
        let g = expand_grid(&base).unwrap();
        assert_eq!(g.len(), 15);
        let seeds: std::collections::BTreeSet<u64> = g.iter().map(|c| c.workload.seed).collect();
        assert_eq!(seeds.len(), 15);
        assert_eq!(g[0].output.run_id, "MNIST-250-NONE");
        assert_eq!(expand_grid(&base).unwrap(), g);
    }
}

//! Synthetic query streams: Poisson (or evenly spaced) arrivals, uniform
//! ingress, and either Zipf-popular profile buckets or clustered vectors.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal, Zipf};
use thiserror::Error;

use super::config::{ArrivalProcess, ResolvedConfig, WorkloadMode};
use crate::model::{AppTag, FeatureVector, Payload, Query, SimTime};
use crate::profile::DatasetProfile;
use crate::rng::{substream, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub app: AppTag,
    pub profile: DatasetProfile,
    pub reusability: f64,
    pub rate_reqs_per_s: f64,
    pub duration_s: f64,
    pub mode: WorkloadMode,
    pub arrivals: ArrivalProcess,
    pub num_buckets: u64,
    pub zipf_exponent: f64,
    pub cluster_count: usize,
    pub noise_scale: f64,
    pub dimension: usize,
    pub num_edrs: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn from_resolved(r: &ResolvedConfig) -> Self {
        let w = &r.config.workload;
        WorkloadSpec {
            app: AppTag::new(r.profile.name.clone()),
            profile: r.profile.clone(),
            reusability: r.reusability,
            rate_reqs_per_s: r.rate_reqs_per_s,
            duration_s: w.duration_s,
            mode: w.mode,
            arrivals: w.arrivals,
            num_buckets: w.num_buckets,
            zipf_exponent: w.zipf_exponent,
            cluster_count: w.cluster_count,
            noise_scale: w.noise_scale,
            dimension: r.config.lsh.dimension,
            num_edrs: r.config.topology.num_edrs,
            seed: w.seed,
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if !(self.rate_reqs_per_s.is_finite() && self.rate_reqs_per_s > 0.0) {
            return bad("rate must be positive");
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.reusability) {
            return bad("reusability must be in [0, 1]");
        }
        if self.num_edrs == 0 || self.num_buckets == 0 || self.dimension == 0 {
            return bad("node, bucket and dimension counts must be positive");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf exponent must be non-negative");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise scale must be non-negative");
        }
        Ok(())
    }
}

/// Unit-norm Gaussian directions, one per cluster.
pub fn cluster_centers(seed: u64, count: usize, dimension: usize) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, Stream::Clusters);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// `center + noise * z / sqrt(d)`, or just `z` without a center. `z` is a
/// standard normal draw, so `noise` is the expected noise norm relative to
/// the unit center.
pub fn perturb(center: Option<&[f64]>, noise: f64, z: &[f64]) -> Vec<f64> {
    match center {
        Some(c) => {
            let scale = noise / (z.len() as f64).sqrt();
            c.iter().zip(z).map(|(c, z)| c + scale * z).collect()
        }
        None => z.to_vec(),
    }
}

/// Zipf rank (1-based) turned into a 0-based key.
fn zipf_key<R: Rng>(z: &Zipf<f64>, rng: &mut R) -> u64 {
    z.sample(rng) as u64 - 1
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<Query>, WorkloadError> {
    spec.validate()?;
    let mut arrivals = substream(spec.seed, Stream::Arrivals);
    let mut ingress = substream(spec.seed, Stream::Ingress);
    let mut popularity = substream(spec.seed, Stream::Popularity);
    let mut coins = substream(spec.seed, Stream::Coins);
    let mut sizes = substream(spec.seed, Stream::Sizes);
    let mut vectors = substream(spec.seed, Stream::Vectors);

    let horizon_ms = spec.duration_s * 1000.0;
    let gap = Exp::new(spec.rate_reqs_per_s / 1000.0).map_err(|e| WorkloadError::Invalid(e.to_string()))?;
    let popular_keys = match spec.mode {
        WorkloadMode::Profile => Some(spec.num_buckets),
        WorkloadMode::Vector if spec.cluster_count > 0 => Some(spec.cluster_count as u64),
        WorkloadMode::Vector => None,
    };
    let zipf = popular_keys
        .map(|n| Zipf::new(n as f64, spec.zipf_exponent))
        .transpose()
        .map_err(|e| WorkloadError::Invalid(e.to_string()))?;
    let centers = match spec.mode {
        WorkloadMode::Vector => cluster_centers(spec.seed, spec.cluster_count, spec.dimension),
        WorkloadMode::Profile => Vec::new(),
    };

    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t = match spec.arrivals {
            ArrivalProcess::Poisson => t + gap.sample(&mut arrivals),
            ArrivalProcess::Uniform => out.len() as f64 * 1000.0 / spec.rate_reqs_per_s,
        };
        if t >= horizon_ms {
            break;
        }
        let payload = match spec.mode {
            WorkloadMode::Profile => {
                let bucket_key = zipf_key(zipf.as_ref().expect("profile mode has buckets"), &mut popularity);
                let reuse_coin = coins.random::<f64>() < spec.reusability;
                Payload::Profile { bucket_key, reuse_coin }
            }
            WorkloadMode::Vector => {
                let center = zipf
                    .as_ref()
                    .map(|z| centers[zipf_key(z, &mut popularity) as usize].as_slice());
                let v = loop {
                    let z: Vec<f64> = (0..spec.dimension).map(|_| vectors.sample(StandardNormal)).collect();
                    if let Ok(v) = FeatureVector::new(perturb(center, spec.noise_scale, &z)) {
                        break v;
                    }
                };
                Payload::Vector(v)
            }
        };
        out.push(Query {
            id: out.len() as u64,
            app: spec.app.clone(),
            payload,
            size_bytes: spec.profile.query_size.sample(&mut sizes),
            arrival_time: SimTime::from_ms(t).expect("finite arrival time"),
            ingress_edr: ingress.random_range(0..spec.num_edrs),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::config::SimConfig;

    fn spec(profile: &str, rate: f64, duration_s: f64) -> WorkloadSpec {
        let mut c = SimConfig::default();
        c.workload.profile = profile.into();
        c.workload.rate_reqs_per_s = Some(rate);
        c.workload.duration_s = duration_s;
        WorkloadSpec::from_resolved(&c.resolve().unwrap())
    }

    #[test]
    fn poisson_count_within_three_sigma() {
        let q = generate_workload(&spec("MNIST", 250.0, 60.0)).unwrap();
        let n = q.len() as f64;
        assert!((n - 15_000.0).abs() < 3.0 * 15_000f64.sqrt(), "{n}");
    }

    #[test]
    fn same_seed_same_stream() {
        let s = spec("Alexa", 400.0, 5.0);
        assert_eq!(generate_workload(&s).unwrap(), generate_workload(&s).unwrap());
        let mut other = s.clone();
        other.seed += 1;
        assert_ne!(generate_workload(&s).unwrap(), generate_workload(&other).unwrap());
    }

    #[test]
    fn traffic_coin_fraction() {
        let q = generate_workload(&spec("TrafficDetection", 2000.0, 50.0)).unwrap();
        assert!(q.len() >= 100_000 - 1500);
        let trues = q
            .iter()
            .filter(|q| matches!(q.payload, Payload::Profile { reuse_coin: true, .. }))
            .count();
        let frac = trues as f64 / q.len() as f64;
        assert!((frac - 0.70).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn arrivals_sorted_and_inside_horizon() {
        let q = generate_workload(&spec("GeneralCommands", 300.0, 10.0)).unwrap();
        assert!(q.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time));
        assert!(q.iter().all(|q| q.arrival_time.as_ms() < 10_000.0));
        assert!(q.iter().enumerate().all(|(i, q)| q.id == i as u64 && q.ingress_edr < 15));
    }

    #[test]
    fn uniform_arrivals_are_evenly_spaced() {
        let mut s = spec("MNIST", 100.0, 1.0);
        s.arrivals = ArrivalProcess::Uniform;
        let q = generate_workload(&s).unwrap();
        assert_eq!(q.len(), 100);
        assert!((q[1].arrival_time.as_ms() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zipf_rank_one_is_key_zero_and_most_popular() {
        let q = generate_workload(&spec("Alexa", 800.0, 20.0)).unwrap();
        let mut counts = vec![0usize; 64];
        for x in &q {
            if let Payload::Profile { bucket_key, .. } = x.payload {
                counts[bucket_key as usize] += 1;
            }
        }
        let top = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
        assert_eq!(top, 0);
    }

    #[test]
    fn coins_do_not_shift_other_draws() {
        let a = spec("Alexa", 300.0, 5.0);
        let mut b = a.clone();
        b.reusability = 0.1;
        let (qa, qb) = (generate_workload(&a).unwrap(), generate_workload(&b).unwrap());
        assert_eq!(qa.len(), qb.len());
        for (x, y) in qa.iter().zip(&qb) {
            assert_eq!((x.arrival_time, x.ingress_edr, x.size_bytes), (y.arrival_time, y.ingress_edr, y.size_bytes));
        }
    }

    #[test]
    fn vector_mode_produces_valid_vectors() {
        let mut s = spec("Alexa", 200.0, 2.0);
        s.mode = WorkloadMode::Vector;
        let q = generate_workload(&s).unwrap();
        assert!(q.iter().all(|q| matches!(&q.payload, Payload::Vector(v) if v.dimension() == 32)));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = spec("Alexa", 200.0, 2.0);
        s.rate_reqs_per_s = 0.0;
        assert!(generate_workload(&s).is_err());
    }
}

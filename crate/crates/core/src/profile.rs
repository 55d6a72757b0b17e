//! Workload profiles calibrated from prototype measurements of four datasets.
//!
//! The reusability and nearest-neighbour search timings are the measured
//! values. Service-time distributions are approximate: only CDF plots of the
//! processing and reuse timings exist, so defaults are log-normals given by a
//! (median, 95th percentile) pair and can be overridden from config.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::model::ModelError;

/// The similarity thresholds the built-in profiles were measured at.
pub const MEASURED_THRESHOLDS: [f64; 4] = [0.6, 0.7, 0.8, 0.9];

/// z-score of the 95th percentile of a standard normal.
const Z95: f64 = 1.644_853_626_951_472_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LatencyDist {
    /// Log-normal fitted through the median and 95th percentile.
    Lognormal { median_ms: f64, p95_ms: f64 },
    Deterministic { ms: f64 },
    /// Uniform resampling of measured values.
    Empirical { samples_ms: Vec<f64> },
}

impl LatencyDist {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            LatencyDist::Lognormal { median_ms, p95_ms } => {
                if !(median_ms.is_finite() && *median_ms > 0.0) {
                    return Err(format!("median_ms must be positive, got {median_ms}"));
                }
                if !(p95_ms.is_finite() && p95_ms >= median_ms) {
                    return Err(format!("p95_ms must be >= median_ms, got {p95_ms}"));
                }
            }
            LatencyDist::Deterministic { ms } => {
                if !(ms.is_finite() && *ms > 0.0) {
                    return Err(format!("ms must be positive, got {ms}"));
                }
            }
            LatencyDist::Empirical { samples_ms } => {
                if samples_ms.is_empty() {
                    return Err("samples_ms must not be empty".into());
                }
                if samples_ms.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err("samples_ms must all be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn median_ms(&self) -> f64 {
        match self {
            LatencyDist::Lognormal { median_ms, .. } => *median_ms,
            LatencyDist::Deterministic { ms } => *ms,
            LatencyDist::Empirical { samples_ms } => {
                let mut s = samples_ms.clone();
                s.sort_by(f64::total_cmp);
                let n = s.len();
                if n % 2 == 1 {
                    s[n / 2]
                } else {
                    0.5 * (s[n / 2 - 1] + s[n / 2])
                }
            }
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match self {
            LatencyDist::Lognormal { median_ms, p95_ms } => {
                let sigma = (p95_ms / median_ms).ln() / Z95;
                median_ms * (0.5 * sigma * sigma).exp()
            }
            LatencyDist::Deterministic { ms } => *ms,
            LatencyDist::Empirical { samples_ms } => {
                samples_ms.iter().sum::<f64>() / samples_ms.len() as f64
            }
        }
    }

    /// Draws one service time in milliseconds. Always strictly positive.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let ms = match self {
            LatencyDist::Lognormal { median_ms, p95_ms } => {
                let sigma = (p95_ms / median_ms).ln() / Z95;
                if sigma == 0.0 {
                    *median_ms
                } else {
                    LogNormal::new(median_ms.ln(), sigma)
                        .expect("validated log-normal parameters")
                        .sample(rng)
                }
            }
            LatencyDist::Deterministic { ms } => *ms,
            LatencyDist::Empirical { samples_ms } => samples_ms[rng.random_range(0..samples_ms.len())],
        };
        ms.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SizeDist {
    Fixed { bytes: u64 },
    Uniform { min_bytes: u64, max_bytes: u64 },
}

impl SizeDist {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            SizeDist::Fixed { bytes } if *bytes == 0 => Err("bytes must be positive".into()),
            SizeDist::Uniform { min_bytes, max_bytes } if *min_bytes == 0 || min_bytes > max_bytes => {
                Err(format!("need 0 < min_bytes <= max_bytes, got {min_bytes}..{max_bytes}"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            SizeDist::Fixed { bytes } => *bytes,
            SizeDist::Uniform { min_bytes, max_bytes } => rng.random_range(*min_bytes..=*max_bytes),
        }
    }
}

/// Measured behaviour of a dataset at one similarity threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub reusability: f64,
    pub lsh_search_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub rows: Vec<ThresholdRow>,
    pub process_time: LatencyDist,
    pub reuse_fetch: LatencyDist,
    pub query_size: SizeDist,
    pub rates_reqs_per_s: Vec<f64>,
}

impl DatasetProfile {
    pub fn row(&self, threshold: f64) -> Option<&ThresholdRow> {
        self.rows
            .iter()
            .find(|r| (r.threshold - threshold).abs() < 1e-9)
    }

    pub fn reusability(&self, threshold: f64) -> Option<f64> {
        self.row(threshold).map(|r| r.reusability)
    }

    pub fn lsh_search_ms(&self, threshold: f64) -> Option<f64> {
        self.row(threshold).map(|r| r.lsh_search_ms)
    }
}

pub const BUILTIN_PROFILES: [&str; 4] = ["MNIST", "TrafficDetection", "Alexa", "GeneralCommands"];

fn rows(reuse: [f64; 4], lsh: [f64; 4]) -> Vec<ThresholdRow> {
    MEASURED_THRESHOLDS
        .iter()
        .zip(reuse.iter().zip(lsh.iter()))
        .map(|(&threshold, (&reusability, &lsh_search_ms))| ThresholdRow {
            threshold,
            reusability,
            lsh_search_ms,
        })
        .collect()
}

fn lognormal(median_ms: f64, p95_ms: f64) -> LatencyDist {
    LatencyDist::Lognormal { median_ms, p95_ms }
}

/// Looks up one of the four built-in dataset profiles by name.
pub fn builtin_profile(name: &str) -> Result<DatasetProfile, ModelError> {
    let profile = match name {
        "MNIST" => DatasetProfile {
            name: name.into(),
            rows: rows([0.12, 0.0074, 0.0042, 0.0026], [5.3, 6.8, 6.8, 6.9]),
            process_time: lognormal(50.0, 100.0),
            reuse_fetch: lognormal(2.0, 4.0),
            query_size: SizeDist::Fixed { bytes: 40_000 },
            rates_reqs_per_s: vec![250.0, 500.0, 1000.0],
        },
        "TrafficDetection" => DatasetProfile {
            name: name.into(),
            rows: rows([0.70, 0.725, 0.672, 0.608], [0.6, 0.6, 0.8, 0.9]),
            process_time: lognormal(40.0, 80.0),
            reuse_fetch: lognormal(3.0, 6.0),
            query_size: SizeDist::Uniform {
                min_bytes: 1_000_000,
                max_bytes: 5_000_000,
            },
            rates_reqs_per_s: vec![2000.0, 4000.0, 6000.0],
        },
        "Alexa" => DatasetProfile {
            name: name.into(),
            rows: rows([0.866, 0.818, 0.593, 0.253], [0.1, 0.1, 0.1, 0.1]),
            process_time: lognormal(120.0, 240.0),
            reuse_fetch: lognormal(2.0, 4.0),
            query_size: SizeDist::Uniform {
                min_bytes: 40_000,
                max_bytes: 200_000,
            },
            rates_reqs_per_s: vec![250.0, 400.0, 800.0],
        },
        "GeneralCommands" => DatasetProfile {
            name: name.into(),
            rows: rows([0.186, 0.184, 0.183, 0.1936], [0.14, 0.14, 0.14, 0.15]),
            process_time: lognormal(180.0, 360.0),
            reuse_fetch: lognormal(2.0, 4.0),
            query_size: SizeDist::Uniform {
                min_bytes: 40_000,
                max_bytes: 200_000,
            },
            rates_reqs_per_s: vec![150.0, 200.0, 300.0],
        },
        other => return Err(ModelError::UnknownProfile(other.to_string())),
    };
    Ok(profile)
}

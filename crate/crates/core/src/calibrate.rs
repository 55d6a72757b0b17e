//! Tunes the vector-mode noise scale so a synthetic corpus reproduces a
//! profile's measured reusability.
//!
//! Reusability of a corpus is measured exactly: query `i` counts as reusable
//! when some earlier query has cosine similarity at least the threshold.

use rand_distr::{Distribution, StandardNormal, Zipf};
use thiserror::Error;

use crate::engine::workload::{cluster_centers, perturb};
use crate::profile::builtin_profile;
use crate::rng::{substream, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("invalid calibration request: {0}")]
    Invalid(String),
    #[error("no noise scale reaches reusability {target:.4} within {tolerance}; closest {closest:.4} at noise_scale {noise_scale}")]
    NonConvergence {
        target: f64,
        tolerance: f64,
        closest: f64,
        noise_scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRequest {
    pub profile: String,
    pub threshold: f64,
    /// Defaults to the profile's measured reusability at `threshold`.
    pub target: Option<f64>,
    pub samples: usize,
    pub cluster_count: usize,
    pub zipf_exponent: f64,
    pub dimension: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for CalibrationRequest {
    fn default() -> Self {
        CalibrationRequest {
            profile: "TrafficDetection".into(),
            threshold: 0.6,
            target: None,
            samples: 1000,
            cluster_count: 16,
            zipf_exponent: 0.8,
            dimension: 32,
            seed: 1,
            tolerance: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub profile: String,
    pub threshold: f64,
    pub target: f64,
    pub noise_scale: f64,
    pub achieved: f64,
    pub evaluations: usize,
    pub cluster_count: usize,
}

impl CalibrationReport {
    /// A `[workload]` section that reproduces the calibrated corpus.
    pub fn toml_fragment(&self) -> String {
        format!(
            "# achieved reusability {:.4} (target {:.4})\n[workload]\nprofile = \"{}\"\nmode = \"vector\"\nthreshold = {}\ncluster_count = {}\nnoise_scale = {}\n",
            self.achieved, self.target, self.profile, self.threshold, self.cluster_count, self.noise_scale
        )
    }
}

/// Fixed random ingredients of a corpus; only the noise scale varies.
#[derive(Clone, Debug)]
pub struct Corpus {
    centers: Vec<Vec<f64>>,
    picks: Vec<Option<usize>>,
    noise: Vec<Vec<f64>>,
}

impl Corpus {
    pub fn new(samples: usize, cluster_count: usize, zipf_exponent: f64, dimension: usize, seed: u64) -> Result<Self, CalibrationError> {
        if dimension == 0 {
            return Err(CalibrationError::Invalid("dimension must be positive".into()));
        }
        let centers = cluster_centers(seed, cluster_count, dimension);
        let zipf = if cluster_count > 0 {
            Some(Zipf::new(cluster_count as f64, zipf_exponent).map_err(|e| CalibrationError::Invalid(e.to_string()))?)
        } else {
            None
        };
        let mut popularity = substream(seed, Stream::Popularity);
        let mut vectors = substream(seed, Stream::Vectors);
        let mut picks = Vec::with_capacity(samples);
        let mut noise = Vec::with_capacity(samples);
        for _ in 0..samples {
            picks.push(zipf.as_ref().map(|z| z.sample(&mut popularity) as usize - 1));
            noise.push((0..dimension).map(|_| StandardNormal.sample(&mut vectors)).collect());
        }
        Ok(Corpus { centers, picks, noise })
    }

    /// Unit-normalised vectors at the given noise scale.
    pub fn vectors(&self, noise_scale: f64) -> Vec<Vec<f64>> {
        self.picks
            .iter()
            .zip(&self.noise)
            .map(|(pick, z)| {
                let v = perturb(pick.map(|c| self.centers[c].as_slice()), noise_scale, z);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    v.into_iter().map(|x| x / n).collect()
                } else {
                    v
                }
            })
            .collect()
    }
}

/// Fraction of vectors with an earlier vector at cosine similarity at least
/// `threshold`. Inputs must be unit-normalised.
pub fn empirical_reusability(unit_vectors: &[Vec<f64>], threshold: f64) -> f64 {
    if unit_vectors.is_empty() {
        return 0.0;
    }
    let hits = (0..unit_vectors.len())
        .filter(|&i| {
            unit_vectors[..i].iter().any(|prev| {
                prev.iter().zip(&unit_vectors[i]).map(|(a, b)| a * b).sum::<f64>() >= threshold
            })
        })
        .count();
    hits as f64 / unit_vectors.len() as f64
}

pub fn calibrate(req: &CalibrationRequest) -> Result<CalibrationReport, CalibrationError> {
    if !(req.threshold > 0.0 && req.threshold <= 1.0) {
        return Err(CalibrationError::Invalid(format!("threshold {} not in (0, 1]", req.threshold)));
    }
    if req.samples < 2 {
        return Err(CalibrationError::Invalid("need at least 2 samples".into()));
    }
    let target = match req.target {
        Some(t) => t,
        None => builtin_profile(&req.profile)
            .map_err(|e| CalibrationError::Invalid(e.to_string()))?
            .reusability(req.threshold)
            .ok_or_else(|| {
                CalibrationError::Invalid(format!("{} has no measurement at {}", req.profile, req.threshold))
            })?,
    };
    let corpus = Corpus::new(req.samples, req.cluster_count, req.zipf_exponent, req.dimension, req.seed)?;
    let mut evaluations = 0;
    let mut eval = |noise: f64| {
        evaluations += 1;
        empirical_reusability(&corpus.vectors(noise), req.threshold)
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut consider = |noise: f64, r: f64| {
        let gap = (r - target).abs();
        if gap < best.0 {
            best = (gap, noise, r);
        }
        gap <= req.tolerance
    };

    // reusability falls as noise grows
    let (mut lo, mut hi) = (0.0, 8.0);
    let r_lo = eval(lo);
    let mut found = consider(lo, r_lo).then_some((lo, r_lo));
    if found.is_none() && r_lo > target {
        let r_hi = eval(hi);
        found = consider(hi, r_hi).then_some((hi, r_hi));
        if found.is_none() && r_hi < target {
            for _ in 0..48 {
                let mid = 0.5 * (lo + hi);
                let r = eval(mid);
                if consider(mid, r) {
                    found = Some((mid, r));
                    break;
                }
                if r > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    match found {
        Some((noise_scale, achieved)) => Ok(CalibrationReport {
            profile: req.profile.clone(),
            threshold: req.threshold,
            target,
            noise_scale,
            achieved,
            evaluations,
            cluster_count: req.cluster_count,
        }),
        None => Err(CalibrationError::NonConvergence {
            target,
            tolerance: req.tolerance,
            closest: best.2,
            noise_scale: best.1,
        }),
    }
}

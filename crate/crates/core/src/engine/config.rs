//! Run configuration: a TOML document with `[topology]`, `[workload]`,
//! `[strategy]`, `[lsh]` and `[output]` sections, plus `key=value` overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsh::{LshConfig, SimilarityThreshold};
use crate::orchestrator::EpochConfig;
use crate::profile::{builtin_profile, DatasetProfile, LatencyDist, SizeDist, ThresholdRow};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("malformed override `{0}`, expected KEY=VALUE")]
    Override(String),
    #[error("override key `{0}` given more than once")]
    DuplicateOverride(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub num_edrs: usize,
    pub cores_per_edr: usize,
    pub inter_edr_delay_ms: f64,
    pub gateway_delay_ms: f64,
    pub link_bandwidth_bits_per_s: f64,
    pub table_update_delay_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage_budget_bytes: Option<u64>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            num_edrs: 15,
            cores_per_edr: 4,
            inter_edr_delay_ms: 2.0,
            gateway_delay_ms: 2.0,
            link_bandwidth_bits_per_s: 1e9,
            table_update_delay_ms: 2.0,
            storage_budget_bytes: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadMode {
    Profile,
    Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    Poisson,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub profile: String,
    pub threshold: f64,
    /// Defaults to the profile's lowest listed rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_reqs_per_s: Option<f64>,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub mode: WorkloadMode,
    pub num_buckets: u64,
    pub zipf_exponent: f64,
    pub arrivals: ArrivalProcess,
    pub seed: u64,
    pub reuse: bool,
    pub cluster_count: usize,
    pub noise_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reusability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lsh_search_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process_time: Option<LatencyDist>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reuse_fetch: Option<LatencyDist>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_size: Option<SizeDist>,
    pub result_size_bytes: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            profile: "TrafficDetection".into(),
            threshold: 0.6,
            rate_reqs_per_s: None,
            duration_s: 60.0,
            warmup_s: 0.0,
            mode: WorkloadMode::Profile,
            num_buckets: 64,
            zipf_exponent: 0.8,
            arrivals: ArrivalProcess::Poisson,
            seed: 1,
            reuse: true,
            cluster_count: 16,
            noise_scale: 0.3,
            trace: None,
            reusability: None,
            lsh_search_ms: None,
            process_time: None,
            reuse_fetch: None,
            query_size: None,
            result_size_bytes: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub run_id: String,
    /// Emit one log line per orchestration plan.
    pub log_plans: bool,
    /// Keep per-query latency samples in the report.
    pub record_queries: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            run_id: "run".into(),
            log_plans: false,
            record_queries: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    pub workload: WorkloadConfig,
    pub strategy: EpochConfig,
    pub lsh: LshConfig,
    pub output: OutputConfig,
}

/// A validated config with the dataset profile and its overrides folded in.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub config: SimConfig,
    pub profile: DatasetProfile,
    pub rate_reqs_per_s: f64,
    pub threshold: SimilarityThreshold,
    pub reusability: f64,
    pub lsh_search_ms: f64,
}

const ALIASES: [(&str, &str); 4] = [
    ("strategy", "strategy.name"),
    ("profile", "workload.profile"),
    ("rate", "workload.rate_reqs_per_s"),
    ("seed", "workload.seed"),
];

/// Splits `KEY=VALUE`; the key may use one of the short aliases.
pub fn parse_override(raw: &str) -> Result<(String, String), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(raw.to_string()))?;
    let key = key.trim();
    let value = value.trim();
    let well_formed = !key.is_empty()
        && !value.is_empty()
        && key.split('.').all(|seg| {
            !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        });
    if !well_formed {
        return Err(ConfigError::Override(raw.to_string()));
    }
    let key = ALIASES
        .iter()
        .find(|(alias, _)| *alias == key)
        .map(|(_, full)| full.to_string())
        .unwrap_or_else(|| key.to_string());
    Ok((key, value.to_string()))
}

/// A TOML literal when the text parses as one, otherwise a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// Applies `KEY=VALUE` overrides in order. A key may appear only once.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        let mut doc = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for raw in overrides {
            let (key, value) = parse_override(raw.as_ref())?;
            if !seen.insert(key.clone()) {
                return Err(ConfigError::DuplicateOverride(key));
            }
            let mut segments: Vec<&str> = key.split('.').collect();
            let leaf = segments.pop().expect("non-empty key");
            let mut table = doc.as_table_mut().expect("config is a table");
            for seg in segments {
                table = table
                    .entry(seg)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| invalid(&key, format!("`{seg}` is not a section")))?;
            }
            table.insert(leaf.to_string(), override_value(&value));
        }
        *self = doc
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("after overrides: {e}")))?;
        Ok(())
    }

    /// Checks every field and resolves the dataset profile. `run` and the
    /// command-line `validate` both go through here.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let t = &self.topology;
        if t.num_edrs == 0 {
            return Err(invalid("topology.num_edrs", "must be at least 1"));
        }
        if t.cores_per_edr == 0 {
            return Err(invalid("topology.cores_per_edr", "must be at least 1"));
        }
        for (field, v) in [
            ("topology.inter_edr_delay_ms", t.inter_edr_delay_ms),
            ("topology.gateway_delay_ms", t.gateway_delay_ms),
            ("topology.table_update_delay_ms", t.table_update_delay_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be a non-negative number, got {v}")));
            }
        }
        if !(t.link_bandwidth_bits_per_s.is_finite() && t.link_bandwidth_bits_per_s > 0.0) {
            return Err(invalid("topology.link_bandwidth_bits_per_s", "must be positive"));
        }
        if t.storage_budget_bytes == Some(0) {
            return Err(invalid("topology.storage_budget_bytes", "must be positive"));
        }

        let w = &self.workload;
        let mut profile = builtin_profile(&w.profile)
            .map_err(|e| invalid("workload.profile", e.to_string()))?;
        let threshold = SimilarityThreshold::new(w.threshold)
            .map_err(|e| invalid("workload.threshold", e.to_string()))?;
        let row = profile.row(w.threshold).copied();
        let reusability = match (w.reusability, row) {
            (Some(r), _) => r,
            (None, Some(row)) => row.reusability,
            (None, None) => {
                return Err(invalid(
                    "workload.threshold",
                    format!(
                        "profile {} has no measurement at {}; set workload.reusability",
                        profile.name, w.threshold
                    ),
                ))
            }
        };
        if !(0.0..=1.0).contains(&reusability) {
            return Err(invalid("workload.reusability", format!("must be in [0, 1], got {reusability}")));
        }
        let lsh_search_ms = match (w.lsh_search_ms, row) {
            (Some(ms), _) => ms,
            (None, Some(row)) => row.lsh_search_ms,
            (None, None) => {
                return Err(invalid(
                    "workload.threshold",
                    format!(
                        "profile {} has no measurement at {}; set workload.lsh_search_ms",
                        profile.name, w.threshold
                    ),
                ))
            }
        };
        if !(lsh_search_ms.is_finite() && lsh_search_ms >= 0.0) {
            return Err(invalid("workload.lsh_search_ms", "must be a non-negative number"));
        }
        let rate = w
            .rate_reqs_per_s
            .unwrap_or_else(|| profile.rates_reqs_per_s[0]);
        if !(rate.is_finite() && rate > 0.0) {
            return Err(invalid("workload.rate_reqs_per_s", format!("must be positive, got {rate}")));
        }
        if !(w.duration_s.is_finite() && w.duration_s > 0.0) {
            return Err(invalid("workload.duration_s", "must be positive"));
        }
        if !(w.warmup_s.is_finite() && w.warmup_s >= 0.0 && w.warmup_s < w.duration_s) {
            return Err(invalid("workload.warmup_s", "must be in [0, duration_s)"));
        }
        if w.num_buckets == 0 {
            return Err(invalid("workload.num_buckets", "must be at least 1"));
        }
        if !(w.zipf_exponent.is_finite() && w.zipf_exponent >= 0.0) {
            return Err(invalid("workload.zipf_exponent", "must be a non-negative number"));
        }
        if !(w.noise_scale.is_finite() && w.noise_scale >= 0.0) {
            return Err(invalid("workload.noise_scale", "must be a non-negative number"));
        }
        if w.result_size_bytes == 0 {
            return Err(invalid("workload.result_size_bytes", "must be positive"));
        }
        if let Some(d) = &w.process_time {
            d.validate().map_err(|e| invalid("workload.process_time", e))?;
            profile.process_time = d.clone();
        }
        if let Some(d) = &w.reuse_fetch {
            d.validate().map_err(|e| invalid("workload.reuse_fetch", e))?;
            profile.reuse_fetch = d.clone();
        }
        if let Some(d) = &w.query_size {
            d.validate().map_err(|e| invalid("workload.query_size", e))?;
            profile.query_size = d.clone();
        }
        if w.reusability.is_some() || w.lsh_search_ms.is_some() {
            let patched = ThresholdRow {
                threshold: w.threshold,
                reusability,
                lsh_search_ms,
            };
            profile.rows.retain(|r| (r.threshold - w.threshold).abs() >= 1e-9);
            profile.rows.push(patched);
        }

        let s = &self.strategy;
        if s.epoch_ticks == 0 {
            return Err(invalid("strategy.epoch_ticks", "must be at least 1"));
        }
        if !(s.trigger_threshold > 0.0 && s.trigger_threshold <= 1.0) {
            return Err(invalid("strategy.trigger_threshold", "must be in (0, 1]"));
        }
        if s.bucket_pairs == 0 {
            return Err(invalid("strategy.bucket_pairs", "must be at least 1"));
        }
        self.lsh.validate().map_err(|e| invalid("lsh", e.to_string()))?;
        if self.output.run_id.is_empty() || self.output.run_id.contains([',', '\n', '"']) {
            return Err(invalid("output.run_id", "must be non-empty without commas, quotes or newlines"));
        }

        Ok(ResolvedConfig {
            config: self.clone(),
            profile,
            rate_reqs_per_s: rate,
            threshold,
            reusability,
            lsh_search_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Strategy;

    #[test]
    fn empty_document_is_all_defaults() {
        let c = SimConfig::from_toml_str("").unwrap();
        assert_eq!(c, SimConfig::default());
        let r = c.resolve().unwrap();
        assert_eq!(r.rate_reqs_per_s, 2000.0);
        assert_eq!(r.reusability, 0.70);
        assert_eq!(r.lsh_search_ms, 0.6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = SimConfig::from_toml_str("[topology]\nnum_edr = 3\n").unwrap_err();
        assert!(e.to_string().contains("num_edr"), "{e}");
        assert!(SimConfig::from_toml_str("[extra]\na = 1\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = SimConfig::default();
        c.workload.process_time = Some(LatencyDist::Deterministic { ms: 10.0 });
        c.workload.rate_reqs_per_s = Some(123.0);
        c.strategy.strategy = Strategy::CpuReuse;
        let back = SimConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_with_aliases() {
        let mut c = SimConfig::default();
        c.apply_overrides(&["strategy=CPU_USAGE", "rate=4000", "topology.num_edrs=3", "seed=9"])
            .unwrap();
        assert_eq!(c.strategy.strategy, Strategy::CpuUsage);
        assert_eq!(c.workload.rate_reqs_per_s, Some(4000.0));
        assert_eq!(c.topology.num_edrs, 3);
        assert_eq!(c.workload.seed, 9);
    }

    #[test]
    fn override_of_nested_distribution() {
        let mut c = SimConfig::default();
        c.apply_overrides(&["workload.process_time={kind=\"deterministic\", ms=10.0}"])
            .unwrap();
        assert_eq!(c.workload.process_time, Some(LatencyDist::Deterministic { ms: 10.0 }));
    }

    #[test]
    fn duplicate_override_is_an_error() {
        let mut c = SimConfig::default();
        let e = c.apply_overrides(&["rate=10", "workload.rate_reqs_per_s=20"]).unwrap_err();
        assert!(matches!(e, ConfigError::DuplicateOverride(_)));
    }

    #[test]
    fn malformed_overrides() {
        for raw in ["rate", "=3", "a..b=1", "a b=1", "x="] {
            assert!(parse_override(raw).is_err(), "{raw}");
        }
        let mut c = SimConfig::default();
        assert!(c.apply_overrides(&["workload.bogus=1"]).is_err());
        assert!(c.apply_overrides(&["topology.num_edrs=many"]).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = SimConfig::default();
        c.topology.num_edrs = 0;
        let e = c.resolve().unwrap_err();
        assert!(e.to_string().contains("topology.num_edrs"));

        let mut c = SimConfig::default();
        c.workload.threshold = 0.75;
        assert!(c.resolve().unwrap_err().to_string().contains("workload.reusability"));
        c.workload.reusability = Some(0.5);
        c.workload.lsh_search_ms = Some(0.5);
        let r = c.resolve().unwrap();
        assert_eq!(r.profile.reusability(0.75), Some(0.5));
    }

    #[test]
    fn unknown_profile_rejected() {
        let mut c = SimConfig::default();
        c.workload.profile = "ImageNet".into();
        assert!(c.resolve().unwrap_err().to_string().contains("workload.profile"));
    }

    #[test]
    fn missing_file_names_path() {
        let e = SimConfig::from_path(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/run.toml"));
    }
}

//! Run report, CSV rows and the plain-text summary.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;

use crate::orchestrator::Strategy;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub strategy: Strategy,
    pub profile: String,
    pub rate_reqs_per_s: f64,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub bin_ms: f64,
    pub arrivals: u64,
    pub satisfied: u64,
    pub hits: u64,
    pub misses: u64,
    pub unprocessed_at_end: u64,
    /// Satisfied requests per bin.
    pub satisfied_per_bin: Vec<u64>,
    pub hits_per_bin: Vec<u64>,
    pub misses_per_bin: Vec<u64>,
    pub calls_per_bin: Vec<u64>,
    /// Node x bin CPU utilisation.
    pub per_edr_cpu: Vec<Vec<f64>>,
    pub orchestration_calls: u64,
    pub gate_triggers: u64,
    pub skipped_directives: u64,
    pub transfers: u64,
    pub bytes_transferred: u64,
    pub in_flight_misses: u64,
    pub stale_misses: u64,
    pub uncached_results: u64,
    pub evictions: u64,
    /// End-to-end latency of each satisfied query, in completion order.
    pub latency_samples: Vec<f64>,
    pub plan_log: Vec<String>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    run_id: &'a str,
    strategy: &'a str,
    profile: &'a str,
    rate: f64,
    bin_start_ms: f64,
    throughput: f64,
    node_id: usize,
    cpu_utilisation: f64,
    orchestration_calls: u64,
    hits: u64,
    misses: u64,
    unprocessed: u64,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "run_id",
    "strategy",
    "profile",
    "rate",
    "bin_start_ms",
    "throughput",
    "node_id",
    "cpu_utilisation",
    "orchestration_calls",
    "hits",
    "misses",
    "unprocessed",
];

impl MetricsReport {
    fn horizon_ms(&self) -> f64 {
        self.duration_s * 1000.0
    }

    /// Index of the first bin that starts at or after the warm-up period.
    pub fn first_measured_bin(&self) -> usize {
        (self.warmup_s * 1000.0 / self.bin_ms).ceil() as usize
    }

    fn bin_len_s(&self, bin: usize) -> f64 {
        let start = bin as f64 * self.bin_ms;
        (self.horizon_ms() - start).min(self.bin_ms) / 1000.0
    }

    /// Satisfied requests per second in each bin.
    pub fn throughput_per_bin(&self) -> Vec<f64> {
        self.satisfied_per_bin
            .iter()
            .enumerate()
            .map(|(b, n)| *n as f64 / self.bin_len_s(b))
            .collect()
    }

    /// Satisfied requests per second over the measured (post warm-up) bins.
    pub fn mean_throughput(&self) -> f64 {
        let first = self.first_measured_bin();
        let n: u64 = self.satisfied_per_bin.iter().skip(first).sum();
        let secs = self.horizon_ms() / 1000.0 - (first as f64 * self.bin_ms / 1000.0).min(self.duration_s);
        if secs > 0.0 {
            n as f64 / secs
        } else {
            0.0
        }
    }

    pub fn hit_rate(&self) -> f64 {
        if self.satisfied == 0 {
            0.0
        } else {
            self.hits as f64 / self.satisfied as f64
        }
    }

    /// Mean utilisation of each node over the measured bins.
    pub fn node_cpu_mean(&self) -> Vec<f64> {
        let first = self.first_measured_bin();
        self.per_edr_cpu
            .iter()
            .map(|bins| {
                let xs = &bins[first.min(bins.len())..];
                if xs.is_empty() {
                    0.0
                } else {
                    xs.iter().sum::<f64>() / xs.len() as f64
                }
            })
            .collect()
    }

    pub fn node_cpu_max(&self) -> Vec<f64> {
        let first = self.first_measured_bin();
        self.per_edr_cpu
            .iter()
            .map(|bins| bins[first.min(bins.len())..].iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Exact bookkeeping identities every finished run must satisfy.
    pub fn check_conservation(&self) -> Result<(), String> {
        if self.satisfied + self.unprocessed_at_end != self.arrivals {
            return Err(format!(
                "arrivals {} != satisfied {} + unprocessed {}",
                self.arrivals, self.satisfied, self.unprocessed_at_end
            ));
        }
        if self.hits + self.misses != self.satisfied {
            return Err(format!(
                "hits {} + misses {} != satisfied {}",
                self.hits, self.misses, self.satisfied
            ));
        }
        let binned: u64 = self.satisfied_per_bin.iter().sum();
        if binned != self.satisfied {
            return Err(format!("binned satisfied {binned} != satisfied {}", self.satisfied));
        }
        Ok(())
    }

    /// One row per (measured bin, node), header included when `header`.
    pub fn write_csv<W: io::Write>(&self, w: W, header: bool) -> csv::Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(header).from_writer(w);
        let throughput = self.throughput_per_bin();
        let strategy = self.strategy.as_str();
        for bin in self.first_measured_bin()..self.satisfied_per_bin.len() {
            for (node, cpu) in self.per_edr_cpu.iter().enumerate() {
                wtr.serialize(CsvRow {
                    run_id: &self.run_id,
                    strategy,
                    profile: &self.profile,
                    rate: self.rate_reqs_per_s,
                    bin_start_ms: bin as f64 * self.bin_ms,
                    throughput: throughput[bin],
                    node_id: node,
                    cpu_utilisation: cpu[bin],
                    orchestration_calls: self.calls_per_bin[bin],
                    hits: self.hits_per_bin[bin],
                    misses: self.misses_per_bin[bin],
                    unprocessed: self.unprocessed_at_end,
                })?;
            }
        }
        if header && self.satisfied_per_bin.len() <= self.first_measured_bin() {
            wtr.write_record(CSV_COLUMNS)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, true).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Fixed-width text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k:<22}{v}").unwrap();
        line("run_id", self.run_id.clone());
        line("strategy", self.strategy.to_string());
        line("profile", self.profile.clone());
        line("rate_req_per_s", format!("{:.1}", self.rate_reqs_per_s));
        line("duration_s", format!("{:.1}", self.duration_s));
        line("arrivals", self.arrivals.to_string());
        line("satisfied", self.satisfied.to_string());
        line("unprocessed", self.unprocessed_at_end.to_string());
        line("throughput_req_per_s", format!("{:.2}", self.mean_throughput()));
        line("hit_rate", format!("{:.4}", self.hit_rate()));
        line("orchestration_calls", self.orchestration_calls.to_string());
        line("buckets_moved", self.transfers.to_string());
        writeln!(s, "{:>6}{:>12}{:>12}", "node", "mean_cpu", "max_cpu").unwrap();
        for (i, (mean, max)) in self.node_cpu_mean().iter().zip(self.node_cpu_max()).enumerate() {
            writeln!(s, "{i:>6}{mean:>12.4}{max:>12.4}").unwrap();
        }
        s
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricsReport {
        MetricsReport {
            run_id: "r".into(),
            strategy: Strategy::None,
            profile: "MNIST".into(),
            rate_reqs_per_s: 10.0,
            duration_s: 2.5,
            warmup_s: 0.0,
            bin_ms: 1000.0,
            arrivals: 25,
            satisfied: 20,
            hits: 5,
            misses: 15,
            unprocessed_at_end: 5,
            satisfied_per_bin: vec![8, 8, 4],
            hits_per_bin: vec![2, 2, 1],
            misses_per_bin: vec![6, 6, 3],
            calls_per_bin: vec![0, 1, 0],
            per_edr_cpu: vec![vec![0.5, 0.5, 0.2], vec![0.1, 0.3, 0.2]],
            orchestration_calls: 1,
            gate_triggers: 1,
            skipped_directives: 0,
            transfers: 0,
            bytes_transferred: 0,
            in_flight_misses: 0,
            stale_misses: 0,
            uncached_results: 0,
            evictions: 0,
            latency_samples: vec![],
            plan_log: vec![],
        }
    }

    #[test]
    fn partial_last_bin_rate() {
        let r = report();
        assert_eq!(r.throughput_per_bin(), vec![8.0, 8.0, 8.0]);
        assert_eq!(r.mean_throughput(), 8.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let csv = report().csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        assert_eq!(lines.next().unwrap(), "r,NONE,MNIST,10.0,0.0,8.0,0,0.5,0,2,6,5");
    }

    #[test]
    fn warmup_drops_bins() {
        let mut r = report();
        r.warmup_s = 1.0;
        assert_eq!(r.csv_string().lines().count(), 1 + 2 * 2);
        assert_eq!(r.mean_throughput(), 12.0 / 1.5);
        assert_eq!(r.node_cpu_mean()[1], 0.25);
    }

    #[test]
    fn conservation_check() {
        let mut r = report();
        assert!(r.check_conservation().is_ok());
        r.unprocessed_at_end = 4;
        assert!(r.check_conservation().is_err());
    }

    #[test]
    fn summary_is_fixed_width() {
        let s = report().summary();
        assert!(s.contains("strategy              NONE\n"));
        assert!(s.contains("     0      0.4000      0.5000\n"));
    }

    #[test]
    fn std_dev_known() {
        assert_eq!(std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), 2.0);
    }
}

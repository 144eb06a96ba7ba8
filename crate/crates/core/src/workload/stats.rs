use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceError, DeviceProfile};

use super::spec::WorkloadSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("percentile of an empty sample set")]
pub struct EmptySamples;

/// Nearest-rank percentile: the value at 1-based rank ⌈p/100 · n⌉ of the
/// sorted samples.
pub fn percentile(samples: &[u64], p: f64) -> Result<u64, EmptySamples> {
    if samples.is_empty() {
        return Err(EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(percentile_sorted(&sorted, p))
}

/// As [`percentile`], for already sorted non-empty input.
pub fn percentile_sorted(sorted: &[u64], p: f64) -> u64 {
    let n = sorted.len();
    let rank = (p / 100.0 * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// fio's percentile key format.
pub fn percentile_key(p: f64) -> String {
    format!("{p:.6}")
}

/// Raw measurements of one job.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobSamples {
    pub read_lat_ns: Vec<u64>,
    pub write_lat_ns: Vec<u64>,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub errors: BTreeMap<DeviceError, u64>,
    pub unwritten_reads: u64,
}

impl JobSamples {
    pub fn merge<'a>(all: impl IntoIterator<Item = &'a JobSamples>) -> JobSamples {
        let mut out = JobSamples::default();
        for s in all {
            out.read_lat_ns.extend_from_slice(&s.read_lat_ns);
            out.write_lat_ns.extend_from_slice(&s.write_lat_ns);
            out.read_bytes += s.read_bytes;
            out.write_bytes += s.write_bytes;
            for (e, n) in &s.errors {
                *out.errors.entry(*e).or_default() += n;
            }
            out.unwritten_reads += s.unwritten_reads;
        }
        out
    }

    pub fn total_errors(&self) -> u64 {
        self.errors.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClatStats {
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    pub percentile: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirStats {
    pub total_ios: u64,
    pub io_bytes: u64,
    pub iops: f64,
    pub bw_bytes: f64,
    pub clat_ns: ClatStats,
}

impl DirStats {
    fn build(lat: &[u64], bytes: u64, window_s: f64, percentiles: &[f64]) -> DirStats {
        let mut sorted = lat.to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as u64;
        let clat_ns = if sorted.is_empty() {
            ClatStats::default()
        } else {
            ClatStats {
                min: sorted[0],
                max: *sorted.last().unwrap(),
                mean: sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64,
                percentile: percentiles
                    .iter()
                    .map(|&p| (percentile_key(p), percentile_sorted(&sorted, p)))
                    .collect(),
            }
        };
        let (iops, bw_bytes) = if window_s > 0.0 {
            (n as f64 / window_s, bytes as f64 / window_s)
        } else {
            (0.0, 0.0)
        };
        DirStats {
            total_ios: n,
            io_bytes: bytes,
            iops,
            bw_bytes,
            clat_ns,
        }
    }

    /// Latency at percentile `p` in µs, if it was requested and sampled.
    pub fn percentile_us(&self, p: f64) -> Option<f64> {
        self.clat_ns
            .percentile
            .get(&percentile_key(p))
            .map(|&ns| ns as f64 / 1000.0)
    }

    pub fn mean_us(&self) -> f64 {
        self.clat_ns.mean / 1000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub jobname: String,
    pub read: DirStats,
    pub write: DirStats,
    pub errors: BTreeMap<String, u64>,
    pub unwritten_reads: u64,
}

impl JobReport {
    pub fn from_samples(name: &str, s: &JobSamples, window_s: f64, percentiles: &[f64]) -> JobReport {
        JobReport {
            jobname: name.to_string(),
            read: DirStats::build(&s.read_lat_ns, s.read_bytes, window_s, percentiles),
            write: DirStats::build(&s.write_lat_ns, s.write_bytes, window_s, percentiles),
            errors: DeviceError::ALL
                .iter()
                .map(|e| (e.name().to_string(), s.errors.get(e).copied().unwrap_or(0)))
                .collect(),
            unwritten_reads: s.unwritten_reads,
        }
    }

    pub fn error_count(&self, e: DeviceError) -> u64 {
        self.errors.get(e.name()).copied().unwrap_or(0)
    }

    pub fn total_errors(&self) -> u64 {
        self.errors.values().sum()
    }

    /// The direction that saw traffic (writes win ties).
    pub fn primary(&self) -> &DirStats {
        if self.write.total_ios > 0 || self.read.total_ios == 0 && self.write.io_bytes > 0 {
            &self.write
        } else {
            &self.read
        }
    }
}

/// The resolved inputs of a run, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: DeviceProfile,
    pub job: WorkloadSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub config: RunConfig,
    /// Measurement window (runtime minus ramp), ns.
    pub window_ns: u64,
    /// Simulated time at which the run ended, ns.
    pub duration_ns: u64,
    pub per_job: Vec<JobReport>,
    pub group: JobReport,
}

#[derive(Serialize)]
struct FioJson<'a> {
    config: &'a RunConfig,
    window_ns: u64,
    duration_ns: u64,
    jobs: Vec<&'a JobReport>,
}

pub const CSV_HEADER_PREFIX: &str =
    "jobname,dir,total_ios,io_bytes,iops,bw_bytes,lat_mean_ns,lat_min_ns,lat_max_ns";

impl StatsReport {
    /// Reported jobs: the merged group under group_reporting, else every job.
    pub fn jobs(&self) -> Vec<&JobReport> {
        if self.config.job.group_reporting {
            vec![&self.group]
        } else {
            self.per_job.iter().collect()
        }
    }

    /// fio-shaped JSON.
    pub fn to_json(&self) -> String {
        let doc = FioJson {
            config: &self.config,
            window_ns: self.window_ns,
            duration_ns: self.duration_ns,
            jobs: self.jobs(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per reported job and direction.
    pub fn to_csv(&self) -> String {
        let pcts: Vec<String> = self
            .config
            .job
            .percentile_list
            .iter()
            .map(|&p| percentile_key(p))
            .collect();
        let mut out = String::from(CSV_HEADER_PREFIX);
        for p in &pcts {
            let _ = write!(out, ",p{p}");
        }
        out.push_str(",errors,unwritten_reads\n");
        for job in self.jobs() {
            for (dir, d) in [("read", &job.read), ("write", &job.write)] {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    job.jobname,
                    dir,
                    d.total_ios,
                    d.io_bytes,
                    d.iops,
                    d.bw_bytes,
                    d.clat_ns.mean,
                    d.clat_ns.min,
                    d.clat_ns.max
                );
                for p in &pcts {
                    match d.clat_ns.percentile.get(p) {
                        Some(v) => {
                            let _ = write!(out, ",{v}");
                        }
                        None => out.push(','),
                    }
                }
                let _ = writeln!(out, ",{},{}", job.total_errors(), job.unwritten_reads);
            }
        }
        out
    }

    /// Human-oriented summary, not schema-stable.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<5} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10} {:>7}\n",
            "job", "dir", "ios", "iops", "bw MiB/s", "mean us", "p50 us", "p95 us", "errors"
        );
        for job in self.jobs() {
            for (dir, d) in [("read", &job.read), ("write", &job.write)] {
                if d.total_ios == 0 {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "{:<16} {:<5} {:>10} {:>12.0} {:>12.1} {:>10.2} {:>10.2} {:>10.2} {:>7}",
                    job.jobname,
                    dir,
                    d.total_ios,
                    d.iops,
                    d.bw_bytes / (1024.0 * 1024.0),
                    d.mean_us(),
                    d.percentile_us(50.0).unwrap_or(f64::NAN),
                    d.percentile_us(95.0).unwrap_or(f64::NAN),
                    job.total_errors()
                );
            }
        }
        out
    }

    /// `iops=… bw=… p50=… p95=…` for the group's dominant direction.
    pub fn summary_line(&self) -> String {
        let d = self.group.primary();
        format!(
            "iops={:.0} bw={:.1}MiB/s p50={:.2}us p95={:.2}us errors={}",
            d.iops,
            d.bw_bytes / (1024.0 * 1024.0),
            d.percentile_us(50.0).unwrap_or(f64::NAN),
            d.percentile_us(95.0).unwrap_or(f64::NAN),
            self.group.total_errors()
        )
    }
}

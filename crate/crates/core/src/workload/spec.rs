use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::device::DeviceProfile;
use crate::scheduler::{SchedulerKind, DEFAULT_MERGE_CAP_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RwMode {
    Read,
    RandRead,
    Write,
    RandWrite,
}

impl RwMode {
    pub fn is_write(self) -> bool {
        matches!(self, RwMode::Write | RwMode::RandWrite)
    }

    pub fn is_random(self) -> bool {
        matches!(self, RwMode::RandRead | RwMode::RandWrite)
    }
}

impl FromStr for RwMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(RwMode::Read),
            "randread" => Ok(RwMode::RandRead),
            "write" => Ok(RwMode::Write),
            "randwrite" => Ok(RwMode::RandWrite),
            other => Err(format!("unknown rw mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneMode {
    #[default]
    None,
    Zbd,
}

impl FromStr for ZoneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ZoneMode::None),
            "zbd" => Ok(ZoneMode::Zbd),
            other => Err(format!("unknown zonemode {other:?}")),
        }
    }
}

/// Which namespace a job addresses. Offsets are relative to its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    #[default]
    Zoned,
    Conventional,
}

impl FromStr for Namespace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zoned" => Ok(Namespace::Zoned),
            "conventional" => Ok(Namespace::Conventional),
            other => Err(format!("unknown namespace {other:?}")),
        }
    }
}

/// A fio-style size: plain bytes (`4096`, `4Ki`, `512K`, `1M`) or zones (`3z`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeSpec {
    Bytes(u64),
    Zones(u64),
}

impl SizeSpec {
    pub fn sectors(self, profile: &DeviceProfile) -> u64 {
        match self {
            SizeSpec::Bytes(b) => b / profile.sector_size,
            SizeSpec::Zones(z) => z * profile.zone_size,
        }
    }
}

impl Default for SizeSpec {
    fn default() -> Self {
        SizeSpec::Bytes(0)
    }
}

impl fmt::Display for SizeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeSpec::Bytes(b) => write!(f, "{b}"),
            SizeSpec::Zones(z) => write!(f, "{z}z"),
        }
    }
}

impl FromStr for SizeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (num, suffix) = s.split_at(split);
        let n: u64 = num.parse().map_err(|_| format!("invalid size {s:?}"))?;
        let mult: u64 = match suffix.to_ascii_lowercase().as_str() {
            "" | "b" => 1,
            "k" | "ki" | "kib" | "kb" => 1 << 10,
            "m" | "mi" | "mib" | "mb" => 1 << 20,
            "g" | "gi" | "gib" | "gb" => 1 << 30,
            "t" | "ti" | "tib" | "tb" => 1 << 40,
            "z" => return Ok(SizeSpec::Zones(n)),
            _ => return Err(format!("invalid size suffix in {s:?}")),
        };
        n.checked_mul(mult)
            .map(SizeSpec::Bytes)
            .ok_or_else(|| format!("size {s:?} overflows"))
    }
}

impl Serialize for SizeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SizeSpec::Bytes(b) => s.serialize_u64(*b),
            SizeSpec::Zones(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for SizeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(SizeSpec::Bytes(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Accepts `[50, 95]` or fio's `"50:95"`.
fn de_percentiles<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        List(Vec<f64>),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::List(v) => Ok(v),
        Raw::Str(s) => parse_percentile_list(&s).map_err(serde::de::Error::custom),
    }
}

pub fn parse_percentile_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid percentile {p:?}")))
        .collect()
}

fn default_name() -> String {
    "job".to_string()
}
fn default_one() -> u32 {
    1
}
fn default_bs() -> SizeSpec {
    SizeSpec::Bytes(4096)
}
fn default_runtime() -> f64 {
    1.0
}
fn default_percentiles() -> Vec<f64> {
    vec![50.0, 95.0]
}
fn default_merge_cap() -> SizeSpec {
    SizeSpec::Bytes(DEFAULT_MERGE_CAP_BYTES)
}
fn default_scheduler() -> SchedulerKind {
    SchedulerKind::MqDeadline
}

/// A fio-like job description. Field names follow fio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub rw: RwMode,
    #[serde(default = "default_bs")]
    pub bs: SizeSpec,
    #[serde(default = "default_one")]
    pub iodepth: u32,
    #[serde(default = "default_one")]
    pub numjobs: u32,
    /// Bytes per job; defaults to the rest of the namespace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<SizeSpec>,
    #[serde(default)]
    pub offset: SizeSpec,
    #[serde(default)]
    pub offset_increment: SizeSpec,
    #[serde(default)]
    pub zonemode: ZoneMode,
    #[serde(default)]
    pub namespace: Namespace,
    /// Simulated seconds, ramp included.
    #[serde(default = "default_runtime")]
    pub runtime: f64,
    #[serde(default)]
    pub ramp_time: f64,
    #[serde(default)]
    pub time_based: bool,
    #[serde(default = "default_percentiles", deserialize_with = "de_percentiles")]
    pub percentile_list: Vec<f64>,
    #[serde(default)]
    pub group_reporting: bool,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerKind,
    #[serde(default)]
    pub seed: u64,
    /// Write the target namespace in full before the run.
    #[serde(default)]
    pub prefill: bool,
    #[serde(default = "default_merge_cap")]
    pub merge_cap: SizeSpec,
}

impl WorkloadSpec {
    pub fn new(rw: RwMode) -> Self {
        WorkloadSpec {
            name: default_name(),
            rw,
            bs: default_bs(),
            iodepth: 1,
            numjobs: 1,
            size: None,
            offset: SizeSpec::default(),
            offset_increment: SizeSpec::default(),
            zonemode: ZoneMode::None,
            namespace: Namespace::Zoned,
            runtime: default_runtime(),
            ramp_time: 0.0,
            time_based: false,
            percentile_list: default_percentiles(),
            group_reporting: false,
            scheduler: default_scheduler(),
            seed: 0,
            prefill: false,
            merge_cap: default_merge_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("bs: {0}")]
    BlockSize(String),
    #[error("iodepth must be at least 1")]
    IoDepth,
    #[error("numjobs must be at least 1")]
    NumJobs,
    #[error("percentile_list: {0} is outside (0, 100)")]
    Percentile(f64),
    #[error("runtime: {0}")]
    Runtime(String),
    #[error("size: {0}")]
    Size(String),
    #[error("offset_increment: job {job} range [{start}, {end}) exceeds the {namespace} namespace of {limit} sectors")]
    JobRange {
        job: u32,
        start: u64,
        end: u64,
        limit: u64,
        namespace: &'static str,
    },
    #[error("zonemode: {0}")]
    ZoneMode(String),
    #[error("namespace: the profile has no conventional region")]
    NoConventional,
    #[error("merge_cap: {0}")]
    MergeCap(String),
    #[error("profile: {0}")]
    Profile(String),
}

/// A job's LBA range after resolving sizes against a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobRange {
    /// Absolute start LBA.
    pub start: u64,
    /// Absolute end LBA (exclusive).
    pub end: u64,
}

impl WorkloadSpec {
    pub fn bs_sectors(&self, profile: &DeviceProfile) -> u64 {
        self.bs.sectors(profile)
    }

    fn bs_bytes(&self, profile: &DeviceProfile) -> u64 {
        match self.bs {
            SizeSpec::Bytes(b) => b,
            SizeSpec::Zones(z) => z * profile.zone_size_bytes(),
        }
    }

    /// (absolute base LBA, length) of the namespace the job addresses.
    pub fn namespace_bounds(&self, profile: &DeviceProfile) -> (u64, u64) {
        match self.namespace {
            Namespace::Conventional => (0, profile.conventional_sectors),
            Namespace::Zoned => (
                profile.zoned_start(),
                u64::from(profile.nr_zones) * profile.zone_size,
            ),
        }
    }

    pub fn job_range(&self, profile: &DeviceProfile, job: u32) -> JobRange {
        let (base, len) = self.namespace_bounds(profile);
        let first = self.offset.sectors(profile) + u64::from(job) * self.offset_increment.sectors(profile);
        let size = match self.size {
            Some(s) => s.sectors(profile),
            None => {
                let last = self.offset.sectors(profile)
                    + u64::from(self.numjobs.saturating_sub(1)) * self.offset_increment.sectors(profile);
                len.saturating_sub(last)
            }
        };
        JobRange {
            start: base + first,
            end: base + first + size,
        }
    }

    pub fn validate(&self, profile: &DeviceProfile) -> Result<(), SpecError> {
        profile
            .validate()
            .map_err(|e| SpecError::Profile(e.to_string()))?;
        let bs = self.bs_bytes(profile);
        if bs == 0 || bs % profile.sector_size != 0 {
            return Err(SpecError::BlockSize(format!(
                "{bs} is not a positive multiple of the {} B sector size",
                profile.sector_size
            )));
        }
        if self.iodepth == 0 {
            return Err(SpecError::IoDepth);
        }
        if self.numjobs == 0 {
            return Err(SpecError::NumJobs);
        }
        if let Some(&p) = self.percentile_list.iter().find(|&&p| !(p > 0.0 && p < 100.0)) {
            return Err(SpecError::Percentile(p));
        }
        if !(self.runtime.is_finite() && self.runtime > 0.0) {
            return Err(SpecError::Runtime(format!("{} must be positive", self.runtime)));
        }
        if !(self.ramp_time.is_finite() && self.ramp_time >= 0.0 && self.ramp_time < self.runtime) {
            return Err(SpecError::Runtime(format!(
                "ramp_time {} must be in [0, runtime)",
                self.ramp_time
            )));
        }
        let merge_cap = match self.merge_cap {
            SizeSpec::Bytes(b) => b,
            SizeSpec::Zones(_) => return Err(SpecError::MergeCap("must be given in bytes".into())),
        };
        if merge_cap < bs {
            return Err(SpecError::MergeCap(format!("{merge_cap} is smaller than bs {bs}")));
        }
        if self.namespace == Namespace::Conventional {
            if profile.conventional_sectors == 0 {
                return Err(SpecError::NoConventional);
            }
            if self.zonemode == ZoneMode::Zbd {
                return Err(SpecError::ZoneMode(
                    "zbd requires the zoned namespace".into(),
                ));
            }
        }
        let bs_sectors = self.bs_sectors(profile);
        let (base, len) = self.namespace_bounds(profile);
        let namespace = match self.namespace {
            Namespace::Zoned => "zoned",
            Namespace::Conventional => "conventional",
        };
        for job in 0..self.numjobs {
            let r = self.job_range(profile, job);
            if r.end > base + len || r.start >= r.end {
                return Err(SpecError::JobRange {
                    job,
                    start: r.start - base,
                    end: r.end - base,
                    limit: len,
                    namespace,
                });
            }
            if r.end - r.start < bs_sectors {
                return Err(SpecError::Size(format!(
                    "job {job} range of {} sectors is smaller than bs",
                    r.end - r.start
                )));
            }
            if self.zonemode == ZoneMode::Zbd {
                if (r.start - base) % profile.zone_size != 0 {
                    return Err(SpecError::ZoneMode(format!(
                        "job {job} starts at sector {} which is not a zone start",
                        r.start - base
                    )));
                }
                if profile.zone_capacity < bs_sectors {
                    return Err(SpecError::ZoneMode("bs exceeds the zone capacity".into()));
                }
            }
        }
        Ok(())
    }
}

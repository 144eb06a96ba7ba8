//! Service-time model.
//!
//! Reads are served by `k_units` independent parallel units. LBAs are striped
//! over the units in 4 KiB stripes; a unit serves one read at a time in FIFO
//! order. A read of `size` bytes costs `read_service(size)` of unit time,
//! split over the units its stripes touch in proportion to the bytes each
//! one holds.
//!
//! Writes and appends share a single drain server.
//!
//! Under mq-deadline every request is additionally charged
//! `sched_overhead_coeff × queued` microseconds, where `queued` is the number
//! of requests the scheduler is tracking when the request is dispatched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STRIPE_BYTES: u64 = 4096;

const MIB: f64 = 1024.0 * 1024.0;
const GIB: f64 = 1024.0 * MIB;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    pub k_units: u32,
    /// Minimum unit time of a read, µs.
    pub t_read_base_us: f64,
    /// Per-unit read bandwidth, bytes/s.
    pub unit_read_bw: f64,
    /// Minimum drain time of a write, µs.
    pub t_write_base_us: f64,
    /// Shared write-drain bandwidth, bytes/s.
    pub write_bw: f64,
    /// mq-deadline cost per tracked request, µs.
    pub sched_overhead_coeff_us: f64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            k_units: 8,
            t_read_base_us: 27.0,
            unit_read_bw: 256.0 * MIB,
            t_write_base_us: 17.8,
            write_bw: GIB,
            sched_overhead_coeff_us: 0.33,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("k_units must be at least 1")]
    NoUnits,
    #[error("{0} must be strictly positive and finite")]
    NonPositive(&'static str),
    #[error("{0} must be non-negative and finite")]
    Negative(&'static str),
}

impl LatencyParams {
    pub fn validate(&self) -> Result<(), LatencyError> {
        if self.k_units == 0 {
            return Err(LatencyError::NoUnits);
        }
        let fields = [
            ("t_read_base_us", self.t_read_base_us),
            ("unit_read_bw", self.unit_read_bw),
            ("t_write_base_us", self.t_write_base_us),
            ("write_bw", self.write_bw),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(LatencyError::NonPositive(name));
            }
        }
        // zero overhead is how mq-deadline is compared with none on equal terms
        let c = self.sched_overhead_coeff_us;
        if !(c.is_finite() && c >= 0.0) {
            return Err(LatencyError::Negative("sched_overhead_coeff_us"));
        }
        Ok(())
    }

    pub fn unit_for_lba(&self, lba: u64, stripe: u64) -> u32 {
        ((lba / stripe.max(1)) % u64::from(self.k_units)) as u32
    }

    /// Unit time of a read of `size` bytes, µs.
    pub fn read_service(&self, size: u64) -> f64 {
        let transfer = size as f64 / self.unit_read_bw * 1e6;
        self.t_read_base_us.max(transfer)
    }

    /// Drain time of a write of `size` bytes, µs.
    pub fn write_service(&self, size: u64) -> f64 {
        let transfer = size as f64 / self.write_bw * 1e6;
        self.t_write_base_us.max(transfer)
    }

    pub fn sched_overhead(&self, queued: usize) -> f64 {
        self.sched_overhead_coeff_us * queued as f64
    }

    /// Split a read of `[lba, lba + nlb)` over the units it touches.
    ///
    /// Returns `(unit, µs)` pairs in unit order; the µs values sum to
    /// `read_service(nlb * sector_size)`.
    pub fn read_work(&self, lba: u64, nlb: u64, sector_size: u64) -> Vec<(u32, f64)> {
        let stripe = (STRIPE_BYTES / sector_size).max(1);
        let total = self.read_service(nlb * sector_size);
        let mut per_unit = vec![0u64; self.k_units as usize];
        let end = lba + nlb;
        let mut cur = lba;
        while cur < end {
            let stripe_end = (cur / stripe + 1) * stripe;
            let take = stripe_end.min(end) - cur;
            per_unit[self.unit_for_lba(cur, stripe) as usize] += take;
            cur += take;
        }
        per_unit
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .map(|(u, &s)| (u as u32, total * s as f64 / nlb as f64))
            .collect()
    }
}

/// Device-level targets that `calibrate` inverts into [`LatencyParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Peak small-block read IOPS with every unit busy.
    pub read_peak_iops: f64,
    /// Small-block write IOPS.
    pub write_small_iops: f64,
    /// Peak read bandwidth, bytes/s.
    pub read_peak_bw: f64,
    /// Peak write bandwidth, bytes/s.
    pub write_peak_bw: f64,
    /// How much lower (percent) the none-scheduler median is than the
    /// mq-deadline median for sequential reads at `overhead_queue_depth`.
    pub seqread_overhead_pct: f64,
    #[serde(default = "default_k")]
    pub k_units: u32,
    #[serde(default = "default_block")]
    pub block_size: u64,
    #[serde(default = "default_overhead_qd")]
    pub overhead_queue_depth: u32,
}

fn default_k() -> u32 {
    8
}
fn default_block() -> u64 {
    4096
}
fn default_overhead_qd() -> u32 {
    14
}

impl CalibrationTargets {
    pub fn zn540() -> Self {
        CalibrationTargets {
            read_peak_iops: 296_000.0,
            write_small_iops: 56_000.0,
            read_peak_bw: 2.0 * GIB,
            write_peak_bw: GIB,
            seqread_overhead_pct: 9.95,
            k_units: 8,
            block_size: 4096,
            overhead_queue_depth: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("target {0} must be strictly positive and finite")]
    NonPositive(&'static str),
    #[error("seqread_overhead_pct must be below 100, got {0}")]
    OverheadPct(f64),
    #[error(
        "infeasible: {iops} IOPS at {block} B needs {needed:.0} B/s but the {which} bandwidth target is {bw:.0} B/s"
    )]
    Infeasible {
        which: &'static str,
        iops: f64,
        block: u64,
        needed: f64,
        bw: f64,
    },
}

/// Closed-form inversion of device targets into latency parameters.
pub fn calibrate(t: &CalibrationTargets) -> Result<LatencyParams, CalibrationError> {
    let positive = [
        ("read_peak_iops", t.read_peak_iops),
        ("write_small_iops", t.write_small_iops),
        ("read_peak_bw", t.read_peak_bw),
        ("write_peak_bw", t.write_peak_bw),
        ("seqread_overhead_pct", t.seqread_overhead_pct),
        ("k_units", f64::from(t.k_units)),
        ("block_size", t.block_size as f64),
        ("overhead_queue_depth", f64::from(t.overhead_queue_depth)),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(CalibrationError::NonPositive(name));
        }
    }
    if t.seqread_overhead_pct >= 100.0 {
        return Err(CalibrationError::OverheadPct(t.seqread_overhead_pct));
    }
    let block = t.block_size as f64;
    for (which, iops, bw) in [
        ("read", t.read_peak_iops, t.read_peak_bw),
        ("write", t.write_small_iops, t.write_peak_bw),
    ] {
        let needed = iops * block;
        if needed > bw {
            return Err(CalibrationError::Infeasible {
                which,
                iops,
                block: t.block_size,
                needed,
                bw,
            });
        }
    }

    let k = f64::from(t.k_units);
    let t_read_base_us = k / t.read_peak_iops * 1e6;
    let qd = f64::from(t.overhead_queue_depth);
    let none_latency = qd * t_read_base_us / qd.min(k);
    // none is p lower than mq-deadline: o / (none_latency + o) = p
    let p = t.seqread_overhead_pct / 100.0;
    let sched_overhead_coeff_us = p / (1.0 - p) * none_latency / qd;

    Ok(LatencyParams {
        k_units: t.k_units,
        t_read_base_us,
        unit_read_bw: t.read_peak_bw / k,
        t_write_base_us: 1e6 / t.write_small_iops,
        write_bw: t.write_peak_bw,
        sched_overhead_coeff_us,
    })
}

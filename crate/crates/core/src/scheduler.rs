//! Host I/O scheduler models for zoned namespaces.
//!
//! `MqDeadline` serializes writes per zone: at most one write operation per
//! zone is in flight, queued writes are kept sorted by LBA and the longest
//! LBA-contiguous run starting at the write pointer is merged into a single
//! device operation. Reads, appends and conventional-region writes are
//! dispatched immediately.
//!
//! `None` dispatches every request as-is, in submission order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::device::{Device, DeviceError, DeviceProfile};
use crate::latency::LatencyParams;

pub const DEFAULT_MERGE_CAP_BYTES: u64 = 512 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "mq-deadline")]
    MqDeadline,
    #[serde(rename = "none")]
    None,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::MqDeadline => "mq-deadline",
            SchedulerKind::None => "none",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mq-deadline" => Ok(SchedulerKind::MqDeadline),
            "none" => Ok(SchedulerKind::None),
            other => Err(format!("unknown scheduler {other:?} (expected mq-deadline or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoKind {
    Read,
    Write,
    Append,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoRequest {
    pub id: u64,
    pub kind: IoKind,
    /// Target LBA; for appends, any LBA inside the target zone.
    pub lba: u64,
    pub nlb: u64,
    pub submitted_ns: u64,
}

/// A device-level operation built from one or more host requests.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedOp {
    pub kind: IoKind,
    pub zone: Option<u32>,
    pub start_lba: u64,
    pub nlb: u64,
    pub bytes: u64,
    /// Constituent requests, LBA-contiguous and in LBA order.
    pub requests: Vec<IoRequest>,
    /// Requests tracked by the scheduler when this op was dispatched.
    pub queued_at_dispatch: usize,
    /// Whether this op holds its zone's in-flight write slot.
    serialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub id: u64,
    pub kind: IoKind,
    pub submitted_ns: u64,
    pub completed_ns: u64,
    /// Completion − submission plus scheduler overhead.
    pub latency_ns: u64,
    pub overhead_ns: u64,
    pub bytes: u64,
    pub error: Option<DeviceError>,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    merge_cap_bytes: u64,
    sector_size: u64,
    profile: DeviceProfile,
    latency: LatencyParams,
    ready: VecDeque<IoRequest>,
    // zone -> (lba, id) -> request
    zone_queues: BTreeMap<u32, BTreeMap<(u64, u64), IoRequest>>,
    in_flight: BTreeSet<u32>,
    outstanding: usize,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, profile: &DeviceProfile) -> Self {
        Self::with_merge_cap(kind, profile, DEFAULT_MERGE_CAP_BYTES)
    }

    pub fn with_merge_cap(kind: SchedulerKind, profile: &DeviceProfile, merge_cap_bytes: u64) -> Self {
        Scheduler {
            kind,
            merge_cap_bytes,
            sector_size: profile.sector_size,
            profile: profile.clone(),
            latency: profile.latency,
            ready: VecDeque::new(),
            zone_queues: BTreeMap::new(),
            in_flight: BTreeSet::new(),
            outstanding: 0,
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn merge_cap_bytes(&self) -> u64 {
        self.merge_cap_bytes
    }

    /// Requests accepted by `enqueue` and not yet completed.
    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    /// Zoned writes waiting in per-zone queues.
    pub fn held(&self) -> usize {
        self.zone_queues.values().map(BTreeMap::len).sum()
    }

    pub fn in_flight_writes(&self, zone: u32) -> usize {
        usize::from(self.in_flight.contains(&zone))
    }

    fn serialized_zone(&self, req: &IoRequest) -> Option<u32> {
        if self.kind != SchedulerKind::MqDeadline || req.kind != IoKind::Write {
            return None;
        }
        self.profile.zone_of(req.lba)
    }

    pub fn enqueue(&mut self, req: IoRequest, _now: u64) {
        self.outstanding += 1;
        match self.serialized_zone(&req) {
            Some(zone) => {
                self.zone_queues
                    .entry(zone)
                    .or_default()
                    .insert((req.lba, req.id), req);
            }
            None => self.ready.push_back(req),
        }
    }

    fn single(&self, req: IoRequest, serialized: bool) -> MergedOp {
        MergedOp {
            kind: req.kind,
            zone: self.profile.zone_of(req.lba),
            start_lba: req.lba,
            nlb: req.nlb,
            bytes: req.nlb * self.sector_size,
            requests: vec![req],
            queued_at_dispatch: self.outstanding,
            serialized,
        }
    }

    /// Hand every dispatchable request to the device as merged operations.
    ///
    /// Immediate requests come first in submission order, then serialized
    /// zone writes in zone order.
    pub fn dispatch(&mut self, device: &Device, _now: u64) -> Vec<MergedOp> {
        let mut ops = Vec::new();
        while let Some(req) = self.ready.pop_front() {
            ops.push(self.single(req, false));
        }
        if self.kind == SchedulerKind::None {
            return ops;
        }
        let zones: Vec<u32> = self
            .zone_queues
            .iter()
            .filter(|(z, q)| !q.is_empty() && !self.in_flight.contains(z))
            .map(|(&z, _)| z)
            .collect();
        for zone in zones {
            let wp = device.zone(zone).map(|z| z.write_pointer).unwrap_or(0);
            let queue = self.zone_queues.get_mut(&zone).unwrap();
            let (&(head_lba, _), _) = queue.iter().next().unwrap();
            if head_lba > wp {
                // Hold until the gap below is filled.
                continue;
            }
            let mut reqs = Vec::new();
            if head_lba < wp {
                // Can never become contiguous; the device rejects it.
                let (_, req) = queue.pop_first().unwrap();
                reqs.push(req);
            } else {
                let mut end = wp;
                let mut bytes = 0;
                while let Some((&(lba, _), req)) = queue.iter().next() {
                    let req_bytes = req.nlb * self.sector_size;
                    if lba != end || (!reqs.is_empty() && bytes + req_bytes > self.merge_cap_bytes) {
                        break;
                    }
                    end += req.nlb;
                    bytes += req_bytes;
                    let (_, req) = queue.pop_first().unwrap();
                    reqs.push(req);
                }
            }
            if queue.is_empty() {
                self.zone_queues.remove(&zone);
            }
            self.in_flight.insert(zone);
            let nlb: u64 = reqs.iter().map(|r| r.nlb).sum();
            ops.push(MergedOp {
                kind: IoKind::Write,
                zone: Some(zone),
                start_lba: reqs[0].lba,
                nlb,
                bytes: nlb * self.sector_size,
                requests: reqs,
                queued_at_dispatch: self.outstanding,
                serialized: true,
            });
        }
        ops
    }

    fn overhead_ns(&self, queued: usize) -> u64 {
        match self.kind {
            SchedulerKind::None => 0,
            SchedulerKind::MqDeadline => (self.latency.sched_overhead(queued) * 1000.0).round() as u64,
        }
    }

    /// Retire a dispatched op; every constituent completes at `now`.
    pub fn complete(&mut self, op: &MergedOp, now: u64, result: Result<(), DeviceError>) -> Vec<Completion> {
        if op.serialized {
            if let Some(zone) = op.zone {
                self.in_flight.remove(&zone);
            }
        }
        self.outstanding -= op.requests.len();
        let overhead_ns = self.overhead_ns(op.queued_at_dispatch);
        op.requests
            .iter()
            .map(|r| Completion {
                id: r.id,
                kind: r.kind,
                submitted_ns: r.submitted_ns,
                completed_ns: now,
                latency_ns: now - r.submitted_ns + overhead_ns,
                overhead_ns,
                bytes: r.nlb * self.sector_size,
                error: result.err(),
            })
            .collect()
    }

    /// Fail every held write with `WriteNotAtWritePointer`.
    pub fn drain_held(&mut self, now: u64) -> Vec<Completion> {
        let queues = std::mem::take(&mut self.zone_queues);
        let mut out = Vec::new();
        for (_, queue) in queues {
            for (_, r) in queue {
                self.outstanding -= 1;
                out.push(Completion {
                    id: r.id,
                    kind: r.kind,
                    submitted_ns: r.submitted_ns,
                    completed_ns: now,
                    latency_ns: now - r.submitted_ns,
                    overhead_ns: 0,
                    bytes: r.nlb * self.sector_size,
                    error: Some(DeviceError::WriteNotAtWritePointer),
                });
            }
        }
        out
    }
}

/// Apply an op to the device state. Reads only validate.
pub fn apply_to_device(device: &mut Device, op: &MergedOp) -> Result<bool, DeviceError> {
    match op.kind {
        IoKind::Read => device.submit_read(op.start_lba, op.nlb).map(|a| a.unwritten),
        IoKind::Write => device.submit_write(op.start_lba, op.nlb).map(|_| false),
        IoKind::Append => {
            let zone = op.zone.ok_or(DeviceError::OutOfRange)?;
            device.submit_append(zone, op.nlb).map(|_| false)
        }
    }
}

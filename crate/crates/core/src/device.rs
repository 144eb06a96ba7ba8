//! Zoned namespace device model.
//!
//! A [`Device`] owns one optional conventional (randomly writable) region at
//! the bottom of the LBA space followed by `nr_zones` sequential-write-required
//! zones. Every zone carries a state and a write pointer; writes must land
//! exactly on the write pointer and the number of OPEN + CLOSED zones is
//! bounded by `max_active_zones`.
//!
//! Only data validity is tracked, never payloads.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::LatencyParams;

/// Default zone-append size limit (128 KiB at 512 B sectors).
pub const DEFAULT_MAX_APPEND_SECTORS: u64 = 256;

/// Static geometry and limits of a simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sector_size: u64,
    #[serde(rename = "zone_size_sectors")]
    pub zone_size: u64,
    #[serde(rename = "zone_capacity_sectors")]
    pub zone_capacity: u64,
    pub nr_zones: u32,
    pub max_active_zones: u32,
    #[serde(default = "default_max_append")]
    pub max_append_sectors: u64,
    #[serde(default)]
    pub conventional_sectors: u64,
    #[serde(default)]
    pub latency: LatencyParams,
}

fn default_max_append() -> u64 {
    DEFAULT_MAX_APPEND_SECTORS
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("sector_size must be 512 or 4096, got {0}")]
    SectorSize(u64),
    #[error("zone_size_sectors must be a non-zero power of two, got {0}")]
    ZoneSize(u64),
    #[error("zone_capacity_sectors ({capacity}) must be in 1..=zone_size_sectors ({size})")]
    ZoneCapacity { capacity: u64, size: u64 },
    #[error("nr_zones must be at least 1")]
    NoZones,
    #[error("max_active_zones must be at least 1")]
    NoActiveZones,
    #[error("max_append_sectors must be at least 1")]
    NoAppend,
    #[error("conventional_sectors ({0}) must be a multiple of zone_size_sectors")]
    ConventionalAlignment(u64),
    #[error("invalid latency parameters: {0}")]
    Latency(String),
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.sector_size != 512 && self.sector_size != 4096 {
            return Err(ProfileError::SectorSize(self.sector_size));
        }
        if self.zone_size == 0 || !self.zone_size.is_power_of_two() {
            return Err(ProfileError::ZoneSize(self.zone_size));
        }
        if self.zone_capacity == 0 || self.zone_capacity > self.zone_size {
            return Err(ProfileError::ZoneCapacity {
                capacity: self.zone_capacity,
                size: self.zone_size,
            });
        }
        if self.nr_zones == 0 {
            return Err(ProfileError::NoZones);
        }
        if self.max_active_zones == 0 {
            return Err(ProfileError::NoActiveZones);
        }
        if self.max_append_sectors == 0 {
            return Err(ProfileError::NoAppend);
        }
        if self.conventional_sectors % self.zone_size != 0 {
            return Err(ProfileError::ConventionalAlignment(self.conventional_sectors));
        }
        self.latency
            .validate()
            .map_err(|e| ProfileError::Latency(e.to_string()))
    }

    /// First LBA of the zoned region.
    pub fn zoned_start(&self) -> u64 {
        self.conventional_sectors
    }

    pub fn zone_start(&self, zone: u32) -> u64 {
        self.conventional_sectors + u64::from(zone) * self.zone_size
    }

    /// One past the last addressable LBA.
    pub fn total_sectors(&self) -> u64 {
        self.zone_start(self.nr_zones)
    }

    pub fn zone_size_bytes(&self) -> u64 {
        self.zone_size * self.sector_size
    }

    /// Sectors per 4 KiB latency-model stripe (at least one).
    pub fn stripe_sectors(&self) -> u64 {
        (crate::latency::STRIPE_BYTES / self.sector_size).max(1)
    }

    /// Zone index holding `lba`, or `None` for conventional / out of range LBAs.
    pub fn zone_of(&self, lba: u64) -> Option<u32> {
        if lba < self.conventional_sectors || lba >= self.total_sectors() {
            return None;
        }
        Some(((lba - self.conventional_sectors) >> self.zone_size.trailing_zeros()) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ZoneState {
    Empty,
    Open,
    Closed,
    Full,
    ReadOnly,
    Offline,
}

impl ZoneState {
    pub fn is_active(self) -> bool {
        matches!(self, ZoneState::Open | ZoneState::Closed)
    }

    pub fn is_writable(self) -> bool {
        matches!(self, ZoneState::Empty | ZoneState::Open | ZoneState::Closed)
    }
}

impl fmt::Display for ZoneState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ZoneState::Empty => "EMPTY",
            ZoneState::Open => "OPEN",
            ZoneState::Closed => "CLOSED",
            ZoneState::Full => "FULL",
            ZoneState::ReadOnly => "READ_ONLY",
            ZoneState::Offline => "OFFLINE",
        };
        f.write_str(s)
    }
}

/// Zone descriptor, also used as the report-zones snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub id: u32,
    pub start_lba: u64,
    pub write_pointer: u64,
    pub capacity: u64,
    pub state: ZoneState,
}

impl Zone {
    pub fn written_sectors(&self) -> u64 {
        self.write_pointer - self.start_lba
    }

    pub fn remaining(&self) -> u64 {
        self.start_lba + self.capacity - self.write_pointer
    }
}

/// Zone management actions. `SetReadOnly` and `SetOffline` are fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneAction {
    Open,
    Close,
    Finish,
    Reset,
    SetReadOnly,
    SetOffline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error, Serialize, Deserialize)]
pub enum DeviceError {
    #[error("write not at the zone write pointer")]
    WriteNotAtWritePointer,
    #[error("maximum number of active zones exceeded")]
    MaxActiveZonesExceeded,
    #[error("zone is not writable")]
    ZoneNotWritable,
    #[error("LBA range out of device bounds")]
    OutOfRange,
    #[error("zone append larger than the device limit")]
    AppendTooLarge,
    #[error("request crosses a zone boundary")]
    CrossZoneBoundary,
    #[error("illegal zone state transition")]
    IllegalTransition,
}

impl DeviceError {
    pub const ALL: [DeviceError; 7] = [
        DeviceError::WriteNotAtWritePointer,
        DeviceError::MaxActiveZonesExceeded,
        DeviceError::ZoneNotWritable,
        DeviceError::OutOfRange,
        DeviceError::AppendTooLarge,
        DeviceError::CrossZoneBoundary,
        DeviceError::IllegalTransition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceError::WriteNotAtWritePointer => "WriteNotAtWritePointer",
            DeviceError::MaxActiveZonesExceeded => "MaxActiveZonesExceeded",
            DeviceError::ZoneNotWritable => "ZoneNotWritable",
            DeviceError::OutOfRange => "OutOfRange",
            DeviceError::AppendTooLarge => "AppendTooLarge",
            DeviceError::CrossZoneBoundary => "CrossZoneBoundary",
            DeviceError::IllegalTransition => "IllegalTransition",
        }
    }
}

/// Result of an accepted write or append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteAck {
    /// LBA the data landed at.
    pub lba: u64,
    /// Zone touched, `None` for the conventional region.
    pub zone: Option<u32>,
    pub prev_state: Option<ZoneState>,
    pub new_state: Option<ZoneState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadAck {
    pub zone: Option<u32>,
    /// Set when any sector of the range was never written.
    pub unwritten: bool,
}

/// One zone state change, recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoneTransition {
    pub zone: u32,
    pub from: ZoneState,
    pub to: ZoneState,
    pub active_after: u32,
}

/// Set of written half-open sector ranges, coalesced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    ranges: BTreeMap<u64, u64>,
}

impl RangeSet {
    pub fn insert(&mut self, start: u64, end: u64) {
        if start >= end {
            return;
        }
        let mut lo = start;
        let mut hi = end;
        // Absorb a range that starts before `start` and touches it.
        if let Some((&s, &e)) = self.ranges.range(..=start).next_back() {
            if e >= start {
                lo = s;
                hi = hi.max(e);
            }
        }
        let overlapping: Vec<u64> = self.ranges.range(lo..=hi).map(|(&s, _)| s).collect();
        for s in overlapping {
            let e = self.ranges.remove(&s).unwrap();
            hi = hi.max(e);
        }
        self.ranges.insert(lo, hi);
    }

    pub fn covers(&self, start: u64, end: u64) -> bool {
        if start >= end {
            return true;
        }
        match self.ranges.range(..=start).next_back() {
            Some((_, &e)) => e >= end,
            None => false,
        }
    }

    pub fn clear(&mut self) {
        self.ranges.clear();
    }

    pub fn len_sectors(&self) -> u64 {
        self.ranges.iter().map(|(s, e)| e - s).sum()
    }
}

/// Mutable device state: zones, active-zone accounting and written ranges.
#[derive(Debug, Clone)]
pub struct Device {
    profile: DeviceProfile,
    zones: Vec<Zone>,
    active_count: u32,
    conventional_written: RangeSet,
    trace: Option<Vec<ZoneTransition>>,
}

impl Device {
    pub fn new(profile: DeviceProfile) -> Result<Self, ProfileError> {
        profile.validate()?;
        let zones = (0..profile.nr_zones)
            .map(|id| {
                let start = profile.zone_start(id);
                Zone {
                    id,
                    start_lba: start,
                    write_pointer: start,
                    capacity: profile.zone_capacity,
                    state: ZoneState::Empty,
                }
            })
            .collect();
        Ok(Device {
            profile,
            zones,
            active_count: 0,
            conventional_written: RangeSet::default(),
            trace: None,
        })
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn active_count(&self) -> u32 {
        self.active_count
    }

    pub fn zone(&self, id: u32) -> Option<&Zone> {
        self.zones.get(id as usize)
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    /// Start recording zone state transitions.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[ZoneTransition] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Active zone count computed from scratch.
    pub fn recount_active(&self) -> u32 {
        self.zones.iter().filter(|z| z.state.is_active()).count() as u32
    }

    /// Written sectors of a zone (zoned region written map).
    pub fn written_sectors(&self, zone: u32) -> Option<u64> {
        self.zone(zone).map(Zone::written_sectors)
    }

    pub fn conventional_written(&self) -> &RangeSet {
        &self.conventional_written
    }

    pub fn report_zones(&self, first: u32, count: u32) -> Result<Vec<Zone>, DeviceError> {
        let end = first.checked_add(count).ok_or(DeviceError::OutOfRange)?;
        if end > self.profile.nr_zones || first >= self.profile.nr_zones {
            return Err(DeviceError::OutOfRange);
        }
        Ok(self.zones[first as usize..end as usize].to_vec())
    }

    fn set_state(&mut self, zone: u32, to: ZoneState) {
        let z = &mut self.zones[zone as usize];
        let from = z.state;
        if from == to {
            return;
        }
        match (from.is_active(), to.is_active()) {
            (false, true) => self.active_count += 1,
            (true, false) => self.active_count -= 1,
            _ => {}
        }
        z.state = to;
        debug_assert!(self.active_count <= self.profile.max_active_zones);
        let active_after = self.active_count;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(ZoneTransition {
                zone,
                from,
                to,
                active_after,
            });
        }
    }

    fn has_active_slot(&self) -> bool {
        self.active_count < self.profile.max_active_zones
    }

    pub fn zone_mgmt(&mut self, zone: u32, action: ZoneAction) -> Result<ZoneState, DeviceError> {
        let z = *self.zone(zone).ok_or(DeviceError::OutOfRange)?;
        use ZoneState::*;
        let next = match action {
            ZoneAction::Open => match z.state {
                Empty if !self.has_active_slot() => {
                    return Err(DeviceError::MaxActiveZonesExceeded)
                }
                Empty | Closed | Open => Open,
                Full | ReadOnly | Offline => return Err(DeviceError::IllegalTransition),
            },
            ZoneAction::Close => match z.state {
                Open | Closed => Closed,
                _ => return Err(DeviceError::IllegalTransition),
            },
            ZoneAction::Finish => match z.state {
                Empty | Open | Closed | Full => Full,
                ReadOnly | Offline => return Err(DeviceError::IllegalTransition),
            },
            ZoneAction::Reset => match z.state {
                ReadOnly => return Err(DeviceError::IllegalTransition),
                _ => {
                    self.zones[zone as usize].write_pointer = z.start_lba;
                    Empty
                }
            },
            ZoneAction::SetReadOnly => ReadOnly,
            ZoneAction::SetOffline => Offline,
        };
        self.set_state(zone, next);
        Ok(next)
    }

    /// Classify `[lba, lba + nlb)`: `Ok(None)` for the conventional region,
    /// `Ok(Some(zone))` for a range inside a single zone.
    fn locate(&self, lba: u64, nlb: u64) -> Result<Option<u32>, DeviceError> {
        if nlb == 0 {
            return Err(DeviceError::OutOfRange);
        }
        let end = lba.checked_add(nlb).ok_or(DeviceError::OutOfRange)?;
        if end > self.profile.total_sectors() {
            return Err(DeviceError::OutOfRange);
        }
        let conv = self.profile.conventional_sectors;
        if lba < conv {
            return if end <= conv {
                Ok(None)
            } else {
                Err(DeviceError::CrossZoneBoundary)
            };
        }
        let zone = self.profile.zone_of(lba).expect("lba checked in range");
        if end > self.profile.zone_start(zone) + self.profile.zone_size {
            return Err(DeviceError::CrossZoneBoundary);
        }
        Ok(Some(zone))
    }

    pub fn submit_write(&mut self, lba: u64, nlb: u64) -> Result<WriteAck, DeviceError> {
        match self.locate(lba, nlb)? {
            None => {
                self.conventional_written.insert(lba, lba + nlb);
                Ok(WriteAck {
                    lba,
                    zone: None,
                    prev_state: None,
                    new_state: None,
                })
            }
            Some(zone) => self.write_zone(zone, lba, nlb),
        }
    }

    /// Validate a write against the current state without applying it.
    pub fn check_write(&self, lba: u64, nlb: u64) -> Result<Option<u32>, DeviceError> {
        let zone = self.locate(lba, nlb)?;
        if let Some(zone) = zone {
            self.check_zone_write(zone, lba, nlb)?;
        }
        Ok(zone)
    }

    fn check_zone_write(&self, zone: u32, lba: u64, nlb: u64) -> Result<(), DeviceError> {
        let z = &self.zones[zone as usize];
        if !z.state.is_writable() {
            return Err(DeviceError::ZoneNotWritable);
        }
        if lba != z.write_pointer {
            return Err(DeviceError::WriteNotAtWritePointer);
        }
        if nlb > z.remaining() {
            return Err(DeviceError::CrossZoneBoundary);
        }
        if z.state == ZoneState::Empty && !self.has_active_slot() {
            return Err(DeviceError::MaxActiveZonesExceeded);
        }
        Ok(())
    }

    fn write_zone(&mut self, zone: u32, lba: u64, nlb: u64) -> Result<WriteAck, DeviceError> {
        self.check_zone_write(zone, lba, nlb)?;
        let z = self.zones[zone as usize];
        if z.state != ZoneState::Open {
            self.set_state(zone, ZoneState::Open);
        }
        let zr = &mut self.zones[zone as usize];
        zr.write_pointer += nlb;
        if zr.write_pointer == zr.start_lba + zr.capacity {
            self.set_state(zone, ZoneState::Full);
        }
        Ok(WriteAck {
            lba,
            zone: Some(zone),
            prev_state: Some(z.state),
            new_state: Some(self.zones[zone as usize].state),
        })
    }

    /// Zone append: the device picks the LBA (the current write pointer).
    pub fn submit_append(&mut self, zone: u32, nlb: u64) -> Result<WriteAck, DeviceError> {
        if nlb == 0 || zone >= self.profile.nr_zones {
            return Err(DeviceError::OutOfRange);
        }
        if nlb > self.profile.max_append_sectors {
            return Err(DeviceError::AppendTooLarge);
        }
        let wp = self.zones[zone as usize].write_pointer;
        self.write_zone(zone, wp, nlb)
    }

    pub fn submit_read(&self, lba: u64, nlb: u64) -> Result<ReadAck, DeviceError> {
        match self.locate(lba, nlb)? {
            None => Ok(ReadAck {
                zone: None,
                unwritten: !self.conventional_written.covers(lba, lba + nlb),
            }),
            Some(zone) => {
                let z = &self.zones[zone as usize];
                let unwritten = z.state == ZoneState::Offline || lba + nlb > z.write_pointer;
                Ok(ReadAck {
                    zone: Some(zone),
                    unwritten,
                })
            }
        }
    }

    /// Mark part of the conventional region written without going through
    /// the request path (used for preconditioning).
    pub(crate) fn fill_conventional(&mut self, start: u64, end: u64) {
        self.conventional_written.insert(start, end.min(self.profile.conventional_sectors));
    }
}

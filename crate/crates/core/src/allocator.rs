//! ZenFS-style extent allocator and the f2fs zone-to-segment mapper.
//!
//! Files are stored as extents, each wholly inside one zone. An extent goes
//! to an active zone whose longest-lived data outlives it, so short-lived
//! data never delays the reset of a zone holding long-lived data. Zones are
//! reset once every extent in them has been invalidated.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Device, DeviceError, DeviceProfile, ProfileError, ZoneAction, ZoneState};
use crate::workload::job_rng;

pub const DEFAULT_UTIL_CAP: f64 = 0.95;

/// Expected lifetime of data, 0 (shortest) to 4 (longest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LifetimeHint(u8);

impl LifetimeHint {
    pub const SHORTEST: LifetimeHint = LifetimeHint(0);
    pub const LONGEST: LifetimeHint = LifetimeHint(4);

    pub fn new(v: u8) -> Option<Self> {
        (v <= Self::LONGEST.0).then_some(LifetimeHint(v))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for LifetimeHint {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        LifetimeHint::new(v).ok_or_else(|| format!("lifetime hint {v} is outside 0..=4"))
    }
}

impl From<LifetimeHint> for u8 {
    fn from(h: LifetimeHint) -> u8 {
        h.0
    }
}

impl fmt::Display for LifetimeHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub file: u64,
    pub zone: u32,
    pub start_lba: u64,
    pub length: u64,
    pub hint: LifetimeHint,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("extent length must be at least one sector")]
    ZeroLength,
    #[error("out of space: placed {placed} of {requested} sectors")]
    OutOfSpace { requested: u64, placed: u64 },
    #[error("unknown file {0}")]
    UnknownFile(u64),
    #[error("util_cap {0} must be in (0, 1]")]
    UtilCap(f64),
    #[error("device rejected allocation: {0}")]
    Device(#[from] DeviceError),
    #[error("invalid profile: {0}")]
    Profile(#[from] ProfileError),
}

/// How the allocator chooses a zone for a new extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    LifetimeAware,
    /// Uniform choice among open zones with room and a fresh zone; the
    /// comparison baseline.
    HintBlind { seed: u64 },
}

#[derive(Debug, Clone, Default)]
struct ZoneExtents {
    extents: Vec<usize>,
    max_life: Option<LifetimeHint>,
    /// Hints placed since the last reset, as a bit set.
    hints_seen: u8,
    mixed: bool,
}

/// Per-zone occupancy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneUsage {
    pub zone: u32,
    pub state: ZoneState,
    pub written: u64,
    pub valid: u64,
    pub extents: usize,
    pub max_lifetime: Option<LifetimeHint>,
}

#[derive(Debug, Clone)]
pub struct AllocatorState {
    device: Device,
    util_cap: f64,
    policy: PlacementPolicy,
    rng: Option<ChaCha8Rng>,
    arena: Vec<Extent>,
    zones: Vec<ZoneExtents>,
    files: BTreeMap<u64, Vec<usize>>,
    resets: u64,
    mixed_epochs: u64,
}

impl AllocatorState {
    pub fn new(device: Device) -> Self {
        Self::with_policy(device, DEFAULT_UTIL_CAP, PlacementPolicy::LifetimeAware)
            .expect("default util cap is valid")
    }

    pub fn with_policy(device: Device, util_cap: f64, policy: PlacementPolicy) -> Result<Self, AllocError> {
        if !(util_cap > 0.0 && util_cap <= 1.0) {
            return Err(AllocError::UtilCap(util_cap));
        }
        let rng = match policy {
            PlacementPolicy::LifetimeAware => None,
            PlacementPolicy::HintBlind { seed } => Some(job_rng(seed, 0)),
        };
        let nr = device.profile().nr_zones as usize;
        Ok(AllocatorState {
            device,
            util_cap,
            policy,
            rng,
            arena: Vec::new(),
            zones: vec![ZoneExtents::default(); nr],
            files: BTreeMap::new(),
            resets: 0,
            mixed_epochs: 0,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn util_cap(&self) -> f64 {
        self.util_cap
    }

    pub fn policy(&self) -> PlacementPolicy {
        self.policy
    }

    /// Sectors of a zone available to regular placement.
    pub fn placement_limit(&self) -> u64 {
        ((self.device.profile().zone_capacity as f64 * self.util_cap).floor() as u64).max(1)
    }

    pub fn extents_in_zone(&self, zone: u32) -> Vec<Extent> {
        self.zones[zone as usize].extents.iter().map(|&i| self.arena[i]).collect()
    }

    pub fn file_extents(&self, file: u64) -> Option<Vec<Extent>> {
        self.files.get(&file).map(|v| v.iter().map(|&i| self.arena[i]).collect())
    }

    pub fn files(&self) -> impl Iterator<Item = u64> + '_ {
        self.files.keys().copied()
    }

    /// Cached maximum lifetime among the zone's valid extents.
    pub fn max_lifetime(&self, zone: u32) -> Option<LifetimeHint> {
        self.zones[zone as usize].max_life
    }

    /// The same quantity computed from scratch.
    pub fn recompute_max_lifetime(&self, zone: u32) -> Option<LifetimeHint> {
        self.zones[zone as usize]
            .extents
            .iter()
            .map(|&i| &self.arena[i])
            .filter(|e| e.valid)
            .map(|e| e.hint)
            .max()
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Zone epochs (zone lifetimes between resets) that have held both the
    /// shortest and the longest lifetime class.
    pub fn mixed_zone_epochs(&self) -> u64 {
        self.mixed_epochs
    }

    pub fn valid_sectors(&self) -> u64 {
        self.files
            .values()
            .flatten()
            .map(|&i| &self.arena[i])
            .filter(|e| e.valid)
            .map(|e| e.length)
            .sum()
    }

    pub fn written_sectors(&self) -> u64 {
        self.device.zones().iter().map(|z| z.written_sectors()).sum()
    }

    /// Written over valid sectors; `None` while nothing is valid.
    pub fn space_amplification(&self) -> Option<f64> {
        let valid = self.valid_sectors();
        (valid > 0).then(|| self.written_sectors() as f64 / valid as f64)
    }

    /// Usage of every zone that holds data or is active.
    pub fn zone_usage(&self) -> Vec<ZoneUsage> {
        self.device
            .zones()
            .iter()
            .filter(|z| z.written_sectors() > 0 || z.state.is_active())
            .map(|z| {
                let ze = &self.zones[z.id as usize];
                ZoneUsage {
                    zone: z.id,
                    state: z.state,
                    written: z.written_sectors(),
                    valid: ze
                        .extents
                        .iter()
                        .map(|&i| &self.arena[i])
                        .filter(|e| e.valid)
                        .map(|e| e.length)
                        .sum(),
                    extents: ze.extents.len(),
                    max_lifetime: ze.max_life,
                }
            })
            .collect()
    }

    fn used(&self, zone: u32) -> u64 {
        self.device.zone(zone).map(|z| z.written_sectors()).unwrap_or(0)
    }

    fn active_with_room(&self, limit: u64) -> impl Iterator<Item = u32> + '_ {
        self.device
            .zones()
            .iter()
            .filter(move |z| z.state.is_active() && z.written_sectors() < limit)
            .map(|z| z.id)
    }

    fn lowest_empty(&self) -> Option<u32> {
        self.device
            .zones()
            .iter()
            .find(|z| z.state == ZoneState::Empty)
            .map(|z| z.id)
    }

    fn can_open(&self) -> bool {
        self.device.active_count() < self.device.profile().max_active_zones
    }

    /// Zone for the next chunk and the sector limit that applies to it.
    fn choose(&mut self, hint: LifetimeHint) -> Option<(u32, u64)> {
        let limit = self.placement_limit();
        let capacity = self.device.profile().zone_capacity;
        let fresh = if self.can_open() { self.lowest_empty() } else { None };
        match self.policy {
            PlacementPolicy::LifetimeAware => {
                let best = self
                    .active_with_room(limit)
                    .filter_map(|z| {
                        let max = self.zones[z as usize].max_life?;
                        (max >= hint).then(|| (max.0 - hint.0, z))
                    })
                    .min();
                if let Some((_, z)) = best {
                    return Some((z, limit));
                }
                if let Some(z) = fresh {
                    return Some((z, limit));
                }
            }
            PlacementPolicy::HintBlind { .. } => {
                let mut options: Vec<u32> = self.active_with_room(limit).collect();
                options.extend(fresh);
                if !options.is_empty() {
                    let rng = self.rng.as_mut().expect("hint-blind policy has an rng");
                    return Some((options[rng.gen_range(0..options.len())], limit));
                }
            }
        }
        // Budget exhausted: the active zone with the most free space, up to
        // full capacity.
        self.device
            .zones()
            .iter()
            .filter(|z| z.state.is_active() && z.written_sectors() < capacity)
            .map(|z| (std::cmp::Reverse(capacity - z.written_sectors()), z.id))
            .min()
            .map(|(_, z)| (z, capacity))
    }

    fn place_chunk(&mut self, file: u64, zone: u32, len: u64, hint: LifetimeHint) -> Result<Extent, AllocError> {
        let start = self.device.zone(zone).expect("zone in range").write_pointer;
        self.device.submit_write(start, len)?;
        let extent = Extent {
            file,
            zone,
            start_lba: start,
            length: len,
            hint,
            valid: true,
        };
        let idx = self.arena.len();
        self.arena.push(extent);
        self.files.entry(file).or_default().push(idx);
        let ze = &mut self.zones[zone as usize];
        ze.extents.push(idx);
        ze.max_life = ze.max_life.max(Some(hint));
        ze.hints_seen |= 1 << hint.0;
        let both = (1 << LifetimeHint::SHORTEST.0) | (1 << LifetimeHint::LONGEST.0);
        if !ze.mixed && ze.hints_seen & both == both {
            ze.mixed = true;
            self.mixed_epochs += 1;
        }
        let used = self.used(zone);
        let z = *self.device.zone(zone).expect("zone in range");
        if used >= self.placement_limit() && z.state.is_active() {
            self.device.zone_mgmt(zone, ZoneAction::Finish)?;
        }
        Ok(extent)
    }

    /// Place `length` sectors of `file`, split into per-zone extents as needed.
    pub fn place_extent(&mut self, file: u64, length: u64, hint: LifetimeHint) -> Result<Vec<Extent>, AllocError> {
        if length == 0 {
            return Err(AllocError::ZeroLength);
        }
        let mut placed = Vec::new();
        let mut remaining = length;
        let mut reclaimed = false;
        while remaining > 0 {
            let Some((zone, limit)) = self.choose(hint) else {
                if !reclaimed {
                    reclaimed = true;
                    if !self.collect_resets().is_empty() {
                        continue;
                    }
                }
                return Err(AllocError::OutOfSpace {
                    requested: length,
                    placed: length - remaining,
                });
            };
            let room = limit - self.used(zone);
            let len = remaining.min(room);
            placed.push(self.place_chunk(file, zone, len, hint)?);
            remaining -= len;
        }
        Ok(placed)
    }

    /// Mark every extent of `file` invalid and forget the file.
    pub fn invalidate_file(&mut self, file: u64) -> Result<(), AllocError> {
        let idxs = self.files.remove(&file).ok_or(AllocError::UnknownFile(file))?;
        let mut touched = Vec::new();
        for i in idxs {
            self.arena[i].valid = false;
            touched.push(self.arena[i].zone);
        }
        touched.sort_unstable();
        touched.dedup();
        for z in touched {
            self.zones[z as usize].max_life = self.recompute_max_lifetime(z);
        }
        Ok(())
    }

    /// Reset every zone whose extents are all invalid.
    pub fn collect_resets(&mut self) -> Vec<u32> {
        let victims: Vec<u32> = self
            .zones
            .iter()
            .enumerate()
            .filter(|(_, ze)| !ze.extents.is_empty() && ze.extents.iter().all(|&i| !self.arena[i].valid))
            .map(|(z, _)| z as u32)
            .collect();
        for &z in &victims {
            self.device
                .zone_mgmt(z, ZoneAction::Reset)
                .expect("allocator zones are never read-only");
            self.zones[z as usize] = ZoneExtents::default();
            self.resets += 1;
        }
        victims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentType {
    Usable,
    /// Usable sectors at the start of the segment.
    Partial(u64),
    Unusable,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("segment size must be at least one sector")]
    ZeroSegment,
    #[error("segment size {segment} does not divide zone size {zone_size}")]
    NotDivisor { segment: u64, zone_size: u64 },
    #[error("zone capacity {capacity} exceeds zone size {zone_size}")]
    Capacity { capacity: u64, zone_size: u64 },
}

/// Classify the segments of one zone against its usable capacity.
pub fn map_segments(zone_size: u64, zone_capacity: u64, segment: u64) -> Result<Vec<SegmentType>, SegmentError> {
    if segment == 0 {
        return Err(SegmentError::ZeroSegment);
    }
    if zone_size % segment != 0 {
        return Err(SegmentError::NotDivisor { segment, zone_size });
    }
    if zone_capacity > zone_size {
        return Err(SegmentError::Capacity {
            capacity: zone_capacity,
            zone_size,
        });
    }
    Ok((0..zone_size / segment)
        .map(|i| {
            let start = i * segment;
            if start + segment <= zone_capacity {
                SegmentType::Usable
            } else if start < zone_capacity {
                SegmentType::Partial(zone_capacity - start)
            } else {
                SegmentType::Unusable
            }
        })
        .collect())
}

/// One entry of a churn scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChurnEvent {
    Place {
        file: u64,
        len_sectors: u64,
        hint: LifetimeHint,
    },
    Invalidate {
        file: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub event: usize,
    pub zones: Vec<ZoneUsage>,
    pub reset: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayError {
    pub event: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub policy: PlacementPolicy,
    pub events: usize,
    pub resets: u64,
    pub mixed_zone_epochs: u64,
    pub written_sectors: u64,
    pub valid_sectors: u64,
    pub space_amplification: Option<f64>,
    pub errors: Vec<ReplayError>,
    pub timeline: Vec<ReplayStep>,
}

/// Run a churn scenario. Zones are reclaimed after every invalidation.
pub fn replay(
    profile: &DeviceProfile,
    events: &[ChurnEvent],
    policy: PlacementPolicy,
) -> Result<ReplaySummary, AllocError> {
    let device = Device::new(profile.clone())?;
    let mut state = AllocatorState::with_policy(device, DEFAULT_UTIL_CAP, policy)?;
    let mut errors = Vec::new();
    let mut timeline = Vec::with_capacity(events.len());
    for (i, ev) in events.iter().enumerate() {
        let mut reset = Vec::new();
        let res = match *ev {
            ChurnEvent::Place {
                file,
                len_sectors,
                hint,
            } => state.place_extent(file, len_sectors, hint).map(|_| ()),
            ChurnEvent::Invalidate { file } => state.invalidate_file(file).map(|_| {
                reset = state.collect_resets();
            }),
        };
        if let Err(e) = res {
            errors.push(ReplayError {
                event: i,
                message: e.to_string(),
            });
        }
        timeline.push(ReplayStep {
            event: i,
            zones: state.zone_usage(),
            reset,
        });
    }
    Ok(ReplaySummary {
        policy,
        events: events.len(),
        resets: state.resets(),
        mixed_zone_epochs: state.mixed_zone_epochs(),
        written_sectors: state.written_sectors(),
        valid_sectors: state.valid_sectors(),
        space_amplification: state.space_amplification(),
        errors,
        timeline,
    })
}

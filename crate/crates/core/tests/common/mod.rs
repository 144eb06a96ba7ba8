#![allow(dead_code)]

//! Oracles shared by the integration suites.

pub mod alloc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zns_sim::{Device, DeviceError, DeviceProfile, ZoneAction, ZoneState};

/// Naive zone model: one record per zone, counts recomputed by scanning.
#[derive(Debug, Clone)]
pub struct RefDevice {
    pub p: DeviceProfile,
    pub state: Vec<ZoneState>,
    /// Written sectors from the zone start.
    pub filled: Vec<u64>,
    pub conv: Vec<bool>,
}

impl RefDevice {
    pub fn new(p: &DeviceProfile) -> Self {
        RefDevice {
            p: p.clone(),
            state: vec![ZoneState::Empty; p.nr_zones as usize],
            filled: vec![0; p.nr_zones as usize],
            conv: vec![false; p.conventional_sectors as usize],
        }
    }

    pub fn active(&self) -> u32 {
        self.state
            .iter()
            .filter(|s| matches!(s, ZoneState::Open | ZoneState::Closed))
            .count() as u32
    }

    fn start(&self, z: usize) -> u64 {
        self.p.conventional_sectors + z as u64 * self.p.zone_size
    }

    fn classify(&self, lba: u64, nlb: u64) -> Result<Option<usize>, DeviceError> {
        let total = self.p.conventional_sectors + u64::from(self.p.nr_zones) * self.p.zone_size;
        if nlb == 0 || lba + nlb > total {
            return Err(DeviceError::OutOfRange);
        }
        let c = self.p.conventional_sectors;
        if lba < c {
            return if lba + nlb <= c { Ok(None) } else { Err(DeviceError::CrossZoneBoundary) };
        }
        let z = ((lba - c) / self.p.zone_size) as usize;
        if (lba + nlb - 1 - c) / self.p.zone_size != z as u64 {
            return Err(DeviceError::CrossZoneBoundary);
        }
        Ok(Some(z))
    }

    fn zone_write(&mut self, z: usize, off: u64, nlb: u64) -> Result<u64, DeviceError> {
        use ZoneState::*;
        if matches!(self.state[z], Full | ReadOnly | Offline) {
            return Err(DeviceError::ZoneNotWritable);
        }
        if off != self.filled[z] {
            return Err(DeviceError::WriteNotAtWritePointer);
        }
        if self.filled[z] + nlb > self.p.zone_capacity {
            return Err(DeviceError::CrossZoneBoundary);
        }
        if self.state[z] == Empty && self.active() >= self.p.max_active_zones {
            return Err(DeviceError::MaxActiveZonesExceeded);
        }
        self.filled[z] += nlb;
        self.state[z] = if self.filled[z] == self.p.zone_capacity { Full } else { Open };
        Ok(self.start(z) + off)
    }

    pub fn write(&mut self, lba: u64, nlb: u64) -> Result<(), DeviceError> {
        match self.classify(lba, nlb)? {
            None => {
                for s in lba..lba + nlb {
                    self.conv[s as usize] = true;
                }
                Ok(())
            }
            Some(z) => self.zone_write(z, lba - self.start(z), nlb).map(|_| ()),
        }
    }

    pub fn append(&mut self, zone: u32, nlb: u64) -> Result<u64, DeviceError> {
        if nlb == 0 || zone >= self.p.nr_zones {
            return Err(DeviceError::OutOfRange);
        }
        if nlb > self.p.max_append_sectors {
            return Err(DeviceError::AppendTooLarge);
        }
        let z = zone as usize;
        self.zone_write(z, self.filled[z], nlb)
    }

    pub fn read(&self, lba: u64, nlb: u64) -> Result<bool, DeviceError> {
        match self.classify(lba, nlb)? {
            None => Ok((lba..lba + nlb).any(|s| !self.conv[s as usize])),
            Some(z) => {
                let off = lba - self.start(z);
                Ok(self.state[z] == ZoneState::Offline || off + nlb > self.filled[z])
            }
        }
    }

    pub fn mgmt(&mut self, zone: u32, action: ZoneAction) -> Result<ZoneState, DeviceError> {
        use ZoneState::*;
        if zone >= self.p.nr_zones {
            return Err(DeviceError::OutOfRange);
        }
        let z = zone as usize;
        let cur = self.state[z];
        let next = match (action, cur) {
            (ZoneAction::Open, Empty) if self.active() >= self.p.max_active_zones => {
                return Err(DeviceError::MaxActiveZonesExceeded)
            }
            (ZoneAction::Open, Empty | Open | Closed) => Open,
            (ZoneAction::Close, Open | Closed) => Closed,
            (ZoneAction::Finish, Empty | Open | Closed | Full) => Full,
            (ZoneAction::Reset, s) if s != ReadOnly => {
                self.filled[z] = 0;
                Empty
            }
            (ZoneAction::SetReadOnly, _) => ReadOnly,
            (ZoneAction::SetOffline, _) => Offline,
            _ => return Err(DeviceError::IllegalTransition),
        };
        self.state[z] = next;
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Write(u64, u64),
    Append(u32, u64),
    Read(u64, u64),
    Mgmt(u32, ZoneAction),
}

/// Random operation biased towards legal writes so zones actually fill.
pub fn random_op(rng: &mut ChaCha8Rng, dev: &Device) -> Op {
    let p = dev.profile();
    let nz = p.nr_zones;
    let zone = rng.gen_range(0..nz + 1).min(nz);
    let pick_zone = rng.gen_range(0..nz);
    let nlb = match rng.gen_range(0..10) {
        0 => 0,
        1..=6 => rng.gen_range(1..=64),
        7 => rng.gen_range(1..=p.zone_capacity),
        _ => rng.gen_range(1..=p.max_append_sectors + 8),
    };
    match rng.gen_range(0..1000) {
        0..=549 => {
            let z = dev.zone(pick_zone).unwrap();
            let lba = match rng.gen_range(0..10) {
                0..=6 => z.write_pointer,
                7 => z.write_pointer + rng.gen_range(1..16),
                8 => rng.gen_range(0..p.conventional_sectors.max(1)),
                _ => rng.gen_range(0..p.total_sectors() + 64),
            };
            Op::Write(lba, nlb)
        }
        550..=699 => Op::Append(zone, nlb),
        700..=849 => {
            let z = dev.zone(pick_zone).unwrap();
            let lba = z.start_lba + rng.gen_range(0..p.zone_size);
            Op::Read(lba, nlb.min(64))
        }
        850..=999 => {
            let action = match rng.gen_range(0..10_000) {
                0..=2499 => ZoneAction::Open,
                2500..=4499 => ZoneAction::Close,
                4500..=6499 => ZoneAction::Finish,
                6500..=9979 => ZoneAction::Reset,
                9980..=9999 => ZoneAction::SetOffline,
                _ => unreachable!(),
            };
            // read-only zones are terminal; keep them rare
            let action = if rng.gen_range(0..200_000) == 0 { ZoneAction::SetReadOnly } else { action };
            Op::Mgmt(zone, action)
        }
        _ => unreachable!(),
    }
}

/// Apply `op` to both models; report the first disagreement or invariant
/// violation.
pub fn step(dev: &mut Device, oracle: &mut RefDevice, op: Op) -> Result<(), String> {
    let before: Vec<u64> = dev.zones().iter().map(|z| z.write_pointer).collect();
    let (got, want) = match op {
        Op::Write(lba, nlb) => (dev.submit_write(lba, nlb).map(|_| 0), oracle.write(lba, nlb).map(|_| 0)),
        Op::Append(z, nlb) => (dev.submit_append(z, nlb).map(|a| a.lba), oracle.append(z, nlb)),
        Op::Read(lba, nlb) => (
            dev.submit_read(lba, nlb).map(|a| u64::from(a.unwritten)),
            oracle.read(lba, nlb).map(u64::from),
        ),
        Op::Mgmt(z, a) => (
            dev.zone_mgmt(z, a).map(|s| s as u64),
            oracle.mgmt(z, a).map(|s| s as u64),
        ),
    };
    if got != want {
        return Err(format!("{op:?}: device {got:?}, oracle {want:?}"));
    }
    let p = dev.profile().clone();
    if dev.active_count() > p.max_active_zones {
        return Err(format!("{op:?}: active {} over limit", dev.active_count()));
    }
    if dev.active_count() != dev.recount_active() || dev.active_count() != oracle.active() {
        return Err(format!(
            "{op:?}: active counters disagree: incremental {}, recount {}, oracle {}",
            dev.active_count(),
            dev.recount_active(),
            oracle.active()
        ));
    }
    let reset = matches!(op, Op::Mgmt(_, ZoneAction::Reset));
    for (i, z) in dev.zones().iter().enumerate() {
        if z.write_pointer < z.start_lba || z.write_pointer > z.start_lba + z.capacity {
            return Err(format!("{op:?}: zone {i} wp {} out of bounds", z.write_pointer));
        }
        if z.write_pointer < before[i] && !reset {
            return Err(format!("{op:?}: zone {i} wp moved backwards"));
        }
        if z.state != oracle.state[i] || z.written_sectors() != oracle.filled[i] {
            return Err(format!(
                "{op:?}: zone {i} reported ({}, {}) but oracle has ({}, {})",
                z.state,
                z.written_sectors(),
                oracle.state[i],
                oracle.filled[i]
            ));
        }
        if z.state == ZoneState::Empty && z.write_pointer != z.start_lba {
            return Err(format!("{op:?}: empty zone {i} with wp off start"));
        }
    }
    Ok(())
}

/// `n` random operations from `seed` on a fresh device.
pub fn fuzz(profile: &DeviceProfile, seed: u64, n: usize) -> Result<(), String> {
    let mut rng = zns_sim::workload::job_rng(seed, 0);
    let mut dev = Device::new(profile.clone()).unwrap();
    let mut oracle = RefDevice::new(profile);
    for i in 0..n {
        let op = random_op(&mut rng, &dev);
        step(&mut dev, &mut oracle, op).map_err(|e| format!("seed {seed} op {i}: {e}"))?;
    }
    Ok(())
}

/// Expected distinct units touched by `d` uniform draws over `k` units.
pub fn distinct_units(k: f64, d: f64) -> f64 {
    k * (1.0 - (1.0 - 1.0 / k).powf(d))
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

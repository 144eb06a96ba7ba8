//! Per-job offset generation.
//!
//! Sequential modes walk the job range in ascending `bs` steps. In zbd mode
//! the walk skips the unusable tail of every zone (beyond zone capacity).
//! Random reads draw `bs`-aligned offsets uniformly: with replacement in
//! conventional mode, without replacement per pass in zbd mode. Random
//! writes in zbd mode pick one of a bounded set of open zones uniformly and
//! write at that zone's next sequential position, so a single issuer never
//! writes below or above a write pointer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{RwMode, WorkloadSpec, ZoneMode};
use crate::device::DeviceProfile;

/// Deterministic generator for job `job` of a workload.
pub fn job_rng(seed: u64, job: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(job));
    rng
}

/// A usable window of the job range: `[start, start + len)`.
#[derive(Debug, Clone, Copy)]
struct Window {
    start: u64,
    len: u64,
}

#[derive(Debug, Clone)]
pub struct OffsetStream {
    mode: RwMode,
    bs: u64,
    time_based: bool,
    zbd: bool,
    rng: ChaCha8Rng,
    windows: Vec<Window>,
    /// Cumulative block counts per window, for uniform random draws.
    cumulative: Vec<u64>,
    // sequential cursor: (window index, offset inside window)
    cursor: (usize, u64),
    issued: u64,
    total_blocks: u64,
    // zbd random read: lazy Fisher-Yates swaps over block indices
    swaps: HashMap<u64, u64>,
    drawn: u64,
    // zbd random write state
    open: Vec<(usize, u64)>,
    next_window: usize,
    open_limit: usize,
}

impl OffsetStream {
    pub fn new(profile: &DeviceProfile, spec: &WorkloadSpec, job: u32, rng: ChaCha8Rng) -> Self {
        let range = spec.job_range(profile, job);
        let bs = spec.bs_sectors(profile).max(1);
        let zbd = spec.zonemode == ZoneMode::Zbd;
        let mut windows = Vec::new();
        if zbd {
            let mut z = range.start;
            while z < range.end {
                let zone_end = (z + profile.zone_size).min(range.end);
                let usable = profile.zone_capacity.min(zone_end - z);
                if usable >= bs {
                    windows.push(Window { start: z, len: usable });
                }
                z += profile.zone_size;
            }
        } else {
            windows.push(Window {
                start: range.start,
                len: range.end - range.start,
            });
        }
        let mut cumulative = Vec::with_capacity(windows.len());
        let mut acc = 0;
        for w in &windows {
            acc += w.len / bs;
            cumulative.push(acc);
        }
        let open_limit = (profile.max_active_zones / spec.numjobs).max(1) as usize;
        OffsetStream {
            mode: spec.rw,
            bs,
            time_based: spec.time_based,
            zbd,
            rng,
            windows,
            cumulative,
            cursor: (0, 0),
            issued: 0,
            total_blocks: acc,
            swaps: HashMap::new(),
            drawn: 0,
            open: Vec::new(),
            next_window: 0,
            open_limit,
        }
    }

    fn next_sequential(&mut self) -> Option<u64> {
        loop {
            let (wi, off) = self.cursor;
            if wi >= self.windows.len() {
                if !self.time_based || self.windows.is_empty() {
                    return None;
                }
                self.cursor = (0, 0);
                continue;
            }
            let w = self.windows[wi];
            if off + self.bs > w.len {
                self.cursor = (wi + 1, 0);
                continue;
            }
            self.cursor.1 += self.bs;
            return Some(w.start + off);
        }
    }

    fn block_lba(&self, block: u64) -> u64 {
        let wi = self.cumulative.partition_point(|&c| c <= block);
        let before = if wi == 0 { 0 } else { self.cumulative[wi - 1] };
        self.windows[wi].start + (block - before) * self.bs
    }

    fn next_uniform(&mut self) -> Option<u64> {
        if self.total_blocks == 0 {
            return None;
        }
        let block = self.rng.gen_range(0..self.total_blocks);
        Some(self.block_lba(block))
    }

    fn next_unique(&mut self) -> Option<u64> {
        if self.total_blocks == 0 {
            return None;
        }
        if self.drawn == self.total_blocks {
            if !self.time_based {
                return None;
            }
            self.swaps.clear();
            self.drawn = 0;
        }
        let d = self.drawn;
        let j = self.rng.gen_range(d..self.total_blocks);
        let picked = self.swaps.get(&j).copied().unwrap_or(j);
        let head = self.swaps.get(&d).copied().unwrap_or(d);
        self.swaps.insert(j, head);
        self.swaps.remove(&d);
        self.drawn += 1;
        Some(self.block_lba(picked))
    }

    fn next_zoned_random_write(&mut self) -> Option<u64> {
        while self.open.len() < self.open_limit {
            if self.next_window >= self.windows.len() {
                if self.open.is_empty() && self.time_based && !self.windows.is_empty() {
                    self.next_window = 0;
                    continue;
                }
                break;
            }
            self.open.push((self.next_window, 0));
            self.next_window += 1;
        }
        if self.open.is_empty() {
            return None;
        }
        let pick = self.rng.gen_range(0..self.open.len());
        let (wi, off) = self.open[pick];
        let w = self.windows[wi];
        let lba = w.start + off;
        if off + 2 * self.bs > w.len {
            self.open.remove(pick);
        } else {
            self.open[pick].1 += self.bs;
        }
        Some(lba)
    }

    pub fn bs_sectors(&self) -> u64 {
        self.bs
    }
}

impl Iterator for OffsetStream {
    type Item = (u64, u64);

    fn next(&mut self) -> Option<(u64, u64)> {
        let lba = match self.mode {
            RwMode::Read | RwMode::Write => self.next_sequential(),
            RwMode::RandRead if self.zbd => self.next_unique(),
            RwMode::RandRead => {
                if !self.time_based && self.issued >= self.total_blocks {
                    None
                } else {
                    self.next_uniform()
                }
            }
            RwMode::RandWrite => {
                if self.zbd {
                    self.next_zoned_random_write()
                } else if !self.time_based && self.issued >= self.total_blocks {
                    None
                } else {
                    self.next_uniform()
                }
            }
        }?;
        self.issued += 1;
        Some((lba, self.bs))
    }
}

/// The ordered `(lba, nlb)` sequence for `job`, reproducible from `(seed, job)`.
pub fn offset_stream(profile: &DeviceProfile, spec: &WorkloadSpec, job: u32) -> OffsetStream {
    OffsetStream::new(profile, spec, job, job_rng(spec.seed, job))
}

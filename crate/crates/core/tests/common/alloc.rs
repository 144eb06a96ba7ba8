//! Reference allocator and churn generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zns_sim::{ChurnEvent, DeviceProfile, LifetimeHint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefState {
    Empty,
    Open,
    Full,
}

#[derive(Debug, Clone)]
pub struct RefExtent {
    pub file: u64,
    pub zone: u32,
    pub offset: u64,
    pub length: u64,
    pub hint: u8,
    pub valid: bool,
    /// Placed by the budget-exhausted fallback.
    pub fallback: bool,
}

/// Straight transcription of the placement rules, state rescanned on every
/// decision.
#[derive(Debug, Clone)]
pub struct RefAllocator {
    pub capacity: u64,
    pub limit: u64,
    pub max_active: u32,
    pub state: Vec<RefState>,
    pub written: Vec<u64>,
    pub extents: Vec<Vec<RefExtent>>,
    pub resets: u64,
}

impl RefAllocator {
    pub fn new(p: &DeviceProfile, util_cap: f64) -> Self {
        let n = p.nr_zones as usize;
        RefAllocator {
            capacity: p.zone_capacity,
            limit: ((p.zone_capacity as f64 * util_cap).floor() as u64).max(1),
            max_active: p.max_active_zones,
            state: vec![RefState::Empty; n],
            written: vec![0; n],
            extents: vec![Vec::new(); n],
            resets: 0,
        }
    }

    fn active(&self) -> u32 {
        self.state.iter().filter(|&&s| s == RefState::Open).count() as u32
    }

    pub fn max_life(&self, z: usize) -> Option<u8> {
        self.extents[z].iter().filter(|e| e.valid).map(|e| e.hint).max()
    }

    /// Zone and sector limit for the next chunk.
    pub fn choose(&self, hint: u8) -> Option<(usize, u64, bool)> {
        let n = self.state.len();
        let mut best: Option<(u8, usize)> = None;
        for z in 0..n {
            if self.state[z] != RefState::Open || self.written[z] >= self.limit {
                continue;
            }
            if let Some(m) = self.max_life(z) {
                if m >= hint && best.is_none_or(|b| (m - hint, z) < b) {
                    best = Some((m - hint, z));
                }
            }
        }
        if let Some((_, z)) = best {
            return Some((z, self.limit, false));
        }
        if self.active() < self.max_active {
            if let Some(z) = (0..n).find(|&z| self.state[z] == RefState::Empty) {
                return Some((z, self.limit, false));
            }
        }
        let mut most: Option<(u64, usize)> = None;
        for z in 0..n {
            if self.state[z] == RefState::Open && self.written[z] < self.capacity {
                let free = self.capacity - self.written[z];
                if most.is_none_or(|m| free > m.0) {
                    most = Some((free, z));
                }
            }
        }
        most.map(|(_, z)| (z, self.capacity, true))
    }

    pub fn collect(&mut self) -> Vec<u32> {
        let mut out = Vec::new();
        for z in 0..self.state.len() {
            if !self.extents[z].is_empty() && self.extents[z].iter().all(|e| !e.valid) {
                self.extents[z].clear();
                self.written[z] = 0;
                self.state[z] = RefState::Empty;
                self.resets += 1;
                out.push(z as u32);
            }
        }
        out
    }

    /// Returns the placed chunks and whether the whole length fit.
    pub fn place(&mut self, file: u64, length: u64, hint: u8) -> (Vec<RefExtent>, bool) {
        let mut out = Vec::new();
        let mut remaining = length;
        let mut reclaimed = false;
        while remaining > 0 {
            let Some((z, limit, fallback)) = self.choose(hint) else {
                if !reclaimed {
                    reclaimed = true;
                    if !self.collect().is_empty() {
                        continue;
                    }
                }
                return (out, false);
            };
            let len = remaining.min(limit - self.written[z]);
            let e = RefExtent {
                file,
                zone: z as u32,
                offset: self.written[z],
                length: len,
                hint,
                valid: true,
                fallback,
            };
            self.written[z] += len;
            self.state[z] = if self.written[z] >= self.limit || self.written[z] == self.capacity {
                RefState::Full
            } else {
                RefState::Open
            };
            self.extents[z].push(e.clone());
            out.push(e);
            remaining -= len;
        }
        (out, true)
    }

    pub fn invalidate(&mut self, file: u64) {
        for zone in &mut self.extents {
            for e in zone.iter_mut().filter(|e| e.file == file) {
                e.valid = false;
            }
        }
    }
}

/// Random place/invalidate events over fresh file ids. Lengths run up to
/// `max_len` sectors.
pub fn churn(rng: &mut ChaCha8Rng, n: usize, max_len: u64) -> Vec<ChurnEvent> {
    let mut live: Vec<u64> = Vec::new();
    let mut next = 0u64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if live.is_empty() || rng.gen_bool(0.55) {
            out.push(ChurnEvent::Place {
                file: next,
                len_sectors: rng.gen_range(1..=max_len),
                hint: LifetimeHint::new(rng.gen_range(0..=4)).unwrap(),
            });
            live.push(next);
            next += 1;
        } else {
            let i = rng.gen_range(0..live.len());
            out.push(ChurnEvent::Invalidate { file: live.swap_remove(i) });
        }
    }
    out
}

/// Drive the allocator and the reference through `events`, comparing every
/// placement, every reset set and the per-zone invariants after each step.
pub fn check_churn(p: &DeviceProfile, events: &[ChurnEvent]) -> Result<(), String> {
    use zns_sim::{AllocError, AllocatorState, Device};

    let mut a = AllocatorState::new(Device::new(p.clone()).unwrap());
    let mut r = RefAllocator::new(p, a.util_cap());
    let mut placed_any = std::collections::HashSet::new();
    for (i, ev) in events.iter().enumerate() {
        let at = |m: String| format!("event {i} {ev:?}: {m}");
        match *ev {
            ChurnEvent::Place { file, len_sectors, hint } => {
                let before: Vec<Option<u8>> = (0..p.nr_zones as usize).map(|z| r.max_life(z)).collect();
                let was_open: Vec<bool> = r.state.iter().map(|&s| s == RefState::Open).collect();
                let (want, fit) = r.place(file, len_sectors, hint.get());
                let got = match a.place_extent(file, len_sectors, hint) {
                    Ok(v) => v,
                    Err(AllocError::OutOfSpace { placed, .. }) if !fit => {
                        let got = a.file_extents(file).unwrap_or_default();
                        if placed != got.iter().map(|e| e.length).sum::<u64>() {
                            return Err(at("OutOfSpace miscounts placed sectors".into()));
                        }
                        got
                    }
                    other => return Err(at(format!("allocator {other:?}, reference fit {fit}"))),
                };
                if !want.is_empty() {
                    placed_any.insert(file);
                }
                let got_k: Vec<_> = got.iter().map(|e| (e.zone, e.start_lba, e.length)).collect();
                let want_k: Vec<_> = want
                    .iter()
                    .map(|e| (e.zone, p.zone_start(e.zone) + e.offset, e.length))
                    .collect();
                if got_k != want_k {
                    return Err(at(format!("placed {got_k:?}, reference {want_k:?}")));
                }
                for e in &want {
                    if !e.fallback && e.offset + e.length > r.limit {
                        return Err(at(format!("extent past the utilization cap: {e:?}")));
                    }
                    let z = e.zone as usize;
                    // candidate path: joining a zone that already had live data
                    if !e.fallback && was_open[z] && before[z].is_some_and(|m| m >= e.hint) && e.offset > 0 {
                        if a.max_lifetime(e.zone).map(|h| h.get()) != before[z] {
                            return Err(at(format!("zone {z} max lifetime moved")));
                        }
                    }
                }
            }
            ChurnEvent::Invalidate { file } => {
                r.invalidate(file);
                match a.invalidate_file(file) {
                    Ok(()) => {}
                    Err(AllocError::UnknownFile(f)) if f == file && !placed_any.contains(&file) => {}
                    Err(e) => return Err(at(e.to_string())),
                }
                // every extent of a victim zone must be dead before the reset
                for z in 0..p.nr_zones {
                    let ext = a.extents_in_zone(z);
                    let dead = !ext.is_empty() && ext.iter().all(|e| !e.valid);
                    let oracle = !r.extents[z as usize].is_empty() && r.extents[z as usize].iter().all(|e| !e.valid);
                    if dead != oracle {
                        return Err(at(format!("zone {z}: allocator dead {dead}, scan {oracle}")));
                    }
                }
                let got = a.collect_resets();
                let want = r.collect();
                if got != want {
                    return Err(at(format!("reset {got:?}, full scan {want:?}")));
                }
            }
        }
        for z in 0..p.nr_zones {
            let dz = a.device().zone(z).unwrap();
            let ext = a.extents_in_zone(z);
            for e in &ext {
                if e.zone != z || e.start_lba < dz.start_lba || e.start_lba + e.length > dz.start_lba + dz.capacity {
                    return Err(at(format!("extent {e:?} crosses zone {z}")));
                }
            }
            if ext.iter().map(|e| e.length).sum::<u64>() > dz.written_sectors() {
                return Err(at(format!("zone {z}: extents exceed wp progress")));
            }
            if dz.written_sectors() != r.written[z as usize] {
                return Err(at(format!("zone {z}: written {} vs {}", dz.written_sectors(), r.written[z as usize])));
            }
            if a.max_lifetime(z) != a.recompute_max_lifetime(z)
                || a.max_lifetime(z).map(|h| h.get()) != r.max_life(z as usize)
            {
                return Err(at(format!("zone {z}: max lifetime cache stale")));
            }
        }
        if a.resets() != r.resets {
            return Err(at("reset counters differ".into()));
        }
    }
    Ok(())
}

/// Like [`churn`], but invalidates instead of placing whenever the new file
/// would push live data above `live_cap` sectors.
pub fn churn_bounded(rng: &mut ChaCha8Rng, n: usize, max_len: u64, live_cap: u64) -> Vec<ChurnEvent> {
    let mut live: Vec<(u64, u64)> = Vec::new();
    let mut live_sectors = 0;
    let mut next = 0u64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.gen_range(1..=max_len);
        if live.is_empty() || (live_sectors + len <= live_cap && rng.gen_bool(0.55)) {
            out.push(ChurnEvent::Place {
                file: next,
                len_sectors: len,
                hint: LifetimeHint::new(rng.gen_range(0..=4)).unwrap(),
            });
            live.push((next, len));
            live_sectors += len;
            next += 1;
        } else {
            let (file, len) = live.swap_remove(rng.gen_range(0..live.len()));
            live_sectors -= len;
            out.push(ChurnEvent::Invalidate { file });
        }
    }
    out
}

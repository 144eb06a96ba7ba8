//! Discrete-event engine: closed-loop jobs driving scheduler, device and
//! latency model on a virtual nanosecond clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use crate::device::{Device, DeviceError, DeviceProfile, ZoneAction, ZoneState};
use crate::scheduler::{Completion, IoKind, IoRequest, MergedOp, Scheduler};

use super::spec::{Namespace, SizeSpec, SpecError, WorkloadSpec, ZoneMode};
use super::stats::{JobReport, JobSamples, RunConfig, StatsReport};
use super::stream::{offset_stream, OffsetStream};

/// Turnaround of a request the device rejects without doing any work.
pub const ERROR_NS: u64 = 2_000;

/// Region written by [`precondition_fill`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Conventional,
    Zoned { first: u32, count: u32 },
    All,
}

/// Write every sector of `region` on a fresh device.
///
/// Zones are filled one after another, each to capacity, so at most one zone
/// is ever open.
pub fn precondition_fill(profile: &DeviceProfile, region: Region) -> Result<Device, SpecError> {
    let mut device = Device::new(profile.clone()).map_err(|e| SpecError::Profile(e.to_string()))?;
    fill(&mut device, region);
    Ok(device)
}

fn fill(device: &mut Device, region: Region) {
    let profile = device.profile().clone();
    let (conv, zones) = match region {
        Region::Conventional => (true, 0..0),
        Region::Zoned { first, count } => (false, first..first.saturating_add(count).min(profile.nr_zones)),
        Region::All => (true, 0..profile.nr_zones),
    };
    if conv && profile.conventional_sectors > 0 {
        device.fill_conventional(0, profile.conventional_sectors);
    }
    for zone in zones {
        let z = *device.zone(zone).expect("zone in range");
        if !z.state.is_writable() || z.remaining() == 0 {
            continue;
        }
        device
            .submit_write(z.write_pointer, z.remaining())
            .expect("sequential fill of a writable zone");
    }
}

/// Everything a run produced, before aggregation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub samples: Vec<JobSamples>,
    pub device: Device,
    pub window_ns: u64,
    pub duration_ns: u64,
    /// Device-level operations dispatched during the run.
    pub device_ops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    /// Op `id` leaves the device.
    Complete(u64),
    /// Fail writes that can no longer become contiguous.
    DrainHeld,
}

struct InFlight {
    op: MergedOp,
    /// Outcome decided at dispatch; writes are applied on completion.
    verdict: Result<bool, DeviceError>,
}

struct Job {
    stream: OffsetStream,
    /// Next request, held back until its zone can take it.
    peeked: Option<(u64, u64)>,
    inflight: u32,
    exhausted: bool,
}

struct Engine {
    spec: WorkloadSpec,
    device: Device,
    sched: Scheduler,
    jobs: Vec<Job>,
    samples: Vec<JobSamples>,
    /// Request id -> (job, zone of a pending write).
    owner: HashMap<u64, (u32, Option<u32>)>,
    /// Pending writes per zone, for zbd rewinds.
    zone_pending: BTreeMap<u32, u32>,
    heap: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    inflight: HashMap<u64, InFlight>,
    next_req: u64,
    next_op: u64,
    unit_free: Vec<u64>,
    drain_free: u64,
    ramp_ns: u64,
    runtime_ns: u64,
    last_ns: u64,
    device_ops: u64,
    /// Jobs waiting for a zone slot or a zone to drain.
    gated: Vec<u32>,
}

fn us_to_ns(us: f64) -> u64 {
    (us * 1000.0).round() as u64
}

impl Engine {
    fn push(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq, ev)));
    }

    fn issue(&mut self, job: u32, now: u64) {
        let kind = if self.spec.rw.is_write() {
            IoKind::Write
        } else {
            IoKind::Read
        };
        let zbd_write = kind == IoKind::Write && self.spec.zonemode == ZoneMode::Zbd;
        loop {
            let j = &mut self.jobs[job as usize];
            if j.exhausted || j.inflight >= self.spec.iodepth || now >= self.runtime_ns {
                return;
            }
            let Some((lba, nlb)) = j.peeked.take().or_else(|| j.stream.next()) else {
                j.exhausted = true;
                return;
            };
            let zone = match kind {
                IoKind::Write => self.device.profile().zone_of(lba),
                _ => None,
            };
            if let (true, Some(z)) = (zbd_write, zone) {
                if !self.admit(z, lba) {
                    self.jobs[job as usize].peeked = Some((lba, nlb));
                    if !self.gated.contains(&job) {
                        self.gated.push(job);
                    }
                    return;
                }
            }
            self.jobs[job as usize].inflight += 1;
            if let Some(zone) = zone {
                *self.zone_pending.entry(zone).or_default() += 1;
            }
            let id = self.next_req;
            self.next_req += 1;
            self.owner.insert(id, (job, zone));
            self.sched.enqueue(
                IoRequest {
                    id,
                    kind,
                    lba,
                    nlb,
                    submitted_ns: now,
                },
                now,
            );
        }
    }

    fn pending(&self, zone: u32) -> u32 {
        self.zone_pending.get(&zone).copied().unwrap_or(0)
    }

    /// Whether a zbd writer may issue to `lba` now, as fio does: a writer
    /// wrapping to a zone start waits for the zone to drain and resets it,
    /// and a writer never opens more zones than the device allows.
    fn admit(&mut self, zone: u32, lba: u64) -> bool {
        let z = *self.device.zone(zone).expect("zone in range");
        if lba == z.start_lba && z.write_pointer > lba && z.state != ZoneState::ReadOnly {
            if self.pending(zone) > 0 {
                return false;
            }
            let _ = self.device.zone_mgmt(zone, ZoneAction::Reset);
        }
        let z = self.device.zone(zone).expect("zone in range");
        if z.state != ZoneState::Empty || self.pending(zone) > 0 {
            return true;
        }
        let opening = self
            .zone_pending
            .keys()
            .filter(|&&p| self.device.zone(p).is_some_and(|pz| pz.state == ZoneState::Empty))
            .count() as u32;
        self.device.active_count() + opening < self.device.profile().max_active_zones
    }

    /// Finish a drained zone whose remaining capacity cannot hold a block.
    fn finish_tail(&mut self, zone: u32) {
        let bs = self.spec.bs_sectors(self.device.profile());
        let z = *self.device.zone(zone).expect("zone in range");
        if z.state.is_active() && z.remaining() < bs && self.pending(zone) == 0 {
            let _ = self.device.zone_mgmt(zone, ZoneAction::Finish);
        }
    }

    fn dispatch(&mut self, now: u64) {
        let ops = self.sched.dispatch(&self.device, now);
        let sector = self.device.profile().sector_size;
        for op in ops {
            self.device_ops += 1;
            let verdict = match op.kind {
                IoKind::Read => self.device.submit_read(op.start_lba, op.nlb).map(|a| a.unwritten),
                IoKind::Write => self.device.check_write(op.start_lba, op.nlb).map(|_| false),
                IoKind::Append => match op.zone {
                    Some(zone) => self.device.submit_append(zone, op.nlb).map(|_| false),
                    None => Err(DeviceError::OutOfRange),
                },
            };
            let done = if verdict.is_err() {
                now + ERROR_NS
            } else {
                let lat = self.device.profile().latency;
                match op.kind {
                    IoKind::Read => {
                        let mut end = now;
                        for (unit, us) in lat.read_work(op.start_lba, op.nlb, sector) {
                            let free = &mut self.unit_free[unit as usize];
                            let start = (*free).max(now);
                            *free = start + us_to_ns(us);
                            end = end.max(*free);
                        }
                        end
                    }
                    IoKind::Write | IoKind::Append => {
                        let start = self.drain_free.max(now);
                        self.drain_free = start + us_to_ns(lat.write_service(op.bytes));
                        self.drain_free
                    }
                }
            };
            let id = self.next_op;
            self.next_op += 1;
            self.inflight.insert(id, InFlight { op, verdict });
            self.push(done, Event::Complete(id));
        }
    }

    fn record(&mut self, c: &Completion, unwritten: bool) {
        let (job, zone) = self.owner.remove(&c.id).expect("completion of a known request");
        self.jobs[job as usize].inflight -= 1;
        if let Some(zone) = zone {
            let pending = self.zone_pending.get_mut(&zone).expect("pending write");
            *pending -= 1;
            if *pending == 0 {
                self.zone_pending.remove(&zone);
            }
        }
        if c.completed_ns < self.ramp_ns || c.completed_ns > self.runtime_ns {
            return;
        }
        let s = &mut self.samples[job as usize];
        match c.error {
            Some(e) => *s.errors.entry(e).or_default() += 1,
            None => {
                match c.kind {
                    IoKind::Read => {
                        s.read_lat_ns.push(c.latency_ns);
                        s.read_bytes += c.bytes;
                    }
                    IoKind::Write | IoKind::Append => {
                        s.write_lat_ns.push(c.latency_ns);
                        s.write_bytes += c.bytes;
                    }
                }
                if unwritten {
                    s.unwritten_reads += 1;
                }
            }
        }
    }

    fn complete(&mut self, id: u64, now: u64) -> Vec<u32> {
        let InFlight { op, verdict } = self.inflight.remove(&id).expect("known op");
        let result = match (op.kind, verdict) {
            (IoKind::Write, Ok(_)) => self.device.submit_write(op.start_lba, op.nlb).map(|_| false),
            (_, v) => v,
        };
        let unwritten = matches!(result, Ok(true));
        let completions = self.sched.complete(&op, now, result.map(|_| ()));
        let mut jobs = Vec::with_capacity(completions.len());
        for c in &completions {
            jobs.push(self.owner[&c.id].0);
            self.record(c, unwritten);
        }
        if let (IoKind::Write, ZoneMode::Zbd, Some(zone)) = (op.kind, self.spec.zonemode, op.zone) {
            self.finish_tail(zone);
        }
        jobs
    }

    fn drain_held(&mut self, now: u64) -> Vec<u32> {
        let completions = self.sched.drain_held(now);
        let mut jobs = Vec::with_capacity(completions.len());
        for c in &completions {
            jobs.push(self.owner[&c.id].0);
            self.record(c, false);
        }
        jobs
    }

    fn run(&mut self) {
        for job in 0..self.jobs.len() as u32 {
            self.issue(job, 0);
        }
        self.dispatch(0);
        loop {
            let Some(Reverse((now, _, ev))) = self.heap.pop() else {
                if self.sched.held() > 0 {
                    let at = self.last_ns + ERROR_NS;
                    self.push(at, Event::DrainHeld);
                    continue;
                }
                break;
            };
            if now > self.runtime_ns {
                break;
            }
            self.last_ns = now;
            let jobs = match ev {
                Event::Complete(id) => self.complete(id, now),
                Event::DrainHeld => self.drain_held(now),
            };
            let mut jobs = jobs;
            jobs.append(&mut self.gated);
            for job in dedup(jobs) {
                self.issue(job, now);
            }
            self.dispatch(now);
        }
    }
}

fn dedup(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v.dedup();
    v
}

fn fill_region(profile: &DeviceProfile, spec: &WorkloadSpec) -> Region {
    match spec.namespace {
        Namespace::Conventional => Region::Conventional,
        Namespace::Zoned => {
            let first = (0..spec.numjobs).map(|j| spec.job_range(profile, j).start).min().unwrap_or(0);
            let end = (0..spec.numjobs).map(|j| spec.job_range(profile, j).end).max().unwrap_or(0);
            let base = profile.zoned_start();
            let z0 = ((first - base) / profile.zone_size) as u32;
            let z1 = (end - base).div_ceil(profile.zone_size) as u32;
            Region::Zoned {
                first: z0,
                count: z1 - z0,
            }
        }
    }
}

/// Run `spec` against `device`, returning raw per-job samples and the final
/// device state.
pub fn run_on_device(device: Device, spec: &WorkloadSpec) -> Result<RunOutcome, SpecError> {
    let profile = device.profile().clone();
    spec.validate(&profile)?;
    let merge_cap = match spec.merge_cap {
        SizeSpec::Bytes(b) => b,
        SizeSpec::Zones(_) => unreachable!("validated"),
    };
    let mut device = device;
    if spec.prefill {
        fill(&mut device, fill_region(&profile, spec));
    }
    let jobs = (0..spec.numjobs)
        .map(|j| Job {
            stream: offset_stream(&profile, spec, j),
            peeked: None,
            inflight: 0,
            exhausted: false,
        })
        .collect();
    let mut engine = Engine {
        spec: spec.clone(),
        sched: Scheduler::with_merge_cap(spec.scheduler, &profile, merge_cap),
        jobs,
        samples: vec![JobSamples::default(); spec.numjobs as usize],
        owner: HashMap::new(),
        zone_pending: BTreeMap::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        inflight: HashMap::new(),
        next_req: 0,
        next_op: 0,
        unit_free: vec![0; profile.latency.k_units as usize],
        drain_free: 0,
        ramp_ns: (spec.ramp_time * 1e9).round() as u64,
        runtime_ns: (spec.runtime * 1e9).round() as u64,
        last_ns: 0,
        device_ops: 0,
        gated: Vec::new(),
        device,
    };
    engine.run();
    let end = engine.last_ns.min(engine.runtime_ns);
    Ok(RunOutcome {
        window_ns: end.saturating_sub(engine.ramp_ns),
        duration_ns: end,
        device_ops: engine.device_ops,
        samples: engine.samples,
        device: engine.device,
    })
}

fn job_name(spec: &WorkloadSpec, job: u32) -> String {
    if spec.numjobs == 1 {
        spec.name.clone()
    } else {
        format!("{}.{job}", spec.name)
    }
}

/// Simulate `spec` on a fresh device built from `profile`.
pub fn run_simulation(profile: &DeviceProfile, spec: &WorkloadSpec) -> Result<StatsReport, SpecError> {
    spec.validate(profile)?;
    let device = Device::new(profile.clone()).map_err(|e| SpecError::Profile(e.to_string()))?;
    let out = run_on_device(device, spec)?;
    Ok(report(profile, spec, &out))
}

/// Aggregate a finished run.
pub fn report(profile: &DeviceProfile, spec: &WorkloadSpec, out: &RunOutcome) -> StatsReport {
    let window_s = out.window_ns as f64 / 1e9;
    let pcts = &spec.percentile_list;
    let per_job = out
        .samples
        .iter()
        .enumerate()
        .map(|(j, s)| JobReport::from_samples(&job_name(spec, j as u32), s, window_s, pcts))
        .collect();
    let merged = JobSamples::merge(&out.samples);
    StatsReport {
        config: RunConfig {
            profile: profile.clone(),
            job: spec.clone(),
        },
        window_ns: out.window_ns,
        duration_ns: out.duration_ns,
        per_job,
        group: JobReport::from_samples(&spec.name, &merged, window_s, pcts),
    }
}

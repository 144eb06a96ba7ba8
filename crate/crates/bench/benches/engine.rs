use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;
use zns_sim::workload::job_rng;
use zns_sim::{
    apply_to_device, profiles, replay, AllocatorState, ChurnEvent, Device, IoKind, IoRequest, LifetimeHint,
    PlacementPolicy, RwMode, Scheduler, SchedulerKind, SizeSpec, WorkloadSpec, ZoneAction, ZoneMode,
};

fn engine(c: &mut Criterion) {
    let p = profiles::zn540();
    let mut g = c.benchmark_group("engine");
    g.sample_size(10);
    for (name, rw, qd) in [("randread_qd64", RwMode::RandRead, 64), ("write_qd1", RwMode::Write, 1)] {
        let mut s = WorkloadSpec::new(rw);
        s.zonemode = ZoneMode::Zbd;
        s.bs = SizeSpec::Bytes(4096);
        s.iodepth = qd;
        s.time_based = true;
        s.runtime = 0.01;
        s.prefill = rw == RwMode::RandRead;
        g.bench_function(name, |b| b.iter(|| zns_sim::run_simulation(&p, &s).unwrap()));
    }
    g.finish();
}

fn device_ops(c: &mut Criterion) {
    let p = profiles::tiny();
    c.bench_function("device_random_ops", |b| {
        b.iter_batched(
            || (Device::new(p.clone()).unwrap(), job_rng(1, 0)),
            |(mut dev, mut rng)| {
                for _ in 0..10_000 {
                    let z = rng.gen_range(0..p.nr_zones);
                    let wp = dev.zone(z).unwrap().write_pointer;
                    let _ = match rng.gen_range(0..4) {
                        0 => dev.zone_mgmt(z, ZoneAction::Reset).map(|_| ()),
                        1 => dev.submit_read(p.zone_start(z), 8).map(|_| ()),
                        _ => dev.submit_write(wp, 8).map(|_| ()),
                    };
                }
                dev
            },
            BatchSize::SmallInput,
        )
    });
}

fn allocator_churn(c: &mut Criterion) {
    let p = profiles::tiny();
    let mut rng = job_rng(2, 0);
    let mut events = Vec::new();
    for f in 0..2000u64 {
        events.push(ChurnEvent::Place {
            file: f,
            len_sectors: rng.gen_range(1..600),
            hint: LifetimeHint::new(rng.gen_range(0..=4)).unwrap(),
        });
        if f >= 20 {
            events.push(ChurnEvent::Invalidate { file: f - 20 });
        }
    }
    c.bench_function("allocator_replay", |b| b.iter(|| replay(&p, &events, PlacementPolicy::LifetimeAware).unwrap()));
    c.bench_function("allocator_fill", |b| {
        b.iter_batched(
            || AllocatorState::new(Device::new(p.clone()).unwrap()),
            |mut a| {
                for f in 0..200 {
                    let _ = a.place_extent(f, 64, LifetimeHint::new((f % 5) as u8).unwrap());
                }
                a
            },
            BatchSize::SmallInput,
        )
    });
}

fn scheduler_merge(c: &mut Criterion) {
    let p = profiles::zn540();
    c.bench_function("mq_deadline_merge_qd64", |b| {
        b.iter_batched(
            || Device::new(p.clone()).unwrap(),
            |mut dev| {
                let mut sched = Scheduler::new(SchedulerKind::MqDeadline, &p);
                let start = p.zone_start(0);
                for i in 0..64u64 {
                    let r = IoRequest { id: i, kind: IoKind::Write, lba: start + (63 - i) * 8, nlb: 8, submitted_ns: 0 };
                    sched.enqueue(r, 0);
                }
                loop {
                    let ops = sched.dispatch(&dev, 0);
                    if ops.is_empty() {
                        break;
                    }
                    for op in ops {
                        let res = apply_to_device(&mut dev, &op).map(|_| ());
                        sched.complete(&op, 1, res);
                    }
                }
                dev
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, engine, device_ops, allocator_churn, scheduler_merge);
criterion_main!(benches);

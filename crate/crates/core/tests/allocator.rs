mod common;

use common::alloc::{check_churn, churn, churn_bounded};
use proptest::prelude::*;
use zns_sim::workload::job_rng;
use zns_sim::{
    map_segments, profiles, replay, AllocatorState, ChurnEvent, Device, LifetimeHint, PlacementPolicy,
    SegmentType, ZoneState,
};

const MIB: u64 = 2048;

#[test]
fn churn_matches_reference_and_full_scan() {
    let p = profiles::tiny();
    for seed in 0..20 {
        let mut rng = job_rng(seed, 0);
        let events = churn(&mut rng, 1000, 3000);
        check_churn(&p, &events).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn churn_with_small_files_and_wide_budget() {
    let mut p = profiles::tiny();
    p.max_active_zones = 6;
    for seed in 0..10 {
        let mut rng = job_rng(seed, 3);
        let events = churn(&mut rng, 1000, 400);
        check_churn(&p, &events).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn churn_under_space_pressure() {
    let p = profiles::tiny();
    for seed in 0..10 {
        let mut rng = job_rng(seed, 5);
        // files of up to a zone and a half keep the device near full
        let events = churn(&mut rng, 1000, 9000);
        check_churn(&p, &events).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn placing_then_invalidating_everything_resets_every_zone() {
    let p = profiles::tiny();
    let mut a = AllocatorState::new(Device::new(p.clone()).unwrap());
    let n = 40;
    let len = a.placement_limit() * u64::from(p.nr_zones) / n;
    for f in 0..n {
        a.place_extent(f, len, LifetimeHint::new((f % 5) as u8).unwrap()).unwrap();
    }
    let used: Vec<u32> = (0..p.nr_zones)
        .filter(|&z| a.device().zone(z).unwrap().written_sectors() > 0)
        .collect();
    assert_eq!(used.len() as u32, p.nr_zones);
    for f in 0..n {
        a.invalidate_file(f).unwrap();
    }
    assert_eq!(a.collect_resets(), used);
    assert!(a.device().zones().iter().all(|z| z.state == ZoneState::Empty));
    assert_eq!(a.device().active_count(), 0);
    assert_eq!(a.valid_sectors(), 0);
}

#[test]
fn lifetime_aware_mixes_fewer_zones_than_hint_blind() {
    for active in [2, 5] {
        let mut p = profiles::tiny();
        p.max_active_zones = active;
        // a quarter of the device live keeps both policies mostly out of
        // the out-of-space path
        let quarter = u64::from(p.nr_zones) * p.zone_capacity / 4;
        for seed in 0..10 {
            let mut rng = job_rng(seed, 9);
            let events = churn_bounded(&mut rng, 1000, 600, quarter);
            let a = replay(&p, &events, PlacementPolicy::LifetimeAware).unwrap();
            let b = replay(&p, &events, PlacementPolicy::HintBlind { seed }).unwrap();
            assert!(
                a.mixed_zone_epochs < b.mixed_zone_epochs,
                "active {active} seed {seed}: lifetime-aware {}, hint-blind {}",
                a.mixed_zone_epochs,
                b.mixed_zone_epochs
            );
        }
    }
}

#[test]
fn replay_reports_unknown_files_by_index() {
    let p = profiles::tiny();
    let events = vec![
        ChurnEvent::Place { file: 1, len_sectors: 8, hint: LifetimeHint::new(1).unwrap() },
        ChurnEvent::Invalidate { file: 7 },
        ChurnEvent::Invalidate { file: 1 },
    ];
    let s = replay(&p, &events, PlacementPolicy::LifetimeAware).unwrap();
    assert_eq!(s.errors.len(), 1);
    assert_eq!(s.errors[0].event, 1);
    assert_eq!(s.resets, 1);
    assert_eq!(s.timeline[2].reset, vec![0]);
}

#[test]
fn table_one_geometry() {
    let segs = map_segments(2048 * MIB, 1077 * MIB, 2 * MIB).unwrap();
    let usable = segs.iter().filter(|s| **s == SegmentType::Usable).count();
    let partial: Vec<_> = segs.iter().filter(|s| matches!(s, SegmentType::Partial(_))).collect();
    let unusable = segs.iter().filter(|s| **s == SegmentType::Unusable).count();
    assert_eq!((usable, partial.len(), unusable), (538, 1, 485));
    assert_eq!(*partial[0], SegmentType::Partial(MIB));
    assert_eq!(segs.len(), 1024);
}

proptest! {
    #[test]
    fn segment_algebra(seg in 1u64..4096, n in 1u64..2048, cap_frac in 0.0f64..=1.0) {
        let size = seg * n;
        let cap = ((size as f64 * cap_frac).round() as u64).clamp(1, size);
        let segs = map_segments(size, cap, seg).unwrap();
        prop_assert_eq!(segs.len() as u64 * seg, size);
        let mut usable = 0;
        let mut partial = 0;
        let mut partials = 0;
        for s in &segs {
            match *s {
                SegmentType::Usable => usable += 1,
                SegmentType::Partial(u) => {
                    prop_assert!(u > 0 && u < seg);
                    partial += u;
                    partials += 1;
                }
                SegmentType::Unusable => {}
            }
        }
        prop_assert_eq!(usable * seg + partial, cap);
        prop_assert!(partials <= 1);
        // usable prefix, at most one partial, unusable tail
        let rank = |s: &SegmentType| match s {
            SegmentType::Usable => 0,
            SegmentType::Partial(_) => 1,
            SegmentType::Unusable => 2,
        };
        prop_assert!(segs.windows(2).all(|w| rank(&w[0]) <= rank(&w[1])));
    }

    #[test]
    fn segment_size_must_divide_zone(seg in 2u64..4096, n in 1u64..64, extra in 1u64..4096) {
        let extra = extra % seg;
        prop_assume!(extra > 0);
        let size = seg * n + extra;
        prop_assert!(map_segments(size, size, seg).is_err());
    }

    #[test]
    fn short_churn_matches_reference(seed in any::<u64>(), n in 1usize..300, max_len in 1u64..8000) {
        let p = profiles::tiny();
        let mut rng = job_rng(seed, 0);
        let events = churn(&mut rng, n, max_len);
        if let Err(e) = check_churn(&p, &events) {
            return Err(TestCaseError::fail(e));
        }
    }
}

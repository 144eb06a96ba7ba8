//! Deterministic discrete-event simulator of an NVMe zoned-namespace SSD.
//!
//! The pieces compose bottom-up: [`device`] holds zone state, [`latency`]
//! prices device operations, [`scheduler`] models the host block-layer
//! scheduler, [`workload`] runs fio-like jobs on a virtual clock and
//! [`allocator`] places file extents into zones.

pub mod allocator;
pub mod device;
pub mod latency;
pub mod profiles;
pub mod scheduler;
pub mod workload;

pub use allocator::{
    map_segments, replay, AllocError, AllocatorState, ChurnEvent, Extent, LifetimeHint, PlacementPolicy, ReplayError,
    ReplayStep, ReplaySummary, SegmentError, SegmentType, ZoneUsage,
};
pub use device::{
    Device, DeviceError, DeviceProfile, ProfileError, ReadAck, WriteAck, Zone, ZoneAction, ZoneState,
    ZoneTransition,
};
pub use latency::{calibrate, CalibrationError, CalibrationTargets, LatencyError, LatencyParams, STRIPE_BYTES};
pub use scheduler::{apply_to_device, Completion, DEFAULT_MERGE_CAP_BYTES, IoKind, IoRequest, MergedOp, Scheduler, SchedulerKind};
pub use workload::{
    percentile, precondition_fill, run_on_device, run_simulation, Namespace, Region, RwMode, SizeSpec,
    SpecError, StatsReport, WorkloadSpec, ZoneMode,
};

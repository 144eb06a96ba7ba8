//! fio-like workloads: job specs, offset streams, the event engine and
//! result aggregation.

pub mod engine;
pub mod spec;
pub mod stats;
pub mod stream;

pub use engine::{precondition_fill, report, run_on_device, run_simulation, Region, RunOutcome, ERROR_NS};
pub use spec::{
    parse_percentile_list, JobRange, Namespace, RwMode, SizeSpec, SpecError, WorkloadSpec, ZoneMode,
};
pub use stats::{
    percentile, ClatStats, DirStats, EmptySamples, JobReport, JobSamples, RunConfig, StatsReport,
};
pub use stream::{job_rng, offset_stream, OffsetStream};

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use zns_sim::profiles::{self, BUILTIN};
use zns_sim::workload::parse_percentile_list;
use zns_sim::{
    calibrate, replay, run_simulation, CalibrationError, CalibrationTargets, ChurnEvent, DeviceProfile,
    Namespace, PlacementPolicy, RwMode, SchedulerKind, SizeSpec, StatsReport, WorkloadSpec, ZoneMode,
};

#[derive(Parser)]
#[command(name = "zns-sim", version, about = "Discrete-event ZNS SSD simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a fio-like job against a device profile.
    Bench(BenchArgs),
    /// Invert device targets into latency parameters and write a profile.
    Calibrate(CalibrateArgs),
    /// Zone allocator tools.
    Alloc {
        #[command(subcommand)]
        cmd: AllocCmd,
    },
    /// Built-in device profiles.
    Profiles {
        #[command(subcommand)]
        cmd: ProfilesCmd,
    },
}

#[derive(Subcommand)]
enum AllocCmd {
    /// Replay a churn scenario and report zone occupancy and resets.
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum ProfilesCmd {
    /// List the built-in profiles.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Lifetime,
    HintBlind,
}

#[derive(Args)]
struct BenchArgs {
    /// Profile file or built-in name.
    #[arg(long, default_value = "zn540")]
    profile: PathBuf,
    /// Job spec file (JSON, fio field names).
    #[arg(long)]
    job: Option<PathBuf>,
    #[arg(long)]
    scheduler: Option<SchedulerKind>,
    #[arg(long, env = "ZNS_SIM_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    fio: FioOverrides,
}

/// Per-field overrides named after fio's options.
#[derive(Args, Default)]
struct FioOverrides {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    rw: Option<RwMode>,
    #[arg(long)]
    bs: Option<SizeSpec>,
    #[arg(long)]
    iodepth: Option<u32>,
    #[arg(long)]
    numjobs: Option<u32>,
    #[arg(long)]
    size: Option<SizeSpec>,
    #[arg(long)]
    offset: Option<SizeSpec>,
    #[arg(long = "offset_increment", alias = "offset-increment")]
    offset_increment: Option<SizeSpec>,
    #[arg(long)]
    zonemode: Option<ZoneMode>,
    #[arg(long)]
    namespace: Option<Namespace>,
    #[arg(long)]
    runtime: Option<f64>,
    #[arg(long = "ramp_time", alias = "ramp-time")]
    ramp_time: Option<f64>,
    #[arg(long = "time_based", alias = "time-based")]
    time_based: bool,
    /// fio syntax, e.g. 50:95.
    #[arg(long = "percentile_list", alias = "percentile-list")]
    percentile_list: Option<String>,
    #[arg(long = "group_reporting", alias = "group-reporting")]
    group_reporting: bool,
    /// Write the whole target namespace before the run.
    #[arg(long)]
    prefill: bool,
    #[arg(long = "merge_cap", alias = "merge-cap")]
    merge_cap: Option<SizeSpec>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Targets file (JSON).
    #[arg(long)]
    targets: PathBuf,
    /// Profile whose geometry the calibrated latency block is attached to.
    #[arg(long, default_value = "zn540")]
    profile: PathBuf,
    /// Where to write the calibrated profile.
    #[arg(long)]
    output: PathBuf,
    /// Skip the verification runs.
    #[arg(long)]
    no_verify: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Scenario file: a JSON list of place/invalidate events.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "zn540")]
    profile: PathBuf,
    #[arg(long, value_enum, default_value = "lifetime")]
    policy: Policy,
    /// Seed of the hint-blind policy.
    #[arg(long, env = "ZNS_SIM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn io(err: anyhow::Error) -> Failure {
    Failure { code: 1, err }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Bench(a) => bench(a),
        Cmd::Calibrate(a) => cmd_calibrate(a),
        Cmd::Alloc { cmd: AllocCmd::Replay(a) } => alloc_replay(a),
        Cmd::Profiles { cmd: ProfilesCmd::List } => {
            profiles_list();
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn load_profile(path: &Path) -> Result<DeviceProfile, Failure> {
    profiles::load(path).map_err(|e| config(e.into()))
}

fn emit(output: Option<&Path>, body: &str) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, body)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(io),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn build_spec(a: &BenchArgs) -> anyhow::Result<WorkloadSpec> {
    let mut spec = match &a.job {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str::<WorkloadSpec>(&text).with_context(|| format!("malformed job {}", path.display()))?
        }
        None => WorkloadSpec::new(a.fio.rw.ok_or_else(|| anyhow!("rw: give --job or --rw"))?),
    };
    let f = &a.fio;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = f.$field.clone() {
                spec.$field = v;
            }
        )*};
    }
    set!(name, rw, bs, iodepth, numjobs, offset, offset_increment, zonemode, namespace, runtime, ramp_time, merge_cap);
    if let Some(p) = &f.percentile_list {
        spec.percentile_list = parse_percentile_list(p).map_err(|e| anyhow!("percentile_list: {e}"))?;
    }
    if f.size.is_some() {
        spec.size = f.size;
    }
    spec.time_based |= f.time_based;
    spec.group_reporting |= f.group_reporting;
    spec.prefill |= f.prefill;
    if let Some(s) = a.scheduler {
        spec.scheduler = s;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let profile = load_profile(&a.profile)?;
    let spec = build_spec(&a).map_err(config)?;
    spec.validate(&profile).map_err(|e| config(e.into()))?;
    let report = run_simulation(&profile, &spec).map_err(|e| config(e.into()))?;
    let body = match a.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    };
    emit(a.output.as_deref(), &body)?;
    let line = report.summary_line();
    if a.output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

fn achieved(profile: &DeviceProfile, rw: RwMode, qd: u32, bs: u64) -> anyhow::Result<StatsReport> {
    let mut s = WorkloadSpec::new(rw);
    if profile.conventional_sectors > 0 {
        s.namespace = Namespace::Conventional;
    } else {
        s.zonemode = ZoneMode::Zbd;
    }
    s.bs = SizeSpec::Bytes(bs);
    s.iodepth = qd;
    s.time_based = true;
    s.runtime = 0.2;
    s.ramp_time = 0.02;
    s.prefill = true;
    Ok(run_simulation(profile, &s)?)
}

fn seqread_gap(profile: &DeviceProfile, qd: u32) -> anyhow::Result<f64> {
    let median = |sched| -> anyhow::Result<f64> {
        let mut s = WorkloadSpec::new(RwMode::Read);
        s.zonemode = ZoneMode::Zbd;
        s.size = Some(SizeSpec::Zones(1));
        s.iodepth = qd;
        s.scheduler = sched;
        s.time_based = true;
        s.runtime = 0.2;
        s.ramp_time = 0.02;
        s.prefill = true;
        let r = run_simulation(profile, &s)?;
        r.group.read.percentile_us(50.0).ok_or_else(|| anyhow!("no read samples"))
    };
    let mq = median(SchedulerKind::MqDeadline)?;
    let none = median(SchedulerKind::None)?;
    Ok((mq - none) / mq * 100.0)
}

fn verify(profile: &DeviceProfile, t: &CalibrationTargets) -> anyhow::Result<()> {
    let block = t.block_size;
    let big = 128 * 1024;
    let rows = [
        ("read_peak_iops", t.read_peak_iops, achieved(profile, RwMode::Read, 64, block)?.group.read.iops),
        ("write_small_iops", t.write_small_iops, achieved(profile, RwMode::Write, 64, block)?.group.write.iops),
        ("read_peak_bw", t.read_peak_bw, achieved(profile, RwMode::Read, 64, big)?.group.read.bw_bytes),
        ("write_peak_bw", t.write_peak_bw, achieved(profile, RwMode::Write, 64, big)?.group.write.bw_bytes),
        ("seqread_overhead_pct", t.seqread_overhead_pct, seqread_gap(profile, t.overhead_queue_depth)?),
    ];
    println!("{:<22} {:>16} {:>16} {:>9}", "target", "wanted", "achieved", "delta");
    for (name, want, got) in rows {
        println!("{name:<22} {want:>16.2} {got:>16.2} {:>8.2}%", (got - want) / want * 100.0);
    }
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.targets)
        .with_context(|| format!("cannot read {}", a.targets.display()))
        .map_err(config)?;
    let targets: CalibrationTargets = serde_json::from_str(&text)
        .with_context(|| format!("malformed targets {}", a.targets.display()))
        .map_err(config)?;
    let mut profile = load_profile(&a.profile)?;
    profile.latency = match calibrate(&targets) {
        Ok(l) => l,
        Err(e @ CalibrationError::Infeasible { .. }) => return Err(Failure { code: 3, err: e.into() }),
        Err(e) => return Err(config(e.into())),
    };
    profile.validate().map_err(|e| config(e.into()))?;
    let mut json = serde_json::to_string_pretty(&profile).map_err(|e| io(e.into()))?;
    json.push('\n');
    emit(Some(&a.output), &json)?;
    if !a.no_verify {
        verify(&profile, &targets).map_err(io)?;
    }
    Ok(())
}

fn parse_scenario(text: &str) -> anyhow::Result<Vec<ChurnEvent>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(text).context("scenario must be a JSON list of events")?;
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).with_context(|| format!("event {i}")))
        .collect()
}

fn alloc_replay(a: ReplayArgs) -> Result<(), Failure> {
    let profile = load_profile(&a.profile)?;
    let text = fs::read_to_string(&a.scenario)
        .with_context(|| format!("cannot read {}", a.scenario.display()))
        .map_err(config)?;
    let events = parse_scenario(&text)
        .with_context(|| format!("malformed scenario {}", a.scenario.display()))
        .map_err(config)?;
    let policy = match a.policy {
        Policy::Lifetime => PlacementPolicy::LifetimeAware,
        Policy::HintBlind => PlacementPolicy::HintBlind { seed: a.seed },
    };
    let summary = replay(&profile, &events, policy).map_err(|e| config(e.into()))?;
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| io(e.into()))?;
    json.push('\n');
    emit(a.output.as_deref(), &json)?;
    let amp = summary
        .space_amplification
        .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    let line = format!(
        "events={} resets={} mixed_zone_epochs={} space_amplification={amp} errors={}",
        summary.events,
        summary.resets,
        summary.mixed_zone_epochs,
        summary.errors.len()
    );
    if a.output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    if let Some(e) = summary.errors.first() {
        eprintln!("first failed event {}: {}", e.event, e.message);
    }
    Ok(())
}

fn profiles_list() {
    println!("{:<12} {:>10} {:>10} {:>8} {:>7} {:>12}", "name", "zone MiB", "cap MiB", "zones", "active", "conv MiB");
    for (name, _) in BUILTIN {
        let p = profiles::builtin(name).expect("built-in profile");
        let mib = |s: u64| s * p.sector_size / (1 << 20);
        println!(
            "{name:<12} {:>10} {:>10} {:>8} {:>7} {:>12}",
            mib(p.zone_size),
            mib(p.zone_capacity),
            p.nr_zones,
            p.max_active_zones,
            mib(p.conventional_sectors)
        );
    }
}

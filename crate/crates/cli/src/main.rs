//! `pgan`: simulate GAN generators on the photonic accelerator model.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage error, 3 parse
//! error, 4 validation error (graph, shape or schedule), 5 constraint or
//! mapping error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pgan_core::arch::ArchConfig;
use pgan_core::devices::DeviceConfig;
use pgan_core::dse::{explore, SearchSpace, DEFAULT_GRID};
use pgan_core::ir::{load_model, load_model_dir, ModelGraph};
use pgan_core::perf::{evaluate, PerfReport};
use pgan_core::report::{compare_opts, write_compare_csv, write_dse_csv, write_json, write_summary_csv, RunConfig};
use pgan_core::schedule::{validate_schedule, PowerInterval, RouteSwitch, ScheduleOptions};
use pgan_core::sparse::{exhaustive_binary_check, fuzz_against_dense, ExhaustiveReport, FuzzReport};
use pgan_core::Error;

#[derive(Debug, Parser)]
#[command(name = "pgan", version, about = "Photonic GAN accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schedule and cost one or more models on a fixed architecture.
    Simulate(SimulateArgs),
    /// Energy of each model under every optimization setting, normalized to the baseline.
    CompareOpts(CompareArgs),
    /// Exhaustive design-space exploration over [N, K, L, M].
    Dse(DseArgs),
    /// Check the sparse transposed-convolution dataflow against the dense path.
    TconvCheck(TconvArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Model file; repeat for several. Defaults to every model in --models.
    #[arg(long = "model")]
    model: Vec<PathBuf>,
    /// Directory of bundled models.
    #[arg(long, default_value = "models")]
    models: PathBuf,
    /// Device parameter overrides (TOML).
    #[arg(long)]
    devices: Option<PathBuf>,
    /// Comma-separated subset of sparse, pipeline, gating; or none.
    #[arg(long, default_value = "sparse,pipeline,gating")]
    opts: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Architecture as N,K,L,M.
    #[arg(long, default_value = "16,2,11,3")]
    arch: String,
    /// Add one energy column per device class to summary.csv.
    #[arg(long)]
    breakdown: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "16,2,11,3")]
    arch: String,
}

#[derive(Debug, Args)]
struct DseArgs {
    #[command(flatten)]
    common: Common,
    /// Search grid, e.g. n=4:36:4,k=1:8,l=1:16,m=1:8.
    #[arg(long, default_value = DEFAULT_GRID)]
    grid: String,
    /// Peak power budget in watts.
    #[arg(long, default_value_t = 100.0)]
    budget: f64,
    /// Per-model objective weights, comma-separated, in model order.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
}

#[derive(Debug, Args)]
struct TconvArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Randomized multi-channel cases.
    #[arg(long, default_value_t = 500)]
    cases: usize,
    #[arg(long, default_value_t = 8)]
    max_input: usize,
    #[arg(long, default_value_t = 5)]
    max_kernel: usize,
    #[arg(long, default_value_t = 3)]
    max_stride: usize,
    #[arg(long, default_value_t = 4)]
    max_channels: usize,
    /// Also write tconv_check.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Parse { .. }) => 3,
        Some(Error::Validation { .. } | Error::Shape(_)) => 4,
        Some(Error::Constraint(_) | Error::Mapping(_)) => 5,
        Some(Error::Io { .. }) | None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::CompareOpts(a) => compare(a),
        Command::Dse(a) => dse(a),
        Command::TconvCheck(a) => tconv_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pgan: error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their
/// parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string().replace('\n', " ");
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

struct Loaded {
    models: Vec<ModelGraph>,
    sources: Vec<String>,
    devices: DeviceConfig,
    opts: ScheduleOptions,
}

fn load(common: &Common) -> anyhow::Result<Loaded> {
    let devices = match &common.devices {
        Some(p) => DeviceConfig::load(p)?,
        None => DeviceConfig::default(),
    };
    let opts = ScheduleOptions::parse_toggles(&common.opts)?;
    let (models, sources) = if common.model.is_empty() {
        let models = load_model_dir(&common.models)?;
        if models.is_empty() {
            return Err(anyhow!("{}: no *.toml models found", common.models.display()));
        }
        let sources = models.iter().map(|m| m.name().to_string()).collect();
        (models, sources)
    } else {
        let models = common
            .model
            .iter()
            .map(|p| {
                load_model(p).map_err(|e| match e {
                    Error::Validation { .. } | Error::Shape(_) => anyhow::Error::new(e).context(p.display().to_string()),
                    other => other.into(),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let sources = common.model.iter().map(|p| p.display().to_string()).collect();
        (models, sources)
    };
    fs::create_dir_all(&common.out).map_err(|e| Error::Io {
        path: common.out.display().to_string(),
        source: e,
    })?;
    Ok(Loaded {
        models,
        sources,
        devices,
        opts,
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn parse_arch(s: &str) -> anyhow::Result<ArchConfig> {
    Ok(s.parse::<ArchConfig>()?)
}

#[derive(Serialize)]
struct ModelOutput<'a> {
    report: &'a PerfReport,
    schedule_csv: String,
    power_intervals: &'a [PowerInterval],
    route_switches: &'a [RouteSwitch],
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    config: &'a RunConfig,
    models: Vec<ModelOutput<'a>>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let arch = parse_arch(&a.arch)?;
    let l = load(&a.common)?;
    let mut cfg = RunConfig::new("simulate", a.common.seed, l.opts, l.devices.clone());
    cfg.arch = Some(arch);
    cfg.models = l.sources.clone();

    let mut results = Vec::new();
    for g in &l.models {
        let (s, r) = evaluate(g, &arch, &l.opts, &l.devices).with_context(|| format!("model {}", g.name()))?;
        if let Err(v) = validate_schedule(&s, &arch) {
            return Err(Error::Validation {
                location: pgan_core::Location::Graph,
                message: format!("schedule for {} has {} violations, first: {}", g.name(), v.len(), v[0]),
            }
            .into());
        }
        results.push((s, r));
    }

    let out = &a.common.out;
    let single = results.len() == 1;
    let mut entries = Vec::new();
    for (s, r) in &results {
        let name = if single {
            "schedule.csv".to_string()
        } else {
            format!("schedule_{}.csv", file_stem(&r.model))
        };
        let path = out.join(&name);
        let mut w = create(&path)?;
        w.write_all(cfg.header_line().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        s.write_csv(&mut w)?;
        entries.push(ModelOutput {
            report: r,
            schedule_csv: name,
            power_intervals: &s.power,
            route_switches: &s.switches,
        });
    }
    let reports: Vec<PerfReport> = results.iter().map(|(_, r)| r.clone()).collect();
    write_summary_csv(create(&out.join("summary.csv"))?, &cfg, &reports, a.breakdown)?;
    write_json(
        out.join("report.json"),
        &SimulateOutput {
            config: &cfg,
            models: entries,
        },
    )?;
    for r in &reports {
        println!(
            "{}: arch {} latency {:.3} ns energy {:.6e} J GOPS {:.3} EPB {:.6e} J/bit",
            r.model, r.arch, r.total_latency_ns, r.total_energy_j, r.gops, r.epb_j_per_bit
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn compare(a: CompareArgs) -> anyhow::Result<()> {
    let arch = parse_arch(&a.arch)?;
    let l = load(&a.common)?;
    let mut cfg = RunConfig::new("compare-opts", a.common.seed, l.opts, l.devices.clone());
    cfg.arch = Some(arch);
    cfg.models = l.sources.clone();
    let rows = l
        .models
        .iter()
        .map(|g| compare_opts(g, &arch, &l.opts, &l.devices))
        .collect::<Result<Vec<_>, _>>()?;
    let path = a.common.out.join("compare.csv");
    write_compare_csv(create(&path)?, &cfg, &rows)?;
    for r in &rows {
        println!(
            "{}: baseline 1 sw_optimized {:.4} pipelined {:.4} power_gating {:.4} all {:.4}",
            r.model, r.sw_optimized, r.pipelined, r.power_gating, r.all
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct BestOutput<'a> {
    config: &'a RunConfig,
    best: Option<&'a pgan_core::dse::DsePoint>,
    points: usize,
    feasible: usize,
}

fn dse(a: DseArgs) -> anyhow::Result<()> {
    let mut space: SearchSpace = a.grid.parse()?;
    space.budget_w = a.budget;
    space.weights = a.weights.clone();
    let l = load(&a.common)?;
    let mut cfg = RunConfig::new("dse", a.common.seed, l.opts, l.devices.clone());
    cfg.grid = Some(a.grid.clone());
    cfg.models = l.sources.clone();
    let result = explore(&space, &l.models, &l.devices, &l.opts)?;
    let out = &a.common.out;
    write_dse_csv(create(&out.join("dse.csv"))?, &cfg, &result.points)?;
    write_json(
        out.join("best.json"),
        &BestOutput {
            config: &cfg,
            best: result.best.as_ref(),
            points: result.points.len(),
            feasible: result.points.iter().filter(|p| p.feasible).count(),
        },
    )?;
    match &result.best {
        Some(b) => println!(
            "best {} objective {:.6e} GOPS {:.3} EPB {:.6e} peak {:.3} W",
            b.config, b.objective, b.gops, b.epb, b.peak_power_w
        ),
        None => println!("no configuration meets the {} W budget", space.budget_w),
    }
    println!("{} points, wrote {}", result.points.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TconvSummary {
    exhaustive: ExhaustiveReport,
    fuzz: FuzzReport,
}

fn tconv_check(a: TconvArgs) -> anyhow::Result<()> {
    let exhaustive = exhaustive_binary_check(4, 3, 3, a.seed)?;
    let fuzz = fuzz_against_dense(a.seed, a.cases, a.max_input, a.max_kernel, a.max_stride, a.max_channels)?;
    let summary = TconvSummary { exhaustive, fuzz };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        write_json(dir.join("tconv_check.json"), &summary)?;
    }
    let e = &summary.exhaustive;
    println!(
        "exhaustive: {} geometries, {} binary inputs, {} pattern mismatches, {} output mismatches, {} without savings",
        e.geometries, e.inputs, e.pattern_mismatches, e.output_mismatches, e.savings_failures
    );
    println!(
        "random: {} cases, {} mismatches (seed {})",
        summary.fuzz.cases, summary.fuzz.mismatches, a.seed
    );
    let bad = e.pattern_mismatches as u64 + e.output_mismatches + e.savings_failures as u64 + summary.fuzz.mismatches as u64;
    if bad > 0 {
        return Err(Error::Constraint("sparse and dense transposed convolution disagree".into()).into());
    }
    Ok(())
}

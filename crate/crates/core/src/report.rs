//! Output files. Every CSV starts with a `# config: {json}` line holding
//! the effective configuration, so runs can be reproduced from their
//! outputs; nothing time-dependent is written.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::arch::ArchConfig;
use crate::devices::DeviceConfig;
use crate::dse::DsePoint;
use crate::error::{Error, Result};
use crate::ir::ModelGraph;
use crate::perf::{evaluate, EnergyBreakdown, PerfReport};
use crate::schedule::ScheduleOptions;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Effective configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub arch: Option<ArchConfig>,
    pub grid: Option<String>,
    pub opts: ScheduleOptions,
    pub devices: DeviceConfig,
    pub models: Vec<String>,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, opts: ScheduleOptions, devices: DeviceConfig) -> Self {
        RunConfig {
            tool: "pgan".into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            arch: None,
            grid: None,
            opts,
            devices,
            models: Vec::new(),
        }
    }

    pub fn header_line(&self) -> String {
        format!("# config: {}\n", serde_json::to_string(self).expect("config serializes"))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io {
        path: "csv output".into(),
        source: std::io::Error::other(e),
    }
}

fn io_error(e: std::io::Error) -> Error {
    Error::io("csv output", e)
}

fn writer<W: Write>(mut w: W, cfg: &RunConfig) -> Result<csv::Writer<W>> {
    w.write_all(cfg.header_line().as_bytes()).map_err(io_error)?;
    Ok(csv::Writer::from_writer(w))
}

/// One row per model; `breakdown` adds one energy column per device class.
pub fn write_summary_csv<W: Write>(w: W, cfg: &RunConfig, reports: &[PerfReport], breakdown: bool) -> Result<()> {
    let mut wr = writer(w, cfg)?;
    let mut header: Vec<String> = [
        "model",
        "arch",
        "opts",
        "latency_ns",
        "energy_j",
        "avg_power_w",
        "peak_power_w",
        "gops",
        "epb_j_per_bit",
        "dense_macs",
        "reduced_macs",
        "tiles",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if breakdown {
        header.extend(EnergyBreakdown::NAMES.iter().map(|n| format!("{n}_j")));
    }
    wr.write_record(&header).map_err(csv_error)?;
    for r in reports {
        let mut row = vec![
            r.model.clone(),
            r.arch.tuple().map(|v| v.to_string()).join(" "),
            r.opts.toggles(),
            r.total_latency_ns.to_string(),
            r.total_energy_j.to_string(),
            r.avg_power_w.to_string(),
            r.peak_power_w.to_string(),
            r.gops.to_string(),
            r.epb_j_per_bit.to_string(),
            r.dense_macs.to_string(),
            r.reduced_macs.to_string(),
            r.tiles.to_string(),
        ];
        if breakdown {
            row.extend(r.breakdown.values().iter().map(|v| v.to_string()));
        }
        wr.write_record(&row).map_err(csv_error)?;
    }
    wr.flush().map_err(io_error)
}

/// Energy of one model under each optimization setting, normalized to the
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub model: String,
    pub baseline_j: f64,
    pub baseline: f64,
    pub sw_optimized: f64,
    pub pipelined: f64,
    pub power_gating: f64,
    pub all: f64,
}

pub const COMPARE_SETTINGS: [&str; 5] = ["baseline", "sw_optimized", "pipelined", "power_gating", "all"];

/// Options for each column of [`CompareRow`], in order.
pub fn compare_settings(base: &ScheduleOptions) -> [ScheduleOptions; 5] {
    let plain = ScheduleOptions {
        sparse: false,
        pipelined: false,
        power_gating: false,
        ..*base
    };
    [
        plain,
        ScheduleOptions { sparse: true, ..plain },
        ScheduleOptions {
            pipelined: true,
            ..plain
        },
        ScheduleOptions {
            power_gating: true,
            ..plain
        },
        ScheduleOptions {
            sparse: true,
            pipelined: true,
            power_gating: true,
            ..plain
        },
    ]
}

pub fn compare_opts(
    graph: &ModelGraph,
    arch: &ArchConfig,
    base: &ScheduleOptions,
    devices: &DeviceConfig,
) -> Result<CompareRow> {
    let mut e = [0.0; 5];
    for (slot, opts) in e.iter_mut().zip(compare_settings(base)) {
        *slot = evaluate(graph, arch, &opts, devices)?.1.total_energy_j;
    }
    let norm = |v: f64| v / e[0];
    Ok(CompareRow {
        model: graph.name().to_string(),
        baseline_j: e[0],
        baseline: 1.0,
        sw_optimized: norm(e[1]),
        pipelined: norm(e[2]),
        power_gating: norm(e[3]),
        all: norm(e[4]),
    })
}

pub fn write_compare_csv<W: Write>(w: W, cfg: &RunConfig, rows: &[CompareRow]) -> Result<()> {
    let mut wr = writer(w, cfg)?;
    let mut header = vec!["model".to_string(), "baseline_energy_j".to_string()];
    header.extend(COMPARE_SETTINGS.iter().map(|s| s.to_string()));
    wr.write_record(&header).map_err(csv_error)?;
    for r in rows {
        wr.write_record([
            r.model.clone(),
            r.baseline_j.to_string(),
            r.baseline.to_string(),
            r.sw_optimized.to_string(),
            r.pipelined.to_string(),
            r.power_gating.to_string(),
            r.all.to_string(),
        ])
        .map_err(csv_error)?;
    }
    wr.flush().map_err(io_error)
}

pub fn write_dse_csv<W: Write>(w: W, cfg: &RunConfig, points: &[DsePoint]) -> Result<()> {
    let mut wr = writer(w, cfg)?;
    wr.write_record(["n", "k", "l", "m", "gops", "epb_j_per_bit", "objective", "peak_power_w", "feasible"])
        .map_err(csv_error)?;
    for p in points {
        let [n, k, l, m] = p.config.tuple();
        wr.write_record([
            n.to_string(),
            k.to_string(),
            l.to_string(),
            m.to_string(),
            p.gops.to_string(),
            p.epb.to_string(),
            p.objective.to_string(),
            p.peak_power_w.to_string(),
            p.feasible.to_string(),
        ])
        .map_err(csv_error)?;
    }
    wr.flush().map_err(io_error)
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{LayerSpec, TensorShape};

    #[test]
    fn summary_starts_with_config_line() {
        let g = ModelGraph::new(
            "tiny",
            TensorShape::vector(4),
            vec![LayerSpec::Dense {
                in_features: 4,
                out_features: 2,
                has_bias: false,
            }],
        )
        .unwrap();
        let dev = DeviceConfig::default();
        let (_, r) = evaluate(&g, &ArchConfig::default(), &ScheduleOptions::all(), &dev).unwrap();
        let mut cfg = RunConfig::new("simulate", 9, ScheduleOptions::all(), dev);
        cfg.arch = Some(ArchConfig::default());
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &cfg, &[r], true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let first = lines.next().unwrap();
        assert!(first.starts_with("# config: {"));
        assert!(first.contains("\"seed\":9"));
        assert!(first.contains("\"n\":16"));
        assert!(lines.next().unwrap().ends_with("tuning_static_j,ecu_j"));
        assert!(lines.next().unwrap().starts_with("tiny,16 2 11 3,\"sparse,pipeline,gating\","));
    }

    #[test]
    fn baseline_column_is_exactly_one() {
        let g = ModelGraph::new(
            "tiny",
            TensorShape::vector(40),
            vec![LayerSpec::Dense {
                in_features: 40,
                out_features: 20,
                has_bias: true,
            }],
        )
        .unwrap();
        let row = compare_opts(&g, &ArchConfig::default(), &ScheduleOptions::baseline(), &DeviceConfig::default()).unwrap();
        assert_eq!(row.baseline, 1.0);
        assert!(row.all <= row.pipelined && row.pipelined <= 1.0);
    }
}

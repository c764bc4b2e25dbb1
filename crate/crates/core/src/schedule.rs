//! Tile-level schedules: timing, unit assignment, power gating and the
//! per-layer device work that the energy model charges.
//!
//! Times are integer femtoseconds so that overlap checks are exact. Tiles of
//! one unit and one pass share a stage latency, so a unit's tiles are stored
//! as runs: `count` operations starting `period` apart, each busy for
//! `busy`. [`Schedule::expand`] yields the individual tiles.
//!
//! Inside a compute unit, stage 1 (DACs, VCSELs, MR banks) of the next tile
//! may start as soon as stage 2 (detectors, bias VCSEL, activation, ADC) of
//! the current tile can accept it; with no optical buffering the next
//! tile's stage 2 must start right after its stage 1, so consecutive tiles
//! start `max(stage1, stage2)` apart when pipelined and `stage1 + stage2`
//! apart otherwise. Layers run one after another.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::{tile_layer, ArchConfig, BlockKind, Domain, LayerTiling};
use crate::devices::{DeviceConfig, DeviceParams};
use crate::error::{Error, Result};
use crate::ir::{layer_dense_macs, LayerSpec, ModelGraph, NormKind};

pub fn ns_to_fs(ns: f64) -> u64 {
    (ns * 1e6).round() as u64
}

pub fn fs_to_ns(fs: u64) -> f64 {
    fs as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleOptions {
    /// Skip zero-inserted operands of transposed convolutions.
    pub sparse: bool,
    pub pipelined: bool,
    pub power_gating: bool,
    /// Charge the EO tuning latency in stage 1 whenever weights change.
    pub include_eo_modulation: bool,
    /// Convolution units keep weights resident across output pixels.
    pub weight_stationary_conv: bool,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions::all()
    }
}

impl ScheduleOptions {
    pub fn baseline() -> Self {
        ScheduleOptions {
            sparse: false,
            pipelined: false,
            power_gating: false,
            include_eo_modulation: false,
            weight_stationary_conv: true,
        }
    }

    pub fn all() -> Self {
        ScheduleOptions {
            sparse: true,
            pipelined: true,
            power_gating: true,
            ..ScheduleOptions::baseline()
        }
    }

    /// Parses a comma-separated subset of `sparse`, `pipeline`, `gating`
    /// (`none` or an empty string for the baseline).
    pub fn parse_toggles(s: &str) -> Result<Self> {
        let mut opts = ScheduleOptions::baseline();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match item {
                "sparse" => opts.sparse = true,
                "pipeline" | "pipelined" => opts.pipelined = true,
                "gating" | "power_gating" => opts.power_gating = true,
                "none" => {}
                other => {
                    return Err(Error::Parse {
                        source_name: "--opts".into(),
                        message: format!("unknown optimization {other:?}; expected sparse, pipeline or gating"),
                    })
                }
            }
        }
        Ok(opts)
    }

    pub fn toggles(&self) -> String {
        let names: Vec<&str> = [
            (self.sparse, "sparse"),
            (self.pipelined, "pipeline"),
            (self.power_gating, "gating"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join(",")
        }
    }
}

/// Stage latencies in femtoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageLatencies {
    /// DAC + VCSEL.
    pub stage1: u64,
    pub eo_modulation: u64,
    /// PD + ADC, for tiles whose partial sums go to the ECU.
    pub stage2_partial: u64,
    /// PD + bias VCSEL + ADC.
    pub stage2_final: u64,
    /// PD + SOA, added to the final stage 2 when an activation is fused.
    pub activation: u64,
    /// Stage 2 of a standalone activation pass: PD + SOA + ADC.
    pub activation_only: u64,
}

impl StageLatencies {
    pub fn new(d: &DeviceParams) -> Self {
        let pd = d.photodetector.latency_ns;
        let adc = d.adc_8bit.latency_ns;
        StageLatencies {
            stage1: ns_to_fs(d.dac_8bit.latency_ns + d.vcsel.latency_ns),
            eo_modulation: ns_to_fs(d.eo_tuning.latency_ns),
            stage2_partial: ns_to_fs(pd + adc),
            stage2_final: ns_to_fs(pd + d.vcsel.latency_ns + adc),
            activation: ns_to_fs(pd + d.soa.latency_ns),
            activation_only: ns_to_fs(pd + d.soa.latency_ns + adc),
        }
    }
}

/// A run of `count` identical tile operations on one unit and stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TileOp {
    pub layer: usize,
    pub block: BlockKind,
    pub stage: u8,
    pub start_fs: u64,
    pub count: u64,
    pub period_fs: u64,
    pub busy_fs: u64,
    pub rows_used: usize,
    pub cols_used: usize,
    pub reduced: bool,
    /// Produces finished outputs rather than partial sums.
    pub final_pass: bool,
}

impl TileOp {
    pub fn duration_fs(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            (self.count - 1) * self.period_fs + self.busy_fs
        }
    }

    pub fn end_fs(&self) -> u64 {
        self.start_fs + self.duration_fs()
    }
}

/// Device activations and buffer traffic of one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerWork {
    pub tiles: u64,
    pub dac: u64,
    pub vcsel: u64,
    pub pd: u64,
    pub adc: u64,
    pub soa: u64,
    pub ecu_bytes: u64,
    pub executed_macs: u64,
    pub dense_macs: u64,
    pub weight_loads: u64,
}

impl std::ops::AddAssign for LayerWork {
    fn add_assign(&mut self, o: Self) {
        self.tiles += o.tiles;
        self.dac += o.dac;
        self.vcsel += o.vcsel;
        self.pd += o.pd;
        self.adc += o.adc;
        self.soa += o.soa;
        self.ecu_bytes += o.ecu_bytes;
        self.executed_macs += o.executed_macs;
        self.dense_macs += o.dense_macs;
        self.weight_loads += o.weight_loads;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRecord {
    pub index: usize,
    pub kind: String,
    pub domain: Option<Domain>,
    pub start_fs: u64,
    pub end_fs: u64,
    /// Set for activation layers executed inside the preceding layer.
    pub fused_into: Option<usize>,
    pub work: LayerWork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PowerInterval {
    pub domain: Domain,
    pub start_fs: u64,
    pub end_fs: u64,
}

/// A PCMC reconfiguration routing signals to another block group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RouteSwitch {
    pub time_fs: u64,
    pub to: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub arch: ArchConfig,
    pub opts: ScheduleOptions,
    pub ops: Vec<TileOp>,
    pub layers: Vec<LayerRecord>,
    pub power: Vec<PowerInterval>,
    pub switches: Vec<RouteSwitch>,
    pub total_fs: u64,
}

impl Schedule {
    pub fn empty(arch: ArchConfig, opts: ScheduleOptions) -> Self {
        Schedule {
            arch,
            opts,
            ops: Vec::new(),
            layers: Vec::new(),
            power: Vec::new(),
            switches: Vec::new(),
            total_fs: 0,
        }
    }

    pub fn total_ns(&self) -> f64 {
        fs_to_ns(self.total_fs)
    }

    pub fn work(&self) -> LayerWork {
        let mut w = LayerWork::default();
        for l in &self.layers {
            w += l.work;
        }
        w
    }

    /// Powered time of a domain.
    pub fn powered_fs(&self, domain: Domain) -> u64 {
        self.power
            .iter()
            .filter(|p| p.domain == domain)
            .map(|p| p.end_fs - p.start_fs)
            .sum()
    }

    /// One operation per tile, in run order.
    pub fn expand(&self) -> Vec<TileOp> {
        let mut out = Vec::new();
        for op in &self.ops {
            for i in 0..op.count {
                out.push(TileOp {
                    start_fs: op.start_fs + i * op.period_fs,
                    count: 1,
                    ..op.clone()
                });
            }
        }
        out
    }

    /// One row per run: layer, block, unit, stage, start, duration and run
    /// shape.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io {
            path: "schedule csv".into(),
            source: std::io::Error::other(e),
        };
        wr.write_record([
            "layer",
            "block",
            "unit",
            "stage",
            "start_ns",
            "dur_ns",
            "count",
            "period_ns",
            "busy_ns",
            "rows_used",
            "cols_used",
            "reduced",
            "final_pass",
        ])
        .map_err(csv_err)?;
        for op in &self.ops {
            wr.write_record([
                op.layer.to_string(),
                op.block.kind_name().to_string(),
                op.block.unit().to_string(),
                op.stage.to_string(),
                fs_to_ns(op.start_fs).to_string(),
                fs_to_ns(op.duration_fs()).to_string(),
                op.count.to_string(),
                fs_to_ns(op.period_fs).to_string(),
                fs_to_ns(op.busy_fs).to_string(),
                op.rows_used.to_string(),
                op.cols_used.to_string(),
                op.reduced.to_string(),
                op.final_pass.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("schedule csv", e))
    }
}

/// Number of `j` in `[a, b)` with `j % units == unit`.
fn round_robin_share(a: u64, b: u64, unit: u64, units: u64) -> u64 {
    let below = |x: u64| x / units + u64::from(unit < x % units);
    below(b) - below(a)
}

struct Pass {
    tiles: u64,
    stage2: u64,
    rows: usize,
    cols: usize,
    reduced: bool,
    final_pass: bool,
}

struct Emitter {
    pipelined: bool,
    ops: Vec<TileOp>,
}

impl Emitter {
    /// Places the passes of one layer on `units` units starting at `t0`,
    /// distributing tiles round-robin in pass order; `shadows` lists the
    /// blocks that mirror a unit's final stage 2. Returns the layer's end.
    fn place(
        &mut self,
        layer: usize,
        t0: u64,
        stage1: u64,
        passes: &[Pass],
        units: usize,
        block: impl Fn(usize) -> BlockKind,
        shadows: impl Fn(usize) -> Vec<BlockKind>,
    ) -> u64 {
        let total: u64 = passes.iter().map(|p| p.tiles).sum();
        let mut end = t0;
        for u in 0..units.min(total as usize) {
            let mut start = t0;
            let mut offset = 0;
            let mut unit_end = t0;
            for pass in passes {
                let count = round_robin_share(offset, offset + pass.tiles, u as u64, units as u64);
                offset += pass.tiles;
                if count == 0 {
                    continue;
                }
                let period = if self.pipelined {
                    stage1.max(pass.stage2)
                } else {
                    stage1 + pass.stage2
                };
                let mut op = TileOp {
                    layer,
                    block: block(u),
                    stage: 1,
                    start_fs: start,
                    count,
                    period_fs: period,
                    busy_fs: stage1,
                    rows_used: pass.rows,
                    cols_used: pass.cols,
                    reduced: pass.reduced,
                    final_pass: pass.final_pass,
                };
                self.ops.push(op.clone());
                op.stage = 2;
                op.start_fs = start + stage1;
                op.busy_fs = pass.stage2;
                unit_end = op.end_fs();
                if pass.final_pass {
                    for shadow in shadows(u) {
                        self.ops.push(TileOp {
                            block: shadow,
                            ..op.clone()
                        });
                    }
                }
                self.ops.push(op);
                start += count * period;
            }
            end = end.max(unit_end);
        }
        end
    }
}

/// Activation layers that run inside the preceding compute layer's final
/// stage 2. Fusion is skipped when a residual connection needs the
/// pre-activation value.
fn fused_activations(layers: &[LayerSpec]) -> Vec<bool> {
    let residual_sources: Vec<usize> = layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::ResidualAdd { source } => Some(*source),
            _ => None,
        })
        .collect();
    (0..layers.len())
        .map(|i| {
            i > 0
                && matches!(layers[i], LayerSpec::Activation(_))
                && layers[i - 1].is_compute()
                && !residual_sources.contains(&(i - 1))
        })
        .collect()
}

fn layer_domain(layer: &LayerSpec) -> Option<Domain> {
    match layer {
        LayerSpec::Dense { .. } => Some(Domain::Dense),
        LayerSpec::Conv2d(_) | LayerSpec::TransposedConv2d(_) => Some(Domain::Conv),
        _ => None,
    }
}

pub fn build_schedule(
    graph: &ModelGraph,
    arch: &ArchConfig,
    opts: &ScheduleOptions,
    devices: &DeviceConfig,
) -> Result<Schedule> {
    arch.validate()?;
    let lat = StageLatencies::new(&devices.devices);
    let switch_fs = ns_to_fs(devices.ecu.pcmc_switch_ns);
    let layers = graph.layers();
    let fused = fused_activations(layers);
    let first_domain = layers.iter().find_map(layer_domain).unwrap_or(Domain::Dense);
    let mut emitter = Emitter {
        pipelined: opts.pipelined,
        ops: Vec::new(),
    };
    let mut records: Vec<LayerRecord> = Vec::with_capacity(layers.len());
    let mut switches = Vec::new();
    let mut current: Option<Domain> = None;
    let mut t = 0u64;

    for (i, layer) in layers.iter().enumerate() {
        let input = graph.layer_input(i);
        let output = graph.shapes()[i];
        if fused[i] {
            records.push(LayerRecord {
                index: i,
                kind: layer.kind_name().into(),
                domain: current,
                start_fs: t,
                end_fs: t,
                fused_into: Some(i - 1),
                work: LayerWork::default(),
            });
            continue;
        }
        let domain = match layer {
            LayerSpec::ResidualAdd { .. } => None,
            LayerSpec::Activation(_) => Some(current.unwrap_or(first_domain)),
            _ => layer_domain(layer),
        };
        if let Some(d) = domain {
            if current.is_some_and(|c| c != d) {
                switches.push(RouteSwitch { time_fs: t, to: d });
                t += switch_fs;
            }
            current = Some(d);
        }
        let start = t;
        let mut work = LayerWork::default();
        match layer {
            LayerSpec::ResidualAdd { .. } => {
                work.ecu_bytes = 3 * output.elements() as u64;
            }
            LayerSpec::Activation(_) => {
                let d = domain.expect("activation layers have a domain");
                let elements = input.elements() as u64;
                let pass = Pass {
                    tiles: elements.div_ceil(arch.k as u64),
                    stage2: lat.activation_only,
                    rows: arch.k.min(elements as usize),
                    cols: 1,
                    reduced: false,
                    final_pass: true,
                };
                t = emitter.place(
                    i,
                    start,
                    lat.stage1,
                    &[pass],
                    arch.units(d),
                    |u| BlockKind::activation_for(d, u, arch),
                    |_| Vec::new(),
                );
                work = LayerWork {
                    tiles: elements.div_ceil(arch.k as u64),
                    dac: elements,
                    vcsel: elements,
                    pd: elements,
                    adc: elements,
                    soa: elements,
                    ecu_bytes: 2 * elements,
                    ..LayerWork::default()
                };
            }
            _ => {
                let d = domain.expect("compute layers have a domain");
                let tiling: LayerTiling = tile_layer(layer, input, output, arch, opts.sparse)?;
                let units = arch.units(d);
                let act = fused.get(i + 1).copied().unwrap_or(false);
                let norm = layer.conv().and_then(|c| c.follow_norm.as_ref());
                let stationary = d == Domain::Conv && opts.weight_stationary_conv;
                let stage1 = lat.stage1
                    + if opts.include_eo_modulation && !stationary {
                        lat.eo_modulation
                    } else {
                        0
                    };
                let stage2_final = lat.stage2_final + if act { lat.activation } else { 0 };
                let passes = [
                    Pass {
                        tiles: tiling.partial.tiles,
                        stage2: lat.stage2_partial,
                        rows: tiling.partial.max_rows,
                        cols: tiling.partial.max_cols,
                        reduced: tiling.partial.reduced,
                        final_pass: false,
                    },
                    Pass {
                        tiles: tiling.last.tiles,
                        stage2: stage2_final,
                        rows: tiling.last.max_rows,
                        cols: tiling.last.max_cols,
                        reduced: tiling.last.reduced,
                        final_pass: true,
                    },
                ];
                t = emitter.place(
                    i,
                    start,
                    stage1,
                    &passes,
                    units,
                    |u| BlockKind::compute(d, u),
                    |u| {
                        let mut v = Vec::new();
                        if norm.is_some() {
                            v.push(BlockKind::Norm(u));
                        }
                        if act {
                            v.push(BlockKind::activation_for(d, u, arch));
                        }
                        v
                    },
                );
                let cols = tiling.partial.cols + tiling.last.cols;
                let rows = tiling.partial.rows + tiling.last.rows;
                let weight_loads = if stationary {
                    tiling.stationary_weight_loads(units)
                } else {
                    tiling.executed_macs()
                };
                let has_bias = matches!(layer, LayerSpec::Dense { has_bias: true, .. });
                let activated = if act { tiling.last.rows } else { 0 };
                let stats_bytes = match norm {
                    Some(n) if n.kind == NormKind::InstanceNorm => output.elements() as u64,
                    _ => 0,
                };
                work = LayerWork {
                    tiles: tiling.tiles(),
                    dac: cols + weight_loads,
                    vcsel: cols + if has_bias { tiling.last.rows } else { 0 },
                    pd: rows + activated,
                    adc: rows,
                    soa: activated,
                    ecu_bytes: weight_loads + cols + 2 * tiling.partial.rows + tiling.last.rows + stats_bytes,
                    executed_macs: tiling.executed_macs(),
                    dense_macs: layer_dense_macs(layer, output),
                    weight_loads,
                };
            }
        }
        records.push(LayerRecord {
            index: i,
            kind: layer.kind_name().into(),
            domain,
            start_fs: start,
            end_fs: t,
            fused_into: None,
            work,
        });
    }

    let total_fs = t;
    let mut power: Vec<PowerInterval> = Vec::new();
    if opts.power_gating {
        for r in &records {
            let Some(d) = r.domain else { continue };
            if r.fused_into.is_some() || r.end_fs <= r.start_fs {
                continue;
            }
            match power.last_mut() {
                Some(last) if last.domain == d && last.end_fs >= r.start_fs => last.end_fs = r.end_fs,
                _ => power.push(PowerInterval {
                    domain: d,
                    start_fs: r.start_fs,
                    end_fs: r.end_fs,
                }),
            }
        }
    } else if total_fs > 0 {
        for d in [Domain::Dense, Domain::Conv] {
            power.push(PowerInterval {
                domain: d,
                start_fs: 0,
                end_fs: total_fs,
            });
        }
    }

    Ok(Schedule {
        arch: *arch,
        opts: *opts,
        ops: emitter.ops,
        layers: records,
        power,
        switches,
        total_fs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Bounds,
    WavelengthCap,
    UnitOverlap,
    StageOrder,
    Dependency,
    Gating,
    Unpowered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Checks unit bounds, the wavelength cap, per-unit stage exclusivity,
/// stage order, layer order and power gating. Returns every violation.
pub fn validate_schedule(s: &Schedule, arch: &ArchConfig) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let mut push = |kind, message: String| v.push(Violation { kind, message });
    let cap = arch.mrs_per_waveguide_cap.min(crate::devices::MAX_MRS_PER_WAVEGUIDE);
    if arch.n > cap {
        push(
            ViolationKind::WavelengthCap,
            format!("N = {} exceeds {cap} wavelengths per waveguide", arch.n),
        );
    }

    for (idx, op) in s.ops.iter().enumerate() {
        let at = format!("op {idx} (layer {}, {} stage {})", op.layer, op.block, op.stage);
        if !(op.stage == 1 || op.stage == 2) {
            push(ViolationKind::Bounds, format!("{at}: stage must be 1 or 2"));
        }
        if !op.block.in_range(arch) {
            push(ViolationKind::Bounds, format!("{at}: unit index out of range for {arch}"));
        }
        if op.count == 0 || op.busy_fs == 0 {
            push(ViolationKind::Bounds, format!("{at}: empty run"));
        }
        if op.rows_used == 0 || op.rows_used > arch.k {
            push(ViolationKind::Bounds, format!("{at}: {} rows used, K = {}", op.rows_used, arch.k));
        }
        if op.cols_used == 0 {
            push(ViolationKind::Bounds, format!("{at}: no columns used"));
        } else if op.cols_used > arch.n || op.cols_used > cap {
            push(
                ViolationKind::WavelengthCap,
                format!("{at}: {} columns used, N = {}", op.cols_used, arch.n),
            );
        }
        if op.count > 1 && op.period_fs < op.busy_fs {
            push(
                ViolationKind::UnitOverlap,
                format!(
                    "{at}: period {} fs shorter than busy time {} fs",
                    op.period_fs, op.busy_fs
                ),
            );
        }
    }

    let mut per_resource: BTreeMap<(BlockKind, u8), Vec<&TileOp>> = BTreeMap::new();
    for op in &s.ops {
        per_resource.entry((op.block, op.stage)).or_default().push(op);
    }
    for ((block, stage), mut ops) in per_resource {
        ops.sort_by_key(|o| (o.start_fs, o.end_fs()));
        for pair in ops.windows(2) {
            if pair[0].end_fs() > pair[1].start_fs {
                push(
                    ViolationKind::UnitOverlap,
                    format!(
                        "{block} stage {stage}: [{}, {}) ns overlaps [{}, {}) ns",
                        fs_to_ns(pair[0].start_fs),
                        fs_to_ns(pair[0].end_fs()),
                        fs_to_ns(pair[1].start_fs),
                        fs_to_ns(pair[1].end_fs())
                    ),
                );
            }
        }
    }

    let mut first_stage: BTreeMap<(usize, BlockKind, bool), &TileOp> = BTreeMap::new();
    for op in s.ops.iter().filter(|o| o.stage == 1) {
        first_stage.insert((op.layer, op.block, op.final_pass), op);
    }
    for op in s.ops.iter().filter(|o| o.stage == 2) {
        if let Some(s1) = first_stage.get(&(op.layer, op.block, op.final_pass)) {
            if op.start_fs < s1.start_fs + s1.busy_fs || op.count != s1.count || op.period_fs != s1.period_fs {
                push(
                    ViolationKind::StageOrder,
                    format!("layer {} {}: stage 2 does not follow stage 1 tile by tile", op.layer, op.block),
                );
            }
        }
    }

    let mut spans: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for op in &s.ops {
        let e = spans.entry(op.layer).or_insert((op.start_fs, op.end_fs()));
        e.0 = e.0.min(op.start_fs);
        e.1 = e.1.max(op.end_fs());
    }
    let mut done = 0u64;
    let mut done_layer = None;
    for (layer, (start, end)) in spans {
        if start < done {
            push(
                ViolationKind::Dependency,
                format!(
                    "layer {layer} starts at {} ns before layer {} finishes at {} ns",
                    fs_to_ns(start),
                    done_layer.unwrap_or(0),
                    fs_to_ns(done)
                ),
            );
        }
        if end >= done {
            done = end;
            done_layer = Some(layer);
        }
    }

    if s.opts.power_gating {
        for a in s.power.iter().filter(|p| p.domain == Domain::Dense) {
            for b in s.power.iter().filter(|p| p.domain == Domain::Conv) {
                if a.start_fs.max(b.start_fs) < a.end_fs.min(b.end_fs) {
                    push(
                        ViolationKind::Gating,
                        format!(
                            "dense [{}, {}) ns and conv [{}, {}) ns powered together",
                            fs_to_ns(a.start_fs),
                            fs_to_ns(a.end_fs),
                            fs_to_ns(b.start_fs),
                            fs_to_ns(b.end_fs)
                        ),
                    );
                }
            }
        }
    }
    for op in &s.ops {
        let d = op.block.domain(arch);
        let covered = s
            .power
            .iter()
            .any(|p| p.domain == d && p.start_fs <= op.start_fs && op.end_fs() <= p.end_fs);
        if !covered {
            push(
                ViolationKind::Unpowered,
                format!(
                    "layer {} {} runs [{}, {}) ns while the {d} block is off",
                    op.layer,
                    op.block,
                    fs_to_ns(op.start_fs),
                    fs_to_ns(op.end_fs())
                ),
            );
        }
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

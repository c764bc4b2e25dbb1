//! Latency, energy, power and throughput of a schedule.
//!
//! Dynamic energy charges every device activation counted by the schedule
//! at the device's power for its latency. The laser and the static thermal
//! trim of the MRs draw power while their block group is powered.
//!
//! Metric definitions used in reports:
//! - GOPS: `2 * dense_macs / latency_ns`, i.e. multiply and add counted
//!   separately over the logical dense workload, whether or not zero
//!   operands were skipped.
//! - EPB: total energy divided by the operand bits consumed, `bit_width *
//!   (input elements + weight elements)` summed over compute layers.

use serde::Serialize;

use crate::arch::{ArchConfig, Domain};
use crate::devices::{required_laser_power_mw, DeviceConfig};
use crate::error::Result;
use crate::ir::ModelGraph;
use crate::schedule::{build_schedule, fs_to_ns, Schedule, ScheduleOptions};

/// Energy per device class, in joules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub laser: f64,
    pub dac: f64,
    pub adc: f64,
    pub vcsel: f64,
    pub pd: f64,
    pub soa: f64,
    pub tuning_static: f64,
    pub ecu: f64,
}

impl EnergyBreakdown {
    pub const NAMES: [&'static str; 8] = ["laser", "dac", "adc", "vcsel", "pd", "soa", "tuning_static", "ecu"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.laser,
            self.dac,
            self.adc,
            self.vcsel,
            self.pd,
            self.soa,
            self.tuning_static,
            self.ecu,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }
}

pub fn latency_of(s: &Schedule) -> f64 {
    s.total_ns()
}

/// Laser power of one unit of a block group, in milliwatts: `K` rows, each
/// carrying `N` wavelengths through the row's loss budget. Convolution rows
/// also pass the broadband MR of their normalization unit.
pub fn unit_laser_mw(arch: &ArchConfig, cfg: &DeviceConfig, domain: Domain) -> Result<f64> {
    let extra = usize::from(domain == Domain::Conv);
    let spec = cfg.row_laser(arch.n, arch.k, extra)?;
    Ok(arch.k as f64 * required_laser_power_mw(&spec))
}

/// Static trim power of one unit of a block group, in milliwatts.
pub fn unit_static_mw(arch: &ArchConfig, cfg: &DeviceConfig, domain: Domain) -> f64 {
    let rings = 2 * arch.k * arch.n + if domain == Domain::Conv { arch.k } else { 0 };
    rings as f64 * cfg.devices.to_tuning.power_mw_per_fsr * cfg.tuning.static_trim_fsr
}

pub fn energy_of(s: &Schedule, cfg: &DeviceConfig) -> Result<EnergyBreakdown> {
    let d = &cfg.devices;
    let w = s.work();
    let mut e = EnergyBreakdown {
        dac: w.dac as f64 * d.dac_8bit.energy_j(),
        adc: w.adc as f64 * d.adc_8bit.energy_j(),
        vcsel: w.vcsel as f64 * d.vcsel.energy_j(),
        pd: w.pd as f64 * d.photodetector.energy_j(),
        soa: w.soa as f64 * d.soa.energy_j(),
        ecu: w.ecu_bytes as f64 * cfg.ecu.pj_per_byte * 1e-12
            + s.switches.len() as f64 * cfg.ecu.pcmc_switch_pj * 1e-12,
        ..EnergyBreakdown::default()
    };
    for domain in [Domain::Dense, Domain::Conv] {
        let seconds = fs_to_ns(s.powered_fs(domain)) * 1e-9;
        if seconds == 0.0 {
            continue;
        }
        let units = s.arch.units(domain) as f64;
        e.laser += seconds * units * unit_laser_mw(&s.arch, cfg, domain)? * 1e-3;
        e.tuning_static += seconds * units * unit_static_mw(&s.arch, cfg, domain) * 1e-3;
    }
    Ok(e)
}

/// Bits of operands consumed by the compute layers.
pub fn operand_bits(graph: &ModelGraph, bit_width: u32) -> u64 {
    graph
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_compute())
        .map(|(i, l)| (graph.layer_input(i).elements() + l.weight_elements()) as u64)
        .sum::<u64>()
        * bit_width as u64
}

/// `(gops, epb)`; both zero for an empty schedule.
pub fn gops_epb(graph: &ModelGraph, s: &Schedule, energy_j: f64) -> (f64, f64) {
    let latency = latency_of(s);
    let dense_macs = s.work().dense_macs;
    let gops = if latency > 0.0 {
        2.0 * dense_macs as f64 / latency
    } else {
        0.0
    };
    let bits = operand_bits(graph, s.arch.bit_width);
    let epb = if bits > 0 { energy_j / bits as f64 } else { 0.0 };
    (gops, epb)
}

/// Power with every device of every powered unit active at once, in watts.
pub fn peak_power_w(arch: &ArchConfig, cfg: &DeviceConfig, power_gating: bool) -> Result<f64> {
    let d = &cfg.devices;
    let (n, k) = (arch.n as f64, arch.k as f64);
    let dynamic_mw = (k * n + n) * d.dac_8bit.power_mw
        + (n + k) * d.vcsel.power_mw
        + k * d.photodetector.power_mw
        + k * d.adc_8bit.power_mw
        + k * (d.photodetector.power_mw + d.soa.power_mw);
    let side = |domain: Domain| -> Result<f64> {
        let unit = dynamic_mw + unit_laser_mw(arch, cfg, domain)? + unit_static_mw(arch, cfg, domain);
        Ok(arch.units(domain) as f64 * unit * 1e-3)
    };
    let (dense, conv) = (side(Domain::Dense)?, side(Domain::Conv)?);
    Ok(if power_gating { dense.max(conv) } else { dense + conv })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfReport {
    pub model: String,
    pub arch: ArchConfig,
    pub opts: ScheduleOptions,
    pub total_latency_ns: f64,
    pub total_energy_j: f64,
    pub breakdown: EnergyBreakdown,
    pub avg_power_w: f64,
    pub peak_power_w: f64,
    pub gops: f64,
    pub epb_j_per_bit: f64,
    pub dense_macs: u64,
    pub reduced_macs: u64,
    pub tiles: u64,
    pub operand_bits: u64,
}

pub fn report(graph: &ModelGraph, s: &Schedule, cfg: &DeviceConfig) -> Result<PerfReport> {
    let breakdown = energy_of(s, cfg)?;
    let total_energy_j = breakdown.total();
    let total_latency_ns = latency_of(s);
    let (gops, epb) = gops_epb(graph, s, total_energy_j);
    let w = s.work();
    Ok(PerfReport {
        model: graph.name().to_string(),
        arch: s.arch,
        opts: s.opts,
        total_latency_ns,
        total_energy_j,
        breakdown,
        avg_power_w: if total_latency_ns > 0.0 {
            total_energy_j / (total_latency_ns * 1e-9)
        } else {
            0.0
        },
        peak_power_w: peak_power_w(&s.arch, cfg, s.opts.power_gating)?,
        gops,
        epb_j_per_bit: epb,
        dense_macs: w.dense_macs,
        reduced_macs: w.executed_macs,
        tiles: w.tiles,
        operand_bits: operand_bits(graph, s.arch.bit_width),
    })
}

/// Schedules and costs a graph in one step.
pub fn evaluate(
    graph: &ModelGraph,
    arch: &ArchConfig,
    opts: &ScheduleOptions,
    cfg: &DeviceConfig,
) -> Result<(Schedule, PerfReport)> {
    let s = build_schedule(graph, arch, opts, cfg)?;
    let r = report(graph, &s, cfg)?;
    Ok((s, r))
}

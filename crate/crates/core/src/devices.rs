//! Optoelectronic device figures, optical loss budget, laser power and MR
//! tuning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Most wavelengths (and thus MRs) one waveguide carries without crosstalk
/// errors.
pub const MAX_MRS_PER_WAVEGUIDE: usize = 36;

/// Latency and power of a device that switches once per use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub latency_ns: f64,
    pub power_mw: f64,
}

impl DeviceSpec {
    pub const fn new(latency_ns: f64, power_mw: f64) -> Self {
        DeviceSpec {
            latency_ns,
            power_mw,
        }
    }

    /// Energy of one activation in joules.
    pub fn energy_j(&self) -> f64 {
        self.power_mw * 1e-3 * self.latency_ns * 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EoTuning {
    pub latency_ns: f64,
    pub power_uw_per_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToTuning {
    pub latency_us: f64,
    pub power_mw_per_fsr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub eo_tuning: EoTuning,
    pub to_tuning: ToTuning,
    pub vcsel: DeviceSpec,
    pub photodetector: DeviceSpec,
    pub soa: DeviceSpec,
    pub dac_8bit: DeviceSpec,
    pub adc_8bit: DeviceSpec,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            eo_tuning: EoTuning {
                latency_ns: 20.0,
                power_uw_per_nm: 4.0,
            },
            to_tuning: ToTuning {
                latency_us: 4.0,
                power_mw_per_fsr: 27.5,
            },
            vcsel: DeviceSpec::new(0.07, 1.3),
            photodetector: DeviceSpec::new(0.0058, 2.8),
            soa: DeviceSpec::new(0.3, 2.2),
            dac_8bit: DeviceSpec::new(0.29, 3.0),
            adc_8bit: DeviceSpec::new(0.82, 3.1),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Constraint(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Constraint(format!("{name} must be non-negative and finite, got {v}")))
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        positive("eo_tuning.latency_ns", self.eo_tuning.latency_ns)?;
        positive("eo_tuning.power_uw_per_nm", self.eo_tuning.power_uw_per_nm)?;
        positive("to_tuning.latency_us", self.to_tuning.latency_us)?;
        positive("to_tuning.power_mw_per_fsr", self.to_tuning.power_mw_per_fsr)?;
        for (name, d) in [
            ("vcsel", self.vcsel),
            ("photodetector", self.photodetector),
            ("soa", self.soa),
            ("dac_8bit", self.dac_8bit),
            ("adc_8bit", self.adc_8bit),
        ] {
            positive(&format!("{name}.latency_ns"), d.latency_ns)?;
            positive(&format!("{name}.power_mw"), d.power_mw)?;
        }
        Ok(())
    }
}

/// Per-component optical losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub waveguide_db_per_cm: f64,
    pub splitter_db: f64,
    pub combiner_db: f64,
    pub mr_through_db: f64,
    pub mr_modulation_db: f64,
    pub eo_tuning_db_per_cm: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            waveguide_db_per_cm: 1.0,
            splitter_db: 0.13,
            combiner_db: 0.9,
            mr_through_db: 0.02,
            mr_modulation_db: 0.72,
            eo_tuning_db_per_cm: 6.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        non_negative("losses.waveguide_db_per_cm", self.waveguide_db_per_cm)?;
        non_negative("losses.splitter_db", self.splitter_db)?;
        non_negative("losses.combiner_db", self.combiner_db)?;
        non_negative("losses.mr_through_db", self.mr_through_db)?;
        non_negative("losses.mr_modulation_db", self.mr_modulation_db)?;
        non_negative("losses.eo_tuning_db_per_cm", self.eo_tuning_db_per_cm)
    }
}

/// What one optical signal passes between source and detector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PathGeometry {
    pub waveguide_cm: f64,
    pub splitters: usize,
    pub combiners: usize,
    pub mr_through: usize,
    pub mr_modulating: usize,
    /// Length of EO-tuned waveguide (inside modulating rings).
    pub eo_tuned_cm: f64,
}

impl PathGeometry {
    /// One row of a `k_rows x n_cols` unit: split from the shared VCSEL
    /// array, modulated once in the activation bank and once in the weight
    /// bank, passing the other rings of both banks, then combined at the
    /// detector.
    pub fn mr_bank_row(n_cols: usize, k_rows: usize, floorplan: &Floorplan, extra_through: usize) -> Self {
        let splitters = if k_rows <= 1 {
            0
        } else {
            usize::BITS as usize - (k_rows - 1).leading_zeros() as usize
        };
        PathGeometry {
            waveguide_cm: floorplan.unit_path_cm,
            splitters,
            combiners: 1,
            mr_through: 2 * n_cols.saturating_sub(1) + extra_through,
            mr_modulating: 2,
            eo_tuned_cm: 2.0 * floorplan.ring().circumference_cm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBudget {
    pub params: LossParams,
    pub path: PathGeometry,
}

impl LossBudget {
    pub fn path_loss_db(&self) -> f64 {
        path_loss_db(self)
    }
}

pub fn path_loss_db(budget: &LossBudget) -> f64 {
    let (l, p) = (&budget.params, &budget.path);
    p.waveguide_cm * l.waveguide_db_per_cm
        + p.splitters as f64 * l.splitter_db
        + p.combiners as f64 * l.combiner_db
        + p.mr_through as f64 * l.mr_through_db
        + p.mr_modulating as f64 * l.mr_modulation_db
        + p.eo_tuned_cm * l.eo_tuning_db_per_cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrGeometry {
    pub radius_um: f64,
    pub order: u32,
    pub n_eff: f64,
}

impl MrGeometry {
    pub fn validate(&self) -> Result<()> {
        positive("ring radius", self.radius_um)?;
        positive("effective index", self.n_eff)?;
        if self.order == 0 {
            return Err(Error::Constraint("resonance order must be at least 1".into()));
        }
        Ok(())
    }

    pub fn circumference_cm(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.radius_um * 1e-4
    }
}

/// `2 pi R n_eff / m`, in the unit of the radius (micrometres).
pub fn resonant_wavelength(g: &MrGeometry) -> Result<f64> {
    g.validate()?;
    Ok(2.0 * std::f64::consts::PI * g.radius_um * g.n_eff / g.order as f64)
}

/// Wavelengths sharing one waveguide; at most [`MAX_MRS_PER_WAVEGUIDE`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct WavelengthCount(usize);

impl WavelengthCount {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Constraint("a waveguide needs at least one wavelength".into()));
        }
        if n > MAX_MRS_PER_WAVEGUIDE {
            return Err(Error::Constraint(format!(
                "{n} wavelengths on one waveguide exceeds the cap of {MAX_MRS_PER_WAVEGUIDE}"
            )));
        }
        Ok(WavelengthCount(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaserSpec {
    pub sensitivity_dbm: f64,
    pub wavelengths: WavelengthCount,
    pub path_loss_db: f64,
}

impl LaserSpec {
    pub fn new(sensitivity_dbm: f64, wavelengths: usize, path_loss_db: f64) -> Result<Self> {
        if !sensitivity_dbm.is_finite() {
            return Err(Error::Constraint("detector sensitivity must be finite".into()));
        }
        non_negative("path loss", path_loss_db)?;
        Ok(LaserSpec {
            sensitivity_dbm,
            wavelengths: WavelengthCount::new(wavelengths)?,
            path_loss_db,
        })
    }
}

/// Smallest laser power meeting `P - S >= loss + 10 log10(N)`.
pub fn required_laser_power_dbm(spec: &LaserSpec) -> f64 {
    spec.sensitivity_dbm + spec.path_loss_db + 10.0 * (spec.wavelengths.get() as f64).log10()
}

pub fn required_laser_power_mw(spec: &LaserSpec) -> f64 {
    dbm_to_mw(required_laser_power_dbm(spec))
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    Eo,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuningCost {
    pub mode: TuningMode,
    pub latency_ns: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningParams {
    /// Shifts up to this many nanometres use EO tuning.
    pub eo_threshold_nm: f64,
    pub fsr_nm: f64,
    /// Fraction of an FSR every MR is held at by static thermal trimming
    /// while its block is powered.
    pub static_trim_fsr: f64,
}

impl Default for TuningParams {
    fn default() -> Self {
        TuningParams {
            eo_threshold_nm: 1.0,
            fsr_nm: 20.0,
            static_trim_fsr: 0.1,
        }
    }
}

/// Geometry assumptions that the losses need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Floorplan {
    pub unit_path_cm: f64,
    pub ring_radius_um: f64,
    pub ring_order: u32,
    pub ring_n_eff: f64,
}

impl Default for Floorplan {
    fn default() -> Self {
        Floorplan {
            unit_path_cm: 0.5,
            ring_radius_um: 5.0,
            ring_order: 40,
            ring_n_eff: 2.4,
        }
    }
}

impl Floorplan {
    pub fn ring(&self) -> MrGeometry {
        MrGeometry {
            radius_um: self.ring_radius_um,
            order: self.ring_order,
            n_eff: self.ring_n_eff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserParams {
    pub detector_sensitivity_dbm: f64,
}

impl Default for LaserParams {
    fn default() -> Self {
        LaserParams {
            detector_sensitivity_dbm: -20.0,
        }
    }
}

/// Electronic control unit and routing costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcuParams {
    pub pj_per_byte: f64,
    pub pcmc_switch_pj: f64,
    pub pcmc_switch_ns: f64,
}

impl Default for EcuParams {
    fn default() -> Self {
        EcuParams {
            pj_per_byte: 1.0,
            pcmc_switch_pj: 0.0,
            pcmc_switch_ns: 0.0,
        }
    }
}

/// Everything `--devices` can override.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub devices: DeviceParams,
    pub losses: LossParams,
    pub laser: LaserParams,
    pub tuning: TuningParams,
    pub floorplan: Floorplan,
    pub ecu: EcuParams,
}

impl DeviceConfig {
    pub fn from_toml_str(text: &str, source_name: &str) -> Result<Self> {
        let cfg: DeviceConfig = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.devices.validate()?;
        self.losses.validate()?;
        if !self.laser.detector_sensitivity_dbm.is_finite() {
            return Err(Error::Constraint("detector sensitivity must be finite".into()));
        }
        positive("tuning.eo_threshold_nm", self.tuning.eo_threshold_nm)?;
        positive("tuning.fsr_nm", self.tuning.fsr_nm)?;
        non_negative("tuning.static_trim_fsr", self.tuning.static_trim_fsr)?;
        positive("floorplan.unit_path_cm", self.floorplan.unit_path_cm)?;
        self.floorplan.ring().validate()?;
        non_negative("ecu.pj_per_byte", self.ecu.pj_per_byte)?;
        non_negative("ecu.pcmc_switch_pj", self.ecu.pcmc_switch_pj)?;
        non_negative("ecu.pcmc_switch_ns", self.ecu.pcmc_switch_ns)
    }

    /// Cost of shifting one MR by `shift_nm` in the given mode. Latency is
    /// the device figure for any non-zero shift; power scales with the
    /// shift (per nm for EO, per FSR for TO).
    pub fn tuning_cost(&self, mode: TuningMode, shift_nm: f64) -> Result<TuningCost> {
        if !(shift_nm >= 0.0) || !shift_nm.is_finite() {
            return Err(Error::Constraint(format!("tuning shift must be non-negative, got {shift_nm}")));
        }
        if shift_nm == 0.0 {
            return Ok(TuningCost {
                mode,
                latency_ns: 0.0,
                power_mw: 0.0,
            });
        }
        let d = &self.devices;
        Ok(match mode {
            TuningMode::Eo => TuningCost {
                mode,
                latency_ns: d.eo_tuning.latency_ns,
                power_mw: d.eo_tuning.power_uw_per_nm * 1e-3 * shift_nm,
            },
            TuningMode::To => TuningCost {
                mode,
                latency_ns: d.to_tuning.latency_us * 1e3,
                power_mw: d.to_tuning.power_mw_per_fsr * shift_nm / self.tuning.fsr_nm,
            },
        })
    }

    /// EO up to the threshold, TO beyond it.
    pub fn hybrid_tuning_cost(&self, shift_nm: f64) -> Result<TuningCost> {
        let mode = if shift_nm <= self.tuning.eo_threshold_nm {
            TuningMode::Eo
        } else {
            TuningMode::To
        };
        self.tuning_cost(mode, shift_nm)
    }

    /// Laser requirement for one row of a unit with `n_cols` wavelengths.
    pub fn row_laser(&self, n_cols: usize, k_rows: usize, extra_through: usize) -> Result<LaserSpec> {
        let path = PathGeometry::mr_bank_row(n_cols, k_rows, &self.floorplan, extra_through);
        let loss = path_loss_db(&LossBudget {
            params: self.losses,
            path,
        });
        LaserSpec::new(self.laser.detector_sensitivity_dbm, n_cols, loss)
    }
}

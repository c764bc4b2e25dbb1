//! Exhaustive grid search over `[N, K, L, M]`.
//!
//! Every point is scheduled and costed on every workload; the objective is
//! the (optionally weighted) mean of per-workload `GOPS / EPB`. Points whose
//! peak power exceeds the budget are kept in the output but cannot win.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::arch::ArchConfig;
use crate::devices::{DeviceConfig, MAX_MRS_PER_WAVEGUIDE};
use crate::error::{Error, Result};
use crate::ir::ModelGraph;
use crate::perf::{evaluate, peak_power_w};
use crate::schedule::ScheduleOptions;

/// Inclusive range `start:end[:step]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl GridRange {
    pub fn single(v: usize) -> Self {
        GridRange {
            start: v,
            end: v,
            step: 1,
        }
    }

    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step).collect()
    }
}

impl fmt::Display for GridRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    pub n: GridRange,
    pub k: GridRange,
    pub l: GridRange,
    pub m: GridRange,
    pub budget_w: f64,
    /// Per-workload weights of the objective; equal weights when empty.
    pub weights: Vec<f64>,
}

pub const DEFAULT_GRID: &str = "n=4:36:4,k=1:8,l=1:16,m=1:8";

impl Default for SearchSpace {
    fn default() -> Self {
        DEFAULT_GRID.parse().expect("default grid parses")
    }
}

fn grid_err(message: String) -> Error {
    Error::Parse {
        source_name: "--grid".into(),
        message,
    }
}

/// Parses `n=a:b[:s],k=...,l=...,m=...`; a bare number fixes a dimension.
impl FromStr for SearchSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut dims: [Option<GridRange>; 4] = [None; 4];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| grid_err(format!("expected key=start:end[:step], got {part:?}")))?;
            let slot = match key.trim().to_ascii_lowercase().as_str() {
                "n" => 0,
                "k" => 1,
                "l" => 2,
                "m" => 3,
                other => return Err(grid_err(format!("unknown dimension {other:?}"))),
            };
            let nums: Vec<usize> = value
                .split(':')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| grid_err(format!("bad range {value:?}")))?;
            let range = match nums.as_slice() {
                [v] => GridRange::single(*v),
                [a, b] => GridRange {
                    start: *a,
                    end: *b,
                    step: 1,
                },
                [a, b, st] => GridRange {
                    start: *a,
                    end: *b,
                    step: *st,
                },
                _ => return Err(grid_err(format!("bad range {value:?}"))),
            };
            dims[slot] = Some(range);
        }
        let [Some(n), Some(k), Some(l), Some(m)] = dims else {
            return Err(grid_err(format!("grid {s:?} must give all of n, k, l and m")));
        };
        let space = SearchSpace {
            n,
            k,
            l,
            m,
            budget_w: 100.0,
            weights: Vec::new(),
        };
        space.validate()?;
        Ok(space)
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("n", self.n), ("k", self.k), ("l", self.l), ("m", self.m)] {
            if r.start == 0 || r.step == 0 || r.start > r.end {
                return Err(Error::Constraint(format!("grid range {name}={r} is empty or starts at 0")));
            }
        }
        if self.n.end > MAX_MRS_PER_WAVEGUIDE {
            return Err(Error::Constraint(format!(
                "grid range n={} exceeds {MAX_MRS_PER_WAVEGUIDE} wavelengths per waveguide",
                self.n
            )));
        }
        if !(self.budget_w > 0.0) || !self.budget_w.is_finite() {
            return Err(Error::Constraint(format!("power budget must be positive, got {}", self.budget_w)));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Constraint("objective weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Grid points in lexicographic `(N, K, L, M)` order.
    pub fn configs(&self) -> Result<Vec<ArchConfig>> {
        let mut out = Vec::new();
        for &n in &self.n.values() {
            for &k in &self.k.values() {
                for &l in &self.l.values() {
                    for &m in &self.m.values() {
                        out.push(ArchConfig::new(n, k, l, m)?.with_budget(self.budget_w)?);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn contains(&self, tuple: [usize; 4]) -> bool {
        [self.n, self.k, self.l, self.m]
            .iter()
            .zip(tuple)
            .all(|(r, v)| v >= r.start && v <= r.end && (v - r.start) % r.step == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsePoint {
    pub config: ArchConfig,
    pub gops: f64,
    pub epb: f64,
    pub objective: f64,
    pub peak_power_w: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DseResult {
    /// `None` when no point meets the budget.
    pub best: Option<DsePoint>,
    pub points: Vec<DsePoint>,
}

/// Schedules and costs every workload on one configuration.
pub fn evaluate_point(
    config: &ArchConfig,
    workloads: &[ModelGraph],
    weights: &[f64],
    devices: &DeviceConfig,
    opts: &ScheduleOptions,
) -> Result<DsePoint> {
    if workloads.is_empty() {
        return Err(Error::Constraint("design-space exploration needs at least one workload".into()));
    }
    if !weights.is_empty() && weights.len() != workloads.len() {
        return Err(Error::Constraint(format!(
            "{} objective weights for {} workloads",
            weights.len(),
            workloads.len()
        )));
    }
    let (mut gops, mut epb, mut objective, mut total_weight) = (0.0, 0.0, 0.0, 0.0);
    for (i, g) in workloads.iter().enumerate() {
        let w = weights.get(i).copied().unwrap_or(1.0);
        let (_, r) = evaluate(g, config, opts, devices)?;
        gops += w * r.gops;
        epb += w * r.epb_j_per_bit;
        objective += w * if r.epb_j_per_bit > 0.0 { r.gops / r.epb_j_per_bit } else { 0.0 };
        total_weight += w;
    }
    if total_weight == 0.0 {
        return Err(Error::Constraint("objective weights sum to zero".into()));
    }
    let peak = peak_power_w(config, devices, opts.power_gating)?;
    Ok(DsePoint {
        config: *config,
        gops: gops / total_weight,
        epb: epb / total_weight,
        objective: objective / total_weight,
        peak_power_w: peak,
        feasible: peak <= config.power_budget_w,
    })
}

/// Higher objective wins; ties go to lower peak power, then fewer MRs and
/// units (`N*K*L*M`), then the lexicographically smaller tuple.
pub fn rank(a: &DsePoint, b: &DsePoint) -> Ordering {
    let size = |p: &DsePoint| p.config.tuple().iter().product::<usize>();
    b.objective
        .total_cmp(&a.objective)
        .then(a.peak_power_w.total_cmp(&b.peak_power_w))
        .then(size(a).cmp(&size(b)))
        .then(a.config.tuple().cmp(&b.config.tuple()))
}

pub fn select_best(points: &[DsePoint]) -> Option<DsePoint> {
    points.iter().filter(|p| p.feasible).min_by(|a, b| rank(a, b)).cloned()
}

pub fn explore(
    space: &SearchSpace,
    workloads: &[ModelGraph],
    devices: &DeviceConfig,
    opts: &ScheduleOptions,
) -> Result<DseResult> {
    space.validate()?;
    let configs = space.configs()?;
    let points = configs
        .par_iter()
        .map(|c| evaluate_point(c, workloads, &space.weights, devices, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(DseResult {
        best: select_best(&points),
        points,
    })
}

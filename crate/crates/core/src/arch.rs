//! Accelerator configuration and lowering of layers to MR-bank tiles.
//!
//! A unit holds a `K x N` bank: `K` output rows, each fed by `N` wavelengths.
//! A layer becomes one matrix-vector product per output pixel (a single one
//! for dense layers); each product is cut into `K`-row by `N`-column tiles.
//! Tiles that do not cover the last column block of their row block produce
//! partial sums, which leave through the ADC and are accumulated in the ECU.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::devices::MAX_MRS_PER_WAVEGUIDE;
use crate::error::{Error, Result};
use crate::ir::{LayerSpec, TensorShape};
use crate::sparse::{build_patterns, TconvGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// MR-bank columns (wavelengths per waveguide).
    pub n: usize,
    /// MR-bank rows.
    pub k: usize,
    /// Dense units.
    pub l: usize,
    /// Convolution units (each paired with one normalization unit).
    pub m: usize,
    pub bit_width: u32,
    pub mrs_per_waveguide_cap: usize,
    pub power_budget_w: f64,
}

impl ArchConfig {
    pub fn new(n: usize, k: usize, l: usize, m: usize) -> Result<Self> {
        let cfg = ArchConfig {
            n,
            k,
            l,
            m,
            bit_width: 8,
            mrs_per_waveguide_cap: MAX_MRS_PER_WAVEGUIDE,
            power_budget_w: 100.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_budget(mut self, watts: f64) -> Result<Self> {
        self.power_budget_w = watts;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mrs_per_waveguide_cap == 0 || self.mrs_per_waveguide_cap > MAX_MRS_PER_WAVEGUIDE {
            return Err(Error::Constraint(format!(
                "MR cap per waveguide must be in 1..={MAX_MRS_PER_WAVEGUIDE}, got {}",
                self.mrs_per_waveguide_cap
            )));
        }
        if self.n == 0 || self.n > self.mrs_per_waveguide_cap {
            return Err(Error::Constraint(format!(
                "N = {} must be in 1..={}",
                self.n, self.mrs_per_waveguide_cap
            )));
        }
        if self.k == 0 || self.l == 0 || self.m == 0 {
            return Err(Error::Constraint(format!("K, L and M must be >= 1, got {self}")));
        }
        if self.bit_width == 0 {
            return Err(Error::Constraint("bit width must be >= 1".into()));
        }
        if !(self.power_budget_w > 0.0) || !self.power_budget_w.is_finite() {
            return Err(Error::Constraint(format!(
                "power budget must be positive, got {}",
                self.power_budget_w
            )));
        }
        Ok(())
    }

    pub fn tuple(&self) -> [usize; 4] {
        [self.n, self.k, self.l, self.m]
    }

    /// Units available to a domain.
    pub fn units(&self, domain: Domain) -> usize {
        match domain {
            Domain::Dense => self.l,
            Domain::Conv => self.m,
        }
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::new(16, 2, 11, 3).expect("default architecture is valid")
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.k, self.l, self.m)
    }
}

/// Parses `N,K,L,M`.
impl FromStr for ArchConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::Parse {
            source_name: "--arch".into(),
            message: format!("expected N,K,L,M as four integers, got {s:?}"),
        };
        if parts.len() != 4 {
            return Err(bad());
        }
        let v: Vec<usize> = parts
            .iter()
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        ArchConfig::new(v[0], v[1], v[2], v[3])
    }
}

/// The two block groups that power gating switches between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Dense,
    Conv,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Dense => "dense",
            Domain::Conv => "conv",
        })
    }
}

/// A physical unit. Activation units are numbered dense-side first:
/// dense unit `u` feeds activation unit `u`, conv unit `u` feeds `L + u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "unit", rename_all = "snake_case")]
pub enum BlockKind {
    Dense(usize),
    Conv(usize),
    Norm(usize),
    Activation(usize),
}

impl BlockKind {
    pub fn unit(&self) -> usize {
        match *self {
            BlockKind::Dense(u) | BlockKind::Conv(u) | BlockKind::Norm(u) | BlockKind::Activation(u) => u,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BlockKind::Dense(_) => "dense",
            BlockKind::Conv(_) => "conv",
            BlockKind::Norm(_) => "norm",
            BlockKind::Activation(_) => "activation",
        }
    }

    pub fn domain(&self, arch: &ArchConfig) -> Domain {
        match *self {
            BlockKind::Dense(_) => Domain::Dense,
            BlockKind::Conv(_) | BlockKind::Norm(_) => Domain::Conv,
            BlockKind::Activation(u) => {
                if u < arch.l {
                    Domain::Dense
                } else {
                    Domain::Conv
                }
            }
        }
    }

    pub fn compute(domain: Domain, unit: usize) -> Self {
        match domain {
            Domain::Dense => BlockKind::Dense(unit),
            Domain::Conv => BlockKind::Conv(unit),
        }
    }

    pub fn activation_for(domain: Domain, unit: usize, arch: &ArchConfig) -> Self {
        match domain {
            Domain::Dense => BlockKind::Activation(unit),
            Domain::Conv => BlockKind::Activation(arch.l + unit),
        }
    }

    pub fn in_range(&self, arch: &ArchConfig) -> bool {
        match *self {
            BlockKind::Dense(u) => u < arch.l,
            BlockKind::Conv(u) | BlockKind::Norm(u) => u < arch.m,
            BlockKind::Activation(u) => u < arch.l + arch.m,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.kind_name(), self.unit())
    }
}

/// Output pixels sharing one column layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TileClass {
    pub pixels: u64,
    /// Kernel taps (or input features for dense layers) each pixel uses.
    pub kept: usize,
    /// Used columns of every non-empty column block, in order.
    pub col_blocks: Vec<usize>,
    /// Rows of every row block, in order.
    pub row_blocks: Vec<usize>,
    /// Column count below the dense lowering.
    pub reduced: bool,
}

impl TileClass {
    pub fn tiles_per_pixel(&self) -> u64 {
        (self.row_blocks.len() * self.col_blocks.len()) as u64
    }

    pub fn columns(&self) -> usize {
        self.col_blocks.iter().sum()
    }
}

/// Totals over one pass (partial or final) of a layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PassTotals {
    pub tiles: u64,
    /// Sum over tiles of rows used.
    pub rows: u64,
    /// Sum over tiles of columns used.
    pub cols: u64,
    /// Sum over tiles of rows x columns (executed MACs).
    pub cells: u64,
    pub max_rows: usize,
    pub max_cols: usize,
    pub reduced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTiling {
    pub domain: Domain,
    pub classes: Vec<TileClass>,
    pub partial: PassTotals,
    pub last: PassTotals,
    /// Logical output rows of every matrix-vector product.
    pub out_rows: usize,
}

impl LayerTiling {
    pub fn tiles(&self) -> u64 {
        self.partial.tiles + self.last.tiles
    }

    pub fn executed_macs(&self) -> u64 {
        self.partial.cells + self.last.cells
    }

    /// Weight cells written when every unit keeps one class's weights
    /// resident while it works through that class's pixels.
    pub fn stationary_weight_loads(&self, units: usize) -> u64 {
        self.classes
            .iter()
            .map(|c| c.pixels.min(units as u64) * (c.columns() * self.out_rows) as u64)
            .sum()
    }
}

fn blocks_of(len: usize, size: usize) -> Vec<usize> {
    (0..len.div_ceil(size))
        .map(|b| size.min(len - b * size))
        .collect()
}

fn class_totals(classes: &[TileClass]) -> (PassTotals, PassTotals) {
    let mut partial = PassTotals::default();
    let mut last = PassTotals::default();
    for c in classes {
        let Some((&final_cols, leading)) = c.col_blocks.split_last() else {
            continue;
        };
        let rows: u64 = c.row_blocks.iter().map(|&r| r as u64).sum();
        let nrb = c.row_blocks.len() as u64;
        let max_rows = c.row_blocks.iter().copied().max().unwrap_or(0);
        let lead_cols: u64 = leading.iter().map(|&x| x as u64).sum();
        if !leading.is_empty() {
            partial.tiles += c.pixels * nrb * leading.len() as u64;
            partial.rows += c.pixels * rows * leading.len() as u64;
            partial.cols += c.pixels * nrb * lead_cols;
            partial.cells += c.pixels * rows * lead_cols;
            partial.max_rows = partial.max_rows.max(max_rows);
            partial.max_cols = partial.max_cols.max(leading.iter().copied().max().unwrap_or(0));
            partial.reduced |= c.reduced;
        }
        last.tiles += c.pixels * nrb;
        last.rows += c.pixels * rows;
        last.cols += c.pixels * nrb * final_cols as u64;
        last.cells += c.pixels * rows * final_cols as u64;
        last.max_rows = last.max_rows.max(max_rows);
        last.max_cols = last.max_cols.max(final_cols);
        last.reduced |= c.reduced;
    }
    (partial, last)
}

/// Lowers a compute layer to tiles. With `sparse`, transposed convolutions
/// use one column layout per phase: kept tap `q` of the phase owns columns
/// `q * in_ch .. (q + 1) * in_ch`, and border classes leave the columns of
/// their dropped taps empty.
pub fn tile_layer(
    layer: &LayerSpec,
    input: TensorShape,
    output: TensorShape,
    arch: &ArchConfig,
    sparse: bool,
) -> Result<LayerTiling> {
    let (n, k) = (arch.n, arch.k);
    let (domain, classes, out_rows) = match layer {
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => (
            Domain::Dense,
            vec![TileClass {
                pixels: 1,
                kept: *in_features,
                col_blocks: blocks_of(*in_features, n),
                row_blocks: blocks_of(*out_features, k),
                reduced: false,
            }],
            *out_features,
        ),
        LayerSpec::Conv2d(c) => (
            Domain::Conv,
            vec![TileClass {
                pixels: output.spatial() as u64,
                kept: c.kernel * c.kernel,
                col_blocks: blocks_of(c.in_ch * c.kernel * c.kernel, n),
                row_blocks: blocks_of(c.out_ch, k),
                reduced: false,
            }],
            c.out_ch,
        ),
        LayerSpec::TransposedConv2d(c) if !sparse => (
            Domain::Conv,
            vec![TileClass {
                pixels: output.spatial() as u64,
                kept: c.kernel * c.kernel,
                col_blocks: blocks_of(c.in_ch * c.kernel * c.kernel, n),
                row_blocks: blocks_of(c.out_ch, k),
                reduced: false,
            }],
            c.out_ch,
        ),
        LayerSpec::TransposedConv2d(c) => {
            let geometry = TconvGeometry {
                in_h: input.height,
                in_w: input.width,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            };
            let row_blocks = blocks_of(c.out_ch, k);
            let mut classes = Vec::new();
            for p in build_patterns(&geometry)? {
                if p.kept_count() == 0 {
                    continue;
                }
                let mut per_block: BTreeMap<usize, usize> = BTreeMap::new();
                for q in p.phase_positions() {
                    let (lo, hi) = (q * c.in_ch, (q + 1) * c.in_ch);
                    let mut col = lo;
                    while col < hi {
                        let block = col / n;
                        let end = hi.min((block + 1) * n);
                        *per_block.entry(block).or_default() += end - col;
                        col = end;
                    }
                }
                classes.push(TileClass {
                    pixels: p.output_count() as u64,
                    kept: p.kept_count(),
                    col_blocks: per_block.into_values().collect(),
                    row_blocks: row_blocks.clone(),
                    reduced: p.kept_count() < c.kernel * c.kernel,
                });
            }
            (Domain::Conv, classes, c.out_ch)
        }
        other => {
            return Err(Error::Mapping(format!(
                "{} layers do not map onto dense or convolution units",
                other.kind_name()
            )))
        }
    };
    let (partial, last) = class_totals(&classes);
    Ok(LayerTiling {
        domain,
        classes,
        partial,
        last,
        out_rows,
    })
}

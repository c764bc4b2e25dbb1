//! Zero-skipping transposed convolution.
//!
//! A transposed convolution evaluated densely convolves over a map in which
//! `stride - 1` zeros separate neighbouring inputs and `k - p - 1` zeros pad
//! each border. Which kernel taps meet a real input depends only on the
//! output coordinate modulo the stride (its phase) and, near the borders, on
//! how close the window is to the edge. Those tap sets are computed once per
//! geometry; execution then runs only the reduced dot products and places
//! each result at its output coordinate.
//!
//! Along one axis, output `o` receives input `i` through tap `t` exactly when
//! `o + p - t = i * s` with `0 <= i < input`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ir::{tconv_expanded_len, tconv_output_len, TensorShape};
use crate::numerics::{tconv_forward_dense, Kernel, Tensor};

/// Spatial hyperparameters of one transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TconvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl TconvGeometry {
    pub fn square(input: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        TconvGeometry {
            in_h: input,
            in_w: input,
            kernel,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_h == 0 || self.in_w == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Shape(format!("degenerate transposed-conv geometry {self:?}")));
        }
        if self.padding > self.kernel - 1 {
            return Err(Error::Shape(format!(
                "padding {} exceeds kernel - 1 = {}",
                self.padding,
                self.kernel - 1
            )));
        }
        if self.out_h().is_none() || self.out_w().is_none() {
            return Err(Error::Shape(format!("geometry {self:?} has an empty output")));
        }
        Ok(())
    }

    pub fn out_h(&self) -> Option<usize> {
        tconv_output_len(self.in_h, self.kernel, self.stride, self.padding)
    }

    pub fn out_w(&self) -> Option<usize> {
        tconv_output_len(self.in_w, self.kernel, self.stride, self.padding)
    }
}

/// Mapping from the expanded (zero-inserted, padded) map back to inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroInsertionPlan {
    pub geometry: TconvGeometry,
    pub expanded_h: usize,
    pub expanded_w: usize,
    /// Zeros added on each border: `k - p - 1`.
    pub border: usize,
}

impl ZeroInsertionPlan {
    pub fn new(geometry: TconvGeometry) -> Result<Self> {
        geometry.validate()?;
        let g = geometry;
        Ok(ZeroInsertionPlan {
            geometry,
            expanded_h: tconv_expanded_len(g.in_h, g.kernel, g.stride, g.padding),
            expanded_w: tconv_expanded_len(g.in_w, g.kernel, g.stride, g.padding),
            border: g.kernel - g.padding - 1,
        })
    }

    fn source_axis(&self, u: usize, input: usize) -> Option<usize> {
        let q = u.checked_sub(self.border)?;
        let s = self.geometry.stride;
        (q % s == 0 && q / s < input).then_some(q / s)
    }

    /// Input coordinate behind an expanded position, `None` for inserted or
    /// padding zeros.
    pub fn source(&self, ey: usize, ex: usize) -> Option<(usize, usize)> {
        Some((
            self.source_axis(ey, self.geometry.in_h)?,
            self.source_axis(ex, self.geometry.in_w)?,
        ))
    }
}

/// Taps that reach a real input for output `o` along one axis.
pub fn axis_kept_taps(o: usize, input: usize, kernel: usize, stride: usize, padding: usize) -> Vec<usize> {
    (0..kernel)
        .filter(|&t| {
            let num = o as isize + padding as isize - t as isize;
            num >= 0 && (num as usize).is_multiple_of(stride) && (num as usize / stride) < input
        })
        .collect()
}

/// Taps of a phase class ignoring borders: `t ≡ phase + p (mod s)`.
pub fn axis_phase_taps(phase: usize, kernel: usize, stride: usize, padding: usize) -> Vec<usize> {
    (0..kernel)
        .filter(|&t| (phase + padding + stride * kernel - t).is_multiple_of(stride))
        .collect()
}

/// Interior kept-tap count of every 2-D phase class `(py, px)`, row-major
/// over `s * s` classes.
pub fn phase_kept_counts(kernel: usize, stride: usize, padding: usize) -> Vec<usize> {
    let per_axis: Vec<usize> = (0..stride)
        .map(|r| axis_phase_taps(r, kernel, stride, padding).len())
        .collect();
    let mut out = Vec::with_capacity(stride * stride);
    for &cy in &per_axis {
        for &cx in &per_axis {
            out.push(cy * cx);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct AxisClass {
    phase: usize,
    phase_taps: Vec<usize>,
    taps: Vec<usize>,
    coords: Vec<usize>,
}

fn axis_classes(out_len: usize, input: usize, kernel: usize, stride: usize, padding: usize) -> Vec<AxisClass> {
    let mut groups: BTreeMap<(usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
    for o in 0..out_len {
        let taps = axis_kept_taps(o, input, kernel, stride, padding);
        groups.entry((o % stride, taps)).or_default().push(o);
    }
    groups
        .into_iter()
        .map(|((phase, taps), coords)| AxisClass {
            phase,
            phase_taps: axis_phase_taps(phase, kernel, stride, padding),
            taps,
            coords,
        })
        .collect()
}

/// Static gather list shared by a set of output positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SparsityPattern {
    /// Output coordinate modulo the stride, `(y, x)`.
    pub phase: (usize, usize),
    /// Kept taps as flattened `ty * k + tx` indices into the kernel, sorted.
    pub kept_taps: Vec<usize>,
    /// Taps the phase keeps away from the borders; `kept_taps` is a subset.
    pub phase_taps: Vec<usize>,
    /// Output rows and columns this pattern applies to (their product).
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    /// True when border padding removes taps beyond the phase's own zeros.
    pub border: bool,
}

impl SparsityPattern {
    pub fn kept_count(&self) -> usize {
        self.kept_taps.len()
    }

    pub fn output_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// Position of each kept tap inside the phase's tap list.
    pub fn phase_positions(&self) -> Vec<usize> {
        self.kept_taps
            .iter()
            .map(|t| {
                self.phase_taps
                    .binary_search(t)
                    .expect("kept taps are a subset of the phase taps")
            })
            .collect()
    }
}

/// One pattern per distinct (phase, kept taps) combination over the output.
pub fn build_patterns(geometry: &TconvGeometry) -> Result<Vec<SparsityPattern>> {
    geometry.validate()?;
    let g = *geometry;
    let (oh, ow) = (g.out_h().unwrap(), g.out_w().unwrap());
    let ys = axis_classes(oh, g.in_h, g.kernel, g.stride, g.padding);
    let xs = axis_classes(ow, g.in_w, g.kernel, g.stride, g.padding);
    let k = g.kernel;
    let flatten = |ty: &[usize], tx: &[usize]| -> Vec<usize> {
        let mut v = Vec::with_capacity(ty.len() * tx.len());
        for &a in ty {
            for &b in tx {
                v.push(a * k + b);
            }
        }
        v
    };
    let mut patterns = Vec::with_capacity(ys.len() * xs.len());
    for y in &ys {
        for x in &xs {
            patterns.push(SparsityPattern {
                phase: (y.phase, x.phase),
                kept_taps: flatten(&y.taps, &x.taps),
                phase_taps: flatten(&y.phase_taps, &x.phase_taps),
                rows: y.coords.clone(),
                cols: x.coords.clone(),
                border: y.taps != y.phase_taps || x.taps != x.phase_taps,
            });
        }
    }
    Ok(patterns)
}

/// A transposed convolution prepared for zero-skipping execution.
#[derive(Debug, Clone)]
pub struct SparseTconv {
    geometry: TconvGeometry,
    patterns: Vec<SparsityPattern>,
    out_h: usize,
    out_w: usize,
}

impl SparseTconv {
    pub fn new(geometry: TconvGeometry) -> Result<Self> {
        let patterns = build_patterns(&geometry)?;
        Ok(SparseTconv {
            geometry,
            patterns,
            out_h: geometry.out_h().unwrap(),
            out_w: geometry.out_w().unwrap(),
        })
    }

    pub fn geometry(&self) -> &TconvGeometry {
        &self.geometry
    }

    pub fn patterns(&self) -> &[SparsityPattern] {
        &self.patterns
    }

    /// Runs only the reduced dot products; also returns the MAC count.
    pub fn forward_counted(&self, x: &Tensor, kernel: &Kernel) -> Result<(Tensor, u64)> {
        let g = &self.geometry;
        let TensorShape {
            channels,
            height,
            width,
        } = x.shape();
        if (height, width) != (g.in_h, g.in_w) {
            return Err(Error::Shape(format!(
                "plan built for {}x{} inputs, got {}",
                g.in_h,
                g.in_w,
                x.shape()
            )));
        }
        if kernel.in_ch != channels || kernel.size != g.kernel {
            return Err(Error::Shape(format!(
                "kernel {}x{}x{k}x{k} does not fit input {} with kernel size {}",
                kernel.out_ch,
                kernel.in_ch,
                x.shape(),
                g.kernel,
                k = kernel.size
            )));
        }
        let (k, s, p) = (g.kernel, g.stride, g.padding);
        let out_shape = TensorShape::new(kernel.out_ch, self.out_h, self.out_w)?;
        let mut out = vec![0.0; out_shape.elements()];
        let mut macs = 0u64;
        let xd = x.data();
        let mut gather: Vec<(usize, usize)> = Vec::with_capacity(k * k);
        for pattern in &self.patterns {
            if pattern.kept_taps.is_empty() {
                continue;
            }
            for &oy in &pattern.rows {
                for &ox in &pattern.cols {
                    // reduced operand list: (input offset within a channel, tap),
                    // in the rotated-kernel order the dense path accumulates in
                    gather.clear();
                    for &tap in pattern.kept_taps.iter().rev() {
                        let (ty, tx) = (tap / k, tap % k);
                        let iy = (oy + p - ty) / s;
                        let ix = (ox + p - tx) / s;
                        gather.push((iy * width + ix, tap));
                    }
                    for o in 0..kernel.out_ch {
                        let mut acc = 0.0;
                        for c in 0..channels {
                            let plane = c * height * width;
                            let kbase = (o * kernel.in_ch + c) * k * k;
                            for &(xi, tap) in &gather {
                                acc += xd[plane + xi] * kernel.data[kbase + tap];
                            }
                        }
                        macs += (channels * gather.len()) as u64;
                        // output assembly: place the reduced result at its coordinate
                        out[(o * self.out_h + oy) * self.out_w + ox] = acc;
                    }
                }
            }
        }
        Ok((Tensor::new(out_shape, out)?, macs))
    }

    pub fn forward(&self, x: &Tensor, kernel: &Kernel) -> Result<Tensor> {
        self.forward_counted(x, kernel).map(|(t, _)| t)
    }
}

/// Zero-skipping transposed convolution; numerically equal to
/// [`crate::numerics::tconv_forward_dense`].
pub fn tconv_forward_sparse(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<Tensor> {
    let shape = x.shape();
    let plan = SparseTconv::new(TconvGeometry {
        in_h: shape.height,
        in_w: shape.width,
        kernel: kernel.size,
        stride,
        padding,
    })?;
    plan.forward(x, kernel)
}

/// MAC accounting for one transposed-convolution layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedWorkload {
    /// Reduced dot-product length (`kept taps * in_ch`) of every output
    /// position, row-major.
    pub per_output_len: Vec<usize>,
    pub reduced_macs: u64,
    pub dense_macs: u64,
    pub ratio: f64,
}

pub fn savings(geometry: &TconvGeometry, in_ch: usize, out_ch: usize) -> Result<ReducedWorkload> {
    let patterns = build_patterns(geometry)?;
    let (oh, ow) = (geometry.out_h().unwrap(), geometry.out_w().unwrap());
    let mut per_output_len = vec![0usize; oh * ow];
    for p in &patterns {
        for &y in &p.rows {
            for &x in &p.cols {
                per_output_len[y * ow + x] = p.kept_count() * in_ch;
            }
        }
    }
    let reduced_macs = per_output_len.iter().map(|&l| l as u64).sum::<u64>() * out_ch as u64;
    let dense_macs = (oh * ow * geometry.kernel * geometry.kernel * in_ch * out_ch) as u64;
    Ok(ReducedWorkload {
        per_output_len,
        reduced_macs,
        dense_macs,
        ratio: reduced_macs as f64 / dense_macs as f64,
    })
}

/// Outcome of randomized comparison against the dense path.
#[derive(Debug, Clone, Serialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub cases: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<TconvGeometry>,
}

/// Random int8-valued cases (`i <= max_input`, `k <= max_kernel`,
/// `s <= max_stride`, up to `max_channels` in/out channels), compared
/// bit-for-bit with the dense path.
pub fn fuzz_against_dense(
    seed: u64,
    cases: usize,
    max_input: usize,
    max_kernel: usize,
    max_stride: usize,
    max_channels: usize,
) -> Result<FuzzReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport {
        seed,
        cases: 0,
        mismatches: 0,
        first_mismatch: None,
    };
    while report.cases < cases {
        let k = rng.random_range(1..=max_kernel);
        let geometry = TconvGeometry {
            in_h: rng.random_range(1..=max_input),
            in_w: rng.random_range(1..=max_input),
            kernel: k,
            stride: rng.random_range(1..=max_stride),
            padding: rng.random_range(0..k),
        };
        if geometry.validate().is_err() {
            continue;
        }
        let (cin, cout) = (rng.random_range(1..=max_channels), rng.random_range(1..=max_channels));
        let x = Tensor::from_fn(TensorShape::new(cin, geometry.in_h, geometry.in_w)?, |_, _, _| {
            rng.random_range(-127..=127) as f64
        });
        let kernel = Kernel::from_fn(cout, cin, k, |_, _, _, _| rng.random_range(-127..=127) as f64);
        let dense = tconv_forward_dense(&x, &kernel, geometry.stride, geometry.padding)?;
        let sparse = SparseTconv::new(geometry)?.forward(&x, &kernel)?;
        report.cases += 1;
        if dense != sparse {
            report.mismatches += 1;
            report.first_mismatch.get_or_insert(geometry);
        }
    }
    Ok(report)
}

/// Kept-tap count at one output position, found by walking the expanded
/// map: tap `(ty, tx)` of the rotated kernel reads `(oy + ty, ox + tx)`.
pub fn enumerate_kept(plan: &ZeroInsertionPlan, oy: usize, ox: usize) -> usize {
    let k = plan.geometry.kernel;
    (0..k * k)
        .filter(|t| plan.source(oy + t / k, ox + t % k).is_some())
        .count()
}

/// Outcome of the exhaustive small-geometry check.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ExhaustiveReport {
    pub geometries: usize,
    pub inputs: u64,
    /// Output positions whose pattern disagrees with enumeration.
    pub pattern_mismatches: usize,
    /// Inputs whose sparse output differs from the dense one.
    pub output_mismatches: u64,
    /// Geometries with stride >= 2 and input >= 2 whose reduced MAC count
    /// is not below the dense count.
    pub savings_failures: usize,
}

/// Every legal single-channel geometry with `i <= max_input`,
/// `k <= max_kernel`, `s <= max_stride`, all paddings, against all
/// `2^(i*i)` binary inputs. Each geometry gets one int8-valued kernel drawn
/// from `seed`.
pub fn exhaustive_binary_check(max_input: usize, max_kernel: usize, max_stride: usize, seed: u64) -> Result<ExhaustiveReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ExhaustiveReport::default();
    for i in 1..=max_input {
        for k in 1..=max_kernel {
            for s in 1..=max_stride {
                for p in 0..k {
                    let g = TconvGeometry::square(i, k, s, p);
                    if g.validate().is_err() {
                        continue;
                    }
                    report.geometries += 1;
                    let plan = ZeroInsertionPlan::new(g)?;
                    let sparse = SparseTconv::new(g)?;
                    for pat in sparse.patterns() {
                        for &y in &pat.rows {
                            for &x in &pat.cols {
                                if enumerate_kept(&plan, y, x) != pat.kept_count() {
                                    report.pattern_mismatches += 1;
                                }
                            }
                        }
                    }
                    let w = savings(&g, 1, 1)?;
                    if s >= 2 && i >= 2 && w.reduced_macs >= w.dense_macs {
                        report.savings_failures += 1;
                    }
                    let kernel = Kernel::from_fn(1, 1, k, |_, _, _, _| rng.random_range(-127..=127) as f64);
                    let shape = TensorShape::new(1, i, i)?;
                    for bits in 0u64..(1u64 << (i * i)) {
                        let x = Tensor::from_fn(shape, |_, y, xx| ((bits >> (y * i + xx)) & 1) as f64);
                        report.inputs += 1;
                        if tconv_forward_dense(&x, &kernel, s, p)? != sparse.forward(&x, &kernel)? {
                            report.output_mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tconv_forward_dense_counted;

    /// Kept counts by walking the expanded map: for output (oy, ox), tap
    /// (ty, tx) of the rotated kernel reads expanded position (oy+ty, ox+tx).
    fn enumerate_kept(g: TconvGeometry, oy: usize, ox: usize) -> usize {
        let plan = ZeroInsertionPlan::new(g).unwrap();
        let mut n = 0;
        for ty in 0..g.kernel {
            for tx in 0..g.kernel {
                if plan.source(oy + ty, ox + tx).is_some() {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn exhaustive_small_geometries_agree() {
        let r = exhaustive_binary_check(3, 3, 2, 5).unwrap();
        assert!(r.geometries > 10);
        assert_eq!(r.pattern_mismatches, 0);
        assert_eq!(r.output_mismatches, 0);
        assert_eq!(r.savings_failures, 0);
    }

    #[test]
    fn stride_one_interior_keeps_everything() {
        let g = TconvGeometry::square(6, 3, 1, 0);
        let patterns = build_patterns(&g).unwrap();
        let interior = patterns
            .iter()
            .find(|p| p.rows.contains(&3) && p.cols.contains(&3))
            .unwrap();
        assert_eq!(interior.kept_count(), 9);
        assert!(!interior.border);
    }

    #[test]
    fn k3_s2_phase_counts() {
        let mut counts = phase_kept_counts(3, 2, 1);
        counts.sort();
        assert_eq!(counts, vec![1, 2, 2, 4]);
        // same multiset from a large grid by enumeration
        let g = TconvGeometry::square(9, 3, 2, 1);
        let mut seen = std::collections::BTreeSet::new();
        for oy in 4..8 {
            for ox in 4..8 {
                seen.insert(((oy % 2, ox % 2), enumerate_kept(g, oy, ox)));
            }
        }
        let mut enumerated: Vec<usize> = seen.iter().map(|(_, n)| *n).collect();
        enumerated.sort();
        assert_eq!(enumerated, vec![1, 2, 2, 4]);
    }

    #[test]
    fn k2_s2_every_output_keeps_one_tap() {
        for p in 0..2 {
            let g = TconvGeometry::square(4, 2, 2, p);
            for pattern in build_patterns(&g).unwrap() {
                assert_eq!(pattern.kept_count(), 1, "{pattern:?}");
            }
        }
    }

    #[test]
    fn single_input_pixel() {
        let g = TconvGeometry::square(1, 3, 2, 0);
        let w = savings(&g, 1, 1).unwrap();
        assert!(w.per_output_len.iter().all(|&l| l == 1));
        assert_eq!(w.reduced_macs, 9);
        let x = Tensor::new(TensorShape::new(1, 1, 1).unwrap(), vec![1.0]).unwrap();
        let k = Kernel::from_fn(1, 1, 3, |_, _, _, _| 1.0);
        let (_, dense_macs) = tconv_forward_dense_counted(&x, &k, 2, 0).unwrap();
        assert_eq!(w.dense_macs, dense_macs);
        assert_eq!(dense_macs, 81);
    }

    #[test]
    fn stride_one_full_padding_matches_dense_count() {
        // s = 1, p = k - 1: no inserted zeros and no border zeros
        for k in 1..=4 {
            let g = TconvGeometry::square(5, k, 1, k - 1);
            let w = savings(&g, 2, 3).unwrap();
            assert_eq!(w.reduced_macs, w.dense_macs);
            assert_eq!(w.ratio, 1.0);
        }
    }

    #[test]
    fn zero_insertion_plan_real_positions() {
        let g = TconvGeometry::square(3, 3, 2, 1);
        let plan = ZeroInsertionPlan::new(g).unwrap();
        assert_eq!(plan.expanded_h, 3 + 2 + 2);
        let mut real = 0;
        for y in 0..plan.expanded_h {
            for x in 0..plan.expanded_w {
                if plan.source(y, x).is_some() {
                    real += 1;
                }
            }
        }
        assert_eq!(real, 9);
        assert!(plan.expanded_h >= g.kernel);
    }

    #[test]
    fn sparse_matches_dense_on_fig_shaped_case() {
        let x = Tensor::from_fn(TensorShape::new(1, 2, 2).unwrap(), |_, y, x| (1 + 2 * y + x) as f64);
        let k = Kernel::from_fn(1, 1, 3, |_, _, y, x| (3 * y + x) as f64 - 4.0);
        let dense = tconv_forward_dense(&x, &k, 2, 1).unwrap();
        let sparse = tconv_forward_sparse(&x, &k, 2, 1).unwrap();
        assert_eq!(dense, sparse);
    }

    #[test]
    fn fuzz_harness_reports_no_mismatch() {
        let r = fuzz_against_dense(7, 60, 6, 4, 3, 3).unwrap();
        assert_eq!(r.cases, 60);
        assert_eq!(r.mismatches, 0);
    }
}

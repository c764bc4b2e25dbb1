use std::collections::BTreeMap;

use proptest::prelude::*;

use pgan_core::arch::{ArchConfig, BlockKind};
use pgan_core::devices::{required_laser_power_dbm, DeviceConfig, LaserSpec};
use pgan_core::ir::{Activation, ConvSpec, LayerSpec, ModelGraph, NormKind, NormSpec, TensorShape};
use pgan_core::numerics::{dense_forward, quantized_dense_forward, tconv_forward_dense, Kernel, Matrix, Tensor};
use pgan_core::perf::energy_of;
use pgan_core::schedule::{build_schedule, fs_to_ns, ns_to_fs, validate_schedule, Schedule, ScheduleOptions};
use pgan_core::sparse::{savings, tconv_forward_sparse, TconvGeometry};

#[derive(Debug, Clone)]
struct Up {
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    norm: Option<NormKind>,
    act: bool,
}

fn up() -> impl Strategy<Value = Up> {
    (1usize..=12, 1usize..=4, 1usize..=3, any::<prop::sample::Index>(), 0usize..3, any::<bool>()).prop_map(
        |(out_ch, kernel, stride, pad, norm, act)| Up {
            out_ch,
            kernel,
            stride,
            pad: pad.index(kernel),
            norm: [Some(NormKind::BatchNorm), Some(NormKind::InstanceNorm), None][norm],
            act,
        },
    )
}

/// Optional dense head, then a stack of transposed convolutions, optional
/// same-size convolution with a residual around it.
fn generator() -> impl Strategy<Value = ModelGraph> {
    (1usize..=24, prop::option::of(1usize..=24), prop::collection::vec(up(), 1..4), any::<bool>()).prop_filter_map(
        "shape-consistent graph",
        |(z, head, ups, residual)| {
            let mut layers = Vec::new();
            let mut ch = z;
            if let Some(h) = head {
                layers.push(LayerSpec::Dense {
                    in_features: z,
                    out_features: h,
                    has_bias: true,
                });
                layers.push(LayerSpec::Activation(Activation::LeakyRelu { slope: 0.2 }));
                ch = h;
            }
            for u in &ups {
                let mut c = ConvSpec::new(ch, u.out_ch, u.kernel, u.stride, u.pad);
                if let Some(kind) = u.norm {
                    c = c.with_norm(NormSpec::new(kind));
                }
                layers.push(LayerSpec::TransposedConv2d(c));
                if u.act {
                    layers.push(LayerSpec::Activation(Activation::Relu));
                }
                ch = u.out_ch;
            }
            if residual {
                let src = layers.len() - 1;
                layers.push(LayerSpec::Conv2d(ConvSpec::new(ch, ch, 1, 1, 0)));
                layers.push(LayerSpec::ResidualAdd { source: src });
            }
            let g = ModelGraph::new("prop", TensorShape::vector(z), layers).ok()?;
            (g.output_shape().elements() <= 8192).then_some(g)
        },
    )
}

fn arch() -> impl Strategy<Value = ArchConfig> {
    (1usize..=36, 1usize..=8, 1usize..=6, 1usize..=6).prop_map(|(n, k, l, m)| ArchConfig::new(n, k, l, m).unwrap())
}

fn opts() -> impl Strategy<Value = ScheduleOptions> {
    (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, c, d, e)| {
        ScheduleOptions {
            sparse: a,
            pipelined: b,
            power_gating: c,
            include_eo_modulation: d,
            weight_stationary_conv: e,
        }
    })
}

type OpKey = (usize, BlockKind, u8, usize, usize, bool, bool);

fn op_multiset(s: &Schedule) -> BTreeMap<OpKey, u64> {
    let mut m = BTreeMap::new();
    for op in s.expand() {
        *m.entry((op.layer, op.block, op.stage, op.rows_used, op.cols_used, op.reduced, op.final_pass))
            .or_default() += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_tconv_is_bit_exact(
        h in 1usize..7, w in 1usize..7, k in 1usize..6, s in 1usize..4, p_idx in any::<prop::sample::Index>(),
        cin in 1usize..4, cout in 1usize..4, seed in any::<u64>(),
    ) {
        let p = p_idx.index(k);
        let g = TconvGeometry { in_h: h, in_w: w, kernel: k, stride: s, padding: p };
        prop_assume!(g.validate().is_ok());
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 255) as f64 - 127.0 + 0.37
        };
        let x = Tensor::from_fn(TensorShape::new(cin, h, w).unwrap(), |_, _, _| next());
        let kern = Kernel::from_fn(cout, cin, k, |_, _, _, _| next());
        prop_assert_eq!(tconv_forward_dense(&x, &kern, s, p).unwrap(), tconv_forward_sparse(&x, &kern, s, p).unwrap());
        let sv = savings(&g, cin, cout).unwrap();
        prop_assert!(sv.reduced_macs <= sv.dense_macs);
    }

    #[test]
    fn laser_power_grows_with_wavelengths_and_loss(
        s in -30.0f64..-5.0, n in 1usize..36, dn in 1usize..36, loss in 0.0f64..30.0, dl in 0.001f64..10.0,
    ) {
        let base = required_laser_power_dbm(&LaserSpec::new(s, n, loss).unwrap());
        let more_n = (n + dn).min(36);
        prop_assume!(more_n > n);
        prop_assert!(required_laser_power_dbm(&LaserSpec::new(s, more_n, loss).unwrap()) > base);
        prop_assert!(required_laser_power_dbm(&LaserSpec::new(s, n, loss + dl).unwrap()) > base);
    }

    #[test]
    fn schedules_validate(g in generator(), a in arch(), o in opts()) {
        let s = build_schedule(&g, &a, &o, &DeviceConfig::default()).unwrap();
        prop_assert!(validate_schedule(&s, &a).is_ok(), "{:?}", validate_schedule(&s, &a).err());
    }

    /// Replays the expanded tiles as events: on every unit and stage each
    /// tile finishes before the next begins, nothing outlives the schedule,
    /// and the runs account for every tile.
    #[test]
    fn expanded_tiles_replay_without_conflicts(g in generator(), a in arch(), o in opts()) {
        let s = build_schedule(&g, &a, &o, &DeviceConfig::default()).unwrap();
        let tiles = s.expand();
        prop_assert_eq!(tiles.len() as u64, s.ops.iter().map(|op| op.count).sum::<u64>());
        let mut free_at: BTreeMap<(BlockKind, u8), u64> = BTreeMap::new();
        let mut events: Vec<_> = tiles.iter().collect();
        events.sort_by_key(|t| (t.start_fs, t.stage));
        for t in events {
            let slot = free_at.entry((t.block, t.stage)).or_insert(0);
            prop_assert!(t.start_fs >= *slot, "{} stage {} busy until {} fs, next tile at {} fs", t.block, t.stage, slot, t.start_fs);
            *slot = t.start_fs + t.busy_fs;
            prop_assert!(*slot <= s.total_fs);
        }
        let compute_tiles: u64 = s.ops.iter()
            .filter(|op| op.stage == 1 && matches!(op.block, BlockKind::Dense(_) | BlockKind::Conv(_)))
            .map(|op| op.count)
            .sum();
        prop_assert!(compute_tiles <= s.work().tiles);
    }

    /// Pipelining and gating move work in time but never change it.
    #[test]
    fn timing_options_preserve_work(g in generator(), a in arch(), o in opts()) {
        let dev = DeviceConfig::default();
        let reference = build_schedule(&g, &a, &ScheduleOptions { pipelined: false, power_gating: false, ..o }, &dev).unwrap();
        let ops = op_multiset(&reference);
        let e_ref = energy_of(&reference, &dev).unwrap();
        for (pipelined, power_gating) in [(true, false), (false, true), (true, true)] {
            let s = build_schedule(&g, &a, &ScheduleOptions { pipelined, power_gating, ..o }, &dev).unwrap();
            prop_assert_eq!(&op_multiset(&s), &ops);
            prop_assert_eq!(s.work(), reference.work());
            let e = energy_of(&s, &dev).unwrap();
            for (x, y) in [(e.dac, e_ref.dac), (e.adc, e_ref.adc), (e.vcsel, e_ref.vcsel), (e.pd, e_ref.pd), (e.soa, e_ref.soa), (e.ecu, e_ref.ecu)] {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-30));
            }
            prop_assert!(s.total_fs <= reference.total_fs);
        }
    }

    #[test]
    fn energy_breakdown_adds_up(g in generator(), a in arch(), o in opts()) {
        let dev = DeviceConfig::default();
        let s = build_schedule(&g, &a, &o, &dev).unwrap();
        let e = energy_of(&s, &dev).unwrap();
        let sum: f64 = e.values().iter().sum();
        prop_assert!((sum - e.total()).abs() <= 1e-12 * sum.abs().max(1e-30));
        prop_assert!(e.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn graphs_round_trip_through_toml(g in generator()) {
        let back = ModelGraph::from_toml_str(&g.to_toml_string(), "generated").unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn femtosecond_conversion_round_trips(fs in 0u64..(1u64 << 50)) {
        prop_assert_eq!(ns_to_fs(fs_to_ns(fs)), fs);
    }

    #[test]
    fn dense_quantization_error_is_bounded(
        cin in 1usize..64, cout in 1usize..16, xs in 0.01f64..10.0, ws in 0.01f64..2.0, seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let x = Tensor::from_fn(TensorShape::vector(cin), |_, _, _| xs * next());
        let w = Matrix::new(cout, cin, (0..cin * cout).map(|_| ws * next()).collect()).unwrap();
        let reference = dense_forward(&x, &w, None).unwrap();
        let q = quantized_dense_forward(&x, &w, None).unwrap();
        for (a, b) in reference.data().iter().zip(q.output.data()) {
            prop_assert!((a - b).abs() <= q.bound);
        }
    }
}

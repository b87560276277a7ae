//! Property tests for invariants that hold for any input.

use dualcycle::config::ExperimentConfig;
use dualcycle::cycle::{cc1_loss, cc2_loss, combined_loss, dual_cycle_batch, mae, LossWeights};
use dualcycle::metrics::{linear_blend_oracle, psnr, scatter_index, ssim};
use dualcycle::net::{build_network, NetConfig};
use dualcycle::seqdata::{
    decode_fseq, denormalize, encode_fseq, generate_synthetic, normalize, FrameSequence,
    SyntheticKind, SyntheticSpec,
};
use dualcycle::train::{lr_schedule, Checkpoint, TrainConfig};
use ndarray::{Array, Array3, Array4, ArrayView4};
use proptest::prelude::*;

fn frames(n: usize, c: usize, h: usize, w: usize) -> impl Strategy<Value = Array4<f32>> {
    proptest::collection::vec(-50.0f32..50.0, n * c * h * w)
        .prop_map(move |v| Array::from_shape_vec((n, c, h, w), v).unwrap())
}

fn sequence() -> impl Strategy<Value = FrameSequence> {
    (1usize..6, 1usize..3, 1usize..5, 1usize..5)
        .prop_flat_map(|(n, c, h, w)| frames(n, c, h, w))
        .prop_map(|f| FrameSequence::from_frames(f, "step").unwrap())
}

fn batch() -> impl Strategy<Value = [Array4<f64>; 3]> {
    (1usize..3, 1usize..4, 1usize..4).prop_flat_map(|(n, h, w)| {
        let one = || {
            proptest::collection::vec(-5.0f64..5.0, n * h * w)
                .prop_map(move |v| Array::from_shape_vec((n, 1, h, w), v).unwrap())
        };
        [one(), one(), one()]
    })
}

fn endpoint_copy(a: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    (a.to_owned(), b.to_owned())
}

fn linear(a: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    let d = &b - &a;
    (&a + &(&d / 3.0), &a + &(&d * (2.0 / 3.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fseq_roundtrip_is_bit_exact(seq in sequence()) {
        let back = decode_fseq(&encode_fseq(&seq)).unwrap();
        prop_assert!(back.frames.iter().map(|v| v.to_bits()).eq(seq.frames.iter().map(|v| v.to_bits())));
        prop_assert_eq!(back.capacity.to_bits(), seq.capacity.to_bits());
        prop_assert_eq!(back.dt_label, seq.dt_label);
    }

    #[test]
    fn normalization_inverts(seq in sequence()) {
        let back = denormalize(&normalize(&seq));
        for (a, b) in back.frames.iter().zip(seq.frames.iter()) {
            prop_assert!((a - b).abs() <= 1e-3 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn cycle_losses_are_nonnegative_and_combine_linearly(x in batch(), l1 in 0.0f64..2.0, l2 in 0.0f64..2.0) {
        let sp = dual_cycle_batch(&endpoint_copy, x[0].view(), x[1].view(), x[2].view()).unwrap();
        let w = LossWeights { lambda_cc1: l1, lambda_cc2: l2, ..LossWeights::default() };
        let (c1, c2) = (cc1_loss(&sp, &x[1]), cc2_loss(&sp));
        prop_assert!(c1 >= 0.0 && c2 >= 0.0);
        prop_assert!((combined_loss(&sp, &x[1], &w) - (l1 * c1 + l2 * c2)).abs() < 1e-9);
    }

    #[test]
    fn endpoint_copy_pays_only_the_outer_cycle(x in batch()) {
        let sp = dual_cycle_batch(&endpoint_copy, x[0].view(), x[1].view(), x[2].view()).unwrap();
        prop_assert_eq!(cc1_loss(&sp, &x[1]), 0.0);
        let want = 0.5 * (mae(&x[1], &x[0]) + mae(&x[1], &x[2]));
        prop_assert!((cc2_loss(&sp) - want).abs() < 1e-9);
    }

    #[test]
    fn linear_model_is_cycle_consistent_on_affine_motion(x in batch()) {
        let (i0, d) = (&x[0], &x[1]);
        let i1 = i0 + d;
        let i2 = i0 + &(d * 2.0);
        let sp = dual_cycle_batch(&linear, i0.view(), i1.view(), i2.view()).unwrap();
        prop_assert!(cc1_loss(&sp, &i1) < 1e-9);
        prop_assert!(cc2_loss(&sp) < 1e-9);
    }

    #[test]
    fn metric_ranges_and_symmetry(f in frames(2, 1, 12, 12), range in 0.5f64..100.0) {
        let (a, b) = (f.index_axis(ndarray::Axis(0), 0), f.index_axis(ndarray::Axis(0), 1));
        let s_ab = ssim(a, b, range).unwrap();
        prop_assert!(s_ab <= 1.0 + 1e-12);
        prop_assert_eq!(s_ab, ssim(b, a, range).unwrap());
        prop_assert_eq!(psnr(a, b, range).unwrap(), psnr(b, a, range).unwrap());
        prop_assert!(scatter_index(a, b, range).unwrap() >= 0.0);
        prop_assert!((ssim(a, a, range).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blend_oracle_is_exact_between_affine_frames(a in -5.0f32..5.0, d in -5.0f32..5.0) {
        let fa = Array3::from_elem((1, 2, 2), a);
        let fb = Array3::from_elem((1, 2, 2), a + 3.0 * d);
        let p = linear_blend_oracle(&fa, &fb).unwrap();
        prop_assert!((p.f1[[0, 0, 0]] - (a + d)).abs() < 1e-4);
        prop_assert!((p.f2[[0, 1, 1]] - (a + 2.0 * d)).abs() < 1e-4);
    }

    #[test]
    fn schedule_is_positive_and_non_increasing(s1 in 0u64..5_000_000, s2 in 0u64..5_000_000, p in 0u32..5) {
        let cfg = TrainConfig::pretrain_default();
        let (lo, hi) = (s1.min(s2), s1.max(s2));
        let (a, b) = (lr_schedule(lo, &cfg, p), lr_schedule(hi, &cfg, p));
        prop_assert!(b > 0.0 && b <= a && a <= cfg.lr0);
        prop_assert!(lr_schedule(hi, &cfg, p + 1) < b);
    }

    #[test]
    fn synthetic_generation_is_deterministic(seed in 0..=i64::MAX as u64, k in 0usize..5) {
        let spec = SyntheticSpec {
            kind: SyntheticKind::ALL[k],
            n_frames: 4,
            height: 6,
            width: 7,
            noise_std: 0.05,
            seed,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        prop_assert!(a.frames.iter().map(|v| v.to_bits()).eq(b.frames.iter().map(|v| v.to_bits())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_bytes_roundtrip(seed in any::<u64>(), step in any::<u64>()) {
        let cfg = NetConfig { in_channels: 1, base_width: 4, depth: 2, se_reduction: 2, use_batchnorm: true };
        let net = build_network::<f32>(&cfg, seed).unwrap();
        let ckpt = Checkpoint::from_network(&net, Some(TrainConfig::desk_pretrain()), step);
        prop_assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), ckpt);
    }

    #[test]
    fn resolved_config_roundtrips(epochs in 0usize..1000, seed in 0..=i64::MAX as u64, lr in 1e-6f64..1.0, budget in proptest::option::of(1usize..100)) {
        let mut cfg = ExperimentConfig::default();
        cfg.pretrain.epochs = epochs;
        cfg.finetune.lr0 = lr;
        cfg.finetune.sample_budget = budget;
        cfg.set_seed(seed);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn seeds_beyond_the_config_integer_range_are_rejected() {
    let mut cfg = ExperimentConfig::default();
    cfg.set_seed(i64::MAX as u64 + 1);
    assert!(cfg.validate().is_err());
    let spec = SyntheticSpec { seed: u64::MAX, ..SyntheticSpec::default() };
    assert!(generate_synthetic(&spec).is_err());
}

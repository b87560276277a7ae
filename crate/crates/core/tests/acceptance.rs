//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion, bypassing the test harness's output capture, then asserts.
//!
//! cargo test --release -p dualcycle --test acceptance

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dualcycle::cli::{self, interpolate_sequence};
use dualcycle::cycle::{
    cc1_loss, cc2_loss, combined_loss, combined_loss_backward, combined_loss_value, dual_cycle_batch,
    LossWeights,
};
use dualcycle::metrics::{evaluate, network_predictor, psnr, scatter_index, ssim, trivial_copy_baseline};
use dualcycle::net::{build_network, InterpolationNetwork, Mode, NetConfig};
use dualcycle::seqdata::{
    decode_fseq, encode_fseq, generate_synthetic, load_sequence, normalize, FrameSequence,
    NormStats, SyntheticKind, SyntheticSpec,
};
use dualcycle::train::{
    finetune, load_checkpoint, lr_schedule, pretrain, save_checkpoint, Checkpoint, TrainConfig,
};
use ndarray::{Array, Array3, Array4, ArrayView4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

fn report(n: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n} [{verdict}] {name}: {detail} ({:.1}s)\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// ---------------------------------------------------------------------------
// 1. Loss identities on the scalar triplet (0, 2, 4)

fn scalar(v: f64) -> Array4<f64> {
    Array::from_elem((1, 1, 1, 1), v)
}

fn scalar_losses<M>(model: M) -> (f64, f64, f64)
where
    M: Fn(ArrayView4<f64>, ArrayView4<f64>) -> (Array4<f64>, Array4<f64>),
{
    let (i0, i1, i2) = (scalar(0.0), scalar(2.0), scalar(4.0));
    let sp = dual_cycle_batch(&model, i0.view(), i1.view(), i2.view()).unwrap();
    let w = LossWeights::default();
    (cc1_loss(&sp, &i1), cc2_loss(&sp), combined_loss(&sp, &i1, &w))
}

fn copy_model(a: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    (a.to_owned(), b.to_owned())
}

fn linear_model(a: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    let d = &b - &a;
    (&a + &(&d / 3.0), &a + &(&d * (2.0 / 3.0)))
}

fn later_model(_: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    (b.to_owned(), b.to_owned())
}

#[test]
fn criterion_1_loss_identities() {
    let t = Instant::now();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6;
    let copy = scalar_losses(copy_model);
    let linear = scalar_losses(linear_model);
    let later = scalar_losses(later_model);
    let pass = close(copy.0, 0.0)
        && close(copy.1, 2.0)
        && close(copy.2, 0.7)
        && close(linear.0, 0.0)
        && close(linear.1, 0.0)
        && close(linear.2, 0.0)
        && close(later.0, 4.0);
    let elapsed = t.elapsed();
    let pass = pass && elapsed < Duration::from_secs(1);
    report(
        1,
        "loss identities",
        pass,
        &format!("copy {copy:?}, linear {linear:?}, (b,b) cc1 {}", later.0),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Gradient check

#[test]
fn criterion_2_gradient_check() {
    let t = Instant::now();
    let cfg = NetConfig {
        in_channels: 1,
        base_width: 4,
        depth: 2,
        se_reduction: 2,
        use_batchnorm: true,
    };
    let mut net = build_network::<f64>(&cfg, 11).unwrap();
    net.set_mode(Mode::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x: [Array4<f64>; 3] =
        std::array::from_fn(|_| Array::from_shape_fn((2, 1, 8, 8), |_| rng.random_range(-1.0..1.0)));
    let w = LossWeights::default();

    let mut analytic = net.zero_grads();
    let mut scratch = net.clone();
    combined_loss_backward(&mut scratch, x[0].view(), x[1].view(), x[2].view(), &w, &mut analytic)
        .unwrap();
    let loss = |n: &InterpolationNetwork<f64>| {
        combined_loss_value(n, x[0].view(), x[1].view(), x[2].view(), &w)
            .unwrap()
            .combined
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = net.params().values()[i];
        net.params_mut().values_mut()[i] = orig + eps;
        let up = loss(&net);
        net.params_mut().values_mut()[i] = orig - eps;
        let down = loss(&net);
        net.params_mut().values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12));
    }
    let n = net.count_parameters();
    let elapsed = t.elapsed();
    let pass = n <= 5000 && worst < 1e-4 && elapsed < Duration::from_secs(60);
    report(
        2,
        "gradient check (f64)",
        pass,
        &format!("{n} parameters, max relative error {worst:.2e}"),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Metric closed forms

#[test]
fn criterion_3_metric_closed_forms() {
    let t = Instant::now();
    let zeros = Array3::<f32>::zeros((1, 16, 16));
    let tenth = Array3::<f32>::from_elem((1, 16, 16), 0.1);
    let p = psnr(tenth.view(), zeros.view(), 1.0).unwrap();

    let field = Array3::from_shape_fn((1, 16, 16), |(_, i, j)| ((i * 7 + j * 3) % 11) as f32 / 10.0);
    let s_same = ssim(field.view(), field.view(), 1.0).unwrap();
    let ones = Array3::<f32>::ones((1, 16, 16));
    let s_const = ssim(zeros.view(), ones.view(), 1.0).unwrap();

    // Rows alternate 0 and 1, so the mean squared error is exactly 0.5.
    let stripes = Array3::from_shape_fn((1, 4, 4), |(_, i, _)| (i % 2) as f32);
    let si = scatter_index(stripes.view(), Array3::<f32>::zeros((1, 4, 4)).view(), 5.0).unwrap();

    let want_const = 1e-4 / 1.0001;
    let elapsed = t.elapsed();
    let pass = (p - 20.0).abs() <= 1e-6
        && (s_same - 1.0).abs() <= 1e-9
        && (s_const - want_const).abs() <= 1e-7
        && si == 0.1
        && elapsed < Duration::from_secs(1);
    report(
        3,
        "metric closed forms",
        pass,
        &format!("psnr {p:.9}, ssim(x,x) {s_same:.12}, ssim(0,1) {s_const:.3e}, si {si}"),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4, 5, 8. Training experiments, shared between criteria

fn drifting(seed: u64) -> FrameSequence {
    generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::TranslateGaussian,
        n_frames: 64,
        height: 32,
        width: 32,
        noise_std: 0.01,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn rotating(seed: u64) -> FrameSequence {
    generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::RotateField,
        n_frames: 64,
        height: 32,
        width: 32,
        noise_std: 0.01,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn model_psnr(net: &mut InterpolationNetwork<f32>, test: &FrameSequence) -> f64 {
    net.set_mode(Mode::Eval);
    let cap = test.capacity as f64;
    evaluate(network_predictor(net, NormStats::of(&test.frames)), test, cap, cap)
        .unwrap()
        .mean_psnr
}

fn copy_psnr(test: &FrameSequence) -> f64 {
    let cap = test.capacity as f64;
    evaluate(|q| Ok(trivial_copy_baseline(q)), test, cap, cap).unwrap().mean_psnr
}

struct OracleRun {
    seed: u64,
    copy: f64,
    pretrained: f64,
    finetuned: f64,
    checkpoint: Checkpoint,
    pretrain_time: Duration,
}

struct OracleRuns {
    runs: Vec<OracleRun>,
    elapsed: Duration,
}

fn oracle_runs() -> &'static OracleRuns {
    static RUNS: OnceLock<OracleRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let runs = SEEDS
            .iter()
            .map(|&seed| {
                let train = [drifting(seed)];
                let test = drifting(seed + 1000);
                let started = Instant::now();
                let mut net = build_network::<f32>(&NetConfig::desk(), seed).unwrap();
                let pre_cfg = TrainConfig {
                    seed,
                    ..TrainConfig::desk_pretrain()
                };
                let pre = pretrain(&mut net, &train, &pre_cfg).unwrap();
                let pretrain_time = started.elapsed();
                let pretrained = model_psnr(&mut net, &test);
                let ft_cfg = TrainConfig {
                    seed,
                    ..TrainConfig::desk_finetune()
                };
                finetune(&mut net, Some(&pre.checkpoint), &train, &ft_cfg).unwrap();
                let finetuned = model_psnr(&mut net, &test);
                OracleRun {
                    seed,
                    copy: copy_psnr(&test),
                    pretrained,
                    finetuned,
                    checkpoint: pre.checkpoint,
                    pretrain_time,
                }
            })
            .collect();
        OracleRuns {
            runs,
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn criterion_4_oracle_training_experiment() {
    let o = oracle_runs();
    let over_copy = median(o.runs.iter().map(|r| r.finetuned - r.copy).collect());
    let over_pre = median(o.runs.iter().map(|r| r.finetuned - r.pretrained).collect());
    let per_seed: Vec<String> = o
        .runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: copy {:.2} / pretrain {:.2} / finetune {:.2} dB",
                r.seed, r.copy, r.pretrained, r.finetuned
            )
        })
        .collect();
    let pass = over_copy >= 3.0 && over_pre >= 0.0 && o.elapsed < Duration::from_secs(30 * 60);
    report(
        4,
        "oracle training experiment",
        pass,
        &format!(
            "median gain over copy {over_copy:.2} dB, median finetune - pretrain {over_pre:.3} dB; {}",
            per_seed.join("; ")
        ),
        o.elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_5_trivial_solution_witness() {
    let o = oracle_runs();
    let t = Instant::now();
    let mut net = o.runs[0].checkpoint.to_network().unwrap();
    net.set_mode(Mode::Eval);
    // A held-out triplet at the training spacing.
    let val = normalize(&drifting(o.runs[0].seed + 1000).subsample(3, 0));
    let a = val.frame(4).to_owned();
    let b = val.frame(5).to_owned();
    let non_constant = a.iter().any(|&v| v != a[[0, 0, 0]]);
    let out = net
        .interpolate(&dualcycle::net::FramePair { f1: a.clone(), f2: b.clone() })
        .unwrap();
    let mae = |x: &Array3<f32>, y: &Array3<f32>| {
        x.iter().zip(y).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / x.len() as f64
    };
    let gaps = [mae(&out.f1, &a), mae(&out.f1, &b), mae(&out.f2, &a), mae(&out.f2, &b)];
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = 10.0 * f32::EPSILON as f64;
    let (_, copy_cc2, _) = scalar_losses(copy_model);
    let pass = non_constant && min_gap > threshold && (copy_cc2 - 2.0).abs() <= 1e-6;
    report(
        5,
        "trivial-solution witness",
        pass,
        &format!("min MAE to either input {min_gap:.3e} (threshold {threshold:.2e}), copy cc2 {copy_cc2}"),
        t.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_8_transfer_smoke_test() {
    let o = oracle_runs();
    let t = Instant::now();
    let mut diffs = Vec::new();
    let mut per_seed = Vec::new();
    for r in &o.runs {
        let train = [rotating(r.seed + 200)];
        let test = rotating(r.seed + 2000);
        let cfg = TrainConfig {
            seed: r.seed,
            sample_budget: Some(10),
            ..TrainConfig::desk_finetune()
        };
        let mut transfer = build_network::<f32>(&NetConfig::desk(), r.seed).unwrap();
        finetune(&mut transfer, Some(&r.checkpoint), &train, &cfg).unwrap();
        let mut random = build_network::<f32>(&NetConfig::desk(), r.seed).unwrap();
        finetune(&mut random, None, &train, &cfg).unwrap();
        let (pt, pr) = (model_psnr(&mut transfer, &test), model_psnr(&mut random, &test));
        diffs.push(pt - pr);
        per_seed.push(format!("seed {}: transfer {pt:.2} / random {pr:.2} dB", r.seed));
    }
    let gain = median(diffs);
    // The transfer budget covers the source-domain pretraining it reuses.
    let elapsed = t.elapsed() + o.runs.iter().map(|r| r.pretrain_time).sum::<Duration>();
    let pass = gain >= 0.0 && elapsed < Duration::from_secs(20 * 60);
    report(
        8,
        "transfer smoke test",
        pass,
        &format!("median transfer - random {gain:.2} dB; {}", per_seed.join("; ")),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Determinism and roundtrips

fn first_rows(seed: u64) -> Vec<Vec<u64>> {
    let data = [generate_synthetic(&SyntheticSpec {
        n_frames: 16,
        height: 16,
        width: 16,
        noise_std: 0.01,
        seed: 5,
        ..SyntheticSpec::default()
    })
    .unwrap()];
    let mut net = build_network::<f32>(&NetConfig::desk(), seed).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        seed,
        ..TrainConfig::desk_pretrain()
    };
    let out = pretrain(&mut net, &data, &cfg).unwrap();
    out.log
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn criterion_6_determinism_and_roundtrips() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();

    let same_losses = first_rows(3) == first_rows(3);
    notes.push(format!("repeat run losses identical: {same_losses}"));

    let seq = drifting(9);
    let decoded = decode_fseq(&encode_fseq(&seq)).unwrap();
    let fseq_exact = decoded.frames.iter().map(|v| v.to_bits()).eq(seq.frames.iter().map(|v| v.to_bits()))
        && decoded.capacity.to_bits() == seq.capacity.to_bits()
        && decoded.dt_label == seq.dt_label;
    notes.push(format!("fseq bit-exact: {fseq_exact}"));

    let net = build_network::<f32>(&NetConfig::desk(), 4).unwrap();
    let ckpt_path = dir.path().join("m.dckp");
    save_checkpoint(&Checkpoint::from_network(&net, None, 0), &ckpt_path).unwrap();
    let back = load_checkpoint(&ckpt_path).unwrap().to_network().unwrap();
    let bits = |n: &InterpolationNetwork<f32>| {
        n.params()
            .values()
            .iter()
            .chain(n.buffers().values())
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    let ckpt_exact = bits(&back) == bits(&net) && back.config() == net.config();
    notes.push(format!("checkpoint bit-exact: {ckpt_exact}"));

    let data = dir.path().join("five.fseq");
    let out = dir.path().join("dense.fseq");
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    let gen = cli::run([
        "dualcycle", "gen-data", "--kind", "rotate_field", "--frames", "5", "--size", "16", "--seed", "3",
        "--out", &s(&data),
    ]);
    let interp = cli::run([
        "dualcycle", "interp", "--model", &s(&ckpt_path), "--data", &s(&data), "--out", &s(&out),
    ]);
    let input = load_sequence(&data).unwrap();
    let dense = load_sequence(&out).unwrap();
    let originals_kept = (0..input.n_frames()).all(|k| {
        dense.frame(3 * k).iter().map(|v| v.to_bits()).eq(input.frame(k).iter().map(|v| v.to_bits()))
    });
    let mut eval_net = back;
    eval_net.set_mode(Mode::Eval);
    let direct = interpolate_sequence(&eval_net, &input).unwrap();
    let interp_ok = gen == 0
        && interp == 0
        && dense.n_frames() == 3 * input.n_frames() - 2
        && originals_kept
        && direct.frames == dense.frames;
    notes.push(format!(
        "interp {} -> {} frames, originals preserved: {originals_kept}",
        input.n_frames(),
        dense.n_frames()
    ));

    let elapsed = t.elapsed();
    let pass = same_losses && fseq_exact && ckpt_exact && interp_ok && elapsed < Duration::from_secs(60);
    report(6, "determinism and roundtrips", pass, &notes.join(", "), elapsed);
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Schedule conformance

#[test]
fn criterion_7_schedule_conformance() {
    let t = Instant::now();
    let cfg = TrainConfig::pretrain_default();
    let got = [0u64, 400_000, 800_000].map(|s| lr_schedule(s, &cfg, 0));
    let pass = got == [3e-4, 1.5e-4, 7.5e-5];
    report(7, "learning-rate schedule", pass, &format!("{got:?}"), t.elapsed());
    assert!(pass);
}

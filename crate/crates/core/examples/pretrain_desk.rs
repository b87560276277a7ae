//! Pretrain the desk network on a drifting Gaussian, fine-tune it, and
//! compare held-out PSNR against the copy and blend baselines.
//!
//! cargo run --release --example pretrain_desk -- [seed]

use dualcycle::metrics::{
    evaluate, linear_blend_oracle, network_predictor, trivial_copy_baseline, MetricsReport,
};
use dualcycle::net::{build_network, InterpolationNetwork, Mode, NetConfig};
use dualcycle::seqdata::{generate_synthetic, FrameSequence, NormStats, SyntheticKind, SyntheticSpec};
use dualcycle::train::{finetune, pretrain_with, TrainConfig};
use std::time::Instant;

fn sequence(seed: u64) -> FrameSequence {
    generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::TranslateGaussian,
        n_frames: 64,
        height: 32,
        width: 32,
        noise_std: 0.01,
        seed,
        ..SyntheticSpec::default()
    })
    .expect("valid spec")
}

fn score(net: &InterpolationNetwork<f32>, test: &FrameSequence) -> MetricsReport {
    let stats = NormStats::of(&test.frames);
    let cap = test.capacity as f64;
    evaluate(network_predictor(net, stats), test, cap, cap).expect("evaluation")
}

fn main() -> dualcycle::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let train = vec![sequence(seed)];
    let test = sequence(seed + 1000);
    let cap = test.capacity as f64;

    let copy = evaluate(|q| Ok(trivial_copy_baseline(q)), &test, cap, cap)?;
    let blend = evaluate(|q| linear_blend_oracle(&q.in_a, &q.in_b), &test, cap, cap)?;
    println!("copy  {:.3} dB", copy.mean_psnr);
    println!("blend {:.3} dB", blend.mean_psnr);

    let started = Instant::now();
    let mut net = build_network::<f32>(&NetConfig::desk(), seed)?;
    let pre_cfg = TrainConfig {
        seed,
        ..TrainConfig::desk_pretrain()
    };
    println!("epoch  lr        cc1      cc2      combined val");
    let pre = pretrain_with(&mut net, &train, &pre_cfg, |r| {
        println!(
            "{:>5}  {:.2e}  {:.5}  {:.5}  {:.5}  {:.5}",
            r[0] as u64, r[1], r[2], r[3], r[4], r[5]
        )
    })?;
    let combined = pre.log.column("combined").expect("logged");
    println!(
        "final / first-epoch combined loss: {:.3}",
        combined[combined.len() - 1] / combined[1]
    );
    net.set_mode(Mode::Eval);
    let pre_report = score(&net, &test);
    println!(
        "pretrain  best epoch {}  {:.3} dB  ({:.0?})",
        pre.best_epoch,
        pre_report.mean_psnr,
        started.elapsed()
    );

    let ft_cfg = TrainConfig {
        seed,
        ..TrainConfig::desk_finetune()
    };
    let ft = finetune(&mut net, Some(&pre.checkpoint), &train, &ft_cfg)?;
    net.set_mode(Mode::Eval);
    let ft_report = score(&net, &test);
    println!(
        "finetune  best epoch {}  {:.3} dB  ({:.0?})",
        ft.best_epoch,
        ft_report.mean_psnr,
        started.elapsed()
    );
    Ok(())
}

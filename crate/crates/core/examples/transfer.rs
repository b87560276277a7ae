//! Pretrain on a drifting Gaussian, then fine-tune on a rotating field
//! with only ten quadruples, against the same budget from random weights.
//!
//! cargo run --release --example transfer -- [seed]

use dualcycle::metrics::{evaluate, network_predictor, trivial_copy_baseline};
use dualcycle::net::{build_network, InterpolationNetwork, Mode, NetConfig};
use dualcycle::seqdata::{generate_synthetic, FrameSequence, NormStats, SyntheticKind, SyntheticSpec};
use dualcycle::train::{finetune, pretrain, TrainConfig};

fn sequence(kind: SyntheticKind, seed: u64) -> dualcycle::Result<FrameSequence> {
    generate_synthetic(&SyntheticSpec {
        kind,
        n_frames: 64,
        height: 32,
        width: 32,
        noise_std: 0.01,
        seed,
        ..SyntheticSpec::default()
    })
}

fn psnr(net: &mut InterpolationNetwork<f32>, test: &FrameSequence) -> dualcycle::Result<f64> {
    net.set_mode(Mode::Eval);
    let cap = test.capacity as f64;
    Ok(evaluate(network_predictor(net, NormStats::of(&test.frames)), test, cap, cap)?.mean_psnr)
}

fn main() -> dualcycle::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let source = [sequence(SyntheticKind::TranslateGaussian, seed)?];
    let target = [sequence(SyntheticKind::RotateField, seed + 200)?];
    let test = sequence(SyntheticKind::RotateField, seed + 2000)?;

    let mut net = build_network::<f32>(&NetConfig::desk(), seed)?;
    let pre_cfg = TrainConfig {
        seed,
        ..TrainConfig::desk_pretrain()
    };
    let pre = pretrain(&mut net, &source, &pre_cfg)?;
    println!("pretrained on translate_gaussian, best epoch {}", pre.best_epoch);
    println!("zero-shot on rotate_field: {:.3} dB", psnr(&mut net, &test)?);

    let cfg = TrainConfig {
        seed,
        sample_budget: Some(10),
        ..TrainConfig::desk_finetune()
    };
    let mut transfer = build_network::<f32>(&NetConfig::desk(), seed)?;
    finetune(&mut transfer, Some(&pre.checkpoint), &target, &cfg)?;
    let mut random = build_network::<f32>(&NetConfig::desk(), seed)?;
    finetune(&mut random, None, &target, &cfg)?;

    let cap = test.capacity as f64;
    let copy = evaluate(|q| Ok(trivial_copy_baseline(q)), &test, cap, cap)?.mean_psnr;
    println!("copy baseline:      {copy:.3} dB");
    println!("transfer-initialized: {:.3} dB", psnr(&mut transfer, &test)?);
    println!("random-initialized:   {:.3} dB", psnr(&mut random, &test)?);
    Ok(())
}

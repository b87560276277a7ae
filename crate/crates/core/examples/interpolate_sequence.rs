//! Briefly pretrain the desk network, then triple the frame rate of a
//! held-out sequence and check the originals survive untouched.
//!
//! cargo run --release --example interpolate_sequence -- [epochs]

use dualcycle::cli::interpolate_sequence;
use dualcycle::net::{build_network, Mode, NetConfig};
use dualcycle::seqdata::{analytic_frame, generate_synthetic, SyntheticKind, SyntheticSpec};
use dualcycle::train::{pretrain, TrainConfig};

fn main() -> dualcycle::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let spec = |seed: u64, n_frames: usize| SyntheticSpec {
        kind: SyntheticKind::TranslateGaussian,
        n_frames,
        center: Some((16.0, 16.0)),
        seed,
        ..SyntheticSpec::default()
    };
    let train = [generate_synthetic(&spec(0, 64))?];
    let mut net = build_network::<f32>(&NetConfig::desk(), 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::desk_pretrain()
    };
    pretrain(&mut net, &train, &cfg)?;
    net.set_mode(Mode::Eval);

    // Frames three steps apart, so the inserted frames land on whole steps.
    let fine = spec(5, 22);
    let coarse = generate_synthetic(&fine)?.subsample(3, 0);
    let dense = interpolate_sequence(&net, &coarse)?;
    println!("{} frames -> {} frames", coarse.n_frames(), dense.n_frames());
    for k in 0..coarse.n_frames() {
        assert_eq!(dense.frame(3 * k), coarse.frame(k));
    }
    for t in 0..dense.n_frames() {
        let truth = analytic_frame(&fine, t as f64)?;
        let err = (&dense.frame(t) - &truth).mapv(f32::abs).mean().unwrap_or(0.0);
        let tag = if t % 3 == 0 { "original" } else { "predicted" };
        println!("  frame {t:>2} {tag:<9} mean abs error {err:.4}");
    }
    Ok(())
}

//! Score the copy, nearest-endpoint and linear-blend predictors on every
//! synthetic kind and write one report CSV per pairing.
//!
//! cargo run --release --example evaluate_baselines -- [out_dir]

use dualcycle::metrics::{
    evaluate, linear_blend_oracle, nearest_endpoint_baseline, trivial_copy_baseline,
};
use dualcycle::net::FramePair;
use dualcycle::seqdata::{generate_synthetic, QuadrupleSample, SyntheticKind, SyntheticSpec};

type Predictor = fn(&QuadrupleSample) -> dualcycle::Result<FramePair>;

fn main() -> dualcycle::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&out)?;
    let predictors: [(&str, Predictor); 3] = [
        ("copy", |q| Ok(trivial_copy_baseline(q))),
        ("nearest", |q| Ok(nearest_endpoint_baseline(q))),
        ("blend", |q| linear_blend_oracle(&q.in_a, &q.in_b)),
    ];
    println!("{:<20} {:<8} {:>10} {:>8} {:>10}", "data", "model", "PSNR dB", "SSIM", "SI");
    for kind in SyntheticKind::ALL {
        let seq = generate_synthetic(&SyntheticSpec {
            kind,
            n_frames: 32,
            seed: 1,
            ..SyntheticSpec::default()
        })?;
        let cap = seq.capacity as f64;
        for (name, p) in predictors {
            let report = evaluate(p, &seq, cap, cap)?.named(name, kind.name());
            report.write_csv(out.join(format!("{kind}_{name}.csv")))?;
            println!(
                "{:<20} {:<8} {:>10.3} {:>8.4} {:>10.2e}",
                kind.name(),
                name,
                report.mean_psnr,
                report.mean_ssim,
                report.mean_scatter_index
            );
        }
    }
    println!("reports in {}", out.display());
    Ok(())
}

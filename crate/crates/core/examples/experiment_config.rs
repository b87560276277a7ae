//! Load the bundled desk configuration, apply overrides the way the CLI
//! does, and print the resolved document.
//!
//! cargo run --release --example experiment_config

use dualcycle::config::ExperimentConfig;

fn main() -> dualcycle::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/desk.toml");
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.set_seed(42);
    cfg.finetune.loss_weights.gamma_cc1 = 0.25;
    cfg.validate()?;
    print!("{}", cfg.to_toml_string());

    let data = cfg.data.load(std::path::Path::new("."))?;
    println!("# data: {} frames of {}x{}", data.n_frames(), data.height(), data.width());

    match ExperimentConfig::from_toml_str("[pretrain]\nlearning_rate = 0.1\n") {
        Err(e) => println!("# unknown keys are rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

//! Build the desk and full-scale networks and list their parameter tensors.
//!
//! cargo run --release --example network_summary

use dualcycle::net::{build_network, NetConfig};

fn main() -> dualcycle::Result<()> {
    for (name, cfg) in [("desk", NetConfig::desk()), ("full_scale", NetConfig::full_scale())] {
        let net = build_network::<f32>(&cfg, 0)?;
        println!("{name}: {cfg:?}");
        println!("  learnable parameters: {}", net.count_parameters());
        println!("  running-statistic buffers: {}", net.buffers().len());
        if name == "desk" {
            for seg in net.params().segments() {
                println!("    {:<28} {:?}", seg.name, seg.shape);
            }
        }
    }
    Ok(())
}

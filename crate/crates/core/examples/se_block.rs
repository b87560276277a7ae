//! Squeeze-and-excitation gating on a feature map whose channels carry
//! different energy.
//!
//! cargo run --release --example se_block

use dualcycle::net::{bottleneck_width, se_forward, SeWeights};
use ndarray::Array4;

fn main() -> dualcycle::Result<()> {
    let (channels, reduction) = (8, 4);
    let features = Array4::from_shape_fn((channels, 2, 6, 6), |(c, t, i, j)| {
        (c as f64 + 1.0) * 0.1 * ((i + j + t) as f64).sin()
    });
    println!("bottleneck width: {}", bottleneck_width(channels, reduction)?);

    let zero = SeWeights::<f64>::zeros(channels, reduction)?;
    let (_, gates) = se_forward(features.view(), reduction, &zero)?;
    println!("zero weights   -> gates {:?}", gates.to_vec());

    let random = SeWeights::<f64>::random(channels, reduction, 3)?;
    let (scaled, gates) = se_forward(features.view(), reduction, &random)?;
    println!("random weights -> gates {:.3?}", gates.to_vec());
    let ratio = scaled[[7, 0, 1, 1]] / features[[7, 0, 1, 1]];
    println!("channel 7 rescaled by {ratio:.4} (gate {:.4})", gates[7]);
    Ok(())
}

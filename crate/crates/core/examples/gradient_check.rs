//! Compare the analytic gradient of the combined cycle loss with central
//! finite differences on a tiny double-precision network.
//!
//! cargo run --release --example gradient_check

use dualcycle::cycle::{combined_loss_backward, combined_loss_value, LossWeights};
use dualcycle::net::{build_network, Mode, NetConfig};
use ndarray::{Array, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dualcycle::Result<()> {
    let cfg = NetConfig {
        in_channels: 1,
        base_width: 4,
        depth: 2,
        se_reduction: 2,
        use_batchnorm: true,
    };
    let mut net = build_network::<f64>(&cfg, 1)?;
    net.set_mode(Mode::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: [Array4<f64>; 3] =
        std::array::from_fn(|_| Array::from_shape_fn((2, 1, 8, 8), |_| rng.random_range(-1.0..1.0)));
    let w = LossWeights::default();

    let mut grads = net.zero_grads();
    let mut scratch = net.clone();
    let losses = combined_loss_backward(&mut scratch, x[0].view(), x[1].view(), x[2].view(), &w, &mut grads)?;
    println!("{} parameters, losses {losses:?}", net.count_parameters());

    let eps = 1e-5;
    let mut worst = (0.0, String::new());
    for seg in net.params().segments().to_vec() {
        let mut seg_worst: f64 = 0.0;
        for i in seg.range() {
            let orig = net.params().values()[i];
            net.params_mut().values_mut()[i] = orig + eps;
            let up = combined_loss_value(&net, x[0].view(), x[1].view(), x[2].view(), &w)?.combined;
            net.params_mut().values_mut()[i] = orig - eps;
            let down = combined_loss_value(&net, x[0].view(), x[1].view(), x[2].view(), &w)?.combined;
            net.params_mut().values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-12);
            seg_worst = seg_worst.max(rel);
        }
        println!("  {:<26} max relative error {seg_worst:.2e}", seg.name);
        if seg_worst > worst.0 {
            worst = (seg_worst, seg.name.clone());
        }
    }
    println!("worst: {:.2e} in {}", worst.0, worst.1);
    Ok(())
}

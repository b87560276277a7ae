//! Central finite differences against the analytic gradient of the combined
//! cycle loss, through every network call of both stages.

use dualcycle::cycle::{combined_loss_backward, combined_loss_value, LossWeights};
use dualcycle::net::{build_network, InterpolationNetwork, Mode, NetConfig};
use ndarray::{Array, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(use_batchnorm: bool) -> NetConfig {
    NetConfig {
        in_channels: 1,
        base_width: 4,
        depth: 2,
        se_reduction: 2,
        use_batchnorm,
    }
}

fn triplet(seed: u64, n: usize) -> [Array4<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| Array::from_shape_fn((n, 1, 8, 8), |_| rng.random_range(-1.0..1.0)))
}

struct Probe {
    analytic: f64,
    central: f64,
    forward: f64,
    backward: f64,
}

fn probe_all(net: &InterpolationNetwork<f64>, x: &[Array4<f64>; 3], eps: f64) -> Vec<Probe> {
    let w = LossWeights::default();
    let mut analytic = net.zero_grads();
    let mut scratch = net.clone();
    combined_loss_backward(&mut scratch, x[0].view(), x[1].view(), x[2].view(), &w, &mut analytic).unwrap();

    let loss = |n: &InterpolationNetwork<f64>| {
        combined_loss_value(n, x[0].view(), x[1].view(), x[2].view(), &w)
            .unwrap()
            .combined
    };
    let mut probe = net.clone();
    let base = loss(&probe);
    (0..probe.count_parameters())
        .map(|i| {
            let orig = probe.params().values()[i];
            probe.params_mut().values_mut()[i] = orig + eps;
            let up = loss(&probe);
            probe.params_mut().values_mut()[i] = orig - eps;
            let down = loss(&probe);
            probe.params_mut().values_mut()[i] = orig;
            Probe {
                analytic: analytic[i],
                central: (up - down) / (2.0 * eps),
                forward: (up - base) / eps,
                backward: (base - down) / eps,
            }
        })
        .collect()
}

fn rel(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

#[test]
fn tiny_network_is_small_enough() {
    let net = build_network::<f64>(&tiny(true), 0).unwrap();
    assert!(net.count_parameters() <= 5000, "{}", net.count_parameters());
}

#[test]
fn combined_loss_gradient_matches_central_differences() {
    let mut net = build_network::<f64>(&tiny(true), 1).unwrap();
    net.set_mode(Mode::Train);
    let x = triplet(101, 2);
    let worst = probe_all(&net, &x, 1e-5)
        .iter()
        .map(|p| rel(p.analytic, p.central, 1e-12))
        .fold(0.0, f64::max);
    println!("max relative error {worst:.3e}");
    assert!(worst < 1e-4, "{worst}");
}

/// Without normalization the loss has many more active rectifier and
/// absolute-value kinks near the probe point. A step that crosses one
/// invalidates the central difference but leaves the one-sided difference
/// on the smooth side intact, so the best of the three estimates is used.
#[test]
fn gradient_without_batchnorm_matches_kink_aware_differences() {
    let mut net = build_network::<f64>(&tiny(false), 2).unwrap();
    net.set_mode(Mode::Train);
    let x = triplet(102, 2);
    let probes = probe_all(&net, &x, 1e-5);
    let worst = probes
        .iter()
        .map(|p| {
            [p.central, p.forward, p.backward]
                .into_iter()
                .map(|n| rel(p.analytic, n, 1e-6))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let central_ok = probes
        .iter()
        .filter(|p| rel(p.analytic, p.central, 1e-6) < 1e-4)
        .count();
    println!("max relative error {worst:.3e}; central agrees on {central_ok}/{}", probes.len());
    assert!(worst < 1e-4, "{worst}");
    assert!(central_ok * 100 >= probes.len() * 99);
}

//! The dual cycle losses of three hand-written interpolators on the scalar
//! triplet (0, 2, 4).
//!
//! cargo run --release --example cycle_losses

use dualcycle::cycle::{cc1_loss, cc2_loss, combined_loss, dual_cycle_batch, LossWeights};
use ndarray::{Array, Array4, ArrayView4};

type Model = fn(ArrayView4<f64>, ArrayView4<f64>) -> (Array4<f64>, Array4<f64>);

fn endpoints(a: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    (a.to_owned(), b.to_owned())
}

fn thirds(a: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    let d = &b - &a;
    (&a + &(&d / 3.0), &a + &(&d * (2.0 / 3.0)))
}

fn later(_: ArrayView4<f64>, b: ArrayView4<f64>) -> (Array4<f64>, Array4<f64>) {
    (b.to_owned(), b.to_owned())
}

fn main() -> dualcycle::Result<()> {
    let scalar = |v: f64| Array::from_elem((1, 1, 1, 1), v);
    let (i0, i1, i2) = (scalar(0.0), scalar(2.0), scalar(4.0));
    let w = LossWeights::default();
    let models: [(&str, Model); 3] = [
        ("copy endpoints (a, b)", endpoints),
        ("linear thirds", thirds),
        ("later frame (b, b)", later),
    ];
    println!("{:<24} {:>8} {:>8} {:>9}", "model", "cc1", "cc2", "combined");
    for (name, model) in models {
        let sp = dual_cycle_batch(&model, i0.view(), i1.view(), i2.view())?;
        let stage1: Vec<f64> = sp.stage1.frames().iter().map(|f| f[[0, 0, 0, 0]]).collect();
        let stage2: Vec<f64> = sp.stage2.frames().iter().map(|f| f[[0, 0, 0, 0]]).collect();
        println!(
            "{name:<24} {:>8.4} {:>8.4} {:>9.4}   stage 1 {stage1:?}  stage 2 {stage2:?}",
            cc1_loss(&sp, &i1),
            cc2_loss(&sp),
            combined_loss(&sp, &i1, &w)
        );
    }
    Ok(())
}

//! Frame-quality metrics on `C × H × W` frames, accumulated in `f64`.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(pred: &ArrayView3<f32>, reference: &ArrayView3<f32>) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(Error::shape(reference.dim(), pred.dim()));
    }
    Ok(())
}

pub fn mse(pred: ArrayView3<f32>, reference: ArrayView3<f32>) -> Result<f64> {
    same_shape(&pred, &reference)?;
    let n = pred.len().max(1) as f64;
    Ok(Zip::from(&pred).and(&reference).fold(0.0, |acc, &p, &r| {
        let d = p as f64 - r as f64;
        acc + d * d
    }) / n)
}

/// Peak signal-to-noise ratio in dB. Identical frames give
/// `f64::INFINITY`.
pub fn psnr(pred: ArrayView3<f32>, reference: ArrayView3<f32>, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data_range must be positive, got {data_range}")));
    }
    let m = mse(pred, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Mean squared error divided by the data capacity.
pub fn scatter_index(pred: ArrayView3<f32>, reference: ArrayView3<f32>, capacity: f64) -> Result<f64> {
    if !(capacity > 0.0) {
        return Err(Error::Config(format!("capacity must be positive, got {capacity}")));
    }
    Ok(mse(pred, reference)? / capacity)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - r;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable Gaussian filter keeping only positions where the window fits.
fn filter_valid(x: &Array2<f64>, taps: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = SSIM_WINDOW;
    let mut rows = Array2::<f64>::zeros((h, w - k + 1));
    for i in 0..h {
        for j in 0..w - k + 1 {
            rows[[i, j]] = (0..k).map(|t| taps[t] * x[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h - k + 1, w - k + 1));
    for i in 0..h - k + 1 {
        for j in 0..w - k + 1 {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum();
        }
    }
    out
}

fn ssim_channel(x: ArrayView2<f32>, y: ArrayView2<f32>, data_range: f64) -> f64 {
    let taps = gaussian_taps();
    let x = x.mapv(|v| v as f64);
    let y = y.mapv(|v| v as f64);
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let mxx = filter_valid(&(&x * &x), &taps);
    let myy = filter_valid(&(&y * &y), &taps);
    let mxy = filter_valid(&(&x * &y), &taps);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    let n = mx.len() as f64;
    for ((((&ux, &uy), &sxx), &syy), &sxy) in mx.iter().zip(&my).zip(&mxx).zip(&myy).zip(&mxy) {
        let vx = sxx - ux * ux;
        let vy = syy - uy * uy;
        let cov = sxy - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / n
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// population statistics, averaged over the positions where the window
/// fits and then over channels.
pub fn ssim(pred: ArrayView3<f32>, reference: ArrayView3<f32>, data_range: f64) -> Result<f64> {
    same_shape(&pred, &reference)?;
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data_range must be positive, got {data_range}")));
    }
    let (c, h, w) = pred.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let total: f64 = (0..c)
        .map(|ch| {
            ssim_channel(
                pred.index_axis(Axis(0), ch),
                reference.index_axis(Axis(0), ch),
                data_range,
            )
        })
        .sum();
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn field(h: usize, w: usize) -> Array3<f32> {
        Array3::from_shape_fn((1, h, w), |(_, i, j)| {
            ((0.3 * i as f64).sin() + (0.2 * j as f64).cos()) as f32
        })
    }

    #[test]
    fn psnr_closed_forms() {
        let r = Array3::<f32>::zeros((1, 4, 4));
        assert_eq!(psnr(r.view(), r.view(), 1.0).unwrap(), f64::INFINITY);
        let p = r.mapv(|_| 0.1);
        assert!((psnr(p.view(), r.view(), 1.0).unwrap() - 20.0).abs() < 1e-6);
        let half = Array3::from_shape_fn((1, 4, 4), |(_, i, _)| if i < 2 { 0.2f32 } else { 0.0 });
        let want = 10.0 * (1.0f64 / (0.2f32 as f64).powi(2) * 2.0).log10();
        assert!((psnr(half.view(), r.view(), 1.0).unwrap() - want).abs() < 1e-9);
        assert!((want - 16.9897).abs() < 1e-4);
    }

    #[test]
    fn psnr_strictly_decreasing_in_error() {
        let r = Array3::<f32>::zeros((1, 4, 4));
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let p = r.mapv(|_| 0.05 * k as f32);
            let v = psnr(p.view(), r.view(), 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ssim_closed_forms() {
        let x = field(16, 16);
        assert!((ssim(x.view(), x.view(), 2.0).unwrap() - 1.0).abs() < 1e-9);
        let zeros = Array3::<f32>::zeros((1, 12, 12));
        let ones = Array3::<f32>::ones((1, 12, 12));
        let c1 = 1e-4;
        let got = ssim(zeros.view(), ones.view(), 1.0).unwrap();
        assert!((got - c1 / (1.0 + c1)).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_frozen_reference() {
        // Same construction evaluated with scikit-image 0.2x:
        // structural_similarity(x, y, data_range=4, gaussian_weights=True,
        // sigma=1.5, use_sample_covariance=False) = 0.9799188380688187
        let x = Array3::from_shape_fn((1, 24, 20), |(_, i, j)| {
            (0.3 * i as f64).sin() + (0.2 * j as f64).cos()
        });
        let y = Array3::from_shape_fn((1, 24, 20), |(_, i, j)| {
            x[[0, i, j]] + 0.1 * (0.7 * (i * j) as f64).sin()
        });
        let (x, y) = (x.mapv(|v| v as f32), y.mapv(|v| v as f32));
        let got = ssim(x.view(), y.view(), 4.0).unwrap();
        assert!((got - 0.9799188380688187).abs() < 1e-6, "{got}");
        assert_eq!(got, ssim(y.view(), x.view(), 4.0).unwrap());
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let x = Array3::<f32>::zeros((1, 10, 16));
        assert!(ssim(x.view(), x.view(), 1.0).is_err());
    }

    #[test]
    fn scatter_index_closed_forms() {
        let r = Array3::<f32>::zeros((1, 2, 2));
        assert_eq!(scatter_index(r.view(), r.view(), 5.0).unwrap(), 0.0);
        let p = Array3::from_shape_fn((1, 2, 2), |(_, i, _)| i as f32);
        assert_eq!(mse(p.view(), r.view()).unwrap(), 0.5);
        assert_eq!(scatter_index(p.view(), r.view(), 5.0).unwrap(), 0.1);
        let p = Array3::from_elem((1, 2, 2), 0.2f32);
        assert!((scatter_index(p.view(), r.view(), 2.0).unwrap() - 0.02).abs() < 1e-8);
        assert!(scatter_index(r.view(), r.view(), 0.0).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = Array3::<f32>::zeros((1, 2, 2));
        let b = Array3::<f32>::zeros((1, 2, 3));
        assert!(psnr(a.view(), b.view(), 1.0).is_err());
    }
}

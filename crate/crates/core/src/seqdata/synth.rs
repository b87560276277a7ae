//! Synthetic spatiotemporal sequences with known kinematics.
//!
//! Every generator is a pure function of its [`SyntheticSpec`]. Blob-based
//! kinds live on a periodic domain so content never leaves the frame; the
//! `translate_ramp` kind is affine in time at every pixel, which makes the
//! linear blend of two frames an exact interpolant.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sequence::{capacity_of, FrameSequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// A Gaussian blob advected at constant velocity.
    TranslateGaussian,
    /// Several blobs orbiting the domain center.
    RotateField,
    /// A drifting blob whose width grows as under linear diffusion.
    DiffuseBlob,
    /// Blobs sheared horizontally in proportion to their row offset.
    ShearDeform,
    /// An affine intensity ramp advected at constant velocity.
    TranslateRamp,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 5] = [
        SyntheticKind::TranslateGaussian,
        SyntheticKind::RotateField,
        SyntheticKind::DiffuseBlob,
        SyntheticKind::ShearDeform,
        SyntheticKind::TranslateRamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::TranslateGaussian => "translate_gaussian",
            SyntheticKind::RotateField => "rotate_field",
            SyntheticKind::DiffuseBlob => "diffuse_blob",
            SyntheticKind::ShearDeform => "shear_deform",
            SyntheticKind::TranslateRamp => "translate_ramp",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown synthetic kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Pixels per frame, `(vx, vy)` with x along columns.
    pub velocity: (f64, f64),
    /// Radians per frame.
    pub angular_rate: f64,
    /// Squared pixels per frame.
    pub diffusion_rate: f64,
    /// Horizontal displacement per row offset per frame.
    pub shear_rate: f64,
    pub blob_sigma: f64,
    /// Initial blob center `(x, y)`; drawn from the seed when absent.
    pub center: Option<(f64, f64)>,
    pub noise_std: f64,
    pub seed: u64,
    pub dt_label: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::TranslateGaussian,
            n_frames: 64,
            height: 32,
            width: 32,
            channels: 1,
            velocity: (1.0, 0.5),
            angular_rate: 0.1,
            diffusion_rate: 0.25,
            shear_rate: 0.05,
            blob_sigma: 3.0,
            center: None,
            noise_std: 0.0,
            seed: 0,
            dt_label: "1-step".to_string(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_frames < 4 {
            return bad(format!("n_frames must be ≥ 4, got {}", self.n_frames));
        }
        for (name, v) in [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
        ] {
            if v < 1 {
                return bad(format!("{name} must be ≥ 1, got {v}"));
            }
        }
        for (name, v) in [
            ("velocity.x", self.velocity.0),
            ("velocity.y", self.velocity.1),
            ("angular_rate", self.angular_rate),
            ("diffusion_rate", self.diffusion_rate),
            ("shear_rate", self.shear_rate),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(self.blob_sigma.is_finite() && self.blob_sigma > 0.0) {
            return bad(format!("blob_sigma must be positive, got {}", self.blob_sigma));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be ≥ 0, got {}", self.noise_std));
        }
        if self.diffusion_rate < 0.0 {
            return bad(format!(
                "diffusion_rate must be ≥ 0, got {}",
                self.diffusion_rate
            ));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if let Some((x, y)) = self.center {
            if !(x.is_finite() && y.is_finite()) {
                return bad("center must be finite".to_string());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    x: f64,
    y: f64,
    amplitude: f64,
}

/// Shortest signed offset on a periodic axis of length `period`.
fn wrap(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

fn gaussian(dx: f64, dy: f64, sigma2: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * sigma2)).exp()
}

/// Analytic field of `spec` at (possibly fractional) time `t` for one channel.
struct Field<'a> {
    spec: &'a SyntheticSpec,
    blobs: Vec<Blob>,
}

impl Field<'_> {
    fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        let spec = self.spec;
        let (w, h) = (spec.width as f64, spec.height as f64);
        let sigma2 = spec.blob_sigma * spec.blob_sigma;
        let (vx, vy) = spec.velocity;
        match spec.kind {
            SyntheticKind::TranslateGaussian => self
                .blobs
                .iter()
                .map(|b| {
                    let dx = wrap(x - (b.x + vx * t), w);
                    let dy = wrap(y - (b.y + vy * t), h);
                    b.amplitude * gaussian(dx, dy, sigma2)
                })
                .sum(),
            SyntheticKind::RotateField => {
                let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
                let (sin, cos) = (spec.angular_rate * t).sin_cos();
                self.blobs
                    .iter()
                    .map(|b| {
                        let (ox, oy) = (b.x - cx, b.y - cy);
                        let bx = cx + cos * ox - sin * oy;
                        let by = cy + sin * ox + cos * oy;
                        b.amplitude * gaussian(x - bx, y - by, sigma2)
                    })
                    .sum()
            }
            SyntheticKind::DiffuseBlob => {
                let spread = sigma2 + 2.0 * spec.diffusion_rate * t;
                self.blobs
                    .iter()
                    .map(|b| {
                        let dx = wrap(x - (b.x + vx * t), w);
                        let dy = wrap(y - (b.y + vy * t), h);
                        b.amplitude * (sigma2 / spread) * gaussian(dx, dy, spread)
                    })
                    .sum()
            }
            SyntheticKind::ShearDeform => {
                let cy = (h - 1.0) / 2.0;
                let xs = x - spec.shear_rate * t * (y - cy);
                self.blobs
                    .iter()
                    .map(|b| b.amplitude * gaussian(wrap(xs - b.x, w), y - b.y, sigma2))
                    .sum()
            }
            SyntheticKind::TranslateRamp => {
                let b = self.blobs[0];
                let gx = 1.0 / w;
                let gy = 0.5 / h;
                b.amplitude * (1.0 + gx * (x - b.x - vx * t) + gy * (y - b.y - vy * t))
            }
        }
    }
}

fn draw_blobs(spec: &SyntheticSpec, channel: usize, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let scale = 1.0 / (1.0 + channel as f64);
    let center = spec.center;
    let first = |rng: &mut ChaCha8Rng| match center {
        Some((x, y)) => (x, y),
        None => (rng.random_range(0.0..w), rng.random_range(0.0..h)),
    };
    match spec.kind {
        SyntheticKind::TranslateGaussian | SyntheticKind::DiffuseBlob => {
            let (x, y) = first(rng);
            vec![Blob {
                x,
                y,
                amplitude: scale,
            }]
        }
        SyntheticKind::TranslateRamp => {
            let (x, y) = center.unwrap_or(((w - 1.0) / 2.0, (h - 1.0) / 2.0));
            vec![Blob {
                x,
                y,
                amplitude: scale,
            }]
        }
        SyntheticKind::RotateField => {
            let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
            let radius = w.min(h);
            (0..3)
                .map(|k| {
                    let r = rng.random_range(0.15..0.35) * radius;
                    let phi = 2.0 * PI * (k as f64) / 3.0 + rng.random_range(-0.3..0.3);
                    Blob {
                        x: cx + r * phi.cos(),
                        y: cy + r * phi.sin(),
                        amplitude: scale * rng.random_range(0.5..1.0),
                    }
                })
                .collect()
        }
        SyntheticKind::ShearDeform => (0..3)
            .map(|_| Blob {
                x: rng.random_range(0.0..w),
                y: rng.random_range(0.2 * h..0.8 * h),
                amplitude: scale * rng.random_range(0.5..1.0),
            })
            .collect(),
    }
}

/// Evaluate the noise-free field of `spec` at time `t`, as a `C × H × W`
/// frame. Fractional times give the analytic ground truth between frames.
pub fn analytic_frame(spec: &SyntheticSpec, t: f64) -> Result<ndarray::Array3<f32>> {
    spec.validate()?;
    let fields = fields_for(spec);
    Ok(ndarray::Array3::from_shape_fn(
        (spec.channels, spec.height, spec.width),
        |(c, y, x)| fields[c].value(t, x as f64, y as f64) as f32,
    ))
}

fn fields_for(spec: &SyntheticSpec) -> Vec<Field<'_>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.channels)
        .map(|c| Field {
            spec,
            blobs: draw_blobs(spec, c, &mut rng),
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let fields = fields_for(spec);
    let mut frames = Array4::from_shape_fn(
        (spec.n_frames, spec.channels, spec.height, spec.width),
        |(t, c, y, x)| fields[c].value(t as f64, x as f64, y as f64) as f32,
    );
    if spec.noise_std > 0.0 {
        // Separate stream so noise does not perturb the pattern draw.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
        frames.mapv_inplace(|v| v + normal.sample(&mut rng) as f32);
    }
    let capacity = capacity_of(&frames);
    let mut seq = FrameSequence::new(frames, capacity, spec.dt_label.clone())?;
    seq.seed = Some(spec.seed);
    Ok(seq)
}

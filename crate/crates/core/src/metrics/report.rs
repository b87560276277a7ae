use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;

use super::quality::{psnr, scatter_index, ssim};
use crate::error::{Error, Result};
use crate::net::{FramePair, InterpolationNetwork, Mode};
use crate::seqdata::{make_quadruples, write_atomic, FrameSequence, NormStats, QuadrupleSample};

/// Forward replication of the earlier input: `(A, A)`.
pub fn trivial_copy_baseline(q: &QuadrupleSample) -> FramePair {
    FramePair {
        f1: q.in_a.clone(),
        f2: q.in_a.clone(),
    }
}

/// Each target copies its nearest input: `(A, B)`.
pub fn nearest_endpoint_baseline(q: &QuadrupleSample) -> FramePair {
    FramePair {
        f1: q.in_a.clone(),
        f2: q.in_b.clone(),
    }
}

/// Pixelwise linear interpolation at one and two thirds.
pub fn linear_blend_oracle(in_a: &Array3<f32>, in_b: &Array3<f32>) -> Result<FramePair> {
    if in_a.dim() != in_b.dim() {
        return Err(Error::shape(in_a.dim(), in_b.dim()));
    }
    let d = in_b - in_a;
    Ok(FramePair {
        f1: in_a + &(&d / 3.0),
        f2: in_a + &(&d * (2.0 / 3.0)),
    })
}

/// Predictor running a trained network on raw frames: inputs are
/// normalized with `stats` and outputs mapped back.
pub fn network_predictor<'a>(
    net: &'a InterpolationNetwork<f32>,
    stats: NormStats,
) -> impl FnMut(&QuadrupleSample) -> Result<FramePair> + 'a {
    assert_eq!(net.mode(), Mode::Eval, "network_predictor expects an eval-mode network");
    move |q| {
        let mut a = q.in_a.clone();
        let mut b = q.in_b.clone();
        stats.apply(a.view_mut());
        stats.apply(b.view_mut());
        let mut out = net.interpolate(&FramePair { f1: a, f2: b })?;
        stats.invert(out.f1.view_mut());
        stats.invert(out.f2.view_mut());
        Ok(out)
    }
}

/// Scores of one predicted frame. `frame_slot` is 1 for the earlier
/// target and 2 for the later one.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub sample_index: usize,
    pub frame_slot: u8,
    pub psnr_db: f64,
    pub ssim: f64,
    pub scatter_index: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model_id: String,
    pub dataset_id: String,
    pub n_samples: usize,
    pub per_sample: Vec<SampleMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_scatter_index: f64,
}

pub const REPORT_HEADER: &str = "sample_index,frame_slot,psnr_db,ssim,scatter_index";

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricsReport {
    pub fn from_samples(model_id: impl Into<String>, dataset_id: impl Into<String>, per_sample: Vec<SampleMetrics>) -> Self {
        let n = per_sample.len().max(1) as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            n_samples: per_sample.len() / 2,
            mean_psnr: mean(|s| s.psnr_db),
            mean_ssim: mean(|s| s.ssim),
            mean_scatter_index: mean(|s| s.scatter_index),
            per_sample,
        }
    }

    pub fn named(mut self, model_id: impl Into<String>, dataset_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self.dataset_id = dataset_id.into();
        self
    }

    /// Header, one row per predicted frame, then a `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for s in &self.per_sample {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.sample_index,
                s.frame_slot,
                fmt_value(s.psnr_db),
                fmt_value(s.ssim),
                fmt_value(s.scatter_index)
            );
        }
        let _ = writeln!(
            out,
            "MEAN,,{},{},{}",
            fmt_value(self.mean_psnr),
            fmt_value(self.mean_ssim),
            fmt_value(self.mean_scatter_index)
        );
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Score `predict` on every quadruple of `seq` (stride 1). Frames are
/// compared in the sequence's own units, so `seq` must not be normalized.
pub fn evaluate<F>(mut predict: F, seq: &FrameSequence, data_range: f64, capacity: f64) -> Result<MetricsReport>
where
    F: FnMut(&QuadrupleSample) -> Result<FramePair>,
{
    if seq.norm_stats.is_some() {
        return Err(Error::Config("evaluate expects an unnormalized sequence".into()));
    }
    let quads = make_quadruples(seq, 1);
    if quads.is_empty() {
        return Err(Error::EmptyData(format!(
            "sequence of {} frames has no quadruples",
            seq.n_frames()
        )));
    }
    let mut rows = Vec::with_capacity(2 * quads.len());
    for q in &quads {
        let pred = predict(q)?;
        for (slot, p, g) in [(1u8, &pred.f1, &q.gt_1), (2, &pred.f2, &q.gt_2)] {
            rows.push(SampleMetrics {
                sample_index: q.index,
                frame_slot: slot,
                psnr_db: psnr(p.view(), g.view(), data_range)?,
                ssim: ssim(p.view(), g.view(), data_range)?,
                scatter_index: scatter_index(p.view(), g.view(), capacity)?,
            });
        }
    }
    Ok(MetricsReport::from_samples("unnamed", "unnamed", rows))
}

/// Per-pixel mean absolute error between two frames.
pub fn frame_mae(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / n
}

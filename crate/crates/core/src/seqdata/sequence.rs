use ndarray::{s, Array4, ArrayView3, ArrayViewMut3, Axis};

use crate::error::{Error, Result};

/// Floor applied to per-channel standard deviations during normalization.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics of every channel over all frames and pixels.
    pub fn of(frames: &Array4<f32>) -> Self {
        let channels = frames.len_of(Axis(1));
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for c in 0..channels {
            let lane = frames.index_axis(Axis(1), c);
            let n = lane.len() as f64;
            let m = lane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = lane.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        NormStats { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes a single `C × H × W` frame in place.
    pub fn apply(&self, mut frame: ArrayViewMut3<f32>) {
        for (c, mut plane) in frame.axis_iter_mut(Axis(0)).enumerate() {
            let (m, sd) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| ((v as f64 - m) / sd) as f32);
        }
    }

    /// Inverse of [`NormStats::apply`].
    pub fn invert(&self, mut frame: ArrayViewMut3<f32>) {
        for (c, mut plane) in frame.axis_iter_mut(Axis(0)).enumerate() {
            let (m, sd) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| (v as f64 * sd + m) as f32);
        }
    }
}

/// An ordered stack of frames laid out as `N × C × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Array4<f32>,
    /// Maximum value of the physical variable; normalizes the scatter index
    /// and sets the metric data range.
    pub capacity: f32,
    /// Temporal-resolution label, e.g. `"3-hourly"`.
    pub dt_label: String,
    /// Present when `frames` hold z-scored values.
    pub norm_stats: Option<NormStats>,
    /// Generator seed, when the sequence is synthetic.
    pub seed: Option<u64>,
}

impl FrameSequence {
    pub fn new(frames: Array4<f32>, capacity: f32, dt_label: impl Into<String>) -> Result<Self> {
        let seq = FrameSequence {
            frames,
            capacity,
            dt_label: dt_label.into(),
            norm_stats: None,
            seed: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Builds a sequence whose capacity is the maximum of `frames`.
    pub fn from_frames(frames: Array4<f32>, dt_label: impl Into<String>) -> Result<Self> {
        let capacity = capacity_of(&frames);
        Self::new(frames, capacity, dt_label)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, h, w) = self.frames.dim();
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!(
                "sequence dimensions must be at least 1, got {n}x{c}x{h}x{w}"
            )));
        }
        if let Some(i) = self.frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!("non-finite value at flat index {i}")));
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "capacity must be positive, got {}",
                self.capacity
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn channels(&self) -> usize {
        self.frames.len_of(Axis(1))
    }

    pub fn height(&self) -> usize {
        self.frames.len_of(Axis(2))
    }

    pub fn width(&self) -> usize {
        self.frames.len_of(Axis(3))
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, f32> {
        self.frames.index_axis(Axis(0), i)
    }

    /// Every `factor`-th frame starting at `phase`.
    pub fn subsample(&self, factor: usize, phase: usize) -> FrameSequence {
        assert!(factor >= 1 && phase < factor, "invalid subsample {factor}/{phase}");
        let frames = self.frames.slice(s![phase..;factor, .., .., ..]).to_owned();
        let dt_label = if factor == 1 {
            self.dt_label.clone()
        } else {
            format!("{}x{}", self.dt_label, factor)
        };
        FrameSequence {
            frames,
            dt_label,
            ..self.clone()
        }
    }

    /// Frames `start..end`, keeping capacity and provenance.
    pub fn slice_frames(&self, start: usize, end: usize) -> FrameSequence {
        FrameSequence {
            frames: self.frames.slice(s![start..end, .., .., ..]).to_owned(),
            ..self.clone()
        }
    }
}

/// Maximum value of the data, falling back to the largest magnitude (or 1)
/// when nothing is positive.
pub fn capacity_of(frames: &Array4<f32>) -> f32 {
    let max = frames.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max > 0.0 {
        return max;
    }
    let mag = frames.iter().map(|v| v.abs()).fold(0.0, f32::max);
    if mag > 0.0 {
        mag
    } else {
        1.0
    }
}

/// Per-channel z-score using the sequence's own statistics.
pub fn normalize(seq: &FrameSequence) -> FrameSequence {
    let stats = NormStats::of(&seq.frames);
    let mut frames = seq.frames.clone();
    for frame in frames.axis_iter_mut(Axis(0)) {
        stats.apply(frame);
    }
    FrameSequence {
        frames,
        norm_stats: Some(stats),
        ..seq.clone()
    }
}

/// Undo [`normalize`]; a sequence without stats is returned unchanged.
pub fn denormalize(seq: &FrameSequence) -> FrameSequence {
    let Some(stats) = &seq.norm_stats else {
        return seq.clone();
    };
    let mut frames = seq.frames.clone();
    for frame in frames.axis_iter_mut(Axis(0)) {
        stats.invert(frame);
    }
    FrameSequence {
        frames,
        norm_stats: None,
        ..seq.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp(n: usize) -> FrameSequence {
        let frames = Array::from_shape_fn((n, 2, 4, 5), |(t, c, y, x)| {
            (t as f32) * 0.5 + (c as f32) * 3.0 + (y * 5 + x) as f32 * 0.1
        });
        FrameSequence::from_frames(frames, "step").unwrap()
    }

    #[test]
    fn normalize_gives_zero_mean_unit_std() {
        let seq = normalize(&ramp(6));
        let stats = NormStats::of(&seq.frames);
        for c in 0..2 {
            assert!(stats.mean[c].abs() < 1e-5, "mean {}", stats.mean[c]);
            assert!((stats.std[c] - 1.0).abs() < 1e-4, "std {}", stats.std[c]);
        }
    }

    #[test]
    fn constant_sequence_normalizes_to_zero() {
        let frames = Array4::from_elem((4, 1, 3, 3), 2.5f32);
        let seq = normalize(&FrameSequence::from_frames(frames, "c").unwrap());
        assert!(seq.frames.iter().all(|&v| v == 0.0));
        assert_eq!(seq.norm_stats.as_ref().unwrap().std[0], STD_FLOOR);
    }

    #[test]
    fn denormalize_roundtrip() {
        let seq = ramp(7);
        let back = denormalize(&normalize(&seq));
        let dev = back
            .frames
            .iter()
            .zip(seq.frames.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(dev < 1e-5 * seq.capacity, "deviation {dev}");
        assert!(back.norm_stats.is_none());
    }

    #[test]
    fn capacity_is_data_max() {
        let seq = ramp(3);
        let max = seq.frames.iter().copied().fold(f32::MIN, f32::max);
        assert_eq!(seq.capacity, max);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(FrameSequence::from_frames(Array4::zeros((0, 1, 2, 2)), "x").is_err());
        let mut frames = Array4::<f32>::ones((2, 1, 2, 2));
        frames[[1, 0, 1, 1]] = f32::NAN;
        assert!(FrameSequence::new(frames, 1.0, "x").is_err());
    }

    #[test]
    fn subsample_takes_every_kth_frame() {
        let seq = ramp(10);
        let sub = seq.subsample(3, 1);
        assert_eq!(sub.n_frames(), 3);
        assert_eq!(sub.frame(2), seq.frame(7));
    }
}

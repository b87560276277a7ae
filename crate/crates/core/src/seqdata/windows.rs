use ndarray::Array3;

use super::sequence::FrameSequence;

/// Three consecutive frames; drives unsupervised training.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletSample {
    pub i0: Array3<f32>,
    pub i1: Array3<f32>,
    pub i2: Array3<f32>,
    /// Position of `i0` in the source sequence.
    pub index: usize,
}

/// Four consecutive frames: the outer two are inputs, the middle two are
/// ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadrupleSample {
    pub in_a: Array3<f32>,
    pub in_b: Array3<f32>,
    pub gt_1: Array3<f32>,
    pub gt_2: Array3<f32>,
    pub index: usize,
}

fn window_starts(n: usize, len: usize, stride: usize) -> impl Iterator<Item = usize> {
    assert!(stride >= 1, "stride must be at least 1");
    let count = if n >= len { (n - len) / stride + 1 } else { 0 };
    (0..count).map(move |k| k * stride)
}

pub fn make_triplets(seq: &FrameSequence, stride: usize) -> Vec<TripletSample> {
    window_starts(seq.n_frames(), 3, stride)
        .map(|i| TripletSample {
            i0: seq.frame(i).to_owned(),
            i1: seq.frame(i + 1).to_owned(),
            i2: seq.frame(i + 2).to_owned(),
            index: i,
        })
        .collect()
}

pub fn make_quadruples(seq: &FrameSequence, stride: usize) -> Vec<QuadrupleSample> {
    window_starts(seq.n_frames(), 4, stride)
        .map(|i| QuadrupleSample {
            in_a: seq.frame(i).to_owned(),
            gt_1: seq.frame(i + 1).to_owned(),
            gt_2: seq.frame(i + 2).to_owned(),
            in_b: seq.frame(i + 3).to_owned(),
            index: i,
        })
        .collect()
}

/// Samples whose temporal order can be flipped.
pub trait Reversible {
    fn reversed(self) -> Self;
}

impl Reversible for TripletSample {
    fn reversed(self) -> Self {
        TripletSample {
            i0: self.i2,
            i1: self.i1,
            i2: self.i0,
            index: self.index,
        }
    }
}

impl Reversible for QuadrupleSample {
    fn reversed(self) -> Self {
        QuadrupleSample {
            in_a: self.in_b,
            in_b: self.in_a,
            gt_1: self.gt_2,
            gt_2: self.gt_1,
            index: self.index,
        }
    }
}

/// Reverse the sample's temporal order when `draw < p`.
pub fn augment_reverse<T: Reversible>(sample: T, draw: f64, p: f64) -> T {
    debug_assert!((0.0..=1.0).contains(&p));
    if draw < p {
        sample.reversed()
    } else {
        sample
    }
}

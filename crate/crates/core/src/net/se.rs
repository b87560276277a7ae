//! 3D squeeze-and-excitation: global average pooling over time and space,
//! a two-layer bottleneck, and a logistic per-channel gate.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{uniform, Feat, PassCtx};
use super::params::{accumulate, ParamId, ParamStore};
use super::real::Real;
use crate::error::{Error, Result};

fn sigmoid<S: Real>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

#[derive(Clone, Debug)]
struct Gates<S> {
    pre: Array2<S>,
    hidden: Array2<S>,
    gate: Array2<S>,
}

/// `squeeze` is `C × N`; returns gates of the same shape.
fn excite<S: Real>(
    w1: ArrayView2<S>,
    b1: ArrayView1<S>,
    w2: ArrayView2<S>,
    b2: ArrayView1<S>,
    squeeze: &Array2<S>,
) -> Gates<S> {
    let mut pre = w1.dot(squeeze);
    for (mut row, &b) in pre.axis_iter_mut(Axis(0)).zip(b1.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    let hidden = pre.mapv(|v| v.max(S::zero()));
    let mut gate = w2.dot(&hidden);
    for (mut row, &b) in gate.axis_iter_mut(Axis(0)).zip(b2.iter()) {
        row.mapv_inplace(|v| sigmoid(v + b));
    }
    Gates { pre, hidden, gate }
}

/// Weights of a standalone SE block over `C` channels with reduction `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeWeights<S> {
    /// `C/r × C`
    pub w1: Array2<S>,
    pub b1: Array1<S>,
    /// `C × C/r`
    pub w2: Array2<S>,
    pub b2: Array1<S>,
}

impl<S: Real> SeWeights<S> {
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let hidden = bottleneck_width(channels, reduction)?;
        Ok(SeWeights {
            w1: Array2::zeros((hidden, channels)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((channels, hidden)),
            b2: Array1::zeros(channels),
        })
    }

    pub fn random(channels: usize, reduction: usize, seed: u64) -> Result<Self> {
        let hidden = bottleneck_width(channels, reduction)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let mut f = uniform(&mut rng, 1.0 / (fan_in as f64).sqrt());
            Array2::from_shape_fn((rows, cols), |_| S::lit(f()))
        };
        let w1 = draw(hidden, channels, channels);
        let b1 = draw(hidden, 1, channels).remove_axis(Axis(1));
        let w2 = draw(channels, hidden, hidden);
        let b2 = draw(channels, 1, hidden).remove_axis(Axis(1));
        Ok(SeWeights { w1, b1, w2, b2 })
    }

    pub fn channels(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }
}

/// Width of the excitation bottleneck, `C / r`.
pub fn bottleneck_width(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || channels % reduction != 0 || channels < reduction {
        return Err(Error::Config(format!(
            "se_reduction {reduction} does not divide channel count {channels}"
        )));
    }
    Ok(channels / reduction)
}

/// Gate a single `C × T × H × W` feature volume. Returns the scaled volume
/// and the per-channel gates.
pub fn se_forward<S: Real>(
    features: ArrayView4<S>,
    reduction: usize,
    weights: &SeWeights<S>,
) -> Result<(Array4<S>, Array1<S>)> {
    let (c, t, h, w) = features.dim();
    let hidden = bottleneck_width(c, reduction)?;
    if weights.channels() != c || weights.hidden() != hidden {
        return Err(Error::shape(
            (hidden, c),
            (weights.hidden(), weights.channels()),
        ));
    }
    let voxels = S::lit((t * h * w) as f64);
    let squeeze = Array2::from_shape_fn((c, 1), |(ch, _)| {
        features.index_axis(Axis(0), ch).iter().copied().sum::<S>() / voxels
    });
    let gates = excite(
        weights.w1.view(),
        weights.b1.view(),
        weights.w2.view(),
        weights.b2.view(),
        &squeeze,
    );
    let gate = gates.gate.column(0).to_owned();
    let mut out = features.to_owned();
    for (mut vol, &g) in out.axis_iter_mut(Axis(0)).zip(gate.iter()) {
        vol.mapv_inplace(|v| v * g);
    }
    Ok((out, gate))
}

#[derive(Clone, Debug)]
pub(crate) struct SeBlock {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    channels: usize,
    hidden: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct SeCache<S> {
    input: Feat<S>,
    squeeze: Array2<S>,
    gates: Gates<S>,
}

impl SeBlock {
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let hidden = bottleneck_width(channels, reduction)?;
        let b_in = 1.0 / (channels as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        Ok(SeBlock {
            w1: store.push(format!("{name}.fc1.weight"), vec![hidden, channels], uniform(rng, b_in)),
            b1: store.push(format!("{name}.fc1.bias"), vec![hidden], uniform(rng, b_in)),
            w2: store.push(format!("{name}.fc2.weight"), vec![channels, hidden], uniform(rng, b_hid)),
            b2: store.push(format!("{name}.fc2.bias"), vec![channels], uniform(rng, b_hid)),
            channels,
            hidden,
        })
    }

    fn squeeze<S: Real>(x: &Feat<S>) -> Array2<S> {
        let vox = x.dims.voxels();
        let inv = S::lit(1.0 / vox as f64);
        let c = x.data.nrows();
        let mut z = Array2::zeros((c, x.dims.n));
        for (ch, row) in x.data.axis_iter(Axis(0)).enumerate() {
            let row = row.as_slice().expect("standard layout");
            for (n, chunk) in row.chunks_exact(vox).enumerate() {
                z[[ch, n]] = chunk.iter().copied().sum::<S>() * inv;
            }
        }
        z
    }

    pub fn forward<S: Real>(
        &self,
        store: &ParamStore<S>,
        mut x: Feat<S>,
        ctx: &mut PassCtx<S>,
    ) -> (Feat<S>, Option<SeCache<S>>) {
        let squeeze = Self::squeeze(&x);
        let gates = excite(
            store.matrix(self.w1, self.hidden, self.channels),
            store.vector(self.b1),
            store.matrix(self.w2, self.channels, self.hidden),
            store.vector(self.b2),
            &squeeze,
        );
        let vox = x.dims.voxels();
        let cache = ctx.record().then(|| SeCache {
            input: x.clone(),
            squeeze,
            gates: gates.clone(),
        });
        for (ch, mut row) in x.data.axis_iter_mut(Axis(0)).enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (n, chunk) in row.chunks_exact_mut(vox).enumerate() {
                let g = gates.gate[[ch, n]];
                chunk.iter_mut().for_each(|v| *v *= g);
            }
        }
        (x, cache)
    }

    pub fn backward<S: Real>(
        &self,
        store: &ParamStore<S>,
        cache: &SeCache<S>,
        dy: Array2<S>,
        grads: &mut [S],
    ) -> Array2<S> {
        let x = &cache.input;
        let vox = x.dims.voxels();
        let g = &cache.gates;
        let n = x.dims.n;

        // Gradient through the gate value, then through the logistic.
        let mut d_pre2 = Array2::<S>::zeros((self.channels, n));
        let mut dx = dy;
        for (ch, (mut drow, xrow)) in dx
            .axis_iter_mut(Axis(0))
            .zip(x.data.axis_iter(Axis(0)))
            .enumerate()
        {
            let drow = drow.as_slice_mut().expect("standard layout");
            let xrow = xrow.as_slice().expect("standard layout");
            for (s, (dchunk, xchunk)) in drow
                .chunks_exact_mut(vox)
                .zip(xrow.chunks_exact(vox))
                .enumerate()
            {
                let gv = g.gate[[ch, s]];
                let dg: S = dchunk.iter().zip(xchunk).map(|(&d, &xv)| d * xv).sum();
                d_pre2[[ch, s]] = dg * gv * (S::one() - gv);
                dchunk.iter_mut().for_each(|d| *d *= gv);
            }
        }

        let w1 = store.matrix(self.w1, self.hidden, self.channels);
        let w2 = store.matrix(self.w2, self.channels, self.hidden);
        accumulate(grads, store, self.w2, d_pre2.dot(&g.hidden.t()).iter());
        accumulate(grads, store, self.b2, d_pre2.sum_axis(Axis(1)).iter());
        let mut d_pre1 = w2.t().dot(&d_pre2);
        ndarray::Zip::from(&mut d_pre1)
            .and(&g.pre)
            .for_each(|d, &p| {
                if p <= S::zero() {
                    *d = S::zero();
                }
            });
        accumulate(grads, store, self.w1, d_pre1.dot(&cache.squeeze.t()).iter());
        accumulate(grads, store, self.b1, d_pre1.sum_axis(Axis(1)).iter());
        let d_squeeze = w1.t().dot(&d_pre1);

        let inv = S::lit(1.0 / vox as f64);
        for (ch, mut drow) in dx.axis_iter_mut(Axis(0)).enumerate() {
            let drow = drow.as_slice_mut().unwrap();
            for (s, dchunk) in drow.chunks_exact_mut(vox).enumerate() {
                let add = d_squeeze[[ch, s]] * inv;
                dchunk.iter_mut().for_each(|d| *d += add);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;

    fn features(seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((16, 2, 4, 4), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn bottleneck_is_c_over_r() {
        assert_eq!(bottleneck_width(16, 4).unwrap(), 4);
        let w = SeWeights::<f64>::random(16, 4, 0).unwrap();
        assert_eq!(w.hidden(), 4);
    }

    #[test]
    fn shape_preserved_and_gates_open_interval() {
        let x = features(1);
        let w = SeWeights::random(16, 4, 2).unwrap();
        let (y, gates) = se_forward(x.view(), 4, &w).unwrap();
        assert_eq!(y.dim(), x.dim());
        assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));
        for c in 0..16 {
            let ratio = y[[c, 1, 2, 3]] / x[[c, 1, 2, 3]];
            assert!((ratio - gates[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_excitation_gates_are_one_half() {
        let x = features(3);
        let w = SeWeights::zeros(16, 4).unwrap();
        let (y, gates) = se_forward(x.view(), 4, &w).unwrap();
        assert!(gates.iter().all(|&g| g == 0.5));
        assert_eq!(y, x.mapv(|v| v * 0.5));
    }

    #[test]
    fn reduction_must_divide() {
        let x = features(4);
        let w = SeWeights::zeros(16, 4).unwrap();
        assert!(se_forward(x.view(), 3, &w).is_err());
        assert!(SeWeights::<f64>::zeros(16, 5).is_err());
    }
}

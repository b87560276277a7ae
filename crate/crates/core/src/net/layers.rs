//! Convolution, transposed convolution and batch normalization with explicit
//! backward passes.
//!
//! Activations are kept channel-major: a [`Feat`] is a `C × (N·T·H·W)`
//! matrix, so every convolution is a single GEMM against an im2col buffer
//! and batch statistics are contiguous row reductions.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{accumulate, ParamId, ParamStore};
use super::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub n: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn voxels(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn cols(&self) -> usize {
        self.n * self.voxels()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Feat<S> {
    pub data: Array2<S>,
    pub dims: Dims,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Pass {
    /// Batch statistics, caches kept for backpropagation.
    Record,
    /// Batch statistics, nothing kept.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug)]
pub(crate) struct StatUpdate<S> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

pub(crate) struct PassCtx<S> {
    pub pass: Pass,
    pub stats: Vec<StatUpdate<S>>,
}

impl<S> PassCtx<S> {
    pub fn new(pass: Pass) -> Self {
        PassCtx {
            pass,
            stats: Vec::new(),
        }
    }

    pub fn record(&self) -> bool {
        self.pass == Pass::Record
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> impl FnMut() -> f64 + '_ {
    move || rng.random_range(-bound..bound)
}

/// Output positions `o` whose input coordinate `o*stride + k - pad` lies in
/// `[0, len_in)`.
fn valid_range(k: usize, pad: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    let off = k as isize - pad as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let lim = len_in as isize - 1 - off;
    let hi = if lim < 0 {
        0
    } else {
        (lim as usize / stride + 1).min(len_out)
    };
    (lo.min(hi), hi)
}

/// Cubic kernel, zero padding `k/2`, stride 1 in time and `stride` in space.
#[derive(Clone, Debug)]
pub(crate) struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        weight_bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (cin * k * k * k) as f64;
        let weight = store.push(
            format!("{name}.weight"),
            vec![cout, cin, k, k, k],
            uniform(rng, weight_bound),
        );
        let bias = bias.then(|| {
            store.push(
                format!("{name}.bias"),
                vec![cout],
                uniform(rng, 1.0 / fan_in.sqrt()),
            )
        });
        Conv3d {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
        }
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    pub fn out_dims(&self, d: Dims) -> Dims {
        let p = self.k / 2;
        Dims {
            n: d.n,
            t: d.t + 2 * p + 1 - self.k,
            h: (d.h + 2 * p - self.k) / self.stride + 1,
            w: (d.w + 2 * p - self.k) / self.stride + 1,
        }
    }

    fn im2col<S: Real>(&self, x: &Feat<S>, od: Dims) -> Array2<S> {
        let (k, stride, d) = (self.k, self.stride, x.dims);
        let p = k / 2;
        let ncols = od.cols();
        let mut cols = Array2::<S>::zeros((self.cin * k * k * k, ncols));
        let xs = x.data.as_slice().expect("standard layout");
        let cs = cols.as_slice_mut().unwrap();
        let in_row = d.cols();
        for ci in 0..self.cin {
            for kt in 0..k {
                for kh in 0..k {
                    for kw in 0..k {
                        let r = ((ci * k + kt) * k + kh) * k + kw;
                        let row = &mut cs[r * ncols..(r + 1) * ncols];
                        let (t_lo, t_hi) = valid_range(kt, p, 1, d.t, od.t);
                        let (h_lo, h_hi) = valid_range(kh, p, stride, d.h, od.h);
                        let (w_lo, w_hi) = valid_range(kw, p, stride, d.w, od.w);
                        for n in 0..d.n {
                            for to in t_lo..t_hi {
                                let ti = to + kt - p;
                                for ho in h_lo..h_hi {
                                    let hi = ho * stride + kh - p;
                                    let src = ci * in_row + ((n * d.t + ti) * d.h + hi) * d.w;
                                    let dst = ((n * od.t + to) * od.h + ho) * od.w;
                                    if stride == 1 {
                                        let a = src + w_lo + kw - p;
                                        row[dst + w_lo..dst + w_hi]
                                            .copy_from_slice(&xs[a..a + (w_hi - w_lo)]);
                                    } else {
                                        for wo in w_lo..w_hi {
                                            row[dst + wo] = xs[src + wo * stride + kw - p];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<S: Real>(&self, dcols: &Array2<S>, d: Dims, od: Dims) -> Array2<S> {
        let (k, stride) = (self.k, self.stride);
        let p = k / 2;
        let ncols = od.cols();
        let mut dx = Array2::<S>::zeros((self.cin, d.cols()));
        let xs = dx.as_slice_mut().unwrap();
        let cs = dcols.as_slice().expect("standard layout");
        let in_row = d.cols();
        for ci in 0..self.cin {
            for kt in 0..k {
                for kh in 0..k {
                    for kw in 0..k {
                        let r = ((ci * k + kt) * k + kh) * k + kw;
                        let row = &cs[r * ncols..(r + 1) * ncols];
                        let (t_lo, t_hi) = valid_range(kt, p, 1, d.t, od.t);
                        let (h_lo, h_hi) = valid_range(kh, p, stride, d.h, od.h);
                        let (w_lo, w_hi) = valid_range(kw, p, stride, d.w, od.w);
                        for n in 0..d.n {
                            for to in t_lo..t_hi {
                                let ti = to + kt - p;
                                for ho in h_lo..h_hi {
                                    let hi = ho * stride + kh - p;
                                    let src = ci * in_row + ((n * d.t + ti) * d.h + hi) * d.w;
                                    let dst = ((n * od.t + to) * od.h + ho) * od.w;
                                    for wo in w_lo..w_hi {
                                        xs[src + wo * stride + kw - p] += row[dst + wo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<S: Real>(&self, store: &ParamStore<S>, x: &Feat<S>) -> Feat<S> {
        let od = self.out_dims(x.dims);
        let w = store.matrix(self.weight, self.cout, self.cin * self.k.pow(3));
        let mut y = if self.pointwise() {
            w.dot(&x.data)
        } else {
            w.dot(&self.im2col(x, od))
        };
        if let Some(b) = self.bias {
            for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(store.get(b)) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        Feat { data: y, dims: od }
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward<S: Real>(
        &self,
        store: &ParamStore<S>,
        x: &Feat<S>,
        dy: &Array2<S>,
        grads: &mut [S],
    ) -> Array2<S> {
        let od = self.out_dims(x.dims);
        let w = store.matrix(self.weight, self.cout, self.cin * self.k.pow(3));
        let dx = if self.pointwise() {
            let dw = dy.dot(&x.data.t());
            accumulate(grads, store, self.weight, dw.iter());
            w.t().dot(dy)
        } else {
            let cols = self.im2col(x, od);
            let dw = dy.dot(&cols.t());
            drop(cols);
            accumulate(grads, store, self.weight, dw.iter());
            let dcols = w.t().dot(dy);
            self.col2im(&dcols, x.dims, od)
        };
        if let Some(b) = self.bias {
            accumulate(grads, store, b, dy.sum_axis(Axis(1)).iter());
        }
        dx
    }
}

/// Transposed convolution with kernel and stride `1 × 2 × 2`: doubles the
/// spatial extent, keeps time.
#[derive(Clone, Debug)]
pub(crate) struct UpConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl UpConv {
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (3.0 / cin as f64).sqrt();
        let weight = store.push(
            format!("{name}.weight"),
            vec![cin, cout, 1, 2, 2],
            uniform(rng, bound),
        );
        let bias = store.push(
            format!("{name}.bias"),
            vec![cout],
            uniform(rng, 1.0 / (cin as f64).sqrt()),
        );
        UpConv {
            weight,
            bias,
            cin,
            cout,
        }
    }

    fn out_dims(d: Dims) -> Dims {
        Dims {
            h: 2 * d.h,
            w: 2 * d.w,
            ..d
        }
    }

    pub fn forward<S: Real>(&self, store: &ParamStore<S>, x: &Feat<S>) -> Feat<S> {
        let d = x.dims;
        let od = Self::out_dims(d);
        let w = store.matrix(self.weight, self.cin, self.cout * 4);
        let y4 = w.t().dot(&x.data);
        let mut out = Array2::<S>::zeros((self.cout, od.cols()));
        let bias = store.get(self.bias);
        for co in 0..self.cout {
            let mut orow = out.row_mut(co);
            let orow = orow.as_slice_mut().unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let yrow = y4.row(co * 4 + i * 2 + j);
                    let yrow = yrow.as_slice().unwrap();
                    for nt in 0..d.n * d.t {
                        for h in 0..d.h {
                            let src = (nt * d.h + h) * d.w;
                            let dst = (nt * od.h + 2 * h + i) * od.w + j;
                            for x in 0..d.w {
                                orow[dst + 2 * x] = yrow[src + x] + bias[co];
                            }
                        }
                    }
                }
            }
        }
        Feat { data: out, dims: od }
    }

    pub fn backward<S: Real>(
        &self,
        store: &ParamStore<S>,
        x: &Feat<S>,
        dy: &Array2<S>,
        grads: &mut [S],
    ) -> Array2<S> {
        let d = x.dims;
        let od = Self::out_dims(d);
        let mut dy4 = Array2::<S>::zeros((self.cout * 4, d.cols()));
        for co in 0..self.cout {
            let drow = dy.row(co);
            let drow = drow.as_slice().expect("standard layout");
            for i in 0..2 {
                for j in 0..2 {
                    let mut trow = dy4.row_mut(co * 4 + i * 2 + j);
                    let trow = trow.as_slice_mut().unwrap();
                    for nt in 0..d.n * d.t {
                        for h in 0..d.h {
                            let src = (nt * d.h + h) * d.w;
                            let dst = (nt * od.h + 2 * h + i) * od.w + j;
                            for x in 0..d.w {
                                trow[src + x] = drow[dst + 2 * x];
                            }
                        }
                    }
                }
            }
        }
        let dw = x.data.dot(&dy4.t());
        accumulate(grads, store, self.weight, dw.iter());
        accumulate(grads, store, self.bias, dy.sum_axis(Axis(1)).iter());
        let w = store.matrix(self.weight, self.cin, self.cout * 4);
        w.dot(&dy4)
    }
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache<S> {
    xhat: Array2<S>,
    invstd: Vec<S>,
}

impl BatchNorm {
    pub fn new<S: Real>(
        params: &mut ParamStore<S>,
        buffers: &mut ParamStore<S>,
        name: &str,
        c: usize,
    ) -> Self {
        BatchNorm {
            gamma: params.push(format!("{name}.gamma"), vec![c], || 1.0),
            beta: params.push(format!("{name}.beta"), vec![c], || 0.0),
            running_mean: buffers.push(format!("{name}.running_mean"), vec![c], || 0.0),
            running_var: buffers.push(format!("{name}.running_var"), vec![c], || 1.0),
        }
    }

    pub fn forward<S: Real>(
        &self,
        params: &ParamStore<S>,
        buffers: &ParamStore<S>,
        mut y: Array2<S>,
        ctx: &mut PassCtx<S>,
    ) -> (Array2<S>, Option<BnCache<S>>) {
        let gamma = params.get(self.gamma);
        let beta = params.get(self.beta);
        let eps = S::lit(BN_EPS);
        if ctx.pass == Pass::Eval {
            let rm = buffers.get(self.running_mean);
            let rv = buffers.get(self.running_var);
            for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
                let scale = gamma[c] / (rv[c] + eps).sqrt();
                let shift = beta[c] - rm[c] * scale;
                row.mapv_inplace(|v| v * scale + shift);
            }
            return (y, None);
        }

        let m = y.ncols();
        let mf = S::lit(m as f64);
        let mut means = Vec::with_capacity(y.nrows());
        let mut vars = Vec::with_capacity(y.nrows());
        let mut invstd = Vec::with_capacity(y.nrows());
        for mut row in y.axis_iter_mut(Axis(0)) {
            let mean = row.iter().copied().sum::<S>() / mf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / mf;
            let is = S::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            means.push(mean);
            vars.push(if m > 1 {
                var * mf / S::lit((m - 1) as f64)
            } else {
                var
            });
            invstd.push(is);
        }
        ctx.stats.push(StatUpdate {
            mean_id: self.running_mean,
            var_id: self.running_var,
            mean: means,
            var: vars,
        });
        let cache = ctx.record().then(|| BnCache {
            xhat: y.clone(),
            invstd,
        });
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let (g, b) = (gamma[c], beta[c]);
            row.mapv_inplace(|v| v * g + b);
        }
        (y, cache)
    }

    pub fn backward<S: Real>(
        &self,
        params: &ParamStore<S>,
        cache: &BnCache<S>,
        mut dz: Array2<S>,
        grads: &mut [S],
    ) -> Array2<S> {
        let gamma = params.get(self.gamma);
        let mf = S::lit(dz.ncols() as f64);
        let mut dgamma = Vec::with_capacity(gamma.len());
        let mut dbeta = Vec::with_capacity(gamma.len());
        for (c, (mut drow, xrow)) in dz
            .axis_iter_mut(Axis(0))
            .zip(cache.xhat.axis_iter(Axis(0)))
            .enumerate()
        {
            let sum_d = drow.iter().copied().sum::<S>();
            let sum_dx = drow
                .iter()
                .zip(xrow.iter())
                .map(|(&d, &x)| d * x)
                .sum::<S>();
            dgamma.push(sum_dx);
            dbeta.push(sum_d);
            let k = gamma[c] * cache.invstd[c] / mf;
            Zip::from(&mut drow)
                .and(&xrow)
                .for_each(|d, &x| *d = k * (mf * *d - sum_d - x * sum_dx));
        }
        accumulate(grads, params, self.gamma, dgamma.iter());
        accumulate(grads, params, self.beta, dbeta.iter());
        dz
    }
}

/// Convolution, optional batch normalization, rectifier.
#[derive(Clone, Debug)]
pub(crate) struct ConvUnit {
    pub conv: Conv3d,
    pub bn: Option<BatchNorm>,
}

#[derive(Clone, Debug)]
pub(crate) struct UnitCache<S> {
    input: Feat<S>,
    bn: Option<BnCache<S>>,
    out: Array2<S>,
}

impl ConvUnit {
    pub fn forward<S: Real>(
        &self,
        params: &ParamStore<S>,
        buffers: &ParamStore<S>,
        x: Feat<S>,
        ctx: &mut PassCtx<S>,
    ) -> (Feat<S>, Option<UnitCache<S>>) {
        let y = self.conv.forward(params, &x);
        let dims = y.dims;
        let (mut z, bn_cache) = match &self.bn {
            Some(bn) => bn.forward(params, buffers, y.data, ctx),
            None => (y.data, None),
        };
        z.mapv_inplace(|v| v.max(S::zero()));
        let cache = ctx.record().then(|| UnitCache {
            input: x,
            bn: bn_cache,
            out: z.clone(),
        });
        (Feat { data: z, dims }, cache)
    }

    pub fn backward<S: Real>(
        &self,
        params: &ParamStore<S>,
        cache: &UnitCache<S>,
        mut d: Array2<S>,
        grads: &mut [S],
    ) -> Array2<S> {
        Zip::from(&mut d).and(&cache.out).for_each(|d, &o| {
            if o <= S::zero() {
                *d = S::zero();
            }
        });
        if let (Some(bn), Some(bc)) = (&self.bn, &cache.bn) {
            d = bn.backward(params, bc, d, grads);
        }
        self.conv.backward(params, &cache.input, &d, grads)
    }
}

use ndarray::{concatenate, s, Array2, Array3, Array4, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv3d, ConvUnit, Dims, Feat, Pass, PassCtx, StatUpdate, UnitCache, UpConv, BN_MOMENTUM};
use super::params::ParamStore;
use super::real::Real;
use super::se::{bottleneck_width, SeBlock, SeCache};
use crate::error::{Error, Result};

/// Spatial/temporal kernel edge of every encoder and decoder convolution.
pub const KERNEL: usize = 3;

/// Hyperparameters of the interpolation network.
///
/// The two input frames are stacked on a time axis of length 2, so the 3D
/// kernels see both; the output is a length-2 time axis holding the
/// predictions at one and two thirds of the input interval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    /// Channels at the first level; doubles at every level below.
    pub base_width: usize,
    /// Number of encoder levels.
    pub depth: usize,
    pub se_reduction: usize,
    pub use_batchnorm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::full_scale()
    }
}

impl NetConfig {
    /// Small preset for CPU experiments (83,549 parameters).
    pub fn desk() -> Self {
        NetConfig {
            in_channels: 1,
            base_width: 8,
            depth: 3,
            se_reduction: 4,
            use_batchnorm: true,
        }
    }

    /// Roughly 40M parameters.
    pub fn full_scale() -> Self {
        NetConfig {
            in_channels: 1,
            base_width: 40,
            depth: 5,
            se_reduction: 8,
            use_batchnorm: true,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.base_width << l).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.in_channels < 1 || self.base_width < 1 {
            return Err(Error::Config(
                "in_channels and base_width must be at least 1".into(),
            ));
        }
        if self.depth > 16 {
            return Err(Error::Config(format!("depth {} is too large", self.depth)));
        }
        for w in self.widths() {
            bottleneck_width(w, self.se_reduction)?;
        }
        Ok(())
    }

    /// Spatial extents must survive `depth - 1` halvings.
    pub fn check_frame(&self, height: usize, width: usize) -> Result<()> {
        let m = 1usize << (self.depth - 1);
        if height % m != 0 || width % m != 0 || height == 0 || width == 0 {
            return Err(Error::Config(format!(
                "frame {height}x{width} is not divisible by 2^(depth-1) = {m}"
            )));
        }
        Ok(())
    }

    /// Names of fields that differ from `other`.
    pub fn diff(&self, other: &NetConfig) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.in_channels != other.in_channels {
            out.push("in_channels");
        }
        if self.base_width != other.base_width {
            out.push("base_width");
        }
        if self.depth != other.depth {
            out.push("depth");
        }
        if self.se_reduction != other.se_reduction {
            out.push("se_reduction");
        }
        if self.use_batchnorm != other.use_batchnorm {
            out.push("use_batchnorm");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Two frames of identical `C × H × W` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair<S = f32> {
    pub f1: Array3<S>,
    pub f2: Array3<S>,
}

#[derive(Clone, Debug)]
struct Level {
    a: ConvUnit,
    b: ConvUnit,
    se: SeBlock,
}

#[derive(Clone, Debug)]
struct LevelCache<S> {
    a: UnitCache<S>,
    b: UnitCache<S>,
    se: SeCache<S>,
}

impl Level {
    fn forward<S: Real>(
        &self,
        params: &ParamStore<S>,
        buffers: &ParamStore<S>,
        x: Feat<S>,
        ctx: &mut PassCtx<S>,
    ) -> (Feat<S>, Option<LevelCache<S>>) {
        let (h, a) = self.a.forward(params, buffers, x, ctx);
        let (h, b) = self.b.forward(params, buffers, h, ctx);
        let (h, se) = self.se.forward(params, h, ctx);
        let cache = match (a, b, se) {
            (Some(a), Some(b), Some(se)) => Some(LevelCache { a, b, se }),
            _ => None,
        };
        (h, cache)
    }

    fn backward<S: Real>(
        &self,
        params: &ParamStore<S>,
        cache: &LevelCache<S>,
        d: Array2<S>,
        grads: &mut [S],
    ) -> Array2<S> {
        let d = self.se.backward(params, &cache.se, d, grads);
        let d = self.b.backward(params, &cache.b, d, grads);
        self.a.backward(params, &cache.a, d, grads)
    }
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: UpConv,
    level: Level,
}

/// Intermediate values of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct NetTape<S> {
    input: Dims,
    enc: Vec<LevelCache<S>>,
    dec: Vec<(Feat<S>, LevelCache<S>)>,
    head_input: Feat<S>,
    stats: Vec<StatUpdate<S>>,
}

/// 3D U-Net with squeeze-and-excitation blocks and strided-convolution
/// downsampling, mapping a frame pair to the two frames between them.
#[derive(Clone, Debug)]
pub struct InterpolationNetwork<S: Real = f32> {
    config: NetConfig,
    params: ParamStore<S>,
    buffers: ParamStore<S>,
    enc: Vec<Level>,
    dec: Vec<DecoderLevel>,
    head: Conv3d,
    mode: Mode,
}

fn conv_unit<S: Real>(
    params: &mut ParamStore<S>,
    buffers: &mut ParamStore<S>,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    batchnorm: bool,
    rng: &mut ChaCha8Rng,
) -> ConvUnit {
    let fan_in = (cin * KERNEL.pow(3)) as f64;
    let conv = Conv3d::new(
        params,
        &format!("{name}.conv"),
        cin,
        cout,
        KERNEL,
        stride,
        !batchnorm,
        (6.0 / fan_in).sqrt(),
        rng,
    );
    let bn = batchnorm.then(|| BatchNorm::new(params, buffers, &format!("{name}.bn"), cout));
    ConvUnit { conv, bn }
}

/// Build a freshly initialized network; initialization is a pure function
/// of `(config, seed)`.
pub fn build_network<S: Real>(config: &NetConfig, seed: u64) -> Result<InterpolationNetwork<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::default();
    let mut buffers = ParamStore::default();
    let widths = config.widths();
    let bn = config.use_batchnorm;
    let r = config.se_reduction;

    let mut enc = Vec::with_capacity(config.depth);
    for (l, &w) in widths.iter().enumerate() {
        let (cin, stride) = if l == 0 {
            (config.in_channels, 1)
        } else {
            (widths[l - 1], 2)
        };
        let name = format!("enc{l}");
        enc.push(Level {
            a: conv_unit(&mut params, &mut buffers, &format!("{name}.a"), cin, w, stride, bn, &mut rng),
            b: conv_unit(&mut params, &mut buffers, &format!("{name}.b"), w, w, 1, bn, &mut rng),
            se: SeBlock::new(&mut params, &format!("{name}.se"), w, r, &mut rng)?,
        });
    }

    let mut dec = Vec::with_capacity(config.depth.saturating_sub(1));
    for l in (0..config.depth.saturating_sub(1)).rev() {
        let w = widths[l];
        let name = format!("dec{l}");
        dec.push(DecoderLevel {
            up: UpConv::new(&mut params, &format!("{name}.up"), widths[l + 1], w, &mut rng),
            level: Level {
                a: conv_unit(&mut params, &mut buffers, &format!("{name}.a"), 2 * w, w, 1, bn, &mut rng),
                b: conv_unit(&mut params, &mut buffers, &format!("{name}.b"), w, w, 1, bn, &mut rng),
                se: SeBlock::new(&mut params, &format!("{name}.se"), w, r, &mut rng)?,
            },
        });
    }

    let w0 = widths[0];
    let head = Conv3d::new(
        &mut params,
        "head",
        w0,
        config.in_channels,
        1,
        1,
        true,
        (3.0 / w0 as f64).sqrt(),
        &mut rng,
    );

    Ok(InterpolationNetwork {
        config: config.clone(),
        params,
        buffers,
        enc,
        dec,
        head,
        mode: Mode::Train,
    })
}

impl<S: Real> InterpolationNetwork<S> {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    /// Batch-norm running statistics (not learnable).
    pub fn buffers(&self) -> &ParamStore<S> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.buffers
    }

    pub fn count_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<S> {
        vec![S::zero(); self.params.len()]
    }

    fn check_inputs(&self, a: &ArrayView4<S>, b: &ArrayView4<S>) -> Result<()> {
        if a.dim() != b.dim() {
            return Err(Error::shape(a.dim(), b.dim()));
        }
        let (n, c, h, w) = a.dim();
        if c != self.config.in_channels || n == 0 {
            return Err(Error::shape(
                format!("N x {} x H x W", self.config.in_channels),
                (n, c, h, w),
            ));
        }
        self.config.check_frame(h, w)
    }

    fn stack(a: &ArrayView4<S>, b: &ArrayView4<S>) -> Feat<S> {
        let (n, c, h, w) = a.dim();
        let dims = Dims { n, t: 2, h, w };
        let plane = h * w;
        let mut data = Array2::zeros((c, dims.cols()));
        for ch in 0..c {
            let mut row = data.row_mut(ch);
            let row = row.as_slice_mut().unwrap();
            for i in 0..n {
                for (t, src) in [a, b].into_iter().enumerate() {
                    let dst = &mut row[(i * 2 + t) * plane..(i * 2 + t + 1) * plane];
                    for (d, &v) in dst.iter_mut().zip(src.slice(s![i, ch, .., ..]).iter()) {
                        *d = v;
                    }
                }
            }
        }
        Feat { data, dims }
    }

    fn unstack(data: &Array2<S>, dims: Dims) -> (Array4<S>, Array4<S>) {
        let (n, h, w) = (dims.n, dims.h, dims.w);
        let c = data.nrows();
        let plane = h * w;
        let mut first = Array4::zeros((n, c, h, w));
        let mut second = Array4::zeros((n, c, h, w));
        for ch in 0..c {
            let row = data.row(ch);
            let row = row.as_slice().expect("standard layout");
            for i in 0..n {
                for (t, out) in [&mut first, &mut second].into_iter().enumerate() {
                    let src = &row[(i * 2 + t) * plane..(i * 2 + t + 1) * plane];
                    for (d, &v) in out.slice_mut(s![i, ch, .., ..]).iter_mut().zip(src) {
                        *d = v;
                    }
                }
            }
        }
        (first, second)
    }

    fn run(&self, x: Feat<S>, ctx: &mut PassCtx<S>) -> (Feat<S>, Option<NetTape<S>>) {
        let input = x.dims;
        let depth = self.enc.len();
        let mut skips = Vec::with_capacity(depth);
        let mut enc_caches = Vec::with_capacity(depth);
        let mut h = x;
        for (l, level) in self.enc.iter().enumerate() {
            let (out, cache) = level.forward(&self.params, &self.buffers, h, ctx);
            if l + 1 < depth {
                skips.push(out.clone());
            }
            enc_caches.extend(cache);
            h = out;
        }
        let mut dec_caches = Vec::with_capacity(self.dec.len());
        for dl in &self.dec {
            let up = dl.up.forward(&self.params, &h);
            let skip = skips.pop().expect("one skip per decoder level");
            let cat = Feat {
                data: concatenate(Axis(0), &[up.data.view(), skip.data.view()])
                    .expect("matching columns"),
                dims: up.dims,
            };
            let (out, cache) = dl.level.forward(&self.params, &self.buffers, cat, ctx);
            if let Some(cache) = cache {
                dec_caches.push((h, cache));
            }
            h = out;
        }
        let y = self.head.forward(&self.params, &h);
        let tape = ctx.record().then(|| NetTape {
            input,
            enc: enc_caches,
            dec: dec_caches,
            head_input: h,
            stats: std::mem::take(&mut ctx.stats),
        });
        (y, tape)
    }

    /// Predict the two intermediate frames for a batch of `N × C × H × W`
    /// input pairs. Uses batch statistics in [`Mode::Train`] and running
    /// statistics in [`Mode::Eval`].
    pub fn forward_batch(
        &self,
        a: ArrayView4<S>,
        b: ArrayView4<S>,
    ) -> Result<(Array4<S>, Array4<S>)> {
        self.check_inputs(&a, &b)?;
        let pass = match self.mode {
            Mode::Train => Pass::Train,
            Mode::Eval => Pass::Eval,
        };
        let mut ctx = PassCtx::new(pass);
        let (y, _) = self.run(Self::stack(&a, &b), &mut ctx);
        Ok(Self::unstack(&y.data, y.dims))
    }

    /// Training-mode forward pass that keeps what [`Self::backward`] needs.
    pub fn forward_recorded(
        &self,
        a: ArrayView4<S>,
        b: ArrayView4<S>,
    ) -> Result<(Array4<S>, Array4<S>, NetTape<S>)> {
        self.check_inputs(&a, &b)?;
        let mut ctx = PassCtx::new(Pass::Record);
        let (y, tape) = self.run(Self::stack(&a, &b), &mut ctx);
        let (f1, f2) = Self::unstack(&y.data, y.dims);
        Ok((f1, f2, tape.expect("recorded pass")))
    }

    /// Accumulate parameter gradients into `grads` given output gradients,
    /// returning gradients with respect to both inputs.
    pub fn backward(
        &self,
        tape: &NetTape<S>,
        d_first: &Array4<S>,
        d_second: &Array4<S>,
        grads: &mut [S],
    ) -> (Array4<S>, Array4<S>) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let dy = Self::stack(&d_first.view(), &d_second.view());
        let mut d = self
            .head
            .backward(&self.params, &tape.head_input, &dy.data, grads);

        let depth = self.enc.len();
        let mut d_skips: Vec<Option<Array2<S>>> = vec![None; depth];
        for (i, dl) in self.dec.iter().enumerate().rev() {
            let (up_input, cache) = &tape.dec[i];
            let d_cat = dl.level.backward(&self.params, cache, d, grads);
            let w = dl.up.cout;
            let d_up = d_cat.slice(s![..w, ..]).to_owned();
            d_skips[depth - 2 - i] = Some(d_cat.slice(s![w.., ..]).to_owned());
            d = dl.up.backward(&self.params, up_input, &d_up, grads);
        }
        for l in (0..depth).rev() {
            if let Some(ds) = d_skips[l].take() {
                d += &ds;
            }
            d = self.enc[l].backward(&self.params, &tape.enc[l], d, grads);
        }
        Self::unstack(&d, tape.input)
    }

    /// Fold the batch statistics of a recorded pass into the running
    /// statistics used in evaluation mode.
    pub fn absorb_batch_stats(&mut self, tape: &NetTape<S>) {
        let m = S::lit(BN_MOMENTUM);
        let keep = S::one() - m;
        for st in &tape.stats {
            for (r, &v) in self.buffers.get_mut(st.mean_id).iter_mut().zip(&st.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in self.buffers.get_mut(st.var_id).iter_mut().zip(&st.var) {
                *r = keep * *r + m * v;
            }
        }
    }

    /// Interpolate a single pair of `C × H × W` frames.
    pub fn interpolate(&self, pair: &FramePair<S>) -> Result<FramePair<S>> {
        if pair.f1.dim() != pair.f2.dim() {
            return Err(Error::shape(pair.f1.dim(), pair.f2.dim()));
        }
        let a = pair.f1.view().insert_axis(Axis(0));
        let b = pair.f2.view().insert_axis(Axis(0));
        let (f1, f2) = self.forward_batch(a, b)?;
        Ok(FramePair {
            f1: f1.index_axis_move(Axis(0), 0),
            f2: f2.index_axis_move(Axis(0), 0),
        })
    }

    /// Copy parameters and buffers from a network of identical architecture.
    pub fn load_state(&mut self, params: &[S], buffers: &[S]) -> Result<()> {
        if params.len() != self.params.len() || buffers.len() != self.buffers.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} parameters and {} buffers, got {} and {}",
                self.params.len(),
                self.buffers.len(),
                params.len(),
                buffers.len()
            )));
        }
        self.params.values_mut().copy_from_slice(params);
        self.buffers.values_mut().copy_from_slice(buffers);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;

    fn tiny() -> NetConfig {
        NetConfig {
            in_channels: 1,
            base_width: 4,
            depth: 2,
            se_reduction: 2,
            use_batchnorm: true,
        }
    }

    fn frames(seed: u64, n: usize, h: usize, w: usize) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((n, 1, h, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_shape_matches_input() {
        let mut net = build_network::<f32>(&NetConfig::desk(), 0).unwrap();
        net.set_mode(Mode::Eval);
        let pair = FramePair {
            f1: frames(1, 1, 32, 32).index_axis_move(Axis(0), 0),
            f2: frames(2, 1, 32, 32).index_axis_move(Axis(0), 0),
        };
        let out = net.interpolate(&pair).unwrap();
        assert_eq!(out.f1.dim(), (1, 32, 32));
        assert_eq!(out.f2.dim(), (1, 32, 32));
        assert_eq!(net.interpolate(&pair).unwrap(), out);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_network::<f32>(&NetConfig::desk(), 5).unwrap();
        let b = build_network::<f32>(&NetConfig::desk(), 5).unwrap();
        let c = build_network::<f32>(&NetConfig::desk(), 6).unwrap();
        assert_eq!(a.params().values(), b.params().values());
        assert_ne!(a.params().values(), c.params().values());
    }

    #[test]
    fn config_errors() {
        let cfg = NetConfig {
            se_reduction: 3,
            ..NetConfig::desk()
        };
        assert!(matches!(build_network::<f32>(&cfg, 0), Err(Error::Config(_))));
        let cfg = NetConfig {
            depth: 0,
            ..NetConfig::desk()
        };
        assert!(build_network::<f32>(&cfg, 0).is_err());
        let net = build_network::<f32>(&NetConfig::desk(), 0).unwrap();
        let x = frames(0, 1, 30, 32);
        assert!(net.forward_batch(x.view(), x.view()).is_err());
    }

    #[test]
    fn shape_mismatch_names_dims() {
        let net = build_network::<f32>(&tiny(), 0).unwrap();
        let a = frames(0, 1, 8, 8);
        let b = frames(0, 1, 8, 16);
        let err = net.forward_batch(a.view(), b.view()).unwrap_err().to_string();
        assert!(err.contains("(1, 1, 8, 8)") && err.contains("(1, 1, 8, 16)"), "{err}");
    }

    #[test]
    fn recorded_pass_matches_train_pass() {
        let mut net = build_network::<f64>(&tiny(), 1).unwrap();
        net.set_mode(Mode::Train);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Array::from_shape_fn((2, 1, 8, 8), |_| rng.random_range(-1.0..1.0));
        let b = Array::from_shape_fn((2, 1, 8, 8), |_| rng.random_range(-1.0..1.0));
        let (p1, p2) = net.forward_batch(a.view(), b.view()).unwrap();
        let (r1, r2, _) = net.forward_recorded(a.view(), b.view()).unwrap();
        assert_eq!(p1, r1);
        assert_eq!(p2, r2);
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut net = build_network::<f32>(&tiny(), 2).unwrap();
        let a = frames(3, 2, 8, 8) + 5.0;
        let before = net.buffers().values().to_vec();
        let (_, _, tape) = net.forward_recorded(a.view(), a.view()).unwrap();
        net.absorb_batch_stats(&tape);
        assert_ne!(before, net.buffers().values());
    }
}

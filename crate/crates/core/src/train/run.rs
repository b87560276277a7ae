use ndarray::{stack, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::config::{lr_schedule, Phase, TrainConfig};
use super::log::{TrainLog, FINETUNE_COLUMNS, PRETRAIN_COLUMNS};
use crate::cycle::{
    cc1_loss, cc2_loss, combined_loss_backward, dual_cycle_batch, finetune_loss_backward,
    reconstruction_loss, FinetuneBatch, LossWeights,
};
use crate::error::{Error, Result};
use crate::net::{InterpolationNetwork, Mode};
use crate::seqdata::{
    augment_reverse, make_quadruples, make_triplets, normalize, FrameSequence, QuadrupleSample,
    TripletSample,
};

/// Result of a training run. The network passed in is left holding the
/// best-validation weights, which are also in `checkpoint`.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val: f64,
    pub n_train: usize,
    pub n_val: usize,
}

/// A quadruple paired with the coarse-grid triplet that feeds the cycle
/// terms while fine-tuning. The triplet uses frames spaced like the
/// quadruple's inputs and never its ground-truth frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSample {
    pub quad: QuadrupleSample,
    pub coarse: TripletSample,
}

fn normalized(seq: &FrameSequence) -> FrameSequence {
    if seq.norm_stats.is_some() {
        seq.clone()
    } else {
        normalize(seq)
    }
}

/// Triplets from every phase of the subsampled sequence, each sequence
/// normalized by its own statistics.
pub fn pretrain_triplets(data: &[FrameSequence], subsample_factor: usize) -> Vec<TripletSample> {
    let mut out = Vec::new();
    for seq in data {
        let seq = normalized(seq);
        for phase in 0..subsample_factor.min(seq.n_frames()) {
            out.extend(make_triplets(&seq.subsample(subsample_factor, phase), 1));
        }
    }
    out
}

/// Quadruple `i` is paired with frames `(i, i+3, i+6)`, or `(i-3, i, i+3)`
/// near the end of the sequence. Sequences shorter than 7 frames yield
/// nothing.
pub fn finetune_samples(data: &[FrameSequence]) -> Vec<FinetuneSample> {
    let mut out = Vec::new();
    for seq in data {
        let seq = normalized(seq);
        let n = seq.n_frames();
        if n < 7 {
            continue;
        }
        for quad in make_quadruples(&seq, 1) {
            let i = quad.index;
            let start = if i + 6 < n { i } else { i - 3 };
            let coarse = TripletSample {
                i0: seq.frame(start).to_owned(),
                i1: seq.frame(start + 3).to_owned(),
                i2: seq.frame(start + 6).to_owned(),
                index: start,
            };
            out.push(FinetuneSample { quad, coarse });
        }
    }
    out
}

/// Seeded shuffle, optional budget, then a train/validation split. With a
/// single sample (or a zero fraction) the validation set is the training
/// set.
fn split<T: Clone>(samples: Vec<T>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    if let Some(b) = cfg.sample_budget {
        order.truncate(b);
    }
    let n = order.len();
    let n_val = if n >= 2 && cfg.val_fraction > 0.0 {
        ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val: Vec<T> = order[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train: Vec<T> = order[n_val..].iter().map(|&i| samples[i].clone()).collect();
    if val.is_empty() {
        (train.clone(), train)
    } else {
        (train, val)
    }
}

fn batch<'a>(frames: impl Iterator<Item = &'a Array3<f32>>) -> Array4<f32> {
    let views: Vec<_> = frames.map(|f| f.view()).collect();
    stack(Axis(0), &views).expect("frames share a shape")
}

fn triplet_batch(items: &[TripletSample]) -> [Array4<f32>; 3] {
    [
        batch(items.iter().map(|t| &t.i0)),
        batch(items.iter().map(|t| &t.i1)),
        batch(items.iter().map(|t| &t.i2)),
    ]
}

/// Mean cycle losses in evaluation mode, weighted by sample count.
fn eval_cycle(
    net: &mut InterpolationNetwork<f32>,
    set: &[TripletSample],
    bs: usize,
    w: &LossWeights,
) -> Result<(f64, f64, f64)> {
    let prev = net.mode();
    net.set_mode(Mode::Eval);
    let (mut cc1, mut cc2) = (0.0, 0.0);
    for chunk in set.chunks(bs) {
        let [i0, i1, i2] = triplet_batch(chunk);
        let sp = dual_cycle_batch(&*net, i0.view(), i1.view(), i2.view())?;
        let k = chunk.len() as f64;
        cc1 += k * cc1_loss(&sp, &i1);
        cc2 += k * cc2_loss(&sp);
    }
    net.set_mode(prev);
    let n = set.len().max(1) as f64;
    let (cc1, cc2) = (cc1 / n, cc2 / n);
    Ok((cc1, cc2, w.lambda_cc1 * cc1 + w.lambda_cc2 * cc2))
}

fn eval_finetune(
    net: &mut InterpolationNetwork<f32>,
    set: &[FinetuneSample],
    bs: usize,
    w: &LossWeights,
) -> Result<(f64, f64, f64, f64)> {
    let prev = net.mode();
    net.set_mode(Mode::Eval);
    let (mut recon, mut cc1, mut cc2) = (0.0, 0.0, 0.0);
    for chunk in set.chunks(bs) {
        let a = batch(chunk.iter().map(|s| &s.quad.in_a));
        let b = batch(chunk.iter().map(|s| &s.quad.in_b));
        let g1 = batch(chunk.iter().map(|s| &s.quad.gt_1));
        let g2 = batch(chunk.iter().map(|s| &s.quad.gt_2));
        let (p1, p2) = net.forward_batch(a.view(), b.view())?;
        let coarse: Vec<TripletSample> = chunk.iter().map(|s| s.coarse.clone()).collect();
        let [c0, c1, c2] = triplet_batch(&coarse);
        let sp = dual_cycle_batch(&*net, c0.view(), c1.view(), c2.view())?;
        let k = chunk.len() as f64;
        recon += k * reconstruction_loss((&p1, &p2), (&g1, &g2));
        cc1 += k * cc1_loss(&sp, &c1);
        cc2 += k * cc2_loss(&sp);
    }
    net.set_mode(prev);
    let n = set.len().max(1) as f64;
    let (recon, cc1, cc2) = (recon / n, cc1 / n, cc2 / n);
    Ok((recon, cc1, cc2, recon + w.gamma_cc1 * cc1 + w.gamma_cc2 * cc2))
}

/// Epoch bookkeeping shared by both phases: optimizer, schedule, plateau
/// detection and best-state tracking.
struct Runner<'a> {
    cfg: &'a TrainConfig,
    opt: Adam,
    step: u64,
    plateaus: u32,
    since_best: usize,
    best_val: f64,
    best_epoch: usize,
    best_step: u64,
    best_params: Vec<f32>,
    best_buffers: Vec<f32>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a TrainConfig, net: &InterpolationNetwork<f32>, val0: f64) -> Self {
        Runner {
            cfg,
            opt: Adam::new(
                net.count_parameters(),
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
                cfg.weight_decay,
            ),
            step: 0,
            plateaus: 0,
            since_best: 0,
            best_val: val0,
            best_epoch: 0,
            best_step: 0,
            best_params: net.params().values().to_vec(),
            best_buffers: net.buffers().values().to_vec(),
        }
    }

    fn lr(&self) -> f64 {
        lr_schedule(self.step, self.cfg, self.plateaus)
    }

    fn apply(&mut self, net: &mut InterpolationNetwork<f32>, grads: &[f32]) {
        let lr = self.lr();
        self.opt.step(net.params_mut().values_mut(), grads, lr);
        self.step += 1;
    }

    fn end_epoch(&mut self, net: &InterpolationNetwork<f32>, epoch: usize, val: f64) {
        if val < self.best_val || !self.best_val.is_finite() {
            self.best_val = val;
            self.best_epoch = epoch;
            self.best_step = self.step;
            self.best_params.copy_from_slice(net.params().values());
            self.best_buffers.copy_from_slice(net.buffers().values());
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.cfg.plateau_patience.max(1) {
                self.plateaus += 1;
                self.since_best = 0;
            }
        }
    }

    fn finish(
        self,
        net: &mut InterpolationNetwork<f32>,
        log: TrainLog,
        n_train: usize,
        n_val: usize,
    ) -> Result<TrainOutcome> {
        net.load_state(&self.best_params, &self.best_buffers)?;
        Ok(TrainOutcome {
            checkpoint: Checkpoint::from_network(net, Some(self.cfg.clone()), self.best_step),
            log,
            best_epoch: self.best_epoch,
            best_val: self.best_val,
            n_train,
            n_val,
        })
    }
}

fn check_finite(step: u64, lr: f64, parts: &[(&str, f64)]) -> Result<()> {
    if parts.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let components = parts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Error::NonFiniteLoss {
        step,
        lr,
        components,
    })
}

fn check_phase(cfg: &TrainConfig, want: Phase) -> Result<()> {
    cfg.validate()?;
    if cfg.phase != want {
        return Err(Error::Config(format!(
            "expected a {want:?} configuration, got {:?}",
            cfg.phase
        )));
    }
    Ok(())
}

/// Self-supervised training on the combined cycle loss.
pub fn pretrain(
    net: &mut InterpolationNetwork<f32>,
    data: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    pretrain_with(net, data, cfg, |_| {})
}

/// [`pretrain`] with a callback receiving each log row as it is produced.
pub fn pretrain_with(
    net: &mut InterpolationNetwork<f32>,
    data: &[FrameSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&[f64]),
) -> Result<TrainOutcome> {
    check_phase(cfg, Phase::Pretrain)?;
    let samples = pretrain_triplets(data, cfg.subsample_factor);
    if samples.is_empty() {
        return Err(Error::EmptyData(format!(
            "no triplets after subsampling by {}",
            cfg.subsample_factor
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, val) = split(samples, cfg, &mut rng);
    let w = &cfg.loss_weights;
    let bs = cfg.batch_size;

    let mut log = TrainLog::new(&PRETRAIN_COLUMNS);
    let (c1, c2, comb) = eval_cycle(net, &train, bs, w)?;
    let (_, _, val0) = eval_cycle(net, &val, bs, w)?;
    check_finite(0, cfg.lr0, &[("cc1", c1), ("cc2", c2), ("val_combined", val0)])?;
    log.push(vec![0.0, cfg.lr0, c1, c2, comb, val0]);
    on_epoch(log.rows.last().unwrap());

    let mut run = Runner::new(cfg, net, val0);
    let mut grads = net.zero_grads();
    for epoch in 1..=cfg.epochs {
        net.set_mode(Mode::Train);
        train.shuffle(&mut rng);
        let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
        let mut lr = run.lr();
        for chunk in train.chunks(bs) {
            let items: Vec<TripletSample> = chunk
                .iter()
                .map(|t| augment_reverse(t.clone(), rng.random::<f64>(), cfg.reverse_probability))
                .collect();
            let [i0, i1, i2] = triplet_batch(&items);
            grads.iter_mut().for_each(|g| *g = 0.0);
            let l = combined_loss_backward(net, i0.view(), i1.view(), i2.view(), w, &mut grads)?;
            lr = run.lr();
            check_finite(run.step, lr, &[("cc1", l.cc1), ("cc2", l.cc2), ("combined", l.combined)])?;
            run.apply(net, &grads);
            let k = chunk.len() as f64;
            s1 += k * l.cc1;
            s2 += k * l.cc2;
            n += k;
        }
        let (c1, c2) = (s1 / n, s2 / n);
        let (_, _, v) = eval_cycle(net, &val, bs, w)?;
        check_finite(run.step, lr, &[("val_combined", v)])?;
        log.push(vec![epoch as f64, lr, c1, c2, w.lambda_cc1 * c1 + w.lambda_cc2 * c2, v]);
        on_epoch(log.rows.last().unwrap());
        run.end_epoch(net, epoch, v);
    }
    net.set_mode(Mode::Eval);
    run.finish(net, log, train.len(), val.len())
}

/// Supervised fine-tuning with the cycle terms as a regularizer. With
/// `start` the network is first loaded from the checkpoint, which must
/// match its architecture; otherwise training starts from the network's
/// current weights.
pub fn finetune(
    net: &mut InterpolationNetwork<f32>,
    start: Option<&Checkpoint>,
    data: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    finetune_with(net, start, data, cfg, |_| {})
}

pub fn finetune_with(
    net: &mut InterpolationNetwork<f32>,
    start: Option<&Checkpoint>,
    data: &[FrameSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&[f64]),
) -> Result<TrainOutcome> {
    if let Some(ckpt) = start {
        ckpt.restore_into(net)?;
    }
    check_phase(cfg, Phase::Finetune)?;
    let samples = finetune_samples(data);
    if samples.is_empty() {
        return Err(Error::EmptyData(
            "fine-tuning needs sequences of at least 7 frames".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, val) = split(samples, cfg, &mut rng);
    let w = &cfg.loss_weights;
    let bs = cfg.batch_size;

    let mut log = TrainLog::new(&FINETUNE_COLUMNS);
    let (r, c1, c2, t) = eval_finetune(net, &train, bs, w)?;
    let (_, _, _, val0) = eval_finetune(net, &val, bs, w)?;
    check_finite(0, cfg.lr0, &[("recon", r), ("cc1", c1), ("cc2", c2), ("val_total", val0)])?;
    log.push(vec![0.0, cfg.lr0, r, c1, c2, t, val0]);
    on_epoch(log.rows.last().unwrap());

    let mut run = Runner::new(cfg, net, val0);
    let mut grads = net.zero_grads();
    for epoch in 1..=cfg.epochs {
        net.set_mode(Mode::Train);
        train.shuffle(&mut rng);
        let (mut sr, mut s1, mut s2, mut n) = (0.0, 0.0, 0.0, 0.0);
        let mut lr = run.lr();
        for chunk in train.chunks(bs) {
            let items: Vec<FinetuneSample> = chunk
                .iter()
                .map(|s| {
                    let draw = rng.random::<f64>();
                    FinetuneSample {
                        quad: augment_reverse(s.quad.clone(), draw, cfg.reverse_probability),
                        coarse: augment_reverse(s.coarse.clone(), draw, cfg.reverse_probability),
                    }
                })
                .collect();
            let a = batch(items.iter().map(|s| &s.quad.in_a));
            let b = batch(items.iter().map(|s| &s.quad.in_b));
            let g1 = batch(items.iter().map(|s| &s.quad.gt_1));
            let g2 = batch(items.iter().map(|s| &s.quad.gt_2));
            let coarse: Vec<TripletSample> = items.iter().map(|s| s.coarse.clone()).collect();
            let [c0, c1, c2] = triplet_batch(&coarse);
            grads.iter_mut().for_each(|g| *g = 0.0);
            let l = finetune_loss_backward(
                net,
                FinetuneBatch {
                    in_a: a.view(),
                    in_b: b.view(),
                    gt_1: g1.view(),
                    gt_2: g2.view(),
                    c0: c0.view(),
                    c1: c1.view(),
                    c2: c2.view(),
                },
                w,
                &mut grads,
            )?;
            lr = run.lr();
            check_finite(
                run.step,
                lr,
                &[("recon", l.recon), ("cc1", l.cc1), ("cc2", l.cc2), ("total", l.total)],
            )?;
            run.apply(net, &grads);
            let k = chunk.len() as f64;
            sr += k * l.recon;
            s1 += k * l.cc1;
            s2 += k * l.cc2;
            n += k;
        }
        let (r, c1, c2) = (sr / n, s1 / n, s2 / n);
        let (_, _, _, v) = eval_finetune(net, &val, bs, w)?;
        check_finite(run.step, lr, &[("val_total", v)])?;
        log.push(vec![
            epoch as f64,
            lr,
            r,
            c1,
            c2,
            r + w.gamma_cc1 * c1 + w.gamma_cc2 * c2,
            v,
        ]);
        on_epoch(log.rows.last().unwrap());
        run.end_epoch(net, epoch, v);
    }
    net.set_mode(Mode::Eval);
    run.finish(net, log, train.len(), val.len())
}

//! Dual cycle-consistency: the two-stage composition of the interpolator
//! over a frame triplet, the self-supervised loss terms built from it, and
//! their gradients with respect to the network parameters.
//!
//! Times are measured in units of the input spacing, with `i0` at 0, `i1`
//! at 1 and `i2` at 2. The interpolator maps frames at `(a, b)` to frames at
//! `a + (b - a)/3` and `a + 2(b - a)/3`.

use ndarray::{Array3, Array4, ArrayView4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{InterpolationNetwork, Mode, NetTape, Real};
use crate::seqdata::TripletSample;

/// Anything that maps a batch of frame pairs (`N × C × H × W` each) to the
/// two frames at one and two thirds of the way between them.
pub trait Interpolator<S: Real> {
    fn predict(&self, a: ArrayView4<S>, b: ArrayView4<S>) -> Result<(Array4<S>, Array4<S>)>;
}

impl<S: Real> Interpolator<S> for InterpolationNetwork<S> {
    fn predict(&self, a: ArrayView4<S>, b: ArrayView4<S>) -> Result<(Array4<S>, Array4<S>)> {
        self.forward_batch(a, b)
    }
}

impl<S: Real, F> Interpolator<S> for F
where
    F: Fn(ArrayView4<S>, ArrayView4<S>) -> (Array4<S>, Array4<S>),
{
    fn predict(&self, a: ArrayView4<S>, b: ArrayView4<S>) -> Result<(Array4<S>, Array4<S>)> {
        if a.dim() != b.dim() {
            return Err(Error::shape(a.dim(), b.dim()));
        }
        Ok(self(a, b))
    }
}

/// Predictions from the two consecutive input pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOne<S = f32> {
    pub at_1_3: Array4<S>,
    pub at_2_3: Array4<S>,
    pub at_4_3: Array4<S>,
    pub at_5_3: Array4<S>,
}

/// Predictions from re-interpolating the stage-one outputs:
/// `(at_2_3, at_1_from_left) = M(at_1_3, at_4_3)` and
/// `(at_1_from_right, at_4_3) = M(at_2_3, at_5_3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTwo<S = f32> {
    pub at_2_3: Array4<S>,
    pub at_1_from_left: Array4<S>,
    pub at_1_from_right: Array4<S>,
    pub at_4_3: Array4<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagePredictions<S = f32> {
    pub stage1: StageOne<S>,
    pub stage2: StageTwo<S>,
}

impl<S: Real> StageOne<S> {
    pub fn frames(&self) -> [&Array4<S>; 4] {
        [&self.at_1_3, &self.at_2_3, &self.at_4_3, &self.at_5_3]
    }
}

impl<S: Real> StageTwo<S> {
    pub fn frames(&self) -> [&Array4<S>; 4] {
        [
            &self.at_2_3,
            &self.at_1_from_left,
            &self.at_1_from_right,
            &self.at_4_3,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cc1: f64,
    pub lambda_cc2: f64,
    pub gamma_cc1: f64,
    pub gamma_cc2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cc1: 0.65,
            lambda_cc2: 0.35,
            gamma_cc1: 0.5,
            gamma_cc2: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_cc1", self.lambda_cc1),
            ("lambda_cc2", self.lambda_cc2),
            ("gamma_cc1", self.gamma_cc1),
            ("gamma_cc2", self.gamma_cc2),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-element mean absolute error.
pub fn mae<S: Real>(a: &Array4<S>, b: &Array4<S>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "mae operands differ in shape");
    let n = a.len().max(1) as f64;
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y).as_f64().abs())
        / n
}

fn stack3<S: Real>(frame: &Array3<S>) -> ArrayView4<'_, S> {
    frame.view().insert_axis(Axis(0))
}

/// Run both stages on a batch of triplets.
pub fn dual_cycle_batch<S: Real, M: Interpolator<S> + ?Sized>(
    model: &M,
    i0: ArrayView4<S>,
    i1: ArrayView4<S>,
    i2: ArrayView4<S>,
) -> Result<StagePredictions<S>> {
    if i0.dim() != i1.dim() || i1.dim() != i2.dim() {
        return Err(Error::shape(i0.dim(), if i0.dim() != i1.dim() { i1.dim() } else { i2.dim() }));
    }
    let (a1, a2) = model.predict(i0, i1)?;
    let (b1, b2) = model.predict(i1, i2)?;
    let (c1, c2) = model.predict(a1.view(), b1.view())?;
    let (d1, d2) = model.predict(a2.view(), b2.view())?;
    Ok(StagePredictions {
        stage1: StageOne {
            at_1_3: a1,
            at_2_3: a2,
            at_4_3: b1,
            at_5_3: b2,
        },
        stage2: StageTwo {
            at_2_3: c1,
            at_1_from_left: c2,
            at_1_from_right: d1,
            at_4_3: d2,
        },
    })
}

/// Run both stages on one triplet. The predictions carry a leading batch
/// axis of length 1.
pub fn dual_cycle_forward<M: Interpolator<f32> + ?Sized>(
    model: &M,
    triplet: &TripletSample,
) -> Result<StagePredictions<f32>> {
    dual_cycle_batch(model, stack3(&triplet.i0), stack3(&triplet.i1), stack3(&triplet.i2))
}

/// Both stage-two estimates of the middle frame against the true one.
/// Not halved.
pub fn cc1_loss<S: Real>(sp: &StagePredictions<S>, i1: &Array4<S>) -> f64 {
    mae(i1, &sp.stage2.at_1_from_left) + mae(i1, &sp.stage2.at_1_from_right)
}

/// Stage-two side predictions against their stage-one counterparts,
/// averaged over the two sides.
pub fn cc2_loss<S: Real>(sp: &StagePredictions<S>) -> f64 {
    0.5 * (mae(&sp.stage1.at_2_3, &sp.stage2.at_2_3) + mae(&sp.stage1.at_4_3, &sp.stage2.at_4_3))
}

pub fn combined_loss<S: Real>(sp: &StagePredictions<S>, i1: &Array4<S>, w: &LossWeights) -> f64 {
    w.lambda_cc1 * cc1_loss(sp, i1) + w.lambda_cc2 * cc2_loss(sp)
}

/// Mean of the two per-frame reconstruction errors.
pub fn reconstruction_loss<S: Real>(pred: (&Array4<S>, &Array4<S>), gt: (&Array4<S>, &Array4<S>)) -> f64 {
    0.5 * (mae(pred.0, gt.0) + mae(pred.1, gt.1))
}

/// Supervised reconstruction plus the cycle terms weighted by the
/// fine-tuning coefficients.
pub fn finetune_loss<S: Real>(
    pred: (&Array4<S>, &Array4<S>),
    gt: (&Array4<S>, &Array4<S>),
    sp: &StagePredictions<S>,
    i1: &Array4<S>,
    w: &LossWeights,
) -> f64 {
    reconstruction_loss(pred, gt) + w.gamma_cc1 * cc1_loss(sp, i1) + w.gamma_cc2 * cc2_loss(sp)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CycleLosses {
    pub cc1: f64,
    pub cc2: f64,
    pub combined: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FinetuneLosses {
    pub recon: f64,
    pub cc1: f64,
    pub cc2: f64,
    pub total: f64,
}

/// Gradient of `scale · mae(p, q)` with respect to `p`; the gradient with
/// respect to `q` is its negation.
fn mae_grad<S: Real>(p: &Array4<S>, q: &Array4<S>, scale: f64) -> Array4<S> {
    let k = S::lit(scale / p.len().max(1) as f64);
    Zip::from(p).and(q).map_collect(|&a, &b| {
        if a > b {
            k
        } else if a < b {
            -k
        } else {
            S::zero()
        }
    })
}

struct CycleTapes<S> {
    sp: StagePredictions<S>,
    tapes: [NetTape<S>; 4],
}

fn cycle_recorded<S: Real>(
    net: &InterpolationNetwork<S>,
    i0: ArrayView4<S>,
    i1: ArrayView4<S>,
    i2: ArrayView4<S>,
) -> Result<CycleTapes<S>> {
    let (a1, a2, ta) = net.forward_recorded(i0, i1)?;
    let (b1, b2, tb) = net.forward_recorded(i1, i2)?;
    let (c1, c2, tc) = net.forward_recorded(a1.view(), b1.view())?;
    let (d1, d2, td) = net.forward_recorded(a2.view(), b2.view())?;
    Ok(CycleTapes {
        sp: StagePredictions {
            stage1: StageOne {
                at_1_3: a1,
                at_2_3: a2,
                at_4_3: b1,
                at_5_3: b2,
            },
            stage2: StageTwo {
                at_2_3: c1,
                at_1_from_left: c2,
                at_1_from_right: d1,
                at_4_3: d2,
            },
        },
        tapes: [ta, tb, tc, td],
    })
}

/// Backpropagate `w_cc1 · cc1 + w_cc2 · cc2` through all four calls.
fn cycle_backward<S: Real>(
    net: &InterpolationNetwork<S>,
    ct: &CycleTapes<S>,
    i1: &Array4<S>,
    w_cc1: f64,
    w_cc2: f64,
    grads: &mut [S],
) {
    let (s1, s2) = (&ct.sp.stage1, &ct.sp.stage2);
    let d_left = mae_grad(&s2.at_1_from_left, i1, w_cc1);
    let d_right = mae_grad(&s2.at_1_from_right, i1, w_cc1);
    let d_c1 = mae_grad(&s2.at_2_3, &s1.at_2_3, 0.5 * w_cc2);
    let d_d2 = mae_grad(&s2.at_4_3, &s1.at_4_3, 0.5 * w_cc2);

    let (da1, db1_from_c) = net.backward(&ct.tapes[2], &d_c1, &d_left, grads);
    let (da2_from_d, db2) = net.backward(&ct.tapes[3], &d_right, &d_d2, grads);
    let da2 = da2_from_d - &d_c1;
    let db1 = db1_from_c - &d_d2;
    net.backward(&ct.tapes[0], &da1, &da2, grads);
    net.backward(&ct.tapes[1], &db1, &db2, grads);
}

fn absorb_all<S: Real>(net: &mut InterpolationNetwork<S>, tapes: &[NetTape<S>]) {
    for t in tapes {
        net.absorb_batch_stats(t);
    }
}

/// One self-supervised training step on a triplet batch: accumulates the
/// gradient of the combined cycle loss into `grads` and folds batch
/// statistics into the running statistics.
pub fn combined_loss_backward<S: Real>(
    net: &mut InterpolationNetwork<S>,
    i0: ArrayView4<S>,
    i1: ArrayView4<S>,
    i2: ArrayView4<S>,
    w: &LossWeights,
    grads: &mut [S],
) -> Result<CycleLosses> {
    let ct = cycle_recorded(net, i0, i1, i2)?;
    let i1 = i1.to_owned();
    let cc1 = cc1_loss(&ct.sp, &i1);
    let cc2 = cc2_loss(&ct.sp);
    cycle_backward(net, &ct, &i1, w.lambda_cc1, w.lambda_cc2, grads);
    absorb_all(net, &ct.tapes);
    Ok(CycleLosses {
        cc1,
        cc2,
        combined: w.lambda_cc1 * cc1 + w.lambda_cc2 * cc2,
    })
}

/// Batched inputs of one fine-tuning step: quadruple inputs and targets
/// plus the coarse triplet feeding the cycle terms.
#[derive(Clone, Copy, Debug)]
pub struct FinetuneBatch<'a, S> {
    pub in_a: ArrayView4<'a, S>,
    pub in_b: ArrayView4<'a, S>,
    pub gt_1: ArrayView4<'a, S>,
    pub gt_2: ArrayView4<'a, S>,
    pub c0: ArrayView4<'a, S>,
    pub c1: ArrayView4<'a, S>,
    pub c2: ArrayView4<'a, S>,
}

/// One fine-tuning step; see [`combined_loss_backward`].
pub fn finetune_loss_backward<S: Real>(
    net: &mut InterpolationNetwork<S>,
    batch: FinetuneBatch<'_, S>,
    w: &LossWeights,
    grads: &mut [S],
) -> Result<FinetuneLosses> {
    let (p1, p2, tq) = net.forward_recorded(batch.in_a, batch.in_b)?;
    let (g1, g2) = (batch.gt_1.to_owned(), batch.gt_2.to_owned());
    if p1.dim() != g1.dim() || p2.dim() != g2.dim() {
        return Err(Error::shape(p1.dim(), g1.dim()));
    }
    let recon = reconstruction_loss((&p1, &p2), (&g1, &g2));
    let d1 = mae_grad(&p1, &g1, 0.5);
    let d2 = mae_grad(&p2, &g2, 0.5);
    net.backward(&tq, &d1, &d2, grads);

    let ct = cycle_recorded(net, batch.c0, batch.c1, batch.c2)?;
    let i1 = batch.c1.to_owned();
    let cc1 = cc1_loss(&ct.sp, &i1);
    let cc2 = cc2_loss(&ct.sp);
    if w.gamma_cc1 != 0.0 || w.gamma_cc2 != 0.0 {
        cycle_backward(net, &ct, &i1, w.gamma_cc1, w.gamma_cc2, grads);
    }
    net.absorb_batch_stats(&tq);
    absorb_all(net, &ct.tapes);
    Ok(FinetuneLosses {
        recon,
        cc1,
        cc2,
        total: recon + w.gamma_cc1 * cc1 + w.gamma_cc2 * cc2,
    })
}

/// Combined loss of a network on a triplet batch without touching any
/// state, using the same normalization statistics as a training step.
pub fn combined_loss_value<S: Real>(
    net: &InterpolationNetwork<S>,
    i0: ArrayView4<S>,
    i1: ArrayView4<S>,
    i2: ArrayView4<S>,
    w: &LossWeights,
) -> Result<CycleLosses> {
    let sp = if net.mode() == Mode::Train {
        dual_cycle_batch(net, i0, i1, i2)?
    } else {
        let mut train = net.clone();
        train.set_mode(Mode::Train);
        dual_cycle_batch(&train, i0, i1, i2)?
    };
    let i1 = i1.to_owned();
    let cc1 = cc1_loss(&sp, &i1);
    let cc2 = cc2_loss(&sp);
    Ok(CycleLosses {
        cc1,
        cc2,
        combined: w.lambda_cc1 * cc1 + w.lambda_cc2 * cc2,
    })
}

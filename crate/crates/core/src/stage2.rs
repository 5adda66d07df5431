//! Stage 2: factor a clip into a static image and per-frame displacements.
//!
//! The objective is
//! `w_r * mse(V, W(I, D)) + w_d * mean_t TV(D_t) + w_i * TV(I) + w_s * mse(V_0, I)`
//! where `W` is the backward bilinear warp of [`crate::warp`]. `I` is kept in
//! `(0, 1)` through a logistic, `D` is optimized directly in pixels and
//! clamped to the frame size after every step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, ParamStats, Result};
use crate::loss::{mse, mse_grad, total_variation, total_variation_grad};
use crate::net::{KernelRef, NetworkAdapter};
use crate::optim::{Adam, AdamParams};
use crate::rng::RandomSource;
use crate::stage1::{self, logistic, AugmentDraw, Stage1Config};
use crate::tensor::{DeformationSequence, StaticFactor, VideoTensor};
use crate::warp::{warp_sequence, warp_sequence_backward};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

const STREAM_STATIC: u64 = 2;
const STREAM_DEFORM: u64 = 3;

/// Standard deviation, in pixels, of the initial displacements.
pub const DEFORM_INIT_STD: f32 = 0.01;

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LossWeights {
    pub recon: f64,
    pub smooth_deform: f64,
    pub smooth_static: f64,
    pub static_similarity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            smooth_deform: 0.1,
            smooth_static: 0.1,
            static_similarity: 1.0,
        }
    }
}

impl LossWeights {
    pub fn recon_only() -> Self {
        LossWeights {
            recon: 1.0,
            smooth_deform: 0.0,
            smooth_static: 0.0,
            static_similarity: 0.0,
        }
    }
}

/// Stage-2 hyperparameters. Defaults: Adam at learning rate 0.1 for 2000
/// steps with [`LossWeights::default`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Stage2Config {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub w_recon: f64,
    pub w_smooth_deform: f64,
    pub w_smooth_static: f64,
    pub w_static: f64,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        let w = LossWeights::default();
        Stage2Config {
            steps: 2000,
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            w_recon: w.recon,
            w_smooth_deform: w.smooth_deform,
            w_smooth_static: w.smooth_static,
            w_static: w.static_similarity,
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("stage-2 steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("stage-2 learning rate must be > 0"));
        }
        let w = self.weights();
        for (name, v) in [
            ("w_recon", w.recon),
            ("w_smooth_deform", w.smooth_deform),
            ("w_smooth_static", w.smooth_static),
            ("w_static", w.static_similarity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam moments must lie in [0, 1) and epsilon must be > 0"));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            recon: self.w_recon,
            smooth_deform: self.w_smooth_deform,
            smooth_static: self.w_smooth_static,
            static_similarity: self.w_static,
        }
    }

    pub fn with_weights(mut self, w: LossWeights) -> Self {
        self.w_recon = w.recon;
        self.w_smooth_deform = w.smooth_deform;
        self.w_smooth_static = w.smooth_static;
        self.w_static = w.static_similarity;
        self
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Unweighted loss terms. `activation` is only used by the single-stage
/// baseline, where it replaces `recon` and enters with unit weight.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LossComponents {
    pub recon: f64,
    pub smooth_deform: f64,
    pub smooth_static: f64,
    pub static_similarity: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub activation: f64,
}

impl LossComponents {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.recon * self.recon
            + w.smooth_deform * self.smooth_deform
            + w.smooth_static * self.smooth_static
            + w.static_similarity * self.static_similarity
            + self.activation
    }
}

/// Per-step loss history. Entry `i < steps` is evaluated before update `i`;
/// the last entry is evaluated on the returned factors.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LossTrace {
    pub total: Vec<f64>,
    pub components: Vec<LossComponents>,
}

impl LossTrace {
    fn push(&mut self, total: f64, c: LossComponents) {
        self.total.push(total);
        self.components.push(c);
    }

    pub fn last(&self) -> Option<f64> {
        self.total.last().copied()
    }
}

/// Output of a decomposition run.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub static_factor: StaticFactor,
    pub deform: DeformationSequence,
    pub trace: LossTrace,
}

impl Decomposition {
    pub fn reconstruction(&self) -> Result<VideoTensor> {
        warp_sequence(&self.static_factor, &self.deform)
    }
}

fn check_factors(v: &VideoTensor, i: &StaticFactor, d: &DeformationSequence) -> Result<()> {
    let [t, h, w, c] = v.shape();
    if i.shape() != [h, w, c] {
        return Err(Error::invalid(format!(
            "static factor is {:?}, video frames are {:?}",
            i.shape(),
            [h, w, c]
        )));
    }
    if d.shape() != [t, h, w, 2] {
        return Err(Error::invalid(format!(
            "deformation is {:?}, video needs {:?}",
            d.shape(),
            [t, h, w, 2]
        )));
    }
    Ok(())
}

/// `mse(V, W(I, D))`.
pub fn reconstruction_loss(v: &VideoTensor, i: &StaticFactor, d: &DeformationSequence) -> Result<f64> {
    check_factors(v, i, d)?;
    mse(v.data(), warp_sequence(i, d)?.data())
}

/// `(mean_t TV(D_t), TV(I))`.
pub fn smoothness_losses(i: &StaticFactor, d: &DeformationSequence) -> Result<(f64, f64)> {
    let [h, w, c] = i.shape();
    let mut tv_d = 0.0;
    for t in 0..d.frames() {
        tv_d += total_variation(d.field(t), d.height(), d.width(), 2)?;
    }
    Ok((tv_d / d.frames().max(1) as f64, total_variation(i.data(), h, w, c)?))
}

/// `mse(V_0, I)`.
pub fn static_similarity_loss(v: &VideoTensor, i: &StaticFactor) -> Result<f64> {
    let [_, h, w, c] = v.shape();
    if i.shape() != [h, w, c] {
        return Err(Error::invalid("static factor does not match the video frame"));
    }
    mse(v.frame(0), i.data())
}

/// The full weighted stage-2 objective and its parts.
pub fn stage2_loss(v: &VideoTensor, i: &StaticFactor, d: &DeformationSequence, w: &LossWeights) -> Result<(f64, LossComponents)> {
    let (smooth_deform, smooth_static) = smoothness_losses(i, d)?;
    let c = LossComponents {
        recon: reconstruction_loss(v, i, d)?,
        smooth_deform,
        smooth_static,
        static_similarity: static_similarity_loss(v, i)?,
        activation: 0.0,
    };
    Ok((c.weighted_total(w), c))
}

/// Adds the gradients of the two smoothness terms.
fn smoothness_grads(
    i: &StaticFactor,
    d: &DeformationSequence,
    w: &LossWeights,
    gi: &mut [f32],
    gd: &mut [f32],
) -> Result<()> {
    let [h, wd, c] = i.shape();
    total_variation_grad(i.data(), h, wd, c, w.smooth_static, gi)?;
    let fl = d.field_len();
    let scale = w.smooth_deform / d.frames() as f64;
    for t in 0..d.frames() {
        total_variation_grad(d.field(t), h, wd, 2, scale, &mut gd[t * fl..(t + 1) * fl])?;
    }
    Ok(())
}

/// Loss, components and gradients with respect to the values of `I` and `D`.
pub fn stage2_loss_grad(
    v: &VideoTensor,
    i: &StaticFactor,
    d: &DeformationSequence,
    w: &LossWeights,
) -> Result<(f64, LossComponents, Vec<f32>, Vec<f32>)> {
    check_factors(v, i, d)?;
    let recon = warp_sequence(i, d)?;
    let mut grad_video = vec![0.0; recon.data().len()];
    mse_grad(recon.data(), v.data(), w.recon, &mut grad_video)?;
    let (mut gi, mut gd) = warp_sequence_backward(i, d, &grad_video)?;
    smoothness_grads(i, d, w, &mut gi, &mut gd)?;
    mse_grad(i.data(), v.frame(0), w.static_similarity, &mut gi)?;
    let (smooth_deform, smooth_static) = smoothness_losses(i, d)?;
    let c = LossComponents {
        recon: mse(v.data(), recon.data())?,
        smooth_deform,
        smooth_static,
        static_similarity: mse(v.frame(0), i.data())?,
        activation: 0.0,
    };
    Ok((c.weighted_total(w), c, gi, gd))
}

/// Optimizer state shared by both decomposition variants.
struct Factors {
    shape: [usize; 4],
    raw_static: Vec<f32>,
    deform: Vec<f32>,
    adam_static: Adam,
    adam_deform: Adam,
}

impl Factors {
    fn init(shape: [usize; 4], cfg: &Stage2Config) -> Self {
        let [t, h, w, c] = shape;
        let mut raw_static = vec![0.0; h * w * c];
        RandomSource::substream(cfg.seed, STREAM_STATIC).fill_normal(&mut raw_static, 1.0);
        let mut deform = vec![0.0; t * h * w * 2];
        RandomSource::substream(cfg.seed, STREAM_DEFORM).fill_normal(&mut deform, DEFORM_INIT_STD);
        Factors {
            shape,
            adam_static: Adam::new(cfg.adam(), raw_static.len()),
            adam_deform: Adam::new(cfg.adam(), deform.len()),
            raw_static,
            deform,
        }
    }

    fn static_factor(&self) -> StaticFactor {
        let [_, h, w, c] = self.shape;
        StaticFactor::from_parts_unchecked(h, w, c, self.raw_static.iter().map(|&x| logistic(x)).collect())
    }

    fn deformation(&self) -> DeformationSequence {
        let [t, h, w, _] = self.shape;
        DeformationSequence::from_parts_unchecked(t, h, w, self.deform.clone())
    }

    fn non_finite(&self, stage: &'static str, step: usize) -> Error {
        let mut all = self.raw_static.clone();
        all.extend_from_slice(&self.deform);
        Error::NonFinite {
            stage,
            step,
            stats: ParamStats::of(&all),
        }
    }

    /// One Adam step given gradients with respect to the values of `i` and `D`.
    fn update(&mut self, i: &StaticFactor, grad_i: &[f32], grad_d: &[f32]) {
        let grad_raw: Vec<f32> = i.data().iter().zip(grad_i).map(|(&s, &g)| g * s * (1.0 - s)).collect();
        self.adam_static.step(&mut self.raw_static, &grad_raw);
        self.adam_deform.step(&mut self.deform, grad_d);
        let [_, h, w, _] = self.shape;
        for pair in self.deform.chunks_exact_mut(2) {
            pair[0] = pair[0].clamp(-(w as f32), w as f32);
            pair[1] = pair[1].clamp(-(h as f32), h as f32);
        }
    }
}

/// Fits `I` and `D` to `v` by minimizing [`stage2_loss`].
pub fn decompose(v: &VideoTensor, cfg: &Stage2Config) -> Result<Decomposition> {
    cfg.validate()?;
    let w = cfg.weights();
    let mut f = Factors::init(v.shape(), cfg);
    let mut trace = LossTrace::default();
    for step in 0..=cfg.steps {
        let i = f.static_factor();
        let d = f.deformation();
        let (total, comps, gi, gd) = stage2_loss_grad(v, &i, &d, &w)?;
        if !total.is_finite() {
            return Err(f.non_finite("stage2", step));
        }
        trace.push(total, comps);
        if step == cfg.steps {
            return Ok(Decomposition {
                static_factor: i,
                deform: d,
                trace,
            });
        }
        f.update(&i, &gi, &gd);
    }
    unreachable!("the loop returns on its final iteration")
}

/// Single-stage baseline: optimizes `I` and `D` directly against the kernel
/// activation of the augmented clip `W(I, D)`, with the same smoothness terms
/// and a static term tying `I` to the clip's first frame.
///
/// Shape, augmentation and its seed come from `cfg1`; steps, learning rate,
/// weights and the factor initialization come from `cfg2`. `w_recon` is unused.
pub fn decompose_single_stage(
    adapter: &dyn NetworkAdapter,
    k: &KernelRef,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
) -> Result<Decomposition> {
    cfg1.validate()?;
    cfg2.validate()?;
    adapter.resolve(k)?;
    let w = cfg2.weights();
    let shape = cfg1.shape();
    let [_, h, wd, c] = shape;
    let n = h * wd * c;
    let mut f = Factors::init(shape, cfg2);
    let mut aug_rng = RandomSource::substream(cfg1.seed, stage1::STREAM_AUGMENT);
    let mut trace = LossTrace::default();
    for step in 0..=cfg2.steps {
        let i = f.static_factor();
        let d = f.deformation();
        let video = warp_sequence(&i, &d)?;
        let last = step == cfg2.steps;
        let draw = if last {
            AugmentDraw::IDENTITY
        } else {
            AugmentDraw::sample(&mut aug_rng, cfg1)
        };
        let (activation, g_aug) = stage1::activation_loss_grad(adapter, k, &draw.apply(&video))?;
        let mut grad_video = draw.adjoint(shape, &g_aug);
        // Static term mse(W(I, D_0), I) depends on I both directly and
        // through frame 0 of the warp.
        let mut gi = vec![0.0; n];
        mse_grad(video.frame(0), i.data(), w.static_similarity, &mut grad_video[..n])?;
        mse_grad(i.data(), video.frame(0), w.static_similarity, &mut gi)?;
        let (gi_warp, mut gd) = warp_sequence_backward(&i, &d, &grad_video)?;
        for (a, b) in gi.iter_mut().zip(&gi_warp) {
            *a += b;
        }
        smoothness_grads(&i, &d, &w, &mut gi, &mut gd)?;
        let (smooth_deform, smooth_static) = smoothness_losses(&i, &d)?;
        let comps = LossComponents {
            recon: 0.0,
            smooth_deform,
            smooth_static,
            static_similarity: mse(video.frame(0), i.data())?,
            activation,
        };
        let total = comps.weighted_total(&w);
        if !total.is_finite() {
            return Err(f.non_finite("single-stage", step));
        }
        trace.push(total, comps);
        if last {
            return Ok(Decomposition {
                static_factor: i,
                deform: d,
                trace,
            });
        }
        f.update(&i, &gi, &gd);
    }
    unreachable!("the loop returns on its final iteration")
}

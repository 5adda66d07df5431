//! Stage 1: optimize an input video that maximally activates one kernel.
//!
//! The video is parameterized either directly in pixel space through a
//! logistic squashing ([`PixelParameterization`]) or through a scaled 3D
//! spectrum ([`FourierParameterization`], kept for the domain ablation).
//! Each step decodes the video, applies a random shift/roll/rescale
//! augmentation, evaluates [`activation_loss`] and takes an Adam step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, ParamStats, Result};
use crate::fft::{self, Complex};
use crate::net::{KernelRef, NetworkAdapter};
use crate::optim::{Adam, AdamParams};
use crate::rng::RandomSource;
use crate::tensor::{FeatureMap, VideoTensor};
use crate::warp::{sample_frame, sample_frame_backward};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_AUGMENT: u64 = 1;

/// Stage-1 hyperparameters. Defaults: a 16-frame 128x128 RGB clip, Adam at
/// learning rate 0.05 for 1500 steps, shifts of up to 4 px and 1 frame, and
/// rescaling within `[0.95, 1.05]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Stage1Config {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub max_shift_px: u32,
    pub max_time_shift: u32,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Global gain on the Fourier arm's frequency weighting.
    pub fourier_gain: f64,
    /// Keep a decoded snapshot every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            steps: 1500,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            frames: 16,
            height: 128,
            width: 128,
            channels: 3,
            max_shift_px: 4,
            max_time_shift: 1,
            scale_min: 0.95,
            scale_max: 1.05,
            fourier_gain: 1.0,
            checkpoint_every: 250,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("stage-1 steps must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("stage-1 learning rate must be > 0"));
        }
        if !(self.scale_min > 0.0 && self.scale_max < 2.0 && self.scale_min <= self.scale_max) {
            return Err(Error::invalid(format!(
                "scale range [{}, {}] must lie inside (0, 2)",
                self.scale_min, self.scale_max
            )));
        }
        if self.frames < 2 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("stage-1 input needs T >= 2, H >= 1, W >= 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid("stage-1 input needs 1 or 3 channels"));
        }
        if !(self.fourier_gain > 0.0) {
            return Err(Error::invalid("fourier gain must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam moments must lie in [0, 1) and epsilon must be > 0"));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    fn check_adapter(&self, adapter: &dyn NetworkAdapter) -> Result<()> {
        let spec = adapter.input_spec();
        let fixed = [("frames", spec.frames, self.frames), ("height", spec.height, self.height), ("width", spec.width, self.width)];
        for (axis, want, got) in fixed {
            if want.is_some_and(|w| w != got) {
                return Err(Error::invalid(format!("adapter needs {axis} {}, config has {got}", want.unwrap_or(0))));
            }
        }
        if spec.channels != self.channels {
            return Err(Error::invalid(format!("adapter needs {} channels, config has {}", spec.channels, self.channels)));
        }
        Ok(())
    }
}

/// `-sum_t mean_{y,x} f_k(V)[t, y, x]`: the negated per-frame spatial mean
/// of the kernel's response, summed over the response's time axis.
pub fn activation_loss(adapter: &dyn NetworkAdapter, k: &KernelRef, v: &VideoTensor) -> Result<f64> {
    let map = adapter.kernel_response(k, v)?;
    Ok(reduce_response(&map))
}

fn reduce_response(map: &FeatureMap) -> f64 {
    let area = (map.height * map.width) as f64;
    if area == 0.0 {
        return 0.0;
    }
    -map.data.iter().map(|&x| x as f64).sum::<f64>() / area
}

/// [`activation_loss`] together with its gradient with respect to `v`.
pub fn activation_loss_grad(adapter: &dyn NetworkAdapter, k: &KernelRef, v: &VideoTensor) -> Result<(f64, Vec<f32>)> {
    // The loss is linear in the response map, so its map gradient is a
    // constant that does not depend on the forward pass.
    let probe = adapter.kernel_response(k, v);
    let shape = match &probe {
        Ok(map) => map.shape(),
        Err(e) => return Err(e.clone()),
    };
    let area = (shape[1] * shape[2]) as f32;
    let mut grad_map = FeatureMap::zeros(shape[0], shape[1], shape[2]);
    grad_map.data.fill(-1.0 / area);
    let (map, grad) = adapter.kernel_response_vjp(k, v, &grad_map)?;
    Ok((reduce_response(&map), grad))
}

/// One random draw of the augmentation: a temporal roll, an integer
/// spatial shift and an isotropic rescale about the frame center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub time_shift: i64,
    pub shift_x: i64,
    pub shift_y: i64,
    pub scale: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        time_shift: 0,
        shift_x: 0,
        shift_y: 0,
        scale: 1.0,
    };

    pub fn sample(rng: &mut RandomSource, cfg: &Stage1Config) -> Self {
        let mt = cfg.max_time_shift as i64;
        let ms = cfg.max_shift_px as i64;
        AugmentDraw {
            time_shift: rng.int_inclusive(-mt, mt),
            shift_x: rng.int_inclusive(-ms, ms),
            shift_y: rng.int_inclusive(-ms, ms),
            scale: rng.uniform_range(cfg.scale_min, cfg.scale_max),
        }
    }

    fn scale_field(&self, h: usize, w: usize) -> Vec<f32> {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let inv = 1.0 / self.scale;
        let mut field = vec![0.0; h * w * 2];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                field[2 * p] = (cx + (x as f64 - cx) * inv - x as f64) as f32;
                field[2 * p + 1] = (cy + (y as f64 - cy) * inv - y as f64) as f32;
            }
        }
        field
    }

    /// Applies roll, then shift (border replication), then rescale
    /// (bilinear, border replication).
    pub fn apply(&self, v: &VideoTensor) -> VideoTensor {
        let [t_len, h, w, c] = v.shape();
        let n = h * w * c;
        let mut rolled = vec![0.0; v.data().len()];
        for t in 0..t_len {
            let src = (t as i64 - self.time_shift).rem_euclid(t_len as i64) as usize;
            rolled[t * n..(t + 1) * n].copy_from_slice(v.frame(src));
        }
        let mut shifted = if self.shift_x == 0 && self.shift_y == 0 {
            rolled
        } else {
            let mut out = vec![0.0; rolled.len()];
            for t in 0..t_len {
                for y in 0..h {
                    let sy = (y as i64 - self.shift_y).clamp(0, h as i64 - 1) as usize;
                    for x in 0..w {
                        let sx = (x as i64 - self.shift_x).clamp(0, w as i64 - 1) as usize;
                        let dst = t * n + (y * w + x) * c;
                        let src = t * n + (sy * w + sx) * c;
                        out[dst..dst + c].copy_from_slice(&rolled[src..src + c]);
                    }
                }
            }
            out
        };
        if self.scale != 1.0 {
            let field = self.scale_field(h, w);
            let mut out = vec![0.0; shifted.len()];
            for t in 0..t_len {
                sample_frame(&shifted[t * n..(t + 1) * n], h, w, c, &field, &mut out[t * n..(t + 1) * n]);
            }
            shifted = out;
        }
        VideoTensor::from_parts_unchecked(t_len, h, w, c, shifted)
    }

    /// Transpose of [`AugmentDraw::apply`]: maps a gradient on the augmented
    /// clip back onto the original clip.
    pub fn adjoint(&self, shape: [usize; 4], grad: &[f32]) -> Vec<f32> {
        let [t_len, h, w, c] = shape;
        let n = h * w * c;
        let mut g = grad.to_vec();
        if self.scale != 1.0 {
            let field = self.scale_field(h, w);
            let mut back = vec![0.0; g.len()];
            for t in 0..t_len {
                let frame = &g[t * n..(t + 1) * n];
                // Image values do not enter the image gradient of a
                // bilinear sample, so the gradient itself stands in for them.
                sample_frame_backward(frame, h, w, c, &field, frame, &mut back[t * n..(t + 1) * n], None);
            }
            g = back;
        }
        if self.shift_x != 0 || self.shift_y != 0 {
            let mut back = vec![0.0; g.len()];
            for t in 0..t_len {
                for y in 0..h {
                    let sy = (y as i64 - self.shift_y).clamp(0, h as i64 - 1) as usize;
                    for x in 0..w {
                        let sx = (x as i64 - self.shift_x).clamp(0, w as i64 - 1) as usize;
                        let dst = t * n + (y * w + x) * c;
                        let src = t * n + (sy * w + sx) * c;
                        for ci in 0..c {
                            back[src + ci] += g[dst + ci];
                        }
                    }
                }
            }
            g = back;
        }
        let mut back = vec![0.0; g.len()];
        for t in 0..t_len {
            let src = (t as i64 - self.time_shift).rem_euclid(t_len as i64) as usize;
            back[src * n..(src + 1) * n].copy_from_slice(&g[t * n..(t + 1) * n]);
        }
        back
    }
}

/// Draws an augmentation from `rng` and applies it.
pub fn augment(v: &VideoTensor, rng: &mut RandomSource, cfg: &Stage1Config) -> VideoTensor {
    AugmentDraw::sample(rng, cfg).apply(v)
}

/// Logistic squashing kept strictly inside `(0, 1)` in `f32`.
#[inline]
pub(crate) fn logistic(x: f32) -> f32 {
    let s = 1.0 / (1.0 + libm::exp(-(x as f64)));
    (s as f32).clamp(f32::EPSILON / 2.0, 1.0 - f32::EPSILON / 2.0)
}

/// A differentiable map from an unconstrained parameter vector to a clip.
pub trait VideoParameterization {
    fn shape(&self) -> [usize; 4];
    fn decode(&self) -> VideoTensor;
    /// Chain rule: gradient with respect to the parameters given the
    /// gradient with respect to `decoded`.
    fn pullback(&self, decoded: &VideoTensor, grad_video: &[f32]) -> Vec<f32>;
    fn params(&self) -> &[f32];
    fn params_mut(&mut self) -> &mut [f32];
}

/// `V = logistic(raw)` element-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelParameterization {
    shape: [usize; 4],
    raw: Vec<f32>,
}

impl PixelParameterization {
    pub fn new(shape: [usize; 4], raw: Vec<f32>) -> Result<Self> {
        if raw.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid("raw parameter length does not match the shape"));
        }
        Ok(PixelParameterization { shape, raw })
    }

    /// Standard-normal logits.
    pub fn random(shape: [usize; 4], rng: &mut RandomSource) -> Self {
        let mut raw = vec![0.0; shape.iter().product()];
        rng.fill_normal(&mut raw, 1.0);
        PixelParameterization { shape, raw }
    }
}

impl VideoParameterization for PixelParameterization {
    fn shape(&self) -> [usize; 4] {
        self.shape
    }
    fn decode(&self) -> VideoTensor {
        let [t, h, w, c] = self.shape;
        VideoTensor::from_parts_unchecked(t, h, w, c, self.raw.iter().map(|&x| logistic(x)).collect())
    }
    fn pullback(&self, decoded: &VideoTensor, grad_video: &[f32]) -> Vec<f32> {
        decoded.data().iter().zip(grad_video).map(|(&s, &g)| g * s * (1.0 - s)).collect()
    }
    fn params(&self) -> &[f32] {
        &self.raw
    }
    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.raw
    }
}

/// `V = logistic(Re(IFFT3(spectrum * scale)))` per channel, with an
/// orthonormal transform over `(T, H, W)`.
///
/// `scale` weights each frequency by `1 / max(|f|, 1/max(T, H, W))`,
/// normalized to unit RMS and multiplied by a global gain. The spectrum is
/// stored as interleaved `(re, im)` pairs, laid out `[C][T][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierParameterization {
    shape: [usize; 4],
    spectrum: Vec<f32>,
    scale: Vec<f32>,
}

impl FourierParameterization {
    pub fn frequency_scale(dims: [usize; 3], gain: f64) -> Vec<f32> {
        let [t, h, w] = dims;
        let floor = 1.0 / t.max(h).max(w) as f64;
        let mut scale = Vec::with_capacity(t * h * w);
        for ti in 0..t {
            let ft = fft::frequency(ti, t);
            for yi in 0..h {
                let fy = fft::frequency(yi, h);
                for xi in 0..w {
                    let fx = fft::frequency(xi, w);
                    let norm = libm::sqrt(ft * ft + fy * fy + fx * fx).max(floor);
                    scale.push(1.0 / norm);
                }
            }
        }
        let rms = libm::sqrt(scale.iter().map(|s| s * s).sum::<f64>() / scale.len() as f64);
        scale.into_iter().map(|s| (gain * s / rms) as f32).collect()
    }

    pub fn zeros(shape: [usize; 4], gain: f64) -> Self {
        let [t, h, w, c] = shape;
        FourierParameterization {
            shape,
            spectrum: vec![0.0; 2 * t * h * w * c],
            scale: Self::frequency_scale([t, h, w], gain),
        }
    }

    /// Standard-normal real and imaginary parts.
    pub fn random(shape: [usize; 4], gain: f64, rng: &mut RandomSource) -> Self {
        let mut p = Self::zeros(shape, gain);
        rng.fill_normal(&mut p.spectrum, 1.0);
        p
    }

    pub fn scale(&self) -> &[f32] {
        &self.scale
    }

    fn plane(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }
}

impl VideoParameterization for FourierParameterization {
    fn shape(&self) -> [usize; 4] {
        self.shape
    }

    fn decode(&self) -> VideoTensor {
        let [t, h, w, c] = self.shape;
        let plane = self.plane();
        let mut data = vec![0.0; plane * c];
        let mut buf = vec![Complex::ZERO; plane];
        for ci in 0..c {
            let spec = &self.spectrum[2 * ci * plane..2 * (ci + 1) * plane];
            for (i, b) in buf.iter_mut().enumerate() {
                let s = self.scale[i] as f64;
                *b = Complex::new(spec[2 * i] as f64 * s, spec[2 * i + 1] as f64 * s);
            }
            fft::fft_3d(&mut buf, [t, h, w], true);
            for (i, b) in buf.iter().enumerate() {
                data[i * c + ci] = logistic(b.re as f32);
            }
        }
        VideoTensor::from_parts_unchecked(t, h, w, c, data)
    }

    fn pullback(&self, decoded: &VideoTensor, grad_video: &[f32]) -> Vec<f32> {
        let [t, h, w, c] = self.shape;
        let plane = self.plane();
        let mut grad = vec![0.0; self.spectrum.len()];
        let mut buf = vec![Complex::ZERO; plane];
        for ci in 0..c {
            for (i, b) in buf.iter_mut().enumerate() {
                let s = decoded.data()[i * c + ci];
                *b = Complex::new((grad_video[i * c + ci] * s * (1.0 - s)) as f64, 0.0);
            }
            fft::fft_3d(&mut buf, [t, h, w], false);
            let g = &mut grad[2 * ci * plane..2 * (ci + 1) * plane];
            for (i, b) in buf.iter().enumerate() {
                let s = self.scale[i] as f64;
                g[2 * i] = (b.re * s) as f32;
                g[2 * i + 1] = (b.im * s) as f32;
            }
        }
        grad
    }

    fn params(&self) -> &[f32] {
        &self.spectrum
    }
    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.spectrum
    }
}

/// Output of a stage-1 run.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Result {
    /// The decoded, unaugmented video after the last step.
    pub video: VideoTensor,
    /// Loss at every step, evaluated on that step's augmented clip.
    pub loss_trace: Vec<f64>,
    /// `(step, decoded video)` snapshots every `checkpoint_every` steps.
    pub checkpoints: Vec<(usize, VideoTensor)>,
}

/// Runs the stage-1 loop on any parameterization.
pub fn optimize_parameterization<P: VideoParameterization>(
    adapter: &dyn NetworkAdapter,
    k: &KernelRef,
    cfg: &Stage1Config,
    param: &mut P,
) -> Result<Stage1Result> {
    cfg.validate()?;
    cfg.check_adapter(adapter)?;
    adapter.resolve(k)?;
    let shape = param.shape();
    let mut rng = RandomSource::substream(cfg.seed, STREAM_AUGMENT);
    let mut adam = Adam::new(cfg.adam(), param.params().len());
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();
    for step in 0..cfg.steps {
        let video = param.decode();
        let draw = AugmentDraw::sample(&mut rng, cfg);
        let augmented = draw.apply(&video);
        let (loss, grad) = activation_loss_grad(adapter, k, &augmented)?;
        // A rectifier maps NaN to zero, so the loss alone can look healthy.
        if !loss.is_finite() || video.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                stage: "stage1",
                step,
                stats: ParamStats::of(param.params()),
            });
        }
        trace.push(loss);
        let grad_video = draw.adjoint(shape, &grad);
        let grad_params = param.pullback(&video, &grad_video);
        adam.step(param.params_mut(), &grad_params);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push((step + 1, param.decode()));
        }
    }
    Ok(Stage1Result {
        video: param.decode(),
        loss_trace: trace,
        checkpoints,
    })
}

/// Pixel-domain activation maximization from standard-normal logits.
pub fn maximize_input(adapter: &dyn NetworkAdapter, k: &KernelRef, cfg: &Stage1Config) -> Result<Stage1Result> {
    cfg.validate()?;
    let mut rng = RandomSource::substream(cfg.seed, STREAM_INIT);
    let mut param = PixelParameterization::random(cfg.shape(), &mut rng);
    optimize_parameterization(adapter, k, cfg, &mut param)
}

/// Fourier-domain activation maximization (ablation arm).
pub fn maximize_input_fourier(adapter: &dyn NetworkAdapter, k: &KernelRef, cfg: &Stage1Config) -> Result<Stage1Result> {
    cfg.validate()?;
    let mut rng = RandomSource::substream(cfg.seed, STREAM_INIT);
    let mut param = FourierParameterization::random(cfg.shape(), cfg.fourier_gain, &mut rng);
    optimize_parameterization(adapter, k, cfg, &mut param)
}

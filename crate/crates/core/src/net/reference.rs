//! Reference network with handcrafted direction-selective kernels.
//!
//! The first layer carries spatiotemporal Gabor filters whose preferred
//! drift direction and speed are known by construction, so a visualization
//! of those kernels can be checked against ground truth. Deeper layers hold
//! seeded random weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::conv::{Activation, Conv3d, Conv3dStack};
use super::{InputSpec, KernelRef, LayerInfo, NetworkAdapter};
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::{FeatureMap, VideoTensor};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Spatial standard deviation (pixels) of the Gabor envelope. The envelope
/// is flat along time so a zero-speed kernel repeats the same slice.
pub const GABOR_SIGMA: f64 = 1.0;

/// Preferred directions (degrees, counterclockwise from rightward) of the
/// standard net's designated first-layer channels, by channel index.
pub const STANDARD_DIRECTIONS: [f64; 8] = [0.0, 90.0, 180.0, 270.0, 45.0, 135.0, 225.0, 315.0];

const PROBE_FRAMES: usize = 8;
const PROBE_SIZE: usize = 32;
const PROBE_DIRECTIONS: usize = 16;

/// Ground truth attached to one designated channel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Designation {
    pub kernel: KernelRef,
    pub direction_deg: f64,
    pub speed_px_per_frame: f64,
    pub spatial_freq: f64,
}

/// Weights `[in][3][3][3]` of a sine-phase spatiotemporal Gabor drifting
/// toward `direction_deg` (0 = rightward, 90 = screen-up) at
/// `speed_px_per_frame`, split evenly over the input channels.
pub fn make_reference_kernel(
    direction_deg: f64,
    speed_px_per_frame: f64,
    spatial_freq: f64,
    in_channels: usize,
) -> Result<Vec<f32>> {
    if !(spatial_freq > 0.0 && spatial_freq <= 0.5) {
        return Err(Error::invalid(format!(
            "spatial frequency {spatial_freq} is outside (0, 0.5] cycles/px"
        )));
    }
    if !(speed_px_per_frame >= 0.0) || !speed_px_per_frame.is_finite() {
        return Err(Error::invalid(format!("speed {speed_px_per_frame} must be finite and >= 0")));
    }
    if !direction_deg.is_finite() {
        return Err(Error::invalid("direction must be finite"));
    }
    if in_channels == 0 {
        return Err(Error::invalid("reference kernel needs at least one input channel"));
    }
    let theta = direction_deg.to_radians();
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    let mut slice = [0.0f32; 27];
    for t in 0..3 {
        for y in 0..3 {
            for x in 0..3 {
                let (tt, yy, xx) = (t as f64 - 1.0, y as f64 - 1.0, x as f64 - 1.0);
                // y grows downward on screen, so screen-up is -y.
                let phase = xx * c - yy * s - speed_px_per_frame * tt;
                let envelope = libm::exp(-(xx * xx + yy * yy) / (2.0 * GABOR_SIGMA * GABOR_SIGMA));
                slice[(t * 3 + y) * 3 + x] = (envelope * libm::sin(2.0 * PI * spatial_freq * phase)) as f32;
            }
        }
    }
    let share = 1.0 / in_channels as f32;
    Ok((0..in_channels).flat_map(|_| slice.iter().map(move |w| w * share)).collect())
}

/// A full-field grating `0.5 + 0.5 cos(2 pi f (x cos a - y sin a - s t))`
/// drifting toward `direction_deg`.
pub fn drifting_grating(
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    direction_deg: f64,
    speed_px_per_frame: f64,
    spatial_freq: f64,
) -> Result<VideoTensor> {
    let theta = direction_deg.to_radians();
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    VideoTensor::from_fn(frames, height, width, channels, |t, y, x, _| {
        let phase = x as f64 * c - y as f64 * s - speed_px_per_frame * t as f64;
        (0.5 + 0.5 * libm::cos(2.0 * PI * spatial_freq * phase)) as f32
    })
}

/// Mean response of kernel `k` to gratings drifting in `probes` equally
/// spaced directions starting at 0 degrees.
pub fn direction_tuning(
    adapter: &dyn NetworkAdapter,
    k: &KernelRef,
    spatial_freq: f64,
    speed_px_per_frame: f64,
    probes: usize,
) -> Result<Vec<f64>> {
    let channels = adapter.input_spec().channels;
    (0..probes)
        .map(|i| {
            let dir = 360.0 * i as f64 / probes as f64;
            let g = drifting_grating(PROBE_FRAMES, PROBE_SIZE, PROBE_SIZE, channels, dir, speed_px_per_frame, spatial_freq)?;
            Ok(adapter.kernel_response(k, &g)?.mean())
        })
        .collect()
}

/// A [`Conv3dStack`] of `3x3x3` ReLU layers plus ground-truth metadata for
/// its designated channels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ReferenceNet {
    stack: Conv3dStack,
    designations: Vec<Designation>,
}

impl ReferenceNet {
    /// Layers `layer1..layerN` with He-normal weights and zero bias.
    pub fn random(in_channels: usize, channels: &[usize], rng: &mut RandomSource) -> Result<Self> {
        let mut stack = Conv3dStack::new("reference", in_channels);
        let mut cin = in_channels;
        for (i, &cout) in channels.iter().enumerate() {
            let fan_in = cin * 27;
            let mut w = vec![0.0; cout * fan_in];
            rng.fill_normal(&mut w, libm::sqrtf(2.0 / fan_in as f32));
            let conv = Conv3d::new(cin, cout, [3, 3, 3], w, vec![0.0; cout])?;
            stack.push(format!("layer{}", i + 1), conv, Activation::Relu)?;
            cin = cout;
        }
        Ok(ReferenceNet {
            stack,
            designations: Vec::new(),
        })
    }

    /// The default network: RGB input, layers of 8, 16 and 16 channels, and
    /// all eight first-layer channels designated at
    /// [`STANDARD_DIRECTIONS`], 1 px/frame, 0.1 cycles/px.
    pub fn standard(seed: u64) -> Result<Self> {
        let mut rng = RandomSource::new(seed);
        let mut net = Self::random(3, &[8, 16, 16], &mut rng)?;
        for (ch, &dir) in STANDARD_DIRECTIONS.iter().enumerate() {
            net.designate(ch, dir, 1.0, 0.1)?;
        }
        Ok(net)
    }

    /// Installs a Gabor into first-layer channel `channel`, then checks with
    /// a 16-direction grating sweep that the response peaks at the probe
    /// nearest `direction_deg` (modulo 180 degrees for a static kernel).
    pub fn designate(
        &mut self,
        channel: usize,
        direction_deg: f64,
        speed_px_per_frame: f64,
        spatial_freq: f64,
    ) -> Result<KernelRef> {
        let first = self
            .stack
            .layer_stack()
            .first()
            .ok_or_else(|| Error::invalid("network has no layers"))?;
        let layer_id = first.id.clone();
        if channel >= first.conv.out_channels() {
            return Err(Error::NotFound(format!("{layer_id} has no channel {channel}")));
        }
        let weights = make_reference_kernel(direction_deg, speed_px_per_frame, spatial_freq, first.conv.in_channels())?;
        let layer = self.stack.layer_mut(&layer_id).expect("first layer");
        layer.conv.channel_weights_mut(channel).copy_from_slice(&weights);
        layer.conv.set_bias(channel, 0.0);

        let kernel = KernelRef::new(layer_id, channel);
        let curve = direction_tuning(&self.stack, &kernel, spatial_freq, speed_px_per_frame, PROBE_DIRECTIONS)?;
        check_tuning(&curve, direction_deg, speed_px_per_frame == 0.0)?;
        self.designations.retain(|d| d.kernel != kernel);
        self.designations.push(Designation {
            kernel: kernel.clone(),
            direction_deg,
            speed_px_per_frame,
            spatial_freq,
        });
        Ok(kernel)
    }

    pub fn designations(&self) -> &[Designation] {
        &self.designations
    }

    pub fn designation(&self, k: &KernelRef) -> Option<&Designation> {
        self.designations.iter().find(|d| d.kernel.layer_id == k.layer_id && d.kernel.channel == k.channel)
    }

    pub fn stack(&self) -> &Conv3dStack {
        &self.stack
    }

    /// Re-runs the construction-time tuning check on every designation.
    pub fn verify(&self) -> Result<()> {
        for d in &self.designations {
            let curve = direction_tuning(&self.stack, &d.kernel, d.spatial_freq, d.speed_px_per_frame, PROBE_DIRECTIONS)?;
            check_tuning(&curve, d.direction_deg, d.speed_px_per_frame == 0.0)?;
        }
        Ok(())
    }
}

fn check_tuning(curve: &[f64], direction_deg: f64, axial: bool) -> Result<()> {
    let n = curve.len();
    let spacing = 360.0 / n as f64;
    let argmax = curve
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0;
    let period = if axial { 180.0 } else { 360.0 };
    let dist = |i: usize| {
        let d = libm::fmod(libm::fmod(i as f64 * spacing - direction_deg, period) + period, period);
        d.min(period - d)
    };
    let nearest = (0..n).map(dist).fold(f64::INFINITY, f64::min);
    if dist(argmax) > nearest + 1e-9 {
        return Err(Error::invalid(format!(
            "kernel tuned to {direction_deg} deg peaks at probe {} deg instead",
            argmax as f64 * spacing
        )));
    }
    Ok(())
}

impl NetworkAdapter for ReferenceNet {
    fn name(&self) -> &str {
        "reference"
    }
    fn input_spec(&self) -> InputSpec {
        self.stack.input_spec()
    }
    fn layers(&self) -> Vec<LayerInfo> {
        self.stack.layers()
    }
    fn kernel_response(&self, k: &KernelRef, v: &VideoTensor) -> Result<FeatureMap> {
        self.stack.kernel_response(k, v)
    }
    fn kernel_response_vjp(&self, k: &KernelRef, v: &VideoTensor, grad_map: &FeatureMap) -> Result<(FeatureMap, Vec<f32>)> {
        self.stack.kernel_response_vjp(k, v, grad_map)
    }
    fn weights_digest(&self) -> [u8; 32] {
        self.stack.weights_digest()
    }
}


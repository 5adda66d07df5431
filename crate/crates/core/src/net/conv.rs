//! Stride-1, zero-padded ("same") 3D convolutions and stacks of them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use sha2::{Digest, Sha256};

use super::{InputSpec, KernelRef, LayerInfo, NetworkAdapter, Tap};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, VideoTensor};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Identity,
}

/// Weights are laid out `[out][in][kt][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Conv3d {
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    weights: Vec<f32>,
    bias: Vec<f32>,
}

/// Range of output positions whose input tap `pos + offset` lands inside
/// `0..len`.
#[inline]
fn valid(len: usize, offset: isize) -> Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    lo.min(hi)..hi
}

impl Conv3d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel.iter().any(|&k| k % 2 == 0) {
            return Err(Error::invalid(format!("kernel extents must be odd, got {kernel:?}")));
        }
        let per_out = in_channels * kernel.iter().product::<usize>();
        if weights.len() != out_channels * per_out {
            return Err(Error::invalid(format!(
                "conv weights need {} values, got {}",
                out_channels * per_out,
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::invalid("conv bias length must equal the output channel count"));
        }
        Ok(Conv3d {
            in_channels,
            out_channels,
            kernel,
            weights,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Result<Self> {
        let n = out_channels * in_channels * kernel.iter().product::<usize>();
        Self::new(in_channels, out_channels, kernel, vec![0.0; n], vec![0.0; out_channels])
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn kernel(&self) -> [usize; 3] {
        self.kernel
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    fn per_out(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Weights of one output channel, `[in][kt][kh][kw]`.
    pub fn channel_weights(&self, oc: usize) -> &[f32] {
        let n = self.per_out();
        &self.weights[oc * n..(oc + 1) * n]
    }

    pub fn channel_weights_mut(&mut self, oc: usize) -> &mut [f32] {
        let n = self.per_out();
        &mut self.weights[oc * n..(oc + 1) * n]
    }

    pub fn set_bias(&mut self, oc: usize, value: f32) {
        self.bias[oc] = value;
    }

    /// Visits every nonzero tap of channel `oc` together with the
    /// overlapping row segments: `(weight, in_offset, out_offset, len)`.
    fn for_each_segment(&self, dims: [usize; 3], oc: usize, mut f: impl FnMut(usize, f32, usize, usize, usize)) {
        let [t_len, h_len, w_len] = dims;
        let [kt, kh, kw] = self.kernel;
        let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        let plane = t_len * h_len * w_len;
        let w = self.channel_weights(oc);
        for ic in 0..self.in_channels {
            for dt in 0..kt {
                let ot = dt as isize - pt;
                for dy in 0..kh {
                    let oy = dy as isize - ph;
                    for dx in 0..kw {
                        let ox = dx as isize - pw;
                        let weight = w[((ic * kt + dt) * kh + dy) * kw + dx];
                        if weight == 0.0 {
                            continue;
                        }
                        let xr = valid(w_len, ox);
                        if xr.is_empty() {
                            continue;
                        }
                        for t in valid(t_len, ot) {
                            let ti = (t as isize + ot) as usize;
                            for y in valid(h_len, oy) {
                                let yi = (y as isize + oy) as usize;
                                let out_at = (t * h_len + y) * w_len + xr.start;
                                let in_at = ic * plane + (ti * h_len + yi) * w_len + (xr.start as isize + ox) as usize;
                                f(ic, weight, in_at, out_at, xr.len());
                            }
                        }
                    }
                }
            }
        }
    }

    /// Pre-activation response of output channel `oc` for a planar
    /// `(in, T, H, W)` input.
    pub(crate) fn forward_channel(&self, input: &[f32], dims: [usize; 3], oc: usize, out: &mut [f32]) {
        out.fill(self.bias[oc]);
        self.for_each_segment(dims, oc, |_, weight, in_at, out_at, len| {
            let src = &input[in_at..in_at + len];
            let dst = &mut out[out_at..out_at + len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += weight * s;
            }
        });
    }

    /// Adds the input gradient of channel `oc` given the gradient of its
    /// pre-activation response.
    pub(crate) fn backward_channel(&self, grad_out: &[f32], dims: [usize; 3], oc: usize, grad_in: &mut [f32]) {
        self.for_each_segment(dims, oc, |_, weight, in_at, out_at, len| {
            let src = &grad_out[out_at..out_at + len];
            let dst = &mut grad_in[in_at..in_at + len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += weight * s;
            }
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Layer {
    pub id: String,
    pub conv: Conv3d,
    pub activation: Activation,
}

/// A sequential stack of 3D convolutions, each followed by its activation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Conv3dStack {
    name: String,
    in_channels: usize,
    layers: Vec<Layer>,
}

fn to_planar(v: &VideoTensor) -> Vec<f32> {
    let [t, h, w, c] = v.shape();
    let plane = t * h * w;
    let mut out = vec![0.0; plane * c];
    for (i, px) in v.data().chunks_exact(c).enumerate() {
        for (ci, &val) in px.iter().enumerate() {
            out[ci * plane + i] = val;
        }
    }
    out
}

fn from_planar(planar: &[f32], plane: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; plane * c];
    for (i, px) in out.chunks_exact_mut(c).enumerate() {
        for (ci, val) in px.iter_mut().enumerate() {
            *val = planar[ci * plane + i];
        }
    }
    out
}

fn activate(act: Activation, data: &mut [f32]) {
    if act == Activation::Relu {
        for v in data {
            *v = v.max(0.0);
        }
    }
}

impl Conv3dStack {
    pub fn new(name: impl Into<String>, in_channels: usize) -> Self {
        Conv3dStack {
            name: name.into(),
            in_channels,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, conv: Conv3d, activation: Activation) -> Result<()> {
        let id = id.into();
        let expected = self.layers.last().map_or(self.in_channels, |l| l.conv.out_channels());
        if conv.in_channels() != expected {
            return Err(Error::invalid(format!(
                "layer `{id}` takes {} channels but receives {expected}",
                conv.in_channels()
            )));
        }
        if self.layers.iter().any(|l| l.id == id) {
            return Err(Error::invalid(format!("duplicate layer id `{id}`")));
        }
        self.layers.push(Layer { id, conv, activation });
        Ok(())
    }

    pub fn with_layer(mut self, id: impl Into<String>, conv: Conv3d, activation: Activation) -> Result<Self> {
        self.push(id, conv, activation)?;
        Ok(self)
    }

    pub fn layer_stack(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, id: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.id == id)
    }

    fn locate(&self, k: &KernelRef) -> Result<usize> {
        self.resolve(k)?;
        Ok(self.layers.iter().position(|l| l.id == k.layer_id).expect("resolved layer"))
    }

    /// Forward pass through the layers before `target`, keeping each
    /// layer's input (planar). `inputs[i]` feeds layer `i`.
    fn prefix(&self, v: &VideoTensor, target: usize) -> Vec<Vec<f32>> {
        let [t, h, w, _] = v.shape();
        let dims = [t, h, w];
        let plane = t * h * w;
        let mut inputs = Vec::with_capacity(target + 1);
        inputs.push(to_planar(v));
        for layer in &self.layers[..target] {
            let src = inputs.last().expect("input present");
            let mut out = vec![0.0; plane * layer.conv.out_channels()];
            for (oc, chunk) in out.chunks_exact_mut(plane).enumerate() {
                layer.conv.forward_channel(src, dims, oc, chunk);
            }
            activate(layer.activation, &mut out);
            inputs.push(out);
        }
        inputs
    }

    fn evaluate(&self, k: &KernelRef, v: &VideoTensor, grad_map: Option<&FeatureMap>) -> Result<(FeatureMap, Option<Vec<f32>>)> {
        self.input_spec().check(v)?;
        let li = self.locate(k)?;
        let [t, h, w, c] = v.shape();
        let dims = [t, h, w];
        let plane = t * h * w;
        let inputs = self.prefix(v, li);
        let layer = &self.layers[li];
        let mut pre = vec![0.0; plane];
        layer.conv.forward_channel(&inputs[li], dims, k.channel, &mut pre);
        let rectified = layer.activation == Activation::Relu && k.tap == Tap::Post;
        let mut response = pre.clone();
        if rectified {
            activate(Activation::Relu, &mut response);
        }
        let map = FeatureMap {
            frames: t,
            height: h,
            width: w,
            data: response,
        };
        let Some(grad_map) = grad_map else {
            return Ok((map, None));
        };
        if grad_map.shape() != map.shape() {
            return Err(Error::invalid("response gradient does not match the feature map shape"));
        }
        let mut g = grad_map.data.clone();
        if rectified {
            for (gi, &p) in g.iter_mut().zip(&pre) {
                if p <= 0.0 {
                    *gi = 0.0;
                }
            }
        }
        let mut grad = vec![0.0; plane * layer.conv.in_channels()];
        layer.conv.backward_channel(&g, dims, k.channel, &mut grad);
        for l in (0..li).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                // inputs[l + 1] is this layer's rectified output.
                for (gi, &out) in grad.iter_mut().zip(&inputs[l + 1]) {
                    if out <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let mut below = vec![0.0; plane * layer.conv.in_channels()];
            for (oc, chunk) in grad.chunks_exact(plane).enumerate() {
                layer.conv.backward_channel(chunk, dims, oc, &mut below);
            }
            grad = below;
        }
        Ok((map, Some(from_planar(&grad, plane, c))))
    }
}

impl NetworkAdapter for Conv3dStack {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_spec(&self) -> InputSpec {
        InputSpec {
            frames: None,
            height: None,
            width: None,
            channels: self.in_channels,
        }
    }

    fn layers(&self) -> Vec<LayerInfo> {
        self.layers
            .iter()
            .map(|l| LayerInfo {
                id: l.id.clone(),
                channels: l.conv.out_channels(),
            })
            .collect()
    }

    fn kernel_response(&self, k: &KernelRef, v: &VideoTensor) -> Result<FeatureMap> {
        Ok(self.evaluate(k, v, None)?.0)
    }

    fn kernel_response_vjp(&self, k: &KernelRef, v: &VideoTensor, grad_map: &FeatureMap) -> Result<(FeatureMap, Vec<f32>)> {
        let (map, grad) = self.evaluate(k, v, Some(grad_map))?;
        Ok((map, grad.expect("gradient requested")))
    }

    fn weights_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.in_channels as u64).to_le_bytes());
        for layer in &self.layers {
            hasher.update((layer.id.len() as u64).to_le_bytes());
            hasher.update(layer.id.as_bytes());
            hasher.update([match layer.activation {
                Activation::Relu => 1u8,
                Activation::Identity => 0u8,
            }]);
            let conv = &layer.conv;
            for d in [conv.in_channels, conv.out_channels, conv.kernel[0], conv.kernel[1], conv.kernel[2]] {
                hasher.update((d as u64).to_le_bytes());
            }
            for w in conv.weights.iter().chain(&conv.bias) {
                hasher.update(w.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

//! Containers for clips, static factors and deformation fields.
//!
//! Every container is channel-last at the API boundary: videos are
//! `(T, H, W, C)`, static factors `(H, W, C)`, deformations `(T, H, W, 2)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default playback rate attached to new clips. Metadata only.
pub const DEFAULT_FRAME_RATE: f32 = 8.0;

fn check_unit_range(data: &[f32], what: &str) -> Result<()> {
    if let Some((i, v)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::invalid(format!(
            "{what} value {v} at index {i} is outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_len(data: &[f32], shape: &[usize], what: &str) -> Result<()> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::invalid(format!(
            "{what} of shape {shape:?} needs {expected} values, got {}",
            data.len()
        )));
    }
    Ok(())
}

/// A `(T, H, W, C)` clip with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    pub frame_rate_hint: f32,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames < 2 {
            return Err(Error::invalid(format!("video needs T >= 2, got {frames}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("video needs H >= 1 and W >= 1"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "video needs 1 or 3 channels, got {channels}"
            )));
        }
        check_len(&data, &[frames, height, width, channels], "video")?;
        check_unit_range(&data, "video")?;
        Ok(VideoTensor {
            frames,
            height,
            width,
            channels,
            data,
            frame_rate_hint: DEFAULT_FRAME_RATE,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(frames, height, width, channels, vec![value; frames * height * width * channels])
    }

    /// Builds a clip from `f(t, y, x, c)`.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        Self::new(frames, height, width, channels, data)
    }

    /// Wraps data produced by an operation that already guarantees the
    /// invariants (range and shape).
    pub(crate) fn from_parts_unchecked(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), frames * height * width * channels);
        VideoTensor {
            frames,
            height,
            width,
            channels,
            data,
            frame_rate_hint: DEFAULT_FRAME_RATE,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((t * self.height + y) * self.width + x) * self.channels + c]
    }

    /// Frame 0 as a static factor.
    pub fn first_frame(&self) -> StaticFactor {
        StaticFactor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.frame(0).to_vec(),
        }
    }
}

/// A single `(H, W, C)` image with values in `[0, 1]`: the texture that
/// every frame of a decomposition is warped from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StaticFactor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl StaticFactor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("static factor needs nonzero H, W and C"));
        }
        check_len(&data, &[height, width, channels], "static factor")?;
        check_unit_range(&data, "static factor")?;
        Ok(StaticFactor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub(crate) fn from_parts_unchecked(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        StaticFactor {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// `T` displacement fields of shape `(H, W, 2)` in pixel units.
///
/// Channel 0 is the horizontal displacement, channel 1 the vertical one
/// (positive = down). Values are clamped to `|dx| <= W`, `|dy| <= H`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DeformationSequence {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DeformationSequence {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("deformation needs nonzero T, H and W"));
        }
        check_len(&data, &[frames, height, width, 2], "deformation")?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "deformation value at index {i} is not finite"
            )));
        }
        let mut d = DeformationSequence {
            frames,
            height,
            width,
            data,
        };
        d.clamp_to_bounds();
        Ok(d)
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        DeformationSequence {
            frames,
            height,
            width,
            data: vec![0.0; frames * height * width * 2],
        }
    }

    /// Builds a sequence from `f(t, y, x) -> (dx, dy)`.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * 2);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    let (dx, dy) = f(t, y, x);
                    data.push(dx);
                    data.push(dy);
                }
            }
        }
        Self::new(frames, height, width, data)
    }

    pub(crate) fn from_parts_unchecked(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), frames * height * width * 2);
        DeformationSequence {
            frames,
            height,
            width,
            data,
        }
    }

    pub(crate) fn clamp_to_bounds(&mut self) {
        let (w, h) = (self.width as f32, self.height as f32);
        for pair in self.data.chunks_exact_mut(2) {
            pair[0] = pair[0].clamp(-w, w);
            pair[1] = pair[1].clamp(-h, h);
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, 2]
    }
    pub fn field_len(&self) -> usize {
        self.height * self.width * 2
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    /// Field `t` as an interleaved `(H, W, 2)` slice.
    pub fn field(&self, t: usize) -> &[f32] {
        let n = self.field_len();
        &self.data[t * n..(t + 1) * n]
    }
    pub fn at(&self, t: usize, y: usize, x: usize) -> (f32, f32) {
        let i = ((t * self.height + y) * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }
}

/// One kernel's spatiotemporal response map, `(T', H', W')`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            frames,
            height,
            width,
            data: vec![0.0; frames * height * width],
        }
    }
    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }
    pub fn at(&self, t: usize, y: usize, x: usize) -> f32 {
        self.data[(t * self.height + y) * self.width + x]
    }
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

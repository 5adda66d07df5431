//! Frame-to-frame motion of a deformation sequence and its color coding.
//!
//! `D_t` is a backward displacement: frame `t` samples the static image at
//! `p + D_t(p)`. When `D` grows along `+x` the rendered content therefore
//! slides toward `-x`, so the content motion between frames `t` and `t + 1`
//! is `-(D_{t+1} - D_t)`. Directions are reported in screen convention:
//! 0 degrees points right, 90 degrees points up (toward `-y`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::DeformationSequence;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Text identifying the color convention, stored alongside rendered images.
pub const HUE_CONVENTION: &str =
    "hue=atan2(-dy,dx) degrees, 0=right 90=up counter-clockwise; saturation=1; value=min(|d|/vmax,1); hsv hexcone; u8=round(255*x)";

/// `T - 1` displacement fields laid out `(T-1, H, W, 2)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MotionFrameSequence {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl MotionFrameSequence {
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn field(&self, t: usize) -> &[f32] {
        let n = self.height * self.width * 2;
        &self.data[t * n..(t + 1) * n]
    }
    pub fn at(&self, t: usize, y: usize, x: usize) -> (f32, f32) {
        let i = ((t * self.height + y) * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Negated fields: converts a deformation difference into the apparent
    /// motion of image content.
    pub fn content_motion(&self) -> MotionFrameSequence {
        MotionFrameSequence {
            data: self.data.iter().map(|v| -v).collect(),
            ..*self
        }
    }
}

/// `M_t = D_{t+1} - D_t` for `t` in `0..T-1`.
pub fn deformation_diff(d: &DeformationSequence) -> Result<MotionFrameSequence> {
    if d.frames() < 2 {
        return Err(Error::invalid("a deformation diff needs at least two frames"));
    }
    let n = d.field_len();
    let src = d.data();
    let out: Vec<f32> = (0..(d.frames() - 1) * n).map(|i| src[i + n] - src[i]).collect();
    Ok(MotionFrameSequence {
        frames: d.frames() - 1,
        height: d.height(),
        width: d.width(),
        data: out,
    })
}

/// How flow magnitudes map to brightness.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum FlowNorm {
    /// Divide by the largest magnitude in the field being rendered.
    PerFrameMax,
    /// Divide by a fixed magnitude in pixels; larger values saturate.
    Fixed(f32),
}

/// An 8-bit RGB rendering of one flow field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowImage {
    pub height: usize,
    pub width: usize,
    /// Row-major interleaved RGB.
    pub rgb: Vec<u8>,
    /// The magnitude that maps to full brightness.
    pub max_magnitude: f32,
}

impl FlowImage {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Hexcone HSV to RGB with `h` in degrees and `s`, `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = libm::fmod(h, 360.0);
    let h = if h < 0.0 { h + 360.0 } else { h } / 60.0;
    let sector = libm::floor(h);
    let f = h - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// `round(255 * x)` after clamping to `[0, 1]`.
pub fn unit_to_u8(x: f64) -> u8 {
    libm::round(x.clamp(0.0, 1.0) * 255.0) as u8
}

/// Screen-convention angle of `(dx, dy)` in degrees, in `[0, 360)`.
pub fn flow_angle_deg(dx: f32, dy: f32) -> f64 {
    let a = libm::atan2(-(dy as f64), dx as f64).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else {
        a
    }
}

/// Encodes direction as hue and magnitude as value (see [`HUE_CONVENTION`]).
pub fn flow_to_rgb(field: &[f32], height: usize, width: usize, norm: FlowNorm) -> Result<FlowImage> {
    if field.len() != height * width * 2 {
        return Err(Error::invalid("flow field length does not match H x W x 2"));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("flow field contains non-finite values"));
    }
    let vmax = match norm {
        FlowNorm::Fixed(v) if v > 0.0 && v.is_finite() => v,
        FlowNorm::Fixed(v) => return Err(Error::invalid(alloc::format!("fixed flow norm must be > 0, got {v}"))),
        FlowNorm::PerFrameMax => field
            .chunks_exact(2)
            .map(|p| libm::hypotf(p[0], p[1]))
            .fold(0.0f32, f32::max),
    };
    let mut rgb = vec![0u8; height * width * 3];
    if vmax > 0.0 {
        for (p, out) in field.chunks_exact(2).zip(rgb.chunks_exact_mut(3)) {
            let mag = libm::hypot(p[0] as f64, p[1] as f64);
            let value = (mag / vmax as f64).min(1.0);
            let c = hsv_to_rgb(flow_angle_deg(p[0], p[1]), 1.0, value);
            for (o, x) in out.iter_mut().zip(c) {
                *o = unit_to_u8(x);
            }
        }
    }
    Ok(FlowImage {
        height,
        width,
        rgb,
        max_magnitude: vmax,
    })
}

/// A square legend: each pixel is colored as a flow pointing from the
/// center to that pixel, reaching full brightness at the inscribed circle.
/// Pixels outside the circle are black.
pub fn color_wheel(size: usize) -> FlowImage {
    let c = (size as f32 - 1.0) / 2.0;
    let radius = (size as f32 / 2.0).max(f32::MIN_POSITIVE);
    let mut field = vec![0.0; size * size * 2];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 - c, y as f32 - c);
            if libm::hypotf(dx, dy) <= radius {
                let i = (y * size + x) * 2;
                field[i] = dx;
                field[i + 1] = dy;
            }
        }
    }
    flow_to_rgb(&field, size, size, FlowNorm::Fixed(radius)).expect("legend field is well formed")
}

/// Circular mean of the screen-convention angles of all vectors whose
/// magnitude is at least `min_magnitude`, in degrees in `(-180, 180]`.
/// `None` when no vector qualifies or the angles cancel.
pub fn mean_direction(motion: &MotionFrameSequence, min_magnitude: f32) -> Option<f64> {
    let (mut sx, mut sy, mut count) = (0.0f64, 0.0f64, 0usize);
    for p in motion.data.chunks_exact(2) {
        let mag = libm::hypot(p[0] as f64, p[1] as f64);
        if mag > 0.0 && mag >= min_magnitude as f64 {
            sx += p[0] as f64 / mag;
            sy += -(p[1] as f64) / mag;
            count += 1;
        }
    }
    if count == 0 || libm::hypot(sx, sy) < 1e-9 * count as f64 {
        return None;
    }
    Some(libm::atan2(sy, sx).to_degrees())
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_difference_deg(a: f64, b: f64) -> f64 {
    let d = libm::fmod((a - b).abs(), 360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

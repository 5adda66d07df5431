//! Bilinear backward warping, `V_t(p) = I(p + D_t(p))`.
//!
//! Pixel centers sit on integer coordinates `0..W-1` and `0..H-1`; sample
//! positions outside that box are clamped to it (border replication). The
//! sampler is differentiable in both the image and the displacement, except
//! on the integer lattice where bilinear interpolation has a kink.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{DeformationSequence, StaticFactor, VideoTensor};

/// Axis position after clamping: lower tap, upper tap, fractional weight and
/// whether the coordinate moved freely (`false` when clamped).
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
    free: bool,
}

#[inline]
fn axis_tap(coord: f32, len: usize) -> Tap {
    let max = (len - 1) as f32;
    let (c, free) = if coord < 0.0 {
        (0.0, false)
    } else if coord > max {
        (max, false)
    } else {
        (coord, true)
    };
    if len == 1 {
        return Tap {
            lo: 0,
            hi: 0,
            frac: 0.0,
            free: false,
        };
    }
    let lo = (libm::floorf(c) as usize).min(len - 2);
    Tap {
        lo,
        hi: lo + 1,
        frac: c - lo as f32,
        free,
    }
}

/// Samples `src` (`h x w x ch`) at `p + field(p)` for every pixel `p`.
pub(crate) fn sample_frame(src: &[f32], h: usize, w: usize, ch: usize, field: &[f32], out: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let tx = axis_tap(x as f32 + field[2 * p], w);
            let ty = axis_tap(y as f32 + field[2 * p + 1], h);
            let i00 = (ty.lo * w + tx.lo) * ch;
            let i01 = (ty.lo * w + tx.hi) * ch;
            let i10 = (ty.hi * w + tx.lo) * ch;
            let i11 = (ty.hi * w + tx.hi) * ch;
            let (fx, fy) = (tx.frac, ty.frac);
            for c in 0..ch {
                let top = (1.0 - fx) * src[i00 + c] + fx * src[i01 + c];
                let bottom = (1.0 - fx) * src[i10 + c] + fx * src[i11 + c];
                out[p * ch + c] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
}

/// Accumulates the vector-Jacobian product of [`sample_frame`]: adds
/// `d<grad_out, out>/d src` into `grad_src` and, when given, the derivative
/// with respect to the field into `grad_field`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_frame_backward(
    src: &[f32],
    h: usize,
    w: usize,
    ch: usize,
    field: &[f32],
    grad_out: &[f32],
    grad_src: &mut [f32],
    mut grad_field: Option<&mut [f32]>,
) {
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let tx = axis_tap(x as f32 + field[2 * p], w);
            let ty = axis_tap(y as f32 + field[2 * p + 1], h);
            let i00 = (ty.lo * w + tx.lo) * ch;
            let i01 = (ty.lo * w + tx.hi) * ch;
            let i10 = (ty.hi * w + tx.lo) * ch;
            let i11 = (ty.hi * w + tx.hi) * ch;
            let (fx, fy) = (tx.frac, ty.frac);
            let mut gdx = 0.0f32;
            let mut gdy = 0.0f32;
            for c in 0..ch {
                let g = grad_out[p * ch + c];
                if g == 0.0 {
                    continue;
                }
                grad_src[i00 + c] += g * (1.0 - fx) * (1.0 - fy);
                grad_src[i01 + c] += g * fx * (1.0 - fy);
                grad_src[i10 + c] += g * (1.0 - fx) * fy;
                grad_src[i11 + c] += g * fx * fy;
                let (v00, v01, v10, v11) = (src[i00 + c], src[i01 + c], src[i10 + c], src[i11 + c]);
                gdx += g * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                gdy += g * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            if let Some(gf) = grad_field.as_deref_mut() {
                if tx.free {
                    gf[2 * p] += gdx;
                }
                if ty.free {
                    gf[2 * p + 1] += gdy;
                }
            }
        }
    }
}

fn check_field(image: &StaticFactor, field: &[f32]) -> Result<()> {
    let expected = image.height() * image.width() * 2;
    if field.len() != expected {
        return Err(Error::invalid(format!(
            "deformation field has {} values, image {}x{} needs {expected}",
            field.len(),
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Warps `image` by one `(H, W, 2)` displacement field.
pub fn warp(image: &StaticFactor, field: &[f32]) -> Result<Vec<f32>> {
    check_field(image, field)?;
    let [h, w, c] = image.shape();
    let mut out = vec![0.0; h * w * c];
    sample_frame(image.data(), h, w, c, field, &mut out);
    Ok(out)
}

/// Gradients of `<grad_out, warp(image, field)>` with respect to the image
/// and the field.
pub fn warp_backward(image: &StaticFactor, field: &[f32], grad_out: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
    check_field(image, field)?;
    let [h, w, c] = image.shape();
    if grad_out.len() != h * w * c {
        return Err(Error::invalid("output gradient does not match the image shape"));
    }
    let mut gi = vec![0.0; h * w * c];
    let mut gf = vec![0.0; h * w * 2];
    sample_frame_backward(image.data(), h, w, c, field, grad_out, &mut gi, Some(&mut gf));
    Ok((gi, gf))
}

fn check_sequence(image: &StaticFactor, deform: &DeformationSequence) -> Result<()> {
    if image.height() != deform.height() || image.width() != deform.width() {
        return Err(Error::invalid(format!(
            "static factor is {}x{} but deformation is {}x{}",
            image.height(),
            image.width(),
            deform.height(),
            deform.width()
        )));
    }
    if deform.frames() < 2 {
        return Err(Error::invalid("deformation needs at least two frames to form a video"));
    }
    if image.channels() != 1 && image.channels() != 3 {
        return Err(Error::invalid("static factor needs 1 or 3 channels to form a video"));
    }
    Ok(())
}

/// Renders every frame `warp(image, deform[t])`, clamped to `[0, 1]`.
pub fn warp_sequence(image: &StaticFactor, deform: &DeformationSequence) -> Result<VideoTensor> {
    check_sequence(image, deform)?;
    let [h, w, c] = image.shape();
    let t = deform.frames();
    let n = h * w * c;
    let mut data = vec![0.0; t * n];
    for (i, frame) in data.chunks_exact_mut(n).enumerate() {
        sample_frame(image.data(), h, w, c, deform.field(i), frame);
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(VideoTensor::from_parts_unchecked(t, h, w, c, data))
}

/// Gradients of `<grad_video, warp_sequence(image, deform)>`.
///
/// The output clamp is treated as the identity: bilinear interpolation of a
/// `[0, 1]` image never leaves that range.
pub fn warp_sequence_backward(
    image: &StaticFactor,
    deform: &DeformationSequence,
    grad_video: &[f32],
) -> Result<(Vec<f32>, Vec<f32>)> {
    check_sequence(image, deform)?;
    let [h, w, c] = image.shape();
    let n = h * w * c;
    if grad_video.len() != deform.frames() * n {
        return Err(Error::invalid("video gradient does not match the sequence shape"));
    }
    let mut gi = vec![0.0; n];
    let mut gd = vec![0.0; deform.data().len()];
    let fl = deform.field_len();
    for t in 0..deform.frames() {
        sample_frame_backward(
            image.data(),
            h,
            w,
            c,
            deform.field(t),
            &grad_video[t * n..(t + 1) * n],
            &mut gi,
            Some(&mut gd[t * fl..(t + 1) * fl]),
        );
    }
    Ok((gi, gd))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> StaticFactor {
        StaticFactor::from_fn(h, w, 1, |_, x, _| x as f32 / (w - 1) as f32).unwrap()
    }

    fn constant_field(h: usize, w: usize, dx: f32, dy: f32) -> Vec<f32> {
        (0..h * w).flat_map(|_| [dx, dy]).collect()
    }

    #[test]
    fn zero_field_is_bit_exact_identity() {
        let img = StaticFactor::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 105.0).unwrap();
        let out = warp(&img, &vec![0.0; 5 * 7 * 2]).unwrap();
        assert_eq!(out, img.data());
    }

    #[test]
    fn unit_shift_on_ramp_matches_indexing() {
        let (h, w) = (4, 9);
        let img = ramp(h, w);
        let out = warp(&img, &constant_field(h, w, 1.0, 0.0)).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                assert_eq!(out[y * w + x], (x + 1) as f32 / (w - 1) as f32);
            }
            // border replication at the right edge
            assert_eq!(out[y * w + w - 1], 1.0);
        }
    }

    #[test]
    fn half_shift_on_ramp_is_neighbour_average() {
        let (h, w) = (3, 8);
        let img = ramp(h, w);
        let out = warp(&img, &constant_field(h, w, 0.5, 0.0)).unwrap();
        for y in 0..h {
            for x in 0..w - 1 {
                let expected = (x as f32 + 0.5) / (w - 1) as f32;
                assert!((out[y * w + x] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let img = ramp(3, 3);
        assert!(matches!(warp(&img, &[0.0; 4]), Err(Error::InvalidArgument(_))));
        let d = DeformationSequence::zeros(2, 4, 3);
        assert!(warp_sequence(&img, &d).is_err());
    }

    #[test]
    fn single_pixel_image_is_constant() {
        let img = StaticFactor::new(1, 1, 1, vec![0.25]).unwrap();
        let out = warp(&img, &[3.0, -2.0]).unwrap();
        assert_eq!(out, [0.25]);
    }
}

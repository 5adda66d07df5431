//! Scalar losses shared by both optimization stages.

use alloc::format;

use crate::error::{Error, Result};

fn check_tv_shape(x: &[f32], height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::invalid("total variation needs H, W, K >= 1"));
    }
    if x.len() != height * width * channels {
        return Err(Error::invalid(format!(
            "total variation input has {} values, shape ({height}, {width}, {channels}) needs {}",
            x.len(),
            height * width * channels
        )));
    }
    Ok(())
}

fn tv_terms(height: usize, width: usize, channels: usize) -> usize {
    channels * (height * (width - 1) + (height - 1) * width)
}

/// Anisotropic L1 total variation of a channel-last `(H, W, K)` tensor,
/// averaged over the number of neighbour differences.
///
/// A single pixel has no differences and scores zero.
pub fn total_variation(x: &[f32], height: usize, width: usize, channels: usize) -> Result<f64> {
    check_tv_shape(x, height, width, channels)?;
    let terms = tv_terms(height, width, channels);
    if terms == 0 {
        return Ok(0.0);
    }
    let row = width * channels;
    let mut sum = 0.0f64;
    for y in 0..height {
        for xi in 0..width {
            let i = y * row + xi * channels;
            for c in 0..channels {
                let v = x[i + c];
                if xi + 1 < width {
                    sum += (x[i + channels + c] - v).abs() as f64;
                }
                if y + 1 < height {
                    sum += (x[i + row + c] - v).abs() as f64;
                }
            }
        }
    }
    Ok(sum / terms as f64)
}

/// Adds `scale * d TV / d x` into `grad`, using `sign(0) = 0` as the
/// subgradient at ties.
pub fn total_variation_grad(
    x: &[f32],
    height: usize,
    width: usize,
    channels: usize,
    scale: f64,
    grad: &mut [f32],
) -> Result<()> {
    check_tv_shape(x, height, width, channels)?;
    if grad.len() != x.len() {
        return Err(Error::invalid("gradient buffer does not match the input"));
    }
    let terms = tv_terms(height, width, channels);
    if terms == 0 || scale == 0.0 {
        return Ok(());
    }
    let k = (scale / terms as f64) as f32;
    let row = width * channels;
    for y in 0..height {
        for xi in 0..width {
            let i = y * row + xi * channels;
            for c in 0..channels {
                let v = x[i + c];
                if xi + 1 < width {
                    let s = sign(x[i + channels + c] - v) * k;
                    grad[i + channels + c] += s;
                    grad[i + c] -= s;
                }
                if y + 1 < height {
                    let s = sign(x[i + row + c] - v) * k;
                    grad[i + row + c] += s;
                    grad[i + c] -= s;
                }
            }
        }
    }
    Ok(())
}

#[inline]
fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean squared error over all elements.
pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "mse operands differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Adds `scale * d mse(a, b) / d a` into `grad`.
pub fn mse_grad(a: &[f32], b: &[f32], scale: f64, grad: &mut [f32]) -> Result<()> {
    if a.len() != b.len() || grad.len() != a.len() {
        return Err(Error::invalid("mse gradient operands differ in length"));
    }
    if a.is_empty() || scale == 0.0 {
        return Ok(());
    }
    let k = (2.0 * scale / a.len() as f64) as f32;
    for ((g, &x), &y) in grad.iter_mut().zip(a).zip(b) {
        *g += k * (x - y);
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for signals with peak value 1.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * libm::log10(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn tv_of_constant_is_zero() {
        assert_eq!(total_variation(&[0.3; 12], 2, 3, 2).unwrap(), 0.0);
    }

    #[test]
    fn tv_two_by_two_fixture() {
        // [[0, 1], [0, 1]]: horizontal diffs 1, 1; vertical diffs 0, 0.
        let tv = total_variation(&[0.0, 1.0, 0.0, 1.0], 2, 2, 1).unwrap();
        assert_eq!(tv, 0.5);
    }

    #[test]
    fn tv_single_pixel_and_bad_shape() {
        assert_eq!(total_variation(&[0.7, 0.1], 1, 1, 2).unwrap(), 0.0);
        assert!(total_variation(&[0.0; 3], 2, 2, 1).is_err());
        assert!(total_variation(&[], 0, 2, 1).is_err());
    }

    #[test]
    fn tv_grad_matches_finite_differences() {
        let x: Vec<f32> = (0..3 * 4 * 2).map(|i| ((i * 37 % 11) as f32) * 0.1 + (i as f32) * 0.013).collect();
        let mut g = vec![0.0; x.len()];
        total_variation_grad(&x, 3, 4, 2, 1.0, &mut g).unwrap();
        let h = 1e-3;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (total_variation(&p, 3, 4, 2).unwrap() - total_variation(&m, 3, 4, 2).unwrap()) / (2.0 * h as f64);
            assert!((fd - g[i] as f64).abs() < 1e-3, "index {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0; 10], &[0.0; 10]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert!(mse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn psnr_of_unit_error() {
        assert_eq!(psnr(&[1.0], &[0.0]).unwrap(), 0.0);
        assert!((psnr(&[0.1; 4], &[0.0; 4]).unwrap() - 20.0).abs() < 1e-5);
    }
}

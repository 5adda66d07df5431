#![allow(dead_code)]

use kernelviz_core::VideoTensor;

/// Direct zero-padded "same" 3D convolution of one output channel.
/// `weights` is laid out `[in][kt][kh][kw]`; the result is `(T, H, W)`.
pub fn conv3d_oracle(v: &VideoTensor, weights: &[f32], kernel: [usize; 3], bias: f32) -> Vec<f64> {
    let [t_len, h, w, c] = v.shape();
    let [kt, kh, kw] = kernel;
    let (rt, rh, rw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; t_len * h * w];
    for t in 0..t_len {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias as f64;
                for ci in 0..c {
                    for dt in -rt..=rt {
                        for dy in -rh..=rh {
                            for dx in -rw..=rw {
                                let (tt, yy, xx) = (t as isize + dt, y as isize + dy, x as isize + dx);
                                if tt < 0 || yy < 0 || xx < 0 || tt >= t_len as isize || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let wi = ((ci * kt + (dt + rt) as usize) * kh + (dy + rh) as usize) * kw + (dx + rw) as usize;
                                acc += weights[wi] as f64 * v.at(tt as usize, yy as usize, xx as usize, ci) as f64;
                            }
                        }
                    }
                }
                out[(t * h + y) * w + x] = acc;
            }
        }
    }
    out
}

pub fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `0.5 + 0.5 cos(2 pi f (x cos a - y sin a - s t))`, built independently of
/// the library's grating helper.
pub fn grating(frames: usize, size: usize, channels: usize, dir_deg: f64, speed: f64, freq: f64) -> VideoTensor {
    let (c, s) = (dir_deg.to_radians().cos(), dir_deg.to_radians().sin());
    VideoTensor::from_fn(frames, size, size, channels, |t, y, x, _| {
        let phase = x as f64 * c - y as f64 * s - speed * t as f64;
        (0.5 + 0.5 * (2.0 * std::f64::consts::PI * freq * phase).cos()) as f32
    })
    .unwrap()
}

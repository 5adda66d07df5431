//! Orthonormal discrete Fourier transforms over `(T, H, W)` volumes.
//!
//! Power-of-two axes use an iterative radix-2 transform; other lengths fall
//! back to a direct DFT. Both routes scale by `1/sqrt(n)` so the forward and
//! inverse transforms are adjoint to each other.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }
    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    #[inline]
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
    #[inline]
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
    fn cis(theta: f64) -> Complex {
        Complex::new(libm::cos(theta), libm::sin(theta))
    }
}

/// In-place orthonormal 1D transform. `inverse` selects the `e^{+i}` kernel.
pub fn fft_1d(buf: &mut [Complex], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if n.is_power_of_two() {
        radix2(buf, sign);
    } else {
        let src = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::ZERO;
            for (j, &x) in src.iter().enumerate() {
                let angle = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                acc = acc.add(x.mul(Complex::cis(angle)));
            }
            *out = acc;
        }
    }
    let s = 1.0 / libm::sqrt(n as f64);
    for v in buf.iter_mut() {
        v.re *= s;
        v.im *= s;
    }
}

fn radix2(buf: &mut [Complex], sign: f64) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = Complex::cis(sign * 2.0 * PI / len as f64);
        for start in (0..n).step_by(len) {
            let mut w = Complex::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2].mul(w);
                buf[start + k] = a.add(b);
                buf[start + k + len / 2] = a.sub(b);
                w = w.mul(step);
            }
        }
        len <<= 1;
    }
}

/// Orthonormal transform of a row-major `(T, H, W)` complex volume.
pub fn fft_3d(data: &mut [Complex], dims: [usize; 3], inverse: bool) {
    let [t, h, w] = dims;
    assert_eq!(data.len(), t * h * w);
    let mut line = vec![Complex::ZERO; t.max(h).max(w)];
    // W axis: contiguous rows.
    for row in data.chunks_exact_mut(w) {
        fft_1d(row, inverse);
    }
    // H axis.
    for ti in 0..t {
        for x in 0..w {
            let l = &mut line[..h];
            for (y, v) in l.iter_mut().enumerate() {
                *v = data[(ti * h + y) * w + x];
            }
            fft_1d(l, inverse);
            for (y, v) in l.iter().enumerate() {
                data[(ti * h + y) * w + x] = *v;
            }
        }
    }
    // T axis.
    for y in 0..h {
        for x in 0..w {
            let l = &mut line[..t];
            for (ti, v) in l.iter_mut().enumerate() {
                *v = data[(ti * h + y) * w + x];
            }
            fft_1d(l, inverse);
            for (ti, v) in l.iter().enumerate() {
                data[(ti * h + y) * w + x] = *v;
            }
        }
    }
}

/// Signed frequency (cycles per sample) of bin `k` in an `n`-point transform.
pub fn frequency(k: usize, n: usize) -> f64 {
    let k = k as i64;
    let n = n as i64;
    let signed = if k <= n / 2 { k } else { k - n };
    signed as f64 / n as f64
}

/// Direct orthonormal DFT used to cross-check the fast path.
pub fn naive_dft(input: &[Complex], inverse: bool) -> Vec<Complex> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let s = 1.0 / libm::sqrt(n as f64);
    (0..n)
        .map(|k| {
            let mut acc = Complex::ZERO;
            for (j, &x) in input.iter().enumerate() {
                acc = acc.add(x.mul(Complex::cis(sign * 2.0 * PI * (k * j) as f64 / n as f64)));
            }
            Complex::new(acc.re * s, acc.im * s)
        })
        .collect()
}

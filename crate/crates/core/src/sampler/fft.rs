//! Arbitrary-length DFT via Bluestein's chirp-z reduction onto a radix-2 FFT.
//! Prime lengths are the common case here, so Cooley-Tukey alone is not enough.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
pub(crate) struct Bluestein {
    len: usize,
    fft_len: usize,
    /// `exp(-i pi j^2 / n)` for `j < n`.
    chirp: Vec<Complex64>,
    /// FFT of the conjugate chirp laid out for circular convolution.
    kernel_hat: Vec<Complex64>,
}

impl Bluestein {
    pub(crate) fn new(len: usize) -> Self {
        assert!(len >= 1);
        let fft_len = (2 * len - 1).next_power_of_two();
        let two_n = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|j| {
                // j^2 mod 2n keeps the angle small and exact
                let r = (j as u128 * j as u128) % two_n;
                Complex64::from_polar(1.0, -PI * r as f64 / len as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); fft_len];
        kernel[0] = chirp[0].conj();
        for j in 1..len {
            kernel[j] = chirp[j].conj();
            kernel[fft_len - j] = chirp[j].conj();
        }
        radix2(&mut kernel, false);
        Self {
            len,
            fft_len,
            chirp,
            kernel_hat: kernel,
        }
    }

    /// `X_k = sum_j x_j exp(sign * 2 pi i j k / n)` with `sign = -1` when
    /// `forward`, `+1` otherwise. No normalization.
    pub(crate) fn transform(&self, input: &[Complex64], forward: bool) -> Vec<Complex64> {
        assert_eq!(input.len(), self.len);
        // the inverse transform is the conjugate of the forward transform of the conjugate
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for j in 0..self.len {
            let x = if forward { input[j] } else { input[j].conj() };
            buf[j] = x * self.chirp[j];
        }
        radix2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
            *b *= *k;
        }
        radix2(&mut buf, true);
        let scale = 1.0 / self.fft_len as f64;
        (0..self.len)
            .map(|k| {
                let y = buf[k] * scale * self.chirp[k];
                if forward {
                    y
                } else {
                    y.conj()
                }
            })
            .collect()
    }
}

/// In-place iterative radix-2 FFT. `inverse` flips the twiddle sign and does not scale.
fn radix2(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = sign * 2.0 * PI / size as f64;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let w = Complex64::from_polar(1.0, step * k as f64);
                let a = data[start + k];
                let b = data[start + k + half] * w;
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        size <<= 1;
    }
}

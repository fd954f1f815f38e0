//! Iterative radix-2 Cooley–Tukey FFT over power-of-two lengths, and the
//! row/column 2D transform built on it.

use std::f64::consts::PI;

use num_complex::Complex64;

/// In-place 1D transform. `inverse` conjugates the twiddles and scales by `1/n`.
pub fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        // twiddles computed directly rather than by repeated multiplication
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, ang * k as f64)).collect();
        for chunk in data.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for k in 0..half {
                let t = hi[k] * twiddles[k];
                hi[k] = lo[k] - t;
                lo[k] += t;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// In-place 2D transform of a row-major `width × height` array.
pub fn fft2d_in_place(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    assert_eq!(data.len(), width * height);
    for row in data.chunks_exact_mut(width) {
        fft_in_place(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            col[r] = data[r * width + c];
        }
        fft_in_place(&mut col, inverse);
        for r in 0..height {
            data[r * width + c] = col[r];
        }
    }
}

pub fn fft2d(input: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2d_in_place(&mut data, width, height, false);
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n²) DFT, independent of the butterfly path.
    fn dft_1d(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft_1d() {
        let x: Vec<Complex64> = (0..64).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i % 5) as f64)).collect();
        let mut y = x.clone();
        fft_in_place(&mut y, false);
        for (a, b) in y.iter().zip(dft_1d(&x)) {
            assert!((a - b).norm() < 1e-9);
        }
        fft_in_place(&mut y, true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn trivial_lengths() {
        let mut one = vec![Complex64::new(3.0, -1.0)];
        fft_in_place(&mut one, false);
        assert_eq!(one[0], Complex64::new(3.0, -1.0));
        let mut delta = vec![Complex64::new(0.0, 0.0); 8];
        delta[0] = Complex64::new(1.0, 0.0);
        fft_in_place(&mut delta, false);
        assert!(delta.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    #[should_panic]
    fn rejects_non_power_of_two() {
        let mut v = vec![Complex64::new(0.0, 0.0); 6];
        fft_in_place(&mut v, false);
    }
}

//! Thin wrappers over rustfft with the lab's normalisation: `forward` is the
//! unnormalised DFT `X_k = sum_j x_j exp(-2 pi i j k / n)`, `inverse` divides by n.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

pub fn forward(x: &[C64]) -> Vec<C64> {
    let mut buf = x.to_vec();
    if buf.is_empty() {
        return buf;
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

pub fn inverse(x: &[C64]) -> Vec<C64> {
    let mut buf = x.to_vec();
    if buf.is_empty() {
        return buf;
    }
    let n = buf.len() as f64;
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(buf.len()).process(&mut buf);
    for v in buf.iter_mut() {
        *v /= n;
    }
    buf
}

/// Circular convolution `c_i = sum_j a_{(i-j) mod n} b_j`.
pub fn circular_convolve(a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = a.len();
    assert_eq!(n, b.len());
    if n <= 48 {
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (j, bj) in b.iter().enumerate() {
                acc += a[(i + n - j) % n] * bj;
            }
            *o = acc;
        }
        return out;
    }
    let fa = forward(a);
    let fb = forward(b);
    let prod: Vec<C64> = fa.iter().zip(fb.iter()).map(|(x, y)| x * y).collect();
    inverse(&prod)
}

/// Multiplier applied to DFT bin `k` by the frequency-positive projector.
///
/// Bin `k` carries time dependence `exp(+2 pi i k t / T)`, i.e. physical
/// frequency `-2 pi k / T` in the `exp(-i w t)` convention, so the positive
/// frequencies live in the upper half of the bin range. DC and Nyquist bins
/// are split evenly between the two projectors.
pub fn positive_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
        0.5
    } else if 2 * k > n {
        1.0
    } else {
        0.0
    }
}

/// Physical angular frequency of bin `k` on a period `period`.
pub fn bin_frequency(k: usize, n: usize, period: f64) -> f64 {
    let signed = if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
    -std::f64::consts::TAU * signed / period
}

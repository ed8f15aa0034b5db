//! Frequency-positive and frequency-negative projections on the periodic grid.
//!
//! A signal with time dependence `exp(-i w t)`, `w > 0`, is frequency-positive.
//! The zero-frequency and Nyquist bins are shared evenly, so
//! `positive_part(f) + negative_part(f) == f` holds sample by sample.

use ndarray::{s, Array1};
use num_complex::Complex64 as C64;

use crate::error::Result;
use crate::fft;
use crate::grid::{Signal, StationaryKernel};

fn project_row(row: &[C64], positive: bool) -> Vec<C64> {
    let n = row.len();
    let mut spec = fft::forward(row);
    for (k, v) in spec.iter_mut().enumerate() {
        let w = fft::positive_weight(k, n);
        *v *= if positive { w } else { 1.0 - w };
    }
    fft::inverse(&spec)
}

fn project_signal(f: &Signal, positive: bool) -> Signal {
    let mut out = f.clone();
    for mut row in out.values.rows_mut() {
        let p = project_row(&row.to_vec(), positive);
        row.assign(&Array1::from(p));
    }
    out
}

pub fn positive_part(f: &Signal) -> Signal {
    project_signal(f, true)
}

/// `f - positive_part(f)`, computed as the complementary bin mask.
pub fn negative_part(f: &Signal) -> Signal {
    project_signal(f, false)
}

fn project_kernel(k: &StationaryKernel, positive: bool) -> StationaryKernel {
    let mut out = k.clone();
    let m = k.m();
    for x in 0..m {
        for xp in 0..m {
            let row = k.values.slice(s![x, xp, ..]).to_vec();
            let p = project_row(&row, positive);
            out.values.slice_mut(s![x, xp, ..]).assign(&Array1::from(p));
        }
    }
    out
}

/// Projection of a kernel along its own lag argument.
pub fn positive_part_lag(k: &StationaryKernel) -> StationaryKernel {
    project_kernel(k, true)
}

pub fn negative_part_lag(k: &StationaryKernel) -> StationaryKernel {
    project_kernel(k, false)
}

/// `sum_x w_x (T / n^2) sum_k F_k(x) G_{-k}(x)`: the frequency-domain form of
/// `contract_scalar(f, g)`.
pub fn frequency_pairing(f: &Signal, g: &Signal) -> Result<C64> {
    f.check_compatible(g)?;
    let n = f.n();
    let mut acc = C64::new(0.0, 0.0);
    for x in 0..f.m() {
        let ff = fft::forward(&f.values.row(x).to_vec());
        let gg = fft::forward(&g.values.row(x).to_vec());
        let row: C64 = (0..n).map(|k| ff[k] * gg[(n - k) % n]).sum();
        acc += row * f.sites.weight(x);
    }
    Ok(acc * f.grid.dt / n as f64)
}

/// Largest spectral magnitude in the DC and Nyquist bins, relative to the
/// largest bin overall.
pub fn edge_bin_fraction(f: &Signal) -> f64 {
    let n = f.n();
    let mut edge: f64 = 0.0;
    let mut all: f64 = 0.0;
    for x in 0..f.m() {
        let spec = fft::forward(&f.values.row(x).to_vec());
        for (k, v) in spec.iter().enumerate() {
            all = all.max(v.norm());
            if k == 0 || (n.is_multiple_of(2) && 2 * k == n) {
                edge = edge.max(v.norm());
            }
        }
    }
    if all == 0.0 {
        0.0
    } else {
        edge / all
    }
}

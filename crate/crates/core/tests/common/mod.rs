#![allow(dead_code)]

use std::f64::consts::TAU;

use causal_lab::grid::{SiteSet, TimeGrid};
use causal_lab::kernels::{Band, ModeSet};
use ndarray::Array2;
use num_complex::Complex64 as C64;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Period 2 pi, so integer frequencies are commensurate.
pub fn unit_grid(n: usize) -> TimeGrid {
    TimeGrid::new(0.0, TAU / n as f64, n).unwrap()
}

pub fn two_sites() -> SiteSet {
    SiteSet::new(vec!["a".into(), "b".into()], vec![0.7, 1.3]).unwrap()
}

pub fn broad_single(omega: f64) -> ModeSet {
    ModeSet::single_site(Band::Broad, vec![omega], 0.0).unwrap()
}

pub fn broad_pair() -> ModeSet {
    let profiles = Array2::from_shape_fn((2, 2), |(k, x)| C64::from_polar(0.6 + 0.2 * k as f64, 0.5 * (k + 1) as f64 * x as f64));
    ModeSet::new(Band::Broad, vec![1.0, 2.0], profiles, two_sites(), 0.0).unwrap()
}

pub fn narrow_pair() -> ModeSet {
    let profiles = Array2::from_shape_fn((2, 2), |(k, x)| C64::from_polar(0.5 + 0.1 * k as f64, 0.7 * (k + 2 * x) as f64));
    ModeSet::new(Band::Narrow, vec![5.0, 6.0], profiles, two_sites(), 5.0).unwrap()
}

pub fn five_broad_modes() -> ModeSet {
    let omegas = vec![1.0, 2.0, 3.0, 5.0, 7.0];
    let profiles = Array2::from_shape_fn((5, 2), |(k, x)| C64::from_polar(0.3 + 0.1 * k as f64, 0.4 * (k * (x + 1)) as f64));
    ModeSet::new(Band::Broad, omegas, profiles, two_sites(), 0.0).unwrap()
}

pub fn five_narrow_modes() -> ModeSet {
    let omegas = vec![10.0, 11.0, 9.0, 12.0, 8.0];
    let profiles = Array2::from_shape_fn((5, 2), |(k, x)| C64::from_polar(0.5 - 0.05 * k as f64, 0.3 * (k + 2 * x) as f64));
    ModeSet::new(Band::Narrow, omegas, profiles, two_sites(), 10.0).unwrap()
}

//! Periodic time lattice, weighted site set, sampled signals and stationary
//! two-point kernels, together with the condensed contraction notation:
//!
//! ```text
//! fg     = sum_x w_x sum_t dt f(x,t) g(x,t)
//! (Kg)   = sum_x' w_x' sum_t' dt K(x,x',t-t') g(x',t')
//! (fK)   = sum_x' w_x' sum_t' dt f(x',t') K(x',x,t'-t)
//! fKg    = f (Kg)
//! ```
//!
//! Time differences are taken modulo the period, so every convolution is
//! circular.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fft;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(LabError::Invalid(format!("time step must be positive, got {dt}")));
        }
        if n == 0 {
            return Err(LabError::Invalid("time grid needs at least one sample".into()));
        }
        if !t0.is_finite() {
            return Err(LabError::Invalid("time origin must be finite".into()));
        }
        Ok(Self { t0, dt, n })
    }

    /// Grid whose period is `cycles` periods of `omega`, sampled `n` times.
    pub fn commensurate(omega: f64, cycles: usize, n: usize) -> Result<Self> {
        let period = std::f64::consts::TAU * cycles as f64 / omega;
        Self::new(0.0, period / n as f64, n)
    }

    pub fn period(&self) -> f64 {
        self.dt * self.n as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    /// Signed lag value of lag index `k`: indices above `n/2` are negative lags.
    pub fn lag_time(&self, k: usize) -> f64 {
        if 2 * k > self.n {
            (k as f64 - self.n as f64) * self.dt
        } else {
            k as f64 * self.dt
        }
    }

    /// Lag index of `t_i - t_j`.
    pub fn lag_index(&self, i: usize, j: usize) -> usize {
        (i + self.n - j % self.n) % self.n
    }

    pub fn reversed_lag(&self, k: usize) -> usize {
        (self.n - k % self.n) % self.n
    }

    /// Frequency spacing `2 pi / T` of the periodic lattice.
    pub fn frequency_step(&self) -> f64 {
        std::f64::consts::TAU / self.period()
    }

    /// How far `omega T / 2 pi` is from an integer.
    pub fn commensurability_defect(&self, omega: f64) -> f64 {
        let c = omega / self.frequency_step();
        (c - c.round()).abs()
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n && self.dt == other.dt && self.t0 == other.t0
    }
}

/// Step function on the circular lag axis: 1 for lags in `(0, T/2)`, 0 for
/// `(T/2, T)`, and 1/2 at lag 0 and at the half period.
pub fn theta_lag(k: usize, n: usize) -> f64 {
    let k = k % n;
    if k == 0 || 2 * k == n {
        0.5
    } else if 2 * k < n {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl SiteSet {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if labels.len() != weights.len() {
            return Err(LabError::Shape(format!(
                "{} site labels but {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if labels.is_empty() {
            return Err(LabError::Invalid("site set is empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(LabError::Invalid(format!("site weight must be positive and finite, got {w}")));
        }
        Ok(Self { labels, weights })
    }

    pub fn single() -> Self {
        Self { labels: vec!["x0".into()], weights: vec![1.0] }
    }

    pub fn uniform(m: usize, weight: f64) -> Result<Self> {
        Self::new((0..m).map(|i| format!("x{i}")).collect(), vec![weight; m])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub grid: TimeGrid,
    pub sites: SiteSet,
    /// Indexed `(x, t)`.
    pub values: Array2<C64>,
}

impl Signal {
    pub fn zeros(grid: TimeGrid, sites: SiteSet) -> Self {
        let values = Array2::zeros((sites.len(), grid.n));
        Self { grid, sites, values }
    }

    pub fn from_values(grid: TimeGrid, sites: SiteSet, values: Array2<C64>) -> Result<Self> {
        if values.dim() != (sites.len(), grid.n) {
            return Err(LabError::Shape(format!(
                "signal values have shape {:?}, expected ({}, {})",
                values.dim(),
                sites.len(),
                grid.n
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LabError::Invalid("signal has non-finite entries".into()));
        }
        Ok(Self { grid, sites, values })
    }

    /// Samples `f(x, t)` at every site index and grid time.
    pub fn from_fn(grid: TimeGrid, sites: SiteSet, f: impl Fn(usize, f64) -> C64) -> Self {
        let values = Array2::from_shape_fn((sites.len(), grid.n), |(x, k)| f(x, grid.time(k)));
        Self { grid, sites, values }
    }

    /// Unit-area spike: `1/(w_x dt)` at `(x, k)`, so that `contract_scalar`
    /// samples the partner signal there.
    pub fn spike(grid: TimeGrid, sites: SiteSet, x: usize, k: usize) -> Self {
        let mut s = Self::zeros(grid, sites);
        s.values[[x, k]] = C64::new(1.0 / (s.sites.weight(x) * grid.dt), 0.0);
        s
    }

    pub fn m(&self) -> usize {
        self.sites.len()
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn at(&self, x: usize, k: usize) -> C64 {
        self.values[[x, k]]
    }

    pub fn check_compatible(&self, other: &Signal) -> Result<()> {
        if !self.grid.same_as(&other.grid) || self.sites != other.sites {
            return Err(LabError::Shape("signals live on different grids or site sets".into()));
        }
        Ok(())
    }

    pub fn with_values(&self, values: Array2<C64>) -> Self {
        Self { grid: self.grid, sites: self.sites.clone(), values }
    }

    pub fn conj(&self) -> Self {
        self.with_values(self.values.mapv(|v| v.conj()))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.with_values(self.values.mapv(|v| v * c))
    }

    pub fn add(&self, other: &Signal) -> Self {
        self.with_values(&self.values + &other.values)
    }

    pub fn sub(&self, other: &Signal) -> Self {
        self.with_values(&self.values - &other.values)
    }

    /// Pointwise product with a time-only factor `f(t)`.
    pub fn modulate(&self, f: impl Fn(f64) -> C64) -> Self {
        let grid = self.grid;
        let mut values = self.values.clone();
        for ((_, k), v) in values.indexed_iter_mut() {
            *v *= f(grid.time(k));
        }
        self.with_values(values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.norm()))
    }

    pub fn max_abs_diff(&self, other: &Signal) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).norm()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == ZERO)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryKernel {
    pub grid: TimeGrid,
    pub sites: SiteSet,
    /// Indexed `(x, x', lag)`; lag index `k` stands for `t - t' = k dt mod T`.
    pub values: Array3<C64>,
}

impl StationaryKernel {
    pub fn zeros(grid: TimeGrid, sites: SiteSet) -> Self {
        let m = sites.len();
        Self { grid, sites, values: Array3::zeros((m, m, grid.n)) }
    }

    pub fn from_values(grid: TimeGrid, sites: SiteSet, values: Array3<C64>) -> Result<Self> {
        let m = sites.len();
        if values.dim() != (m, m, grid.n) {
            return Err(LabError::Shape(format!(
                "kernel values have shape {:?}, expected ({m}, {m}, {})",
                values.dim(),
                grid.n
            )));
        }
        Ok(Self { grid, sites, values })
    }

    /// Fills `K(x, x', k)` from a closure receiving the signed lag time.
    pub fn from_fn(grid: TimeGrid, sites: SiteSet, f: impl Fn(usize, usize, f64) -> C64) -> Self {
        let m = sites.len();
        let values = Array3::from_shape_fn((m, m, grid.n), |(x, xp, k)| f(x, xp, grid.lag_time(k)));
        Self { grid, sites, values }
    }

    /// Kronecker delta in site and lag, normalised by the quadrature weights.
    pub fn identity(grid: TimeGrid, sites: SiteSet) -> Self {
        let mut k = Self::zeros(grid, sites);
        for x in 0..k.m() {
            k.values[[x, x, 0]] = C64::new(1.0 / (k.sites.weight(x) * grid.dt), 0.0);
        }
        k
    }

    pub fn m(&self) -> usize {
        self.sites.len()
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn at(&self, x: usize, xp: usize, k: usize) -> C64 {
        self.values[[x, xp, k % self.grid.n]]
    }

    pub fn with_values(&self, values: Array3<C64>) -> Self {
        Self { grid: self.grid, sites: self.sites.clone(), values }
    }

    /// `K'(x, x', tau) = K(x', x, -tau)`.
    pub fn reflected(&self) -> Self {
        let n = self.n();
        let values = Array3::from_shape_fn(self.values.dim(), |(x, xp, k)| self.values[[xp, x, (n - k) % n]]);
        self.with_values(values)
    }

    pub fn conj(&self) -> Self {
        self.with_values(self.values.mapv(|v| v.conj()))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.with_values(self.values.mapv(|v| v * c))
    }

    pub fn add(&self, other: &StationaryKernel) -> Self {
        self.with_values(&self.values + &other.values)
    }

    pub fn sub(&self, other: &StationaryKernel) -> Self {
        self.with_values(&self.values - &other.values)
    }

    /// Multiplies lag sample `k` by `f(tau_k)` with the signed lag time.
    pub fn modulate_lag(&self, f: impl Fn(f64) -> C64) -> Self {
        let grid = self.grid;
        let mut values = self.values.clone();
        for ((_, _, k), v) in values.indexed_iter_mut() {
            *v *= f(grid.lag_time(k));
        }
        self.with_values(values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.norm()))
    }

    pub fn max_abs_diff(&self, other: &StationaryKernel) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).norm()))
    }

    fn check_signal(&self, s: &Signal) -> Result<()> {
        if !self.grid.same_as(&s.grid) || self.sites != s.sites {
            return Err(LabError::Shape("kernel and signal live on different grids or site sets".into()));
        }
        Ok(())
    }
}

/// `sum_x w_x sum_t dt f(x,t) g(x,t)`.
pub fn contract_scalar(f: &Signal, g: &Signal) -> Result<C64> {
    f.check_compatible(g)?;
    let dt = f.grid.dt;
    let mut acc = ZERO;
    for (x, (rf, rg)) in f.values.axis_iter(Axis(0)).zip(g.values.axis_iter(Axis(0))).enumerate() {
        let row: C64 = rf.iter().zip(rg.iter()).map(|(a, b)| a * b).sum();
        acc += row * f.sites.weight(x);
    }
    Ok(acc * dt)
}

/// `(Kg)(x,t) = sum_x' w_x' sum_t' dt K(x,x',t-t') g(x',t')`.
pub fn apply_kernel_left(k: &StationaryKernel, g: &Signal) -> Result<Signal> {
    k.check_signal(g)?;
    let (m, n, dt) = (k.m(), k.n(), k.grid.dt);
    let rows: Vec<Vec<C64>> = (0..m)
        .into_par_iter()
        .map(|x| {
            let mut acc = vec![ZERO; n];
            for xp in 0..m {
                let kern: Vec<C64> = k.values.slice(ndarray::s![x, xp, ..]).to_vec();
                let gx: Vec<C64> = g.values.row(xp).to_vec();
                let c = fft::circular_convolve(&kern, &gx);
                let w = k.sites.weight(xp) * dt;
                for (a, v) in acc.iter_mut().zip(c) {
                    *a += v * w;
                }
            }
            acc
        })
        .collect();
    let mut out = Signal::zeros(g.grid, g.sites.clone());
    for (x, row) in rows.into_iter().enumerate() {
        for (t, v) in row.into_iter().enumerate() {
            out.values[[x, t]] = v;
        }
    }
    Ok(out)
}

/// `(fK)(x,t) = sum_x' w_x' sum_t' dt f(x',t') K(x',x,t'-t)`.
pub fn apply_kernel_right(f: &Signal, k: &StationaryKernel) -> Result<Signal> {
    k.check_signal(f)?;
    apply_kernel_left(&k.reflected(), f)
}

/// `fKg = sum f(x,t) K(x,x',t-t') g(x',t')` with both quadratures.
pub fn contract_kernel(f: &Signal, k: &StationaryKernel, g: &Signal) -> Result<C64> {
    k.check_signal(f)?;
    contract_scalar(f, &apply_kernel_left(k, g)?)
}

//! Response cumulant tensors on a discretised window and retarded
//! propagator matrices.
//!
//! Points are flattened as `p = x * n + k` over `m` sites and `n` times;
//! every point carries the quadrature weight `w_x * dt`. A cumulant key
//! lists the slot count per variable block; tensors are dense, row-major
//! over the slots in block order.
//!
//! Blocks per band (response blocks first within each band):
//! broad `[zeta, a]`, narrow `[nu*, nu, e, e*]`,
//! merged `[zeta, nu*, nu, a, e, e*]`. The log-functional reads
//! `W = sum_key (i^r / prod_b c_b!) sum Q[...] prod w prod vars`
//! with `r` the number of response slots.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::poly::{FunctionalPoly, Monomial, Pairing};
use crate::error::{LabError, Result};
use crate::grid::SiteSet;
use crate::kernels::ModeSet;
use crate::grid::StationaryKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CumulantBand {
    Broad,
    Narrow,
    Merged,
}

impl CumulantBand {
    pub fn tag(&self) -> &'static str {
        match self {
            CumulantBand::Broad => "broad",
            CumulantBand::Narrow => "narrow",
            CumulantBand::Merged => "merged",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "broad" => Ok(CumulantBand::Broad),
            "narrow" => Ok(CumulantBand::Narrow),
            "merged" => Ok(CumulantBand::Merged),
            _ => Err(LabError::Parse(format!("unknown band '{s}'"))),
        }
    }

    pub fn block_names(&self) -> &'static [&'static str] {
        match self {
            CumulantBand::Broad => &["zeta", "a"],
            CumulantBand::Narrow => &["nu*", "nu", "e", "e*"],
            CumulantBand::Merged => &["zeta", "nu*", "nu", "a", "e", "e*"],
        }
    }

    pub fn response_blocks(&self) -> &'static [bool] {
        match self {
            CumulantBand::Broad => &[true, false],
            CumulantBand::Narrow => &[true, true, false, false],
            CumulantBand::Merged => &[true, true, true, false, false, false],
        }
    }

    pub fn blocks(&self) -> usize {
        self.block_names().len()
    }

    /// (source block, response block, conjugated kernel, coefficient) of each
    /// dressing pairing.
    fn pairing_layout(&self) -> Vec<(usize, usize, Propagation, C64)> {
        let mi = C64::new(0.0, -1.0);
        let pi = C64::new(0.0, 1.0);
        match self {
            CumulantBand::Broad => vec![(1, 0, Propagation::Broad, mi)],
            CumulantBand::Narrow => vec![(2, 0, Propagation::Narrow, mi), (3, 1, Propagation::NarrowConj, pi)],
            CumulantBand::Merged => vec![
                (3, 0, Propagation::Broad, mi),
                (4, 1, Propagation::Narrow, mi),
                (5, 2, Propagation::NarrowConj, pi),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Propagation {
    Broad,
    Narrow,
    NarrowConj,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CumulantKind {
    Bare,
    Dressed,
}

/// Retarded propagator sampled on the window: `matrix[p][q] = K(x_p, x_q, t_p - t_q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalPropagator {
    pub sites: SiteSet,
    pub n: usize,
    pub dt: f64,
    pub matrix: Vec<Vec<C64>>,
}

impl CausalPropagator {
    pub fn points(&self) -> usize {
        self.sites.len() * self.n
    }

    pub fn weights(&self) -> Vec<f64> {
        window_weights(&self.sites, self.n, self.dt)
    }

    /// From a lag function `f(x, x', tau)`; `f` carries its own step gate.
    pub fn from_fn(sites: &SiteSet, n: usize, dt: f64, f: impl Fn(usize, usize, f64) -> C64) -> Self {
        let m = sites.len();
        let np = m * n;
        let mut matrix = vec![vec![C64::new(0.0, 0.0); np]; np];
        for (p, row) in matrix.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                let tau = (p % n) as f64 * dt - (q % n) as f64 * dt;
                *v = f(p / n, q / n, tau);
            }
        }
        Self { sites: sites.clone(), n, dt, matrix }
    }

    /// From a retarded grid kernel over the first `window` samples. Lags of
    /// at least half the grid wrap around, so `2 * window <= n` is required.
    pub fn from_kernel(kernel: &StationaryKernel, window: usize) -> Result<Self> {
        let n = kernel.n();
        if window == 0 || 2 * window > n {
            return Err(LabError::Invalid(format!("propagator window {window} must be in 1..={}", n / 2)));
        }
        let sites = kernel.sites.clone();
        let np = sites.len() * window;
        let mut matrix = vec![vec![C64::new(0.0, 0.0); np]; np];
        for (p, row) in matrix.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                let (i, j) = (p % window, q % window);
                if i >= j {
                    *v = kernel.at(p / window, q / window, i - j);
                }
            }
        }
        Ok(Self { sites, n: window, dt: kernel.grid.dt, matrix })
    }

    /// Continuum broad retarded kernel of `modes`; zero at equal times.
    pub fn broad(modes: &ModeSet, n: usize, dt: f64) -> Self {
        Self::from_fn(&modes.sites, n, dt, |x, xp, tau| C64::new(retarded_broad(modes, x, xp, tau), 0.0))
    }

    /// Continuum narrow retarded kernel of `modes`, half weight at equal times.
    pub fn narrow(modes: &ModeSet, n: usize, dt: f64) -> Self {
        Self::from_fn(&modes.sites, n, dt, |x, xp, tau| retarded_narrow(modes, x, xp, tau))
    }

    pub fn conj(&self) -> Self {
        let matrix = self.matrix.iter().map(|r| r.iter().map(|v| v.conj()).collect()).collect();
        Self { matrix, ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let matrix = self
            .matrix
            .iter()
            .zip(&other.matrix)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Self { matrix, ..self.clone() }
    }

    pub fn scale(&self, s: C64) -> Self {
        let matrix = self.matrix.iter().map(|r| r.iter().map(|v| v * s).collect()).collect();
        Self { matrix, ..self.clone() }
    }

    /// `(K f)(p) = sum_q K[p][q] w_q f(q)`.
    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        let w = self.weights();
        self.matrix.iter().map(|row| row.iter().zip(f).zip(&w).map(|((k, v), wq)| k * v * *wq).sum()).collect()
    }

    /// `(f K)(q) = sum_p f(p) w_p K[p][q]`.
    pub fn apply_left(&self, f: &[C64]) -> Vec<C64> {
        let w = self.weights();
        let np = self.points();
        (0..np).map(|q| (0..np).map(|p| f[p] * w[p] * self.matrix[p][q]).sum()).collect()
    }

    /// True when every entry with `t_p < t_q` vanishes.
    pub fn is_retarded(&self) -> bool {
        let n = self.n;
        self.matrix
            .iter()
            .enumerate()
            .all(|(p, row)| row.iter().enumerate().all(|(q, v)| p % n >= q % n || *v == C64::new(0.0, 0.0)))
    }
}

/// `Delta_R(x, x', tau) = -theta(tau) sum Im(u(x) u*(x') e^{-i w tau}) / w`.
pub fn retarded_broad(modes: &ModeSet, x: usize, xp: usize, tau: f64) -> f64 {
    if tau < 0.0 {
        return 0.0;
    }
    let theta = if tau == 0.0 { 0.5 } else { 1.0 };
    let s: f64 = (0..modes.len())
        .map(|k| {
            let w = modes.omegas[k];
            (modes.u(k, x) * modes.u(k, xp).conj() * C64::from_polar(1.0, -w * tau)).im / w
        })
        .sum();
    -theta * s
}

/// `G_R(x, x', tau) = theta(tau) i sum (w/2) u(x) u*(x') e^{-i(w - w0) tau}`.
pub fn retarded_narrow(modes: &ModeSet, x: usize, xp: usize, tau: f64) -> C64 {
    if tau < 0.0 {
        return C64::new(0.0, 0.0);
    }
    let theta = if tau == 0.0 { 0.5 } else { 1.0 };
    let s: C64 = (0..modes.len())
        .map(|k| {
            let w = modes.omegas[k];
            modes.u(k, x) * modes.u(k, xp).conj() * C64::from_polar(0.5 * w, -(w - modes.omega0) * tau)
        })
        .sum();
    C64::new(0.0, theta) * s
}

pub fn window_weights(sites: &SiteSet, n: usize, dt: f64) -> Vec<f64> {
    (0..sites.len() * n).map(|p| sites.weight(p / n) * dt).collect()
}

/// Propagators used by a dressing pass; absent entries are not applied.
#[derive(Clone, Debug, Default)]
pub struct Propagators {
    pub broad: Option<CausalPropagator>,
    pub narrow: Option<CausalPropagator>,
}

impl Propagators {
    pub fn broad(p: CausalPropagator) -> Self {
        Self { broad: Some(p), narrow: None }
    }

    pub fn narrow(p: CausalPropagator) -> Self {
        Self { broad: None, narrow: Some(p) }
    }

    pub fn merged(broad: CausalPropagator, narrow: CausalPropagator) -> Self {
        Self { broad: Some(broad), narrow: Some(narrow) }
    }

    /// Dressing pairings for `band`, as polynomial operators over `points` per block.
    pub fn pairings(&self, band: CumulantBand, points: usize) -> Result<Vec<Pairing>> {
        let mut out = Vec::new();
        for (first, second, kind, coefficient) in band.pairing_layout() {
            let prop = match kind {
                Propagation::Broad => self.broad.clone(),
                Propagation::Narrow => self.narrow.clone(),
                Propagation::NarrowConj => self.narrow.as_ref().map(|p| p.conj()),
            };
            let Some(prop) = prop else { continue };
            if prop.points() != points {
                return Err(LabError::Shape(format!(
                    "propagator has {} points, cumulants have {points}",
                    prop.points()
                )));
            }
            out.push(Pairing { first_block: first, second_block: second, matrix: prop.matrix, coefficient });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CumulantSet {
    pub band: CumulantBand,
    pub kind: CumulantKind,
    pub weights: Vec<f64>,
    pub tensors: BTreeMap<Vec<usize>, Vec<C64>>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// All index tuples of `rank` slots over `points` values, row-major order.
pub fn tuples(points: usize, rank: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = points.pow(rank as u32);
    (0..total).map(move |mut flat| {
        let mut t = vec![0; rank];
        for slot in (0..rank).rev() {
            t[slot] = flat % points;
            flat /= points;
        }
        t
    })
}

pub fn flat_index(tuple: &[usize], points: usize) -> usize {
    tuple.iter().fold(0, |acc, v| acc * points + v)
}

impl CumulantSet {
    pub fn new(band: CumulantBand, kind: CumulantKind, weights: Vec<f64>) -> Self {
        Self { band, kind, weights, tensors: BTreeMap::new() }
    }

    pub fn points(&self) -> usize {
        self.weights.len()
    }

    pub fn rank(key: &[usize]) -> usize {
        key.iter().sum()
    }

    /// Broad key `(m, n)`.
    pub fn broad_key(m: usize, n: usize) -> Vec<usize> {
        vec![m, n]
    }

    pub fn insert(&mut self, key: Vec<usize>, tensor: Vec<C64>) -> Result<()> {
        if key.len() != self.band.blocks() {
            return Err(LabError::Shape(format!("key {key:?} needs {} block counts", self.band.blocks())));
        }
        let expect = self.points().pow(Self::rank(&key) as u32);
        if tensor.len() != expect {
            return Err(LabError::Shape(format!("tensor {key:?} has {} entries, expected {expect}", tensor.len())));
        }
        if tensor.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(LabError::Invalid(format!("tensor {key:?} has non-finite entries")));
        }
        self.tensors.insert(key, tensor);
        Ok(())
    }

    pub fn get(&self, key: &[usize]) -> Option<&Vec<C64>> {
        self.tensors.get(key)
    }

    pub fn entry(&self, key: &[usize], tuple: &[usize]) -> C64 {
        self.get(key).map(|t| t[flat_index(tuple, self.points())]).unwrap_or_default()
    }

    /// Block ranges of the slots of `key`.
    pub fn slot_blocks(key: &[usize]) -> Vec<usize> {
        key.iter().enumerate().flat_map(|(b, c)| std::iter::repeat_n(b, *c)).collect()
    }

    /// Largest deviation from symmetry within blocks, over all tensors.
    pub fn symmetry_defect(&self) -> f64 {
        let np = self.points();
        let mut worst = 0.0f64;
        for (key, t) in &self.tensors {
            for tuple in tuples(np, Self::rank(key)) {
                let s = canonical_tuple(key, &tuple);
                worst = worst.max((t[flat_index(&tuple, np)] - t[flat_index(&s, np)]).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &CumulantSet) -> f64 {
        let mut worst = 0.0f64;
        let keys: std::collections::BTreeSet<&Vec<usize>> = self.tensors.keys().chain(other.tensors.keys()).collect();
        for key in keys {
            let n = self.points().pow(Self::rank(key) as u32);
            let zero = vec![C64::new(0.0, 0.0); n];
            let a = self.get(key).unwrap_or(&zero);
            let b = other.get(key).unwrap_or(&zero);
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).norm());
            }
        }
        worst
    }

    fn response_count(&self, key: &[usize]) -> usize {
        key.iter().zip(self.band.response_blocks()).filter(|(_, r)| **r).map(|(c, _)| c).sum()
    }

    /// Polynomial form of the log-functional.
    pub fn to_poly(&self) -> FunctionalPoly {
        let np = self.points();
        let mut poly = FunctionalPoly::zero();
        for (key, t) in &self.tensors {
            let blocks = Self::slot_blocks(key);
            let phase = C64::new(0.0, 1.0).powu(self.response_count(key) as u32);
            for tuple in tuples(np, blocks.len()) {
                if canonical_tuple(key, &tuple) != tuple {
                    continue;
                }
                let value = t[flat_index(&tuple, np)];
                if value == C64::new(0.0, 0.0) {
                    continue;
                }
                let vars: Vec<usize> = tuple.iter().zip(&blocks).map(|(p, b)| b * np + p).collect();
                let w: f64 = tuple.iter().map(|p| self.weights[*p]).product();
                poly.add_term(Monomial::from_vars(&vars), phase * value * w / multiplicity_factorials(&vars));
            }
        }
        poly
    }

    /// Reads the tensors of `keys` back from a log-functional polynomial.
    pub fn from_poly(
        poly: &FunctionalPoly,
        band: CumulantBand,
        kind: CumulantKind,
        weights: Vec<f64>,
        keys: &[Vec<usize>],
    ) -> Self {
        let mut set = Self::new(band, kind, weights);
        let np = set.points();
        for key in keys {
            let blocks = Self::slot_blocks(key);
            let phase = C64::new(0.0, 1.0).powu(set.response_count(key) as u32);
            let tensor: Vec<C64> = tuples(np, blocks.len())
                .map(|tuple| {
                    let vars: Vec<usize> = tuple.iter().zip(&blocks).map(|(p, b)| b * np + p).collect();
                    let w: f64 = tuple.iter().map(|p| set.weights[*p]).product();
                    poly.coefficient(Monomial::from_vars(&vars)) * multiplicity_factorials(&vars) / (phase * w)
                })
                .collect();
            set.tensors.insert(key.clone(), tensor);
        }
        set
    }

    /// Symmetrised random tensor for `key` with entries in the unit disc.
    pub fn random_symmetric(key: &[usize], points: usize, rng: &mut impl rand::Rng) -> Vec<C64> {
        let rank = Self::rank(key);
        let mut t = vec![C64::new(0.0, 0.0); points.pow(rank as u32)];
        let mut cache = std::collections::HashMap::new();
        for tuple in tuples(points, rank) {
            let c = canonical_tuple(key, &tuple);
            let v = *cache
                .entry(c)
                .or_insert_with(|| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            t[flat_index(&tuple, points)] = v;
        }
        t
    }
}

/// Tuple sorted within each block.
pub fn canonical_tuple(key: &[usize], tuple: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(tuple.len());
    let mut start = 0;
    for c in key {
        let mut part = tuple[start..start + c].to_vec();
        part.sort_unstable();
        out.extend(part);
        start += c;
    }
    out
}

fn multiplicity_factorials(vars: &[usize]) -> f64 {
    let mut sorted = vars.to_vec();
    sorted.sort_unstable();
    let mut out = 1.0;
    let mut run = 1;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            out *= factorial(run);
            run = 1;
        }
    }
    out
}

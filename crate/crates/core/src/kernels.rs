//! Mode sets and the Green-function family built from them.
//!
//! Broad-band kernels describe the real potential field, narrow-band kernels
//! the slow envelope of a resonant field with the carrier `omega0` removed.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::fock::{expectation_series, FockSpace, OpLabel, Source, Sources, Stepping};
use crate::freq;
use crate::grid::{theta_lag, Signal, SiteSet, StationaryKernel, TimeGrid};
use crate::report::Report;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Broad,
    Narrow,
}

impl Band {
    pub fn tag(&self) -> &'static str {
        match self {
            Band::Broad => "broad",
            Band::Narrow => "narrow",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    pub band: Band,
    pub omegas: Vec<f64>,
    /// Mode functions `u_k(x)`, indexed `(mode, site)`.
    pub profiles: Array2<C64>,
    pub sites: SiteSet,
    pub omega0: f64,
}

impl ModeSet {
    pub fn new(band: Band, omegas: Vec<f64>, profiles: Array2<C64>, sites: SiteSet, omega0: f64) -> Result<Self> {
        if let Some(w) = omegas.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(LabError::Invalid(format!("mode frequency must be positive, got {w}")));
        }
        if profiles.dim() != (omegas.len(), sites.len()) {
            return Err(LabError::Shape(format!(
                "mode table has shape {:?}, expected ({}, {})",
                profiles.dim(),
                omegas.len(),
                sites.len()
            )));
        }
        if !(omega0 >= 0.0) || !omega0.is_finite() {
            return Err(LabError::Invalid(format!("carrier frequency must be non-negative, got {omega0}")));
        }
        Ok(Self { band, omegas, profiles, sites, omega0 })
    }

    /// Modes with unit profile at a single site.
    pub fn single_site(band: Band, omegas: Vec<f64>, omega0: f64) -> Result<Self> {
        let k = omegas.len();
        Self::new(band, omegas, Array2::from_elem((k, 1), C64::new(1.0, 0.0)), SiteSet::single(), omega0)
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn u(&self, mode: usize, x: usize) -> C64 {
        self.profiles[[mode, x]]
    }

    /// Frequency of mode `k` in the frame used by the stored kernels.
    pub fn kernel_frequency(&self, k: usize) -> f64 {
        match self.band {
            Band::Broad => self.omegas[k],
            Band::Narrow => self.omegas[k] - self.omega0,
        }
    }

    /// `max_k |w_k - w0| / w0`.
    pub fn bandwidth_ratio(&self) -> f64 {
        if self.omega0 == 0.0 {
            return f64::INFINITY;
        }
        self.omegas.iter().fold(0.0f64, |a, w| a.max((w - self.omega0).abs())) / self.omega0
    }

    /// Largest distance of a kernel frequency from the grid's harmonic lattice,
    /// in units of the lattice spacing.
    pub fn commensurability_defect(&self, grid: &TimeGrid) -> f64 {
        (0..self.len()).fold(0.0f64, |a, k| a.max(grid.commensurability_defect(self.kernel_frequency(k))))
    }

    pub fn is_commensurate(&self, grid: &TimeGrid) -> bool {
        self.commensurability_defect(grid) < 1e-9
    }

    /// Hex SHA-256 over the band tag, carrier, frequencies, profiles and weights.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.band.tag().as_bytes());
        h.update(self.omega0.to_le_bytes());
        for w in &self.omegas {
            h.update(w.to_le_bytes());
        }
        for v in self.profiles.iter() {
            h.update(v.re.to_le_bytes());
            h.update(v.im.to_le_bytes());
        }
        for w in self.sites.weights() {
            h.update(w.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelFamily {
    pub band: Band,
    pub plus: StationaryKernel,
    pub retarded: StationaryKernel,
    pub feynman: StationaryKernel,
}

/// Broad: `i sum u(x) u*(x') exp(-i w tau) / (2 w)`.
/// Narrow: `i sum (w/2) u(x) u*(x') exp(-i (w - w0) tau)`.
pub fn build_plus_kernel(modes: &ModeSet, grid: TimeGrid) -> StationaryKernel {
    let m = modes.sites.len();
    let n = grid.n;
    let entries: Vec<C64> = (0..m * m)
        .into_par_iter()
        .flat_map_iter(|p| {
            let (x, xp) = (p / m, p % m);
            (0..n).map(move |k| {
                let tau = grid.lag_time(k);
                let mut acc = C64::new(0.0, 0.0);
                for mode in 0..modes.len() {
                    let w = modes.omegas[mode];
                    let amp = match modes.band {
                        Band::Broad => 1.0 / (2.0 * w),
                        Band::Narrow => w / 2.0,
                    };
                    let phase = C64::from_polar(1.0, -modes.kernel_frequency(mode) * tau);
                    acc += modes.u(mode, x) * modes.u(mode, xp).conj() * phase * amp;
                }
                acc * C64::i()
            })
        })
        .collect();
    let values = ndarray::Array3::from_shape_vec((m, m, n), entries).expect("kernel shape");
    StationaryKernel { grid, sites: modes.sites.clone(), values }
}

/// Multiplies lag sample `k` by the step function `theta_lag(k)`.
pub fn theta_gate(k: &StationaryKernel) -> StationaryKernel {
    let n = k.n();
    let mut out = k.clone();
    for ((_, _, lag), v) in out.values.indexed_iter_mut() {
        *v *= theta_lag(lag, n);
    }
    out
}

pub fn derive_kernel_family(plus: &StationaryKernel, band: Band) -> KernelFamily {
    match band {
        Band::Narrow => {
            let r = theta_gate(plus);
            KernelFamily { band, plus: plus.clone(), retarded: r.clone(), feynman: r }
        }
        Band::Broad => {
            let refl = plus.reflected();
            let retarded = theta_gate(&plus.sub(&refl));
            let gated = theta_gate(plus);
            let feynman = gated.add(&gated.reflected());
            KernelFamily { band, plus: plus.clone(), retarded, feynman }
        }
    }
}

pub fn kernel_family(modes: &ModeSet, grid: TimeGrid) -> KernelFamily {
    derive_kernel_family(&build_plus_kernel(modes, grid), modes.band)
}

/// Checks the construction relations and the retarded-kernel transforms of
/// the contractions on the grid.
pub fn verify_contraction_transform(family: &KernelFamily) -> Report {
    let mut rep = Report::new();
    let tol = 1e-10;
    let n = family.plus.n();
    let causal = family
        .retarded
        .values
        .indexed_iter()
        .filter(|((_, _, k), _)| 2 * k > n)
        .fold(0.0f64, |a, (_, v)| a.max(v.norm()));
    rep.push("retarded kernel vanishes at negative lag", causal, tol);
    let herm = family.plus.max_abs_diff(&family.plus.reflected().conj().scale(C64::new(-1.0, 0.0)));
    rep.push("plus kernel hermiticity", herm, tol);
    match family.band {
        Band::Broad => {
            let rp = freq::positive_part_lag(&family.retarded);
            let rm = freq::negative_part_lag(&family.retarded);
            let feyn = rp.add(&rp.reflected());
            rep.push("feynman from retarded positive part", family.feynman.max_abs_diff(&feyn), tol);
            let plus = rp.sub(&rm.reflected());
            rep.push("plus from retarded frequency parts", family.plus.max_abs_diff(&plus), tol);
            let imag = family.retarded.values.iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
            rep.push("broad retarded kernel is real", imag, tol);
        }
        Band::Narrow => {
            rep.push("narrow feynman equals retarded", family.feynman.max_abs_diff(&family.retarded), tol);
            let plus = family.retarded.sub(&family.retarded.conj().reflected());
            rep.push("narrow plus from retarded", family.plus.max_abs_diff(&plus), tol);
        }
    }
    rep
}

/// The commutator kernel `-i hbar [K_R(x,x',tau) - K'(x',x,-tau)]`, where `K'`
/// is the retarded kernel (broad) or its conjugate (narrow).
pub fn commutator_kernel(family: &KernelFamily, hbar: f64) -> StationaryKernel {
    let refl = match family.band {
        Band::Broad => family.retarded.reflected(),
        Band::Narrow => family.retarded.conj().reflected(),
    };
    family.retarded.sub(&refl).scale(C64::new(0.0, -hbar))
}

/// Compares the oracle field commutator with the commutator kernel on the
/// sub-cutoff block, for every site pair and every lag of the grid.
pub fn verify_wave_quantisation(modes: &ModeSet, grid: TimeGrid, hbar: f64) -> Result<Report> {
    let family = kernel_family(modes, grid);
    let comm = commutator_kernel(&family, hbar);
    let (space, a, b) = match modes.band {
        Band::Broad => (FockSpace::field_only(Some(modes.clone()), None, 2, hbar)?, OpLabel::A, OpLabel::A),
        Band::Narrow => (FockSpace::field_only(None, Some(modes.clone()), 2, hbar)?, OpLabel::E, OpLabel::Edag),
    };
    let m = modes.sites.len();
    let t_ref = grid.t0;
    let tasks: Vec<(usize, usize, usize)> =
        (0..m).flat_map(|x| (0..m).flat_map(move |xp| (0..grid.n).map(move |k| (x, xp, k)))).collect();
    let dev = tasks
        .par_iter()
        .map(|&(x, xp, k)| -> Result<f64> {
            let lhs = space.field_triplets(a, x, grid.time(k))?;
            let rhs = space.field_triplets(b, xp, t_ref)?;
            let block = space.commutator_block(&lhs, &rhs);
            let expect = comm.at(x, xp, k);
            let mut d = 0.0f64;
            for i in 0..block.nrows() {
                for j in 0..block.ncols() {
                    let e = if i == j { expect } else { C64::new(0.0, 0.0) };
                    d = d.max((block[(i, j)] - e).norm());
                }
            }
            Ok(d)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    let mut rep = Report::new();
    let name = match modes.band {
        Band::Broad => "broad wave quantisation",
        Band::Narrow => "narrow wave quantisation",
    };
    rep.push(name, dev, 1e-12);
    Ok(rep)
}

/// Kubo response measured on the oracle: the field driven by the c-number
/// source alone (current for broad, dipole for narrow), finite-differenced
/// in the amplitude `eps` and sampled on the source grid.
pub fn linear_response_probe(modes: &ModeSet, source: &Signal, hbar: f64, eps: f64, cutoff: usize) -> Result<Signal> {
    if !(eps > 0.0) {
        return Err(LabError::Invalid("probe amplitude must be positive".into()));
    }
    let grid = source.grid;
    let stepping = Stepping::new(grid.t0, grid.dt)?;
    let drive = Source::interpolated(&source.scale(C64::new(eps, 0.0)));
    let (space, sources, label) = match modes.band {
        Band::Broad => (
            FockSpace::field_only(Some(modes.clone()), None, cutoff, hbar)?,
            Sources { j_e: Some(drive), ..Sources::none() },
            OpLabel::A,
        ),
        Band::Narrow => (
            FockSpace::field_only(None, Some(modes.clone()), cutoff, hbar)?,
            Sources { d_e: Some(drive), ..Sources::none() },
            OpLabel::E,
        ),
    };
    let mut out = Signal::zeros(grid, source.sites.clone());
    for x in 0..source.m() {
        let on = expectation_series(&space, label, x, &sources, stepping, grid.n - 1)?;
        let off = expectation_series(&space, label, x, &Sources::none(), stepping, grid.n - 1)?;
        for k in 0..grid.n {
            out.values[[x, k]] = (on[k] - off[k]) / eps;
        }
    }
    Ok(out)
}

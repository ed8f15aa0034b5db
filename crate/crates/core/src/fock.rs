//! Exact truncated Fock-space oracle.
//!
//! The composite Hilbert space is (field modes, each truncated at `cutoff`
//! quanta) times a finite device space. Broad modes come first in the mode
//! order, narrow modes after them; the basis index is
//! `field_index * device_dim + device_index`, with mode 0 the least
//! significant field digit. The field starts in vacuum.
//!
//! Interaction-picture operators carry the free time dependence. The narrow
//! field and the dipole are stored as slow envelopes: both carry an extra
//! factor `exp(+i w0 t)` relative to the plain interaction picture, which
//! cancels in every product that appears in the interaction Hamiltonian.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Signal, SiteSet};
use crate::kernels::{Band, ModeSet};
use crate::report::Report;

pub type CMat = DMatrix<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub const DEFAULT_DIMENSION_BUDGET: usize = 4096;

/// Sparse field-space operator as `(row, col, value)` triplets.
type Sparse = Vec<(usize, usize, C64)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpLabel {
    A,
    E,
    Edag,
    J,
    D,
    Ddag,
}

impl OpLabel {
    pub fn adjoint(self) -> Self {
        match self {
            OpLabel::E => OpLabel::Edag,
            OpLabel::Edag => OpLabel::E,
            OpLabel::D => OpLabel::Ddag,
            OpLabel::Ddag => OpLabel::D,
            other => other,
        }
    }

    pub fn is_field(self) -> bool {
        matches!(self, OpLabel::A | OpLabel::E | OpLabel::Edag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedFactor {
    pub op: OpLabel,
    pub site: usize,
    pub time: f64,
    pub branch: Branch,
}

impl OrderedFactor {
    pub fn new(op: OpLabel, site: usize, time: f64, branch: Branch) -> Self {
        Self { op, site, time, branch }
    }

    pub fn plus(op: OpLabel, site: usize, time: f64) -> Self {
        Self::new(op, site, time, Branch::Plus)
    }

    pub fn minus(op: OpLabel, site: usize, time: f64) -> Self {
        Self::new(op, site, time, Branch::Minus)
    }

    /// Adjoint operator on the opposite branch.
    pub fn conjugated(&self) -> Self {
        let branch = match self.branch {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        };
        Self { op: self.op.adjoint(), branch, ..*self }
    }
}

/// Positions of `factors` in closed-time-loop order: minus-branch factors by
/// increasing time, then plus-branch factors by decreasing time. Equal times
/// keep list order.
pub fn contour_order(factors: &[OrderedFactor]) -> Vec<usize> {
    let mut minus: Vec<usize> = (0..factors.len()).filter(|&i| factors[i].branch == Branch::Minus).collect();
    let mut plus: Vec<usize> = (0..factors.len()).filter(|&i| factors[i].branch == Branch::Plus).collect();
    minus.sort_by(|&a, &b| factors[a].time.partial_cmp(&factors[b].time).expect("finite time"));
    plus.sort_by(|&a, &b| factors[b].time.partial_cmp(&factors[a].time).expect("finite time"));
    minus.extend(plus);
    minus
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceKind {
    None,
    TwoLevel,
    LinearOscillator,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceState {
    Ground,
    Excited,
    MaximallyMixed,
    /// Gibbs state at inverse temperature `beta` (in units of `1/(hbar w)`).
    Thermal(f64),
}

/// Device Hamiltonian, current and dipole tables, and initial state.
#[derive(Clone, Debug)]
pub struct Device {
    pub kind: DeviceKind,
    pub hamiltonian: CMat,
    /// Hermitian current operator per site.
    pub currents: Vec<CMat>,
    /// Dipole (lowering-type) operator per site.
    pub dipoles: Vec<CMat>,
    pub rho: CMat,
    /// Transition frequency, used for the dipole rotating frame bookkeeping.
    pub omega: f64,
    energies: Vec<f64>,
    basis: CMat,
}

impl Device {
    pub fn custom(hamiltonian: CMat, currents: Vec<CMat>, dipoles: Vec<CMat>, rho: CMat) -> Result<Self> {
        let d = hamiltonian.nrows();
        if hamiltonian.ncols() != d || rho.shape() != (d, d) {
            return Err(LabError::Shape("device matrices must be square and of equal size".into()));
        }
        if currents.iter().chain(dipoles.iter()).any(|m| m.shape() != (d, d)) {
            return Err(LabError::Shape("device operator tables must match the device dimension".into()));
        }
        if currents.len() != dipoles.len() {
            return Err(LabError::Shape("current and dipole tables need one entry per site".into()));
        }
        if hermitian_defect(&hamiltonian) > 1e-12 {
            return Err(LabError::Invalid("device Hamiltonian is not Hermitian".into()));
        }
        if currents.iter().any(|j| hermitian_defect(j) > 1e-12) {
            return Err(LabError::Invalid("current operators must be Hermitian".into()));
        }
        check_density(&rho)?;
        let eig = SymmetricEigen::new(hamiltonian.clone());
        Ok(Self {
            kind: DeviceKind::Custom,
            energies: eig.eigenvalues.iter().copied().collect(),
            basis: eig.eigenvectors,
            hamiltonian,
            currents,
            dipoles,
            rho,
            omega: 0.0,
        })
    }

    /// Trivial one-dimensional device with no current and no dipole.
    pub fn none(sites: usize) -> Self {
        let z = CMat::zeros(1, 1);
        let mut d = Self::custom(z.clone(), vec![z.clone(); sites], vec![z; sites], CMat::identity(1, 1)).expect("trivial device");
        d.kind = DeviceKind::None;
        d
    }

    /// Two-level system with `H = hbar w |e><e|`, current `g_x sigma_x` and
    /// dipole `d_x sigma_-`.
    pub fn two_level(omega: f64, hbar: f64, current_coupling: &[f64], dipole_coupling: &[C64], state: &DeviceState) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(LabError::Invalid("device frequency must be positive".into()));
        }
        let h = CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, C64::new(hbar * omega, 0.0)]);
        let lower = CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let sx = &lower + lower.adjoint();
        let currents = current_coupling.iter().map(|g| &sx * C64::new(*g, 0.0)).collect();
        let dipoles = dipole_coupling.iter().map(|d| &lower * *d).collect();
        let rho = match state {
            DeviceState::Ground => CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]),
            DeviceState::Excited => CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]),
            DeviceState::MaximallyMixed => CMat::identity(2, 2) * C64::new(0.5, 0.0),
            DeviceState::Thermal(beta) => gibbs(&[0.0, 1.0], *beta),
        };
        let mut d = Self::custom(h, currents, dipoles, rho)?;
        d.kind = DeviceKind::TwoLevel;
        d.omega = omega;
        Ok(d)
    }

    /// Harmonic oscillator truncated at `cutoff` quanta, with current
    /// `g_x sqrt(hbar / 2w) (b + b^dag)` and dipole `d_x b`.
    pub fn linear_oscillator(
        omega: f64,
        cutoff: usize,
        hbar: f64,
        current_coupling: &[f64],
        dipole_coupling: &[C64],
        state: &DeviceState,
    ) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(LabError::Invalid("device frequency must be positive".into()));
        }
        let d = cutoff + 1;
        let mut b = CMat::zeros(d, d);
        for k in 1..d {
            b[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
        }
        let h = CMat::from_fn(d, d, |i, j| if i == j { C64::new(hbar * omega * i as f64, 0.0) } else { ZERO });
        let x = (&b + b.adjoint()) * C64::new((hbar / (2.0 * omega)).sqrt(), 0.0);
        let currents = current_coupling.iter().map(|g| &x * C64::new(*g, 0.0)).collect();
        let dipoles = dipole_coupling.iter().map(|c| &b * *c).collect();
        let levels: Vec<f64> = (0..d).map(|i| i as f64).collect();
        let rho = match state {
            DeviceState::Ground => CMat::from_fn(d, d, |i, j| if i == 0 && j == 0 { ONE } else { ZERO }),
            DeviceState::Excited => CMat::from_fn(d, d, |i, j| if i == 1 && j == 1 { ONE } else { ZERO }),
            DeviceState::MaximallyMixed => CMat::identity(d, d) * C64::new(1.0 / d as f64, 0.0),
            DeviceState::Thermal(beta) => gibbs(&levels, *beta),
        };
        let mut dev = Self::custom(h, currents, dipoles, rho)?;
        dev.kind = DeviceKind::LinearOscillator;
        dev.omega = omega;
        Ok(dev)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn sites(&self) -> usize {
        self.currents.len()
    }

    pub fn has_current(&self) -> bool {
        self.currents.iter().any(|j| j.iter().any(|v| *v != ZERO))
    }

    /// `exp(i H t / hbar) X exp(-i H t / hbar)`.
    pub fn evolve(&self, x: &CMat, t: f64, hbar: f64) -> CMat {
        let v = &self.basis;
        let inner = v.adjoint() * x * v;
        let phases: Vec<C64> = self.energies.iter().map(|e| C64::from_polar(1.0, e * t / hbar)).collect();
        let rotated = CMat::from_fn(inner.nrows(), inner.ncols(), |i, j| phases[i] * inner[(i, j)] * phases[j].conj());
        v * rotated * v.adjoint()
    }
}

fn gibbs(levels: &[f64], beta: f64) -> CMat {
    let w: Vec<f64> = levels.iter().map(|e| (-beta * e).exp()).collect();
    let z: f64 = w.iter().sum();
    let d = levels.len();
    CMat::from_fn(d, d, |i, j| if i == j { C64::new(w[i] / z, 0.0) } else { ZERO })
}

fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().fold(0.0f64, |a, v| a.max(v.norm()))
}

fn check_density(rho: &CMat) -> Result<()> {
    if hermitian_defect(rho) > 1e-12 {
        return Err(LabError::Invalid("device state is not Hermitian".into()));
    }
    let tr: C64 = rho.diagonal().iter().sum();
    if (tr - ONE).norm() > 1e-12 {
        return Err(LabError::Invalid(format!("device state has trace {tr}")));
    }
    let eig = SymmetricEigen::new(rho.clone());
    if let Some(l) = eig.eigenvalues.iter().find(|l| **l < -1e-12) {
        return Err(LabError::Invalid(format!("device state has negative eigenvalue {l}")));
    }
    Ok(())
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.norm()))
}

/// Time-dependent c-number source `f(site, t)`.
#[derive(Clone)]
pub struct Source(Arc<dyn Fn(usize, f64) -> C64 + Send + Sync>);

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Source(..)")
    }
}

impl Source {
    pub fn new(f: impl Fn(usize, f64) -> C64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn at(&self, x: usize, t: f64) -> C64 {
        (self.0)(x, t)
    }

    /// Holds sample `k` of the signal on `[t_k, t_k + dt)`, periodically.
    pub fn held(signal: &Signal) -> Self {
        let s = signal.clone();
        Self::new(move |x, t| {
            let u = ((t - s.grid.t0) / s.grid.dt).floor();
            let k = (u as i64).rem_euclid(s.grid.n as i64) as usize;
            s.values[[x, k]]
        })
    }

    /// Periodic linear interpolation between samples.
    pub fn interpolated(signal: &Signal) -> Self {
        let s = signal.clone();
        Self::new(move |x, t| {
            let u = (t - s.grid.t0) / s.grid.dt;
            let f = u.floor();
            let a = u - f;
            let n = s.grid.n as i64;
            let k0 = (f as i64).rem_euclid(n) as usize;
            let k1 = (k0 + 1) % s.grid.n;
            s.values[[x, k0]] * (1.0 - a) + s.values[[x, k1]] * a
        })
    }

    pub fn sum(&self, other: &Source) -> Self {
        let (a, b) = (self.clone(), other.clone());
        Self::new(move |x, t| a.at(x, t) + b.at(x, t))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let a = self.clone();
        Self::new(move |x, t| a.at(x, t) * c)
    }
}

/// External c-number sources of the interaction Hamiltonian. `j_e` and `a_e`
/// enter as real functions; only their real parts are used.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub j_e: Option<Source>,
    pub a_e: Option<Source>,
    pub d_e: Option<Source>,
    pub e_e: Option<Source>,
}

impl Sources {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.j_e.is_none() && self.a_e.is_none() && self.d_e.is_none() && self.e_e.is_none()
    }
}

/// Dense operator with an optional time tag.
#[derive(Clone, Debug)]
pub struct FockOperator {
    pub matrix: CMat,
    pub time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FieldOps {
    pub a: Option<FockOperator>,
    pub e: Option<FockOperator>,
    pub edag: Option<FockOperator>,
}

#[derive(Clone, Debug)]
pub struct FockSpace {
    pub broad: Option<ModeSet>,
    pub narrow: Option<ModeSet>,
    pub cutoff: usize,
    pub device: Device,
    pub hbar: f64,
    /// Scales the operator-operator coupling terms `J A` and `D E^dag + h.c.`.
    pub coupling: f64,
    sites: SiteSet,
    field_dim: usize,
    lowering: Vec<Sparse>,
}

impl FockSpace {
    pub fn new(
        broad: Option<ModeSet>,
        narrow: Option<ModeSet>,
        cutoff: usize,
        device: Device,
        hbar: f64,
        budget: usize,
    ) -> Result<Self> {
        if !(hbar > 0.0) {
            return Err(LabError::Invalid("hbar must be positive".into()));
        }
        if let Some(b) = &broad {
            if b.band != Band::Broad {
                return Err(LabError::Invalid("broad slot holds a narrow mode set".into()));
            }
        }
        if let Some(nm) = &narrow {
            if nm.band != Band::Narrow {
                return Err(LabError::Invalid("narrow slot holds a broad mode set".into()));
            }
        }
        let sites = match (&broad, &narrow) {
            (Some(b), Some(nm)) => {
                if b.sites != nm.sites {
                    return Err(LabError::Shape("broad and narrow mode sets use different sites".into()));
                }
                b.sites.clone()
            }
            (Some(b), None) => b.sites.clone(),
            (None, Some(nm)) => nm.sites.clone(),
            (None, None) => SiteSet::uniform(device.sites().max(1), 1.0)?,
        };
        if device.sites() != sites.len() {
            return Err(LabError::Shape(format!(
                "device tables cover {} sites, mode sets {}",
                device.sites(),
                sites.len()
            )));
        }
        let k = broad.as_ref().map_or(0, |m| m.len()) + narrow.as_ref().map_or(0, |m| m.len());
        let levels = cutoff + 1;
        let field_dim = levels
            .checked_pow(k as u32)
            .ok_or_else(|| LabError::Budget("Fock dimension overflows".into()))?;
        let dim = field_dim
            .checked_mul(device.dim())
            .ok_or_else(|| LabError::Budget("Fock dimension overflows".into()))?;
        if dim > budget {
            return Err(LabError::Budget(format!("Hilbert-space dimension {dim} exceeds budget {budget}")));
        }
        let lowering = (0..k)
            .map(|mode| {
                let stride = levels.pow(mode as u32);
                let mut ops = Sparse::new();
                for idx in 0..field_dim {
                    let occ = (idx / stride) % levels;
                    if occ > 0 {
                        ops.push((idx - stride, idx, C64::new((occ as f64).sqrt(), 0.0)));
                    }
                }
                ops
            })
            .collect();
        Ok(Self { broad, narrow, cutoff, device, hbar, coupling: 1.0, sites, field_dim, lowering })
    }

    /// Field-only space with the trivial device.
    pub fn field_only(broad: Option<ModeSet>, narrow: Option<ModeSet>, cutoff: usize, hbar: f64) -> Result<Self> {
        let m = broad.as_ref().or(narrow.as_ref()).map_or(1, |s| s.sites.len());
        Self::new(broad, narrow, cutoff, Device::none(m), hbar, DEFAULT_DIMENSION_BUDGET)
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn dim(&self) -> usize {
        self.field_dim * self.device.dim()
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    fn n_broad(&self) -> usize {
        self.broad.as_ref().map_or(0, |m| m.len())
    }

    fn n_modes(&self) -> usize {
        self.lowering.len()
    }

    /// Occupation of every mode for basis index `idx`.
    pub fn occupations(&self, idx: usize) -> Vec<usize> {
        let levels = self.cutoff + 1;
        let f = idx / self.device.dim();
        (0..self.n_modes()).map(|m| (f / levels.pow(m as u32)) % levels).collect()
    }

    /// Adds `c * (F (x) X)` to `out`, where `F` is sparse field-space and `X`
    /// a device-space matrix (identity when `None`).
    fn add_kron(&self, out: &mut CMat, field: Option<&Sparse>, dev: Option<&CMat>, c: C64) {
        let dd = self.device.dim();
        let mut block = |r: usize, col: usize, v: C64| match dev {
            Some(x) => {
                for i in 0..dd {
                    for j in 0..dd {
                        out[(r * dd + i, col * dd + j)] += v * x[(i, j)];
                    }
                }
            }
            None => {
                for i in 0..dd {
                    out[(r * dd + i, col * dd + i)] += v;
                }
            }
        };
        match field {
            Some(f) => {
                for &(r, col, v) in f {
                    block(r, col, v * c);
                }
            }
            None => {
                for r in 0..self.field_dim {
                    block(r, r, c);
                }
            }
        }
    }

    fn add_lowering(&self, out: &mut CMat, mode: usize, dev: Option<&CMat>, c: C64) {
        self.add_kron(out, Some(&self.lowering[mode]), dev, c);
    }

    fn add_raising(&self, out: &mut CMat, mode: usize, dev: Option<&CMat>, c: C64) {
        let dd = self.device.dim();
        for &(r, col, v) in &self.lowering[mode] {
            let w = v * c;
            match dev {
                Some(x) => {
                    for i in 0..dd {
                        for j in 0..dd {
                            out[(col * dd + i, r * dd + j)] += w * x[(i, j)];
                        }
                    }
                }
                None => {
                    for i in 0..dd {
                        out[(col * dd + i, r * dd + i)] += w;
                    }
                }
            }
        }
    }

    /// Coefficients `c_k` of the lowering operators in the positive-frequency
    /// part of a field: broad `A = sum c_k a_k + h.c.`, narrow `E = sum c_k a_k`.
    fn field_coefficients(&self, op: OpLabel, x: usize, t: f64) -> Vec<(usize, C64)> {
        let hbar = self.hbar;
        match op {
            OpLabel::A => self
                .broad
                .as_ref()
                .map(|m| {
                    (0..m.len())
                        .map(|k| {
                            let w = m.omegas[k];
                            (k, m.u(k, x) * C64::from_polar((hbar / (2.0 * w)).sqrt(), -w * t))
                        })
                        .collect()
                })
                .unwrap_or_default(),
            OpLabel::E => {
                let off = self.n_broad();
                self.narrow
                    .as_ref()
                    .map(|m| {
                        (0..m.len())
                            .map(|k| {
                                let w = m.omegas[k];
                                let c = C64::i() * m.u(k, x) * C64::from_polar((hbar * w / 2.0).sqrt(), -(w - m.omega0) * t);
                                (off + k, c)
                            })
                            .collect()
                    })
                    .unwrap_or_default()
            }
            _ => Vec::new(),
        }
    }

    fn carrier(&self) -> f64 {
        self.narrow.as_ref().map_or(0.0, |m| m.omega0)
    }

    /// Interaction-picture device operator in the composite space.
    fn device_op(&self, op: OpLabel, x: usize, t: f64) -> CMat {
        let dev = match op {
            OpLabel::J => self.device.evolve(&self.device.currents[x], t, self.hbar),
            OpLabel::D => self.device.evolve(&self.device.dipoles[x], t, self.hbar) * C64::from_polar(1.0, self.carrier() * t),
            OpLabel::Ddag => {
                (self.device.evolve(&self.device.dipoles[x], t, self.hbar) * C64::from_polar(1.0, self.carrier() * t)).adjoint()
            }
            _ => unreachable!("device_op called with a field label"),
        };
        let mut out = CMat::zeros(self.dim(), self.dim());
        self.add_kron(&mut out, None, Some(&dev), ONE);
        out
    }

    /// Interaction-picture operator for a factor label at site `x`, time `t`.
    pub fn interaction_op(&self, op: OpLabel, x: usize, t: f64) -> Result<CMat> {
        if x >= self.sites.len() {
            return Err(LabError::Invalid(format!("site {x} out of range")));
        }
        let mut out = CMat::zeros(self.dim(), self.dim());
        match op {
            OpLabel::A => {
                for (k, c) in self.field_coefficients(OpLabel::A, x, t) {
                    self.add_lowering(&mut out, k, None, c);
                    self.add_raising(&mut out, k, None, c.conj());
                }
            }
            OpLabel::E => {
                for (k, c) in self.field_coefficients(OpLabel::E, x, t) {
                    self.add_lowering(&mut out, k, None, c);
                }
            }
            OpLabel::Edag => {
                for (k, c) in self.field_coefficients(OpLabel::E, x, t) {
                    self.add_raising(&mut out, k, None, c.conj());
                }
            }
            _ => return Ok(self.device_op(op, x, t)),
        }
        Ok(out)
    }

    /// Field operator as sparse triplets in the composite space.
    pub fn field_triplets(&self, op: OpLabel, x: usize, t: f64) -> Result<Vec<(usize, usize, C64)>> {
        if !op.is_field() {
            return Err(LabError::Invalid("sparse form is available for field operators only".into()));
        }
        if x >= self.sites.len() {
            return Err(LabError::Invalid(format!("site {x} out of range")));
        }
        let dd = self.device.dim();
        let label = if op == OpLabel::Edag { OpLabel::E } else { op };
        let mut out = Vec::new();
        for (k, c) in self.field_coefficients(label, x, t) {
            for &(r, col, v) in &self.lowering[k] {
                for i in 0..dd {
                    match op {
                        OpLabel::A => {
                            out.push((r * dd + i, col * dd + i, v * c));
                            out.push((col * dd + i, r * dd + i, v * c.conj()));
                        }
                        OpLabel::E => out.push((r * dd + i, col * dd + i, v * c)),
                        _ => out.push((col * dd + i, r * dd + i, v * c.conj())),
                    }
                }
            }
        }
        Ok(out)
    }

    /// Basis indices whose occupations are all below the cutoff.
    pub fn sub_cutoff_states(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.below_cutoff(i)).collect()
    }

    /// `[X, Y]` restricted to the sub-cutoff block, for sparse `X`, `Y`.
    pub fn commutator_block(&self, x: &[(usize, usize, C64)], y: &[(usize, usize, C64)]) -> CMat {
        let states = self.sub_cutoff_states();
        let dim = self.dim();
        let apply = |op: &[(usize, usize, C64)], v: &[C64]| {
            let mut out = vec![ZERO; dim];
            for &(r, c, val) in op {
                out[r] += val * v[c];
            }
            out
        };
        let mut block = CMat::zeros(states.len(), states.len());
        for (j, &s) in states.iter().enumerate() {
            let mut e = vec![ZERO; dim];
            e[s] = ONE;
            let xy = apply(x, &apply(y, &e));
            let yx = apply(y, &apply(x, &e));
            for (i, &r) in states.iter().enumerate() {
                block[(i, j)] = xy[r] - yx[r];
            }
        }
        block
    }

    pub fn build_interaction_ops(&self, x: usize, t: f64) -> Result<FieldOps> {
        let tag = |m: CMat| FockOperator { matrix: m, time: Some(t) };
        Ok(FieldOps {
            a: if self.broad.is_some() { Some(tag(self.interaction_op(OpLabel::A, x, t)?)) } else { None },
            e: if self.narrow.is_some() { Some(tag(self.interaction_op(OpLabel::E, x, t)?)) } else { None },
            edag: if self.narrow.is_some() { Some(tag(self.interaction_op(OpLabel::Edag, x, t)?)) } else { None },
        })
    }

    pub fn lowering_op(&self, mode: usize) -> CMat {
        let mut out = CMat::zeros(self.dim(), self.dim());
        self.add_lowering(&mut out, mode, None, ONE);
        out
    }

    /// `hbar sum w_k a_k^dag a_k + H_dev` in the composite space.
    pub fn free_hamiltonian(&self) -> CMat {
        let mut out = CMat::zeros(self.dim(), self.dim());
        let omegas: Vec<f64> = self
            .broad
            .iter()
            .chain(self.narrow.iter())
            .flat_map(|m| m.omegas.iter().copied())
            .collect();
        let dd = self.device.dim();
        for idx in 0..self.dim() {
            let occ = self.occupations(idx);
            let e: f64 = occ.iter().zip(&omegas).map(|(n, w)| *n as f64 * w).sum();
            out[(idx, idx)] += C64::new(self.hbar * e, 0.0);
        }
        for f in 0..self.field_dim {
            for i in 0..dd {
                for j in 0..dd {
                    out[(f * dd + i, f * dd + j)] += self.device.hamiltonian[(i, j)];
                }
            }
        }
        out
    }

    /// Interaction Hamiltonian at time `t`, including the c-number sources.
    pub fn interaction_hamiltonian(&self, t: f64, sources: &Sources) -> CMat {
        let dim = self.dim();
        let mut h = CMat::zeros(dim, dim);
        let hb = self.hbar;
        for x in 0..self.sites.len() {
            let w = self.sites.weight(x);
            if self.broad.is_some() {
                let coeffs = self.field_coefficients(OpLabel::A, x, t);
                let j_dev = self.device.evolve(&self.device.currents[x], t, hb);
                let je = sources.j_e.as_ref().map_or(0.0, |s| s.at(x, t).re);
                for &(k, c) in &coeffs {
                    // -w (J A + J_e A)
                    if self.coupling != 0.0 {
                        self.add_lowering(&mut h, k, Some(&j_dev), -c * w * self.coupling);
                        self.add_raising(&mut h, k, Some(&j_dev), -c.conj() * w * self.coupling);
                    }
                    if je != 0.0 {
                        self.add_lowering(&mut h, k, None, -c * w * je);
                        self.add_raising(&mut h, k, None, -c.conj() * w * je);
                    }
                }
                if let Some(ae) = &sources.a_e {
                    let a = ae.at(x, t).re;
                    if a != 0.0 {
                        self.add_kron(&mut h, None, Some(&j_dev), C64::new(-w * a, 0.0));
                    }
                }
            } else if let Some(ae) = &sources.a_e {
                let a = ae.at(x, t).re;
                if a != 0.0 {
                    let j_dev = self.device.evolve(&self.device.currents[x], t, hb);
                    self.add_kron(&mut h, None, Some(&j_dev), C64::new(-w * a, 0.0));
                }
            }
            let carrier = C64::from_polar(1.0, self.carrier() * t);
            let d_dev = self.device.evolve(&self.device.dipoles[x], t, hb) * carrier;
            let d_adj = d_dev.adjoint();
            if self.narrow.is_some() {
                let coeffs = self.field_coefficients(OpLabel::E, x, t);
                let de = sources.d_e.as_ref().map_or(ZERO, |s| s.at(x, t));
                for &(k, c) in &coeffs {
                    // -w (D E^dag + D_e E^dag) + h.c.;  E^dag = sum c* a^dag
                    if self.coupling != 0.0 {
                        self.add_raising(&mut h, k, Some(&d_dev), -c.conj() * w * self.coupling);
                        self.add_lowering(&mut h, k, Some(&d_adj), -c * w * self.coupling);
                    }
                    if de != ZERO {
                        self.add_raising(&mut h, k, None, -c.conj() * de * w);
                        self.add_lowering(&mut h, k, None, -c * de.conj() * w);
                    }
                }
            }
            if let Some(ee) = &sources.e_e {
                let e = ee.at(x, t);
                if e != ZERO {
                    // -w (D E_e^* + h.c.)
                    self.add_kron(&mut h, None, Some(&d_dev), -e.conj() * w);
                    self.add_kron(&mut h, None, Some(&d_adj), -e * w);
                }
            }
        }
        h
    }

    /// Initial density matrix `|0><0| (x) rho_dev`.
    pub fn initial_state(&self) -> CMat {
        let mut rho = CMat::zeros(self.dim(), self.dim());
        let dd = self.device.dim();
        for i in 0..dd {
            for j in 0..dd {
                rho[(i, j)] = self.device.rho[(i, j)];
            }
        }
        rho
    }

    /// `Tr(rho_0 P)` for the initial state.
    pub fn expectation(&self, p: &CMat) -> C64 {
        let dd = self.device.dim();
        let mut acc = ZERO;
        for i in 0..dd {
            for j in 0..dd {
                acc += self.device.rho[(i, j)] * p[(j, i)];
            }
        }
        acc
    }

    /// Whether every mode occupation of basis index `idx` is below the cutoff.
    pub fn below_cutoff(&self, idx: usize) -> bool {
        self.occupations(idx).iter().all(|n| *n < self.cutoff)
    }
}

/// `exp(-i H dt / hbar)` for Hermitian `H`.
pub fn unitary_step(h: &CMat, dt: f64, hbar: f64) -> CMat {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases: Vec<C64> = eig.eigenvalues.iter().map(|l| C64::from_polar(1.0, -l * dt / hbar)).collect();
    let mut vs = v.clone();
    for (j, p) in phases.iter().enumerate() {
        for v in vs.column_mut(j).iter_mut() {
            *v *= *p;
        }
    }
    vs * v.adjoint()
}

/// Uniform stepping used by the Heisenberg evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stepping {
    pub t0: f64,
    pub dt: f64,
}

impl Stepping {
    pub fn new(t0: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(LabError::Invalid("step must be positive".into()));
        }
        Ok(Self { t0, dt })
    }

    /// Step index of time `t`, which must lie on the stepping lattice.
    pub fn index(&self, t: f64) -> Result<usize> {
        let u = (t - self.t0) / self.dt;
        let k = u.round();
        if k < 0.0 || (u - k).abs() > 1e-9 * u.abs().max(1.0) {
            return Err(LabError::Invalid(format!("time {t} is not on the stepping lattice")));
        }
        Ok(k as usize)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }
}

/// Propagators `U(t_k, t_0)` of the midpoint product formula at the requested
/// step indices (sorted, deduplicated on return).
pub fn propagators(space: &FockSpace, sources: &Sources, stepping: Stepping, wanted: &[usize]) -> Vec<(usize, CMat)> {
    let mut targets: Vec<usize> = wanted.to_vec();
    targets.sort_unstable();
    targets.dedup();
    let mut out = Vec::with_capacity(targets.len());
    let mut u = CMat::identity(space.dim(), space.dim());
    let mut k = 0;
    for &target in &targets {
        while k < target {
            let tm = stepping.time(k) + 0.5 * stepping.dt;
            let h = space.interaction_hamiltonian(tm, sources);
            u = unitary_step(&h, stepping.dt, space.hbar) * u;
            k += 1;
        }
        out.push((target, u.clone()));
    }
    out
}

/// Interaction-picture closed-time-loop expectation
/// `<T_- (minus factors) T_+ (plus factors)>` in the initial state.
pub fn tc_ordered_vev(space: &FockSpace, factors: &[OrderedFactor]) -> Result<C64> {
    if factors.len() > 8 {
        return Err(LabError::Budget(format!("{} factors exceed the cap of 8", factors.len())));
    }
    let mut p = CMat::identity(space.dim(), space.dim());
    for i in contour_order(factors) {
        let f = &factors[i];
        p *= space.interaction_op(f.op, f.site, f.time)?;
    }
    Ok(space.expectation(&p))
}

/// Heisenberg operators `U^dag X(t) U` for each factor.
pub fn heisenberg_ops(
    space: &FockSpace,
    factors: &[OrderedFactor],
    sources: &Sources,
    stepping: Stepping,
) -> Result<Vec<CMat>> {
    let idx: Vec<usize> = factors.iter().map(|f| stepping.index(f.time)).collect::<Result<_>>()?;
    let us = propagators(space, sources, stepping, &idx);
    factors
        .iter()
        .zip(&idx)
        .map(|(f, k)| {
            let u = &us.iter().find(|(j, _)| j == k).expect("propagator computed").1;
            let x = space.interaction_op(f.op, f.site, f.time)?;
            Ok(u.adjoint() * x * u)
        })
        .collect()
}

/// `<T_- (minus Heisenberg factors) T_+ (plus Heisenberg factors)>` with the
/// interaction switched on at `stepping.t0`.
pub fn heisenberg_correlator(
    space: &FockSpace,
    factors: &[OrderedFactor],
    sources: &Sources,
    stepping: Stepping,
) -> Result<C64> {
    if factors.len() > 8 {
        return Err(LabError::Budget(format!("{} factors exceed the cap of 8", factors.len())));
    }
    let ops = heisenberg_ops(space, factors, sources, stepping)?;
    let mut p = CMat::identity(space.dim(), space.dim());
    for i in contour_order(factors) {
        p *= &ops[i];
    }
    Ok(space.expectation(&p))
}

/// `<X(t_k)>` in the Heisenberg picture for `k = 0..=steps`, by propagating
/// the density matrix.
pub fn expectation_series(
    space: &FockSpace,
    op: OpLabel,
    site: usize,
    sources: &Sources,
    stepping: Stepping,
    steps: usize,
) -> Result<Vec<C64>> {
    expectation_series_with(space, |t| space.interaction_op(op, site, t), sources, stepping, steps)
}

/// As [`expectation_series`] for an arbitrary interaction-picture operator
/// `op(t)` in the composite space.
pub fn expectation_series_with(
    space: &FockSpace,
    op: impl Fn(f64) -> Result<CMat>,
    sources: &Sources,
    stepping: Stepping,
    steps: usize,
) -> Result<Vec<C64>> {
    let mut rho = space.initial_state();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = stepping.time(k);
        let x = op(t)?;
        out.push((&rho * x).trace());
        if k < steps {
            let h = space.interaction_hamiltonian(t + 0.5 * stepping.dt, sources);
            let u = unitary_step(&h, stepping.dt, space.hbar);
            rho = &u * rho * u.adjoint();
        }
    }
    Ok(out)
}

/// Both sides of the S-matrix reordering identities for the factor list,
/// with the exact (source-free, time-independent) Schrodinger evolution as
/// the reference for the Heisenberg side, plus the unitarity defect of the
/// discrete S-matrix over `steps` steps.
pub fn verify_smatrix_identity(space: &FockSpace, factors: &[OrderedFactor], stepping: Stepping, steps: usize) -> Result<Report> {
    if factors.len() > 4 {
        return Err(LabError::Budget("S-matrix check is limited to 4 factors".into()));
    }
    let idx: Vec<usize> = factors.iter().map(|f| stepping.index(f.time)).collect::<Result<_>>()?;
    if idx.iter().any(|k| *k > steps) {
        return Err(LabError::Invalid("factor time beyond the S-matrix window".into()));
    }
    let none = Sources::none();
    let mut wanted = idx.clone();
    wanted.push(steps);
    wanted.push(0);
    let us = propagators(space, &none, stepping, &wanted);
    let u_at = |k: usize| us.iter().find(|(j, _)| *j == k).expect("propagator computed").1.clone();
    let s = u_at(steps);
    let xs: Vec<CMat> = factors
        .iter()
        .map(|f| space.interaction_op(f.op, f.site, f.time))
        .collect::<Result<_>>()?;

    // Exact Heisenberg operators: exp(iH0 t0) exp(iH(t - t0)) X_S exp(-iH(t - t0)) exp(-iH0 t0).
    let h0 = space.free_hamiltonian();
    let v = space.interaction_hamiltonian(0.0, &none);
    let h = &h0 + &v;
    let hb = space.hbar;
    let t0 = stepping.t0;
    let exact: Vec<CMat> = factors
        .iter()
        .zip(&xs)
        .map(|(f, x_int)| {
            // Schrodinger-picture operator from the interaction-picture one at time t.
            let e0 = unitary_step(&h0, f.time, hb);
            let xs_s = &e0 * x_int * e0.adjoint();
            let evo = unitary_step(&h, f.time - t0, hb);
            let w = unitary_step(&h0, -t0, hb);
            let inner = evo.adjoint() * xs_s * &evo;
            &w * inner * w.adjoint()
        })
        .collect();

    // T_+ side: S^dag T_+[S X_1 .. X_m], with the X inserted into the step product.
    let mut order: Vec<usize> = (0..factors.len()).collect();
    order.sort_by(|&a, &b| idx[b].cmp(&idx[a]));
    let mut rhs_plus = CMat::identity(space.dim(), space.dim());
    let mut prev = steps;
    for &i in &order {
        let seg = u_at(prev) * u_at(idx[i]).adjoint();
        rhs_plus = rhs_plus * seg * &xs[i];
        prev = idx[i];
    }
    rhs_plus *= u_at(prev);
    rhs_plus = s.adjoint() * rhs_plus;
    let mut lhs_plus = CMat::identity(space.dim(), space.dim());
    for &i in &order {
        lhs_plus *= &exact[i];
    }

    // T_- side: [T_- S^dag X_1 .. X_m] S.
    let mut asc = order.clone();
    asc.reverse();
    let mut rhs_minus = CMat::identity(space.dim(), space.dim());
    let mut prev = 0usize;
    for &i in &asc {
        let seg = u_at(prev) * u_at(idx[i]).adjoint();
        // U(t_prev, t_i) = U(t_prev, t0) U(t_i, t0)^dag
        rhs_minus = rhs_minus * seg * &xs[i];
        prev = idx[i];
    }
    rhs_minus = rhs_minus * u_at(prev) * s.adjoint() * &s;
    let mut lhs_minus = CMat::identity(space.dim(), space.dim());
    for &i in &asc {
        lhs_minus *= &exact[i];
    }

    let mut rep = Report::new();
    rep.push("time-ordered Heisenberg product via S-matrix", max_abs(&(&lhs_plus - &rhs_plus)), f64::INFINITY);
    rep.push("anti-time-ordered Heisenberg product via S-matrix", max_abs(&(&lhs_minus - &rhs_minus)), f64::INFINITY);
    let eye = CMat::identity(space.dim(), space.dim());
    rep.push("S-matrix unitarity", max_abs(&(&s * s.adjoint() - eye)), 1e-10);
    Ok(rep)
}

/// Bare Kubo response `(i/hbar) theta(t - t') <[J(x,t), J(x',t')]>` of the
/// uncoupled device on the sample times `t_k = t0 + k dt`, flattened as
/// `x * n + k`.
pub fn extract_bare_cumulants(device: &Device, hbar: f64, t0: f64, dt: f64, n: usize) -> Option<CMat> {
    if device.kind == DeviceKind::None || !device.has_current() {
        return None;
    }
    let m = device.sites();
    let ops: Vec<Vec<CMat>> = (0..m)
        .map(|x| (0..n).map(|k| device.evolve(&device.currents[x], t0 + dt * k as f64, hbar)).collect())
        .collect();
    let rho = &device.rho;
    let mut q = CMat::zeros(m * n, m * n);
    for x in 0..m {
        for xp in 0..m {
            for i in 0..n {
                for j in 0..=i {
                    let theta = if i == j { 0.5 } else { 1.0 };
                    let c = &ops[x][i] * &ops[xp][j] - &ops[xp][j] * &ops[x][i];
                    let v = (rho * c).trace() * C64::new(0.0, theta / hbar);
                    q[(x * n + i, xp * n + j)] = v;
                }
            }
        }
    }
    Some(q)
}

/// Finite-difference Kubo response of `<J(x, t_k)>` to a box pulse of `a_e`
/// at site `xp` on step `[t_j, t_j + dt)` of area `eps`, device alone.
pub fn kubo_finite_difference(device: &Device, hbar: f64, stepping: Stepping, steps: usize, xp: usize, j: usize, eps: f64) -> Result<Vec<Vec<C64>>> {
    let m = device.sites();
    let space = FockSpace::new(None, None, 0, device.clone(), hbar, DEFAULT_DIMENSION_BUDGET)?;
    let w = space.sites().weight(xp);
    let t_on = stepping.time(j);
    let dt = stepping.dt;
    let amp = eps / (dt * w);
    let pulse = Source::new(move |x, t| {
        if x == xp && t >= t_on && t < t_on + dt {
            C64::new(amp, 0.0)
        } else {
            ZERO
        }
    });
    let driven = Sources { a_e: Some(pulse), ..Sources::none() };
    (0..m)
        .map(|x| {
            let on = expectation_series(&space, OpLabel::J, x, &driven, stepping, steps)?;
            let off = expectation_series(&space, OpLabel::J, x, &Sources::none(), stepping, steps)?;
            Ok(on.iter().zip(&off).map(|(a, b)| (a - b) / eps).collect())
        })
        .collect()
}

//! Exact solution of the Gaussian model: broad field modes coupled through
//! `-sum_x w_x J(x) A(x)` to a linear-oscillator current.
//!
//! Quadratures `z = (X_0, P_0, .., X_{K-1}, P_{K-1}, Y, R)` with `[X, P] = i`
//! obey `dz/dt = L z + f(t)`, `L = Omega M / hbar`, where `H = z^T M z / 2 - b(t)^T z`
//! and `f = -Omega b / hbar`. Observables are linear forms `c^T z`:
//! `A(x) = sum sqrt(hbar/w) (Re u X - Im u P)`, `J(x) = g_x sqrt(hbar/w_d) Y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::dressing::cumulants::retarded_broad;
use crate::fock::Source;
use crate::kernels::{Band, ModeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    Field(usize),
    Current(usize),
}

#[derive(Clone, Debug)]
pub struct GaussianModel {
    pub hbar: f64,
    weights: Vec<f64>,
    field: Vec<DVector<f64>>,
    current: Vec<DVector<f64>>,
    omega: DMatrix<f64>,
    generator: DMatrix<f64>,
}

/// Gauss-Legendre nodes and weights on [0, 1].
const GL_NODES: [f64; 5] = [
    0.046_910_077_030_668_004,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];
const GL_WEIGHTS: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_45,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

impl GaussianModel {
    /// `coupling` scales the `J A` term; zero gives the uncoupled (bare) model.
    pub fn new(modes: &ModeSet, omega_dev: f64, current_coupling: &[f64], hbar: f64, coupling: f64) -> Result<Self> {
        if modes.band != Band::Broad {
            return Err(LabError::Invalid("the Gaussian model needs a broad mode set".into()));
        }
        if current_coupling.len() != modes.sites.len() {
            return Err(LabError::Shape("one current coupling per site is required".into()));
        }
        if !(omega_dev > 0.0 && hbar > 0.0) {
            return Err(LabError::Invalid("device frequency and hbar must be positive".into()));
        }
        let k = modes.len();
        let dim = 2 * k + 2;
        let m_sites = modes.sites.len();
        let field: Vec<DVector<f64>> = (0..m_sites)
            .map(|x| {
                let mut c = DVector::zeros(dim);
                for mode in 0..k {
                    let s = (hbar / modes.omegas[mode]).sqrt();
                    let u = modes.u(mode, x);
                    c[2 * mode] = s * u.re;
                    c[2 * mode + 1] = -s * u.im;
                }
                c
            })
            .collect();
        let current: Vec<DVector<f64>> = current_coupling
            .iter()
            .map(|g| {
                let mut c = DVector::zeros(dim);
                c[2 * k] = g * (hbar / omega_dev).sqrt();
                c
            })
            .collect();
        let mut omega = DMatrix::zeros(dim, dim);
        for p in 0..=k {
            omega[(2 * p, 2 * p + 1)] = 1.0;
            omega[(2 * p + 1, 2 * p)] = -1.0;
        }
        let mut m = DMatrix::zeros(dim, dim);
        for mode in 0..k {
            m[(2 * mode, 2 * mode)] = hbar * modes.omegas[mode];
            m[(2 * mode + 1, 2 * mode + 1)] = hbar * modes.omegas[mode];
        }
        m[(2 * k, 2 * k)] = hbar * omega_dev;
        m[(2 * k + 1, 2 * k + 1)] = hbar * omega_dev;
        let weights = modes.sites.weights().to_vec();
        for x in 0..m_sites {
            let cross = &current[x] * field[x].transpose();
            m -= (&cross + cross.transpose()) * (weights[x] * coupling);
        }
        let generator = &omega * &m / hbar;
        Ok(Self { hbar, weights, field, current, omega, generator })
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    fn vector(&self, obs: Observable) -> &DVector<f64> {
        match obs {
            Observable::Field(x) => &self.field[x],
            Observable::Current(x) => &self.current[x],
        }
    }

    /// `exp(L tau)`.
    pub fn flow(&self, tau: f64) -> DMatrix<f64> {
        (&self.generator * tau).exp()
    }

    /// Retarded response `(i/hbar) theta(tau) <[a(t), b(t')]>` with `tau = t - t'`;
    /// `theta(0) = 1/2`.
    pub fn response(&self, a: Observable, b: Observable, tau: f64) -> f64 {
        if tau < 0.0 {
            return 0.0;
        }
        let theta = if tau == 0.0 { 0.5 } else { 1.0 };
        let v = self.vector(a).transpose() * self.flow(tau) * &self.omega * self.vector(b);
        -theta * v[(0, 0)] / self.hbar
    }

    fn drive(&self, j_e: Option<&Source>, a_e: Option<&Source>, t: f64) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim());
        for x in 0..self.weights.len() {
            let w = self.weights[x];
            if let Some(s) = a_e {
                b += &self.current[x] * (w * s.at(x, t).re);
            }
            if let Some(s) = j_e {
                b += &self.field[x] * (w * s.at(x, t).re);
            }
        }
        -(&self.omega * b) / self.hbar
    }

    /// Mean of `obs` at `t0 + k h` for `k = 0..=steps`, starting from zero
    /// mean at `t0`. Each step is propagated exactly with five-point
    /// Gauss-Legendre quadrature of the forcing.
    pub fn mean_series(
        &self,
        obs: Observable,
        j_e: Option<&Source>,
        a_e: Option<&Source>,
        t0: f64,
        h: f64,
        steps: usize,
    ) -> Vec<f64> {
        let full = self.flow(h);
        let partial: Vec<DMatrix<f64>> = GL_NODES.iter().map(|s| self.flow(h * (1.0 - s))).collect();
        let c = self.vector(obs);
        let mut z = DVector::zeros(self.dim());
        let mut out = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            out.push(c.dot(&z));
            if k < steps {
                let t = t0 + h * k as f64;
                let mut next = &full * &z;
                for ((node, wt), e) in GL_NODES.iter().zip(GL_WEIGHTS).zip(&partial) {
                    next += e * self.drive(j_e, a_e, t + node * h) * (wt * h);
                }
                z = next;
            }
        }
        out
    }
}

/// `sum_x' w_x' int_{t0}^{t} Delta_R(x, x', t - s) j(x', s) ds`: the broad
/// field radiated by a c-number current switched on at `t0`, by composite
/// Gauss-Legendre quadrature on panels no wider than `panel`.
pub fn radiated_field(modes: &ModeSet, j: &Source, x: usize, t0: f64, t: f64, panel: f64) -> f64 {
    if t <= t0 {
        return 0.0;
    }
    let panels = ((t - t0) / panel).ceil().max(1.0) as usize;
    let h = (t - t0) / panels as f64;
    let mut acc = 0.0;
    for xp in 0..modes.sites.len() {
        let w = modes.sites.weight(xp);
        for p in 0..panels {
            let a = t0 + h * p as f64;
            for (node, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let s = a + node * h;
                acc += w * wt * h * retarded_broad(modes, x, xp, t - s) * j.at(xp, s).re;
            }
        }
    }
    acc
}

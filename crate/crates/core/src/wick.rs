//! Pairing evaluator for closed-time-loop field products and the Gaussian
//! vacuum functionals.
//!
//! Pair values (first factor `i`, second `j`; `m`/`p` mark the minus- and
//! plus-branch member of a mixed pair):
//!
//! | fields | branches | value |
//! |---|---|---|
//! | `A A` | `+ +` | `-i hbar D_F(x_i, x_j, t_i - t_j)` |
//! | `A A` | `- -` | `+i hbar D_F^*(x_i, x_j, t_i - t_j)` |
//! | `A A` | mixed | `-i hbar D^(+)(x_m, x_p, t_m - t_p)` |
//! | `E E^dag` | `+ +` | `-i hbar G_F(x_E, x_Edag, t_E - t_Edag)` |
//! | `E E^dag` | `- -` | `+i hbar G_F^*(x_Edag, x_E, t_Edag - t_E)` |
//! | `E_- E^dag_+` | mixed | `-i hbar G^(+)(x_m, x_p, t_m - t_p)` |
//! | `E^dag_- E_+`, `E E`, `E^dag E^dag`, `A E` | any | `0` |
//!
//! Kernels are looked up on the grid, so factor times must be grid samples
//! and pairwise separations must stay below half the period. Equal times on
//! one branch take the `theta(0) = 1/2` average of both orders.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::fock::{Branch, OpLabel, OrderedFactor};
use crate::grid::{contract_kernel, Signal};
use crate::kernels::{Band, KernelFamily};
use crate::response::{broad_reordering_form, broad_substitute, narrow_reordering_form, NarrowSkeleton};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Largest factor count accepted by the pairing evaluator.
pub const MAX_FACTORS: usize = 10;

/// Kernel families available to the pairing evaluator.
#[derive(Clone, Copy, Debug)]
pub struct Contractions<'a> {
    pub broad: Option<&'a KernelFamily>,
    pub narrow: Option<&'a KernelFamily>,
    pub hbar: f64,
}

impl<'a> Contractions<'a> {
    pub fn broad(family: &'a KernelFamily, hbar: f64) -> Self {
        Self { broad: Some(family), narrow: None, hbar }
    }

    pub fn narrow(family: &'a KernelFamily, hbar: f64) -> Self {
        Self { broad: None, narrow: Some(family), hbar }
    }

    fn family(&self, band: Band) -> Result<&'a KernelFamily> {
        let f = match band {
            Band::Broad => self.broad,
            Band::Narrow => self.narrow,
        };
        f.ok_or_else(|| LabError::Invalid(format!("no {} kernel family supplied", band.tag())))
    }

    /// Value of the contraction of factors `a` and `b` (in list order).
    pub fn pair(&self, a: &OrderedFactor, b: &OrderedFactor) -> Result<C64> {
        let hb = self.hbar;
        match (a.op, b.op) {
            (OpLabel::A, OpLabel::A) => {
                let fam = self.family(Band::Broad)?;
                Ok(match (a.branch, b.branch) {
                    (Branch::Plus, Branch::Plus) => -I * hb * lookup(&fam.feynman, a, b)?,
                    (Branch::Minus, Branch::Minus) => I * hb * lookup(&fam.feynman, a, b)?.conj(),
                    (Branch::Minus, Branch::Plus) => -I * hb * lookup(&fam.plus, a, b)?,
                    (Branch::Plus, Branch::Minus) => -I * hb * lookup(&fam.plus, b, a)?,
                })
            }
            (OpLabel::E, OpLabel::Edag) | (OpLabel::Edag, OpLabel::E) => {
                let fam = self.family(Band::Narrow)?;
                let (e, d) = if a.op == OpLabel::E { (a, b) } else { (b, a) };
                Ok(match (e.branch, d.branch) {
                    (Branch::Plus, Branch::Plus) => -I * hb * lookup(&fam.feynman, e, d)?,
                    (Branch::Minus, Branch::Minus) => I * hb * lookup(&fam.feynman, d, e)?.conj(),
                    (Branch::Minus, Branch::Plus) => -I * hb * lookup(&fam.plus, e, d)?,
                    (Branch::Plus, Branch::Minus) => ZERO,
                })
            }
            (x, y) if x.is_field() && y.is_field() => Ok(ZERO),
            _ => Err(LabError::Invalid("pairing applies to field factors only".into())),
        }
    }
}

/// `K(x_a, x_b, t_a - t_b)` from the kernel table.
fn lookup(k: &crate::grid::StationaryKernel, a: &OrderedFactor, b: &OrderedFactor) -> Result<C64> {
    let g = k.grid;
    let ia = grid_index(g, a.time)?;
    let ib = grid_index(g, b.time)?;
    let n = g.n as i64;
    let d = ia as i64 - ib as i64;
    if 2 * d.abs() >= n {
        return Err(LabError::Invalid(format!(
            "factor separation {} is not below half the period {}",
            (a.time - b.time).abs(),
            0.5 * g.period()
        )));
    }
    Ok(k.at(a.site, b.site, d.rem_euclid(n) as usize))
}

fn grid_index(g: crate::grid::TimeGrid, t: f64) -> Result<usize> {
    let u = (t - g.t0) / g.dt;
    let k = u.round();
    if k < 0.0 || k >= g.n as f64 || (u - k).abs() > 1e-9 * u.abs().max(1.0) {
        return Err(LabError::Invalid(format!("time {t} is not a sample of the kernel grid")));
    }
    Ok(k as usize)
}

/// All perfect matchings of `0..n` (n even), each as a list of pairs.
pub fn perfect_matchings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        let first = rest[0];
        for k in 1..rest.len() {
            let partner = rest[k];
            let remaining: Vec<usize> = rest[1..].iter().copied().filter(|&v| v != partner).collect();
            cur.push((first, partner));
            rec(&remaining, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n.is_multiple_of(2) {
        let idx: Vec<usize> = (0..n).collect();
        rec(&idx, &mut Vec::new(), &mut out);
    }
    out
}

/// Sum over all perfect pairings of the product of pair values.
pub fn wick_pairing_vev(factors: &[OrderedFactor], contractions: &Contractions) -> Result<C64> {
    if factors.iter().any(|f| !f.op.is_field()) {
        return Err(LabError::Invalid("pairing applies to field factors only".into()));
    }
    if factors.len() > MAX_FACTORS {
        return Err(LabError::Budget(format!("{} factors exceed the cap of {MAX_FACTORS}", factors.len())));
    }
    let n = factors.len();
    if n % 2 == 1 {
        return Ok(ZERO);
    }
    let mut table = vec![ZERO; n * n];
    for i in 0..n {
        for j in i + 1..n {
            table[i * n + j] = contractions.pair(&factors[i], &factors[j])?;
        }
    }
    Ok(perfect_matchings(n)
        .par_iter()
        .map(|m| m.iter().map(|&(i, j)| table[i * n + j]).product::<C64>())
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Skeleton,
    Causal,
}

/// Arguments of the vacuum functionals.
#[derive(Clone, Debug)]
pub enum VacuumArguments {
    /// `(eta, j_e)` for the causal form, or `(eta_+, eta_-)` for the skeleton.
    Broad(Signal, Signal),
    /// Causal `(mu, mu-bar, d_e, d-bar_e)`.
    NarrowCausal { mu: Signal, mu_bar: Signal, d_e: Signal, d_bar: Signal },
    /// Skeleton `(mu-bar_+, mu_+, mu-bar_-, mu_-)`.
    NarrowSkeleton { mu_bar_plus: Signal, mu_plus: Signal, mu_bar_minus: Signal, mu_minus: Signal },
}

impl VacuumArguments {
    pub fn from_skeleton(s: &NarrowSkeleton) -> Self {
        VacuumArguments::NarrowSkeleton {
            mu_bar_plus: s.mu_bar_plus.clone(),
            mu_plus: s.mu_plus.clone(),
            mu_bar_minus: s.mu_bar_minus.clone(),
            mu_minus: s.mu_minus.clone(),
        }
    }
}

/// Logarithm of the vacuum functional. `Broad` arguments are read as
/// `(eta_+, eta_-)` here.
///
/// Broad skeleton: `Z_C(i eta_+, -i eta_-)`. Narrow causal: `i mubar G_R d_e - i mu G_R^* dbar_e`. Narrow skeleton:
/// `Z_C(i mubar_+, i mu_+, -i mubar_-, -i mu_-)`.
pub fn vacuum_exponent(args: &VacuumArguments, family: &KernelFamily, hbar: f64) -> Result<C64> {
    match (args, family.band) {
        (VacuumArguments::Broad(a, b), Band::Broad) => broad_reordering_form(family, hbar, &a.scale(I), &b.scale(-I)),
        (VacuumArguments::NarrowSkeleton { mu_bar_plus, mu_plus, mu_bar_minus, mu_minus }, Band::Narrow) => narrow_reordering_form(
            family,
            hbar,
            &mu_bar_plus.scale(I),
            &mu_plus.scale(I),
            &mu_bar_minus.scale(-I),
            &mu_minus.scale(-I),
        ),
        (VacuumArguments::NarrowCausal { mu, mu_bar, d_e, d_bar }, Band::Narrow) => {
            let a = contract_kernel(mu_bar, &family.retarded, d_e)?;
            let b = contract_kernel(mu, &family.retarded.conj(), d_bar)?;
            Ok(I * a - I * b)
        }
        _ => Err(LabError::Invalid("vacuum arguments do not match the kernel band".into())),
    }
}

/// The vacuum functional in the requested representation. For the broad
/// band, `Broad(eta, j_e)` is read as causal arguments when
/// `representation` is `Causal`, and as `(eta_+, eta_-)` otherwise.
pub fn vacuum_functional(args: &VacuumArguments, family: &KernelFamily, hbar: f64, representation: Representation) -> Result<C64> {
    let z = match (args, representation) {
        (VacuumArguments::Broad(eta, j_e), Representation::Causal) => {
            if family.band != Band::Broad {
                return Err(LabError::Invalid("vacuum arguments do not match the kernel band".into()));
            }
            I * contract_kernel(eta, &family.retarded, j_e)?
        }
        (VacuumArguments::NarrowCausal { .. }, Representation::Skeleton)
        | (VacuumArguments::NarrowSkeleton { .. }, Representation::Causal) => {
            return Err(LabError::Invalid("argument set does not match the representation".into()))
        }
        _ => vacuum_exponent(args, family, hbar)?,
    };
    Ok(z.exp())
}

/// Broad vacuum functional evaluated both ways from causal arguments:
/// `(skeleton, causal)`.
pub fn broad_vacuum_two_ways(eta: &Signal, j_e: &Signal, family: &KernelFamily, hbar: f64) -> Result<(C64, C64)> {
    let (ep, em) = broad_substitute(eta, j_e, hbar)?;
    let sk = vacuum_functional(&VacuumArguments::Broad(ep, em), family, hbar, Representation::Skeleton)?;
    let ca = vacuum_functional(&VacuumArguments::Broad(eta.clone(), j_e.clone()), family, hbar, Representation::Causal)?;
    Ok((sk, ca))
}

/// Mixed derivative of the skeleton vacuum functional with respect to unit
/// spike amplitudes placed at the factors, extracted by a discrete Cauchy
/// formula on circles of radius `radius` with `points` nodes per amplitude.
/// The result is directly comparable with [`wick_pairing_vev`].
pub fn vacuum_moment(factors: &[OrderedFactor], family: &KernelFamily, hbar: f64, radius: f64, points: usize) -> Result<C64> {
    let k = factors.len();
    if k == 0 {
        return Ok(C64::new(1.0, 0.0));
    }
    let grid = family.plus.grid;
    let sites = family.plus.sites.clone();
    let spikes: Vec<Signal> = factors
        .iter()
        .map(|f| Ok(Signal::spike(grid, sites.clone(), f.site, grid_index(grid, f.time)?)))
        .collect::<Result<_>>()?;
    // d/da of exp(i a X_+) brings down i X; of exp(-i a X_-), -i X; the
    // narrow functional pairs E with mu-bar and E^dag with mu.
    let prefactor: C64 = factors
        .iter()
        .map(|f| match f.branch {
            Branch::Plus => I,
            Branch::Minus => -I,
        })
        .product();
    let total = points.pow(k as u32);
    let nodes: Vec<C64> = (0..points)
        .map(|p| C64::from_polar(radius, 2.0 * std::f64::consts::PI * p as f64 / points as f64))
        .collect();
    let zero = Signal::zeros(grid, sites);
    let acc: Result<C64> = (0..total)
        .into_par_iter()
        .map(|mut code| {
            let mut amps = Vec::with_capacity(k);
            for _ in 0..k {
                amps.push(nodes[code % points]);
                code /= points;
            }
            let mut slots = [zero.clone(), zero.clone(), zero.clone(), zero.clone()];
            for ((f, s), a) in factors.iter().zip(&spikes).zip(&amps) {
                let slot = match (family.band, f.op, f.branch) {
                    (Band::Broad, OpLabel::A, Branch::Plus) => 0,
                    (Band::Broad, OpLabel::A, Branch::Minus) => 1,
                    (Band::Narrow, OpLabel::E, Branch::Plus) => 0,
                    (Band::Narrow, OpLabel::Edag, Branch::Plus) => 1,
                    (Band::Narrow, OpLabel::E, Branch::Minus) => 2,
                    (Band::Narrow, OpLabel::Edag, Branch::Minus) => 3,
                    _ => return Err(LabError::Invalid("factor does not belong to the kernel band".into())),
                };
                slots[slot] = slots[slot].add(&s.scale(*a));
            }
            let [s0, s1, s2, s3] = slots;
            let args = match family.band {
                Band::Broad => VacuumArguments::Broad(s0, s1),
                Band::Narrow => VacuumArguments::NarrowSkeleton { mu_bar_plus: s0, mu_plus: s1, mu_bar_minus: s2, mu_minus: s3 },
            };
            let v = vacuum_exponent(&args, family, hbar)?.exp();
            let phase: C64 = amps.iter().map(|a| a.conj() / (radius * radius)).product();
            Ok(v * phase)
        })
        .sum();
    Ok(acc? / total as f64 / prefactor)
}

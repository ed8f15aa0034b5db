//! Closed solutions in terms of dressed cumulants: chain resummation, the
//! characteristic functional with shifted arguments, and mean fields.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::cumulants::{flat_index, tuples, CausalPropagator, CumulantBand, CumulantSet, Propagators};
use super::poly::{FunctionalPoly, Monomial, Truncation, MAX_DEGREE};
use crate::error::{LabError, Result};

const I: C64 = C64::new(0.0, 1.0);

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// `sum_j (Q w Delta w)^j Q`, the chain of one-in one-out vertices to all orders.
pub fn chain_resummation(q11: &[C64], prop: &CausalPropagator) -> Result<Vec<C64>> {
    let np = prop.points();
    if q11.len() != np * np {
        return Err(LabError::Shape(format!("Q(1,1) has {} entries, expected {}", q11.len(), np * np)));
    }
    let w = prop.weights();
    let q = DMatrix::from_fn(np, np, |p, r| q11[p * np + r]);
    let d = DMatrix::from_fn(np, np, |p, r| prop.matrix[p][r] * w[p] * w[r]);
    let a = DMatrix::identity(np, np) - &q * d;
    let sol = a.lu().solve(&q).ok_or_else(|| LabError::Invalid("chain resummation is singular".into()))?;
    Ok((0..np * np).map(|i| sol[(i / np, i % np)]).collect())
}

/// Chain truncated after `order` propagators.
pub fn chain_partial(q11: &[C64], prop: &CausalPropagator, order: usize) -> Vec<C64> {
    let np = prop.points();
    let w = prop.weights();
    let q = DMatrix::from_fn(np, np, |p, r| q11[p * np + r]);
    let d = DMatrix::from_fn(np, np, |p, r| prop.matrix[p][r] * w[p] * w[r]);
    let step = &q * d;
    let mut term = q.clone();
    let mut acc = q;
    for _ in 0..order {
        term = &step * term;
        acc += &term;
    }
    (0..np * np).map(|i| acc[(i / np, i % np)]).collect()
}

fn response_count(band: CumulantBand, key: &[usize]) -> usize {
    key.iter().zip(band.response_blocks()).filter(|(_, r)| **r).map(|(c, _)| c).sum()
}

/// `W(values)` for the log-functional of `set`; `values[b]` is the argument
/// of block `b` on the window.
pub fn log_functional(set: &CumulantSet, values: &[Vec<C64>]) -> Result<C64> {
    check_values(set, values)?;
    let np = set.points();
    let mut total = C64::new(0.0, 0.0);
    for (key, t) in &set.tensors {
        let blocks = CumulantSet::slot_blocks(key);
        let pre = I.powu(response_count(set.band, key) as u32) / key.iter().map(|c| factorial(*c)).product::<f64>();
        let mut acc = C64::new(0.0, 0.0);
        for tuple in tuples(np, blocks.len()) {
            let v = t[flat_index(&tuple, np)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            acc += tuple.iter().zip(&blocks).fold(v, |a, (p, b)| a * set.weights[*p] * values[*b][*p]);
        }
        total += pre * acc;
    }
    Ok(total)
}

/// `-i (1/w_p) dW/d(block b at p)`: for a response block this is the mean of
/// the conjugate device observable at the source arguments in `values`.
pub fn response_mean(set: &CumulantSet, block: usize, values: &[Vec<C64>]) -> Result<Vec<C64>> {
    check_values(set, values)?;
    let np = set.points();
    let mut out = vec![C64::new(0.0, 0.0); np];
    for (key, t) in &set.tensors {
        if key[block] == 0 {
            continue;
        }
        let blocks = CumulantSet::slot_blocks(key);
        let first = blocks.iter().position(|b| *b == block).expect("slot present");
        let pre = -I * I.powu(response_count(set.band, key) as u32) * key[block] as f64
            / key.iter().map(|c| factorial(*c)).product::<f64>();
        for tuple in tuples(np, blocks.len()) {
            let v = t[flat_index(&tuple, np)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let rest = tuple
                .iter()
                .zip(&blocks)
                .enumerate()
                .filter(|(i, _)| *i != first)
                .fold(v, |a, (_, (p, b))| a * set.weights[*p] * values[*b][*p]);
            out[tuple[first]] += pre * rest;
        }
    }
    Ok(out)
}

fn check_values(set: &CumulantSet, values: &[Vec<C64>]) -> Result<()> {
    if values.len() != set.band.blocks() || values.iter().any(|v| v.len() != set.points()) {
        return Err(LabError::Shape(format!(
            "expected {} argument blocks of {} points",
            set.band.blocks(),
            set.points()
        )));
    }
    Ok(())
}

/// Broad causal arguments and sources on the window.
#[derive(Clone, Debug)]
pub struct BroadArguments {
    pub eta: Vec<C64>,
    pub zeta: Vec<C64>,
    pub j_e: Vec<C64>,
    pub a_e: Vec<C64>,
    pub big_j: Vec<C64>,
    pub big_a: Vec<C64>,
}

impl BroadArguments {
    pub fn zeros(np: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); np];
        Self { eta: z.clone(), zeta: z.clone(), j_e: z.clone(), a_e: z.clone(), big_j: z.clone(), big_a: z }
    }
}

/// Narrow causal arguments and sources; conjugate slots are independent.
#[derive(Clone, Debug)]
pub struct NarrowArguments {
    pub mu: Vec<C64>,
    pub mu_bar: Vec<C64>,
    pub nu: Vec<C64>,
    pub nu_bar: Vec<C64>,
    pub d_e: Vec<C64>,
    pub d_bar: Vec<C64>,
    pub e_e: Vec<C64>,
    pub e_bar: Vec<C64>,
    pub big_d: Vec<C64>,
    pub big_d_bar: Vec<C64>,
    pub big_e: Vec<C64>,
    pub big_e_bar: Vec<C64>,
}

impl NarrowArguments {
    pub fn zeros(np: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); np];
        Self {
            mu: z.clone(),
            mu_bar: z.clone(),
            nu: z.clone(),
            nu_bar: z.clone(),
            d_e: z.clone(),
            d_bar: z.clone(),
            e_e: z.clone(),
            e_bar: z.clone(),
            big_d: z.clone(),
            big_d_bar: z.clone(),
            big_e: z.clone(),
            big_e_bar: z,
        }
    }
}

fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[C64], b: &[C64], w: &[f64]) -> C64 {
    a.iter().zip(b).zip(w).map(|((x, y), wq)| x * y * *wq).sum()
}

/// Prefactor exponent and shifted device arguments of the broad part.
fn broad_shift(prop: &CausalPropagator, a: &BroadArguments) -> (C64, Vec<C64>, Vec<C64>) {
    let w = prop.weights();
    let j_tot = add(&a.j_e, &a.big_j);
    let radiated = prop.apply(&j_tot);
    let exponent = I * dot(&a.eta, &radiated, &w);
    let zeta = add(&a.zeta, &prop.apply_left(&a.eta));
    let a_tot = add(&add(&a.a_e, &a.big_a), &radiated);
    (exponent, zeta, a_tot)
}

/// Prefactor exponent and shifted arguments `[nu*, nu, E_tot, E*_tot]` of the narrow part.
fn narrow_shift(prop: &CausalPropagator, a: &NarrowArguments) -> (C64, [Vec<C64>; 4]) {
    let w = prop.weights();
    let g_star = prop.conj();
    let d_tot = add(&a.d_e, &a.big_d);
    let d_bar_tot = add(&a.d_bar, &a.big_d_bar);
    let gd = prop.apply(&d_tot);
    let gd_bar = g_star.apply(&d_bar_tot);
    let exponent = I * dot(&a.mu_bar, &gd, &w) - I * dot(&a.mu, &gd_bar, &w);
    let nu_bar = add(&a.nu_bar, &prop.apply_left(&a.mu_bar));
    let nu = add(&a.nu, &g_star.apply_left(&a.mu));
    let e_tot = add(&add(&a.e_e, &a.big_e), &gd);
    let e_bar_tot = add(&add(&a.e_bar, &a.big_e_bar), &gd_bar);
    (exponent, [nu_bar, nu, e_tot, e_bar_tot])
}

/// `Phi(eta, zeta | j_e, a_e | J_e, A_e) = exp(i eta Delta_R (j_e + J_e)) Phi_dev(zeta + eta Delta_R | A_tot)`
/// with `Phi_dev = exp W` built from `dressed`; a set without tensors stands for no device.
pub fn broad_solution(dressed: &CumulantSet, prop: &CausalPropagator, a: &BroadArguments) -> Result<C64> {
    if dressed.band != CumulantBand::Broad {
        return Err(LabError::Invalid("broad solution needs broad cumulants".into()));
    }
    let (exponent, zeta, a_tot) = broad_shift(prop, a);
    Ok((exponent + log_functional(dressed, &[zeta, a_tot])?).exp())
}

/// Narrow analogue with `G_R`, `G_R*` and the shifted envelope totals.
pub fn narrow_solution(dressed: &CumulantSet, prop: &CausalPropagator, a: &NarrowArguments) -> Result<C64> {
    if dressed.band != CumulantBand::Narrow {
        return Err(LabError::Invalid("narrow solution needs narrow cumulants".into()));
    }
    let (exponent, shifted) = narrow_shift(prop, a);
    Ok((exponent + log_functional(dressed, &shifted)?).exp())
}

/// Merged solution; block order `[zeta, nu*, nu, a, e, e*]`.
pub fn merged_solution(
    dressed: &CumulantSet,
    props: &Propagators,
    broad: &BroadArguments,
    narrow: &NarrowArguments,
) -> Result<C64> {
    if dressed.band != CumulantBand::Merged {
        return Err(LabError::Invalid("merged solution needs merged cumulants".into()));
    }
    let (bp, np) = match (&props.broad, &props.narrow) {
        (Some(b), Some(n)) => (b, n),
        _ => return Err(LabError::Invalid("merged solution needs both propagators".into())),
    };
    let (eb, zeta, a_tot) = broad_shift(bp, broad);
    let (en, [nu_bar, nu, e_tot, e_bar_tot]) = narrow_shift(np, narrow);
    Ok((eb + en + log_functional(dressed, &[zeta, nu_bar, nu, a_tot, e_tot, e_bar_tot])?).exp())
}

/// `<A> = Delta_R (j_e + J_e) + Delta_R <J>_dev[A_tot]`, the first `eta`
/// derivative of the broad solution.
pub fn broad_mean_field(dressed: &CumulantSet, prop: &CausalPropagator, a: &BroadArguments) -> Result<Vec<C64>> {
    let j_tot = add(&a.j_e, &a.big_j);
    let radiated = prop.apply(&j_tot);
    let a_tot = add(&add(&a.a_e, &a.big_a), &radiated);
    let zero = vec![C64::new(0.0, 0.0); prop.points()];
    let current = response_mean(dressed, 0, &[zero, a_tot])?;
    Ok(add(&radiated, &prop.apply(&current)))
}

/// `<E> = G_R (d_e + D_e) + G_R <D>_dev[E_tot, E*_tot]`.
pub fn narrow_mean_field(dressed: &CumulantSet, prop: &CausalPropagator, a: &NarrowArguments) -> Result<Vec<C64>> {
    let z = vec![C64::new(0.0, 0.0); prop.points()];
    let quiet = NarrowArguments { mu: z.clone(), mu_bar: z.clone(), nu: z.clone(), nu_bar: z, ..a.clone() };
    let (_, [nu_bar, nu, e_tot, e_bar_tot]) = narrow_shift(prop, &quiet);
    let gd = prop.apply(&add(&a.d_e, &a.big_d));
    let dipole = response_mean(dressed, 0, &[nu_bar, nu, e_tot, e_bar_tot])?;
    Ok(add(&gd, &prop.apply(&dipole)))
}

/// Largest `|Phi|`-relative change when sources move between the `(j_e, a_e)`
/// and `(J_e, A_e)` slots.
pub fn resplit_defect(dressed: &CumulantSet, prop: &CausalPropagator, a: &BroadArguments, fraction: f64) -> Result<f64> {
    let base = broad_solution(dressed, prop, a)?;
    let moved = BroadArguments {
        j_e: a.j_e.iter().map(|x| x * (1.0 - fraction)).collect(),
        big_j: a.j_e.iter().zip(&a.big_j).map(|(x, y)| x * fraction + y).collect(),
        a_e: a.a_e.iter().zip(&a.big_a).map(|(x, y)| x + y * fraction).collect(),
        big_a: a.big_a.iter().map(|y| y * (1.0 - fraction)).collect(),
        ..a.clone()
    };
    let other = broad_solution(dressed, prop, &moved)?;
    Ok((base - other).norm() / base.norm().max(f64::MIN_POSITIVE))
}

/// Checks `exp(f d/dg) exp(igh) P = exp(igh) exp(f (d/dg + ih)) P` for a
/// polynomial `P` of degree at most `degree` over one block of `f.len()`
/// variables with quadrature `weights`; returns the largest difference of
/// coefficients up to `degree`. The left side carries the exponential to
/// a wider degree so the shift series is complete to rounding.
pub fn shift_identity_check(f: &[C64], p_poly: &FunctionalPoly, h: &[C64], weights: &[f64], degree: usize) -> Result<f64> {
    let np = f.len();
    if h.len() != np || weights.len() != np {
        return Err(LabError::Shape("f, h and weights must share one length".into()));
    }
    let narrow = Truncation { block_size: np, caps: vec![degree], counted: vec![true], total: degree };
    let wide_degree = (degree + 12).min(MAX_DEGREE);
    let wide = Truncation { block_size: np, caps: vec![wide_degree], counted: vec![true], total: wide_degree };
    let mut igh = FunctionalPoly::zero();
    for q in 0..np {
        igh.add_term(Monomial::from_vars(&[q]), I * h[q] * weights[q]);
    }
    // int f d/dg = sum_q f_q d/dg_q once the measure cancels.
    let shift = |p: &FunctionalPoly| -> FunctionalPoly {
        let mut out = FunctionalPoly::zero();
        for q in 0..np {
            out = out.add(&p.derivative(q).scale(f[q]));
        }
        out
    };
    let exp_shift = |p: &FunctionalPoly, cap: usize| -> FunctionalPoly {
        let mut out = p.clone();
        let mut term = p.clone();
        for j in 1..=cap {
            term = shift(&term).scale(C64::new(1.0 / j as f64, 0.0));
            if term.is_empty() {
                break;
            }
            out = out.add(&term);
        }
        out
    };
    let lhs = exp_shift(&igh.exp(&wide)?.mul(p_poly, &wide), wide_degree).truncated(&narrow);
    let ifh: C64 = I * (0..np).map(|q| f[q] * h[q] * weights[q]).sum::<C64>();
    let rhs = igh.exp(&narrow)?.mul(&exp_shift(p_poly, degree), &narrow).scale(ifh.exp());
    Ok(lhs.max_abs_diff(&rhs))
}

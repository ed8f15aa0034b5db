//! Brute-force dressing: exponentiate the bare log-functional, apply the
//! truncated exponential of the pairing operator, take the logarithm.
//!
//! An extra variable counts propagator applications, so one pass yields the
//! dressed cumulants separated by order.

use num_complex::Complex64 as C64;

use super::cumulants::{CumulantKind, CumulantSet, Propagators};
use super::poly::{FunctionalPoly, Monomial, Truncation, MAX_DEGREE, MAX_VARIABLES};
use crate::error::{LabError, Result};

/// Default cap on polynomial terms held at once.
pub const DEFAULT_TERM_BUDGET: usize = 2_000_000;

#[derive(Clone, Debug)]
pub struct OracleOutput {
    /// Dressed cumulants restricted to exactly `j` propagators, `j = 0..=order`.
    pub cumulants_by_order: Vec<CumulantSet>,
    /// Moment coefficients (same normalisation, no logarithm), by order.
    pub moments_by_order: Vec<CumulantSet>,
}

impl OracleOutput {
    /// Sum over orders.
    pub fn cumulants(&self) -> CumulantSet {
        sum_sets(&self.cumulants_by_order)
    }

    pub fn moments(&self) -> CumulantSet {
        sum_sets(&self.moments_by_order)
    }
}

pub fn sum_sets(sets: &[CumulantSet]) -> CumulantSet {
    let mut out = sets[0].clone();
    for s in &sets[1..] {
        for (key, t) in &s.tensors {
            let acc = out.tensors.entry(key.clone()).or_insert_with(|| vec![C64::new(0.0, 0.0); t.len()]);
            for (a, b) in acc.iter_mut().zip(t) {
                *a += b;
            }
        }
    }
    out
}

fn split_by_order(poly: &FunctionalPoly, order_var: usize, order: usize) -> Vec<FunctionalPoly> {
    let mut out = vec![FunctionalPoly::zero(); order + 1];
    for (m, c) in &poly.terms {
        let vars = m.vars();
        let j = vars.iter().filter(|v| **v == order_var).count();
        let rest: Vec<usize> = vars.into_iter().filter(|v| *v != order_var).collect();
        if j <= order {
            out[j].add_term(Monomial::from_vars(&rest), *c);
        }
    }
    out
}

/// Dressed cumulants of `keys` to `order` propagator applications.
pub fn dress_functional_oracle(
    bare: &CumulantSet,
    props: &Propagators,
    order: usize,
    keys: &[Vec<usize>],
    term_budget: usize,
) -> Result<OracleOutput> {
    dress_functional_oracle_staged(bare, std::slice::from_ref(props), order, keys, term_budget)
}

/// As [`dress_functional_oracle`], applying the dressing operators of each
/// stage in turn to the same expansion; orders count propagators over all stages.
pub fn dress_functional_oracle_staged(
    bare: &CumulantSet,
    stages: &[Propagators],
    order: usize,
    keys: &[Vec<usize>],
    term_budget: usize,
) -> Result<OracleOutput> {
    let np = bare.points();
    let nb = bare.band.blocks();
    let order_var = nb * np;
    if order_var >= MAX_VARIABLES {
        return Err(LabError::Budget(format!("{order_var} functional variables exceed the limit {}", MAX_VARIABLES - 1)));
    }
    if keys.iter().any(|k| k.len() != nb) {
        return Err(LabError::Shape(format!("every key needs {nb} block counts")));
    }
    let mut caps: Vec<usize> = (0..nb).map(|b| keys.iter().map(|k| k[b]).max().unwrap_or(0)).collect();
    let total = keys.iter().map(|k| CumulantSet::rank(k)).max().unwrap_or(0);
    if total + 3 * order > MAX_DEGREE {
        return Err(LabError::Budget(format!("degree {total} at order {order} exceeds the monomial limit {MAX_DEGREE}")));
    }
    let stage_pairings = stages.iter().map(|p| p.pairings(bare.band, np)).collect::<Result<Vec<_>>>()?;
    let mut counted = vec![true; nb];
    counted.push(false);

    caps.push(order);
    let finals = Truncation { block_size: np, caps: caps.clone(), counted: counted.clone(), total };
    let mut wide = caps.clone();
    for c in wide.iter_mut().take(nb) {
        *c += order;
    }
    let initial = Truncation { block_size: np, caps: wide, counted, total: total + 2 * order };

    let w = bare.to_poly().truncated(&initial);
    let phi = w.exp(&initial)?;
    if phi.len() > term_budget {
        return Err(LabError::Budget(format!("{} terms exceed the budget {term_budget}", phi.len())));
    }
    let mut dressed = phi;
    for pairings in &stage_pairings {
        dressed = dressed.exp_pairings(pairings, np, order, Some(order_var), &initial);
        if dressed.len() > term_budget {
            return Err(LabError::Budget(format!("{} terms exceed the budget {term_budget}", dressed.len())));
        }
    }
    let dressed = dressed.truncated(&finals);
    let log = dressed.log(&finals)?;

    let weights = bare.weights.clone();
    let band = bare.band;
    let read = |p: &FunctionalPoly| CumulantSet::from_poly(p, band, CumulantKind::Dressed, weights.clone(), keys);
    Ok(OracleOutput {
        cumulants_by_order: split_by_order(&log, order_var, order).iter().map(read).collect(),
        moments_by_order: split_by_order(&dressed, order_var, order).iter().map(read).collect(),
    })
}

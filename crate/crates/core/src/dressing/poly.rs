//! Truncated multilinear polynomials in discretised functional variables.
//!
//! Variables are small integers; a monomial is a sorted multiset of them,
//! packed one byte per factor into a `u128` (variable ids are stored
//! shifted by one, so zero bytes mark the unused tail). At most 16 factors.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use num_complex::Complex64 as C64;

use crate::error::{LabError, Result};

pub const MAX_DEGREE: usize = 16;
pub const MAX_VARIABLES: usize = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(u128);

impl Monomial {
    pub const ONE: Monomial = Monomial(0);

    pub fn from_vars(vars: &[usize]) -> Self {
        assert!(vars.len() <= MAX_DEGREE, "monomial degree exceeds {MAX_DEGREE}");
        let mut v: Vec<usize> = vars.to_vec();
        v.sort_unstable();
        let mut packed = 0u128;
        for (i, x) in v.iter().enumerate() {
            assert!(*x < MAX_VARIABLES, "variable id out of range");
            packed |= ((*x as u128) + 1) << (8 * i);
        }
        Monomial(packed)
    }

    pub fn vars(self) -> Vec<usize> {
        let mut out = Vec::with_capacity(8);
        let mut p = self.0;
        while p != 0 {
            out.push((p & 0xff) as usize - 1);
            p >>= 8;
        }
        out
    }

    pub fn degree(self) -> usize {
        (128 - self.0.leading_zeros() as usize).div_ceil(8)
    }

    pub fn times(self, other: Monomial) -> Option<Monomial> {
        let (a, b) = (self.vars(), other.vars());
        if a.len() + b.len() > MAX_DEGREE {
            return None;
        }
        let mut all = a;
        all.extend(b);
        Some(Monomial::from_vars(&all))
    }

    /// Multiplicity of `var` and the monomial with one factor removed.
    pub fn without(self, var: usize) -> Option<(usize, Monomial)> {
        let mut v = self.vars();
        let count = v.iter().filter(|&&x| x == var).count();
        if count == 0 {
            return None;
        }
        let pos = v.iter().position(|&x| x == var).expect("present");
        v.remove(pos);
        Some((count, Monomial::from_vars(&v)))
    }
}

/// Degree limits: variables are grouped in blocks of `block_size`
/// consecutive ids; `caps[b]` bounds the degree in block `b`, `total` the
/// degree summed over the blocks listed in `counted`.
#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    pub block_size: usize,
    pub caps: Vec<usize>,
    pub counted: Vec<bool>,
    pub total: usize,
}

impl Truncation {
    pub fn admits(&self, m: Monomial) -> bool {
        let mut per = vec![0usize; self.caps.len()];
        for v in m.vars() {
            let b = v / self.block_size;
            if b >= per.len() {
                return false;
            }
            per[b] += 1;
            if per[b] > self.caps[b] {
                return false;
            }
        }
        per.iter().zip(&self.counted).filter(|(_, c)| **c).map(|(n, _)| n).sum::<usize>() <= self.total
    }
}

/// Second-order operator `coefficient * sum_pq M[p][q] d/dx_{first*N+p} d/dx_{second*N+q}`,
/// each application also multiplied by the order-counting variable.
#[derive(Clone, Debug)]
pub struct Pairing {
    pub first_block: usize,
    pub second_block: usize,
    pub matrix: Vec<Vec<C64>>,
    pub coefficient: C64,
}

/// Fixed-key hashing keeps term iteration, and so every floating-point
/// summation over terms, identical from run to run.
pub type Terms = HashMap<Monomial, C64, BuildHasherDefault<DefaultHasher>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FunctionalPoly {
    pub terms: Terms,
}

impl FunctionalPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: C64) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::ONE, c);
        p
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, m: Monomial, c: C64) {
        if c != C64::new(0.0, 0.0) {
            *self.terms.entry(m).or_insert(C64::new(0.0, 0.0)) += c;
        }
    }

    pub fn coefficient(&self, m: Monomial) -> C64 {
        self.terms.get(&m).copied().unwrap_or_default()
    }

    pub fn add(&self, other: &FunctionalPoly) -> FunctionalPoly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(*m, *c);
        }
        out
    }

    pub fn scale(&self, s: C64) -> FunctionalPoly {
        FunctionalPoly { terms: self.terms.iter().map(|(m, c)| (*m, c * s)).collect() }
    }

    pub fn truncated(&self, t: &Truncation) -> FunctionalPoly {
        FunctionalPoly { terms: self.terms.iter().filter(|(m, _)| t.admits(**m)).map(|(m, c)| (*m, *c)).collect() }
    }

    pub fn mul(&self, other: &FunctionalPoly, t: &Truncation) -> FunctionalPoly {
        let mut out = FunctionalPoly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                if let Some(m) = ma.times(*mb) {
                    if t.admits(m) {
                        out.add_term(m, ca * cb);
                    }
                }
            }
        }
        out
    }

    /// Multiplies every monomial by variable `var`.
    pub fn times_var(&self, var: usize, t: &Truncation) -> FunctionalPoly {
        let v = Monomial::from_vars(&[var]);
        let mut out = FunctionalPoly::zero();
        for (m, c) in &self.terms {
            if let Some(n) = m.times(v) {
                if t.admits(n) {
                    out.add_term(n, *c);
                }
            }
        }
        out
    }

    pub fn derivative(&self, var: usize) -> FunctionalPoly {
        let mut out = FunctionalPoly::zero();
        for (m, c) in &self.terms {
            if let Some((k, rest)) = m.without(var) {
                out.add_term(rest, c * k as f64);
            }
        }
        out
    }

    /// `exp(self)` truncated; the constant term is exponentiated exactly.
    pub fn exp(&self, t: &Truncation) -> Result<FunctionalPoly> {
        let c0 = self.coefficient(Monomial::ONE);
        let mut rest = self.clone();
        rest.terms.remove(&Monomial::ONE);
        let mut out = FunctionalPoly::constant(C64::new(1.0, 0.0));
        let mut term = out.clone();
        for r in 1..=MAX_DEGREE + 1 {
            term = term.mul(&rest, t).scale(C64::new(1.0 / r as f64, 0.0));
            if term.is_empty() {
                return Ok(out.scale(c0.exp()));
            }
            out = out.add(&term);
        }
        Err(LabError::Budget("exponential series did not terminate under the truncation".into()))
    }

    /// `log(self)` truncated; requires a nonzero constant term.
    pub fn log(&self, t: &Truncation) -> Result<FunctionalPoly> {
        let c0 = self.coefficient(Monomial::ONE);
        if c0.norm() == 0.0 {
            return Err(LabError::Invalid("logarithm of a series without constant term".into()));
        }
        let mut y = self.scale(1.0 / c0);
        y.terms.remove(&Monomial::ONE);
        let y = y.truncated(t);
        let mut out = FunctionalPoly::constant(c0.ln());
        let mut power = FunctionalPoly::constant(C64::new(1.0, 0.0));
        for r in 1..=MAX_DEGREE + 1 {
            power = power.mul(&y, t);
            if power.is_empty() {
                return Ok(out);
            }
            let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
            out = out.add(&power.scale(C64::new(sign / r as f64, 0.0)));
        }
        Err(LabError::Budget("logarithm series did not terminate under the truncation".into()))
    }

    /// One application of `pairing`, with every produced term multiplied by
    /// the order-counting variable `order_var` (if any).
    pub fn apply_pairing(&self, pairing: &Pairing, block_size: usize, order_var: Option<usize>, t: &Truncation) -> FunctionalPoly {
        let mut out = FunctionalPoly::zero();
        let lam = order_var.map(|v| Monomial::from_vars(&[v]));
        for (m, c) in &self.terms {
            let vars = m.vars();
            let mut firsts: Vec<usize> = vars.iter().copied().filter(|v| v / block_size == pairing.first_block).collect();
            firsts.dedup();
            for &u in &firsts {
                let (ku, rest) = m.without(u).expect("present");
                let p = u % block_size;
                let mut seconds: Vec<usize> = rest.vars().into_iter().filter(|v| v / block_size == pairing.second_block).collect();
                seconds.dedup();
                for &w in &seconds {
                    let q = w % block_size;
                    let k = pairing.matrix[p][q];
                    if k == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let (kw, rest2) = rest.without(w).expect("present");
                    let mono = match lam {
                        Some(l) => match rest2.times(l) {
                            Some(x) => x,
                            None => continue,
                        },
                        None => rest2,
                    };
                    if t.admits(mono) {
                        out.add_term(mono, c * k * pairing.coefficient * (ku * kw) as f64);
                    }
                }
            }
        }
        out
    }

    /// `sum_{j<=order} (1/j!) P^j self` for the operator `P = sum of pairings`,
    /// each application tagged with `order_var`.
    pub fn exp_pairings(
        &self,
        pairings: &[Pairing],
        block_size: usize,
        order: usize,
        order_var: Option<usize>,
        t: &Truncation,
    ) -> FunctionalPoly {
        let mut out = self.clone();
        let mut term = self.clone();
        for j in 1..=order {
            let mut next = FunctionalPoly::zero();
            for p in pairings {
                next = next.add(&term.apply_pairing(p, block_size, order_var, t));
            }
            term = next.scale(C64::new(1.0 / j as f64, 0.0));
            if term.is_empty() {
                break;
            }
            out = out.add(&term);
        }
        out
    }

    /// Value at a point (`values[var]`).
    pub fn evaluate(&self, values: &[C64]) -> C64 {
        self.terms
            .iter()
            .map(|(m, c)| m.vars().iter().fold(*c, |acc, v| acc * values[*v]))
            .sum()
    }

    pub fn max_abs_diff(&self, other: &FunctionalPoly) -> f64 {
        let mut d = 0.0f64;
        for (m, c) in &self.terms {
            d = d.max((c - other.coefficient(*m)).norm());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                d = d.max(c.norm());
            }
        }
        d
    }
}

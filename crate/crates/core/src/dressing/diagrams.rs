//! Connected diagrams of broad-band bare cumulant vertices joined by
//! retarded propagators.
//!
//! A vertex of type `(m, n)` has `m` response slots (`t`) and `n` source
//! slots (`t'`). An edge runs from a source slot of `u` to a response slot
//! of `v` and carries `Delta_R(t_u' - t_v)`. Slots within a vertex are
//! interchangeable, so a diagram is fixed by its vertex types and the
//! matrix `edges[u][v]` of edge counts.

use std::collections::HashSet;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::cumulants::{flat_index, tuples, CausalPropagator, CumulantKind, CumulantSet, CumulantBand};
use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagram {
    pub vertices: Vec<(usize, usize)>,
    pub edges: Vec<Vec<usize>>,
    pub external: (usize, usize),
    /// Order of the automorphism group with unlabelled external slots.
    pub automorphisms: usize,
    /// Automorphisms that keep every external slot in place.
    pub labelled_automorphisms: usize,
}

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

impl Diagram {
    pub fn order(&self) -> usize {
        self.edges.iter().flatten().sum()
    }

    pub fn free_response(&self, v: usize) -> usize {
        self.vertices[v].0 - (0..self.vertices.len()).map(|u| self.edges[u][v]).sum::<usize>()
    }

    pub fn free_source(&self, u: usize) -> usize {
        self.vertices[u].1 - self.edges[u].iter().sum::<usize>()
    }

    /// Weight of each diagram with labelled external legs.
    pub fn symmetry_factor(&self) -> f64 {
        1.0 / self.labelled_automorphisms as f64
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "external ({}, {}) order {} factor 1/{}:",
            self.external.0,
            self.external.1,
            self.order(),
            self.labelled_automorphisms
        );
        for (v, (m, n)) in self.vertices.iter().enumerate() {
            s.push_str(&format!(" v{v}=Q({m},{n})"));
        }
        for (u, row) in self.edges.iter().enumerate() {
            for (v, c) in row.iter().enumerate() {
                if *c > 0 {
                    s.push_str(&format!(" v{u}->v{v}x{c}"));
                }
            }
        }
        s
    }

    fn vertex_automorphisms(&self, fix_external: bool) -> usize {
        let nv = self.vertices.len();
        permutations(nv)
            .into_iter()
            .filter(|pi| {
                (0..nv).all(|i| self.vertices[pi[i]] == self.vertices[i])
                    && (0..nv).all(|i| (0..nv).all(|j| self.edges[pi[i]][pi[j]] == self.edges[i][j]))
                    && (!fix_external
                        || (0..nv).all(|i| pi[i] == i || (self.free_response(i) == 0 && self.free_source(i) == 0)))
            })
            .count()
    }

    fn with_counts(vertices: Vec<(usize, usize)>, edges: Vec<Vec<usize>>, external: (usize, usize)) -> Self {
        let mut d = Diagram { vertices, edges, external, automorphisms: 1, labelled_automorphisms: 1 };
        let multi: usize = d.edges.iter().flatten().map(|c| factorial(*c)).product();
        let free: usize = (0..d.vertices.len()).map(|v| factorial(d.free_response(v)) * factorial(d.free_source(v))).product();
        d.automorphisms = d.vertex_automorphisms(false) * multi * free;
        d.labelled_automorphisms = d.vertex_automorphisms(true) * multi;
        d
    }

    fn canonical(&self) -> (Vec<(usize, usize)>, Vec<usize>) {
        let nv = self.vertices.len();
        let mut best: Option<(Vec<(usize, usize)>, Vec<usize>)> = None;
        for pi in permutations(nv) {
            let types: Vec<(usize, usize)> = (0..nv).map(|i| self.vertices[pi[i]]).collect();
            let flat: Vec<usize> = (0..nv).flat_map(|i| (0..nv).map(move |j| (i, j))).map(|(i, j)| self.edges[pi[i]][pi[j]]).collect();
            let cand = (types, flat);
            if best.as_ref().is_none_or(|b| cand < *b) {
                best = Some(cand);
            }
        }
        best.expect("at least one permutation")
    }

    fn is_connected(&self) -> bool {
        let nv = self.vertices.len();
        let mut seen = vec![false; nv];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..nv {
                if !seen[v] && (self.edges[u][v] > 0 || self.edges[v][u] > 0) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn multisets(types: usize, size: usize, start: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for t in start..types {
        for mut rest in multisets(types, size - 1, t) {
            rest.insert(0, t);
            out.push(rest);
        }
    }
    out
}

fn edge_matrices(nv: usize, total: usize, rows: &[usize], cols: &[usize]) -> Vec<Vec<Vec<usize>>> {
    fn fill(
        cell: usize,
        nv: usize,
        left: usize,
        rows: &mut Vec<usize>,
        cols: &mut Vec<usize>,
        cur: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if cell == nv * nv {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let (u, v) = (cell / nv, cell % nv);
        let max = left.min(rows[u]).min(cols[v]);
        for c in 0..=max {
            cur[u][v] = c;
            rows[u] -= c;
            cols[v] -= c;
            fill(cell + 1, nv, left - c, rows, cols, cur, out);
            rows[u] += c;
            cols[v] += c;
        }
        cur[u][v] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![vec![0; nv]; nv];
    fill(0, nv, total, &mut rows.to_vec(), &mut cols.to_vec(), &mut cur, &mut out);
    out
}

/// Maximum propagator count accepted by the enumerator.
pub const MAX_DIAGRAM_ORDER: usize = 3;

/// All connected diagrams with `order` edges and external type `external`,
/// one representative per isomorphism class.
pub fn enumerate_diagrams(vertex_types: &[(usize, usize)], external: (usize, usize), order: usize) -> Result<Vec<Diagram>> {
    if order > MAX_DIAGRAM_ORDER {
        return Err(LabError::Budget(format!("diagram order {order} exceeds {MAX_DIAGRAM_ORDER}")));
    }
    let mut types: Vec<(usize, usize)> = vertex_types.to_vec();
    types.sort_unstable();
    types.dedup();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for nv in 1..=order + 1 {
        for choice in multisets(types.len(), nv, 0) {
            let vertices: Vec<(usize, usize)> = choice.iter().map(|i| types[*i]).collect();
            let resp: usize = vertices.iter().map(|v| v.0).sum();
            let src: usize = vertices.iter().map(|v| v.1).sum();
            if resp != external.0 + order || src != external.1 + order {
                continue;
            }
            let rows: Vec<usize> = vertices.iter().map(|v| v.1).collect();
            let cols: Vec<usize> = vertices.iter().map(|v| v.0).collect();
            for edges in edge_matrices(nv, order, &rows, &cols) {
                let d = Diagram::with_counts(vertices.clone(), edges, external);
                if !d.is_connected() {
                    continue;
                }
                if seen.insert(d.canonical()) {
                    out.push(d);
                }
            }
        }
    }
    Ok(out)
}

/// Contracts `matrix` into slot `slot` of a rank-`rank` tensor:
/// `out[.., p, ..] = sum_q matrix[p][q] w_q t[.., q, ..]`.
fn absorb(t: &[C64], rank: usize, slot: usize, matrix: &[Vec<C64>], w: &[f64]) -> Vec<C64> {
    let np = w.len();
    let stride = np.pow((rank - 1 - slot) as u32);
    let mut out = vec![C64::new(0.0, 0.0); t.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let p = (flat / stride) % np;
        let base = flat - p * stride;
        *o = (0..np).map(|q| matrix[p][q] * w[q] * t[base + q * stride]).sum();
    }
    out
}

/// Value of `d` as a symmetric tensor over its external slots, weighted by
/// `1 / automorphisms` and summed over every assignment of external labels.
pub fn evaluate_diagram(d: &Diagram, bare: &CumulantSet, prop: &CausalPropagator) -> Result<Vec<C64>> {
    if bare.band != CumulantBand::Broad {
        return Err(LabError::Invalid("the diagram engine handles broad-band cumulants".into()));
    }
    let np = bare.points();
    if prop.points() != np {
        return Err(LabError::Shape(format!("propagator has {} points, cumulants have {np}", prop.points())));
    }
    let w = bare.weights.clone();
    let nv = d.vertices.len();

    // Slot labels: Some(edge) for internal slots, None for external ones.
    let mut tensors = Vec::with_capacity(nv);
    let mut labels: Vec<Vec<Slot>> = Vec::with_capacity(nv);
    for &(m, n) in &d.vertices {
        let t = bare
            .get(&CumulantSet::broad_key(m, n))
            .ok_or_else(|| LabError::Invalid(format!("bare cumulant Q({m},{n}) is missing")))?;
        tensors.push(t.clone());
        labels.push(vec![Slot::Free; m + n]);
    }
    let mut next_resp: Vec<usize> = vec![0; nv];
    let mut next_src: Vec<usize> = d.vertices.iter().map(|v| v.0).collect();
    let mut n_edges = 0;
    for u in 0..nv {
        for v in 0..nv {
            for _ in 0..d.edges[u][v] {
                let (su, sv) = (next_src[u], next_resp[v]);
                next_src[u] += 1;
                next_resp[v] += 1;
                labels[u][su] = Slot::Edge(n_edges);
                labels[v][sv] = Slot::Edge(n_edges);
                let rank = d.vertices[v].0 + d.vertices[v].1;
                tensors[v] = absorb(&tensors[v], rank, sv, &prop.matrix, &w);
                n_edges += 1;
            }
        }
    }
    let (m_ext, n_ext) = d.external;
    let mut ext_resp = 0;
    let mut ext_src = 0;
    for (v, &(m, _)) in d.vertices.iter().enumerate() {
        for (s, l) in labels[v].iter_mut().enumerate() {
            if *l == Slot::Free {
                if s < m {
                    *l = Slot::External(ext_resp);
                    ext_resp += 1;
                } else {
                    *l = Slot::External(m_ext + ext_src);
                    ext_src += 1;
                }
            }
        }
    }
    debug_assert_eq!((ext_resp, ext_src), (m_ext, n_ext));

    let rank_ext = m_ext + n_ext;
    let internal: Vec<Vec<usize>> = tuples(np, n_edges).collect();
    let ordered: Vec<C64> = tuples(np, rank_ext)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|ext| {
            let mut acc = C64::new(0.0, 0.0);
            for int in &internal {
                let mut term = C64::new(int.iter().map(|p| w[*p]).product::<f64>(), 0.0);
                for v in 0..nv {
                    let idx = labels[v].iter().fold(0, |a, l| {
                        a * np
                            + match l {
                                Slot::Edge(e) => int[*e],
                                Slot::External(x) => ext[*x],
                                Slot::Free => unreachable!(),
                            }
                    });
                    term *= tensors[v][idx];
                    if term == C64::new(0.0, 0.0) {
                        break;
                    }
                }
                acc += term;
            }
            acc
        })
        .collect();

    let perms_resp = permutations(m_ext);
    let perms_src = permutations(n_ext);
    let scale = 1.0 / d.automorphisms as f64;
    let out: Vec<C64> = tuples(np, rank_ext)
        .map(|ext| {
            let mut acc = C64::new(0.0, 0.0);
            for s in &perms_resp {
                for t in &perms_src {
                    let mut idx = Vec::with_capacity(rank_ext);
                    idx.extend(s.iter().map(|i| ext[*i]));
                    idx.extend(t.iter().map(|i| ext[m_ext + *i]));
                    acc += ordered[flat_index(&idx, np)];
                }
            }
            acc * scale
        })
        .collect();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Free,
    Edge(usize),
    External(usize),
}

/// Dressed cumulants of the broad keys `(m, n)`, summed over the connected
/// diagrams of each order `0..=order`; vertex types are those present in `bare`.
pub fn dress_by_diagrams(
    bare: &CumulantSet,
    prop: &CausalPropagator,
    externals: &[(usize, usize)],
    order: usize,
) -> Result<Vec<CumulantSet>> {
    let types: Vec<(usize, usize)> = bare.tensors.keys().map(|k| (k[0], k[1])).collect();
    let mut out = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let mut set = CumulantSet::new(CumulantBand::Broad, CumulantKind::Dressed, bare.weights.clone());
        for &(m, n) in externals {
            let mut acc = vec![C64::new(0.0, 0.0); bare.points().pow((m + n) as u32)];
            for d in enumerate_diagrams(&types, (m, n), k)? {
                for (a, b) in acc.iter_mut().zip(evaluate_diagram(&d, bare, prop)?) {
                    *a += b;
                }
            }
            set.insert(CumulantSet::broad_key(m, n), acc)?;
        }
        out.push(set);
    }
    Ok(out)
}

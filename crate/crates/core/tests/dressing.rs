mod common;

use causal_lab::dressing::cumulants::{retarded_broad, tuples};
use causal_lab::dressing::oracle::DEFAULT_TERM_BUDGET;
use causal_lab::dressing::solution::{
    broad_mean_field, broad_solution, chain_partial, chain_resummation, log_functional, merged_solution, narrow_solution,
    resplit_defect, shift_identity_check, BroadArguments, NarrowArguments,
};
use causal_lab::dressing::*;
use causal_lab::grid::SiteSet;
use common::*;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_site_prop(n: usize, dt: f64) -> CausalPropagator {
    CausalPropagator::broad(&broad_single(1.3), n, dt)
}

fn random_bare(np: usize, weights: Vec<f64>, keys: &[(usize, usize)], scale: f64, seed: u64) -> CumulantSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = CumulantSet::new(CumulantBand::Broad, CumulantKind::Bare, weights);
    for &(m, n) in keys {
        let key = CumulantSet::broad_key(m, n);
        let t: Vec<C64> = CumulantSet::random_symmetric(&key, np, &mut rng).into_iter().map(|v| v * scale).collect();
        set.insert(key, t).unwrap();
    }
    set
}

fn random_matrix(np: usize, seed: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..np).map(|_| (0..np).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()).collect()
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn order_zero_oracle_returns_bare() {
    let prop = single_site_prop(4, 0.3);
    let bare = random_bare(4, prop.weights(), &[(1, 1), (1, 3), (2, 2)], 0.5, 1);
    let keys = vec![vec![1, 1], vec![1, 3], vec![2, 2]];
    let out = dress_functional_oracle(&bare, &Propagators::broad(prop), 0, &keys, DEFAULT_TERM_BUDGET).unwrap();
    assert!(out.cumulants().max_abs_diff(&bare) < 1e-13);
}

#[test]
fn chain_terms_from_oracle() {
    let n = 6;
    let prop = single_site_prop(n, 0.25);
    let bare = random_bare(n, prop.weights(), &[(1, 1)], 1.0, 2);
    let out = dress_functional_oracle(&bare, &Propagators::broad(prop.clone()), 2, &[vec![1, 1]], DEFAULT_TERM_BUDGET).unwrap();
    let q = bare.get(&[1, 1]).unwrap();
    let w = prop.weights();
    // Direct nested sums for the first and second corrections.
    for (t, tp) in [(0, 0), (4, 1), (5, 5), (2, 3)] {
        let mut first = c(0.0, 0.0);
        let mut second = c(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let qd = q[t * n + a] * w[a] * prop.matrix[a][b] * w[b];
                first += qd * q[b * n + tp];
                for c2 in 0..n {
                    for d in 0..n {
                        second += qd * q[b * n + c2] * w[c2] * prop.matrix[c2][d] * w[d] * q[d * n + tp];
                    }
                }
            }
        }
        assert!((out.cumulants_by_order[1].entry(&[1, 1], &[t, tp]) - first).norm() < 1e-12);
        assert!((out.cumulants_by_order[2].entry(&[1, 1], &[t, tp]) - second).norm() < 1e-12);
    }
    let partial = chain_partial(q, &prop, 2);
    assert!(max_diff(&out.cumulants().tensors[&vec![1, 1]], &partial) < 1e-12);
}

#[test]
fn chain_enumeration_examples() {
    let one = enumerate_diagrams(&[(1, 1)], (1, 1), 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].vertices.len(), 2);
    assert_eq!(one[0].symmetry_factor(), 1.0);
    let bare = enumerate_diagrams(&[(1, 1)], (1, 1), 0).unwrap();
    assert_eq!(bare.len(), 1);
    assert_eq!(bare[0].order(), 0);
}

#[test]
fn two_edge_diagram_with_half_factor() {
    let ds = enumerate_diagrams(&[(1, 3), (2, 2)], (1, 3), 2).unwrap();
    let target = ds
        .iter()
        .find(|d| {
            d.vertices.len() == 2
                && d.vertices.contains(&(1, 3))
                && d.vertices.contains(&(2, 2))
                && d.edges.iter().flatten().any(|c| *c == 2)
        })
        .expect("double-edge diagram present");
    assert_eq!(target.symmetry_factor(), 0.5);
    assert!(target.describe().contains("factor 1/2"));
}

#[test]
fn spike_chain_samples_propagator() {
    let n = 8;
    let dt = 0.2;
    let prop = single_site_prop(n, dt);
    let mut bare = CumulantSet::new(CumulantBand::Broad, CumulantKind::Bare, prop.weights());
    let mut q = vec![c(0.0, 0.0); n * n];
    let (a1, a2) = (c(1.5, 0.0), c(-0.7, 0.2));
    q[6 * n + 5] = a1;
    q[2 * n + 1] = a2;
    bare.insert(vec![1, 1], q).unwrap();
    let d = &enumerate_diagrams(&[(1, 1)], (1, 1), 1).unwrap()[0];
    let v = evaluate_diagram(d, &bare, &prop).unwrap();
    // Q(6|5) Delta(5-2) Q(2|1) dt^2.
    let expect = a1 * prop.matrix[5][2] * a2 * dt * dt;
    assert!((v[6 * n + 1] - expect).norm() < 1e-14);
    assert!((prop.matrix[5][2].re - retarded_broad(&broad_single(1.3), 0, 0, 3.0 * dt)).abs() < 1e-15);
}

#[test]
fn double_convolution_pattern() {
    // Two (2,2) vertices joined by two parallel edges, external (2,2).
    let n = 4;
    let prop = CausalPropagator { matrix: random_matrix(n, 3), ..single_site_prop(n, 0.4) };
    let bare = random_bare(n, prop.weights(), &[(2, 2)], 1.0, 4);
    let ds = enumerate_diagrams(&[(2, 2)], (2, 2), 2).unwrap();
    let d = ds
        .iter()
        .find(|d| d.vertices.len() == 2 && d.edges[0][1] == 2)
        .or_else(|| ds.iter().find(|d| d.vertices.len() == 2 && d.edges[1][0] == 2))
        .unwrap();
    let v = evaluate_diagram(d, &bare, &prop).unwrap();
    let q = bare.get(&[2, 2]).unwrap();
    let w = prop.weights();
    let idx = |a: usize, b: usize, c2: usize, d2: usize| ((a * n + b) * n + c2) * n + d2;
    // Half of Q(t1,t2|s1,s2) Delta(s1-r1) Delta(s2-r2) Q(r1,r2|t1',t2'),
    // symmetrised over which vertex hosts the external t and t' legs.
    let direct = |t1: usize, t2: usize, u1: usize, u2: usize| {
        let mut acc = c(0.0, 0.0);
        for s1 in 0..n {
            for s2 in 0..n {
                for r1 in 0..n {
                    for r2 in 0..n {
                        acc += q[idx(t1, t2, s1, s2)]
                            * w[s1]
                            * prop.matrix[s1][r1]
                            * w[r1]
                            * w[s2]
                            * prop.matrix[s2][r2]
                            * w[r2]
                            * q[idx(r1, r2, u1, u2)];
                    }
                }
            }
        }
        0.5 * acc
    };
    for (t1, t2, u1, u2) in [(0, 1, 2, 3), (3, 3, 0, 1), (2, 0, 2, 1)] {
        let expect = direct(t1, t2, u1, u2);
        assert!((v[idx(t1, t2, u1, u2)] - expect).norm() < 1e-12, "{t1}{t2}{u1}{u2}");
    }
}

#[test]
fn zero_bare_gives_zero_diagrams() {
    let n = 4;
    let prop = single_site_prop(n, 0.3);
    let mut bare = CumulantSet::new(CumulantBand::Broad, CumulantKind::Bare, prop.weights());
    for key in [[1, 1], [1, 3], [2, 2]] {
        let rank = key[0] + key[1];
        bare.insert(key.to_vec(), vec![c(0.0, 0.0); n.pow(rank as u32)]).unwrap();
    }
    let sets = dress_by_diagrams(&bare, &prop, &[(1, 1), (1, 3), (2, 2)], 2).unwrap();
    assert!(sets.iter().all(|s| s.tensors.values().flatten().all(|v| v.norm() == 0.0)));
}

#[test]
fn missing_vertex_is_an_error() {
    let n = 3;
    let prop = single_site_prop(n, 0.3);
    let bare = random_bare(n, prop.weights(), &[(1, 1)], 1.0, 5);
    let d = Diagram { vertices: vec![(2, 2)], ..enumerate_diagrams(&[(1, 1)], (1, 1), 0).unwrap()[0].clone() };
    assert!(evaluate_diagram(&d, &bare, &prop).is_err());
}

fn cross_validate(sites: SiteSet, n: usize, seed: u64) -> f64 {
    let dt = 0.35;
    let modes = causal_lab::kernels::ModeSet::new(
        causal_lab::kernels::Band::Broad,
        vec![1.1, 2.3],
        ndarray::Array2::from_shape_fn((2, sites.len()), |(k, x)| C64::from_polar(0.8 - 0.2 * k as f64, 0.4 * (k + x) as f64)),
        sites,
        0.0,
    )
    .unwrap();
    let prop = CausalPropagator::broad(&modes, n, dt);
    let np = prop.points();
    let bare = random_bare(np, prop.weights(), &[(1, 1), (1, 3), (2, 2)], 0.4, seed);
    let keys = vec![vec![1, 1], vec![1, 3], vec![2, 2]];
    let oracle = dress_functional_oracle(&bare, &Propagators::broad(prop.clone()), 2, &keys, DEFAULT_TERM_BUDGET).unwrap();
    let diagrams = dress_by_diagrams(&bare, &prop, &[(1, 1), (1, 3), (2, 2)], 2).unwrap();
    let mut worst = 0.0f64;
    for k in 0..=2 {
        let d = oracle.cumulants_by_order[k].max_abs_diff(&diagrams[k]);
        worst = worst.max(d);
    }
    worst
}

#[test]
fn oracle_matches_diagrams_single_site() {
    let worst = cross_validate(SiteSet::single(), 4, 11);
    assert!(worst < 1e-10, "deviation {worst:e}");
}

#[test]
fn oracle_matches_diagrams_two_sites() {
    let worst = cross_validate(two_sites(), 2, 12);
    assert!(worst < 1e-10, "deviation {worst:e}");
}

#[test]
fn disconnected_parts_live_in_moments() {
    let n = 4;
    let prop = single_site_prop(n, 0.3);
    let bare = random_bare(n, prop.weights(), &[(1, 1), (2, 2)], 0.5, 13);
    let keys = vec![vec![0, 0], vec![1, 1], vec![2, 2]];
    let out = dress_functional_oracle(&bare, &Propagators::broad(prop.clone()), 2, &keys, DEFAULT_TERM_BUDGET).unwrap();
    let cum = &out.cumulants_by_order;
    let mom = &out.moments_by_order;
    // exp of the vacuum constant, order by order.
    let c1 = cum[1].entry(&[0, 0], &[]);
    let c2 = cum[2].entry(&[0, 0], &[]);
    let e = [c(1.0, 0.0), c1, c2 + 0.5 * c1 * c1];
    let mut disconnected = 0.0f64;
    for k in 0..=2 {
        for t in tuples(n, 4) {
            let (t1, t2, u1, u2) = (t[0], t[1], t[2], t[3]);
            // Order-b part of C22 + C11 C11 (symmetrised over the source legs).
            let x = |b: usize| {
                let mut acc = cum[b].entry(&[2, 2], &t);
                for i in 0..=b {
                    let (a, bb) = (&cum[i], &cum[b - i]);
                    acc += a.entry(&[1, 1], &[t1, u1]) * bb.entry(&[1, 1], &[t2, u2])
                        + a.entry(&[1, 1], &[t1, u2]) * bb.entry(&[1, 1], &[t2, u1]);
                }
                acc
            };
            let expect: C64 = (0..=k).map(|a| e[a] * x(k - a)).sum();
            let got = mom[k].entry(&[2, 2], &t);
            assert!((got - expect).norm() < 1e-12, "order {k}");
            disconnected = disconnected.max((got - cum[k].entry(&[2, 2], &t)).norm());
        }
    }
    assert!(disconnected > 1e-3);
    // Connected diagrams alone reproduce the cumulant, not the moment.
    let diagrams = dress_by_diagrams(&bare, &prop, &[(2, 2)], 2).unwrap();
    for k in 0..=2 {
        let d = diagrams[k].get(&[2, 2]).unwrap();
        assert!(max_diff(d, cum[k].get(&[2, 2]).unwrap()) < 1e-12);
    }
    assert!(max_diff(diagrams[2].get(&[2, 2]).unwrap(), mom[2].get(&[2, 2]).unwrap()) > 1e-3);
}

#[test]
fn first_order_is_linear_in_propagator() {
    let n = 4;
    let base = single_site_prop(n, 0.3);
    let p1 = CausalPropagator { matrix: random_matrix(n, 20), ..base.clone() };
    let p2 = CausalPropagator { matrix: random_matrix(n, 21), ..base.clone() };
    let bare = random_bare(n, base.weights(), &[(1, 1), (1, 3), (2, 2)], 0.5, 22);
    let keys = vec![vec![1, 1], vec![1, 3], vec![2, 2]];
    let first = |p: &CausalPropagator| {
        dress_functional_oracle(&bare, &Propagators::broad(p.clone()), 1, &keys, DEFAULT_TERM_BUDGET).unwrap().cumulants_by_order[1].clone()
    };
    let sum = first(&p1.add(&p2));
    let parts = causal_lab::dressing::oracle::sum_sets(&[first(&p1), first(&p2)]);
    assert!(sum.max_abs_diff(&parts) < 1e-12);
}

#[test]
fn advanced_edges_contribute_nothing() {
    // Q(t|a) Delta(a - b) Q(b|t') needs t > a >= b > t'.
    let n = 4;
    let base = single_site_prop(n, 0.3);
    assert!(base.is_retarded());
    let bare = random_bare(n, base.weights(), &[(1, 1)], 1.0, 31);
    let mut causal_bare = bare.clone();
    // Strictly retarded Q(1,1): zero unless t > t'.
    let t = causal_bare.tensors.get_mut(&vec![1, 1]).unwrap();
    for i in 0..n {
        for j in 0..n {
            if i <= j {
                t[i * n + j] = c(0.0, 0.0);
            }
        }
    }
    let sets_r = dress_by_diagrams(&causal_bare, &base, &[(1, 1)], 1).unwrap();
    let v = sets_r[1].get(&[1, 1]).unwrap();
    for i in 0..n {
        for j in 0..n {
            if i <= j + 1 {
                assert!(v[i * n + j].norm() < 1e-15, "entry {i},{j}");
            }
        }
    }
}

#[test]
fn merged_dressing_order_independent() {
    let n = 2;
    let sites = SiteSet::single();
    let dt = 0.3;
    let bp = CausalPropagator::broad(&broad_single(1.2), n, dt);
    let modes = causal_lab::kernels::ModeSet::single_site(causal_lab::kernels::Band::Narrow, vec![5.0, 5.3], 5.0).unwrap();
    let gp = CausalPropagator::narrow(&modes, n, dt);
    let w = causal_lab::dressing::cumulants::window_weights(&sites, n, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut bare = CumulantSet::new(CumulantBand::Merged, CumulantKind::Bare, w);
    // Blocks [zeta, nu*, nu, a, e, e*].
    for key in [[1, 0, 0, 1, 0, 0], [0, 1, 0, 0, 1, 0], [0, 0, 1, 0, 0, 1], [1, 1, 0, 1, 1, 0], [0, 1, 1, 0, 1, 1], [1, 0, 1, 1, 0, 1]] {
        let t = CumulantSet::random_symmetric(&key, n, &mut rng).into_iter().map(|v| v * 0.5).collect();
        bare.insert(key.to_vec(), t).unwrap();
    }
    let keys: Vec<Vec<usize>> = bare.tensors.keys().cloned().collect();
    let run = |stages: &[Propagators]| {
        causal_lab::dressing::oracle::dress_functional_oracle_staged(&bare, stages, 2, &keys, DEFAULT_TERM_BUDGET).unwrap().cumulants()
    };
    let merged = run(&[Propagators::merged(bp.clone(), gp.clone())]);
    let bn = run(&[Propagators::broad(bp.clone()), Propagators::narrow(gp.clone())]);
    let nb = run(&[Propagators::narrow(gp.clone()), Propagators::broad(bp.clone())]);
    let d1 = bn.max_abs_diff(&nb);
    let d2 = merged.max_abs_diff(&bn);
    assert!(d1 < 1e-12 && d2 < 1e-12, "order dependence {d1:e} {d2:e}");
    // Both operators act: the result differs from either alone.
    let broad_only = run(&[Propagators::broad(bp)]);
    assert!(merged.max_abs_diff(&broad_only) > 1e-4);
}

#[test]
fn narrow_chain_keeps_conjugate_structure() {
    let n = 4;
    let modes = causal_lab::kernels::ModeSet::single_site(causal_lab::kernels::Band::Narrow, vec![5.0, 5.4], 5.0).unwrap();
    let gp = CausalPropagator::narrow(&modes, n, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let q: Vec<C64> = (0..n * n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let mut bare = CumulantSet::new(CumulantBand::Narrow, CumulantKind::Bare, gp.weights());
    bare.insert(vec![1, 0, 1, 0], q.clone()).unwrap();
    bare.insert(vec![0, 1, 0, 1], q.iter().map(|v| -v.conj()).collect()).unwrap();
    let keys = vec![vec![1, 0, 1, 0], vec![0, 1, 0, 1]];
    let out = dress_functional_oracle(&bare, &Propagators::narrow(gp.clone()), 2, &keys, DEFAULT_TERM_BUDGET).unwrap().cumulants();
    let direct = chain_partial(&q, &gp, 2);
    assert!(max_diff(out.get(&[1, 0, 1, 0]).unwrap(), &direct) < 1e-12);
    let conj: Vec<C64> = direct.iter().map(|v| -v.conj()).collect();
    assert!(max_diff(out.get(&[0, 1, 0, 1]).unwrap(), &conj) < 1e-12);
}

#[test]
fn chain_resummation_is_geometric_limit() {
    let n = 10;
    let prop = single_site_prop(n, 0.1);
    let bare = random_bare(n, prop.weights(), &[(1, 1)], 0.5, 60);
    let q = bare.get(&[1, 1]).unwrap();
    let full = chain_resummation(q, &prop).unwrap();
    let partial = chain_partial(q, &prop, 40);
    assert!(max_diff(&full, &partial) < 1e-12);
}

#[test]
fn vacuum_solution_without_device() {
    let n = 6;
    let prop = single_site_prop(n, 0.3);
    let empty = CumulantSet::new(CumulantBand::Broad, CumulantKind::Dressed, prop.weights());
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut args = BroadArguments::zeros(n);
    args.eta = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), 0.0)).collect();
    args.j_e = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let phi = broad_solution(&empty, &prop, &args).unwrap();
    let w = prop.weights();
    let dj = prop.apply(&args.j_e);
    let expect: C64 = (0..n).map(|p| args.eta[p] * w[p] * dj[p]).sum::<C64>() * c(0.0, 1.0);
    assert!((phi - expect.exp()).norm() < 1e-14);
}

#[test]
fn solution_depends_on_source_totals() {
    let n = 4;
    let prop = single_site_prop(n, 0.3);
    let mut dressed = random_bare(n, prop.weights(), &[(1, 1), (1, 3), (2, 2)], 0.3, 80);
    dressed.kind = CumulantKind::Dressed;
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut r = || (0..n).map(|_| c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect::<Vec<_>>();
    let args = BroadArguments { eta: r(), zeta: r(), j_e: r(), a_e: r(), big_j: r(), big_a: r() };
    for f in [0.3, 1.0, -0.5] {
        let d = resplit_defect(&dressed, &prop, &args, f).unwrap();
        assert!(d < 1e-12, "fraction {f}: {d:e}");
    }
}

#[test]
fn mean_field_is_eta_derivative() {
    let n = 5;
    let prop = single_site_prop(n, 0.3);
    let mut dressed = random_bare(n, prop.weights(), &[(1, 1), (1, 3)], 0.3, 90);
    dressed.kind = CumulantKind::Dressed;
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut r = || (0..n).map(|_| c(rng.gen_range(-0.5..0.5), 0.0)).collect::<Vec<_>>();
    let mut args = BroadArguments::zeros(n);
    args.j_e = r();
    args.big_a = r();
    let mean = broad_mean_field(&dressed, &prop, &args).unwrap();
    let w = prop.weights();
    let h = 1e-5;
    for p in 0..n {
        let eval = |s: f64| {
            let mut a = args.clone();
            a.eta[p] = c(s / w[p], 0.0);
            broad_solution(&dressed, &prop, &a).unwrap().ln()
        };
        let deriv = (eval(h) - eval(-h)) / (2.0 * h) * c(0.0, -1.0);
        assert!((deriv - mean[p]).norm() < 1e-7, "point {p}");
    }
}

#[test]
fn narrow_and_merged_solutions_reduce() {
    let n = 3;
    let modes = causal_lab::kernels::ModeSet::single_site(causal_lab::kernels::Band::Narrow, vec![5.0], 5.0).unwrap();
    let gp = CausalPropagator::narrow(&modes, n, 0.2);
    let bp = single_site_prop(n, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut r = || (0..n).map(|_| c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect::<Vec<_>>();
    let mut na = NarrowArguments::zeros(n);
    na.mu = r();
    na.mu_bar = r();
    na.d_e = r();
    na.d_bar = r();
    let empty = CumulantSet::new(CumulantBand::Narrow, CumulantKind::Dressed, gp.weights());
    let phi = narrow_solution(&empty, &gp, &na).unwrap();
    let w = gp.weights();
    let gd = gp.apply(&na.d_e);
    let gd_bar = gp.conj().apply(&na.d_bar);
    let i = c(0.0, 1.0);
    let expect: C64 = (0..n).map(|p| i * na.mu_bar[p] * w[p] * gd[p] - i * na.mu[p] * w[p] * gd_bar[p]).sum();
    assert!((phi - expect.exp()).norm() < 1e-14);
    let mut ba = BroadArguments::zeros(n);
    ba.eta = r();
    ba.j_e = r();
    let empty_m = CumulantSet::new(CumulantBand::Merged, CumulantKind::Dressed, gp.weights());
    let merged = merged_solution(&empty_m, &Propagators::merged(bp.clone(), gp.clone()), &ba, &na).unwrap();
    let empty_b = CumulantSet::new(CumulantBand::Broad, CumulantKind::Dressed, gp.weights());
    let broad = broad_solution(&empty_b, &bp, &ba).unwrap();
    assert!((merged - broad * phi).norm() < 1e-13);
    assert!(log_functional(&empty, &[r(), r(), r(), r()]).unwrap().norm() == 0.0);
}

#[test]
fn shift_identity_examples() {
    let n = 3;
    let w = vec![0.3; n];
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut p = FunctionalPoly::zero();
    for m in [vec![], vec![0], vec![1, 2], vec![0, 0, 1], vec![2, 2, 2]] {
        p.add_term(Monomial::from_vars(&m), c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    }
    let mut r = |s: f64| (0..n).map(|_| c(rng.gen_range(-s..s), rng.gen_range(-s..s))).collect::<Vec<_>>();
    let zero = vec![c(0.0, 0.0); n];
    assert_eq!(shift_identity_check(&zero, &p, &r(0.5), &w, 3).unwrap(), 0.0);
    assert!(shift_identity_check(&r(0.3), &p, &zero, &w, 3).unwrap() < 1e-14);
    let d = shift_identity_check(&r(0.3), &p, &r(0.3), &w, 3).unwrap();
    assert!(d < 1e-12, "deviation {d:e}");
}

#[test]
fn cumulant_polynomial_round_trip() {
    let n = 3;
    let w = vec![0.2, 0.3, 0.4];
    let bare = random_bare(n, w.clone(), &[(1, 1), (1, 3), (2, 2), (0, 2)], 1.0, 120);
    assert!(bare.symmetry_defect() == 0.0);
    let keys: Vec<Vec<usize>> = bare.tensors.keys().cloned().collect();
    let back = CumulantSet::from_poly(&bare.to_poly(), CumulantBand::Broad, CumulantKind::Bare, w, &keys);
    assert!(back.max_abs_diff(&bare) < 1e-14);
}

#[test]
fn budget_is_enforced() {
    let n = 4;
    let prop = single_site_prop(n, 0.3);
    let bare = random_bare(n, prop.weights(), &[(1, 1), (2, 2)], 0.5, 130);
    let r = dress_functional_oracle(&bare, &Propagators::broad(prop), 2, &[vec![2, 2]], 10);
    assert!(matches!(r, Err(causal_lab::LabError::Budget(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn chain_oracle_matches_diagrams(seed in 0u64..1000, dt in 0.05f64..0.5) {
        let n = 5;
        let prop = single_site_prop(n, dt);
        let bare = random_bare(n, prop.weights(), &[(1, 1)], 1.0, seed);
        let oracle = dress_functional_oracle(&bare, &Propagators::broad(prop.clone()), 2, &[vec![1, 1]], DEFAULT_TERM_BUDGET).unwrap();
        let diagrams = dress_by_diagrams(&bare, &prop, &[(1, 1)], 2).unwrap();
        for k in 0..=2 {
            prop_assert!(oracle.cumulants_by_order[k].max_abs_diff(&diagrams[k]) < 1e-12);
        }
    }
}

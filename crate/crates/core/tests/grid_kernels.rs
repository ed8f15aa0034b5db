use std::f64::consts::{PI, TAU};

use causal_lab::battery::{Battery, Spectrum};
use causal_lab::freq;
use causal_lab::grid::{
    apply_kernel_left, apply_kernel_right, contract_kernel, contract_scalar, theta_lag, Signal, SiteSet,
    StationaryKernel, TimeGrid,
};
use causal_lab::kernels::{
    build_plus_kernel, derive_kernel_family, kernel_family, linear_response_probe, verify_contraction_transform,
    verify_wave_quantisation, Band, ModeSet,
};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn unit_grid(n: usize) -> TimeGrid {
    // period 2 pi, so integer frequencies are commensurate
    TimeGrid::new(0.0, TAU / n as f64, n).unwrap()
}

fn two_sites() -> SiteSet {
    SiteSet::new(vec!["a".into(), "b".into()], vec![0.7, 1.3]).unwrap()
}

fn five_broad_modes() -> ModeSet {
    let sites = two_sites();
    let omegas = vec![1.0, 2.0, 3.0, 5.0, 7.0];
    let profiles = Array2::from_shape_fn((5, 2), |(k, x)| C64::from_polar(0.3 + 0.1 * k as f64, 0.4 * (k * (x + 1)) as f64));
    ModeSet::new(Band::Broad, omegas, profiles, sites, 0.0).unwrap()
}

fn five_narrow_modes() -> ModeSet {
    let sites = two_sites();
    let omegas = vec![10.0, 11.0, 9.0, 12.0, 8.0];
    let profiles = Array2::from_shape_fn((5, 2), |(k, x)| C64::from_polar(0.5 - 0.05 * k as f64, 0.3 * (k + 2 * x) as f64));
    ModeSet::new(Band::Narrow, omegas, profiles, sites, 10.0).unwrap()
}

#[test]
fn contract_scalar_zero_and_sampling() {
    let g = unit_grid(32);
    let s = two_sites();
    let mut b = Battery::new(1);
    let f = b.signal(g, &s, Spectrum::Full);
    let z = Signal::zeros(g, s.clone());
    assert_eq!(contract_scalar(&z, &z).unwrap(), c(0.0, 0.0));
    let spike = Signal::spike(g, s, 1, 5);
    let v = contract_scalar(&spike, &f).unwrap();
    assert!((v - f.at(1, 5)).norm() < 1e-13);
}

#[test]
fn contract_scalar_tone_pair_gives_period() {
    // sum_k dt e^{-it} e^{it} = n dt = T
    let g = unit_grid(64);
    let s = SiteSet::single();
    let f = Signal::from_fn(g, s.clone(), |_, t| C64::from_polar(1.0, -t));
    let h = Signal::from_fn(g, s, |_, t| C64::from_polar(1.0, t));
    let v = contract_scalar(&f, &h).unwrap();
    assert!((v - c(g.period(), 0.0)).norm() < 1e-12);
}

#[test]
fn shape_mismatch_is_rejected() {
    let s = SiteSet::single();
    let a = Signal::zeros(unit_grid(8), s.clone());
    let b = Signal::zeros(unit_grid(16), s);
    assert!(contract_scalar(&a, &b).is_err());
    assert!(SiteSet::new(vec!["x".into()], vec![0.0]).is_err());
    assert!(TimeGrid::new(0.0, -1.0, 4).is_err());
}

#[test]
fn identity_kernel_is_neutral() {
    let g = unit_grid(64);
    let s = two_sites();
    let mut b = Battery::new(2);
    let f = b.signal(g, &s, Spectrum::Full);
    let h = b.signal(g, &s, Spectrum::Full);
    let id = StationaryKernel::identity(g, s);
    assert!(apply_kernel_left(&id, &h).unwrap().max_abs_diff(&h) < 1e-12);
    let lhs = contract_kernel(&f, &id, &h).unwrap();
    let rhs = contract_scalar(&f, &h).unwrap();
    assert!((lhs - rhs).norm() < 1e-12 * rhs.norm().max(1.0));
}

#[test]
fn retarded_kernel_between_spikes() {
    // spikes carry weight 1, so fKg = dt^2 * Delta_R(pi/2) = dt^2
    let g = TimeGrid::new(0.0, TAU / 64.0, 64).unwrap();
    let modes = ModeSet::single_site(Band::Broad, vec![1.0], 0.0).unwrap();
    let fam = kernel_family(&modes, g);
    let s = SiteSet::single();
    let mut f = Signal::zeros(g, s.clone());
    let mut h = Signal::zeros(g, s);
    f.values[[0, 20]] = c(1.0, 0.0);
    h.values[[0, 4]] = c(1.0, 0.0);
    let v = contract_kernel(&f, &fam.retarded, &h).unwrap();
    assert!((v - c(g.dt * g.dt * (PI / 2.0).sin(), 0.0)).norm() < 1e-14);
}

#[test]
fn retarded_kernel_applied_to_spike_is_gated_sinusoid() {
    let g = TimeGrid::new(0.0, TAU / 128.0, 128).unwrap();
    let w = 2.0;
    let modes = ModeSet::single_site(Band::Broad, vec![w], 0.0).unwrap();
    let fam = kernel_family(&modes, g);
    let j = 10;
    let spike = Signal::spike(g, SiteSet::single(), 0, j);
    let out = apply_kernel_left(&fam.retarded, &spike).unwrap();
    for k in 0..g.n {
        let lag = (k + g.n - j) % g.n;
        let tau = g.lag_time(lag);
        let expect = theta_lag(lag, g.n) * (w * tau).sin() / w;
        assert!((out.at(0, k) - c(expect, 0.0)).norm() < 1e-12, "k={k}");
    }
}

#[test]
fn right_application_matches_double_sum() {
    let g = TimeGrid::new(0.3, 0.1, 64).unwrap();
    let s = two_sites();
    let mut b = Battery::new(7);
    let k = StationaryKernel::from_fn(g, s.clone(), |x, xp, tau| C64::from_polar(1.0 + x as f64, 0.3 * tau + xp as f64) * (-tau * tau).exp());
    let f = b.signal(g, &s, Spectrum::Full);
    let out = apply_kernel_right(&f, &k).unwrap();
    let n = g.n;
    for x in 0..2 {
        for i in 0..n {
            let mut acc = c(0.0, 0.0);
            for xp in 0..2 {
                for j in 0..n {
                    acc += f.at(xp, j) * k.at(xp, x, (j + n - i) % n) * s.weight(xp) * g.dt;
                }
            }
            assert!((out.at(x, i) - acc).norm() < 1e-12);
        }
    }
}

#[test]
fn symmetric_kernel_left_equals_right() {
    let g = unit_grid(32);
    let s = SiteSet::single();
    let k = StationaryKernel::from_fn(g, s.clone(), |_, _, tau| c((-(tau * tau)).exp(), 0.0));
    let mut b = Battery::new(3);
    let f = b.signal(g, &s, Spectrum::Full);
    let l = apply_kernel_left(&k, &f).unwrap();
    let r = apply_kernel_right(&f, &k).unwrap();
    assert!(l.max_abs_diff(&r) < 1e-12);
}

#[test]
fn quadrature_is_exact_for_band_limited_tones() {
    // int_0^T cos^2(3t) dt = T/2
    let g = unit_grid(16);
    let s = SiteSet::single();
    let f = Signal::from_fn(g, s, |_, t| c((3.0 * t).cos(), 0.0));
    let v = contract_scalar(&f, &f).unwrap();
    assert!((v.re - PI).abs() < 1e-10 * PI);
}

#[test]
fn plus_kernel_closed_forms() {
    let g = unit_grid(32);
    let broad = ModeSet::single_site(Band::Broad, vec![2.0], 0.0).unwrap();
    let p = build_plus_kernel(&broad, g);
    for k in 0..g.n {
        let tau = g.lag_time(k);
        let expect = C64::i() * C64::from_polar(1.0, -2.0 * tau) / 4.0;
        assert!((p.at(0, 0, k) - expect).norm() < 1e-15);
    }
    let narrow = ModeSet::single_site(Band::Narrow, vec![1.0], 1.0).unwrap();
    let p = build_plus_kernel(&narrow, g);
    for k in 0..g.n {
        assert!((p.at(0, 0, k) - c(0.0, 0.5)).norm() < 1e-15);
    }
    let zero = ModeSet::new(Band::Broad, vec![1.0, 2.0], Array2::zeros((2, 2)), two_sites(), 0.0).unwrap();
    assert_eq!(build_plus_kernel(&zero, g).max_abs(), 0.0);
    assert!(ModeSet::single_site(Band::Broad, vec![0.0], 0.0).is_err());
}

#[test]
fn single_mode_retarded_kernel_is_sine() {
    let g = unit_grid(64);
    let w = 3.0;
    let fam = kernel_family(&ModeSet::single_site(Band::Broad, vec![w], 0.0).unwrap(), g);
    for k in 0..g.n {
        let tau = g.lag_time(k);
        let expect = theta_lag(k, g.n) * (w * tau).sin() / w;
        assert!((fam.retarded.at(0, 0, k) - c(expect, 0.0)).norm() < 1e-14);
        if 2 * k > g.n {
            assert_eq!(fam.retarded.at(0, 0, k), c(0.0, 0.0));
        }
    }
}

#[test]
fn narrow_feynman_equals_retarded() {
    let fam = kernel_family(&five_narrow_modes(), unit_grid(32));
    assert_eq!(fam.feynman, fam.retarded);
}

#[test]
fn five_mode_kernel_identities() {
    for n in [32, 64] {
        let g = unit_grid(n);
        let rep = verify_contraction_transform(&kernel_family(&five_broad_modes(), g));
        assert!(rep.passed(), "{rep}");
        let rep = verify_contraction_transform(&kernel_family(&five_narrow_modes(), g));
        assert!(rep.passed(), "{rep}");
    }
}

#[test]
fn offset_grid_keeps_identities() {
    // a shifted time origin leaves every lag-indexed identity untouched
    let g = TimeGrid::new(0.123, TAU / 32.0, 32).unwrap();
    let rep = verify_contraction_transform(&kernel_family(&five_broad_modes(), g));
    assert!(rep.passed(), "{rep}");
}

#[test]
fn plus_kernel_is_frequency_positive() {
    let g = unit_grid(64);
    let p = build_plus_kernel(&five_broad_modes(), g);
    assert!(freq::positive_part_lag(&p).max_abs_diff(&p) < 1e-12);
}

#[test]
fn wave_quantisation_on_oracle() {
    let g = unit_grid(32);
    for hbar in [1.0, 0.5] {
        let rep = verify_wave_quantisation(&ModeSet::single_site(Band::Broad, vec![2.0], 0.0).unwrap(), g, hbar).unwrap();
        assert!(rep.passed(), "{rep}");
        let rep = verify_wave_quantisation(&ModeSet::single_site(Band::Narrow, vec![11.0], 10.0).unwrap(), g, hbar).unwrap();
        assert!(rep.passed(), "{rep}");
    }
}

#[test]
fn orthogonal_profiles_commute_across_sites() {
    let g = unit_grid(16);
    let sites = two_sites();
    let profiles = Array2::from_shape_vec((2, 2), vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
    let modes = ModeSet::new(Band::Broad, vec![1.0, 2.0], profiles, sites, 0.0).unwrap();
    let fam = kernel_family(&modes, g);
    for k in 0..g.n {
        assert_eq!(fam.retarded.at(0, 1, k), c(0.0, 0.0));
    }
    assert!(verify_wave_quantisation(&modes, g, 1.0).unwrap().passed());
}

fn probe_error(n: usize) -> (f64, f64) {
    let g = TimeGrid::new(0.0, 4.0 * TAU / n as f64, n).unwrap();
    let modes = ModeSet::single_site(Band::Broad, vec![1.0], 0.0).unwrap();
    let fam = kernel_family(&modes, g);
    let packet = Signal::from_fn(g, SiteSet::single(), |_, t| c((-(t - 6.0) * (t - 6.0)).exp(), 0.0));
    let probe = linear_response_probe(&modes, &packet, 1.0, 1e-3, 3).unwrap();
    let direct = apply_kernel_left(&fam.retarded, &packet).unwrap();
    // causality: nothing before the packet switches on
    let early = (0..n).filter(|k| g.time(*k) < 1.0).map(|k| probe.at(0, k).norm()).fold(0.0f64, f64::max);
    // the circular kernel only holds memory for half a period after the packet
    let dev = (0..n)
        .filter(|k| g.time(*k) < 14.0)
        .map(|k| (probe.at(0, k) - direct.at(0, k)).norm())
        .fold(0.0f64, f64::max);
    (dev / direct.max_abs(), early)
}

#[test]
fn kubo_probe_reproduces_retarded_kernel() {
    let (coarse, early) = probe_error(128);
    let (fine, _) = probe_error(256);
    assert!(early < 1e-9);
    assert!(fine < 5e-3, "{fine}");
    let ratio = coarse / fine;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    let g = TimeGrid::new(0.0, 0.1, 64).unwrap();
    let modes = ModeSet::single_site(Band::Broad, vec![1.0], 0.0).unwrap();
    let zero = linear_response_probe(&modes, &Signal::zeros(g, SiteSet::single()), 1.0, 1e-3, 3).unwrap();
    assert!(zero.max_abs() < 1e-12);
}

#[test]
fn kubo_probe_spike_gives_retarded_sinusoid() {
    let n = 256;
    let g = TimeGrid::new(0.0, 2.0 * TAU / n as f64, n).unwrap();
    let modes = ModeSet::single_site(Band::Broad, vec![1.0], 0.0).unwrap();
    let j = 20;
    let spike = Signal::spike(g, SiteSet::single(), 0, j);
    let probe = linear_response_probe(&modes, &spike, 1.0, 1e-4, 3).unwrap();
    for k in j + 2..n {
        let tau = g.lag_time(k - j);
        if 2 * (k - j) < n {
            assert!((probe.at(0, k).re - tau.sin()).abs() < 0.05, "k={k}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bilinearity(seed in 0u64..1000, a_re in -2.0f64..2.0, b_im in -2.0f64..2.0) {
        let g = unit_grid(32);
        let s = two_sites();
        let mut bat = Battery::new(seed);
        let f1 = bat.signal(g, &s, Spectrum::Full);
        let f2 = bat.signal(g, &s, Spectrum::Full);
        let h = bat.signal(g, &s, Spectrum::Full);
        let k = kernel_family(&five_broad_modes(), g).feynman;
        let (a, b) = (c(a_re, 0.3), c(0.2, b_im));
        let lhs = contract_kernel(&f1.scale(a).add(&f2.scale(b)), &k, &h).unwrap();
        let rhs = a * contract_kernel(&f1, &k, &h).unwrap() + b * contract_kernel(&f2, &k, &h).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn adjoint_consistency(seed in 0u64..1000) {
        let g = unit_grid(32);
        let s = two_sites();
        let mut bat = Battery::new(seed);
        let f = bat.signal(g, &s, Spectrum::Full);
        let h = bat.signal(g, &s, Spectrum::Full);
        let k = kernel_family(&five_narrow_modes(), g).plus;
        let lhs = contract_scalar(&apply_kernel_right(&f, &k).unwrap(), &h).unwrap();
        let rhs = contract_scalar(&f, &apply_kernel_left(&k, &h).unwrap()).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn derived_family_relations(seed in 0u64..200) {
        let g = unit_grid(32);
        let mut bat = Battery::new(seed);
        let k = 1 + bat.index(3);
        let omegas: Vec<f64> = (0..k).map(|_| 1.0 + bat.index(10) as f64).collect();
        let modes = ModeSet::single_site(Band::Broad, omegas, 0.0).unwrap();
        let fam = derive_kernel_family(&build_plus_kernel(&modes, g), Band::Broad);
        prop_assert!(verify_contraction_transform(&fam).passed());
    }
}

mod common;

use causal_lab::dressing::solution::{broad_mean_field, chain_resummation, BroadArguments};
use causal_lab::dressing::*;
use causal_lab::fock::{expectation_series, extract_bare_cumulants, Device, DeviceState, FockSpace, OpLabel, Source, Sources, Stepping};
use causal_lab::normal::{GaussianModel, Observable};
use common::*;
use num_complex::Complex64 as C64;

const OMEGA_DEV: f64 = 1.7;
const G: f64 = 0.3;

fn oscillator(hbar: f64) -> Device {
    Device::linear_oscillator(OMEGA_DEV, 6, hbar, &[G], &[c(0.0, 0.0)], &DeviceState::Ground).unwrap()
}

fn packet() -> Source {
    Source::new(|_, t| c(0.2 * (-(t - 1.5f64).powi(2) / 0.18).exp(), 0.0))
}

#[test]
fn bare_model_matches_closed_form() {
    let modes = broad_single(1.0);
    let model = GaussianModel::new(&modes, OMEGA_DEV, &[G], 1.0, 0.0).unwrap();
    for tau in [0.0, 0.3, 1.1, 2.5] {
        let r = model.response(Observable::Current(0), Observable::Current(0), tau);
        let expect = G * G * (OMEGA_DEV * tau).sin() / OMEGA_DEV;
        assert!((r - expect).abs() < 1e-12, "tau {tau}");
    }
    assert_eq!(model.response(Observable::Current(0), Observable::Current(0), -0.5), 0.0);
    // Field response to a current source is the retarded kernel.
    for tau in [0.4, 1.9] {
        let r = model.response(Observable::Field(0), Observable::Field(0), tau);
        let k = causal_lab::dressing::cumulants::retarded_broad(&modes, 0, 0, tau);
        assert!((k - tau.sin()).abs() < 1e-14);
        assert!((r - k).abs() < 1e-12);
    }
}

#[test]
fn bare_model_matches_fock_cumulants() {
    for hbar in [1.0, 0.6] {
        let modes = broad_single(1.0);
        let model = GaussianModel::new(&modes, OMEGA_DEV, &[G], hbar, 0.0).unwrap();
        let q = extract_bare_cumulants(&oscillator(hbar), hbar, 0.0, 0.2, 12).unwrap();
        for i in 0..12 {
            for j in 0..=i {
                let r = model.response(Observable::Current(0), Observable::Current(0), 0.2 * (i - j) as f64);
                assert!((q[(i, j)] - c(r, 0.0)).norm() < 1e-9, "{i},{j}");
            }
        }
    }
}

fn chain_error(modes: &causal_lab::kernels::ModeSet, lag: f64, dt: f64) -> f64 {
    let n = (lag / dt).round() as usize + 1;
    let model = GaussianModel::new(modes, OMEGA_DEV, &[G; 2][..modes.sites.len()], 1.0, 1.0).unwrap();
    let bare_model = GaussianModel::new(modes, OMEGA_DEV, &[G; 2][..modes.sites.len()], 1.0, 0.0).unwrap();
    let m = modes.sites.len();
    let np = m * n;
    let mut q = vec![c(0.0, 0.0); np * np];
    for p in 0..np {
        for r in 0..np {
            let tau = (p % n) as f64 * dt - (r % n) as f64 * dt;
            q[p * np + r] = c(bare_model.response(Observable::Current(p / n), Observable::Current(r / n), tau), 0.0);
        }
    }
    let prop = CausalPropagator::broad(modes, n, dt);
    let dressed = chain_resummation(&q, &prop).unwrap();
    let got = dressed[(n - 1) * np];
    let exact = model.response(Observable::Current(0), Observable::Current(0), lag);
    (got.re - exact).abs() + got.im.abs()
}

#[test]
fn chain_resummation_converges_second_order() {
    let modes = broad_pair();
    let lag = 2.0;
    let errs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|dt| chain_error(&modes, lag, *dt)).collect();
    let r1 = errs[0] / errs[1];
    let r2 = errs[1] / errs[2];
    assert!((3.0..5.0).contains(&r1) && (3.0..5.0).contains(&r2), "ratios {r1} {r2}");
}

fn dressed_mean_at(modes: &causal_lab::kernels::ModeSet, hbar: f64, dt: f64, t_end: f64) -> f64 {
    let n = (t_end / dt).round() as usize + 1;
    let dev = oscillator(hbar);
    let q = extract_bare_cumulants(&dev, hbar, 0.0, dt, n).unwrap();
    let qv: Vec<C64> = (0..n * n).map(|i| q[(i / n, i % n)]).collect();
    let prop = CausalPropagator::broad(modes, n, dt);
    let dressed_q = chain_resummation(&qv, &prop).unwrap();
    let mut dressed = CumulantSet::new(CumulantBand::Broad, CumulantKind::Dressed, prop.weights());
    dressed.insert(vec![1, 1], dressed_q).unwrap();
    let src = packet();
    let mut args = BroadArguments::zeros(n);
    args.j_e = (0..n).map(|k| src.at(0, k as f64 * dt)).collect();
    broad_mean_field(&dressed, &prop, &args).unwrap()[n - 1].re
}

fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

#[test]
fn dressed_mean_field_matches_normal_modes() {
    let modes = broad_single(1.0);
    let hbar = 1.0;
    let t_end = 3.0;
    let model = GaussianModel::new(&modes, OMEGA_DEV, &[G], hbar, 1.0).unwrap();
    let src = packet();
    let exact = *model.mean_series(Observable::Field(0), Some(&src), None, 0.0, 0.01, 300).last().unwrap();
    let vals: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|dt| dressed_mean_at(&modes, hbar, *dt, t_end)).collect();
    let e: Vec<f64> = vals.iter().map(|v| (v - exact).abs()).collect();
    let ratio = e[1] / e[2];
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    let extrapolated = richardson(vals[1], vals[2]);
    let rel = (extrapolated - exact).abs() / exact.abs();
    assert!(rel < 1e-6, "relative error {rel:e}");
}

#[test]
fn normal_modes_match_fock_oracle() {
    let modes = broad_single(1.0);
    let hbar = 1.0;
    let t_end = 3.0;
    let model = GaussianModel::new(&modes, OMEGA_DEV, &[G], hbar, 1.0).unwrap();
    let src = packet();
    let exact = *model.mean_series(Observable::Field(0), Some(&src), None, 0.0, 0.01, 300).last().unwrap();
    let space = FockSpace::new(Some(modes.clone()), None, 6, oscillator(hbar), hbar, 1 << 12).unwrap();
    let sources = Sources { j_e: Some(src.clone()), ..Sources::none() };
    let fock = |dt: f64| {
        let steps = (t_end / dt).round() as usize;
        expectation_series(&space, OpLabel::A, 0, &sources, Stepping::new(0.0, dt).unwrap(), steps).unwrap()[steps].re
    };
    let vals: Vec<f64> = [0.05, 0.025].iter().map(|dt| fock(*dt)).collect();
    let rel = (richardson(vals[0], vals[1]) - exact).abs() / exact.abs();
    assert!(rel < 1e-6, "relative error {rel:e}");
}

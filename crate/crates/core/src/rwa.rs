//! Resonance (rotating-wave) bridge between the broad-band and narrow-band
//! descriptions.
//!
//! Envelope maps with carrier `w0`, using the frequency parts of `freq`:
//!
//! ```text
//! field:   E  =  i w0 e^{ i w0 t} A+        E^dag = -i w0 e^{-i w0 t} A-
//! dipole:  D  = -e^{ i w0 t} J+ / (i w0)    D^dag =  e^{-i w0 t} J- / (i w0)
//! ```
//!
//! The field map sends `a_e -> e_e`, the dipole map `j_e -> d_e`. Response
//! variables map as `mu = e^{i w0 t} eta+ / (i w0)`, `mu* = e^{-i w0 t} eta- / (i w0)`,
//! `nu = -i w0 e^{i w0 t} zeta+`, `nu* = -i w0 e^{-i w0 t} zeta-`.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::battery::{Battery, Spectrum};
use crate::error::{LabError, Result};
use crate::fft;
use crate::fock::{expectation_series, expectation_series_with, FockSpace, OpLabel, Source, Sources, Stepping};
use crate::freq::{frequency_pairing, negative_part, positive_part};
use crate::grid::{contract_kernel, contract_scalar, Signal, SiteSet, StationaryKernel, TimeGrid};
use crate::kernels::{kernel_family, Band, ModeSet};
use crate::dressing::FunctionalPoly;
use crate::report::Report;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqPart {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvelopeKind {
    /// Potential to field envelope (`A -> E`, `a_e -> e_e`).
    Field,
    /// Current to dipole envelope (`J -> D`, `j_e -> d_e`).
    Dipole,
}

/// Slow amplitude and its adjoint partner.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelopes {
    pub amplitude: Signal,
    pub adjoint: Signal,
}

fn check_carrier(grid: &TimeGrid, omega0: f64) -> Result<()> {
    if !(omega0 > 0.0) || !omega0.is_finite() {
        return Err(LabError::Invalid(format!("carrier frequency must be positive, got {omega0}")));
    }
    let nyquist = std::f64::consts::PI / grid.dt;
    if omega0 >= nyquist {
        return Err(LabError::Invalid(format!("carrier {omega0} is not resolved below the grid Nyquist frequency {nyquist}")));
    }
    Ok(())
}

fn rotate(f: &Signal, c: C64, sign: f64, omega0: f64) -> Signal {
    f.modulate(|t| c * C64::from_polar(1.0, sign * omega0 * t))
}

/// Envelope pair of a broad signal.
pub fn envelope_extract(f: &Signal, omega0: f64, kind: EnvelopeKind) -> Result<Envelopes> {
    check_carrier(&f.grid, omega0)?;
    let (p, m) = (positive_part(f), negative_part(f));
    let io = I * omega0;
    Ok(match kind {
        EnvelopeKind::Field => Envelopes { amplitude: rotate(&p, io, 1.0, omega0), adjoint: rotate(&m, -io, -1.0, omega0) },
        EnvelopeKind::Dipole => Envelopes { amplitude: rotate(&p, -1.0 / io, 1.0, omega0), adjoint: rotate(&m, 1.0 / io, -1.0, omega0) },
    })
}

/// Inverse of [`envelope_extract`]: the broad signal rebuilt from the pair.
pub fn envelope_reconstruct(env: &Envelopes, omega0: f64, kind: EnvelopeKind) -> Result<Signal> {
    env.amplitude.check_compatible(&env.adjoint)?;
    check_carrier(&env.amplitude.grid, omega0)?;
    let io = I * omega0;
    let (ca, cb) = match kind {
        EnvelopeKind::Field => (1.0 / io, -1.0 / io),
        EnvelopeKind::Dipole => (-io, io),
    };
    Ok(rotate(&env.amplitude, ca, -1.0, omega0).add(&rotate(&env.adjoint, cb, 1.0, omega0)))
}

/// Largest mismatch `|w0 / w_k - 1|` between the envelope prefactor `w0`
/// and the mode prefactor `w_k` of the field map.
pub fn mode_envelope_defect(modes: &ModeSet) -> f64 {
    modes.omegas.iter().fold(0.0f64, |a, w| a.max((modes.omega0 / w - 1.0).abs()))
}

/// Classical fields of coherent mode amplitudes `c_k` at site `x`: the
/// broad potential `sum sqrt(hbar/2w) u c e^{-iwt} + c.c.` and the narrow
/// envelope `sum i sqrt(hbar w/2) u c e^{-i(w-w0)t}`.
pub fn coherent_fields(modes: &ModeSet, amplitudes: &[C64], grid: TimeGrid, hbar: f64) -> Result<(Signal, Signal)> {
    if amplitudes.len() != modes.len() {
        return Err(LabError::Shape(format!("{} amplitudes for {} modes", amplitudes.len(), modes.len())));
    }
    let a = Signal::from_fn(grid, modes.sites.clone(), |x, t| {
        let s: C64 = (0..modes.len())
            .map(|k| modes.u(k, x) * amplitudes[k] * C64::from_polar((hbar / (2.0 * modes.omegas[k])).sqrt(), -modes.omegas[k] * t))
            .sum();
        C64::new(2.0 * s.re, 0.0)
    });
    let e = Signal::from_fn(grid, modes.sites.clone(), |x, t| {
        (0..modes.len())
            .map(|k| {
                I * modes.u(k, x) * amplitudes[k] * C64::from_polar((hbar * modes.omegas[k] / 2.0).sqrt(), -(modes.omegas[k] - modes.omega0) * t)
            })
            .sum()
    });
    Ok((a, e))
}

/// Spectral power with `||w| - w0| > w0 / 2`, relative to the total.
pub fn out_of_band_fraction(f: &Signal, omega0: f64) -> f64 {
    let n = f.n();
    let period = f.grid.period();
    let (mut out, mut all) = (0.0, 0.0);
    for x in 0..f.m() {
        let spec = fft::forward(&f.values.row(x).to_vec());
        for (k, v) in spec.iter().enumerate() {
            let p = v.norm_sqr();
            all += p;
            if (fft::bin_frequency(k, n, period).abs() - omega0).abs() > 0.5 * omega0 {
                out += p;
            }
        }
    }
    if all == 0.0 {
        0.0
    } else {
        out / all
    }
}

/// Absolute and relative deviations between two sides of an approximate
/// identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deviation {
    pub max_abs: f64,
    pub max_rel: f64,
    pub l2_rel: f64,
}

impl Deviation {
    fn from_pairs(pairs: impl Iterator<Item = (C64, C64)>) -> Self {
        let (mut max_abs, mut max_lhs, mut d2, mut l2) = (0.0f64, 0.0f64, 0.0, 0.0);
        for (a, b) in pairs {
            let d = (a - b).norm();
            max_abs = max_abs.max(d);
            max_lhs = max_lhs.max(a.norm());
            d2 += d * d;
            l2 += a.norm_sqr();
        }
        let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
        Self { max_abs, max_rel: rel(max_abs, max_lhs), l2_rel: rel(d2.sqrt(), l2.sqrt()) }
    }
}

/// `(1/w0^2) [e^{-i w0 tau} G_R + e^{i w0 tau} G_R*]`.
pub fn rwa_kernel_rhs(g_r: &StationaryKernel, omega0: f64) -> StationaryKernel {
    let w2 = omega0 * omega0;
    let a = g_r.modulate_lag(|tau| C64::from_polar(1.0 / w2, -omega0 * tau));
    let b = g_r.conj().modulate_lag(|tau| C64::from_polar(1.0 / w2, omega0 * tau));
    a.add(&b)
}

/// Broad retarded kernel against its resonance form built from the narrow
/// retarded kernel, over every site pair and lag. The half-period lag, where
/// the circular lags `+T/2` and `-T/2` coincide, is left out.
pub fn rwa_kernel_compare(delta_r: &StationaryKernel, g_r: &StationaryKernel, omega0: f64) -> Result<Deviation> {
    if !delta_r.grid.same_as(&g_r.grid) || delta_r.sites != g_r.sites {
        return Err(LabError::Shape("kernels live on different grids or site sets".into()));
    }
    check_carrier(&delta_r.grid, omega0)?;
    let rhs = rwa_kernel_rhs(g_r, omega0);
    let n = delta_r.n();
    let pairs = delta_r
        .values
        .indexed_iter()
        .filter(|((_, _, k), _)| 2 * k != n)
        .map(|((x, xp, k), v)| (*v, rhs.values[[x, xp, k]]));
    Ok(Deviation::from_pairs(pairs))
}

/// Broad and narrow copies of a mode set with shared frequencies, profiles
/// and carrier.
pub fn resonant_pair(modes: &ModeSet) -> Result<(ModeSet, ModeSet)> {
    let broad = ModeSet::new(Band::Broad, modes.omegas.clone(), modes.profiles.clone(), modes.sites.clone(), modes.omega0)?;
    let narrow = ModeSet::new(Band::Narrow, modes.omegas.clone(), modes.profiles.clone(), modes.sites.clone(), modes.omega0)?;
    Ok((broad, narrow))
}

/// `count` modes at `w0 (1 + ratio s)`, `s` evenly spread over `[-1, 1]`,
/// unit profile at a single site; the bandwidth ratio is `ratio`.
pub fn resonant_modes(band: Band, omega0: f64, ratio: f64, count: usize) -> Result<ModeSet> {
    if count == 0 {
        return Err(LabError::Invalid("need at least one mode".into()));
    }
    let omegas = (0..count)
        .map(|k| {
            let s = if count == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (count - 1) as f64 };
            omega0 * (1.0 + ratio * s)
        })
        .collect();
    ModeSet::single_site(band, omegas, omega0)
}

/// Both sides of a resonance bilinear identity.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearReport {
    pub broad: C64,
    pub narrow: C64,
    pub deviation: f64,
    pub relative: f64,
    /// Largest out-of-band power fraction among the arguments.
    pub out_of_band: f64,
    pub warning: Option<String>,
}

/// Out-of-band power above which the arguments count as not band-limited.
pub const BAND_LIMIT_TOLERANCE: f64 = 1e-6;

impl BilinearReport {
    fn new(broad: C64, narrow: C64, args: &[&Signal], omega0: f64) -> Self {
        let deviation = (broad - narrow).norm();
        let relative = if broad.norm() > 0.0 { deviation / broad.norm() } else { deviation };
        let out_of_band = args.iter().fold(0.0f64, |a, s| a.max(out_of_band_fraction(s, omega0)));
        let warning = (out_of_band > BAND_LIMIT_TOLERANCE)
            .then(|| format!("arguments are not band-limited near the carrier: out-of-band power fraction {out_of_band:.3e}"));
        Self { broad, narrow, deviation, relative, out_of_band, warning }
    }
}

/// `eta Delta_R j_e` against `mu* G_R d_e - mu G_R* d_e*`, with `(mu, d_e)`
/// obtained from `(eta, j_e)` by the envelope maps.
pub fn rwa_bilinear_compare(
    eta: &Signal,
    j_e: &Signal,
    delta_r: &StationaryKernel,
    g_r: &StationaryKernel,
    omega0: f64,
) -> Result<BilinearReport> {
    eta.check_compatible(j_e)?;
    let broad = contract_kernel(eta, delta_r, j_e)?;
    let io = I * omega0;
    let mu = rotate(&positive_part(eta), 1.0 / io, 1.0, omega0);
    let mu_star = rotate(&negative_part(eta), 1.0 / io, -1.0, omega0);
    let d = envelope_extract(j_e, omega0, EnvelopeKind::Dipole)?;
    let narrow = contract_kernel(&mu_star, g_r, &d.amplitude)? - contract_kernel(&mu, &g_r.conj(), &d.adjoint)?;
    Ok(BilinearReport::new(broad, narrow, &[eta, j_e], omega0))
}

/// Constrained derivative of a gradient signal: `d/df+ = [d/df]^(-)`,
/// `d/df- = [d/df]^(+)`.
pub fn constrained_gradient(grad: &Signal, by: FreqPart) -> Signal {
    match by {
        FreqPart::Positive => negative_part(grad),
        FreqPart::Negative => positive_part(grad),
    }
}

/// The operator `d/da_e Delta_R d/dzeta` against
/// `d/de_e G_R d/dnu* - d/de_e* G_R* d/dnu`, both applied to the bilinear
/// functional `(f a_e)(g zeta)`. The narrow derivatives come from the
/// constrained derivatives by the frequency parts through the envelope maps.
pub fn rwa_derivative_compare(
    f: &Signal,
    g: &Signal,
    delta_r: &StationaryKernel,
    g_r: &StationaryKernel,
    omega0: f64,
) -> Result<BilinearReport> {
    f.check_compatible(g)?;
    check_carrier(&f.grid, omega0)?;
    let broad = contract_kernel(f, delta_r, g)?;
    let io = I * omega0;
    // a+ = e^{-i w0 t} e_e / (i w0), a- = -e^{i w0 t} e_e* / (i w0)
    let by_e = rotate(&constrained_gradient(f, FreqPart::Positive), 1.0 / io, -1.0, omega0);
    let by_e_star = rotate(&constrained_gradient(f, FreqPart::Negative), -1.0 / io, 1.0, omega0);
    // zeta+ = -e^{-i w0 t} nu / (i w0), zeta- = -e^{i w0 t} nu* / (i w0)
    let by_nu = rotate(&constrained_gradient(g, FreqPart::Positive), -1.0 / io, -1.0, omega0);
    let by_nu_star = rotate(&constrained_gradient(g, FreqPart::Negative), -1.0 / io, 1.0, omega0);
    let narrow = contract_kernel(&by_e, g_r, &by_nu_star)? - contract_kernel(&by_e_star, &g_r.conj(), &by_nu)?;
    Ok(BilinearReport::new(broad, narrow, &[f, g], omega0))
}

fn scaled_deviation(lhs: C64, rhs: C64) -> f64 {
    (lhs - rhs).norm() / lhs.norm().max(1.0)
}

/// Exact counter-rotating cancellations on seeded band-limited random
/// signals: the deviations are rounding-level on the grid.
pub fn counter_rotating_report(grid: TimeGrid, sites: &SiteSet, omega0: f64, hbar: f64, seed: u64, samples: usize) -> Result<Report> {
    check_carrier(&grid, omega0)?;
    let mut battery = Battery::new(seed);
    let mut worst = [0.0f64; 7];
    for _ in 0..samples {
        let mut draw = || battery.signal(grid, sites, Spectrum::NoEdges);
        let (f, g) = (draw(), draw());
        let (a, j, a_e, j_e) = (draw(), draw(), draw(), draw());
        let (eta, zeta) = (draw(), draw());
        let (a_plus, a_minus, j_plus, j_minus) = (draw(), draw(), draw(), draw());

        let (fp, fm, gp, gm) = (positive_part(&f), negative_part(&f), positive_part(&g), negative_part(&g));
        let annihilation = contract_scalar(&fp, &gp)?.norm().max(contract_scalar(&fm, &gm)?.norm());
        worst[0] = worst[0].max(annihilation / f.max_abs().max(1.0) / g.max_abs().max(1.0));
        worst[1] = worst[1].max(scaled_deviation(contract_scalar(&f, &g)?, frequency_pairing(&f, &g)?));
        worst[2] = worst[2].max(contract_scalar(&fp, &gm.conj())?.norm() / f.max_abs().max(1.0) / g.max_abs().max(1.0));

        let field = |s: &Signal| envelope_extract(s, omega0, EnvelopeKind::Field);
        let dipole = |s: &Signal| envelope_extract(s, omega0, EnvelopeKind::Dipole);
        let (e, ee) = (field(&a)?, field(&a_e)?);
        let (d, de) = (dipole(&j)?, dipole(&j_e)?);
        let lhs = contract_scalar(&a, &j)? + contract_scalar(&a_e, &j)? + contract_scalar(&a, &j_e)?;
        let rhs = contract_scalar(&e.amplitude, &d.adjoint)?
            + contract_scalar(&ee.amplitude, &d.adjoint)?
            + contract_scalar(&e.amplitude, &de.adjoint)?
            + contract_scalar(&e.adjoint, &d.amplitude)?
            + contract_scalar(&ee.adjoint, &d.amplitude)?
            + contract_scalar(&e.adjoint, &de.amplitude)?;
        worst[3] = worst[3].max(scaled_deviation(lhs, rhs));

        // eta_pm A_pm and zeta_pm J_pm in causal variables.
        let source = j_e.scale(C64::new(1.0 / hbar, 0.0));
        let eta_p = source.add(&negative_part(&eta));
        let eta_m = source.sub(&positive_part(&eta));
        let lhs = contract_scalar(&eta_p, &a_plus)? - contract_scalar(&eta_m, &a_minus)?;
        let io = I * omega0;
        let (ep, em) = (field(&a_plus)?, field(&a_minus)?);
        let coeff = |s: &Signal, sign: f64| rotate(s, 1.0 / io, sign, omega0);
        let explicit = contract_scalar(&coeff(&negative_part(&eta).add(&negative_part(&j_e).scale((1.0 / hbar).into())), -1.0), &ep.amplitude)?
            - contract_scalar(&coeff(&positive_part(&j_e).scale((1.0 / hbar).into()), 1.0), &ep.adjoint)?
            - contract_scalar(&coeff(&negative_part(&j_e).scale((1.0 / hbar).into()), -1.0), &em.amplitude)?
            + contract_scalar(&coeff(&positive_part(&j_e).scale((1.0 / hbar).into()).sub(&positive_part(&eta)), 1.0), &em.adjoint)?;
        worst[4] = worst[4].max(scaled_deviation(lhs, explicit));

        let mu = coeff(&positive_part(&eta), 1.0);
        let mu_star = coeff(&negative_part(&eta), -1.0);
        let s = C64::new(1.0 / hbar, 0.0);
        let combined = contract_scalar(&mu_star, &ep.amplitude)? - contract_scalar(&mu, &em.adjoint)?
            + contract_scalar(&de.adjoint, &ep.amplitude.sub(&em.amplitude))? * s
            + contract_scalar(&de.amplitude, &ep.adjoint.sub(&em.adjoint))? * s;
        worst[5] = worst[5].max(scaled_deviation(lhs, combined));

        let zeta_p = a_e.scale(s).add(&negative_part(&zeta));
        let zeta_m = a_e.scale(s).sub(&positive_part(&zeta));
        let lhs = contract_scalar(&zeta_p, &j_plus)? - contract_scalar(&zeta_m, &j_minus)?;
        let (dp, dm) = (dipole(&j_plus)?, dipole(&j_minus)?);
        let nu = rotate(&positive_part(&zeta), -io, 1.0, omega0);
        let nu_star = rotate(&negative_part(&zeta), -io, -1.0, omega0);
        let combined = contract_scalar(&nu_star, &dp.amplitude)? - contract_scalar(&nu, &dm.adjoint)?
            + contract_scalar(&ee.adjoint, &dp.amplitude.sub(&dm.amplitude))? * s
            + contract_scalar(&ee.amplitude, &dp.adjoint.sub(&dm.adjoint))? * s;
        worst[6] = worst[6].max(scaled_deviation(lhs, combined));
    }
    let tol = 1e-12;
    let mut rep = Report::new();
    let names = [
        "counter-rotating annihilation",
        "time-frequency pairing",
        "frequency-part orthogonality",
        "coupling envelope split",
        "source envelope split, explicit",
        "source envelope split, field form",
        "source envelope split, dipole form",
    ];
    for (name, d) in names.iter().zip(worst) {
        rep.push(*name, d, tol);
    }
    Ok(rep)
}

/// Circulant row of the frequency-part projector: `(P f)_t = sum_k p[(t-k) mod n] f_k`.
pub fn projector_row(n: usize, part: FreqPart) -> Vec<C64> {
    let spec: Vec<C64> = (0..n)
        .map(|k| {
            let w = fft::positive_weight(k, n);
            C64::new(if part == FreqPart::Positive { w } else { 1.0 - w }, 0.0)
        })
        .collect();
    fft::inverse(&spec)
}

/// `dF/df(t_k) = (1/dt) dF/df_k` for a polynomial in the samples `f_k`
/// (variable `k`) of a single-site field on `grid`.
pub fn functional_derivative(f: &FunctionalPoly, grid: TimeGrid) -> Vec<FunctionalPoly> {
    let s = C64::new(1.0 / grid.dt, 0.0);
    (0..grid.n).into_par_iter().map(|k| f.derivative(k).scale(s)).collect()
}

/// Derivative by the frequency part `by` of the field: the functional
/// derivative projected on the opposite part along its free time argument.
pub fn constrained_derivative(f: &FunctionalPoly, grid: TimeGrid, by: FreqPart) -> Vec<FunctionalPoly> {
    let n = grid.n;
    let grad = functional_derivative(f, grid);
    let part = match by {
        FreqPart::Positive => FreqPart::Negative,
        FreqPart::Negative => FreqPart::Positive,
    };
    let row = projector_row(n, part);
    (0..n)
        .into_par_iter()
        .map(|t| {
            let mut acc = FunctionalPoly::zero();
            for (k, g) in grad.iter().enumerate() {
                let p = row[(t + n - k) % n];
                if p.norm() > 0.0 {
                    for (m, c) in &g.terms {
                        acc.add_term(*m, c * p);
                    }
                }
            }
            acc
        })
        .collect()
}

/// Scan of a deviation against the bandwidth ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Scan {
    /// Least-squares slope of `log(error)` against `log(ratio)`.
    pub fn slope(&self) -> f64 {
        log_log_slope(&self.points)
    }

    /// Two-column table `ratio error`.
    pub fn table(&self) -> String {
        let mut s = format!("# {}\n# bandwidth_ratio error\n", self.label);
        for (r, e) in &self.points {
            s.push_str(&format!("{r:.17e} {e:.17e}\n"));
        }
        s
    }
}

pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Evaluates `error(ratio)` at every ratio in parallel.
pub fn bandwidth_scan(label: &str, ratios: &[f64], error: impl Fn(f64) -> Result<f64> + Sync) -> Result<Scan> {
    let points = ratios.par_iter().map(|r| error(*r).map(|e| (*r, e))).collect::<Result<Vec<_>>>()?;
    Ok(Scan { label: label.to_string(), points })
}

/// `count` evenly spaced ratios from `lo` to `hi` on a log scale.
pub fn log_ratios(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    (0..count).map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64)).collect()
}

/// Settings shared by the bandwidth scans.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanSettings {
    pub omega0: f64,
    pub modes: usize,
    pub samples_per_cycle: usize,
    pub hbar: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self { omega0: 5.0, modes: 5, samples_per_cycle: 16, hbar: 1.0 }
    }
}

impl ScanSettings {
    /// Packet width matched to the mode band.
    fn sigma(&self, ratio: f64) -> f64 {
        2.0 / (ratio * self.omega0)
    }

    /// Grid long enough that packets separated by a few widths never wrap.
    fn grid(&self, ratio: f64) -> Result<TimeGrid> {
        let dt = std::f64::consts::TAU / (self.omega0 * self.samples_per_cycle as f64);
        let n = ((24.0 * self.sigma(ratio) / dt).ceil() as usize).next_multiple_of(2);
        TimeGrid::new(0.0, dt, n)
    }

    fn kernels(&self, ratio: f64, grid: TimeGrid) -> Result<(StationaryKernel, StationaryKernel)> {
        let modes = resonant_modes(Band::Broad, self.omega0, ratio, self.modes)?;
        let (broad, narrow) = resonant_pair(&modes)?;
        Ok((kernel_family(&broad, grid).retarded, kernel_family(&narrow, grid).retarded))
    }

    fn packet(&self, grid: TimeGrid, sigma: f64, centre: f64, phase: f64, scale: C64) -> Signal {
        let w0 = self.omega0;
        Signal::from_fn(grid, SiteSet::single(), move |_, t| {
            let env = (-(t - centre).powi(2) / (2.0 * sigma * sigma)).exp();
            scale * env * (w0 * t + phase).cos()
        })
    }
}

/// Relative deviation of the retarded-kernel resonance form.
pub fn kernel_scan_point(settings: &ScanSettings, ratio: f64) -> Result<f64> {
    let grid = settings.grid(ratio)?;
    let (d, g) = settings.kernels(ratio, grid)?;
    Ok(rwa_kernel_compare(&d, &g, settings.omega0)?.max_rel)
}

const PHASES: [(f64, f64); 3] = [(0.0, 0.4), (1.1, -0.7), (2.3, 1.9)];

fn packet_pairs(settings: &ScanSettings, ratio: f64, grid: TimeGrid) -> Vec<(Signal, Signal)> {
    let sigma = settings.sigma(ratio);
    let source_centre = 6.0 * sigma;
    PHASES
        .iter()
        .map(|(pa, pb)| {
            let late = settings.packet(grid, sigma, source_centre + sigma, *pa, I);
            let early = settings.packet(grid, sigma, source_centre, *pb, C64::new(1.0, 0.0));
            (late, early)
        })
        .collect()
}

fn pooled(reports: &[BilinearReport]) -> f64 {
    let num: f64 = reports.iter().map(|r| r.deviation.powi(2)).sum();
    let den: f64 = reports.iter().map(|r| r.broad.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Pooled relative deviation of the resonance bilinear form on packets
/// matched to the mode band.
pub fn bilinear_scan_point(settings: &ScanSettings, ratio: f64) -> Result<f64> {
    let grid = settings.grid(ratio)?;
    let (d, g) = settings.kernels(ratio, grid)?;
    let reports = packet_pairs(settings, ratio, grid)
        .iter()
        .map(|(eta, j)| rwa_bilinear_compare(eta, j, &d, &g, settings.omega0))
        .collect::<Result<Vec<_>>>()?;
    Ok(pooled(&reports))
}

/// Pooled relative deviation of the resonance form of the dressing operator.
pub fn derivative_scan_point(settings: &ScanSettings, ratio: f64) -> Result<f64> {
    let grid = settings.grid(ratio)?;
    let (d, g) = settings.kernels(ratio, grid)?;
    let reports = packet_pairs(settings, ratio, grid)
        .iter()
        .map(|(f, h)| rwa_derivative_compare(f, h, &d, &g, settings.omega0))
        .collect::<Result<Vec<_>>>()?;
    Ok(pooled(&reports))
}

/// Relative mismatch of the narrow envelope of coherent mode amplitudes and
/// the envelope extracted from the broad potential.
pub fn envelope_scan_point(settings: &ScanSettings, ratio: f64) -> Result<f64> {
    let w0 = settings.omega0;
    // Enough carrier cycles that every mode lands on a lattice frequency.
    let cycles = (40.0 / ratio).ceil() as usize;
    let grid = TimeGrid::commensurate(w0, cycles, cycles * settings.samples_per_cycle)?;
    let step = grid.frequency_step();
    let spread = resonant_modes(Band::Broad, w0, ratio, settings.modes)?;
    let omegas = spread.omegas.iter().map(|w| (w / step).round() * step).collect();
    let modes = ModeSet::single_site(Band::Broad, omegas, w0)?;
    let amplitudes: Vec<C64> = (0..modes.len()).map(|k| C64::from_polar(1.0, 0.7 * k as f64)).collect();
    let (a, e) = coherent_fields(&modes, &amplitudes, grid, settings.hbar)?;
    let env = envelope_extract(&a, w0, EnvelopeKind::Field)?;
    Ok(env.amplitude.max_abs_diff(&e) / e.max_abs())
}

/// Heisenberg-level envelope relation on the Fock oracle: a broad field
/// driven by a current packet against the narrow field driven by the mapped
/// dipole source; compares `<E(t)>` with `i w0 e^{i w0 t} <A+(t)>`.
pub fn heisenberg_envelope_point(settings: &ScanSettings, ratio: f64, amplitude: f64, dt: f64) -> Result<f64> {
    let w0 = settings.omega0;
    let hbar = settings.hbar;
    let modes = resonant_modes(Band::Broad, w0, ratio, 3)?;
    let (broad, narrow) = resonant_pair(&modes)?;
    let sigma = settings.sigma(ratio);
    let centre = 4.0 * sigma;
    let t_end = centre + 3.0 * sigma;
    let current = move |t: f64| amplitude * (-(t - centre).powi(2) / (2.0 * sigma * sigma)).exp() * (w0 * t).cos();

    // The dipole source from a long periodic sampling of the current.
    let fine = TimeGrid::new(0.0, dt, ((2.0 * t_end / dt).ceil() as usize).next_multiple_of(2))?;
    let j_sig = Signal::from_fn(fine, SiteSet::single(), |_, t| C64::new(current(t), 0.0));
    let d_e = envelope_extract(&j_sig, w0, EnvelopeKind::Dipole)?.amplitude;

    let steps = (t_end / dt).round() as usize;
    let stepping = Stepping::new(0.0, dt)?;
    let cutoff = 2;
    let broad_space = FockSpace::field_only(Some(broad.clone()), None, cutoff, hbar)?;
    let narrow_space = FockSpace::field_only(None, Some(narrow), cutoff, hbar)?;
    let lowering: Vec<_> = (0..broad.len()).map(|k| broad_space.lowering_op(k)).collect();
    let positive_a = |t: f64| -> Result<crate::fock::CMat> {
        let mut op = crate::fock::CMat::zeros(broad_space.dim(), broad_space.dim());
        for (k, l) in lowering.iter().enumerate() {
            let w = broad.omegas[k];
            op += l * (broad.u(k, 0) * C64::from_polar((hbar / (2.0 * w)).sqrt(), -w * t));
        }
        Ok(op)
    };
    let j_source = Sources { j_e: Some(Source::new(move |_, t| C64::new(current(t), 0.0))), ..Sources::none() };
    let d_source = Sources { d_e: Some(Source::interpolated(&d_e)), ..Sources::none() };
    let (a_plus, e_env) = rayon::join(
        || expectation_series_with(&broad_space, positive_a, &j_source, stepping, steps),
        || expectation_series(&narrow_space, OpLabel::E, 0, &d_source, stepping, steps),
    );
    let (a_plus, e_env) = (a_plus?, e_env?);
    let pairs = (0..=steps).map(|k| {
        let t = stepping.time(k);
        (e_env[k], I * w0 * C64::from_polar(1.0, w0 * t) * a_plus[k])
    });
    Ok(Deviation::from_pairs(pairs).max_rel)
}

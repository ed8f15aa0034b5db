//! Verification suites shared by the command line and the acceptance run.
//! Each suite returns a [`Report`] of named deviations with their tolerances.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::battery::{Battery, Spectrum};
use crate::dressing::cumulants::{tuples, CausalPropagator, CumulantBand, CumulantKind, CumulantSet, Propagators};
use crate::dressing::diagrams::{dress_by_diagrams, enumerate_diagrams, Diagram};
use crate::dressing::mean_field::{mean_field_identity, MeanFieldRun};
use crate::dressing::oracle::{dress_functional_oracle, OracleOutput};
use crate::dressing::solution::{broad_mean_field, chain_resummation, resplit_defect, BroadArguments};
use crate::error::{LabError, Result};
use crate::fock::{
    expectation_series, extract_bare_cumulants, tc_ordered_vev, verify_smatrix_identity, Branch, Device, FockSpace, OpLabel,
    OrderedFactor, Source, Sources, Stepping,
};
use crate::freq::{frequency_pairing, negative_part, positive_part};
use crate::grid::{contract_scalar, Signal, SiteSet, TimeGrid};
use crate::kernels::{kernel_family, verify_contraction_transform, verify_wave_quantisation, Band, KernelFamily, ModeSet};
use crate::normal::{GaussianModel, Observable};
use crate::report::Report;
use crate::response::{
    broad_invert, broad_substitute, narrow_invert, narrow_substitute, transform_reordering_form, NarrowCausal, PhaseSpace,
};
use crate::rwa::{
    bandwidth_scan, bilinear_scan_point, derivative_scan_point, envelope_scan_point, heisenberg_envelope_point,
    kernel_scan_point, log_ratios, Scan, ScanSettings,
};
use crate::wick::{broad_vacuum_two_ways, vacuum_functional, wick_pairing_vev, Contractions, Representation, VacuumArguments};

/// Allowed relative spread of a dt-halving error ratio around 4.
pub const HALVING_TOLERANCE: f64 = 0.25;
/// Allowed distance of a log-log bandwidth slope from 1.
pub const SLOPE_TOLERANCE: f64 = 0.2;

/// One check per consecutive pair of `errors`: `|e_i / e_{i+1} / 4 - 1|`.
pub fn push_halving(rep: &mut Report, name: &str, errors: &[f64]) {
    for (i, w) in errors.windows(2).enumerate() {
        rep.push(format!("{name}: dt-halving ratio {}", i + 1), (w[0] / w[1] / 4.0 - 1.0).abs(), HALVING_TOLERANCE);
    }
}

/// `(4 fine - coarse) / 3`.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

fn band_tag(modes: &ModeSet) -> String {
    format!("[{}] ", modes.band.tag())
}

/// Construction relations and contraction transforms of every mode set on
/// `grid`, and the oracle wave quantisation at each `hbar`.
pub fn kernel_suite(sets: &[ModeSet], grid: TimeGrid, hbars: &[f64]) -> Result<Report> {
    let mut rep = Report::new();
    for modes in sets {
        let tag = band_tag(modes);
        rep.extend(verify_contraction_transform(&kernel_family(modes, grid)).prefixed(&tag));
        for &hbar in hbars {
            rep.extend(verify_wave_quantisation(modes, grid, hbar)?.prefixed(&format!("{tag}hbar {hbar}: ")));
        }
    }
    Ok(rep)
}

/// Projector identities on `count` seeded signals. Completeness and the
/// pairing use every bin; the other checks use signals without DC and
/// Nyquist content, where the projectors are exact.
pub fn frequency_split_suite(grid: TimeGrid, sites: &SiteSet, seed: u64, count: usize) -> Result<Report> {
    let mut b = Battery::new(seed);
    let mut dev = [0.0f64; 5];
    for _ in 0..count {
        let f = b.signal(grid, sites, Spectrum::Full);
        let h = b.signal(grid, sites, Spectrum::Full);
        dev[0] = dev[0].max(positive_part(&f).add(&negative_part(&f)).max_abs_diff(&f));
        dev[4] = dev[4].max((contract_scalar(&f, &h)? - frequency_pairing(&f, &h)?).norm());

        let f = b.signal(grid, sites, Spectrum::NoEdges);
        let h = b.signal(grid, sites, Spectrum::NoEdges);
        let (fp, fm) = (positive_part(&f), negative_part(&f));
        let (hp, hm) = (positive_part(&h), negative_part(&h));
        dev[1] = dev[1].max(positive_part(&fp).max_abs_diff(&fp)).max(negative_part(&fm).max_abs_diff(&fm));
        dev[2] = dev[2].max(contract_scalar(&fp, &hm.conj())?.norm()).max(contract_scalar(&fm, &hp.conj())?.norm());
        dev[3] = dev[3].max(contract_scalar(&fp, &hp)?.norm()).max(contract_scalar(&fm, &hm)?.norm());
    }
    let mut rep = Report::new();
    rep.push("completeness", dev[0], 1e-12);
    rep.push("idempotence", dev[1], 1e-12);
    rep.push("orthogonality", dev[2], 1e-12);
    rep.push("counter-rotating annihilation", dev[3], 1e-12);
    rep.push("frequency-domain pairing", dev[4], 1e-12);
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WickSettings {
    /// Random placements of the factors per factor count.
    pub placements: usize,
    pub max_factors: usize,
    pub seed: u64,
}

fn field_space(modes: &ModeSet, cutoff: usize, hbar: f64) -> Result<FockSpace> {
    match modes.band {
        Band::Broad => FockSpace::field_only(Some(modes.clone()), None, cutoff, hbar),
        Band::Narrow => FockSpace::field_only(None, Some(modes.clone()), cutoff, hbar),
    }
}

/// Pairing sum against the oracle time-loop expectation for every branch
/// pattern of `1..=max_factors` field factors at seeded placements inside
/// half a period. The oracle cutoff is `max_factors / 2`, which is exact
/// for vacuum expectations of that many field factors.
pub fn wick_suite(sets: &[ModeSet], grid: TimeGrid, hbar: f64, s: &WickSettings) -> Result<Report> {
    if s.max_factors > crate::wick::MAX_FACTORS {
        return Err(LabError::Budget(format!("{} factors exceed the pairing limit {}", s.max_factors, crate::wick::MAX_FACTORS)));
    }
    if 2 * s.max_factors > grid.n {
        return Err(LabError::Invalid(format!("{} factors need a grid of at least {} samples", s.max_factors, 2 * s.max_factors)));
    }
    let mut rep = Report::new();
    let mut b = Battery::new(s.seed);
    for modes in sets {
        let family = kernel_family(modes, grid);
        let space = field_space(modes, (s.max_factors / 2).max(1), hbar)?;
        let ctr = Contractions { broad: Some(&family), narrow: Some(&family), hbar };
        let m = modes.sites.len();
        for count in 1..=s.max_factors {
            let placements: Vec<Vec<(OpLabel, usize, f64)>> = (0..s.placements)
                .map(|_| {
                    let mut slots: Vec<usize> = (0..grid.n / 2).collect();
                    (0..count)
                        .map(|_| {
                            let k = slots.remove(b.index(slots.len()));
                            let op = match modes.band {
                                Band::Broad => OpLabel::A,
                                Band::Narrow if b.index(2) == 0 => OpLabel::E,
                                Band::Narrow => OpLabel::Edag,
                            };
                            (op, b.index(m), grid.time(k))
                        })
                        .collect()
                })
                .collect();
            let dev = placements
                .par_iter()
                .map(|p| -> Result<f64> {
                    let mut d = 0.0f64;
                    for mask in 0..(1usize << count) {
                        let f: Vec<OrderedFactor> = p
                            .iter()
                            .enumerate()
                            .map(|(i, &(op, x, t))| {
                                let branch = if mask >> i & 1 == 1 { Branch::Minus } else { Branch::Plus };
                                OrderedFactor::new(op, x, t, branch)
                            })
                            .collect();
                        d = d.max((wick_pairing_vev(&f, &ctr)? - tc_ordered_vev(&space, &f)?).norm());
                    }
                    Ok(d)
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0f64, f64::max);
            rep.push(format!("{}{count} field factors, all branch patterns", band_tag(modes)), dev, 1e-11);
        }
    }
    Ok(rep)
}

/// Substitution and inversion of the response variables on seeded batteries:
/// both compositions in the broad band, and the narrow maps with their
/// conjugation constraints in both phase spaces.
pub fn round_trip_suite(grid: TimeGrid, sites: &SiteSet, hbar: f64, seed: u64, count: usize) -> Result<Report> {
    let mut b = Battery::new(seed);
    let mut dev = [0.0f64; 5];
    for _ in 0..count {
        let eta = b.signal(grid, sites, Spectrum::Full);
        let j = b.signal(grid, sites, Spectrum::Full);
        let (p, m) = broad_substitute(&eta, &j, hbar)?;
        let (e2, j2) = broad_invert(&p, &m, hbar)?;
        dev[0] = dev[0].max(e2.max_abs_diff(&eta)).max(j2.max_abs_diff(&j));
        let (p2, m2) = broad_substitute(&e2, &j2, hbar)?;
        dev[1] = dev[1].max(p2.max_abs_diff(&p)).max(m2.max_abs_diff(&m));

        let mut next = || b.signal(grid, sites, Spectrum::Full);
        let plain = NarrowCausal::plain(next(), next(), next(), next(), next(), next());
        let sk = narrow_substitute(&plain, hbar, PhaseSpace::Plain)?;
        dev[2] = dev[2].max(sk.constraint_defect().1);
        let back = narrow_invert(&sk, hbar, PhaseSpace::Plain)?;
        dev[3] = dev[3].max(narrow_difference(&plain, &back));

        let mut dup = plain.clone();
        dup.mu_bar = next();
        dup.d_bar = next();
        dup.nu_bar = next();
        dup.e_bar = next();
        dup.nu_p_bar = next();
        dup.e_p_bar = next();
        let sk = narrow_substitute(&dup, hbar, PhaseSpace::Duplicated)?;
        let back = narrow_invert(&sk, hbar, PhaseSpace::Duplicated)?;
        dev[4] = dev[4].max(narrow_difference(&dup, &back));
    }
    let mut rep = Report::new();
    rep.push("broad substitute then invert", dev[0], 1e-12);
    rep.push("broad invert then substitute", dev[1], 1e-12);
    rep.push("narrow skeleton conjugation constraints", dev[2], 1e-12);
    rep.push("narrow substitute then invert, plain", dev[3], 1e-12);
    rep.push("narrow substitute then invert, duplicated", dev[4], 1e-12);
    Ok(rep)
}

fn narrow_difference(a: &NarrowCausal, b: &NarrowCausal) -> f64 {
    [
        (&a.mu, &b.mu),
        (&a.mu_bar, &b.mu_bar),
        (&a.d_e, &b.d_e),
        (&a.d_bar, &b.d_bar),
        (&a.nu, &b.nu),
        (&a.nu_bar, &b.nu_bar),
        (&a.e_e, &b.e_e),
        (&a.e_bar, &b.e_bar),
        (&a.nu_p, &b.nu_p),
        (&a.nu_p_bar, &b.nu_p_bar),
        (&a.e_p, &b.e_p),
        (&a.e_p_bar, &b.e_p_bar),
    ]
    .iter()
    .fold(0.0f64, |acc, (x, y)| acc.max(x.max_abs_diff(y)))
}

/// Pairs of spikes at seeded sites and samples, followed by `random` pairs
/// of seeded random signals.
pub fn spike_battery(grid: TimeGrid, sites: &SiteSet, seed: u64, spikes: usize, random: usize) -> Vec<(Signal, Signal)> {
    let mut b = Battery::new(seed);
    let m = sites.len();
    let mut out: Vec<(Signal, Signal)> = (0..spikes)
        .map(|_| {
            let f = Signal::spike(grid, sites.clone(), b.index(m), b.index(grid.n));
            let g = Signal::spike(grid, sites.clone(), b.index(m), b.index(grid.n));
            (f, g)
        })
        .collect();
    for _ in 0..random {
        out.push((b.signal(grid, sites, Spectrum::Full), b.signal(grid, sites, Spectrum::Full)));
    }
    out
}

/// Reordering form on the derivative images against the causal form, for
/// every family and `hbar`.
pub fn reordering_suite(families: &[KernelFamily], hbars: &[f64], battery: &[(Signal, Signal)]) -> Result<Report> {
    let mut rep = Report::new();
    for family in families {
        for &hbar in hbars {
            rep.extend(transform_reordering_form(family, hbar, battery)?.prefixed(&format!("hbar {hbar}: ")));
        }
    }
    Ok(rep)
}

/// Vacuum functionals evaluated in skeleton and causal form on `count`
/// seeded argument sets scaled by `scale`.
pub fn vacuum_suite(
    broad: Option<&KernelFamily>,
    narrow: Option<&KernelFamily>,
    hbar: f64,
    seed: u64,
    count: usize,
    scale: f64,
) -> Result<Report> {
    let mut b = Battery::new(seed);
    let s = C64::new(scale, 0.0);
    let mut rep = Report::new();
    if let Some(fam) = broad {
        let (grid, sites) = (fam.plus.grid, fam.plus.sites.clone());
        let mut dev = 0.0f64;
        for _ in 0..count {
            let eta = b.signal(grid, &sites, Spectrum::Full).scale(s);
            let j = b.signal(grid, &sites, Spectrum::Full).scale(s);
            let (sk, ca) = broad_vacuum_two_ways(&eta, &j, fam, hbar)?;
            dev = dev.max((sk - ca).norm());
        }
        rep.push("broad vacuum functional, skeleton against causal", dev, 1e-10);
    }
    if let Some(fam) = narrow {
        let (grid, sites) = (fam.plus.grid, fam.plus.sites.clone());
        let mut dev = 0.0f64;
        for _ in 0..count {
            let mut next = || b.signal(grid, &sites, Spectrum::Full).scale(s);
            let args = NarrowCausal::plain(next(), next(), next(), next(), next(), next());
            let skel = narrow_substitute(&args, hbar, PhaseSpace::Plain)?;
            let v1 = vacuum_functional(&VacuumArguments::from_skeleton(&skel), fam, hbar, Representation::Skeleton)?;
            let causal = VacuumArguments::NarrowCausal {
                mu: args.mu.clone(),
                mu_bar: args.mu_bar.clone(),
                d_e: args.d_e.clone(),
                d_bar: args.d_bar.clone(),
            };
            let v2 = vacuum_functional(&causal, fam, hbar, Representation::Causal)?;
            dev = dev.max((v1 - v2).norm());
        }
        rep.push("narrow vacuum functional, skeleton against causal", dev, 1e-10);
    }
    Ok(rep)
}

/// Broad bare cumulants with seeded symmetric random tensors of magnitude
/// up to `scale` for each `(m, n)` in `keys`.
pub fn random_bare(prop: &CausalPropagator, keys: &[(usize, usize)], scale: f64, seed: u64) -> Result<CumulantSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = prop.points();
    let mut set = CumulantSet::new(CumulantBand::Broad, CumulantKind::Bare, prop.weights());
    for &(m, n) in keys {
        let key = CumulantSet::broad_key(m, n);
        let t = CumulantSet::random_symmetric(&key, np, &mut rng).into_iter().map(|v| v * scale).collect();
        set.insert(key, t)?;
    }
    Ok(set)
}

#[derive(Clone, Debug)]
pub struct DressingOutcome {
    pub report: Report,
    pub oracle: OracleOutput,
    /// Diagram sums by order.
    pub diagrams: Vec<CumulantSet>,
    /// Every connected diagram used, by external key and order.
    pub listing: Vec<Diagram>,
}

/// Diagram engine against the functional oracle, order by order, and the
/// connectedness checks when `bare` carries `(1,1)` and `(2,2)` vertices.
pub fn dressing_suite(bare: &CumulantSet, prop: &CausalPropagator, order: usize, term_budget: usize) -> Result<DressingOutcome> {
    if bare.band != CumulantBand::Broad {
        return Err(LabError::Invalid("the diagram engine dresses broad cumulants".into()));
    }
    let externals: Vec<(usize, usize)> = bare.tensors.keys().map(|k| (k[0], k[1])).collect();
    let keys: Vec<Vec<usize>> = externals.iter().map(|&(m, n)| CumulantSet::broad_key(m, n)).collect();
    let props = Propagators::broad(prop.clone());
    let oracle = dress_functional_oracle(bare, &props, order, &keys, term_budget)?;
    let diagrams = dress_by_diagrams(bare, prop, &externals, order)?;
    let mut rep = Report::new();
    for k in 0..=order {
        rep.push(format!("diagrams equal functional oracle, order {k}"), oracle.cumulants_by_order[k].max_abs_diff(&diagrams[k]), 1e-10);
    }
    let mut listing = Vec::new();
    for &ext in &externals {
        for k in 0..=order {
            listing.extend(enumerate_diagrams(&externals, ext, k)?);
        }
    }
    if bare.get(&[1, 1]).is_some() && bare.get(&[2, 2]).is_some() {
        rep.extend(connectedness_checks(bare, &props, order, term_budget)?);
    }
    Ok(DressingOutcome { report: rep, oracle, diagrams, listing })
}

/// The `(2,2)` moment equals the exponentiated cumulant expansion order by
/// order, and differs from the `(2,2)` cumulant by its disconnected part.
fn connectedness_checks(bare: &CumulantSet, props: &Propagators, order: usize, term_budget: usize) -> Result<Report> {
    let keys = vec![vec![0, 0], vec![1, 1], vec![2, 2]];
    let out = dress_functional_oracle(bare, props, order, &keys, term_budget)?;
    let (cum, mom) = (&out.cumulants_by_order, &out.moments_by_order);
    let np = bare.points();
    // Power series of exp(sum_k c_k l^k) for the vacuum constants c_k.
    let c: Vec<C64> = (0..=order).map(|k| cum[k].entry(&[0, 0], &[])).collect();
    let mut e = vec![c[0].exp()];
    for k in 1..=order {
        let s: C64 = (1..=k).map(|j| c[j] * e[k - j] * j as f64).sum();
        e.push(s / k as f64);
    }
    let mut defect = 0.0f64;
    let mut disconnected = 0.0f64;
    for k in 0..=order {
        for t in tuples(np, 4) {
            let (t1, t2, u1, u2) = (t[0], t[1], t[2], t[3]);
            let x = |b: usize| {
                let mut acc = cum[b].entry(&[2, 2], &t);
                for i in 0..=b {
                    let (p, q) = (&cum[i], &cum[b - i]);
                    acc += p.entry(&[1, 1], &[t1, u1]) * q.entry(&[1, 1], &[t2, u2])
                        + p.entry(&[1, 1], &[t1, u2]) * q.entry(&[1, 1], &[t2, u1]);
                }
                acc
            };
            let expect: C64 = (0..=k).map(|a| e[a] * x(k - a)).sum();
            let got = mom[k].entry(&[2, 2], &t);
            defect = defect.max((got - expect).norm());
            disconnected = disconnected.max((got - cum[k].entry(&[2, 2], &t)).norm());
        }
    }
    let mut rep = Report::new();
    rep.push("moments equal exponentiated cumulants", defect, 1e-10);
    rep.push("disconnected part present in moments (inverse size)", 1.0 / disconnected, 1e3);
    Ok(rep)
}

/// Source re-splitting `J_e -> (1-f) J_e`, `J -> J + f J_e` leaves the
/// dressed solution unchanged.
pub fn resplit_suite(dressed: &CumulantSet, prop: &CausalPropagator, seed: u64, fractions: &[f64]) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = prop.points();
    let mut r = || (0..np).map(|_| C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect::<Vec<_>>();
    let args = BroadArguments { eta: r(), zeta: r(), j_e: r(), a_e: r(), big_j: r(), big_a: r() };
    let mut dev = 0.0f64;
    for &f in fractions {
        dev = dev.max(resplit_defect(dressed, prop, &args, f)?);
    }
    let mut rep = Report::new();
    rep.push("dressed solution under source re-splitting", dev, 1e-12);
    Ok(rep)
}

/// Linear-oscillator device coupled to broad modes, for which the normal
/// modes give the exact answer.
#[derive(Clone, Debug)]
pub struct GaussianSetup {
    pub modes: ModeSet,
    pub omega_dev: f64,
    pub couplings: Vec<f64>,
    /// Oscillator levels kept by the oracle.
    pub levels: usize,
    pub hbar: f64,
    pub j_e: Source,
    pub site: usize,
    pub t_end: f64,
    /// Halving sequence of steps.
    pub dts: Vec<f64>,
    /// Lag at which the chain-resummed response is compared.
    pub lag: f64,
    pub cutoff: usize,
    pub budget: usize,
}

impl GaussianSetup {
    pub fn device(&self) -> Result<Device> {
        let zero = vec![C64::new(0.0, 0.0); self.couplings.len()];
        Device::linear_oscillator(self.omega_dev, self.levels, self.hbar, &self.couplings, &zero, &crate::fock::DeviceState::Ground)
    }
}

fn rel(value: f64, exact: f64) -> f64 {
    (value - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)
}

/// Chain-resummed response and dressed mean field against the normal modes,
/// plus the Fock oracle mean field against the normal modes.
pub fn gaussian_suite(s: &GaussianSetup) -> Result<Report> {
    if s.dts.len() < 2 {
        return Err(LabError::Invalid("the Gaussian suite needs at least two steps".into()));
    }
    let m = s.modes.sites.len();
    let model = GaussianModel::new(&s.modes, s.omega_dev, &s.couplings, s.hbar, 1.0)?;
    let bare_model = GaussianModel::new(&s.modes, s.omega_dev, &s.couplings, s.hbar, 0.0)?;
    let device = s.device()?;
    let x = s.site;

    let exact_chain = model.response(Observable::Current(x), Observable::Current(x), s.lag);
    let chain = s
        .dts
        .par_iter()
        .map(|&dt| -> Result<f64> {
            let n = (s.lag / dt).round() as usize + 1;
            let np = m * n;
            let mut q = vec![C64::new(0.0, 0.0); np * np];
            for p in 0..np {
                for r in 0..np {
                    let tau = (p % n) as f64 * dt - (r % n) as f64 * dt;
                    q[p * np + r] = C64::new(bare_model.response(Observable::Current(p / n), Observable::Current(r / n), tau), 0.0);
                }
            }
            let prop = CausalPropagator::broad(&s.modes, n, dt);
            Ok(chain_resummation(&q, &prop)?[(x * n + n - 1) * np + x * n].re)
        })
        .collect::<Result<Vec<f64>>>()?;

    let steps_exact = (s.t_end / 0.01).round() as usize;
    let exact_mean = *model
        .mean_series(Observable::Field(x), Some(&s.j_e), None, 0.0, s.t_end / steps_exact as f64, steps_exact)
        .last()
        .expect("non-empty series");
    let dressed = s
        .dts
        .par_iter()
        .map(|&dt| -> Result<f64> {
            let n = (s.t_end / dt).round() as usize + 1;
            let np = m * n;
            let q = extract_bare_cumulants(&device, s.hbar, 0.0, dt, n)
                .ok_or_else(|| LabError::Invalid("the device has no current".into()))?;
            let qv: Vec<C64> = (0..np * np).map(|i| q[(i / np, i % np)]).collect();
            let prop = CausalPropagator::broad(&s.modes, n, dt);
            let dq = chain_resummation(&qv, &prop)?;
            let mut set = CumulantSet::new(CumulantBand::Broad, CumulantKind::Dressed, prop.weights());
            set.insert(vec![1, 1], dq)?;
            let mut args = BroadArguments::zeros(np);
            args.j_e = (0..np).map(|p| s.j_e.at(p / n, (p % n) as f64 * dt)).collect();
            Ok(broad_mean_field(&set, &prop, &args)?[x * n + n - 1].re)
        })
        .collect::<Result<Vec<f64>>>()?;

    let space = FockSpace::new(Some(s.modes.clone()), None, s.cutoff, device, s.hbar, s.budget)?;
    let sources = Sources { j_e: Some(s.j_e.clone()), ..Sources::none() };
    let fock = s.dts[..2]
        .par_iter()
        .map(|&dt| -> Result<f64> {
            let steps = (s.t_end / dt).round() as usize;
            Ok(expectation_series(&space, OpLabel::A, x, &sources, Stepping::new(0.0, dt)?, steps)?[steps].re)
        })
        .collect::<Result<Vec<f64>>>()?;

    let last = s.dts.len() - 1;
    let mut rep = Report::new();
    rep.push(
        "chain-resummed response against normal modes, extrapolated",
        rel(richardson(chain[last - 1], chain[last]), exact_chain),
        1e-6,
    );
    push_halving(&mut rep, "chain-resummed response", &chain.iter().map(|v| (v - exact_chain).abs()).collect::<Vec<_>>());
    rep.push(
        "dressed mean field against normal modes, extrapolated",
        rel(richardson(dressed[last - 1], dressed[last]), exact_mean),
        1e-6,
    );
    push_halving(&mut rep, "dressed mean field", &dressed.iter().map(|v| (v - exact_mean).abs()).collect::<Vec<_>>());
    rep.push("fock oracle mean field against normal modes, extrapolated", rel(richardson(fock[0], fock[1]), exact_mean), 1e-6);
    Ok(rep)
}

/// The mean-field identity at each step, with its finest-step error and the
/// dt-halving ratios.
pub fn mean_field_suite(
    space: &FockSpace,
    j_e: &Source,
    a_e: Option<&Source>,
    site: usize,
    t_end: f64,
    dts: &[f64],
) -> Result<(Report, Vec<MeanFieldRun>)> {
    if dts.is_empty() {
        return Err(LabError::Invalid("the mean-field suite needs at least one step".into()));
    }
    let runs = dts.iter().map(|&dt| mean_field_identity(space, j_e, a_e, site, t_end, dt)).collect::<Result<Vec<_>>>()?;
    let mut rep = Report::new();
    rep.push("mean-field identity at the finest step", runs.last().expect("non-empty").rel_error, 1e-4);
    push_halving(&mut rep, "mean-field identity", &runs.iter().map(|r| r.rel_error).collect::<Vec<_>>());
    Ok((rep, runs))
}

/// S-matrix reordering identities at each step: unitarity per step and
/// second-order convergence of the larger reordering deviation.
pub fn smatrix_suite(space: &FockSpace, factors: &[OrderedFactor], t_end: f64, dts: &[f64]) -> Result<Report> {
    let mut rep = Report::new();
    let mut devs = Vec::with_capacity(dts.len());
    for &dt in dts {
        let steps = (t_end / dt).round() as usize;
        let r = verify_smatrix_identity(space, factors, Stepping::new(0.0, dt)?, steps)?;
        devs.push(r.checks.iter().filter(|c| c.name != "S-matrix unitarity").fold(0.0f64, |a, c| a.max(c.deviation)));
        if let Some(u) = r.get("S-matrix unitarity") {
            rep.push(format!("S-matrix unitarity, dt {dt}"), u.deviation, u.tolerance);
        }
    }
    push_halving(&mut rep, "S-matrix reordering identities", &devs);
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeisenbergScan {
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub points: usize,
    pub amplitude: f64,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RwaSettings {
    pub scan: ScanSettings,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub points: usize,
    pub heisenberg: Option<HeisenbergScan>,
}

impl Default for RwaSettings {
    fn default() -> Self {
        Self {
            scan: ScanSettings::default(),
            ratio_lo: 0.01,
            ratio_hi: 0.1,
            points: 4,
            heisenberg: Some(HeisenbergScan { ratio_lo: 0.02, ratio_hi: 0.2, points: 2, amplitude: 0.05, dt: 0.02 }),
        }
    }
}

/// Bandwidth scans of the resonance approximations with a slope check each.
pub fn rwa_suite(s: &RwaSettings) -> Result<(Report, Vec<Scan>)> {
    let ratios = log_ratios(s.ratio_lo, s.ratio_hi, s.points);
    let sc = s.scan;
    let mut scans = vec![
        bandwidth_scan("retarded kernel resonance form", &ratios, |r| kernel_scan_point(&sc, r))?,
        bandwidth_scan("source coupling resonance form", &ratios, |r| bilinear_scan_point(&sc, r))?,
        bandwidth_scan("dressing operator resonance form", &ratios, |r| derivative_scan_point(&sc, r))?,
        bandwidth_scan("coherent field envelope", &ratios, |r| envelope_scan_point(&sc, r))?,
    ];
    if let Some(h) = s.heisenberg {
        let ratios = log_ratios(h.ratio_lo, h.ratio_hi, h.points);
        scans.push(bandwidth_scan("heisenberg field envelope", &ratios, |r| {
            heisenberg_envelope_point(&sc, r, h.amplitude, h.dt)
        })?);
    }
    let mut rep = Report::new();
    for scan in &scans {
        rep.push(format!("{}: log-log slope minus one", scan.label), (scan.slope() - 1.0).abs(), SLOPE_TOLERANCE);
    }
    Ok((rep, scans))
}

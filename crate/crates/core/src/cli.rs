//! Command-line driver: one scenario per invocation, artifacts under `--out`,
//! a `report.txt` and `manifest.json` for every completed run.
//!
//! Exit codes: 0 when every check passes, 1 when an identity fails, 2 for
//! configuration, budget and I/O errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dressing::cumulants::{CausalPropagator, CumulantBand, CumulantKind, CumulantSet};
use crate::error::{LabError, Result};
use crate::fock::{expectation_series, FockSpace, OpLabel, Sources, Stepping};
use crate::io::{write_cumulant_set, write_diagram_listing, write_kernel_family, write_table, Format, Manifest};
use crate::kernels::{kernel_family, Band};
use crate::report::Report;
use crate::rwa::{counter_rotating_report, ScanSettings};
use crate::scenario::{BareSource, DeviceModel, LoadedScenario, Scenario, StateSpec};
use crate::suites::*;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_IDENTITY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ToleranceProfile {
    /// Tolerances as specified per identity.
    Strict,
    /// Every tolerance raised to at least `tolerances.leaky_floor`.
    Leaky,
}

impl ToleranceProfile {
    fn name(&self) -> &'static str {
        match self {
            ToleranceProfile::Strict => "strict",
            ToleranceProfile::Leaky => "leaky",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "causal-lab", version, about = "Closed-time-loop perturbation theory laboratory")]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "strict")]
    pub tolerance_profile: ToleranceProfile,
    /// `key=value` override of a budget, applied before validation; repeatable.
    #[arg(long, global = true, value_name = "KEY=VALUE")]
    pub budget_override: Vec<String>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true, env = "CAUSAL_LAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Command {
    /// Build and persist the kernel families, check the kernel identities.
    Kernels,
    /// Run a verification suite.
    Verify {
        #[command(subcommand)]
        suite: VerifySuite,
    },
    /// Dress bare cumulants by diagrams and by the functional oracle.
    Dress,
    /// Dressed mean fields against the Fock oracle.
    Moments,
    /// Bandwidth scans of the resonance approximations.
    RwaScan,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum VerifySuite {
    /// Pairing sums against the oracle time-loop expectations.
    Wick,
    /// Response round trips, reordering forms and vacuum functionals.
    Transforms,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kernels => "kernels",
            Command::Verify { suite: VerifySuite::Wick } => "verify wick",
            Command::Verify { suite: VerifySuite::Transforms } => "verify transforms",
            Command::Dress => "dress",
            Command::Moments => "moments",
            Command::RwaScan => "rwa-scan",
        }
    }
}

/// Report and written artifacts of one command.
struct Outcome {
    report: Report,
    artifacts: Vec<PathBuf>,
}

impl Outcome {
    fn new() -> Self {
        Self { report: Report::new(), artifacts: Vec::new() }
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| LabError::Config(format!("this command needs {what}")))
}

fn kernels(ls: &LoadedScenario, out: &Path) -> Result<Outcome> {
    let s = &ls.scenario;
    let grid = s.time_grid()?;
    let sets = s.mode_sets()?;
    if sets.is_empty() {
        return Err(LabError::Config("missing field `modes`".into()));
    }
    let mut o = Outcome::new();
    for modes in &sets {
        let family = kernel_family(modes, grid);
        let format = Format::auto(family.plus.values.len(), s.output.binary_threshold);
        o.artifacts.extend(write_kernel_family(&out.join("kernels"), modes, &family, format)?);
    }
    o.report = kernel_suite(&sets, grid, &[s.hbar])?;
    Ok(o)
}

fn verify_wick(ls: &LoadedScenario) -> Result<Outcome> {
    let s = &ls.scenario;
    let grid = s.time_grid()?;
    let sets = s.mode_sets()?;
    if sets.is_empty() {
        return Err(LabError::Config("missing field `modes`".into()));
    }
    let mut o = Outcome::new();
    for (i, modes) in sets.iter().enumerate() {
        let settings = WickSettings { placements: s.run.wick.placements, max_factors: s.run.wick.max_factors, seed: s.seed + i as u64 };
        let rep = wick_suite(std::slice::from_ref(modes), grid, s.hbar, &settings)?;
        o.report.extend(rep.prefixed(&format!("[{}] ", modes.band.tag())));
    }
    Ok(o)
}

fn verify_transforms(ls: &LoadedScenario) -> Result<Outcome> {
    let s = &ls.scenario;
    let (grid, sites, t) = (s.time_grid()?, s.site_set()?, &s.run.transforms);
    let mut o = Outcome::new();
    o.report.extend(round_trip_suite(grid, &sites, s.hbar, s.seed, t.count)?);
    let (broad, narrow) = (s.broad_modes()?, s.narrow_modes()?);
    let families: Vec<_> = [&broad, &narrow].into_iter().flatten().map(|m| kernel_family(m, grid)).collect();
    if !families.is_empty() {
        let battery = spike_battery(grid, &sites, s.seed, t.spikes, t.random);
        o.report.extend(reordering_suite(&families, &[s.hbar], &battery)?);
        let pick = |band: Band| families.iter().find(|f| f.band == band);
        o.report.extend(vacuum_suite(pick(Band::Broad), pick(Band::Narrow), s.hbar, s.seed, t.count, t.vacuum_scale)?);
    }
    Ok(o)
}

fn dress(ls: &LoadedScenario, out: &Path) -> Result<Outcome> {
    let s = &ls.scenario;
    let d = &s.run.dress;
    let modes = require(s.broad_modes()?, "`modes.broad`")?;
    let prop = CausalPropagator::broad(&modes, d.points, d.dt);
    let bare = match d.bare {
        BareSource::Random => {
            let keys: Vec<(usize, usize)> = d.vertices.iter().map(|v| (v[0], v[1])).collect();
            random_bare(&prop, &keys, d.scale, s.seed)?
        }
        BareSource::Device => {
            let device = require(s.device()?, "a `device`")?;
            let q = crate::fock::extract_bare_cumulants(&device, s.hbar, 0.0, d.dt, d.points)
                .ok_or_else(|| LabError::Config("the device has no current coupling".into()))?;
            let np = prop.points();
            let mut set = CumulantSet::new(CumulantBand::Broad, CumulantKind::Bare, prop.weights());
            set.insert(vec![1, 1], (0..np * np).map(|i| q[(i / np, i % np)]).collect())?;
            set
        }
    };
    let outcome = dressing_suite(&bare, &prop, s.budgets.diagram_order, s.budgets.oracle_terms)?;
    let dressed = outcome.oracle.cumulants();
    let (dir, th) = (out.join("cumulants"), s.output.binary_threshold);
    let mut o = Outcome::new();
    o.artifacts.extend(write_cumulant_set(&dir, "bare", &bare, None, th)?);
    o.artifacts.extend(write_cumulant_set(&dir, "dressed", &dressed, None, th)?);
    o.artifacts.extend(write_cumulant_set(&dir, "moments", &outcome.oracle.moments(), None, th)?);
    for (k, set) in outcome.diagrams.iter().enumerate() {
        o.artifacts.extend(write_cumulant_set(&dir, &format!("diagrams_order{k}"), set, Some(k), th)?);
    }
    let listing = out.join("diagrams.txt");
    write_diagram_listing(&listing, &outcome.listing)?;
    o.artifacts.push(listing);
    o.report = outcome.report;
    o.report.extend(resplit_suite(&dressed, &prop, s.seed.wrapping_add(1), &d.fractions)?);
    Ok(o)
}

fn moments(ls: &LoadedScenario, out: &Path) -> Result<Outcome> {
    let s = &ls.scenario;
    let mo = &s.run.moments;
    let spec = require(s.device.as_ref(), "a `device`")?;
    let device = require(s.device()?, "a `device`")?;
    let broad = require(s.broad_modes()?, "`modes.broad`")?;
    let sources = s.sources(&ls.dir)?;
    let j_e = require(sources.j_e.clone(), "a `sources.j_e` drive")?;
    let (b, tables) = (&s.budgets, out.join("tables"));
    let mut o = Outcome::new();

    if spec.kind == DeviceModel::LinearOscillator {
        if spec.state != StateSpec::Ground || spec.dipole_coupling.iter().any(|d| d[0] != 0.0 || d[1] != 0.0) {
            return Err(LabError::Config("the oscillator comparison needs the ground state and no dipole coupling".into()));
        }
        let setup = GaussianSetup {
            modes: broad.clone(),
            omega_dev: spec.omega,
            couplings: device_couplings(s, spec),
            levels: spec.levels,
            hbar: s.hbar,
            j_e: j_e.clone(),
            site: mo.site,
            t_end: mo.t_end,
            dts: mo.dts.clone(),
            lag: mo.lag,
            cutoff: b.cutoff,
            budget: b.fock_dimension,
        };
        o.report.extend(gaussian_suite(&setup)?);
    } else {
        let space = FockSpace::new(Some(broad.clone()), None, b.cutoff, device.clone(), s.hbar, b.fock_dimension)?;
        let (rep, runs) = mean_field_suite(&space, &j_e, sources.a_e.as_ref(), mo.site, mo.t_end, &mo.dts)?;
        o.report.extend(rep);
        let fine = runs.last().expect("non-empty");
        let rows: Vec<Vec<f64>> =
            fine.direct.iter().zip(&fine.predicted).enumerate().map(|(k, (d, p))| vec![k as f64 * fine.dt, *d, *p]).collect();
        let path = tables.join("mean_field.txt");
        write_table(&path, &format!("mean-field identity at site {}, dt {}", mo.site, fine.dt), &["t", "direct", "predicted"], &rows)?;
        o.artifacts.push(path);
    }

    o.artifacts.push(correlator_table(s, device, &sources, &tables)?);
    Ok(o)
}

fn device_couplings(s: &Scenario, spec: &crate::scenario::DeviceSpec) -> Vec<f64> {
    if spec.current_coupling.is_empty() {
        vec![0.0; s.site_set().map_or(1, |x| x.len())]
    } else {
        spec.current_coupling.clone()
    }
}

/// Fock-oracle series of the field and device expectations under all
/// configured sources, at the finest step.
fn correlator_table(s: &Scenario, device: crate::fock::Device, sources: &Sources, dir: &Path) -> Result<PathBuf> {
    let mo = &s.run.moments;
    let (broad, narrow) = (s.broad_modes()?, s.narrow_modes()?);
    let has_narrow = narrow.is_some();
    let space = FockSpace::new(broad, narrow, s.budgets.cutoff, device, s.hbar, s.budgets.fock_dimension)?;
    let dt = *mo.dts.last().expect("validated");
    let steps = (mo.t_end / dt).round() as usize;
    let stepping = Stepping::new(0.0, dt)?;
    let mut ops = vec![(OpLabel::A, "A"), (OpLabel::J, "J")];
    if has_narrow {
        ops.extend([(OpLabel::E, "E"), (OpLabel::D, "D")]);
    }
    let series = ops
        .iter()
        .map(|(op, _)| expectation_series(&space, *op, mo.site, sources, stepping, steps))
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec!["t".to_string()];
    for (_, name) in &ops {
        columns.push(format!("{name}_re"));
        columns.push(format!("{name}_im"));
    }
    let rows: Vec<Vec<f64>> = (0..=steps)
        .map(|k| {
            let mut r = vec![stepping.time(k)];
            for s in &series {
                r.extend([s[k].re, s[k].im]);
            }
            r
        })
        .collect();
    let path = dir.join("correlators.txt");
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    write_table(&path, &format!("Heisenberg expectations at site {}, dt {dt}", mo.site), &cols, &rows)?;
    Ok(path)
}

fn rwa_scan(ls: &LoadedScenario, out: &Path) -> Result<Outcome> {
    let s = &ls.scenario;
    let r = &s.run.rwa;
    let settings = RwaSettings {
        scan: ScanSettings { omega0: r.omega0, modes: r.modes, samples_per_cycle: r.samples_per_cycle, hbar: s.hbar },
        ratio_lo: r.ratio_lo,
        ratio_hi: r.ratio_hi,
        points: r.points,
        heisenberg: r.heisenberg.then_some(HeisenbergScan {
            ratio_lo: r.heisenberg_ratio_lo,
            ratio_hi: r.heisenberg_ratio_hi,
            points: r.heisenberg_points,
            amplitude: r.heisenberg_amplitude,
            dt: r.heisenberg_dt,
        }),
    };
    let (rep, scans) = rwa_suite(&settings)?;
    let mut o = Outcome::new();
    o.report = rep;
    for scan in &scans {
        let slug: String = scan.label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        let path = out.join("scans").join(format!("{slug}.txt"));
        fs::create_dir_all(path.parent().expect("has parent"))?;
        fs::write(&path, scan.table())?;
        o.artifacts.push(path);
    }
    let grid = s.time_grid()?;
    o.report.extend(counter_rotating_report(grid, &s.site_set()?, r.omega0, s.hbar, s.seed, r.counter_rotating_samples)?);
    Ok(o)
}

fn execute(cli: &Cli) -> Result<(Report, PathBuf)> {
    let path = cli.scenario.as_ref().ok_or_else(|| LabError::Config("missing `--scenario <path>`".into()))?;
    let ls = Scenario::load(path, &cli.budget_override)?;
    for w in &ls.warnings {
        eprintln!("warning: {w}");
    }
    let out = &cli.out;
    fs::create_dir_all(out)?;
    let mut o = match cli.command {
        Command::Kernels => kernels(&ls, out)?,
        Command::Verify { suite: VerifySuite::Wick } => verify_wick(&ls)?,
        Command::Verify { suite: VerifySuite::Transforms } => verify_transforms(&ls)?,
        Command::Dress => dress(&ls, out)?,
        Command::Moments => moments(&ls, out)?,
        Command::RwaScan => rwa_scan(&ls, out)?,
    };
    if cli.tolerance_profile == ToleranceProfile::Leaky {
        o.report = o.report.with_tolerance_floor(ls.scenario.tolerances.leaky_floor);
    }
    let report_path = out.join("report.txt");
    fs::write(&report_path, o.report.to_string())?;
    o.artifacts.push(report_path);
    let manifest = Manifest::new(
        cli.command.name(),
        &ls.hash,
        cli.tolerance_profile.name(),
        ls.scenario.seed,
        &o.report,
        &ls.warnings,
        out,
        &o.artifacts,
    )?;
    let manifest_path = out.join("manifest.json");
    manifest.write(&manifest_path)?;
    Ok((o.report, manifest_path))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start the thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok((report, manifest)) => {
            let summary = format!("{} checks, max deviation {:.3e}, manifest {}", report.checks.len(), report.max_deviation(), manifest.display());
            match report.first_failure() {
                None => {
                    println!("PASS {}: {summary}", cli.command.name());
                    EXIT_PASS
                }
                Some(c) => {
                    println!("FAIL {}: {summary}", cli.command.name());
                    eprintln!("identity failed: {} (deviation {:.3e}, tolerance {:.1e})", c.name, c.deviation, c.tolerance);
                    EXIT_IDENTITY
                }
            }
        }
        Err(LabError::Constraint(name, dev)) => {
            eprintln!("identity failed: {name} (deviation {dev:.3e})");
            EXIT_IDENTITY
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

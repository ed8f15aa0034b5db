//! TOML scenario files: grid, sites, mode sets, device, sources, tolerances,
//! budgets and per-command run settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dressing::diagrams::MAX_DIAGRAM_ORDER;
use crate::dressing::oracle::DEFAULT_TERM_BUDGET;
use crate::error::{LabError, Result};
use crate::fock::{Device, DeviceState, Source, Sources, DEFAULT_DIMENSION_BUDGET};
use crate::grid::{SiteSet, TimeGrid};
use crate::io::{sha256_hex, BINARY_THRESHOLD};
use crate::kernels::{Band, ModeSet};
use crate::wick::MAX_FACTORS;

/// Hard caps on the budgets; overrides beyond these are rejected.
pub const MAX_CUTOFF: usize = 16;
pub const MAX_DEGREE: usize = 8;
pub const MAX_FOCK_DIMENSION: usize = 1 << 14;
pub const MAX_ORACLE_TERMS: usize = 50_000_000;
/// Cap on `sites * points` of the dressing index space.
pub const MAX_DRESSING_POINTS: usize = 32;

fn config(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub hbar: f64,
    pub grid: GridSpec,
    /// Seed of the test-signal batteries.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sites: Option<SiteSpec>,
    #[serde(default)]
    pub modes: ModesSpec,
    #[serde(default)]
    pub device: Option<DeviceSpec>,
    #[serde(default)]
    pub sources: SourcesSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub run: RunSpec,
}

/// `n` samples from `t0` with either the step `dt` or the `period`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub t0: f64,
    pub dt: Option<f64>,
    pub period: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    /// Defaults to `x0, x1, ...`.
    pub labels: Option<Vec<String>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSpec {
    pub broad: Option<ModeSpec>,
    pub narrow: Option<ModeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub omegas: Vec<f64>,
    /// Carrier of a narrow set; must be absent or zero for a broad set.
    #[serde(default)]
    pub carrier: f64,
    /// `[re, im]` per mode and site; unit profiles when absent.
    pub profiles: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceModel {
    TwoLevel,
    LinearOscillator,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSpec {
    #[default]
    Ground,
    Excited,
    MaximallyMixed,
    Thermal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub kind: DeviceModel,
    pub omega: f64,
    /// Current coupling per site; zero when absent.
    #[serde(default)]
    pub current_coupling: Vec<f64>,
    /// Dipole coupling `[re, im]` per site; zero when absent.
    #[serde(default)]
    pub dipole_coupling: Vec<[f64; 2]>,
    #[serde(default)]
    pub state: StateSpec,
    /// Inverse temperature of the thermal state.
    pub beta: Option<f64>,
    /// Highest oscillator level kept.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    4
}

/// Analytic or tabulated source primitive. Sites default to all sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Box of height `amplitude / dt` on `[time, time + dt)` with the grid step.
    Spike {
        site: usize,
        time: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude exp(-i (omega t + phase))`.
    Tone {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        sites: Option<Vec<usize>>,
    },
    /// `amplitude exp(-(t - center)^2 / (2 width^2)) exp(-i (carrier t + phase))`.
    Gaussian {
        amplitude: f64,
        center: f64,
        width: f64,
        #[serde(default)]
        carrier: f64,
        #[serde(default)]
        phase: f64,
        sites: Option<Vec<usize>>,
    },
    /// Rows `site t re im`, linearly interpolated in `t`, zero outside the
    /// tabulated range. Paths are relative to the scenario file.
    Tabulated { file: PathBuf },
}

fn one() -> f64 {
    1.0
}

/// Each source is the sum of its listed primitives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSpec {
    #[serde(default)]
    pub j_e: Vec<SourceSpec>,
    #[serde(default)]
    pub a_e: Vec<SourceSpec>,
    #[serde(default)]
    pub d_e: Vec<SourceSpec>,
    #[serde(default)]
    pub e_e: Vec<SourceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Lower bound on every tolerance under the leaky profile.
    pub leaky_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { leaky_floor: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Fock occupation cutoff per mode.
    pub cutoff: usize,
    /// Largest total degree `m + n` of a bare vertex.
    pub degree: usize,
    pub diagram_order: usize,
    pub fock_dimension: usize,
    pub oracle_terms: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { cutoff: 4, degree: 4, diagram_order: 2, fock_dimension: DEFAULT_DIMENSION_BUDGET, oracle_terms: DEFAULT_TERM_BUDGET }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Tensors with more entries are written in binary.
    pub binary_threshold: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { binary_threshold: BINARY_THRESHOLD }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub wick: WickRun,
    pub transforms: TransformsRun,
    pub dress: DressRun,
    pub moments: MomentsRun,
    pub rwa: RwaRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WickRun {
    pub placements: usize,
    pub max_factors: usize,
}

impl Default for WickRun {
    fn default() -> Self {
        Self { placements: 8, max_factors: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformsRun {
    /// Random signal sets per round trip.
    pub count: usize,
    pub spikes: usize,
    pub random: usize,
    /// Amplitude of the random vacuum arguments.
    pub vacuum_scale: f64,
}

impl Default for TransformsRun {
    fn default() -> Self {
        Self { count: 25, spikes: 6, random: 6, vacuum_scale: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BareSource {
    /// Seeded random symmetric tensors for the listed vertices.
    #[default]
    Random,
    /// The `(1,1)` Kubo response of the scenario device.
    Device,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DressRun {
    /// Samples per site of the dressing window.
    pub points: usize,
    pub dt: f64,
    pub vertices: Vec<[usize; 2]>,
    pub scale: f64,
    pub bare: BareSource,
    /// Source re-splitting fractions.
    pub fractions: Vec<f64>,
}

impl Default for DressRun {
    fn default() -> Self {
        Self { points: 4, dt: 0.35, vertices: vec![[1, 1], [1, 3], [2, 2]], scale: 0.4, bare: BareSource::Random, fractions: vec![0.3, 1.0, -0.5] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsRun {
    pub site: usize,
    pub t_end: f64,
    /// Halving sequence of steps.
    pub dts: Vec<f64>,
    /// Lag of the chain-resummed response comparison.
    pub lag: f64,
}

impl Default for MomentsRun {
    fn default() -> Self {
        Self { site: 0, t_end: 3.0, dts: vec![0.04, 0.02, 0.01], lag: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwaRun {
    pub omega0: f64,
    pub modes: usize,
    pub samples_per_cycle: usize,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub points: usize,
    pub heisenberg: bool,
    pub heisenberg_ratio_lo: f64,
    pub heisenberg_ratio_hi: f64,
    pub heisenberg_points: usize,
    pub heisenberg_amplitude: f64,
    pub heisenberg_dt: f64,
    /// Random signal sets of the counter-rotating cancellations.
    pub counter_rotating_samples: usize,
}

impl Default for RwaRun {
    fn default() -> Self {
        Self {
            omega0: 5.0,
            modes: 5,
            samples_per_cycle: 16,
            ratio_lo: 0.01,
            ratio_hi: 0.1,
            points: 4,
            heisenberg: true,
            heisenberg_ratio_lo: 0.02,
            heisenberg_ratio_hi: 0.2,
            heisenberg_points: 2,
            heisenberg_amplitude: 0.05,
            heisenberg_dt: 0.02,
            counter_rotating_samples: 20,
        }
    }
}

/// Parses `key=value` and sets `budgets.key` in the raw table.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec.split_once('=').ok_or_else(|| config(format!("budget override '{spec}' is not key=value")))?;
    let (key, value) = (key.trim(), value.trim());
    let parsed: toml::Value = value.parse::<i64>().map(toml::Value::Integer).map_err(|_| config(format!("budget override '{spec}' needs an integer value")))?;
    let budgets = table.entry("budgets").or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let budgets = budgets.as_table_mut().ok_or_else(|| config("`budgets` must be a table"))?;
    budgets.insert(key.to_string(), parsed);
    Ok(())
}

/// Scenario with its directory, content hash and validation warnings.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub dir: PathBuf,
    /// SHA-256 of the canonical JSON form plus any tabulated source files.
    pub hash: String,
    pub warnings: Vec<String>,
}

impl Scenario {
    /// Parses TOML text, applying `budget_overrides` before deserialising.
    pub fn parse(text: &str, budget_overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config(e.message().to_string()))?;
        for o in budget_overrides {
            apply_override(&mut table, o)?;
        }
        Scenario::deserialize(toml::Value::Table(table)).map_err(|e| config(e.message().to_string()))
    }

    pub fn load(path: &Path, budget_overrides: &[String]) -> Result<LoadedScenario> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("cannot read scenario {}: {e}", path.display())))?;
        let scenario = Self::parse(&text, budget_overrides)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let warnings = scenario.validate(&dir)?;
        let hash = scenario.hash(&dir)?;
        Ok(LoadedScenario { scenario, dir, hash, warnings })
    }

    pub fn hash(&self, dir: &Path) -> Result<String> {
        let mut bytes = serde_json::to_vec(self).map_err(|e| config(e.to_string()))?;
        for spec in self.all_sources() {
            if let SourceSpec::Tabulated { file } = spec {
                bytes.extend_from_slice(&fs::read(dir.join(file))?);
            }
        }
        Ok(sha256_hex(&bytes))
    }

    fn all_sources(&self) -> impl Iterator<Item = &SourceSpec> {
        let s = &self.sources;
        s.j_e.iter().chain(&s.a_e).chain(&s.d_e).chain(&s.e_e)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let g = &self.grid;
        let dt = match (g.dt, g.period) {
            (Some(dt), None) => dt,
            (None, Some(p)) => p / g.n as f64,
            (None, None) => return Err(config("grid needs `dt` or `period`")),
            (Some(_), Some(_)) => return Err(config("grid takes `dt` or `period`, not both")),
        };
        TimeGrid::new(g.t0, dt, g.n).map_err(|e| config(format!("grid: {e}")))
    }

    pub fn site_set(&self) -> Result<SiteSet> {
        match &self.sites {
            None => Ok(SiteSet::single()),
            Some(s) => {
                let labels = s.labels.clone().unwrap_or_else(|| (0..s.weights.len()).map(|i| format!("x{i}")).collect());
                SiteSet::new(labels, s.weights.clone()).map_err(|e| config(format!("sites: {e}")))
            }
        }
    }

    fn mode_set(&self, band: Band) -> Result<Option<ModeSet>> {
        let spec = match band {
            Band::Broad => &self.modes.broad,
            Band::Narrow => &self.modes.narrow,
        };
        let Some(spec) = spec else { return Ok(None) };
        let tag = band.tag();
        if band == Band::Broad && spec.carrier != 0.0 {
            return Err(config("modes.broad: a broad set has no carrier"));
        }
        if band == Band::Narrow && !(spec.carrier > 0.0) {
            return Err(config("modes.narrow: missing field `carrier`"));
        }
        let sites = self.site_set()?;
        let k = spec.omegas.len();
        if k == 0 {
            return Err(config(format!("modes.{tag}: `omegas` is empty")));
        }
        let profiles = match &spec.profiles {
            None => Array2::from_elem((k, sites.len()), C64::new(1.0, 0.0)),
            Some(p) => {
                if p.len() != k || p.iter().any(|row| row.len() != sites.len()) {
                    return Err(config(format!("modes.{tag}: `profiles` must be {k} rows of {} [re, im] pairs", sites.len())));
                }
                Array2::from_shape_fn((k, sites.len()), |(i, x)| C64::new(p[i][x][0], p[i][x][1]))
            }
        };
        ModeSet::new(band, spec.omegas.clone(), profiles, sites, spec.carrier).map(Some).map_err(|e| config(format!("modes.{tag}: {e}")))
    }

    pub fn broad_modes(&self) -> Result<Option<ModeSet>> {
        self.mode_set(Band::Broad)
    }

    pub fn narrow_modes(&self) -> Result<Option<ModeSet>> {
        self.mode_set(Band::Narrow)
    }

    /// The configured sets, broad first.
    pub fn mode_sets(&self) -> Result<Vec<ModeSet>> {
        Ok([self.broad_modes()?, self.narrow_modes()?].into_iter().flatten().collect())
    }

    pub fn device(&self) -> Result<Option<Device>> {
        let Some(d) = &self.device else { return Ok(None) };
        let m = self.site_set()?.len();
        let pad = |len: usize, what: &str| -> Result<()> {
            if len != 0 && len != m {
                return Err(config(format!("device.{what} needs one entry per site ({m}), got {len}")));
            }
            Ok(())
        };
        pad(d.current_coupling.len(), "current_coupling")?;
        pad(d.dipole_coupling.len(), "dipole_coupling")?;
        let g = if d.current_coupling.is_empty() { vec![0.0; m] } else { d.current_coupling.clone() };
        let dip: Vec<C64> =
            if d.dipole_coupling.is_empty() { vec![C64::new(0.0, 0.0); m] } else { d.dipole_coupling.iter().map(|c| C64::new(c[0], c[1])).collect() };
        let state = match (d.state, d.beta) {
            (StateSpec::Thermal, Some(b)) => DeviceState::Thermal(b),
            (StateSpec::Thermal, None) => return Err(config("device: missing field `beta` for the thermal state")),
            (_, Some(_)) => return Err(config("device: `beta` applies to the thermal state only")),
            (StateSpec::Ground, None) => DeviceState::Ground,
            (StateSpec::Excited, None) => DeviceState::Excited,
            (StateSpec::MaximallyMixed, None) => DeviceState::MaximallyMixed,
        };
        let dev = match d.kind {
            DeviceModel::TwoLevel => Device::two_level(d.omega, self.hbar, &g, &dip, &state),
            DeviceModel::LinearOscillator => Device::linear_oscillator(d.omega, d.levels, self.hbar, &g, &dip, &state),
        };
        dev.map(Some).map_err(|e| config(format!("device: {e}")))
    }

    fn build_source(&self, specs: &[SourceSpec], dir: &Path, what: &str) -> Result<Option<Source>> {
        let m = self.site_set()?.len();
        let dt = self.time_grid()?.dt;
        let check_sites = |sites: &Option<Vec<usize>>| -> Result<Vec<bool>> {
            let mut mask = vec![sites.is_none(); m];
            for &x in sites.iter().flatten() {
                *mask.get_mut(x).ok_or_else(|| config(format!("sources.{what}: site {x} out of range (sites: {m})")))? = true;
            }
            Ok(mask)
        };
        let mut total: Option<Source> = None;
        for spec in specs {
            let s = match spec {
                SourceSpec::Spike { site, time, amplitude } => {
                    check_sites(&Some(vec![*site]))?;
                    let (site, time, h) = (*site, *time, amplitude / dt);
                    Source::new(move |x, t| if x == site && t >= time && t < time + dt { C64::new(h, 0.0) } else { C64::new(0.0, 0.0) })
                }
                SourceSpec::Tone { amplitude, omega, phase, sites } => {
                    let (mask, a, w, p) = (check_sites(sites)?, *amplitude, *omega, *phase);
                    Source::new(move |x, t| if mask[x] { C64::from_polar(a, -(w * t + p)) } else { C64::new(0.0, 0.0) })
                }
                SourceSpec::Gaussian { amplitude, center, width, carrier, phase, sites } => {
                    if !(*width > 0.0) {
                        return Err(config(format!("sources.{what}: gaussian width must be positive")));
                    }
                    let (mask, a, c, w, wc, p) = (check_sites(sites)?, *amplitude, *center, *width, *carrier, *phase);
                    Source::new(move |x, t| {
                        if mask[x] {
                            C64::from_polar(a * (-(t - c).powi(2) / (2.0 * w * w)).exp(), -(wc * t + p))
                        } else {
                            C64::new(0.0, 0.0)
                        }
                    })
                }
                SourceSpec::Tabulated { file } => tabulated(&dir.join(file), m, what)?,
            };
            total = Some(match total {
                None => s,
                Some(acc) => acc.sum(&s),
            });
        }
        Ok(total)
    }

    pub fn sources(&self, dir: &Path) -> Result<Sources> {
        let s = &self.sources;
        Ok(Sources {
            j_e: self.build_source(&s.j_e, dir, "j_e")?,
            a_e: self.build_source(&s.a_e, dir, "a_e")?,
            d_e: self.build_source(&s.d_e, dir, "d_e")?,
            e_e: self.build_source(&s.e_e, dir, "e_e")?,
        })
    }

    /// Checks every section and budget; returns commensurability warnings.
    pub fn validate(&self, dir: &Path) -> Result<Vec<String>> {
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            return Err(config(format!("hbar must be positive, got {}", self.hbar)));
        }
        let grid = self.time_grid()?;
        let sites = self.site_set()?;
        let b = &self.budgets;
        let caps = [
            ("cutoff", b.cutoff, MAX_CUTOFF),
            ("degree", b.degree, MAX_DEGREE),
            ("diagram_order", b.diagram_order, MAX_DIAGRAM_ORDER),
            ("fock_dimension", b.fock_dimension, MAX_FOCK_DIMENSION),
            ("oracle_terms", b.oracle_terms, MAX_ORACLE_TERMS),
        ];
        for (name, value, cap) in caps {
            if value > cap {
                return Err(LabError::Budget(format!("budgets.{name} = {value} exceeds the hard cap {cap}")));
            }
        }
        if b.cutoff == 0 || b.diagram_order == 0 {
            return Err(config("budgets.cutoff and budgets.diagram_order must be at least 1"));
        }
        if !(self.tolerances.leaky_floor > 0.0) {
            return Err(config("tolerances.leaky_floor must be positive"));
        }
        let mut warnings = Vec::new();
        for modes in self.mode_sets()? {
            let defect = modes.commensurability_defect(&grid);
            if !modes.is_commensurate(&grid) {
                warnings.push(format!(
                    "{} modes are not commensurate with the grid period {} (defect {defect:.3e}); kernels will show wrap-around",
                    modes.band.tag(),
                    grid.period()
                ));
            }
        }
        if let Some(d) = self.device()? {
            if d.sites() != sites.len() {
                return Err(config(format!("device covers {} sites, scenario has {}", d.sites(), sites.len())));
            }
        }
        self.sources(dir)?;
        let w = &self.run.wick;
        if w.max_factors > MAX_FACTORS || w.max_factors == 0 {
            return Err(LabError::Budget(format!("run.wick.max_factors must lie in 1..={MAX_FACTORS}")));
        }
        let dr = &self.run.dress;
        if dr.points * sites.len() > MAX_DRESSING_POINTS {
            return Err(LabError::Budget(format!(
                "run.dress: {} sites x {} points exceeds the cap of {MAX_DRESSING_POINTS}",
                sites.len(),
                dr.points
            )));
        }
        if !(dr.dt > 0.0) || dr.points == 0 {
            return Err(config("run.dress needs positive `points` and `dt`"));
        }
        for v in &dr.vertices {
            if v[0] == 0 || v[1] == 0 || v[0] + v[1] > b.degree {
                return Err(LabError::Budget(format!("vertex ({}, {}) exceeds budgets.degree = {} or has an empty side", v[0], v[1], b.degree)));
            }
        }
        let mo = &self.run.moments;
        if mo.dts.is_empty() || mo.dts.iter().any(|d| !(*d > 0.0)) || !(mo.t_end > 0.0) {
            return Err(config("run.moments needs positive `t_end` and `dts`"));
        }
        if mo.site >= sites.len() {
            return Err(config(format!("run.moments.site {} out of range (sites: {})", mo.site, sites.len())));
        }
        Ok(warnings)
    }
}

/// Piecewise-linear source from rows `site t re im`.
fn tabulated(path: &Path, m: usize, what: &str) -> Result<Source> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("sources.{what}: cannot read {}: {e}", path.display())))?;
    let mut rows: BTreeMap<usize, Vec<(f64, C64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || config(format!("{}:{}: expected `site t re im`", path.display(), i + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let site: usize = f[0].parse().map_err(|_| bad())?;
        if site >= m {
            return Err(config(format!("{}:{}: site {site} out of range", path.display(), i + 1)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.entry(site).or_default().push((num(f[1])?, C64::new(num(f[2])?, num(f[3])?)));
    }
    let mut table: Vec<Vec<(f64, C64)>> = vec![Vec::new(); m];
    for (site, mut r) in rows {
        r.sort_by(|a, b| a.0.total_cmp(&b.0));
        table[site] = r;
    }
    Ok(Source::new(move |x, t| {
        let r = &table[x];
        match r.partition_point(|(tk, _)| *tk <= t) {
            0 => C64::new(0.0, 0.0),
            k if k == r.len() => {
                if r[k - 1].0 == t {
                    r[k - 1].1
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            k => {
                let ((t0, v0), (t1, v1)) = (r[k - 1], r[k]);
                v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
            }
        }
    }))
}

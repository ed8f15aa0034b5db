//! Persistence of kernels, cumulant tensors, tables and run manifests.
//!
//! Text files start with a magic line and a JSON header line, both behind
//! `#`, followed by one whitespace-separated row per tensor entry. Binary
//! files hold an 8-byte magic, the header length and JSON header, the entry
//! count, and little-endian `(re, im)` pairs. Floats are written in their
//! shortest round-trip form, so both formats reload bit for bit.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use num_complex::Complex64 as C64;
use serde::{de::DeserializeOwned, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::dressing::cumulants::{tuples, CumulantBand, CumulantKind, CumulantSet};
use crate::dressing::diagrams::Diagram;
use crate::error::{LabError, Result};
use crate::grid::{SiteSet, StationaryKernel, TimeGrid};
use crate::kernels::{Band, KernelFamily, ModeSet};
use crate::report::Report;

const KERNEL_MAGIC: &str = "# causal-lab kernel v1";
const CUMULANT_MAGIC: &str = "# causal-lab cumulant v1";
const KERNEL_BINARY: &[u8; 8] = b"CLKERN01";
const CUMULANT_BINARY: &[u8; 8] = b"CLCUMU01";

/// Default entry count above which tensors are written in binary.
pub const BINARY_THRESHOLD: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl Format {
    /// Binary above `threshold` entries, text otherwise.
    pub fn auto(entries: usize, threshold: usize) -> Self {
        if entries > threshold {
            Format::Binary
        } else {
            Format::Text
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Binary => "bin",
        }
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the quadrature weights that define a cumulant index space.
pub fn weights_hash(weights: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(8 * weights.len() + 8);
    bytes.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    sha256_hex(&bytes)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn parse_err(path: &Path, what: impl std::fmt::Display) -> LabError {
    LabError::Parse(format!("{}: {what}", path.display()))
}

fn write_text(path: &Path, magic: &str, header: &impl Serialize, columns: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{magic}")?;
    writeln!(w, "# {}", serde_json::to_string(header).map_err(|e| LabError::Parse(e.to_string()))?)?;
    writeln!(w, "# columns {columns}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_binary(path: &Path, magic: &[u8; 8], header: &impl Serialize, values: &[C64]) -> Result<()> {
    let mut w = create(path)?;
    let h = serde_json::to_vec(header).map_err(|e| LabError::Parse(e.to_string()))?;
    w.write_all(magic)?;
    w.write_all(&(h.len() as u64).to_le_bytes())?;
    w.write_all(&h)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Header and values of a persisted tensor; `index_columns` leading integer
/// columns precede `re im` in text rows.
fn read_tensor<H: DeserializeOwned>(path: &Path, text_magic: &str, binary_magic: &[u8; 8]) -> Result<(H, Vec<C64>, Vec<Vec<usize>>)> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(binary_magic) {
        let mut r = &bytes[8..];
        let hl = read_u64(&mut r)? as usize;
        if r.len() < hl {
            return Err(parse_err(path, "truncated header"));
        }
        let header: H = serde_json::from_slice(&r[..hl]).map_err(|e| parse_err(path, e))?;
        r = &r[hl..];
        let count = read_u64(&mut r)? as usize;
        if r.len() != 16 * count {
            return Err(parse_err(path, format!("expected {count} entries, found {} bytes", r.len())));
        }
        let values = r
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                C64::new(re, im)
            })
            .collect();
        return Ok((header, values, Vec::new()));
    }
    let mut lines = BufReader::new(&bytes[..]).lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(LabError::from) };
    if next()?.as_deref() != Some(text_magic) {
        return Err(parse_err(path, "unrecognised file type"));
    }
    let header_line = next()?.ok_or_else(|| parse_err(path, "missing header"))?;
    let header: H = serde_json::from_str(header_line.trim_start_matches('#').trim()).map_err(|e| parse_err(path, e))?;
    let mut values = Vec::new();
    let mut indices = Vec::new();
    while let Some(line) = next()? {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(parse_err(path, format!("short row '{line}'")));
        }
        let (idx, re_im) = fields.split_at(fields.len() - 2);
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(path, format!("'{s}': {e}")));
        values.push(C64::new(num(re_im[0])?, num(re_im[1])?));
        indices.push(idx.iter().map(|s| s.parse::<usize>().map_err(|e| parse_err(path, format!("'{s}': {e}")))).collect::<Result<_>>()?);
    }
    Ok((header, values, indices))
}

/// Header of a persisted stationary kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHeader {
    /// `plus`, `retarded` or `feynman`.
    pub name: String,
    pub band: Band,
    /// [`ModeSet::hash`] of the generating mode set.
    pub modeset: String,
    pub grid: TimeGrid,
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

/// Writes `kernel` as `(x, x', lag, re, im)` rows in row-major order.
pub fn write_kernel(path: &Path, header: &KernelHeader, kernel: &StationaryKernel, format: Format) -> Result<()> {
    match format {
        Format::Text => {
            let rows = kernel.values.indexed_iter().map(|((x, xp, k), v)| format!("{x} {xp} {k} {} {}", v.re, v.im));
            write_text(path, KERNEL_MAGIC, header, "x x' lag re im", rows)
        }
        Format::Binary => write_binary(path, KERNEL_BINARY, header, &kernel.values.iter().copied().collect::<Vec<_>>()),
    }
}

pub fn read_kernel(path: &Path) -> Result<(KernelHeader, StationaryKernel)> {
    let (header, values, indices): (KernelHeader, _, _) = read_tensor(path, KERNEL_MAGIC, KERNEL_BINARY)?;
    let m = header.labels.len();
    let n = header.grid.n;
    if values.len() != m * m * n {
        return Err(parse_err(path, format!("expected {} entries, found {}", m * m * n, values.len())));
    }
    for (flat, idx) in indices.iter().enumerate() {
        if idx.as_slice() != [flat / (m * n), (flat / n) % m, flat % n] {
            return Err(parse_err(path, format!("row {flat} is out of order")));
        }
    }
    let grid = TimeGrid::new(header.grid.t0, header.grid.dt, header.grid.n)?;
    let sites = SiteSet::new(header.labels.clone(), header.weights.clone())?;
    let values = Array3::from_shape_vec((m, m, n), values).map_err(|e| parse_err(path, e))?;
    Ok((header, StationaryKernel::from_values(grid, sites, values)?))
}

/// Writes the three kernels of `family` as `{band}_{name}.{ext}` under `dir`.
pub fn write_kernel_family(dir: &Path, modes: &ModeSet, family: &KernelFamily, format: Format) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (name, k) in [("plus", &family.plus), ("retarded", &family.retarded), ("feynman", &family.feynman)] {
        let header = KernelHeader {
            name: name.to_string(),
            band: family.band,
            modeset: modes.hash(),
            grid: k.grid,
            labels: k.sites.labels().to_vec(),
            weights: k.sites.weights().to_vec(),
        };
        let path = dir.join(format!("{}_{name}.{}", family.band.tag(), format.extension()));
        write_kernel(&path, &header, k, format)?;
        out.push(path);
    }
    Ok(out)
}

/// Header of a persisted cumulant tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantHeader {
    pub band: CumulantBand,
    pub kind: CumulantKind,
    /// Slot count per block.
    pub key: Vec<usize>,
    /// Response slots.
    pub m: usize,
    /// Source slots.
    pub n: usize,
    pub points: usize,
    /// [`weights_hash`] of the index space.
    pub grid_hash: String,
    pub weights: Vec<f64>,
    /// Propagator order for a single-order slice.
    pub order: Option<usize>,
}

impl CumulantHeader {
    pub fn new(set: &CumulantSet, key: &[usize], order: Option<usize>) -> Self {
        let resp = set.band.response_blocks();
        let m = key.iter().zip(resp).filter(|(_, r)| **r).map(|(k, _)| k).sum();
        let n = key.iter().zip(resp).filter(|(_, r)| !**r).map(|(k, _)| k).sum();
        Self {
            band: set.band,
            kind: set.kind,
            key: key.to_vec(),
            m,
            n,
            points: set.points(),
            grid_hash: weights_hash(&set.weights),
            weights: set.weights.clone(),
            order,
        }
    }
}

/// Writes one tensor, rows `index... re im` in row-major order.
pub fn write_cumulant(path: &Path, header: &CumulantHeader, tensor: &[C64], format: Format) -> Result<()> {
    let rank: usize = header.key.iter().sum();
    if tensor.len() != header.points.pow(rank as u32) {
        return Err(LabError::Shape(format!("tensor has {} entries, header implies {}", tensor.len(), header.points.pow(rank as u32))));
    }
    match format {
        Format::Text => {
            let rows = tuples(header.points, rank).zip(tensor).map(|(t, v)| {
                let mut s: String = t.iter().map(|i| format!("{i} ")).collect();
                s.push_str(&format!("{} {}", v.re, v.im));
                s
            });
            write_text(path, CUMULANT_MAGIC, header, "index... re im", rows)
        }
        Format::Binary => write_binary(path, CUMULANT_BINARY, header, tensor),
    }
}

pub fn read_cumulant(path: &Path) -> Result<(CumulantHeader, Vec<C64>)> {
    let (header, values, indices): (CumulantHeader, _, _) = read_tensor(path, CUMULANT_MAGIC, CUMULANT_BINARY)?;
    let rank: usize = header.key.iter().sum();
    let expected = header.points.pow(rank as u32);
    if values.len() != expected {
        return Err(parse_err(path, format!("expected {expected} entries, found {}", values.len())));
    }
    if header.weights.len() != header.points || weights_hash(&header.weights) != header.grid_hash {
        return Err(parse_err(path, "grid hash does not match the stored weights"));
    }
    if !indices.is_empty() && !indices.iter().zip(tuples(header.points, rank)).all(|(a, b)| *a == b) {
        return Err(parse_err(path, "rows are out of order"));
    }
    Ok((header, values))
}

/// Writes every tensor of `set` as `{stem}_{key}.{ext}` under `dir`, in
/// binary above `threshold` entries.
pub fn write_cumulant_set(dir: &Path, stem: &str, set: &CumulantSet, order: Option<usize>, threshold: usize) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (key, tensor) in &set.tensors {
        let f = Format::auto(tensor.len(), threshold);
        let tag: Vec<String> = key.iter().map(|k| k.to_string()).collect();
        let path = dir.join(format!("{stem}_{}.{}", tag.join("-"), f.extension()));
        write_cumulant(&path, &CumulantHeader::new(set, key, order), tensor, f)?;
        out.push(path);
    }
    Ok(out)
}

/// Reassembles a set from tensor files sharing band, kind and grid.
pub fn read_cumulant_set(paths: &[PathBuf]) -> Result<CumulantSet> {
    let mut set: Option<CumulantSet> = None;
    for p in paths {
        let (h, t) = read_cumulant(p)?;
        let s = set.get_or_insert_with(|| CumulantSet::new(h.band, h.kind, h.weights.clone()));
        if s.band != h.band || s.kind != h.kind || weights_hash(&s.weights) != h.grid_hash {
            return Err(parse_err(p, "tensor does not belong to the same set"));
        }
        s.insert(h.key, t)?;
    }
    set.ok_or_else(|| LabError::Invalid("no cumulant files given".into()))
}

/// One adjacency description per line.
pub fn write_diagram_listing(path: &Path, diagrams: &[Diagram]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# connected diagrams: external legs, order, symmetry factor, vertices, edges u->v with multiplicity")?;
    for d in diagrams {
        writeln!(w, "{}", d.describe())?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated table with a `#` title and column line.
pub fn write_table(path: &Path, title: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {title}")?;
    writeln!(w, "# {}", columns.join(" "))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a table written by [`write_table`] or a two-column scan table.
pub fn read_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|s| s.parse::<f64>().map_err(|e| parse_err(path, format!("'{s}': {e}")))).collect())
        .collect()
}

/// Serialises non-finite floats as strings so manifests stay valid JSON.
mod float_text {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum F {
            N(f64),
            S(String),
        }
        match F::deserialize(d)? {
            F::N(v) => Ok(v),
            F::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCheck {
    pub name: String,
    #[serde(with = "float_text")]
    pub deviation: f64,
    #[serde(with = "float_text")]
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one run: what was run on which scenario, with which result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario_hash: String,
    pub tolerance_profile: String,
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub passed: bool,
    pub first_failure: Option<String>,
    #[serde(with = "float_text")]
    pub max_deviation: f64,
    pub checks: Vec<ManifestCheck>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    /// Manifest of `report`, hashing each artifact as written under `out`.
    pub fn new(
        command: &str,
        scenario_hash: &str,
        profile: &str,
        seed: u64,
        report: &Report,
        warnings: &[String],
        out: &Path,
        artifacts: &[PathBuf],
    ) -> Result<Self> {
        let artifacts = artifacts
            .iter()
            .map(|p| -> Result<Artifact> {
                let rel = p.strip_prefix(out).unwrap_or(p);
                Ok(Artifact { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&fs::read(p)?) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            command: command.to_string(),
            scenario_hash: scenario_hash.to_string(),
            tolerance_profile: profile.to_string(),
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            passed: report.passed(),
            first_failure: report.first_failure().map(|c| c.name.clone()),
            max_deviation: report.max_deviation(),
            checks: report
                .checks
                .iter()
                .map(|c| ManifestCheck { name: c.name.clone(), deviation: c.deviation, tolerance: c.tolerance, passed: c.passed() })
                .collect(),
            warnings: warnings.to_vec(),
            artifacts,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| LabError::Parse(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(|e| parse_err(path, e))
    }
}

//! Python bindings: the command-line driver, kernel construction and readers
//! for the persisted artifacts. Tensors cross as nested lists of `complex`;
//! headers and manifests cross as JSON strings.

use std::collections::BTreeMap;
use std::path::Path;

use causal_lab::grid::{SiteSet, TimeGrid};
use causal_lab::io;
use causal_lab::kernels::{self, Band, ModeSet};
use causal_lab::scenario::Scenario;
use causal_lab::LabError;
use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: LabError) -> PyErr {
    match e {
        LabError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

type Nested = Vec<Vec<Vec<C64>>>;

fn nested(values: &ndarray::Array3<C64>) -> Nested {
    let (m, mp, n) = values.dim();
    (0..m).map(|x| (0..mp).map(|xp| (0..n).map(|k| values[[x, xp, k]]).collect()).collect()).collect()
}

/// Runs the command line with `args` (without the program name) and returns
/// the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| causal_lab::cli::run(std::iter::once("causal-lab".to_string()).chain(args)))
}

/// Plus, retarded and Feynman kernels of a mode set on a periodic grid, as
/// `{name: [x][x'][lag]}`.
#[pyfunction]
#[pyo3(signature = (omegas, period, n, band = "broad", carrier = 0.0, weights = None, profiles = None, t0 = 0.0))]
#[allow(clippy::too_many_arguments)]
fn kernel_family(
    omegas: Vec<f64>,
    period: f64,
    n: usize,
    band: &str,
    carrier: f64,
    weights: Option<Vec<f64>>,
    profiles: Option<Vec<Vec<C64>>>,
    t0: f64,
) -> PyResult<BTreeMap<String, Nested>> {
    let band = match band {
        "broad" => Band::Broad,
        "narrow" => Band::Narrow,
        other => return Err(PyValueError::new_err(format!("unknown band '{other}'"))),
    };
    let grid = TimeGrid::new(t0, period / n as f64, n).map_err(to_py)?;
    let sites = match weights {
        Some(w) => SiteSet::new((0..w.len()).map(|i| format!("x{i}")).collect(), w).map_err(to_py)?,
        None => SiteSet::single(),
    };
    let k = omegas.len();
    let table = match profiles {
        Some(p) => {
            if p.len() != k || p.iter().any(|r| r.len() != sites.len()) {
                return Err(PyValueError::new_err(format!("profiles must be {k} rows of {} values", sites.len())));
            }
            ndarray::Array2::from_shape_fn((k, sites.len()), |(i, x)| p[i][x])
        }
        None => ndarray::Array2::from_elem((k, sites.len()), C64::new(1.0, 0.0)),
    };
    let modes = ModeSet::new(band, omegas, table, sites, carrier).map_err(to_py)?;
    let f = kernels::kernel_family(&modes, grid);
    Ok(BTreeMap::from([
        ("plus".to_string(), nested(&f.plus.values)),
        ("retarded".to_string(), nested(&f.retarded.values)),
        ("feynman".to_string(), nested(&f.feynman.values)),
    ]))
}

/// Validates a scenario file; returns `(hash, warnings, scenario_json)`.
#[pyfunction]
#[pyo3(signature = (path, budget_overrides = Vec::new()))]
fn load_scenario(path: &str, budget_overrides: Vec<String>) -> PyResult<(String, Vec<String>, String)> {
    let ls = Scenario::load(Path::new(path), &budget_overrides).map_err(to_py)?;
    Ok((ls.hash, ls.warnings, json(&ls.scenario)?))
}

/// `(header_json, [x][x'][lag])` of a kernel file.
#[pyfunction]
fn read_kernel(path: &str) -> PyResult<(String, Nested)> {
    let (h, k) = io::read_kernel(Path::new(path)).map_err(to_py)?;
    Ok((json(&h)?, nested(&k.values)))
}

/// `(header_json, flat row-major values)` of a cumulant tensor file.
#[pyfunction]
fn read_cumulant(path: &str) -> PyResult<(String, Vec<C64>)> {
    let (h, v) = io::read_cumulant(Path::new(path)).map_err(to_py)?;
    Ok((json(&h)?, v))
}

/// Rows of a table file.
#[pyfunction]
fn read_table(path: &str) -> PyResult<Vec<Vec<f64>>> {
    io::read_table(Path::new(path)).map_err(to_py)
}

/// Manifest as JSON text.
#[pyfunction]
fn read_manifest(path: &str) -> PyResult<String> {
    json(&io::Manifest::read(Path::new(path)).map_err(to_py)?)
}

#[pymodule]
fn causal_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_family, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(read_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(read_cumulant, m)?)?;
    m.add_function(wrap_pyfunction!(read_table, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest, m)?)?;
    Ok(())
}

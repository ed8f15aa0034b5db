//! End-to-end runs of the command-line binary on the bundled scenarios.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causal_lab::io::{read_cumulant_set, read_kernel, read_table, sha256_hex, Manifest};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-lab"))
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .env("CAUSAL_LAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Every file under `dir`, by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn single_mode_kernel_file_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["kernels"], &scenario("single_mode.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, k) = read_kernel(&tmp.path().join("kernels/broad_retarded.txt")).unwrap();
    assert_eq!(header.name, "retarded");
    let n = k.grid.n;
    let omega = 1.0f64;
    for lag in 0..n {
        let theta = match (2 * lag).cmp(&n) {
            _ if lag == 0 || 2 * lag == n => 0.5,
            std::cmp::Ordering::Less => 1.0,
            _ => 0.0,
        };
        let tau = if 2 * lag > n { lag as f64 - n as f64 } else { lag as f64 } * k.grid.dt;
        let expect = theta * (omega * tau).sin() / omega;
        let v = k.values[[0, 0, lag]];
        assert!((v.re - expect).abs() < 1e-12 && v.im.abs() < 1e-12, "lag {lag}: {v} vs {expect}");
    }
}

#[test]
fn wick_on_two_modes_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["verify", "wick"], &scenario("two_modes.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = Manifest::read(&tmp.path().join("manifest.json")).unwrap();
    assert!(m.passed);
    assert_eq!(m.command, "verify wick");
    assert!(m.max_deviation < 1e-11, "{}", m.max_deviation);
    assert!(m.checks.iter().any(|c| c.name.starts_with("[narrow]")));
}

#[test]
fn empty_scenario_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "empty.toml", "");
    let o = run(&["kernels"], &s, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing field `hbar`"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_and_unknown_command_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["kernels"], &tmp.path().join("absent.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["bogus"], &scenario("single_mode.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn budget_override_beyond_cap_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["kernels", "--budget-override", "cutoff=100"], &scenario("single_mode.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("budgets.cutoff"), "{}", stderr(&o));
}

#[test]
fn identity_failure_exits_one_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "offgrid.toml", "hbar = 1.0\n[grid]\nperiod = 6.283185307179586\nn = 32\n[modes.broad]\nomegas = [1.25]\n");
    let o = run(&["kernels"], &s, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("warning: broad modes are not commensurate"), "{err}");
    assert!(err.contains("identity failed: [broad]"), "{err}");
    let m = Manifest::read(&tmp.path().join("out/manifest.json")).unwrap();
    assert!(!m.passed);
    assert!(err.contains(m.first_failure.as_deref().unwrap()));
    assert_eq!(m.warnings.len(), 1);
}

#[test]
fn leaky_profile_raises_tolerances() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "leaky.toml",
        "hbar = 1.0\n[grid]\nperiod = 6.283185307179586\nn = 32\n[modes.broad]\nomegas = [1.25]\n[tolerances]\nleaky_floor = 10.0\n",
    );
    let o = run(&["kernels", "--tolerance-profile", "leaky"], &s, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = Manifest::read(&tmp.path().join("out/manifest.json")).unwrap();
    assert_eq!(m.tolerance_profile, "leaky");
    assert!(m.checks.iter().all(|c| c.tolerance >= 10.0));
}

#[test]
fn dress_is_deterministic_and_artifacts_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["dress"], &scenario("two_modes.toml"), out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(bytes == &tb[path], "{} differs between runs", path.display());
    }

    let m = Manifest::read(&a.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 7);
    assert_eq!(m.scenario_hash.len(), 64);
    for art in &m.artifacts {
        assert_eq!(sha256_hex(&ta[Path::new(&art.path)]), art.sha256, "{}", art.path);
    }
    let dressed: Vec<PathBuf> = m.artifacts.iter().filter(|x| x.path.starts_with("cumulants/dressed_")).map(|x| a.join(&x.path)).collect();
    let set = read_cumulant_set(&dressed).unwrap();
    assert_eq!(set.tensors.len(), 3);
    assert!(fs::read_to_string(a.join("diagrams.txt")).unwrap().lines().count() > 1);
}

#[test]
fn moments_write_correlator_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["moments"], &scenario("oscillator.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_table(&tmp.path().join("tables/correlators.txt")).unwrap();
    assert_eq!(rows.len(), 241);
    assert!(rows.iter().all(|r| r.len() == 5));
    assert_eq!(rows[0][1], 0.0);
}

#[test]
fn rwa_scan_writes_one_table_per_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["rwa-scan"], &scenario("rwa.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = Manifest::read(&tmp.path().join("manifest.json")).unwrap();
    let scans: Vec<_> = m.artifacts.iter().filter(|a| a.path.starts_with("scans/")).collect();
    assert_eq!(scans.len(), 5);
    for s in scans {
        let expect = if s.path.contains("heisenberg") { 2 } else { 4 };
        assert_eq!(read_table(&tmp.path().join(&s.path)).unwrap().len(), expect, "{}", s.path);
    }
}

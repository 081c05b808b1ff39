//! The command-line stages, run as a user would.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use parabloch::harness::{basis_cache_path, RunConfig, RunManifest, ValidationReport};

fn parabloch(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parabloch"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn config(dir: &Path, toml: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, toml).unwrap();
    path.to_string_lossy().into_owned()
}

/// Every file below `dir` except the manifest, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "manifest.json" {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn pipeline_is_deterministic_and_stages_are_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        for cmd in ["spectrum", "evolve", "reconstruct"] {
            let o = parabloch(&[cmd, "--seedless"], dir);
            assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let sa = snapshot(a.path());
    assert_eq!(sa, snapshot(b.path()));
    for f in ["spectrum.csv", "levels.csv", "sites.csv", "signal.csv", "signal.json", "coherences.csv", "reconstruction.csv", "summary.json"] {
        assert!(sa.contains_key(f), "{f} missing");
    }

    // the manifest lists what each stage wrote, with matching checksums
    let m: RunManifest = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert!(m.commands.values().all(|c| c.seedless));
    let evolve = &m.commands["evolve"];
    assert!(evolve.artifacts.iter().any(|e| e.path == "signal.csv"));
    let other: RunManifest = serde_json::from_slice(&fs::read(b.path().join("manifest.json")).unwrap()).unwrap();
    for (cmd, c) in &m.commands {
        assert_eq!(c.artifacts, other.commands[cmd].artifacts);
    }

    // reconstruct alone reuses the recorded signal
    let signal = fs::read(a.path().join("signal.csv")).unwrap();
    let o = parabloch(&["reconstruct"], a.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.path().join("signal.csv")).unwrap(), signal);
    let m: RunManifest = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let digest = |cmd: &str| {
        m.commands[cmd].artifacts.iter().find(|e| e.path == "signal.csv").map(|e| e.sha256.clone())
    };
    assert!(digest("reconstruct").is_some());
    assert_eq!(digest("reconstruct"), digest("evolve"));

    // and records one itself in a fresh directory
    let c = tempfile::tempdir().unwrap();
    let o = parabloch(&["reconstruct"], c.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(c.path().join("summary.json")).unwrap(), sa["summary.json"]);
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[lattice]\nv0 = -1.0\n");
    let o = parabloch(&["spectrum", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("v0"));

    let cfg = config(dir.path(), "[lattice]\ndepth = 90.0\n");
    assert_eq!(code(&parabloch(&["spectrum", "--config", &cfg], dir.path())), 2);

    let cfg = config(dir.path(), "[evolution]\npropagator = \"splitstep\"\ndt_int = 1.0\n");
    let o = parabloch(&["evolve", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stability"));
}

#[test]
fn flat_lattice_has_no_site_basis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[lattice]\nv0 = 0.0\npoints_per_period = 32\n");
    let o = parabloch(&["spectrum", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(summary["localized"], 0);
    assert!(summary["pairing_error"].is_string());
    // evolution needs the basis: a regime error
    assert_eq!(code(&parabloch(&["evolve", "--config", &cfg], dir.path())), 3);
}

#[test]
fn shallow_lattice_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[lattice]\nv0 = 5.0\n");
    let o = parabloch(&["validate", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 4);
    let report: ValidationReport = serde_json::from_slice(&fs::read(dir.path().join("validation.json")).unwrap()).unwrap();
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    assert!(failed.contains(&"translation_overlap_neighbours"), "{failed:?}");
}

#[test]
fn corrupted_basis_cache_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&parabloch(&["spectrum"], dir.path())), 0);
    let mut cfg = RunConfig::default();
    cfg.output.dir = dir.path().to_path_buf();
    let path = basis_cache_path(dir.path(), &cfg);
    let mut basis: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let values = basis["sites"]["21"]["values"].as_array_mut().unwrap();
    for v in values.iter_mut() {
        *v = serde_json::json!(v.as_f64().unwrap() * 1.1);
    }
    fs::write(&path, serde_json::to_vec(&basis).unwrap()).unwrap();

    let o = parabloch(&["validate"], dir.path());
    assert_eq!(code(&o), 4);
    let report: ValidationReport = serde_json::from_slice(&fs::read(dir.path().join("validation.json")).unwrap()).unwrap();
    assert!(!report.get("basis_orthonormality").unwrap().passed);
}

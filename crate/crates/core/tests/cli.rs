use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use monohom::cli::snapshot::read_components;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn monohom(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_monohom"));
    cmd.args(args).env_remove("MONOHOM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn tables(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(out.join("tables"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL: &str = r#"{
  "study": "corrector",
  "grid": { "d": 2, "L": 8.0, "N": 16 },
  "operator": { "p": 3.0, "lambda": 0.25 },
  "recipe": { "ell_c": 1.0 },
  "params": { "sample_count": 3, "xi": [[1.0, 0.5]] },
  "seed": 11
}"#;

#[test]
fn every_shipped_config_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        if stem == "verify" {
            continue;
        }
        let out = tmp.path().join(&stem);
        let o = monohom(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "2"], &[]);
        assert!(o.status.success(), "{stem}: {}", String::from_utf8_lossy(&o.stdout));
        let r = report(&out);
        assert_eq!(r["status"], "ok", "{stem}");
        assert_eq!(r["study"], stem.as_str());
        assert!(!tables(&out).is_empty(), "{stem}");
        assert!(!out.join("FAILED").exists());
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL.replace("\"seed\"", "\"sede\": 1, \"seed\""));
    let o = monohom(&["run", &cfg, "--out", tmp.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
}

#[test]
fn zero_ellipticity_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL.replace("\"lambda\": 0.25", "\"lambda\": 0.0"));
    let out = tmp.path().join("o");
    let o = monohom(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(&out)["status"], "config_error");
    assert!(out.join("FAILED").exists());
}

#[test]
fn newton_budget_exhaustion_is_a_solver_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let json = SMALL.replace("\"seed\": 11", "\"seed\": 11, \"solver\": { \"max_newton\": 1 }");
    let cfg = write_config(tmp.path(), "c.json", &json);
    let out = tmp.path().join("o");
    let o = monohom(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(report(&out)["status"], "solver_failure");
    assert!(out.join("FAILED").exists());
}

#[test]
fn unmet_rate_target_is_an_invariant_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let json = fs::read_to_string(configs().join("two-scale.json"))
        .unwrap()
        .replace("\"mode\"", "\"slope_target\": 5.0, \"mode\"");
    let cfg = write_config(tmp.path(), "c.json", &json);
    let out = tmp.path().join("o");
    let o = monohom(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4));
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("twoscale.rate"), "{marker}");
    // tables are still written
    assert!(out.join("tables/two_scale.csv").exists());
}

#[test]
fn tables_are_bitwise_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["homogenize.json", "clt.json"] {
        let cfg = configs().join(name);
        let a = tmp.path().join(format!("{name}-1"));
        let b = tmp.path().join(format!("{name}-4"));
        for (out, t) in [(&a, "1"), (&b, "4")] {
            let o = monohom(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", t], &[]);
            assert!(o.status.success());
        }
        assert_eq!(tables(&a), tables(&b), "{name}");
        assert_eq!(report(&b)["threads"], 4);
    }
}

#[test]
fn thread_count_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = write_config(tmp.path(), "plain.json", SMALL);
    let pinned = write_config(tmp.path(), "pinned.json", &SMALL.replace("\"seed\": 11", "\"seed\": 11, \"threads\": 2"));
    let cases: [(&str, &[&str], &[(&str, &str)], u64, &str); 4] = [
        (&plain, &[], &[("MONOHOM_THREADS", "3")], 3, "env"),
        (&pinned, &[], &[("MONOHOM_THREADS", "3")], 2, "config"),
        (&pinned, &["--threads", "1"], &[("MONOHOM_THREADS", "3")], 1, "flag"),
        (&plain, &[], &[], 0, "hardware"),
    ];
    for (i, (cfg, extra, env, count, source)) in cases.into_iter().enumerate() {
        let out = tmp.path().join(format!("o{i}"));
        let mut args = vec!["run", cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(monohom(&args, env).status.success());
        let r = report(&out);
        assert_eq!(r["thread_source"], source);
        if count > 0 {
            assert_eq!(r["threads"], count);
        }
    }
    let o = monohom(&["run", &plain, "--out", tmp.path().join("bad").to_str().unwrap()], &[("MONOHOM_THREADS", "many")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sample_field_writes_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("o");
    let o = monohom(&["sample-field", &cfg, "--out", out.to_str().unwrap(), "--samples", "2", "--seed", "5"], &[]);
    assert!(o.status.success());
    for s in 0..2u64 {
        let (side, grid, comps) = read_components(&out.join(format!("fields/g_s{s}.bin"))).unwrap();
        assert_eq!((grid.dim(), grid.points_per_dim(), grid.length()), (2, 16, 8.0));
        assert_eq!((side.seed, side.sample, comps.len()), (Some(5), Some(s), 1));
        let (side, _, comps) = read_components(&out.join(format!("fields/A_s{s}.bin"))).unwrap();
        assert_eq!((side.components, comps.len()), (4, 4));
    }
    assert!(out.join("tables/samples.csv").exists());
}

#[test]
fn seed_and_tolerance_overrides_reach_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("o");
    assert!(monohom(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed", "99", "--tol", "1e-9"], &[]).status.success());
    let r = report(&out);
    assert_eq!(r["config"]["seed"], 99);
    assert_eq!(r["config"]["solver"]["tol"], 1e-9);
}

#[test]
fn verify_single_dimension_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = monohom(&["verify", "--fast", "--dim", "1", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(&out);
    assert_eq!(r["status"], "ok");
    assert!(r["checks"].as_array().unwrap().iter().any(|c| c["id"] == "d1/cli.report_completeness"));
}

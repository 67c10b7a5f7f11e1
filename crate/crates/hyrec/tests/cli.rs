use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hyrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyrec"))
        .args(args)
        .output()
        .expect("spawn hyrec")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run_ok(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        sub,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = hyrec(&args);
    assert!(
        o.status.success(),
        "{sub} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn blur1d(method: &str) -> Value {
    json!({
        "problem": {"kind": "blur1d", "size": 64, "psf_sigma": 2.0, "noise_level": 0.002, "seed": 1},
        "solver": {"method": method, "storage_limit": 15, "compress": {"kind": "tsvd", "q": 10, "eps_tol": 0.0}, "max_cycles": 3}
    })
}

fn stream_config(splits: usize) -> Value {
    json!({
        "problem": {"kind": "tomo", "size": 16, "n_angles": 30, "noise_level": 0.02, "seed": 4},
        "solver": {"storage_limit": 12, "compress": {"kind": "tsvd", "q": 6, "eps_tol": 0.0}, "max_cycles": 3},
        "stream": {"splits": splits}
    })
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn minimal_hybr_run_logs_storage_limit_rows() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("hybr"));
    run_ok("deblur", &cfg, &t.path().join("o"), &[]);
    let rows = csv_rows(&t.path().join("o/iterations.csv"));
    assert_eq!(
        rows[0].join(","),
        "cycle,iter,lambda,resnorm,relerr,basis_count,wall_ms"
    );
    assert_eq!(rows.len() - 1, 15);
    for name in ["reconstruction.pgm", "truth.pgm", "metrics.json"] {
        assert!(t.path().join("o").join(name).exists(), "{name}");
    }
    let pgm = fs::read_to_string(t.path().join("o/reconstruction.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n64 1\n255\n"));
    let m: Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("o/metrics.json")).unwrap())
            .unwrap();
    let run = &m["runs"][0];
    assert!(run["min_relerr"].as_f64().unwrap() <= run["final_relerr"].as_f64().unwrap());
    assert_eq!(run["cpu_ms"].as_f64(), Some(0.0));
}

#[test]
fn compare_mode_writes_both_curves_in_one_csv() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("compare"));
    run_ok("deblur", &cfg, &t.path().join("o"), &[]);
    let rows = csv_rows(&t.path().join("o/iterations.csv"));
    assert_eq!(rows[0][0], "solver");
    let hybr = rows.iter().filter(|r| r[0] == "hybr").count();
    let rec: Vec<_> = rows.iter().filter(|r| r[0] == "recycle").collect();
    assert_eq!(hybr, 15);
    assert!(rec.len() > 15);
    assert!(rec.iter().all(|r| r[6].parse::<usize>().unwrap() <= 15));
    assert!(rec.iter().any(|r| r[1] != "0"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let runs: [(&str, Value); 3] = [
        ("deblur", blur1d("compare")),
        ("stream", stream_config(2)),
        ("verify", blur1d("hybr")),
    ];
    for (sub, v) in runs {
        let cfg = write_config(t.path(), &format!("{sub}.json"), &v);
        let (a, b) = (
            t.path().join(format!("{sub}_a")),
            t.path().join(format!("{sub}_b")),
        );
        run_ok(sub, &cfg, &a, &[]);
        run_ok(sub, &cfg, &b, &[]);
        assert_eq!(dir_bytes(&a), dir_bytes(&b), "{sub}");
    }
}

#[test]
fn seed_flag_overrides_config_seed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("hybr"));
    run_ok("deblur", &cfg, &t.path().join("a"), &[]);
    run_ok("deblur", &cfg, &t.path().join("b"), &["--seed", "1"]);
    run_ok("deblur", &cfg, &t.path().join("c"), &["--seed", "7"]);
    let read = |d: &str| fs::read(t.path().join(d).join("iterations.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn invalid_configs_exit_nonzero_with_message() {
    let t = tempfile::tempdir().unwrap();
    let mut unknown = blur1d("hybr");
    unknown["solver"]["colour"] = json!("red");
    let mut bad_q = blur1d("recycle");
    bad_q["solver"]["compress"]["q"] = json!(15);
    let cases = [
        ("unknown", unknown),
        ("q", bad_q),
        ("kind", json!({"problem": {"kind": "mri", "size": 8}})),
    ];
    for (name, v) in cases {
        let cfg = write_config(t.path(), &format!("{name}.json"), &v);
        let o = hyrec(&[
            "deblur",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            t.path().join(name).to_str().unwrap(),
        ]);
        assert!(!o.status.success(), "{name}");
        assert!(!o.stderr.is_empty(), "{name}");
    }
    fs::write(t.path().join("broken.json"), "{ not json").unwrap();
    let o = hyrec(&[
        "verify",
        "--config",
        t.path().join("broken.json").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let o = hyrec(&["deblur"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn subcommand_must_match_problem_kind() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("hybr"));
    let o = hyrec(&[
        "tomo",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        t.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let o = hyrec(&[
        "stream",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        t.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn verify_passes_and_reports_gap_columns() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("hybr"));
    run_ok("verify", &cfg, &t.path().join("o"), &[]);
    let v: Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("o/verify.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], json!(true));
    let conj = &v["report"]["compression_gap"];
    for key in ["d", "sigma_k", "norm_Bbarbar_F_sq", "norm_Btilde_F_sq"] {
        assert!(conj[key].is_number(), "{key}");
    }
    assert_eq!(v["lambdas"].as_array().unwrap().len(), 20);
}

#[test]
fn fault_injection_fails_the_bound_and_exits_nonzero() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("hybr"));
    let o = hyrec(&[
        "verify",
        "--fault-inject",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        t.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("o/verify.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], json!(false));
    assert_eq!(v["fault_injected"], json!(true));
    let bound = v["report"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "residual_bound")
        .unwrap();
    assert_eq!(bound["passed"], json!(false));
}

#[test]
fn fault_inject_is_verify_only() {
    assert!(!hyrec(&["deblur", "--fault-inject"]).status.success());
}

#[test]
fn stream_single_split_coincides() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &stream_config(1));
    run_ok("stream", &cfg, &t.path().join("o"), &[]);
    let s: Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("o/summary.json")).unwrap())
            .unwrap();
    assert_eq!(s["approaches_coincide"], json!(true));
}

#[test]
fn stream_two_splits_emits_four_approach_summary() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &stream_config(2));
    run_ok("stream", &cfg, &t.path().join("o"), &[]);
    let rows = csv_rows(&t.path().join("o/summary.csv"));
    let labels: Vec<&str> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(
        labels,
        ["recycle-sequential", "last-dataset", "all-data", "average"]
    );
    assert_eq!(rows[3][0], "3");
    let curves = csv_rows(&t.path().join("o/stream.csv"));
    assert_eq!(curves[0][0], "approach");
    assert!(curves.iter().any(|r| r[0] == "all-data"));
    let s: Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("o/summary.json")).unwrap())
            .unwrap();
    assert_eq!(s["datasets"], json!([15, 15]));
    assert!(s["approaches_coincide"].is_null());
    assert!(s["margin_sequential_over_all"].is_number());
}

#[test]
fn stream_single_approach_flag() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &stream_config(2));
    run_ok("stream", &cfg, &t.path().join("o"), &["--approach", "3"]);
    let rows = csv_rows(&t.path().join("o/summary.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1], "all-data");
    let o = hyrec(&[
        "stream",
        "--approach",
        "5",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn cost_table_from_flags_and_config() {
    let o = hyrec(&["cost", "--m", "3", "--n", "10", "--rows", "20"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,l,c_hybr,c_recycle,bound,recycle_below_bound");
    // j = 3: 6 + 36 + 20 = 62. k = 1, l = 2: 1/2 + 32 + 4 + 22 + 2 = 60.5. Bound: 4.5 + 96 = 100.5.
    assert_eq!(
        lines[2],
        "1,2,6.2000000000000000e1,6.0500000000000000e1,1.0050000000000000e2,true"
    );

    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &blur1d("hybr"));
    let o = hyrec(&[
        "cost",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        t.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(t.path().join("o/cost.csv"))
            .unwrap()
            .lines()
            .count(),
        17
    );
    assert!(!hyrec(&["cost", "--m", "3"]).status.success());
}

fn example_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn shipped_examples_run() {
    let t = tempfile::tempdir().unwrap();
    for (file, sub) in [
        ("deblur_1d.json", "deblur"),
        ("deblur_2d.json", "deblur"),
        ("tomo.json", "tomo"),
        ("stream.json", "stream"),
        ("verify.json", "verify"),
    ] {
        run_ok(sub, &example_dir().join(file), &t.path().join(file), &[]);
    }
}

/// Every default listed in the shipped schema is accepted by the parser.
#[test]
fn schema_defaults_are_accepted() {
    let schema: Value = serde_json::from_str(
        &fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("docs/config.schema.json"))
            .unwrap(),
    )
    .unwrap();
    let t = tempfile::tempdir().unwrap();
    let mut count = 0;
    for section in ["solver", "stream", "verify"] {
        let props = schema["properties"][section]["properties"]
            .as_object()
            .unwrap();
        for (key, spec) in props {
            let Some(default) = spec.get("default") else {
                continue;
            };
            let mut v = blur1d("hybr");
            if section != "solver" {
                v[section] = json!({});
            }
            v[section][key] = default.clone();
            let cfg = write_config(t.path(), "c.json", &v);
            let o = hyrec(&["cost", "--config", cfg.to_str().unwrap(), "--m", "2"]);
            assert!(
                o.status.success(),
                "{section}.{key}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
            count += 1;
        }
    }
    assert!(count >= 10);
}

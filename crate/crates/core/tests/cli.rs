use affclt::io::read_arrays_csv;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const DIAGNOSE: &str = r#"
schema_version = 1
seed = 41

[model]
kind = "m_dependent"
weights = [1.0, 0.5]

[affinity]
recipe = "m_ball"
m = 1

[diagnostics]
n_grid = [200, 400, 800, 1600, 3200]
replications = 200

[normality]
n = 500
replications = 400

[gen]
n = 6
replications = 3
"#;

const INCONCLUSIVE: &str = r#"
schema_version = 1
seed = 2

[model]
kind = "andrews_ar"
rho = 0.5
q = 0.5
burn_in = 200

[affinity]
recipe = "singleton"

[diagnostics]
n_grid = [500, 1000, 2000, 4000, 8000]
replications = 200
"#;

fn affclt(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affclt"));
    cmd.args(args).env_remove("AFFCLT_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &[&str], config: &Path, out: &Path, extra: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut args: Vec<&str> = cmd.to_vec();
    args.extend(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    args.extend(extra);
    affclt(&args, envs)
}

/// Result files, without the timestamped sidecar.
fn results(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_meta.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn config_hash(config: &Path) -> String {
    affclt::config::ExperimentConfig::load(config).unwrap().hash().unwrap()
}

#[test]
fn diagnose_passes_and_is_reproducible_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIAGNOSE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = run(&["diagnose"], &cfg, &a, &["--threads", "1"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["diagnose"], &cfg, &b, &[], &[("AFFCLT_THREADS", "3")]);
    assert_eq!(out.status.code(), Some(0));

    let (ra, rb) = (results(&a), results(&b));
    assert_eq!(ra, rb);
    let names: Vec<&str> = ra.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "diagnostics.csv",
            "diagnostics.json",
            "plot_a1.dat",
            "plot_a2.dat",
            "plot_a3.dat"
        ]
    );
    let hash = config_hash(&cfg);
    for (name, bytes) in &ra {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.contains(&hash), "{name} lacks the config hash");
        assert!(text.contains(affclt::VERSION), "{name} lacks the tool version");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["threads"], 1);
    assert!(meta["started_unix"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIAGNOSE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["normality"], &cfg, &a, &[], &[]).status.code(), Some(0));
    assert_eq!(
        run(&["normality"], &cfg, &b, &["--seed", "42"], &[]).status.code(),
        Some(0)
    );
    assert_ne!(
        fs::read(a.join("normality.json")).unwrap(),
        fs::read(b.join("normality.json")).unwrap()
    );
}

#[test]
fn inconclusive_diagnosis_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "i.toml", INCONCLUSIVE);
    let out = run(&["diagnose"], &cfg, &tmp.path().join("o"), &[], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_configs_exit_one_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.toml", "schema_version = \n"),
        ("unknown.toml", "schema_version = 1\ncolour = 3\n"),
        ("schema.toml", "schema_version = 99\n"),
        (
            "missing.toml",
            "schema_version = 1\n[model]\nkind = \"andrews_ar\"\nrho = 0.5\nq = 0.5\n",
        ),
    ];
    for (name, text) in cases {
        let cfg = write_config(tmp.path(), name, text);
        let out_dir = tmp.path().join(format!("out_{name}"));
        let out = run(&["diagnose"], &cfg, &out_dir, &[], &[]);
        assert_eq!(out.status.code(), Some(1), "{name}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{name}");
        assert!(!out_dir.exists(), "{name} left output behind");
    }
    let out = run(
        &["diagnose"],
        &tmp.path().join("absent.toml"),
        &tmp.path().join("x"),
        &[],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn argument_errors_exit_one() {
    assert_eq!(affclt(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(affclt(&["estimate", "bogus"], &[]).status.code(), Some(1));
    assert_eq!(affclt(&["diagnose"], &[]).status.code(), Some(1));
    assert_eq!(affclt(&["info", "--threads", "0"], &[]).status.code(), Some(1));
    assert_eq!(affclt(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(affclt(&["--version"], &[]).status.code(), Some(0));
}

#[test]
fn json_config_matches_toml() {
    let tmp = tempfile::tempdir().unwrap();
    let toml_cfg = write_config(tmp.path(), "d.toml", DIAGNOSE);
    let value: toml::Value = toml::from_str(DIAGNOSE).unwrap();
    let json_cfg = write_config(tmp.path(), "d.json", &serde_json::to_string(&value).unwrap());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["gen"], &toml_cfg, &a, &[], &[]).status.code(), Some(0));
    assert_eq!(run(&["gen"], &json_cfg, &b, &[], &[]).status.code(), Some(0));
    assert_eq!(results(&a), results(&b));
}

#[test]
fn gen_writes_readable_arrays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIAGNOSE);
    let o = tmp.path().join("o");
    assert_eq!(run(&["gen"], &cfg, &o, &[], &[]).status.code(), Some(0));
    let arrays = read_arrays_csv(std::io::BufReader::new(fs::File::open(o.join("arrays.csv")).unwrap())).unwrap();
    assert_eq!(arrays.len(), 3);
    assert!(arrays.iter().all(|a| a.n() == 6 && a.p() == 1));
    let head = fs::read_to_string(o.join("arrays.csv")).unwrap();
    assert!(head.lines().next().unwrap().contains(&config_hash(&cfg)));
    let aff = fs::read_to_string(o.join("affinity.txt")).unwrap();
    assert!(aff.contains(&config_hash(&cfg)));
}

#[test]
fn estimate_ht_from_observed_csv() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("obs.csv"),
        "node,treated,outcome\n0,1,3.0\n1,0,2.5\n2,0,1.5\n3,0,2.5\n",
    )
    .unwrap();
    let cfg = write_config(
        tmp.path(),
        "ht.toml",
        &format!(
            "schema_version = 1\n[estimate.ht]\nn = 4\ngraph = {{ type = \"path\" }}\ntreat_prob = 0.5\n\
             contrast = [1, 4]\ndata = {:?}\n",
            tmp.path().join("obs.csv")
        ),
    );
    let o = tmp.path().join("o");
    let out = run(&["estimate", "ht"], &cfg, &o, &[], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(o.join("estimate_ht.json")).unwrap()).unwrap();
    // Node 0 treated alone (pi = 1/4); nodes 2 and 3 unexposed controls
    // (pi = 1/8 and 1/4).
    let expected = (3.0 / 0.25 - 1.5 / 0.125 - 2.5 / 0.25) / 4.0;
    assert!((v["value"].as_f64().unwrap() - expected).abs() < 1e-12, "{v}");
}

#[test]
fn info_reports_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIAGNOSE);
    let out = affclt(&["info", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config_hash"], config_hash(&cfg).as_str());
    assert_eq!(v["tool_version"], affclt::VERSION);
}

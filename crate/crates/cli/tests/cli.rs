use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[synth.stepped]
density_per_um3 = 2e-4
amplifications = [1.0, 1.5, 1.95]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crackfield"));
    c.arg("--quiet");
    for (k, _) in std::env::vars() {
        if k.starts_with("CRACKFIELD__") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert_eq!(
        code(&o),
        0,
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn output_hashes(dir: &Path) -> BTreeMap<String, String> {
    let m = manifest(dir);
    let mut out = BTreeMap::new();
    for st in m["stages"].as_array().unwrap() {
        for (p, h) in st["outputs"].as_object().unwrap() {
            out.insert(p.clone(), h.as_str().unwrap().to_string());
        }
    }
    out
}

/// Every file under `dir` except manifests and cache entries, keyed by
/// relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, d: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if name == ".cache" || name == "run_manifest.json" || name == "config.toml" {
                continue;
            }
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn synth_affine_is_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "[synth.affine]\nn_particles = 500\n");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["--config", &cfg, "--out-dir", s(&a), "synth-affine"]);
    ok(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&b),
        "--threads",
        "3",
        "synth-affine",
    ]);
    let pa = std::fs::read(a.join("particles.csv")).unwrap();
    assert_eq!(pa, std::fs::read(b.join("particles.csv")).unwrap());
    assert!(pa.starts_with(b"id,Xx,Xy,Xz,xx,xy,xz,quality\n"));
    ok(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&b),
        "--seed",
        "7",
        "synth-affine",
    ]);
    assert_ne!(pa, std::fs::read(b.join("particles.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("out");

    let bad = write_config(t.path(), "[material]\nmu = 3.0\n");
    let o = run(&["--config", &bad, "--out-dir", s(&out), "synth-affine"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`mu`"));

    let o = bin()
        .args(["--out-dir", s(&out), "synth-affine"])
        .env("CRACKFIELD__MATERIAL__MU_PA", "-5")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);

    let o = run(&[
        "--out-dir",
        s(&out),
        "gradient",
        s(&t.path().join("missing.csv")),
    ]);
    assert_eq!(code(&o), 4);

    let garbage = t.path().join("garbage.csv");
    std::fs::write(&garbage, "id,Xx\n1,2\n").unwrap();
    assert_eq!(
        code(&run(&["--out-dir", s(&out), "gradient", s(&garbage)])),
        4
    );

    let faces = t.path().join("faces.csv");
    std::fs::write(
        &faces,
        "# crack-faces tip_x_um=0 tip_y_um=0 tip_z_um=0\nface,x,y,z\n",
    )
    .unwrap();
    assert_eq!(
        code(&run(&["--out-dir", s(&out), "fit-ctod", s(&faces)])),
        5
    );
}

#[test]
fn strict_mode_fails_after_writing_outputs() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &format!("[run]\nstrict_invalid_fraction = 0.0\n{SMALL}"),
    );
    let out = t.path().join("out");
    ok(&["--config", &cfg, "--out-dir", s(&out), "synth-stepped"]);
    let particles = out.join("phantom-0/particles.csv");
    let g = t.path().join("g");
    ok(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&g),
        "gradient",
        s(&particles),
    ]);
    let o = run(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&g),
        "--strict",
        "gradient",
        s(&particles),
    ]);
    assert_eq!(code(&o), 6, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(g.join("defgrad.csv").exists());
    assert!(g.join("gradient_quality.json").exists());
}

#[test]
fn report_renders_fit_in_engineering_units() {
    let t = tempfile::tempdir().unwrap();
    let reg = t.path().join("regression.csv");
    std::fs::write(
        &reg,
        "quantity,value\nslope_per_m2,38400000\nintercept_j_per_m2,4.36\nr_squared,0.9999\nn_points,5\n",
    )
    .unwrap();
    let out = t.path().join("out");
    ok(&["--out-dir", s(&out), "report", s(&reg)]);
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("3.84 × 10^7 m^-2"), "{md}");
    assert!(md.contains("4.36 J/m^2"), "{md}");
    assert!(md.contains("| points | 5 |"), "{md}");
}

#[test]
fn pipeline_is_thread_count_invariant_and_cacheable() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), SMALL);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&a),
        "--threads",
        "1",
        "pipeline",
    ]);
    ok(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&b),
        "--threads",
        "8",
        "--cache",
        "pipeline",
    ]);
    let ha = output_hashes(&a);
    assert!(ha.contains_key("report.md") && ha.contains_key("phantom-2/fit.csv"));
    assert_eq!(ha, output_hashes(&b));

    ok(&["--config", &cfg, "--out-dir", s(&b), "--cache", "pipeline"]);
    let m = manifest(&b);
    let stages = m["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 1 + 4 * 3 + 3);
    assert!(stages.iter().all(|st| st["cached"] == true));
    assert_eq!(ha, output_hashes(&b));

    let report = std::fs::read_to_string(a.join("report.md")).unwrap();
    assert!(report.contains("× 10^7 m^-2"));
}

#[test]
fn pipeline_matches_manual_stage_chain() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), SMALL);
    let (p, m) = (t.path().join("pipeline"), t.path().join("manual"));
    ok(&["--config", &cfg, "--out-dir", s(&p), "pipeline"]);

    ok(&["--config", &cfg, "--out-dir", s(&m), "synth-stepped"]);
    let mut runs = Vec::new();
    for i in 0..3 {
        let label = format!("phantom-{i}");
        let d = m.join(&label);
        let base = ["--config", &cfg, "--out-dir", s(&d)];
        let arg = |f: &str| d.join(f).to_str().unwrap().to_string();
        ok(&[&base[..], &["gradient", &arg("particles.csv")]].concat());
        ok(&[&base[..], &["energy", &arg("defgrad.csv")]].concat());
        ok(&[
            &base[..],
            &[
                "region-energy",
                &arg("energy.csv"),
                "--region",
                &arg("region.toml"),
            ],
        ]
        .concat());
        ok(&[
            &base[..],
            &["fit-ctod", &arg("faces.csv"), "--label", &label],
        ]
        .concat());
        runs.push(d.to_str().unwrap().to_string());
    }
    let mut regress = vec!["--config", &cfg, "--out-dir", s(&m), "regress", "--runs"];
    regress.extend(runs.iter().map(String::as_str));
    ok(&regress);
    ok(&[
        "--config",
        &cfg,
        "--out-dir",
        s(&m),
        "report",
        s(&m.join("regression.csv")),
        "--points",
        s(&m.join("points.csv")),
        "--truth",
        s(&m.join("suite_truth.csv")),
    ]);

    let (tp, tm) = (tree(&p), tree(&m));
    assert_eq!(tp.keys().collect::<Vec<_>>(), tm.keys().collect::<Vec<_>>());
    for (k, v) in &tp {
        assert!(v == &tm[k], "{} differs", k.display());
    }
}

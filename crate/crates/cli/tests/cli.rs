use std::path::Path;
use std::process::{Command, Output};

fn polyrbf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyrbf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn polyrbf")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = polyrbf(dir, args);
    assert!(
        out.status.success(),
        "polyrbf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(dir: &Path, seed: &str) {
    ok(
        dir,
        &["--seed", seed, "simulate", "--dims", "5", "5", "8", "--out-dir", "sim"],
    );
}

const DATA: [&str; 8] = [
    "--dwi",
    "sim/dwi.nii",
    "--bvals",
    "sim/bvals",
    "--bvecs",
    "sim/bvecs",
    "--mask",
    "sim/mask.nii",
];

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "1");
    for f in [
        "dwi.nii",
        "truth.nii",
        "labels.nii",
        "mask.nii",
        "bvals",
        "bvecs",
        "spec.json",
    ] {
        assert!(tmp.path().join("sim").join(f).exists(), "missing {f}");
    }
    assert_eq!(json(&tmp.path().join("sim/spec.json"))["seed"], 1);
}

#[test]
fn fit_defaults_and_rerun_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "2");
    for out in ["a.prbf", "b.prbf"] {
        let report = format!("{out}.json");
        ok(dir, &[&["fit"], &DATA[..], &["-o", out, "--report", &report]].concat());
    }
    assert_eq!(
        std::fs::read(dir.join("a.prbf")).unwrap(),
        std::fs::read(dir.join("b.prbf")).unwrap()
    );
    let report = json(&dir.join("a.prbf.json"));
    assert_eq!(report["n"], 10);
    assert_eq!(report["k"], 4);
    assert_eq!(report["n_voxels"], 200);
    assert!(report["order_selection"].is_null());
}

#[test]
fn fit_predict_evaluate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "3");
    ok(dir, &[&["fit"], &DATA[..], &["-o", "fit.prbf"]].concat());
    ok(
        dir,
        &[
            "predict",
            "--fit",
            "fit.prbf",
            "--bvals",
            "sim/bvals",
            "--bvecs",
            "sim/bvecs",
            "-o",
            "pred.nii",
        ],
    );
    let out = ok(
        dir,
        &[
            "evaluate",
            "--pred",
            "pred.nii",
            "--truth",
            "sim/truth.nii",
            "--mask",
            "sim/mask.nii",
            "--bvals",
            "sim/bvals",
            "--bvecs",
            "sim/bvecs",
        ],
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_voxels"], 200);
    let mse = report["mse_log"].as_f64().unwrap();
    assert!(mse.is_finite() && mse > 0.0);
}

#[test]
fn automatic_order_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "4");
    std::fs::write(dir.join("model.json"), r#"{"N": 6, "K": "auto"}"#).unwrap();
    ok(
        dir,
        &[
            &["fit"],
            &DATA[..],
            &["--config", "model.json", "-o", "f.prbf", "--report", "r.json"],
        ]
        .concat(),
    );
    let report = json(&dir.join("r.json"));
    let selected = report["order_selection"]["selected"].as_u64().unwrap();
    assert_eq!(report["k"].as_u64().unwrap(), selected);
    assert!((1..=3).contains(&selected));
    assert_eq!(report["n"], 6);
}

#[test]
fn benchmark_is_reproducible_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "5");
    for threads in ["1", "3"] {
        let out = format!("summary{threads}.csv");
        let details = format!("details{threads}.csv");
        ok(
            dir,
            &[
                &["--seed", "7", "--threads", threads, "benchmark"],
                &DATA[..],
                &[
                    "--protocols",
                    "table1",
                    "--replications",
                    "2",
                    "--out",
                    &out,
                    "--details",
                    &details,
                ],
            ]
            .concat(),
        );
    }
    let a = std::fs::read_to_string(dir.join("summary1.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.join("summary3.csv")).unwrap());
    assert_eq!(
        std::fs::read(dir.join("details1.csv")).unwrap(),
        std::fs::read(dir.join("details3.csv")).unwrap()
    );
    let header = a.lines().next().unwrap();
    assert!(header.contains("Protocol-1") && header.contains("Protocol-6"));
    assert_eq!(a.lines().count(), 3);
    let details = std::fs::read_to_string(dir.join("details1.csv")).unwrap();
    assert_eq!(details.lines().count(), 1 + 6 * 2);
}

#[test]
fn harmonize_without_combat() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for (seed, name) in [("1", "s1"), ("2", "s2")] {
        ok(
            dir,
            &["--seed", seed, "simulate", "--dims", "4", "4", "8", "--out-dir", name],
        );
    }
    let entry = |name: &str, batch: &str| {
        serde_json::json!({
            "name": name,
            "dwi": format!("{name}/dwi.nii"),
            "bvals": format!("{name}/bvals"),
            "bvecs": format!("{name}/bvecs"),
            "mask": format!("{name}/mask.nii"),
            "batch": batch,
        })
    };
    let manifest = serde_json::json!({ "datasets": [entry("s1", "a"), entry("s2", "b")] });
    std::fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    ok(
        dir,
        &[
            "harmonize",
            "--manifest",
            "manifest.json",
            "--combat",
            "off",
            "--out-dir",
            "out",
        ],
    );
    for name in ["s1", "s2"] {
        for kind in ["original", "harmonized"] {
            assert!(dir.join(format!("out/maps/{name}_{kind}_fa.nii")).exists());
        }
        assert!(!dir.join(format!("out/maps/{name}_original_combat_fa.nii")).exists());
    }
    let provenance = json(&dir.join("out/provenance.json"));
    assert_eq!(provenance["datasets"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "6");
    let out = polyrbf(
        dir,
        &[
            "fit",
            "--dwi",
            "sim/dwi.nii",
            "--bvals",
            "sim/bvals",
            "--bvecs",
            "nowhere/bvecs",
            "-o",
            "x.prbf",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/bvecs"));
}

#[test]
fn invalid_input_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "7");
    std::fs::write(dir.join("short.bval"), "0 1000\n").unwrap();
    let out = polyrbf(
        dir,
        &[
            "fit",
            "--dwi",
            "sim/dwi.nii",
            "--bvals",
            "short.bval",
            "--bvecs",
            "sim/bvecs",
            "-o",
            "x.prbf",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = polyrbf(dir, &["--threads", "0", "simulate", "--out-dir", "t"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extrapolation_needs_opt_in() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "8");
    ok(dir, &[&["fit"], &DATA[..], &["-o", "fit.prbf"]].concat());
    std::fs::write(dir.join("hi.bval"), "0 5000\n").unwrap();
    std::fs::write(dir.join("hi.bvec"), "0 1\n0 0\n0 0\n").unwrap();
    let args = [
        "predict", "--fit", "fit.prbf", "--bvals", "hi.bval", "--bvecs", "hi.bvec", "-o", "p.nii",
    ];
    assert_eq!(polyrbf(dir, &args).status.code(), Some(2));
    ok(dir, &[&args[..], &["--allow-extrapolation"]].concat());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn krylov(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_krylov"))
        .current_dir(dir)
        .env("KRYLOV_CACHE_DIR", dir.join("cache"))
        .args(args)
        .output()
        .expect("spawn krylov")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_levels(dir: &Path) {
    let mut text = String::from("krylov-spectrum 1\nkind -\na -\nplacement -\nh -\nn_max 12\n");
    for k in 0..12 {
        text.push_str(&format!(
            "{:?}\n",
            (k as f64 + 1.0).powf(1.1) + 0.01 * (k * k) as f64
        ));
    }
    fs::write(dir.join("levels.txt"), text).unwrap();
}

const RUN: &[&str] = &[
    "--spectrum-file",
    "levels.txt",
    "--n-max",
    "12",
    "--samples",
    "40",
    "--ensembles",
    "GOE,UCP",
];

#[test]
fn run_fit_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_levels(d);

    let stdout = ok(&krylov(d, &[&["run", "--output", "out"], RUN].concat()));
    assert!(stdout.contains("GOE") && stdout.contains("UCP"), "{stdout}");
    for f in [
        "manifest.json",
        "sigma2-GOE.csv",
        "xx-UCP.csv",
        "logpsi-GOE.csv",
        "fits-UCP.json",
    ] {
        assert!(d.join("out").join(f).is_file(), "missing {f}");
    }

    let report = ok(&krylov(
        d,
        &[
            "fit",
            "--input",
            "out/sigma2-GOE.csv",
            "--model",
            "scaled_chi_square",
        ],
    ));
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["n_samples"], 40);
    assert!(json["params"]["k"].as_f64().unwrap() > 0.0);

    ok(&krylov(
        d,
        &[
            "export", "--run", "out", "--format", "json", "--dest", "json",
        ],
    ));
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("json/record.json")).unwrap()).unwrap();
    assert_eq!(record["ensembles"].as_array().unwrap().len(), 2);

    ok(&krylov(
        d,
        &["export", "--run", "out", "--format", "csv", "--dest", "csv"],
    ));
    assert_eq!(
        fs::read(d.join("csv/sigma2-GOE.csv")).unwrap(),
        fs::read(d.join("out/sigma2-GOE.csv")).unwrap()
    );
}

#[test]
fn config_file_round_trips_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_levels(d);

    ok(&krylov(
        d,
        &[
            &["run", "--output", "first", "--write-config", "run.conf"],
            RUN,
        ]
        .concat(),
    ));
    assert!(!d.join("first").exists());
    ok(&krylov(d, &["run", "--config", "run.conf"]));
    ok(&krylov(
        d,
        &[
            "run",
            "--config",
            "run.conf",
            "--output",
            "second",
            "--workers",
            "1",
        ],
    ));
    assert_eq!(
        fs::read(d.join("first/sigma2-UCP.csv")).unwrap(),
        fs::read(d.join("second/sigma2-UCP.csv")).unwrap()
    );
}

#[test]
fn sweep_reports_partial_failure_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_levels(d);
    let out = krylov(
        d,
        &[&["sweep", "--output", "sw", "--a-grid", "0.5,1.0"], RUN].concat(),
    );
    let stdout = ok(&out);
    assert!(
        stdout.contains("0.5000") && stdout.contains("1.0000"),
        "{stdout}"
    );
    assert!(d.join("sw/sweep.csv").is_file());
    assert!(d.join("sw/a-0.5-GOE/manifest.json").is_file());

    // equally spaced levels break down long before the default window
    let mut text = String::from("krylov-spectrum 1\nkind -\na -\nplacement -\nh -\nn_max 12\n");
    for k in 0..12 {
        text.push_str(&format!("{k}.0\n"));
    }
    fs::write(d.join("flat.txt"), text).unwrap();
    let out = krylov(
        d,
        &[
            "sweep",
            "--output",
            "bad",
            "--a-grid",
            "1.0",
            "--spectrum-file",
            "flat.txt",
            "--n-max",
            "12",
            "--samples",
            "5",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}

#[test]
fn spectrum_inspect_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_levels(d);
    let stdout = ok(&krylov(d, &["spectrum", "--inspect", "levels.txt"]));
    assert!(stdout.contains("levels 12"), "{stdout}");

    let out = krylov(d, &["run", "--samples", "lots"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--samples"));

    let out = krylov(d, &["run", "--config", "missing.conf"]);
    assert!(!out.status.success());
}

#[test]
fn spectrum_solves_once_then_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "spectrum", "--kind", "stadium", "--a", "0.5", "--n-max", "6", "--grid", "0.05", "--out",
        "s.txt",
    ];
    let first = krylov(d, &args);
    let levels = ok(&first);
    assert!(String::from_utf8_lossy(&first.stderr).contains("solved"));
    let second = krylov(d, &args);
    assert_eq!(ok(&second), levels);
    assert!(String::from_utf8_lossy(&second.stderr).contains("hit"));
    assert!(ok(&krylov(d, &["spectrum", "--inspect", "s.txt"])).contains("kind stadium"));
}

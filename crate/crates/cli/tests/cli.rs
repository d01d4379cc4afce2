use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn edssr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edssr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 32^3 phantom and its k=2 degradation; returns (hr, lr).
fn inputs(dir: &Path) -> (String, String) {
    let hr = dir.join("hr.nii");
    let lr = dir.join("lr.nii");
    let out = edssr(&["phantom", "--output", s(&hr), "--dims", "32,32,32", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = edssr(&["simulate-lr", "--input", s(&hr), "--output", s(&lr), "--k", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (s(&hr).to_string(), s(&lr).to_string())
}

const TINY: &[&str] = &[
    "--network.blocks",
    "1",
    "--network.features",
    "4",
    "--train.steps",
    "4",
    "--train.batch_size",
    "4",
    "--sampler.patch_size",
    "16",
    "--sampler.patches_per_slice",
    "2",
    "--output.snapshots",
    "false",
];

#[test]
fn help_succeeds_and_bad_arguments_exit_1() {
    assert_eq!(code(&edssr(&["--help"])), 0);
    assert_eq!(code(&edssr(&["pipeline", "--help"])), 0);
    assert_eq!(code(&edssr(&["no-such-command"])), 1);
    assert_eq!(code(&edssr(&["simulate-lr", "--k", "2"])), 1);
    let out = edssr(&["upsample", "--input", "/nonexistent.nii", "--output", "/tmp/x.nii"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn pipeline_runs_from_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (hr, lr) = inputs(dir.path());
    let cfg = dir.path().join("run.cfg");
    let out_dir = dir.path().join("out");
    fs::write(
        &cfg,
        format!("# test run\ninput={lr}\noutput={}\neval.reference={hr}\ntrain.steps=100\n", s(&out_dir)),
    )
    .unwrap();
    let mut args = vec!["pipeline", "--config", s(&cfg)];
    args.extend_from_slice(TINY);
    let out = edssr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("EDSSR") && stdout.contains("BSpline"), "{stdout}");
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "train.steps=4"), "{manifest}");
    assert!(out_dir.join("edssr.nii").is_file());
}

#[test]
fn validation_and_stage_failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (hr, lr) = inputs(dir.path());
    let out_dir = dir.path().join("out");

    let mut args = vec!["pipeline", "--input", hr.as_str(), "--output", s(&out_dir)];
    args.extend_from_slice(TINY);
    let out = edssr(&args);
    assert_eq!(code(&out), 1, "isotropic input should be refused");
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to super-resolve"));

    assert_eq!(code(&edssr(&["pipeline", "--input", lr.as_str(), "--train.stepz", "3"])), 1);
    assert_eq!(code(&edssr(&["pipeline", "--input", lr.as_str(), "--train.steps"])), 1);

    let mut args = vec!["pipeline", "--input", lr.as_str(), "--output", s(&out_dir)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--sampler.patch_size", "64"]);
    let out = edssr(&args);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("make-training"));
}

#[test]
fn subcommands_reproduce_the_pipeline_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let (hr, lr) = inputs(dir.path());
    let d = dir.path();
    let out_dir = d.join("out");
    let mut args = vec!["pipeline", "--input", lr.as_str(), "--output", s(&out_dir), "--seed", "9"];
    args.extend_from_slice(TINY);
    assert_eq!(code(&edssr(&args)), 0);

    let (iso, p, w) = (d.join("iso.nii"), d.join("p.bin"), d.join("w.bin"));
    let (c, sg, o) = (d.join("c.nii"), d.join("s.nii"), d.join("o.nii"));
    let steps: Vec<Vec<&str>> = vec![
        vec!["upsample", "--input", &lr, "--output", s(&iso)],
        vec![
            "make-training", "--input", s(&iso), "--output", s(&p), "--k", "2", "--patch-size", "16",
            "--patches-per-slice", "2", "--seed", "9",
        ],
        vec![
            "train", "--patches", s(&p), "--output", s(&w), "--blocks", "1", "--features", "4", "--steps", "4",
            "--batch-size", "4", "--seed", "9",
        ],
        vec!["apply", "--input", s(&iso), "--weights", s(&w), "--coronal-out", s(&c), "--sagittal-out", s(&sg)],
        vec!["fuse", "--inputs", s(&c), s(&sg), "--output", s(&o)],
    ];
    for step in steps {
        let out = edssr(&step);
        assert_eq!(code(&out), 0, "{:?}: {}", step, String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(out_dir.join("edssr.nii")).unwrap(), fs::read(&o).unwrap());

    let table = d.join("t.txt");
    let out = edssr(&[
        "evaluate", "--reference", &hr, "--method", &format!("EDSSR={}", s(&o)), "--method",
        &format!("Input={}", s(&iso)), "--table", s(&table),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&table).unwrap().contains("EDSSR"));
}

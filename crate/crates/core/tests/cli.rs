use std::path::Path;
use std::process::{Command, Output};

use beable_csl::harness::output::{moments_from_records, read_trajectories, MomentsFile};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beable-csl"))
}

fn run(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args(args).current_dir(dir);
    match threads {
        Some(t) => c.env("BEABLE_CSL_THREADS", t),
        None => c.env_remove("BEABLE_CSL_THREADS"),
    };
    c.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_PHASE_SPACE: &str = r#"{
    "scenario": "phase_space_fokker_planck",
    "n_sites": 128,
    "trajectories": 400,
    "t_final": 1.0,
    "checkpoints": 5
}"#;

#[test]
fn scenarios_lists_all_seven() {
    let out = bin().arg("scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("exercises:")).count(), 7);
    for name in ["bohm_limit", "decoherence_rate", "csl_momentum_diffusion"] {
        assert!(text.contains(name));
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_PHASE_SPACE);
    let mut outputs = Vec::new();
    for (k, threads) in [None, Some("1"), Some("3")].into_iter().enumerate() {
        let out_dir = format!("out{k}");
        let o = run(
            &["run", &cfg, "--seed", "11", "--out-dir", &out_dir],
            dir.path(),
            threads,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let d = dir.path().join(&out_dir);
        outputs.push((
            std::fs::read(d.join("trajectories.csv")).unwrap(),
            std::fs::read(d.join("histograms.json")).unwrap(),
        ));
    }
    assert!(outputs.iter().all(|o| o == &outputs[0]));
    let o = run(
        &["run", &cfg, "--seed", "12", "--out-dir", "other"],
        dir.path(),
        None,
    );
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(dir.path().join("other/trajectories.csv")).unwrap(),
        outputs[0].0
    );
}

#[test]
fn csv_moments_match_the_reported_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_PHASE_SPACE);
    let o = run(
        &["run", &cfg, "--out-dir", "out", "--trajectories", "250"],
        dir.path(),
        None,
    );
    assert!(o.status.success());
    let records = read_trajectories(&dir.path().join("out/trajectories.csv")).unwrap();
    assert_eq!(records.len(), 250 * 6);
    let reported: MomentsFile =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/moments.json")).unwrap())
            .unwrap();
    let recomputed = moments_from_records(&records).unwrap();
    assert_eq!(recomputed.len(), reported.times.len());
    for (k, (t, m)) in recomputed.iter().enumerate() {
        assert_eq!(*t, reported.times[k]);
        let want = [
            reported.mean_x[k],
            reported.mean_p[k],
            reported.var_x[k],
            reported.var_p[k],
            reported.cov_xp[k],
        ];
        for (a, b) in m.values().iter().zip(want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn moments_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"scenario": "csl_momentum_diffusion", "trajectories": 100}"#,
    );
    let o = run(&["moments", &cfg], dir.path(), None);
    assert!(o.status.success());
    let m: MomentsFile = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m.config.trajectories, 100);
    assert!(m.fit_results.contains_key("var_p_slope"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"scenario": "bohm_limit", "lamda": 1}"#,
    );
    assert_eq!(run(&["run", &bad], dir.path(), None).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(
        run(&["run", missing.to_str().unwrap()], dir.path(), None)
            .status
            .code(),
        Some(1)
    );
    let threads = write_config(
        dir.path(),
        "ok.json",
        r#"{"scenario": "csl_momentum_diffusion", "trajectories": 10}"#,
    );
    assert_eq!(
        run(&["run", &threads], dir.path(), Some("zero"))
            .status
            .code(),
        Some(1)
    );
    // λ·dt far beyond the stable range of the collapse step.
    let unstable = write_config(
        dir.path(),
        "unstable.json",
        r#"{"scenario": "decoherence_rate", "trajectories": 4, "dt": 0.5, "t_final": 5}"#,
    );
    let o = run(&["run", &unstable], dir.path(), None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
    assert_eq!(
        run(&["verify", "--only", "9"], dir.path(), None)
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn verify_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["verify", "--only", "7,8", "--out-dir", "v"],
        dir.path(),
        None,
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert_eq!(
        stdout
            .lines()
            .filter(|l| l.starts_with("PASS criterion"))
            .count(),
        2
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("v/verify_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 2);
}

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[attack]
sample_count = 40
candidates_per_class = 6
final_count = 5
steps = 4
mc_samples = 4
target_classes = [0, 6]

[output]
images = false
"#;

fn modinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modinv")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.join("run");
    (cfg.display().to_string(), out.display().to_string())
}

#[test]
fn attack_then_verify_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(tmp.path());

    let o = modinv(&["attack", "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("class,acc_at_1,"));
    // Two target classes plus the aggregate row.
    assert_eq!(lines.count(), 3);
    assert!(Path::new(&out).join("metrics.csv").exists());

    let o = modinv(&["verify", "--out", &out]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));

    // Recomputing from the stored features reproduces the printed report.
    let o = modinv(&["metrics", "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), csv);

    std::fs::write(Path::new(&out).join("metrics.csv"), "tampered\n").unwrap();
    let o = modinv(&["verify", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(tmp.path());
    let a = modinv(&["attack", "--config", &cfg, "--out", &format!("{out}-a")]);
    let b = modinv(&["attack", "--config", &cfg, "--out", &format!("{out}-b"), "--seed", "6"]);
    assert!(a.status.success() && b.status.success());
    let ma = std::fs::read_to_string(format!("{out}-a/config.toml")).unwrap();
    let mb = std::fs::read_to_string(format!("{out}-b/config.toml")).unwrap();
    assert!(ma.contains("seed = 5"));
    assert!(mb.contains("seed = 6"));
}

#[test]
fn ablate_single_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(tmp.path());
    let o = modinv(&["ablate", "--presets", "standard", "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(Path::new(&out).join("ablation.csv")).unwrap();
    assert_eq!(table, stdout(&o));
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("standard,"));
}

#[test]
fn unknown_preset_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(tmp.path());
    let o = modinv(&["ablate", "--presets", "standard,bogus", "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("unknown preset `bogus`"), "{err}");
    assert!(err.contains("no_final_selection"), "{err}");
    assert!(!Path::new(&out).join("ablation.csv").exists());
}

#[test]
fn missing_and_invalid_configs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let o = modinv(&["attack", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[attack]\nsteps = -3\nwhat = 1\n").unwrap();
    let o = modinv(&["attack", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("attack.what"), "{}", stderr(&o));
}

#[test]
fn verify_without_a_run_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = modinv(&["verify", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn diagnose_writes_gradient_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(tmp.path());
    let o = modinv(&["diagnose", "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("poincare:") && text.contains("cross_entropy:"), "{text}");
    let curves = std::fs::read_to_string(Path::new(&out).join("gradients.csv")).unwrap();
    // Header plus one row per step and loss.
    assert_eq!(curves.lines().count(), 1 + 2 * 4);
}

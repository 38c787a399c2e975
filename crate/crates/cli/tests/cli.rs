use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bdris() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bdris"));
    c.env_remove("BDRIS_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SNR: &str = r#"
schema = 1
name = "small"
drops = 5
seed = 7

[system]
n = 3
k = 3
m = 8
t = 6

[sweep]
snr_db = [10.0, 20.0]
t_values = [4, 6]

[[sweep.topologies]]
groups = 1
t = 6

[[sweep.topologies]]
groups = 2
t = 8
"#;

const SMALL_ORACLE: &str = r#"
schema = 1
name = "small-oracle"
drops = 4
seed = 3

[system]
n = 3
k = 3
m = 8
t = 6
q = 8
p = 3

[sweep]
f_n = [0.0025, 0.01]
downlink_snr_db = [10.0, 20.0]

[predictor]
orders = [4]
history = 20
horizon = 3
bank = [0.0025, 0.01]
bank_order = 8
selection = "oracle"

[beamforming]
rounds = 10
"#;

#[test]
fn overhead_reproduces_six_row_table() {
    let o = run(bdris().args(["overhead", "--config"]).arg(configs().join("overhead_table.toml")));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let conv = ["2.56e2", "1.024e3", "4.096e3", "1.28e2", "5.12e2", "2.048e3"];
    let coef = ["21", "37", "79", "24", "42", "86"];
    let red = [94.95, 97.78, 98.81, 88.46, 94.95, 97.42];
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[4], coef[i]);
        assert_eq!(r[5], conv[i]);
        let got: f64 = r[7].parse().unwrap();
        assert!((got - red[i]).abs() <= 0.05, "row {i}: {got}");
    }
}

#[test]
fn validate_rejects_unidentifiable_config() {
    let o = run(bdris().args(["sweep", "--validate", "--config"]).arg(configs().join("unidentifiable.toml")));
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("M <= min(N*T, K*T)"), "{msg}");
    assert!(o.stdout.is_empty());
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["overhead_table", "nmse_vs_snr", "nmse_vs_t", "prediction", "sumrate"] {
        let o = run(bdris().args(["sweep", "--validate", "--config"]).arg(configs().join(format!("{name}.toml"))));
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(o.stdout.is_empty());
    }
}

#[test]
fn missing_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = run(bdris().args(["estimate", "--config", "/no/such/file.toml", "--output"]).arg(&out));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("cannot read"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn malformed_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema = 1\ndrops = 0\n").unwrap();
    let out = dir.path().join("out.csv");
    let o = run(bdris().args(["estimate", "--config"]).arg(&cfg).arg("--output").arg(&out));
    assert!(!o.status.success());
    assert!(!out.exists());

    fs::write(&cfg, "schema = 1\nbogus_key = 3\n").unwrap();
    let o = run(bdris().args(["estimate", "--config"]).arg(&cfg).arg("--output").arg(&out));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));
    assert!(!out.exists());

    fs::write(&cfg, "schema = 99\n").unwrap();
    let o = run(bdris().args(["estimate", "--config"]).arg(&cfg));
    assert!(!o.status.success());
}

#[test]
fn train_cnn_requires_output() {
    let o = run(bdris().args(["train-cnn"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--output"));
}

fn csv_at(cmd: &str, cfg: &Path, dir: &Path, tag: &str, extra: &[&str], threads_env: Option<&str>) -> Vec<u8> {
    let out = dir.join(format!("{cmd}-{tag}.csv"));
    let mut c = bdris();
    c.arg(cmd).arg("--config").arg(cfg).arg("--output").arg(&out).args(extra);
    if let Some(t) = threads_env {
        c.env("BDRIS_THREADS", t);
    }
    let o = run(&mut c);
    assert!(o.status.success(), "{cmd} {tag}: {}", stderr(&o));
    assert!(o.stdout.is_empty());
    fs::read(&out).unwrap()
}

#[test]
fn estimate_and_sweep_are_parallelism_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_SNR).unwrap();
    for cmd in ["estimate", "sweep"] {
        let one = csv_at(cmd, &cfg, dir.path(), "p1", &["--parallelism", "1"], None);
        let two = csv_at(cmd, &cfg, dir.path(), "p2", &["--parallelism", "2"], None);
        let env = csv_at(cmd, &cfg, dir.path(), "env", &[], Some("3"));
        assert_eq!(one, two, "{cmd}");
        assert_eq!(one, env, "{cmd}");
        assert!(one.len() > 40);
    }
    let text = String::from_utf8(csv_at("estimate", &cfg, dir.path(), "hdr", &["--parallelism", "1"], None)).unwrap();
    assert_eq!(text.lines().next().unwrap(), "groups,t,snr_db,bals_nmse,ls_nmse,ls_pilots,drops");
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn seed_and_drops_flags_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_SNR).unwrap();
    let base = csv_at("estimate", &cfg, dir.path(), "a", &[], None);
    let seeded = csv_at("estimate", &cfg, dir.path(), "b", &["--seed", "8"], None);
    let fewer = csv_at("estimate", &cfg, dir.path(), "c", &["--drops", "2"], None);
    assert_ne!(base, seeded);
    assert_ne!(base, fewer);
    assert!(String::from_utf8(fewer).unwrap().lines().nth(1).unwrap().ends_with(",2"));
}

#[test]
fn predict_and_sumrate_are_parallelism_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("oracle.toml");
    fs::write(&cfg, SMALL_ORACLE).unwrap();
    for cmd in ["predict", "sumrate"] {
        let one = csv_at(cmd, &cfg, dir.path(), "p1", &["--parallelism", "1"], None);
        let two = csv_at(cmd, &cfg, dir.path(), "p2", &["--parallelism", "2"], None);
        assert_eq!(one, two, "{cmd}");
    }
}

#[test]
fn train_cnn_then_predict_with_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cnn.toml");
    let text = SMALL_ORACLE.replace("selection = \"oracle\"", "selection = \"cnn\"")
        + "\n[cnn]\nper_class = 4\nval_per_class = 2\ntest_per_class = 2\nv = 8\n\n[cnn.net]\nclasses = 2\n\n[cnn.train]\nmax_epochs = 2\nbatch = 4\n";
    fs::write(&cfg, text).unwrap();
    let weights = dir.path().join("w.bin");
    let o = run(bdris().arg("train-cnn").arg("--config").arg(&cfg).arg("--output").arg(&weights));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(weights.exists());

    let out = dir.path().join("pred.csv");
    let o = run(bdris().arg("predict").arg("--config").arg(&cfg).arg("--model").arg(&weights).arg("--output").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.contains("CNN-AR"));

    let o = run(bdris().arg("predict").arg("--config").arg(&cfg).arg("--model").arg(dir.path().join("absent.bin")));
    assert!(!o.status.success());
}

#[test]
fn complexity_table_has_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cx.toml");
    fs::write(&cfg, "schema = 1\n[overhead]\nmeasure_m = [8, 16]\niterations = 4\nmeasure_t = 20\n").unwrap();
    let o = run(bdris().args(["overhead", "--complexity", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "scheme,m,t,iterations,model_flops,measured_flops");
    assert!(text.lines().count() >= 5);
}

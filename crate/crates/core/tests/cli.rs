use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
M = 8
L = 4
K = 2
m_bar = 4
snr_levels_db = 20
realizations = 8
noisy_copies = 2
conv_layers = 2
filters = 4
fc_units = 16
mode = federated
rounds = 3
learning_rate = 0.001
batch_size = 8
trials = 10
eval_snr_db = 10,20
eval_m_bar = 4
covariance_draws = 200
seed = 3
";

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Writes `base` plus `extra` overrides and points every output into `dir`.
fn write_config(dir: &Path, name: &str, base: &str, extra: &str) -> PathBuf {
    let out = dir.display();
    let text = format!(
        "{base}\n{extra}\n\
         dataset = {out}/dataset.bin\n\
         checkpoint = {out}/model.ckpt\n\
         train_log = {out}/train_log.csv\n\
         results = {out}/results.csv\n\
         overhead = {out}/overhead.csv\n"
    );
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn irsfl(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irsfl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("spawn irsfl")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Data rows of a CSV whose first non-comment line is the column header.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn small_trained(extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL, extra);
    ok(irsfl(&["generate"], &cfg));
    ok(irsfl(&["train"], &cfg));
    (dir, cfg)
}

#[test]
fn generate_desk_reports_960_samples() {
    let dir = TempDir::new().unwrap();
    let desk = fs::read_to_string(configs_dir().join("desk.cfg")).unwrap();
    let cfg = write_config(dir.path(), "desk.cfg", &desk, "");
    let stdout = ok(irsfl(&["generate"], &cfg));
    assert!(stdout.contains("samples 960"), "{stdout}");
    for k in 0..4 {
        assert!(stdout.contains(&format!("user {k}: 240")), "{stdout}");
    }
}

#[test]
fn generate_is_byte_identical_for_one_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ca = write_config(a.path(), "c.cfg", SMALL, "");
    let cb = write_config(b.path(), "c.cfg", SMALL, "");
    ok(irsfl(&["generate"], &ca));
    ok(irsfl(&["generate"], &cb));
    let da = fs::read(a.path().join("dataset.bin")).unwrap();
    let db = fs::read(b.path().join("dataset.bin")).unwrap();
    assert_eq!(da, db);

    ok(irsfl(&["generate", "--seed", "4"], &cb));
    assert_ne!(da, fs::read(b.path().join("dataset.bin")).unwrap());
}

#[test]
fn zero_realizations_fail_validation() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL, "realizations = 0");
    let out = irsfl(&["generate"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("realizations"));
    assert!(!dir.path().join("dataset.bin").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL, "pilots = 4");
    let out = irsfl(&["overhead"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pilots"));
}

#[test]
fn missing_files_exit_with_io_code() {
    let dir = TempDir::new().unwrap();
    let out = irsfl(&["generate"], &dir.path().join("absent.cfg"));
    assert_eq!(out.status.code(), Some(3));

    let cfg = write_config(dir.path(), "c.cfg", SMALL, "");
    let out = irsfl(&["train"], &cfg);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn geometry_mismatch_is_a_conflict() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL, "");
    ok(irsfl(&["generate"], &cfg));
    let other = write_config(dir.path(), "other.cfg", SMALL, "m_bar = 8");
    let out = irsfl(&["train"], &other);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m_bar"));
}

#[test]
fn exploding_training_exits_with_numeric_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL, "learning_rate = 1e30\nrounds = 20");
    ok(irsfl(&["generate"], &cfg));
    let out = irsfl(&["train"], &cfg);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn one_round_writes_one_row() {
    let (dir, _) = small_trained("rounds = 1");
    let rows = csv_rows(&dir.path().join("train_log.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
}

#[test]
fn train_log_echo_parses_back() {
    let (dir, _) = small_trained("");
    let text = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let echoed = irsfl::config::ExperimentConfig::from_echo(&text).unwrap();
    assert_eq!(echoed.geometry.m, 8);
    assert_eq!(echoed.train.rounds, 3);
    assert_eq!(echoed.seed, 3);
    let header: String = text.lines().take_while(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    assert_eq!(echoed.echo(), header);
}

#[test]
fn evaluate_rows_cover_every_snr() {
    let (dir, cfg) = small_trained("");
    ok(irsfl(&["evaluate"], &cfg));
    let rows = csv_rows(&dir.path().join("results.csv"));
    for method in ["cnn", "ls", "lmmse"] {
        let snrs: Vec<&str> = rows.iter().filter(|r| r[0] == method).map(|r| r[1].as_str()).collect();
        assert_eq!(snrs, ["10", "20"], "{method}");
    }
    for r in &rows {
        let nmse: f64 = r[3].parse().unwrap();
        assert!(nmse.is_finite() && nmse >= 0.0);
        assert_eq!(r[4], "10");
    }
}

#[test]
fn oracle_rows_are_zero() {
    let (dir, cfg) = small_trained("");
    ok(irsfl(&["evaluate", "--oracle"], &cfg));
    let rows = csv_rows(&dir.path().join("results.csv"));
    let oracle: Vec<_> = rows.iter().filter(|r| r[0] == "oracle").collect();
    assert_eq!(oracle.len(), 2);
    for r in oracle {
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn ls_with_all_pilots_is_exact_without_noise() {
    let (dir, _) = small_trained("");
    let eval = write_config(dir.path(), "eval.cfg", SMALL, "eval_snr_db = inf\neval_m_bar = 8");
    ok(irsfl(&["evaluate"], &eval));
    let rows = csv_rows(&dir.path().join("results.csv"));
    let ls = rows.iter().find(|r| r[0] == "ls").expect("ls row");
    assert_eq!(ls[2], "8");
    assert!(ls[3].parse::<f64>().unwrap() < 1e-12, "{ls:?}");
    assert!(!rows.iter().any(|r| r[0] == "cnn"), "model was trained for m_bar = 4");
}

#[test]
fn overhead_full_scale_headline_numbers() {
    let dir = TempDir::new().unwrap();
    let full = fs::read_to_string(configs_dir().join("full.cfg")).unwrap();
    let cfg = write_config(dir.path(), "full.cfg", &full, "");
    let stdout = ok(irsfl(&["overhead"], &cfg));
    assert!(stdout.contains("parameters (P)  600192"), "{stdout}");
    let row = &csv_rows(&dir.path().join("overhead.csv"))[0];
    assert_eq!(row[0], "600192");
    assert_eq!(row[2], "768000");
    assert_eq!(row[3], "11182080000");
    assert_eq!(row[4], "960307200");
    let ratio: f64 = row[5].parse().unwrap();
    assert!((11.5..=12.0).contains(&ratio));
}

#[test]
fn overhead_desk_matches_hand_arithmetic() {
    let dir = TempDir::new().unwrap();
    let desk = fs::read_to_string(configs_dir().join("desk.cfg")).unwrap();
    let cfg = write_config(dir.path(), "desk.cfg", &desk, "");
    ok(irsfl(&["overhead"], &cfg));
    let row = &csv_rows(&dir.path().join("overhead.csv"))[0];

    // 3 conv layers, 3 input channels, 16 filters, 3x3 kernels; FC term kept at rate 1/2.
    let p: u64 = 3 * 3 * 16 * 9 + 16 * 9 * 256 / 2;
    // Each sample ships a 3 x 9 x 8 input and a 2 x 16 x 9 label.
    let t_cl: u64 = 960 * (3 * 9 * 8 + 2 * 16 * 9);
    let t_fl: u64 = 2 * p * 240 * 4;
    assert_eq!(row[0], p.to_string());
    assert_eq!(row[2], "960");
    assert_eq!(row[3], t_cl.to_string());
    assert_eq!(row[4], t_fl.to_string());
}

fn log_columns(path: &Path) -> Vec<[f64; 3]> {
    csv_rows(path)
        .iter()
        .map(|r| [r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap()])
        .collect()
}

#[test]
fn single_user_federated_log_matches_full_batch_gd() {
    let common = "K = 1\nrounds = 10\nmomentum = 0\nlearning_rate = 0.01\ndropout = off\n";
    let fl = TempDir::new().unwrap();
    let cfg = write_config(fl.path(), "c.cfg", SMALL, &format!("{common}mode = federated\nlocal_batch = full"));
    ok(irsfl(&["generate"], &cfg));
    ok(irsfl(&["train"], &cfg));

    let cl = TempDir::new().unwrap();
    let cfg = write_config(cl.path(), "c.cfg", SMALL, &format!("{common}mode = centralized\nbatch_size = 100000"));
    ok(irsfl(&["generate"], &cfg));
    ok(irsfl(&["train"], &cfg));

    let a = log_columns(&fl.path().join("train_log.csv"));
    let b = log_columns(&cl.path().join("train_log.csv"));
    assert_eq!(a.len(), 10);
    assert_eq!(b.len(), 10);
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{ra:?} vs {rb:?}");
        }
    }
}

#[test]
fn centralized_desk_loss_trends_down() {
    let dir = TempDir::new().unwrap();
    let desk = fs::read_to_string(configs_dir().join("desk.cfg")).unwrap();
    // 20 epochs are ~460 steps, twice the federated schedule; at the federated
    // rate the loss reaches its dropout noise floor before epoch 20.
    let cfg = write_config(
        dir.path(),
        "desk.cfg",
        &desk,
        "mode = centralized\nrounds = 20\nlearning_rate = 0.0001",
    );
    ok(irsfl(&["generate"], &cfg));
    ok(irsfl(&["train"], &cfg));
    let loss: Vec<f64> = log_columns(&dir.path().join("train_log.csv")).iter().map(|r| r[0]).collect();
    assert_eq!(loss.len(), 20);
    let smoothed: Vec<f64> = loss.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for pair in smoothed.windows(2) {
        assert!(pair[1] <= pair[0], "smoothed loss rose: {smoothed:?}");
    }
}

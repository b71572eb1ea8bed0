//! End-to-end tests of the `semcom` binary: exit codes, file outputs, and
//! command idempotence, all over synthetic data.

use semcom_core::data::synthetic;
use semcom_core::evaluation::load_records;
use std::path::{Path, PathBuf};
use std::process::Command;

fn semcom() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semcom"));
    // Keep the environment override from leaking into tests.
    cmd.env_remove("SEMCOM_DATASET_DIR");
    cmd
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("semcom-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_dataset(dir: &Path) {
    synthetic::write_dataset(dir, 20, 200, 77).unwrap();
}

#[test]
fn verify_fast_passes_and_writes_report() {
    let dir = tempdir("verify");
    let report = dir.join("report.txt");
    let out = semcom()
        .args(["verify", "--scale", "fast", "--report"])
        .arg(&report)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("suite_passed=true"), "{stdout}");
    assert!(stdout.contains("property=mixture_grid_argmax passed=true"));
    let persisted = std::fs::read_to_string(&report).unwrap();
    assert_eq!(persisted, stdout);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_rejects_unknown_scale_with_exit_2() {
    let out = semcom()
        .args(["verify", "--scale", "medium"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_without_dataset_root_exits_2_and_names_the_key() {
    let out = semcom()
        .args(["train", "--epochs-e2e", "0", "--epochs-decoder", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dataset_root"), "{stderr}");
}

#[test]
fn invalid_config_file_exits_2() {
    let dir = tempdir("badcfg");
    let cfg = dir.join("config.txt");
    std::fs::write(&cfg, "alpha = 1.5\n").unwrap();
    let out = semcom()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn zero_epoch_train_evaluates_an_untrained_model_at_chance() {
    let dir = tempdir("train0");
    let data = dir.join("data");
    write_dataset(&data);
    let out_dir = dir.join("out");
    let out = semcom()
        .args([
            "train",
            "--epochs-e2e",
            "0",
            "--epochs-decoder",
            "0",
            "--alpha",
            "0.75",
            "--beta",
            "0.25",
        ])
        .arg("--dataset-root")
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = load_records(&out_dir.join("results.txt")).unwrap();
    assert_eq!(records.len(), 1);
    assert!(
        (records[0].accuracy - 0.1).abs() <= 0.05,
        "accuracy {}",
        records[0].accuracy
    );
    assert_eq!(records[0].alpha, 0.75);
    assert_eq!(records[0].beta, 0.25);
    assert!(!records[0].noiseless);

    // Rerun: completed outputs are not duplicated.
    let out = semcom()
        .args([
            "train",
            "--epochs-e2e",
            "0",
            "--epochs-decoder",
            "0",
            "--alpha",
            "0.75",
            "--beta",
            "0.25",
        ])
        .arg("--dataset-root")
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(load_records(&out_dir.join("results.txt")).unwrap().len(), 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn train_with_baseline_records_a_noiseless_row() {
    let dir = tempdir("baseline");
    let data = dir.join("data");
    write_dataset(&data);
    let out_dir = dir.join("out");
    let out = semcom()
        .args([
            "train",
            "--epochs-e2e",
            "0",
            "--epochs-decoder",
            "0",
            "--baseline",
        ])
        .arg("--dataset-root")
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = load_records(&out_dir.join("results.txt")).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().any(|r| r.noiseless));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweep_writes_all_records_and_rerun_skips() {
    let dir = tempdir("sweep");
    let data = dir.join("data");
    write_dataset(&data);
    let cfg = dir.join("config.txt");
    std::fs::write(
        &cfg,
        format!(
            "dataset_root = {}\nout_dir = {}\nalphas = 0,1\nbetas = 0\n\
             epochs_phase1 = 0\nepochs_phase2 = 0\nbatch_size = 20\n",
            data.display(),
            dir.join("out").display()
        ),
    )
    .unwrap();
    let out = semcom()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = load_records(&dir.join("out").join("results.txt")).unwrap();
    assert_eq!(records.len(), 2);

    let out = semcom()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("skipping"), "{stderr}");
    assert_eq!(
        load_records(&dir.join("out").join("results.txt"))
            .unwrap()
            .len(),
        2
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

fn fake_record_line(alpha: f64, beta: f64, noiseless: bool) -> String {
    let accuracy = 0.45 + 0.3 * (1.0 - alpha) - 0.05 * beta;
    let psnr = 13.0 + 7.0 * alpha + beta;
    let ssim = 0.2 + 0.4 * alpha + 0.1 * beta;
    format!(
        "alpha={alpha} beta={beta} snr_db=3 n_users=4 channel_uses_per_user=50 seed=1 \
         accuracy={accuracy} psnr_db={psnr} ssim={ssim} epochs_phase1=30 epochs_phase2=30 \
         wall_time_s=10 noiseless={noiseless} config_hash=h{alpha}x{beta} ssim_cfg=11:1.5:0.01:0.03:1"
    )
}

#[test]
fn plot_renders_the_full_grid_with_baseline() {
    let dir = tempdir("plot");
    let results = dir.join("results.txt");
    let alphas = [
        0.0, 0.001, 0.25, 0.5, 0.75, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0,
    ];
    let betas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut lines: Vec<String> = Vec::new();
    for &a in &alphas {
        for &b in &betas {
            lines.push(fake_record_line(a, b, false));
        }
    }
    lines.push(fake_record_line(0.0, 0.0, true));
    std::fs::write(&results, lines.join("\n") + "\n").unwrap();

    let svg = dir.join("tradeoff.svg");
    let out = semcom()
        .args(["plot", "--results"])
        .arg(&results)
        .arg("--out")
        .arg(&svg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.contains("<svg"));
    for beta in [
        "beta = 0",
        "beta = 0.25",
        "beta = 0.5",
        "beta = 0.75",
        "beta = 1",
    ] {
        assert!(body.contains(beta), "legend entry {beta} missing");
    }
    assert!(body.contains("Classification accuracy"));
    assert!(body.contains("PSNR"));
    assert!(body.contains("baseline: perfect channel"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn plot_handles_a_single_record_and_rejects_empty_or_mixed_inputs() {
    let dir = tempdir("plotedge");
    let single = dir.join("single.txt");
    std::fs::write(&single, fake_record_line(0.5, 0.25, false) + "\n").unwrap();
    let out = semcom()
        .args(["plot", "--results"])
        .arg(&single)
        .arg("--out")
        .arg(dir.join("single.svg"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("single.svg").is_file());

    let empty = dir.join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = semcom()
        .args(["plot", "--results"])
        .arg(&empty)
        .arg("--out")
        .arg(dir.join("empty.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let mixed = dir.join("mixed.txt");
    let other = fake_record_line(0.5, 0.5, false).replace("ssim_cfg=11:1.5", "ssim_cfg=7:1.5");
    std::fs::write(
        &mixed,
        fake_record_line(0.25, 0.25, false) + "\n" + &other + "\n",
    )
    .unwrap();
    let out = semcom()
        .args(["plot", "--results"])
        .arg(&mixed)
        .arg("--out")
        .arg(dir.join("mixed.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn fetch_data_verifies_existing_files_offline() {
    let dir = tempdir("fetch");
    write_dataset(&dir);
    let out = semcom()
        .args(["fetch-data", "--verify-only", "--root"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("20 train / 200 test"), "{stdout}");

    let empty = dir.join("nothing");
    std::fs::create_dir_all(&empty).unwrap();
    let out = semcom()
        .args(["fetch-data", "--verify-only", "--root"])
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).unwrap();
}

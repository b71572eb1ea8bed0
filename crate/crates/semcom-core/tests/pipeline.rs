//! End-to-end integration over synthetic data: two-phase training, metric
//! evaluation, and the gradient-through-channel contract.

use semcom_core::data::{synthetic, Dataset, Split};
use semcom_core::evaluation::evaluate;
use semcom_core::training::Trainer;
use semcom_core::ExperimentConfig;

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("semcom-pipe-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn two_phase_run_produces_a_valid_record_and_resumes() {
    let dir = tempdir("e2e");
    synthetic::write_dataset(&dir, 40, 24, 5).unwrap();
    let train = Dataset::load(&dir, Split::Train).unwrap();
    let test = Dataset::load(&dir, Split::Test).unwrap();

    let experiment = ExperimentConfig {
        epochs_phase1: 1,
        epochs_phase2: 1,
        batch_size: 8,
        seed: 17,
        ..Default::default()
    };
    let config = experiment.train_config(0.75, 0.25);

    let run_dir = dir.join("run");
    let mut trainer = Trainer::new(config.clone(), &train).with_run_dir(&run_dir);
    let mut ckpt = trainer.train_two_phase().unwrap();
    assert_eq!(ckpt.epochs_phase1_done, 1);
    assert_eq!(ckpt.epochs_phase2_done, 1);
    assert!(run_dir.join("checkpoint.bin").is_file());
    assert!(run_dir.join("train_log.txt").is_file());

    let record = evaluate(&mut ckpt, &test, false).unwrap();
    record.validate().unwrap();
    assert_eq!(record.alpha, 0.75);
    assert_eq!(record.epochs_phase1, 1);

    // Re-running the trainer resumes from the finished checkpoint and does
    // not retrain (the log gains no lines).
    let log_len = std::fs::read_to_string(run_dir.join("train_log.txt"))
        .unwrap()
        .lines()
        .count();
    let mut trainer = Trainer::new(config, &train).with_run_dir(&run_dir);
    let _ = trainer.train_two_phase().unwrap();
    let log_len_after = std::fs::read_to_string(run_dir.join("train_log.txt"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(log_len, log_len_after, "completed run retrained on rerun");

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn gradients_flow_through_noisy_and_noiseless_channels() {
    // Zeroing the channel noise changes the loss value but not the
    // differentiability contract: gradients stay finite either way.
    let dir = tempdir("gradflow");
    synthetic::write_dataset(&dir, 10, 8, 6).unwrap();
    let train = Dataset::load(&dir, Split::Train).unwrap();

    let mut losses = Vec::new();
    for snr_db in [3.0, f64::INFINITY] {
        let experiment = ExperimentConfig {
            epochs_phase1: 1,
            epochs_phase2: 0,
            batch_size: 10,
            snr_db,
            seed: 23,
            ..Default::default()
        };
        let config = experiment.train_config(0.5, 0.5);
        let sink = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink2 = sink.clone();
        let mut trainer = Trainer::new(config, &train);
        trainer.on_epoch = Some(Box::new(move |log| {
            sink2.lock().unwrap().push(log.mean_total)
        }));
        let mut ckpt = trainer.train_phase1(None).unwrap();

        // Finite parameters after the update implies finite gradients flowed.
        use semcom_core::nn::Parameterized;
        assert!(ckpt.model.first_non_finite().is_none());
        let logged = sink.lock().unwrap().clone();
        assert!(logged[0].is_finite());
        losses.push(logged[0]);
    }
    assert_ne!(
        losses[0], losses[1],
        "noise level did not affect the loss value"
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

//! Test-set metrics (classification accuracy, PSNR, SSIM) and structured
//! results persistence.
//!
//! Evaluation runs the frozen system in evaluation mode over the full test
//! split with a fixed noise seed that is independent of the training seed,
//! so records for different `(alpha, beta)` pairs see identical noise. PSNR
//! and SSIM are computed per image and then averaged (the aggregate-MSE
//! alternative is one config flag away). The results file is UTF-8 with one
//! self-describing `key=value` record per line; appends replace the file
//! atomically.

use crate::channel::add_noise_in_place;
use crate::data::{partition_quadrants, Dataset};
use crate::error::{Error, Result};
use crate::models::SystemModel;
use crate::nn::Mode;
use crate::objective::{mse, mse_per_image, ssim_per_image, Images};
use crate::rng::{stream, STREAM_CHANNEL};
use crate::training::{Checkpoint, TrainConfig};
use ndarray::Array2;
use std::path::Path;

/// PSNR cap for (near-)identical images, where the MSE underflows.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

/// `10 log10(1 / mse)` under unit dynamic range, capped at
/// [`PSNR_CAP_DB`] when `mse < 1e-10`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR between two image tensors in dB.
pub fn psnr(s: &Images, v: &Images) -> Result<f64> {
    Ok(psnr_from_mse(mse(s, v)?))
}

/// Fraction of rows whose argmax equals the label; ties break toward the
/// lowest class index.
pub fn accuracy(probs: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    let (n, _) = probs.dim();
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        let mut best = 0usize;
        let mut best_val = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_val {
                best = j;
                best_val = v;
            }
        }
        if best == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// One experiment's metrics plus full configuration provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub alpha: f64,
    pub beta: f64,
    pub snr_db: f64,
    pub n_users: usize,
    pub channel_uses_per_user: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub wall_time_s: f64,
    /// True when the evaluation bypassed channel noise (the perfect-channel
    /// baseline).
    pub noiseless: bool,
    /// Hash of the training configuration that produced the checkpoint.
    pub config_hash: String,
    /// Compact SSIM window signature; plots refuse to mix different ones.
    pub ssim_cfg: String,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(Error::Argument(format!(
                "accuracy {} outside [0,1]",
                self.accuracy
            )));
        }
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(Error::Argument(format!(
                "ssim {} outside [-1,1]",
                self.ssim
            )));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        format!(
            "alpha={} beta={} snr_db={} n_users={} channel_uses_per_user={} seed={} \
             accuracy={} psnr_db={} ssim={} epochs_phase1={} epochs_phase2={} \
             wall_time_s={} noiseless={} config_hash={} ssim_cfg={}",
            self.alpha,
            self.beta,
            self.snr_db,
            self.n_users,
            self.channel_uses_per_user,
            self.seed,
            self.accuracy,
            self.psnr_db,
            self.ssim,
            self.epochs_phase1,
            self.epochs_phase2,
            self.wall_time_s,
            self.noiseless,
            self.config_hash,
            self.ssim_cfg
        )
    }

    pub fn parse_line(line: &str, lineno: usize) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                reason: format!("token {token:?} is not key=value"),
            })?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("duplicate key {k}"),
                });
            }
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::Parse {
                line: lineno,
                reason: format!("missing key {k}"),
            })
        };
        let f = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                line: lineno,
                reason: format!("bad number for {k}"),
            })
        };
        let u = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                line: lineno,
                reason: format!("bad integer for {k}"),
            })
        };
        let b = |k: &str| -> Result<bool> {
            get(k)?.parse().map_err(|_| Error::Parse {
                line: lineno,
                reason: format!("bad bool for {k}"),
            })
        };
        let known = [
            "alpha",
            "beta",
            "snr_db",
            "n_users",
            "channel_uses_per_user",
            "seed",
            "accuracy",
            "psnr_db",
            "ssim",
            "epochs_phase1",
            "epochs_phase2",
            "wall_time_s",
            "noiseless",
            "config_hash",
            "ssim_cfg",
        ];
        for k in map.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("unknown key {k}"),
                });
            }
        }
        let record = MetricsRecord {
            alpha: f("alpha")?,
            beta: f("beta")?,
            snr_db: f("snr_db")?,
            n_users: u("n_users")? as usize,
            channel_uses_per_user: u("channel_uses_per_user")? as usize,
            seed: u("seed")?,
            accuracy: f("accuracy")?,
            psnr_db: f("psnr_db")?,
            ssim: f("ssim")?,
            epochs_phase1: u("epochs_phase1")? as usize,
            epochs_phase2: u("epochs_phase2")? as usize,
            wall_time_s: f("wall_time_s")?,
            noiseless: b("noiseless")?,
            config_hash: get("config_hash")?,
            ssim_cfg: get("ssim_cfg")?,
        };
        record.validate().map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        Ok(record)
    }
}

/// Append one record, replacing the file atomically.
pub fn persist_record(record: &MetricsRecord, path: &Path) -> Result<()> {
    record.validate()?;
    let mut text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.push_str(&record.to_line());
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Load every record in the file.
pub fn load_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::parse_line(line, i + 1)?);
    }
    Ok(out)
}

/// Run the model over the full test split and compute the metrics record.
///
/// `noiseless = true` bypasses the channel noise (the perfect-channel
/// baseline); otherwise noise comes from a stream seeded by
/// `config.eval_seed`, independent of the training seed.
pub fn evaluate_model(
    model: &mut SystemModel,
    config: &TrainConfig,
    test: &Dataset,
    noiseless: bool,
    epochs_done: (usize, usize),
) -> Result<MetricsRecord> {
    if test.is_empty() {
        return Err(Error::Argument("empty test split".into()));
    }
    let start = std::time::Instant::now();
    let mut noise_rng = stream(config.eval_seed, STREAM_CHANNEL);
    let mut correct_weighted = 0.0f64;
    let mut psnr_acc = 0.0f64;
    let mut ssim_acc = 0.0f64;
    let mut mse_acc = 0.0f64;
    let mut count = 0usize;
    for batch in test.batches(config.batch_size, None) {
        let observations = partition_quadrants(&batch, config.channel.n_users)?;
        let obs_pixels: Vec<_> = observations.into_iter().map(|o| o.pixels).collect();
        let mut y = model.encode_all(&obs_pixels, Mode::Eval)?;
        if !noiseless {
            add_noise_in_place(
                y.as_slice_mut().unwrap(),
                config.channel.snr_db,
                &mut noise_rng,
            );
        }
        let v = model.decode_reconstruction(&y, Mode::Eval)?;
        let probs = model.decode_class(&y, Mode::Eval)?;

        let n = batch.len();
        correct_weighted += accuracy(&probs, &batch.labels)? * n as f64;
        for m in mse_per_image(&batch.pixels, &v)? {
            psnr_acc += psnr_from_mse(m);
            mse_acc += m;
        }
        ssim_acc += ssim_per_image(&batch.pixels, &v, &config.ssim)?
            .iter()
            .sum::<f64>();
        count += n;
    }
    let n = count as f64;
    let psnr_db = if config.psnr_per_image {
        psnr_acc / n
    } else {
        psnr_from_mse(mse_acc / n)
    };
    let record = MetricsRecord {
        alpha: config.alpha,
        beta: config.beta,
        snr_db: config.channel.snr_db,
        n_users: config.channel.n_users,
        channel_uses_per_user: config.channel.channel_uses_per_user,
        seed: config.seed,
        accuracy: correct_weighted / n,
        psnr_db,
        ssim: ssim_acc / n,
        epochs_phase1: epochs_done.0,
        epochs_phase2: epochs_done.1,
        wall_time_s: start.elapsed().as_secs_f64(),
        noiseless,
        config_hash: config.config_hash(),
        ssim_cfg: format!(
            "{}:{}:{}:{}:{}",
            config.ssim.window_size,
            config.ssim.window_sigma,
            config.ssim.k1,
            config.ssim.k2,
            config.ssim.dynamic_range
        ),
    };
    record.validate()?;
    Ok(record)
}

/// Evaluate a trained checkpoint (convenience wrapper).
pub fn evaluate(ckpt: &mut Checkpoint, test: &Dataset, noiseless: bool) -> Result<MetricsRecord> {
    let config = ckpt.config.clone();
    let epochs = (ckpt.epochs_phase1_done, ckpt.epochs_phase2_done);
    evaluate_model(&mut ckpt.model, &config, test, noiseless, epochs)
}

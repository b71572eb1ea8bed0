//! Two-phase end-to-end training and the `(alpha, beta)` sweep.
//!
//! Phase 1 trains all encoders and both decoders jointly on the weighted
//! total loss for `epochs_phase1` epochs, with a fresh channel-noise
//! realization per batch. Phase 2 freezes the encoders (evaluation-mode
//! forward, no gradient) and trains each decoder on its own objective --
//! the reconstruction loss for the image decoder, the cross-entropy for the
//! classifier -- which are independent of `alpha`. This guarantees both
//! decoders are trained even at the `alpha` endpoints, where one of the two
//! terms vanishes from the phase-1 objective.
//!
//! Checkpoints are written at epoch boundaries and capture parameters,
//! optimizer moments, batch-norm running statistics, the channel-noise
//! generator state, and the full training configuration; resuming from a
//! checkpoint and training one more step is bit-identical to an
//! uninterrupted run at the same step.

use crate::channel::{add_noise_in_place, ChannelConfig};
use crate::data::{partition_quadrants, Dataset};
use crate::error::{Error, Result};
use crate::models::SystemModel;
use crate::nn::{Mode, Optimizer, OptimizerKind, Param, Parameterized};
use crate::objective::{
    reconstruction_loss_with_grad, total_loss, LossBreakdown, LossWeights, SsimConfig,
    CROSS_ENTROPY_CLAMP,
};
use crate::rng::{stream, RngState, STREAM_CHANNEL};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eval_seed: u64,
    pub reinit_decoders_phase2: bool,
    pub psnr_per_image: bool,
    pub channel: ChannelConfig,
    pub ssim: SsimConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
        .validate()?;
        if self.batch_size < 1 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        // NaN must fail this check too, so avoid `<=`.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be > 0".into()));
        }
        self.channel.validate()?;
        if self.channel.n_users != 4 {
            return Err(Error::UnsupportedConfiguration(
                "training requires the 4-user quadrant layout".into(),
            ));
        }
        self.ssim.validate()?;
        Ok(())
    }

    /// Canonical `key=value` lines; the run identity.
    pub fn canonical_lines(&self) -> String {
        format!(
            "alpha={}\nbeta={}\nepochs_phase1={}\nepochs_phase2={}\nbatch_size={}\n\
             learning_rate={}\noptimizer={}\nseed={}\neval_seed={}\n\
             reinit_decoders_phase2={}\npsnr_per_image={}\nsnr_db={}\nn_users={}\n\
             channel_uses_per_user={}\nnoise_seed={}\nssim_window_size={}\n\
             ssim_window_sigma={}\nssim_k1={}\nssim_k2={}\nssim_dynamic_range={}\n",
            self.alpha,
            self.beta,
            self.epochs_phase1,
            self.epochs_phase2,
            self.batch_size,
            self.learning_rate,
            self.optimizer.as_str(),
            self.seed,
            self.eval_seed,
            self.reinit_decoders_phase2,
            self.psnr_per_image,
            self.channel.snr_db,
            self.channel.n_users,
            self.channel.channel_uses_per_user,
            self.channel.noise_seed,
            self.ssim.window_size,
            self.ssim.window_sigma,
            self.ssim.k1,
            self.ssim.k2,
            self.ssim.dynamic_range,
        )
    }

    fn from_canonical_lines(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing config key {k}")))
        };
        let f = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad number for {k}")))
        };
        let u = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad integer for {k}")))
        };
        let b = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad bool for {k}")))
        };
        Ok(TrainConfig {
            alpha: f("alpha")?,
            beta: f("beta")?,
            epochs_phase1: u("epochs_phase1")? as usize,
            epochs_phase2: u("epochs_phase2")? as usize,
            batch_size: u("batch_size")? as usize,
            learning_rate: f("learning_rate")?,
            optimizer: OptimizerKind::parse(&get("optimizer")?)
                .ok_or_else(|| Error::Checkpoint("bad optimizer kind".into()))?,
            seed: u("seed")?,
            eval_seed: u("eval_seed")?,
            reinit_decoders_phase2: b("reinit_decoders_phase2")?,
            psnr_per_image: b("psnr_per_image")?,
            channel: ChannelConfig {
                snr_db: f("snr_db")?,
                n_users: u("n_users")? as usize,
                channel_uses_per_user: u("channel_uses_per_user")? as usize,
                noise_seed: u("noise_seed")?,
            },
            ssim: SsimConfig {
                window_size: u("ssim_window_size")? as usize,
                window_sigma: f("ssim_window_sigma")?,
                k1: f("ssim_k1")?,
                k2: f("ssim_k2")?,
                dynamic_range: f("ssim_dynamic_range")?,
            },
        })
    }

    /// FNV-1a hash (hex) of the canonical lines; names the run directory.
    pub fn config_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.canonical_lines().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// One logged training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub phase: u8,
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_reconstruction: f64,
    pub mean_mse: f64,
    pub mean_ssim: f64,
    pub mean_cross_entropy: f64,
    pub wall_time_s: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "phase={} epoch={} total={} reconstruction={} mse={} ssim={} cross_entropy={} wall_time_s={}",
            self.phase,
            self.epoch,
            self.mean_total,
            self.mean_reconstruction,
            self.mean_mse,
            self.mean_ssim,
            self.mean_cross_entropy,
            self.wall_time_s
        )
    }
}

/// Complete training state at an epoch boundary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SystemModel,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    pub epochs_phase1_done: usize,
    pub epochs_phase2_done: usize,
    pub noise_rng: RngState,
}

/// Adapter exposing only the decoder parameters; phase 2 steps through this
/// so stale Adam moments cannot move frozen encoder weights.
struct DecodersOnly<'a>(&'a mut SystemModel);

impl Parameterized for DecodersOnly<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.0.recon_decoder.visit_params(f);
        self.0.class_decoder.visit_params(f);
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SEMCKPT1";

impl Checkpoint {
    pub fn fresh(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SystemModel::new(
            config.channel.n_users,
            config.channel.channel_uses_per_user,
            config.seed,
        );
        Ok(Checkpoint {
            model,
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            config: config.clone(),
            epochs_phase1_done: 0,
            epochs_phase2_done: 0,
            noise_rng: RngState::capture(&stream(config.seed, STREAM_CHANNEL)),
        })
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = std::io::BufWriter::new(file);
            self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    fn write_to(&mut self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let config_text = self.config.canonical_lines();
        w.write_all(&(config_text.len() as u64).to_le_bytes())?;
        w.write_all(config_text.as_bytes())?;
        w.write_all(&(self.epochs_phase1_done as u64).to_le_bytes())?;
        w.write_all(&(self.epochs_phase2_done as u64).to_le_bytes())?;
        w.write_all(&[match self.optimizer.kind {
            OptimizerKind::Adam => 0u8,
            OptimizerKind::Sgd => 1u8,
        }])?;
        for v in [
            self.optimizer.learning_rate,
            self.optimizer.beta1,
            self.optimizer.beta2,
            self.optimizer.epsilon,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.optimizer.step_count.to_le_bytes())?;
        w.write_all(&self.noise_rng.seed)?;
        w.write_all(&self.noise_rng.stream.to_le_bytes())?;
        w.write_all(&self.noise_rng.word_pos.to_le_bytes())?;

        let mut n_params = 0u64;
        self.model.visit_params(&mut |_| n_params += 1);
        w.write_all(&n_params.to_le_bytes())?;
        let mut io_result = Ok(());
        self.model.visit_params(&mut |p| {
            if io_result.is_err() {
                return;
            }
            io_result = (|| -> std::io::Result<()> {
                let name = p.name.as_bytes();
                w.write_all(&(name.len() as u32).to_le_bytes())?;
                w.write_all(name)?;
                let shape = p.value.shape();
                w.write_all(&(shape.len() as u32).to_le_bytes())?;
                for &d in shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for arr in [&p.value, &p.m, &p.v] {
                    for &x in arr.iter() {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Ok(())
            })();
        });
        io_result?;

        let mut n_buffers = 0u64;
        self.model.visit_buffers(&mut |_, _| n_buffers += 1);
        w.write_all(&n_buffers.to_le_bytes())?;
        let mut io_result = Ok(());
        self.model.visit_buffers(&mut |name, buf| {
            if io_result.is_err() {
                return;
            }
            io_result = (|| -> std::io::Result<()> {
                w.write_all(&(name.len() as u32).to_le_bytes())?;
                w.write_all(name.as_bytes())?;
                w.write_all(&(buf.len() as u64).to_le_bytes())?;
                for &x in buf.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
                Ok(())
            })();
        });
        io_result
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        Self::read_from(&mut r).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    fn read_from(r: &mut impl Read) -> std::result::Result<Self, Box<dyn std::error::Error>> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> std::io::Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let config_len = read_u64(r)? as usize;
        let mut config_bytes = vec![0u8; config_len];
        r.read_exact(&mut config_bytes)?;
        let config = TrainConfig::from_canonical_lines(std::str::from_utf8(&config_bytes)?)?;
        let epochs_phase1_done = read_u64(r)? as usize;
        let epochs_phase2_done = read_u64(r)? as usize;
        let mut kind_byte = [0u8; 1];
        r.read_exact(&mut kind_byte)?;
        let kind = match kind_byte[0] {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::Sgd,
            other => return Err(format!("unknown optimizer tag {other}").into()),
        };
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut dyn Read| -> std::io::Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut optimizer = Optimizer::new(kind, read_f64(r)?);
        optimizer.beta1 = read_f64(r)?;
        optimizer.beta2 = read_f64(r)?;
        optimizer.epsilon = read_f64(r)?;
        optimizer.step_count = read_u64(r)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let rng_stream = read_u64(r)?;
        let mut u128buf = [0u8; 16];
        r.read_exact(&mut u128buf)?;
        let noise_rng = RngState {
            seed,
            stream: rng_stream,
            word_pos: u128::from_le_bytes(u128buf),
        };

        let mut model = SystemModel::new(
            config.channel.n_users,
            config.channel.channel_uses_per_user,
            config.seed,
        );

        type ParamBlock = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>);
        let n_params = read_u64(r)?;
        let mut loaded: std::collections::HashMap<String, ParamBlock> =
            std::collections::HashMap::new();
        for _ in 0..n_params {
            let mut lenbuf = [0u8; 4];
            r.read_exact(&mut lenbuf)?;
            let mut name = vec![0u8; u32::from_le_bytes(lenbuf) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)?;
            r.read_exact(&mut lenbuf)?;
            let ndim = u32::from_le_bytes(lenbuf) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let count: usize = shape.iter().product();
            let read_block = |r: &mut dyn Read| -> std::io::Result<Vec<f64>> {
                let mut out = Vec::with_capacity(count);
                let mut buf = [0u8; 8];
                for _ in 0..count {
                    r.read_exact(&mut buf)?;
                    out.push(f64::from_le_bytes(buf));
                }
                Ok(out)
            };
            let value = read_block(r)?;
            let m = read_block(r)?;
            let v = read_block(r)?;
            loaded.insert(name, (shape, value, m, v));
        }
        let mut apply_err: Option<String> = None;
        model.visit_params(&mut |p| {
            if apply_err.is_some() {
                return;
            }
            match loaded.remove(&p.name) {
                None => apply_err = Some(format!("checkpoint is missing parameter {}", p.name)),
                Some((shape, value, m, v)) => {
                    if shape != p.value.shape() {
                        apply_err = Some(format!(
                            "shape mismatch for {}: checkpoint {:?}, model {:?}",
                            p.name,
                            shape,
                            p.value.shape()
                        ));
                        return;
                    }
                    p.value.as_slice_mut().unwrap().copy_from_slice(&value);
                    p.m.as_slice_mut().unwrap().copy_from_slice(&m);
                    p.v.as_slice_mut().unwrap().copy_from_slice(&v);
                }
            }
        });
        if let Some(e) = apply_err {
            return Err(e.into());
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(format!("checkpoint has unknown parameter {extra}").into());
        }

        let n_buffers = read_u64(r)?;
        let mut buffers: std::collections::HashMap<String, Vec<f64>> =
            std::collections::HashMap::new();
        for _ in 0..n_buffers {
            let mut lenbuf = [0u8; 4];
            r.read_exact(&mut lenbuf)?;
            let mut name = vec![0u8; u32::from_le_bytes(lenbuf) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)?;
            let len = read_u64(r)? as usize;
            let mut out = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                out.push(f64::from_le_bytes(buf));
            }
            buffers.insert(name, out);
        }
        let mut apply_err: Option<String> = None;
        model.visit_buffers(&mut |name, buf| {
            if apply_err.is_some() {
                return;
            }
            match buffers.remove(name) {
                None => apply_err = Some(format!("checkpoint is missing buffer {name}")),
                Some(values) if values.len() == buf.len() => buf.copy_from_slice(&values),
                Some(values) => {
                    apply_err = Some(format!(
                        "length mismatch for buffer {name}: checkpoint {}, model {}",
                        values.len(),
                        buf.len()
                    ))
                }
            }
        });
        if let Some(e) = apply_err {
            return Err(e.into());
        }

        Ok(Checkpoint {
            model,
            optimizer,
            config,
            epochs_phase1_done,
            epochs_phase2_done,
            noise_rng,
        })
    }

    /// Resume compatibility: the stored configuration must equal `config`.
    pub fn check_config(&self, config: &TrainConfig) -> Result<()> {
        if &self.config != config {
            return Err(Error::Checkpoint(
                "checkpoint configuration differs from the requested one; refusing to resume"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one training step.
struct StepOutcome {
    breakdown: LossBreakdown,
}

/// Position of a step inside the schedule, for diagnostics.
#[derive(Debug, Clone, Copy)]
struct StepContext {
    phase: u8,
    epoch: usize,
    batch_index: usize,
}

fn nan_abort(ctx: StepContext, b: &LossBreakdown) -> Error {
    Error::Training(format!(
        "non-finite loss in phase {}, epoch {}, batch {}: \
         total={} reconstruction={} mse={} ssim={} cross_entropy={}",
        ctx.phase,
        ctx.epoch,
        ctx.batch_index,
        b.total,
        b.reconstruction,
        b.mse,
        b.ssim,
        b.cross_entropy
    ))
}

/// Shared forward pass: partition, encode, channel, decode, loss.
struct ForwardPass {
    breakdown: LossBreakdown,
    v: crate::objective::Images,
    probs: Array2<f64>,
}

fn forward_batch(
    model: &mut SystemModel,
    batch: &crate::data::ImageBatch,
    cfg: &TrainConfig,
    noise_rng: &mut ChaCha8Rng,
    encoder_mode: Mode,
    decoder_mode: Mode,
) -> Result<ForwardPass> {
    let observations = partition_quadrants(batch, cfg.channel.n_users)?;
    let obs_pixels: Vec<_> = observations.into_iter().map(|o| o.pixels).collect();
    let mut y = model.encode_all(&obs_pixels, encoder_mode)?;
    add_noise_in_place(y.as_slice_mut().unwrap(), cfg.channel.snr_db, noise_rng);
    let v = model.decode_reconstruction(&y, decoder_mode)?;
    let probs = model.decode_class(&y, decoder_mode)?;
    let breakdown = total_loss(
        &batch.pixels,
        &v,
        &probs,
        &batch.labels,
        &cfg.weights(),
        &cfg.ssim,
    )?;
    Ok(ForwardPass {
        breakdown,
        v,
        probs,
    })
}

/// Gradient of the mean cross-entropy with respect to the probabilities,
/// scaled by `weight`.
fn cross_entropy_grad_probs(probs: &Array2<f64>, labels: &[u8], weight: f64) -> Array2<f64> {
    let (n, _) = probs.dim();
    let mut g = Array2::<f64>::zeros(probs.raw_dim());
    for (i, &label) in labels.iter().enumerate() {
        let p = probs[[i, label as usize]].max(CROSS_ENTROPY_CLAMP);
        g[[i, label as usize]] = -weight / (p * n as f64);
    }
    g
}

/// One phase-1 step: joint update of encoders and decoders on the total loss.
fn step_phase1(
    model: &mut SystemModel,
    optimizer: &mut Optimizer,
    batch: &crate::data::ImageBatch,
    cfg: &TrainConfig,
    noise_rng: &mut ChaCha8Rng,
    ctx: StepContext,
) -> Result<StepOutcome> {
    let pass = forward_batch(model, batch, cfg, noise_rng, Mode::Train, Mode::Train)?;
    if !pass.breakdown.total.is_finite() {
        return Err(nan_abort(ctx, &pass.breakdown));
    }
    let weights = cfg.weights();

    model.zero_grads();
    let mut g_y = Array2::<f64>::zeros((batch.len(), model.total_symbols()));
    if weights.alpha > 0.0 {
        let g_v = crate::objective::total_loss_grad_v(&batch.pixels, &pass.v, &weights, &cfg.ssim)?;
        g_y += &model.recon_decoder.backward(&g_v);
    }
    if weights.alpha < 1.0 {
        let g_probs = cross_entropy_grad_probs(&pass.probs, &batch.labels, 1.0 - weights.alpha);
        g_y += &model.class_decoder.backward(&g_probs);
    }
    let _g_obs = model.encode_all_backward(&g_y);
    optimizer.step(model);
    if let Some(name) = model.first_non_finite() {
        return Err(Error::Training(format!(
            "parameter {name} became non-finite after update"
        )));
    }
    Ok(StepOutcome {
        breakdown: pass.breakdown,
    })
}

/// One phase-2 step: frozen encoders, decoders trained on their own
/// (`alpha`-independent) objectives.
fn step_phase2(
    model: &mut SystemModel,
    optimizer: &mut Optimizer,
    batch: &crate::data::ImageBatch,
    cfg: &TrainConfig,
    noise_rng: &mut ChaCha8Rng,
    ctx: StepContext,
) -> Result<StepOutcome> {
    let pass = forward_batch(model, batch, cfg, noise_rng, Mode::Eval, Mode::Train)?;
    if !pass.breakdown.total.is_finite() {
        return Err(nan_abort(ctx, &pass.breakdown));
    }

    let mut decoders = DecodersOnly(model);
    decoders.zero_grads();
    let (_, g_v) = reconstruction_loss_with_grad(&batch.pixels, &pass.v, cfg.beta, &cfg.ssim)?;
    let _ = model.recon_decoder.backward(&g_v);
    let g_probs = cross_entropy_grad_probs(&pass.probs, &batch.labels, 1.0);
    let _ = model.class_decoder.backward(&g_probs);
    optimizer.step(&mut DecodersOnly(model));
    if let Some(name) = model.first_non_finite() {
        return Err(Error::Training(format!(
            "parameter {name} became non-finite after update"
        )));
    }
    Ok(StepOutcome {
        breakdown: pass.breakdown,
    })
}

/// Per-epoch shuffle seed, derived so resumed runs reproduce the order
/// without carrying the shuffle generator in checkpoints.
fn epoch_shuffle_seed(seed: u64, phase: u8, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((phase as u64) << 56)
        .wrapping_add(epoch as u64)
}

/// Per-epoch observer callback.
pub type EpochObserver<'d> = Box<dyn FnMut(&EpochLog) + 'd>;

/// Drives the two-phase schedule over a dataset, persisting per-epoch logs
/// and an epoch-boundary checkpoint when a run directory is set.
pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub dataset: &'d Dataset,
    pub run_dir: Option<PathBuf>,
    /// Called after every epoch with the fresh log entry.
    pub on_epoch: Option<EpochObserver<'d>>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d Dataset) -> Self {
        Trainer {
            config,
            dataset,
            run_dir: None,
            on_epoch: None,
        }
    }

    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        self.run_dir.as_ref().map(|d| d.join("checkpoint.bin"))
    }

    fn persist_epoch(&mut self, ckpt: &mut Checkpoint, log: &EpochLog) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let log_path = dir.join("train_log.txt");
            let fresh = !log_path.exists();
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?;
            if fresh {
                writeln!(file, "config_hash={}", self.config.config_hash())
                    .map_err(|e| Error::io(&log_path, e))?;
            }
            writeln!(file, "{}", log.to_line()).map_err(|e| Error::io(&log_path, e))?;
            ckpt.save(&self.checkpoint_path().unwrap())?;
        }
        if let Some(cb) = &mut self.on_epoch {
            cb(log);
        }
        Ok(())
    }

    fn run_phase(&mut self, ckpt: &mut Checkpoint, phase: u8) -> Result<()> {
        let total_epochs = match phase {
            1 => self.config.epochs_phase1,
            _ => self.config.epochs_phase2,
        };
        let done = match phase {
            1 => ckpt.epochs_phase1_done,
            _ => ckpt.epochs_phase2_done,
        };
        for epoch in done..total_epochs {
            let start = std::time::Instant::now();
            let mut noise_rng = ckpt.noise_rng.restore();
            let shuffle_seed = epoch_shuffle_seed(self.config.seed, phase, epoch);
            let mut sums = [0.0f64; 5];
            let mut batches = 0usize;
            for (batch_index, batch) in self
                .dataset
                .batches(self.config.batch_size, Some(shuffle_seed))
                .enumerate()
            {
                let ctx = StepContext {
                    phase,
                    epoch,
                    batch_index,
                };
                let outcome = if phase == 1 {
                    step_phase1(
                        &mut ckpt.model,
                        &mut ckpt.optimizer,
                        &batch,
                        &self.config,
                        &mut noise_rng,
                        ctx,
                    )
                } else {
                    step_phase2(
                        &mut ckpt.model,
                        &mut ckpt.optimizer,
                        &batch,
                        &self.config,
                        &mut noise_rng,
                        ctx,
                    )
                }?;
                let b = outcome.breakdown;
                sums[0] += b.total;
                sums[1] += b.reconstruction;
                sums[2] += b.mse;
                sums[3] += b.ssim;
                sums[4] += b.cross_entropy;
                batches += 1;
            }
            ckpt.noise_rng = RngState::capture(&noise_rng);
            match phase {
                1 => ckpt.epochs_phase1_done = epoch + 1,
                _ => ckpt.epochs_phase2_done = epoch + 1,
            }
            let n = batches.max(1) as f64;
            let log = EpochLog {
                phase,
                epoch,
                mean_total: sums[0] / n,
                mean_reconstruction: sums[1] / n,
                mean_mse: sums[2] / n,
                mean_ssim: sums[3] / n,
                mean_cross_entropy: sums[4] / n,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            if !log.mean_total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite epoch-mean loss in phase {phase}, epoch {epoch}"
                )));
            }
            self.persist_epoch(ckpt, &log)?;
        }
        Ok(())
    }

    /// Phase 1: joint end-to-end training on the weighted total loss.
    pub fn train_phase1(&mut self, from: Option<Checkpoint>) -> Result<Checkpoint> {
        self.config.validate()?;
        let mut ckpt = match from {
            Some(c) => {
                c.check_config(&self.config)?;
                c
            }
            None => Checkpoint::fresh(&self.config)?,
        };
        self.run_phase(&mut ckpt, 1)?;
        Ok(ckpt)
    }

    /// Phase 2: encoders frozen, decoders trained on their own objectives.
    pub fn train_phase2(&mut self, mut ckpt: Checkpoint) -> Result<Checkpoint> {
        self.config.validate()?;
        ckpt.check_config(&self.config)?;
        if self.config.reinit_decoders_phase2 && ckpt.epochs_phase2_done == 0 {
            let mut rng = stream(self.config.seed ^ 0x5eed_dec0, crate::rng::STREAM_INIT);
            let total = ckpt.model.total_symbols();
            ckpt.model.recon_decoder =
                crate::models::ReconDecoder::new("recon_decoder", total, &mut rng);
            ckpt.model.class_decoder =
                crate::models::ClassDecoder::new("class_decoder", total, &mut rng);
            ckpt.optimizer = Optimizer::new(self.config.optimizer, self.config.learning_rate);
        }
        self.run_phase(&mut ckpt, 2)?;
        Ok(ckpt)
    }

    /// Run (or resume) the full two-phase schedule.
    pub fn train_two_phase(&mut self) -> Result<Checkpoint> {
        let resumed = match self.checkpoint_path() {
            Some(path) if path.is_file() => {
                let ckpt = Checkpoint::load(&path)?;
                ckpt.check_config(&self.config)?;
                Some(ckpt)
            }
            _ => None,
        };
        let ckpt = self.train_phase1(resumed)?;
        self.train_phase2(ckpt)
    }
}

/// Progress events emitted by [`sweep`].
#[derive(Debug, Clone)]
pub enum SweepEvent {
    Skipped {
        alpha: f64,
        beta: f64,
    },
    Started {
        alpha: f64,
        beta: f64,
    },
    Finished {
        record: crate::evaluation::MetricsRecord,
    },
    Failed {
        alpha: f64,
        beta: f64,
        message: String,
    },
}

/// Train-and-evaluate one `(alpha, beta)` pair, resuming from the run
/// directory's checkpoint when present. Returns the metrics record with
/// `wall_time_s` covering training plus evaluation.
pub fn run_pair(
    experiment: &crate::config::ExperimentConfig,
    alpha: f64,
    beta: f64,
    train: &Dataset,
    test: &Dataset,
) -> Result<crate::evaluation::MetricsRecord> {
    let start = std::time::Instant::now();
    let config = experiment.train_config(alpha, beta);
    let run_dir = experiment
        .out_dir
        .join(format!("run-{}", config.config_hash()));
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    crate::config::ExperimentConfig {
        alpha,
        beta,
        ..experiment.clone()
    }
    .save(&run_dir.join("config.txt"))?;
    let mut trainer = Trainer::new(config, train).with_run_dir(&run_dir);
    let mut ckpt = trainer.train_two_phase()?;
    let mut record = crate::evaluation::evaluate(&mut ckpt, test, false)?;
    record.wall_time_s = start.elapsed().as_secs_f64();
    crate::evaluation::persist_record(&record, &run_dir.join("metrics.txt"))?;
    Ok(record)
}

/// Run the full `(alpha, beta)` grid, persisting records incrementally to
/// `<out_dir>/results.txt` so an interrupted sweep resumes at the next pair.
/// Per-pair failures are reported through `events` and the sweep continues;
/// the call fails only if every pair fails.
pub fn sweep(
    experiment: &crate::config::ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    events: &mut (dyn FnMut(SweepEvent) + Send),
) -> Result<Vec<crate::evaluation::MetricsRecord>> {
    if experiment.alphas.is_empty() || experiment.betas.is_empty() {
        return Err(Error::Argument("sweep grids must be non-empty".into()));
    }
    std::fs::create_dir_all(&experiment.out_dir).map_err(|e| Error::io(&experiment.out_dir, e))?;
    let results_path = experiment.out_dir.join("results.txt");
    let existing = if results_path.is_file() {
        crate::evaluation::load_records(&results_path)?
    } else {
        Vec::new()
    };

    let mut pending = Vec::new();
    for &alpha in &experiment.alphas {
        for &beta in &experiment.betas {
            let hash = experiment.train_config(alpha, beta).config_hash();
            if existing
                .iter()
                .any(|r| r.config_hash == hash && !r.noiseless)
            {
                events(SweepEvent::Skipped { alpha, beta });
            } else {
                pending.push((alpha, beta));
            }
        }
    }

    let queue = std::sync::Mutex::new(std::collections::VecDeque::from(pending));
    let sink = std::sync::Mutex::new((Vec::new(), Vec::new(), events));
    let workers = experiment.jobs.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some((alpha, beta)) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                {
                    let mut guard = sink.lock().unwrap();
                    (guard.2)(SweepEvent::Started { alpha, beta });
                }
                match run_pair(experiment, alpha, beta, train, test) {
                    Ok(record) => {
                        let mut guard = sink.lock().unwrap();
                        if let Err(e) = crate::evaluation::persist_record(&record, &results_path) {
                            guard.1.push((alpha, beta, e.to_string()));
                            (guard.2)(SweepEvent::Failed {
                                alpha,
                                beta,
                                message: "failed to persist record".into(),
                            });
                        } else {
                            guard.0.push(record.clone());
                            (guard.2)(SweepEvent::Finished { record });
                        }
                    }
                    Err(e) => {
                        let mut guard = sink.lock().unwrap();
                        guard.1.push((alpha, beta, e.to_string()));
                        (guard.2)(SweepEvent::Failed {
                            alpha,
                            beta,
                            message: e.to_string(),
                        });
                    }
                }
            });
        }
    });

    let (new_records, failures, _) = sink.into_inner().unwrap();
    if !failures.is_empty() {
        let report: Vec<String> = failures
            .iter()
            .map(|(a, b, m)| format!("alpha={a} beta={b}: {m}"))
            .collect();
        let failures_path = experiment.out_dir.join("failures.txt");
        let _ = std::fs::write(&failures_path, report.join("\n") + "\n");
        if new_records.is_empty() && existing.is_empty() {
            return Err(Error::Training(format!(
                "every sweep pair failed; first failure: {}",
                report[0]
            )));
        }
    }
    let mut all = existing;
    all.extend(new_records);
    Ok(all)
}

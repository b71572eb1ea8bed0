//! The experiment configuration file: a flat, commented, human-editable
//! key-value document with one documented default per field.
//!
//! Unknown keys are rejected so typos fail loudly. CLI flags override file
//! values through [`ExperimentConfig::set`], which reuses the same parsing
//! and validation. The configuration hash covers the fields that determine
//! the science of a run (weights, channel, schedule, SSIM window, seeds) and
//! deliberately excludes machine-local fields (paths, job counts), so moving
//! an output directory does not change run identity.

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::objective::SsimConfig;
use crate::training::TrainConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Directory holding the dataset files (or their parent).
    pub dataset_root: Option<PathBuf>,
    /// Where run directories and results land.
    pub out_dir: PathBuf,
    /// Reconstruction-vs-classification weight for single runs.
    pub alpha: f64,
    /// SSIM-vs-MSE weight for single runs.
    pub beta: f64,
    /// Alpha grid for `sweep`.
    pub alphas: Vec<f64>,
    /// Beta grid for `sweep`.
    pub betas: Vec<f64>,
    pub snr_db: f64,
    pub n_users: usize,
    pub channel_uses_per_user: usize,
    /// End-to-end epochs (phase 1).
    pub epochs_phase1: usize,
    /// Decoder-only epochs with frozen encoders (phase 2).
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Noise seed for evaluation, fixed and independent of the training seed
    /// so metric comparisons across runs share the same noise.
    pub eval_seed: u64,
    /// Re-initialize the decoders at the start of phase 2 instead of
    /// continuing from the phase-1 weights.
    pub reinit_decoders_phase2: bool,
    /// Average PSNR per image then over images (true) or convert the
    /// aggregate MSE (false).
    pub psnr_per_image: bool,
    pub ssim_window_size: usize,
    pub ssim_window_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_dynamic_range: f64,
    /// Parallel workers for `sweep`.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_root: None,
            out_dir: PathBuf::from("runs"),
            alpha: 0.75,
            beta: 0.25,
            alphas: vec![
                0.0, 0.001, 0.25, 0.5, 0.75, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0,
            ],
            betas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            snr_db: 3.0,
            n_users: 4,
            channel_uses_per_user: 50,
            epochs_phase1: 300,
            epochs_phase2: 300,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 1,
            eval_seed: 9999,
            reinit_decoders_phase2: false,
            psnr_per_image: true,
            ssim_window_size: 11,
            ssim_window_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            ssim_dynamic_range: 1.0,
            jobs: 1,
        }
    }
}

fn fmt_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?} as a number")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse::<usize>().map_err(|_| {
        Error::Config(format!(
            "{key}: cannot parse {value:?} as a non-negative integer"
        ))
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse::<u64>().map_err(|_| {
        Error::Config(format!(
            "{key}: cannot parse {value:?} as a non-negative integer"
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_float_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let items: Vec<f64> = value
        .split(',')
        .map(|s| parse_f64(key, s.trim()))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

impl ExperimentConfig {
    /// Set one field from its textual form; the same code path handles file
    /// lines and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset_root" => {
                self.dataset_root = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "alpha" => self.alpha = parse_f64(key, value)?,
            "beta" => self.beta = parse_f64(key, value)?,
            "alphas" => self.alphas = parse_float_list(key, value)?,
            "betas" => self.betas = parse_float_list(key, value)?,
            "snr_db" => self.snr_db = parse_f64(key, value)?,
            "n_users" => self.n_users = parse_usize(key, value)?,
            "channel_uses_per_user" => self.channel_uses_per_user = parse_usize(key, value)?,
            "epochs_phase1" => self.epochs_phase1 = parse_usize(key, value)?,
            "epochs_phase2" => self.epochs_phase2 = parse_usize(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "learning_rate" => self.learning_rate = parse_f64(key, value)?,
            "optimizer" => {
                self.optimizer = OptimizerKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("optimizer: unknown kind {value:?}")))?
            }
            "seed" => self.seed = parse_u64(key, value)?,
            "eval_seed" => self.eval_seed = parse_u64(key, value)?,
            "reinit_decoders_phase2" => self.reinit_decoders_phase2 = parse_bool(key, value)?,
            "psnr_per_image" => self.psnr_per_image = parse_bool(key, value)?,
            "ssim_window_size" => self.ssim_window_size = parse_usize(key, value)?,
            "ssim_window_sigma" => self.ssim_window_sigma = parse_f64(key, value)?,
            "ssim_k1" => self.ssim_k1 = parse_f64(key, value)?,
            "ssim_k2" => self.ssim_k2 = parse_f64(key, value)?,
            "ssim_dynamic_range" => self.ssim_dynamic_range = parse_f64(key, value)?,
            "jobs" => self.jobs = parse_usize(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a config document. Full-line `#` comments and blank lines are
    /// ignored; every other line must be `key = value`.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_document()).map_err(|e| Error::io(path, e))
    }

    /// Render the full commented document with current values.
    pub fn to_document(&self) -> String {
        let mut s = String::new();
        s.push_str(
            "# Experiment configuration. Lines are `key = value`; unknown keys are rejected.\n\n",
        );
        s.push_str("# Dataset directory (binary batch files or their parent). The\n");
        s.push_str(&format!(
            "# {} environment variable overrides this at load time.\n",
            crate::data::DATASET_DIR_ENV
        ));
        s.push_str(&format!(
            "dataset_root = {}\n",
            self.dataset_root
                .as_deref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        ));
        s.push_str("# Output directory for run folders and results files.\n");
        s.push_str(&format!("out_dir = {}\n\n", self.out_dir.display()));
        s.push_str("# Reconstruction weight (alpha) and SSIM weight (beta) for single runs.\n");
        s.push_str(&format!("alpha = {}\n", self.alpha));
        s.push_str(&format!("beta = {}\n", self.beta));
        s.push_str("# Grids for `sweep`.\n");
        s.push_str(&format!("alphas = {}\n", fmt_floats(&self.alphas)));
        s.push_str(&format!("betas = {}\n\n", fmt_floats(&self.betas)));
        s.push_str("# Channel: SNR per channel use (dB), users, real symbols per user.\n");
        s.push_str(&format!("snr_db = {}\n", self.snr_db));
        s.push_str(&format!("n_users = {}\n", self.n_users));
        s.push_str(&format!(
            "channel_uses_per_user = {}\n\n",
            self.channel_uses_per_user
        ));
        s.push_str("# Two-phase schedule: end-to-end epochs, then decoder-only epochs\n");
        s.push_str("# with frozen encoders.\n");
        s.push_str(&format!("epochs_phase1 = {}\n", self.epochs_phase1));
        s.push_str(&format!("epochs_phase2 = {}\n", self.epochs_phase2));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("learning_rate = {}\n", self.learning_rate));
        s.push_str("# adam or sgd\n");
        s.push_str(&format!("optimizer = {}\n", self.optimizer.as_str()));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str("# Evaluation noise seed, shared across runs for comparable metrics.\n");
        s.push_str(&format!("eval_seed = {}\n", self.eval_seed));
        s.push_str(&format!(
            "reinit_decoders_phase2 = {}\n",
            self.reinit_decoders_phase2
        ));
        s.push_str("# Per-image PSNR averaging (true) vs aggregate-MSE conversion (false).\n");
        s.push_str(&format!("psnr_per_image = {}\n\n", self.psnr_per_image));
        s.push_str("# SSIM window (shared by the training loss and the metric).\n");
        s.push_str(&format!("ssim_window_size = {}\n", self.ssim_window_size));
        s.push_str(&format!("ssim_window_sigma = {}\n", self.ssim_window_sigma));
        s.push_str(&format!("ssim_k1 = {}\n", self.ssim_k1));
        s.push_str(&format!("ssim_k2 = {}\n", self.ssim_k2));
        s.push_str(&format!(
            "ssim_dynamic_range = {}\n\n",
            self.ssim_dynamic_range
        ));
        s.push_str("# Parallel workers for `sweep`.\n");
        s.push_str(&format!("jobs = {}\n", self.jobs));
        s
    }

    /// Canonical `key=value` lines of the science-determining fields.
    pub fn scientific_lines(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("alpha={}\n", self.alpha));
        s.push_str(&format!("beta={}\n", self.beta));
        s.push_str(&format!("snr_db={}\n", self.snr_db));
        s.push_str(&format!("n_users={}\n", self.n_users));
        s.push_str(&format!(
            "channel_uses_per_user={}\n",
            self.channel_uses_per_user
        ));
        s.push_str(&format!("epochs_phase1={}\n", self.epochs_phase1));
        s.push_str(&format!("epochs_phase2={}\n", self.epochs_phase2));
        s.push_str(&format!("batch_size={}\n", self.batch_size));
        s.push_str(&format!("learning_rate={}\n", self.learning_rate));
        s.push_str(&format!("optimizer={}\n", self.optimizer.as_str()));
        s.push_str(&format!("seed={}\n", self.seed));
        s.push_str(&format!("eval_seed={}\n", self.eval_seed));
        s.push_str(&format!(
            "reinit_decoders_phase2={}\n",
            self.reinit_decoders_phase2
        ));
        s.push_str(&format!("psnr_per_image={}\n", self.psnr_per_image));
        s.push_str(&format!("ssim_window_size={}\n", self.ssim_window_size));
        s.push_str(&format!("ssim_window_sigma={}\n", self.ssim_window_sigma));
        s.push_str(&format!("ssim_k1={}\n", self.ssim_k1));
        s.push_str(&format!("ssim_k2={}\n", self.ssim_k2));
        s.push_str(&format!("ssim_dynamic_range={}\n", self.ssim_dynamic_range));
        s
    }

    /// FNV-1a hash (hex) of [`Self::scientific_lines`].
    pub fn config_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.scientific_lines().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn validate(&self) -> Result<()> {
        crate::objective::LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
        for a in &self.alphas {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::Config(format!("alphas: {a} outside [0,1]")));
            }
        }
        for b in &self.betas {
            if !(0.0..=1.0).contains(b) {
                return Err(Error::Config(format!("betas: {b} outside [0,1]")));
            }
        }
        if self.n_users < 1 {
            return Err(Error::Config("n_users must be >= 1".into()));
        }
        if self.channel_uses_per_user < 1 {
            return Err(Error::Config("channel_uses_per_user must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        self.ssim_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn ssim_config(&self) -> SsimConfig {
        SsimConfig {
            window_size: self.ssim_window_size,
            window_sigma: self.ssim_window_sigma,
            k1: self.ssim_k1,
            k2: self.ssim_k2,
            dynamic_range: self.ssim_dynamic_range,
        }
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            snr_db: self.snr_db,
            n_users: self.n_users,
            channel_uses_per_user: self.channel_uses_per_user,
            noise_seed: self.seed,
        }
    }

    /// Training configuration for one `(alpha, beta)` pair.
    pub fn train_config(&self, alpha: f64, beta: f64) -> TrainConfig {
        TrainConfig {
            alpha,
            beta,
            epochs_phase1: self.epochs_phase1,
            epochs_phase2: self.epochs_phase2,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            eval_seed: self.eval_seed,
            reinit_decoders_phase2: self.reinit_decoders_phase2,
            psnr_per_image: self.psnr_per_image,
            channel: self.channel_config(),
            ssim: self.ssim_config(),
        }
    }

    /// Compact SSIM signature recorded with every metrics record, so plots
    /// refuse to mix incompatible windows.
    pub fn ssim_signature(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}",
            self.ssim_window_size,
            self.ssim_window_sigma,
            self.ssim_k1,
            self.ssim_k2,
            self.ssim_dynamic_range
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_document() {
        let cfg = ExperimentConfig::default();
        let doc = cfg.to_document();
        let parsed = ExperimentConfig::parse_str(&doc).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn defaults_match_the_reference_protocol() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.channel_uses_per_user, 50);
        assert_eq!(cfg.n_users, 4);
        assert_eq!(cfg.snr_db, 3.0);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.epochs_phase1, 300);
        assert_eq!(cfg.epochs_phase2, 300);
        assert_eq!(cfg.alphas.len(), 11);
        assert_eq!(cfg.betas.len(), 5);
        assert_eq!(cfg.ssim_window_size, 11);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse_str("alpa = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = ExperimentConfig::parse_str("alpha = 0.5\nalpha = 0.6\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn bad_values_carry_line_numbers() {
        let err = ExperimentConfig::parse_str("\n# c\nbatch_size = many\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        assert!(ExperimentConfig::parse_str("alpha = 1.5\n").is_err());
        assert!(ExperimentConfig::parse_str("learning_rate = 0\n").is_err());
        assert!(ExperimentConfig::parse_str("ssim_window_size = 4\n").is_err());
        assert!(ExperimentConfig::parse_str("betas = 0,2\n").is_err());
    }

    #[test]
    fn hash_tracks_science_not_paths() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        b.dataset_root = Some(PathBuf::from("/data"));
        b.jobs = 8;
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.alpha = 0.9;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn overrides_reuse_parsing_and_validation() {
        let mut cfg = ExperimentConfig {
            ..Default::default()
        };
        cfg.set("alpha", "0.9").unwrap();
        assert_eq!(cfg.alpha, 0.9);
        assert!(cfg.set("alpha", "nope").is_err());
        assert!(cfg.set("no_such_key", "1").is_err());
    }
}

//! Transmit power constraint and the multi-user AWGN channel.
//!
//! Each user sends a real codeword of `channel_uses_per_user` symbols with
//! unit average power; the receiver observes the concatenation of all user
//! codewords plus white Gaussian noise. Users occupy independent channels, so
//! there is no inter-user interference. Noise is drawn from an explicit
//! generator handed in by the caller, which makes the channel a pure function
//! of its inputs and lets training backpropagate straight through the noise
//! addition (the gradient of the received signal with respect to the
//! codewords is the identity).

use crate::error::{Error, Result};
use crate::rng;
use rand_chacha::ChaCha8Rng;

/// Per-user codeword with unit average symbol power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCodeword {
    symbols: Vec<f64>,
}

impl ChannelCodeword {
    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    /// Average symbol power `1/K * sum(x_k^2)`.
    pub fn average_power(&self) -> f64 {
        self.symbols.iter().map(|x| x * x).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Concatenated noisy symbols observed at the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    symbols: Vec<f64>,
}

impl ReceivedSignal {
    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Channel parameters shared by training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Signal-to-noise ratio per channel use, in dB, under unit signal power.
    pub snr_db: f64,
    pub n_users: usize,
    pub channel_uses_per_user: usize,
    pub noise_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            snr_db: 3.0,
            n_users: 4,
            channel_uses_per_user: 50,
            noise_seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() {
            return Err(Error::Argument("snr_db must be a number (or +inf for noiseless)".into()));
        }
        if self.n_users < 1 {
            return Err(Error::Argument("n_users must be >= 1".into()));
        }
        if self.channel_uses_per_user < 1 {
            return Err(Error::Argument("channel_uses_per_user must be >= 1".into()));
        }
        Ok(())
    }

    /// Total channel uses across all users.
    pub fn total_channel_uses(&self) -> usize {
        self.n_users * self.channel_uses_per_user
    }
}

/// Threshold below which a raw vector counts as all-zero and cannot be
/// normalized. A trained encoder emitting such a vector indicates a bug.
pub const DEGENERATE_POWER_THRESHOLD: f64 = 1e-20;

/// Scale `raw` to unit average power, preserving its direction.
///
/// Output is `raw * sqrt(K / sum(raw^2))` where `K = raw.len()`.
pub fn power_normalize(raw: &[f64]) -> Result<ChannelCodeword> {
    let sum_sq: f64 = raw.iter().map(|x| x * x).sum();
    if sum_sq < DEGENERATE_POWER_THRESHOLD {
        return Err(Error::DegenerateInput(format!(
            "cannot power-normalize a vector with sum of squares {sum_sq:.3e}"
        )));
    }
    let scale = (raw.len() as f64 / sum_sq).sqrt();
    Ok(ChannelCodeword {
        symbols: raw.iter().map(|x| x * scale).collect(),
    })
}

/// Per-dimension noise variance for an SNR in dB at unit signal power:
/// `10^(-snr_db / 10)`.
pub fn snr_db_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Pass all user codewords through independent AWGN channels.
///
/// The received signal is the user-index-ordered concatenation of the
/// codewords plus i.i.d. zero-mean Gaussian noise of variance
/// [`snr_db_to_noise_variance`]`(config.snr_db)` per dimension. The noise
/// draw is a pure function of the generator state.
pub fn transmit(
    codewords: &[ChannelCodeword],
    config: &ChannelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ReceivedSignal> {
    if codewords.len() != config.n_users {
        return Err(Error::Argument(format!(
            "expected {} codewords, got {}",
            config.n_users,
            codewords.len()
        )));
    }
    for (i, cw) in codewords.iter().enumerate() {
        if cw.symbols.len() != config.channel_uses_per_user {
            return Err(Error::Argument(format!(
                "codeword {} has length {}, expected {}",
                i,
                cw.symbols.len(),
                config.channel_uses_per_user
            )));
        }
    }
    let mut symbols = Vec::with_capacity(config.total_channel_uses());
    for cw in codewords {
        symbols.extend_from_slice(&cw.symbols);
    }
    let std = snr_db_to_noise_variance(config.snr_db).sqrt();
    if std > 0.0 {
        for s in symbols.iter_mut() {
            *s += std * rng::next_standard_normal(rng);
        }
    }
    Ok(ReceivedSignal { symbols })
}

/// Add AWGN in place to a flat buffer of symbols; used by the training path
/// where codewords live in batched tensors. Same noise law as [`transmit`].
pub fn add_noise_in_place(symbols: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let std = snr_db_to_noise_variance(snr_db).sqrt();
    if std > 0.0 {
        for s in symbols.iter_mut() {
            *s += std * rng::next_standard_normal(rng);
        }
    }
}

//! The decoder densities behind the MSE and SSIM losses, with numerical
//! oracles.
//!
//! The reconstruction decoder can be read as a probability density over the
//! source vector: a fixed-variance independent Gaussian (whose negative log
//! likelihood is the MSE up to constants) or an exponential-of-SSIM density
//! on the unit cube (whose cross-entropy is `1 - SSIM` up to a constant), or
//! a convex mixture of the two with a single shared parameter vector. This
//! module makes those densities concrete and checkable: the SSIM-density
//! normalizer is estimated by Monte Carlo at low dimension, the mixture's
//! maximizer is verified by grid search, and the loss/cross-entropy
//! identities are certified numerically.
//!
//! The normalizer is never needed for training: for fixed window weights it
//! does not depend on the network parameters, so it only shifts the
//! cross-entropy by a constant. It exists here purely as an oracle.

use crate::error::{Error, Result};
use crate::objective::{ssim_uniform_window, SsimConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Finite stand-in for log(0) outside a density's support.
pub const LOG_ZERO_SENTINEL: f64 = -1e30;

/// Upper limit on the dimension of Monte-Carlo normalizer estimation.
pub const MAX_ORACLE_DIM: usize = 64;

/// Independent Gaussian decoder density with one shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDecoderDensity {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianDecoderDensity {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        // NaN must fail this check too, so avoid `<=`.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(variance > 0.0) {
            return Err(Error::Argument(format!(
                "variance must be > 0, got {variance}"
            )));
        }
        Ok(GaussianDecoderDensity { mean, variance })
    }
}

/// Negative log density of the Gaussian decoder:
/// `sum((s_n - mu_n)^2) / (2 sigma^2) + (L/2) log(2 pi sigma^2)`.
pub fn gaussian_nll(s: &[f64], density: &GaussianDecoderDensity) -> Result<f64> {
    if s.len() != density.mean.len() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            s.len(),
            density.mean.len()
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(density.variance > 0.0) {
        return Err(Error::Argument("variance must be > 0".into()));
    }
    let l = s.len() as f64;
    let quad: f64 = s
        .iter()
        .zip(&density.mean)
        .map(|(a, m)| (a - m) * (a - m))
        .sum::<f64>()
        / (2.0 * density.variance);
    Ok(quad + 0.5 * l * (2.0 * std::f64::consts::PI * density.variance).ln())
}

/// Exponential-of-SSIM decoder density on the unit cube, evaluated with a
/// single rectangular window (uniform weights) so low-dimensional oracles are
/// tractable.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimDecoderDensity {
    pub gamma: Vec<f64>,
    pub cfg: SsimConfig,
    /// `log d`, lazily estimated by [`estimate_log_normalizer`].
    pub log_normalizer: Option<f64>,
}

impl SsimDecoderDensity {
    pub fn new(gamma: Vec<f64>, cfg: SsimConfig) -> Result<Self> {
        if gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Argument("gamma must lie in [0,1]^L".into()));
        }
        cfg.validate()?;
        Ok(SsimDecoderDensity {
            gamma,
            cfg,
            log_normalizer: None,
        })
    }
}

fn in_unit_cube(s: &[f64]) -> bool {
    s.iter().all(|x| (0.0..=1.0).contains(x))
}

/// `log q''(s) - log d = SSIM(s, gamma) - 1` on the support, sentinel outside.
pub fn ssim_exp_log_density_unnormalized(s: &[f64], density: &SsimDecoderDensity) -> f64 {
    if s.len() != density.gamma.len() || !in_unit_cube(s) {
        return LOG_ZERO_SENTINEL;
    }
    ssim_uniform_window(s, &density.gamma, &density.cfg) - 1.0
}

/// Monte-Carlo estimate of `log d` where
/// `d = 1 / integral over [0,1]^L of exp(SSIM(s, gamma) - 1) ds`.
///
/// The unit cube has volume one, so the integral is the plain mean of the
/// integrand over uniform samples. Returns `(log_d, standard error of log_d)`.
pub fn estimate_log_normalizer(
    density: &SsimDecoderDensity,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let l = density.gamma.len();
    if l > MAX_ORACLE_DIM {
        return Err(Error::UnsupportedConfiguration(format!(
            "normalizer estimation supports L <= {MAX_ORACLE_DIM}, got {l} (oracle, not a production path)"
        )));
    }
    if n_samples < 10_000 {
        return Err(Error::Argument(format!(
            "n_samples must be >= 10000 for a usable estimate, got {n_samples}"
        )));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut sample = vec![0.0; l];
    for _ in 0..n_samples {
        for x in sample.iter_mut() {
            *x = rng.random::<f64>();
        }
        let val = (ssim_uniform_window(&sample, &density.gamma, &density.cfg) - 1.0).exp();
        sum += val;
        sum_sq += val * val;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let se_mean = (var / n).sqrt();
    // Delta method: se(log(1/mean)) = se(mean) / mean.
    Ok((-mean.ln(), se_mean / mean))
}

/// Log density of the mixture `(1-beta) q' + beta q''` with shared parameter
/// vector `v` (the Gaussian mean and the SSIM-density parameter coincide).
///
/// The endpoints `beta = 0` and `beta = 1` are exact and do not need the
/// normalizer; interior `beta` requires `log_normalizer` to have been
/// estimated and is an oracle-scale path only.
pub fn mixture_log_pdf(
    s: &[f64],
    v: &[f64],
    beta: f64,
    sigma2: f64,
    density: &SsimDecoderDensity,
) -> Result<f64> {
    if s.len() != v.len() || v.len() != density.gamma.len() {
        return Err(Error::Argument("dimension mismatch".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Argument(format!(
            "beta must be in [0,1], got {beta}"
        )));
    }
    let gauss = GaussianDecoderDensity::new(v.to_vec(), sigma2)?;
    if beta == 0.0 {
        return Ok(-gaussian_nll(s, &gauss)?);
    }
    let log_unnorm = ssim_exp_log_density_unnormalized(s, density);
    if beta == 1.0 {
        if log_unnorm <= LOG_ZERO_SENTINEL {
            return Ok(LOG_ZERO_SENTINEL);
        }
        let log_d = density
            .log_normalizer
            .ok_or(Error::NormalizerNotEstimated)?;
        return Ok(log_d + log_unnorm);
    }
    let log_d = density
        .log_normalizer
        .ok_or(Error::NormalizerNotEstimated)?;
    let a = (1.0 - beta).ln() - gaussian_nll(s, &gauss)?;
    let b = if log_unnorm <= LOG_ZERO_SENTINEL {
        LOG_ZERO_SENTINEL
    } else {
        beta.ln() + log_d + log_unnorm
    };
    // log-sum-exp stabilization.
    let m = a.max(b);
    Ok(m + ((a - m).exp() + (b - m).exp()).ln())
}

/// Maximum-likelihood reconstruction under the mixture: the shared parameter
/// vector itself, since it maximizes both mixture components.
pub fn ml_estimate(v: &[f64]) -> Vec<f64> {
    v.to_vec()
}

//! The trainable loss surface: MSE, windowed SSIM, classification
//! cross-entropy, and their alpha/beta-weighted combination.
//!
//! Images are `[batch, channel, height, width]` tensors with values in
//! `[0, 1]`. The SSIM here follows the standard windowed definition: Gaussian
//! window weights summing to one per window, valid window positions only,
//! luminance and contrast/structure factors with stabilizers `c1`, `c2`,
//! computed per color channel and averaged. The contrast/structure factor
//! uses the covariance form `2*cov + c2` over `var_s + var_v + c2`.
//!
//! Analytic gradients with respect to the reconstruction are provided for
//! every loss term so the training loop can backpropagate without an
//! autodiff dependency; each gradient is certified against central finite
//! differences in the tests.

use crate::error::{Error, Result};
use ndarray::{Array2, Array4};

/// Images as `[batch, channel, height, width]`.
pub type Images = Array4<f64>;

/// Convex weights of the two-objective loss.
///
/// `alpha` balances reconstruction (`alpha`) against classification
/// (`1 - alpha`); `beta` balances the SSIM term (`beta`) against the MSE term
/// (`1 - beta`) inside the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::Argument(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) || !self.beta.is_finite() {
            return Err(Error::Argument(format!(
                "beta must be in [0,1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Window configuration of the SSIM measure.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if self.window_sigma <= 0.0 {
            return Err(Error::Argument("window_sigma must be > 0".into()));
        }
        if self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::Argument("k1 and k2 must be > 0".into()));
        }
        if self.dynamic_range <= 0.0 {
            return Err(Error::Argument("dynamic_range must be > 0".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1D Gaussian kernel; the separable outer product sums to one.
    pub fn gaussian_kernel(&self) -> Vec<f64> {
        let ws = self.window_size;
        let half = (ws / 2) as isize;
        let mut k: Vec<f64> = (0..ws)
            .map(|i| {
                let x = i as isize - half;
                (-(x * x) as f64 / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let sum: f64 = k.iter().sum();
        for v in &mut k {
            *v /= sum;
        }
        k
    }
}

fn check_same_shape(s: &Images, v: &Images) -> Result<()> {
    if s.dim() != v.dim() {
        return Err(Error::Argument(format!(
            "shape mismatch: {:?} vs {:?}",
            s.dim(),
            v.dim()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements, averaged over the batch.
pub fn mse(s: &Images, v: &Images) -> Result<f64> {
    check_same_shape(s, v)?;
    let n = s.len() as f64;
    let sum: f64 = s.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / n)
}

/// Gradient of [`mse`] with respect to `v`: `2 (v - s) / n`.
pub fn mse_grad(s: &Images, v: &Images) -> Result<Images> {
    check_same_shape(s, v)?;
    let n = s.len() as f64;
    let mut g = v.clone();
    ndarray::Zip::from(&mut g)
        .and(s)
        .for_each(|gv, &sv| *gv = 2.0 * (*gv - sv) / n);
    Ok(g)
}

/// Per-image MSE, used for per-image PSNR.
pub fn mse_per_image(s: &Images, v: &Images) -> Result<Vec<f64>> {
    check_same_shape(s, v)?;
    let (b, c, h, w) = s.dim();
    let per = (c * h * w) as f64;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let si = s.index_axis(ndarray::Axis(0), i);
        let vi = v.index_axis(ndarray::Axis(0), i);
        let sum: f64 = si
            .iter()
            .zip(vi.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        out.push(sum / per);
    }
    Ok(out)
}

// --- separable valid/adjoint blurs used by the windowed SSIM -------------

/// Valid-mode 1D convolution along the width: `[h, w] -> [h, w - ws + 1]`.
fn blur_valid_w(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let ws = k.len();
    let ow = w - ws + 1;
    let mut out = vec![0.0; h * ow];
    for r in 0..h {
        let row = &x[r * w..(r + 1) * w];
        let orow = &mut out[r * ow..(r + 1) * ow];
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (a, &ka) in k.iter().enumerate() {
                acc += ka * row[j + a];
            }
            *o = acc;
        }
    }
    out
}

/// Valid-mode 1D convolution along the height: `[h, w] -> [h - ws + 1, w]`.
fn blur_valid_h(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let ws = k.len();
    let oh = h - ws + 1;
    let mut out = vec![0.0; oh * w];
    for i in 0..oh {
        let orow = &mut out[i * w..(i + 1) * w];
        for (a, &ka) in k.iter().enumerate() {
            let row = &x[(i + a) * w..(i + a + 1) * w];
            for (o, &xv) in orow.iter_mut().zip(row) {
                *o += ka * xv;
            }
        }
    }
    out
}

/// Valid separable blur `[h, w] -> [oh, ow]`.
fn blur_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let tmp = blur_valid_w(x, h, w, k);
    blur_valid_h(&tmp, h, w - k.len() + 1, k)
}

/// Adjoint of [`blur_valid_h`]: `[oh, w] -> [h, w]`.
fn blur_adjoint_h(g: &[f64], oh: usize, w: usize, k: &[f64], h: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..oh {
        let grow = &g[i * w..(i + 1) * w];
        for (a, &ka) in k.iter().enumerate() {
            let orow = &mut out[(i + a) * w..(i + a + 1) * w];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += ka * gv;
            }
        }
    }
    out
}

/// Adjoint of [`blur_valid_w`]: `[h, ow] -> [h, w]`.
fn blur_adjoint_w(g: &[f64], h: usize, ow: usize, k: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let grow = &g[r * ow..(r + 1) * ow];
        let orow = &mut out[r * w..(r + 1) * w];
        for (j, &gv) in grow.iter().enumerate() {
            for (a, &ka) in k.iter().enumerate() {
                orow[j + a] += ka * gv;
            }
        }
    }
    out
}

/// Adjoint of [`blur_valid`]: scatters window-level values back to pixels.
fn blur_adjoint(g: &[f64], oh: usize, ow: usize, k: &[f64], h: usize, w: usize) -> Vec<f64> {
    let tmp = blur_adjoint_h(g, oh, ow, k, h); // [h, ow]
    blur_adjoint_w(&tmp, h, ow, k, w)
}

struct ChannelSsim {
    /// Mean of the per-window SSIM map of this channel.
    mean: f64,
    /// Per-pixel gradient of the *sum* of the window map w.r.t. `v`.
    grad_sum: Option<Vec<f64>>,
}

/// Windowed SSIM of one `[h, w]` channel pair, optionally with the gradient.
#[allow(clippy::too_many_arguments)]
fn ssim_channel(
    s: &[f64],
    v: &[f64],
    h: usize,
    w: usize,
    k: &[f64],
    c1: f64,
    c2: f64,
    want_grad: bool,
) -> ChannelSsim {
    let ws = k.len();
    let (oh, ow) = (h - ws + 1, w - ws + 1);
    let m = oh * ow;

    let sv: Vec<f64> = s.iter().zip(v).map(|(a, b)| a * b).collect();
    let ss: Vec<f64> = s.iter().map(|a| a * a).collect();
    let vv: Vec<f64> = v.iter().map(|a| a * a).collect();

    let mu1 = blur_valid(s, h, w, k);
    let mu2 = blur_valid(v, h, w, k);
    let m11 = blur_valid(&ss, h, w, k);
    let m22 = blur_valid(&vv, h, w, k);
    let m12 = blur_valid(&sv, h, w, k);

    let mut total = 0.0;
    let mut c0_map = if want_grad { vec![0.0; m] } else { Vec::new() };
    let mut c1_map = if want_grad { vec![0.0; m] } else { Vec::new() };
    let mut c2_map = if want_grad { vec![0.0; m] } else { Vec::new() };

    for i in 0..m {
        let (u1, u2) = (mu1[i], mu2[i]);
        let var1 = m11[i] - u1 * u1;
        let var2 = m22[i] - u2 * u2;
        let cov = m12[i] - u1 * u2;

        let a = 2.0 * u1 * u2 + c1;
        let b = u1 * u1 + u2 * u2 + c1;
        let c = 2.0 * cov + c2;
        let d = var1 + var2 + c2;

        let num = a * c;
        let den = b * d;
        total += num / den;

        if want_grad {
            // d(ssim_i)/d(v_n) = 2 w_n (k0 + k1 s_n + k2 v_n), per window i.
            let den2 = den * den;
            c0_map[i] = ((u1 * c - a * u1) * den - num * (u2 * d - b * u2)) / den2;
            c1_map[i] = a / den;
            c2_map[i] = -num * b / den2;
        }
    }

    let grad_sum = want_grad.then(|| {
        let g0 = blur_adjoint(&c0_map, oh, ow, k, h, w);
        let g1 = blur_adjoint(&c1_map, oh, ow, k, h, w);
        let g2 = blur_adjoint(&c2_map, oh, ow, k, h, w);
        (0..h * w)
            .map(|p| 2.0 * (g0[p] + g1[p] * s[p] + g2[p] * v[p]))
            .collect()
    });

    ChannelSsim {
        mean: total / m as f64,
        grad_sum,
    }
}

fn ssim_check(s: &Images, v: &Images, cfg: &SsimConfig) -> Result<()> {
    check_same_shape(s, v)?;
    cfg.validate()?;
    let (_, _, h, w) = s.dim();
    if h < cfg.window_size || w < cfg.window_size {
        return Err(Error::Argument(format!(
            "image {h}x{w} smaller than SSIM window {}",
            cfg.window_size
        )));
    }
    Ok(())
}

/// Per-image SSIM: mean of the window map over positions and channels.
pub fn ssim_per_image(s: &Images, v: &Images, cfg: &SsimConfig) -> Result<Vec<f64>> {
    ssim_check(s, v, cfg)?;
    let (b, c, h, w) = s.dim();
    let k = cfg.gaussian_kernel();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut acc = 0.0;
        for ci in 0..c {
            let sc = s.slice(ndarray::s![bi, ci, .., ..]);
            let vc = v.slice(ndarray::s![bi, ci, .., ..]);
            let sc = sc.as_standard_layout();
            let vc = vc.as_standard_layout();
            acc += ssim_channel(
                sc.as_slice().unwrap(),
                vc.as_slice().unwrap(),
                h,
                w,
                &k,
                c1,
                c2,
                false,
            )
            .mean;
        }
        out.push(acc / c as f64);
    }
    Ok(out)
}

/// Batch SSIM: the per-image values averaged over the batch.
pub fn ssim(s: &Images, v: &Images, cfg: &SsimConfig) -> Result<f64> {
    let per = ssim_per_image(s, v, cfg)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Batch SSIM together with its gradient with respect to `v`.
pub fn ssim_with_grad(s: &Images, v: &Images, cfg: &SsimConfig) -> Result<(f64, Images)> {
    ssim_check(s, v, cfg)?;
    let (b, c, h, w) = s.dim();
    let k = cfg.gaussian_kernel();
    let (c1c, c2c) = (cfg.c1(), cfg.c2());
    let ws = cfg.window_size;
    let windows_per_channel = ((h - ws + 1) * (w - ws + 1)) as f64;

    let mut total = 0.0;
    let mut grad = Images::zeros((b, c, h, w));
    // The batch value is the mean over b*c channel maps of their window means,
    // so each window's gradient carries 1/(b*c*windows).
    let scale = 1.0 / (b as f64 * c as f64 * windows_per_channel);
    for bi in 0..b {
        for ci in 0..c {
            let sc = s.slice(ndarray::s![bi, ci, .., ..]);
            let vc = v.slice(ndarray::s![bi, ci, .., ..]);
            let sc = sc.as_standard_layout();
            let vc = vc.as_standard_layout();
            let r = ssim_channel(
                sc.as_slice().unwrap(),
                vc.as_slice().unwrap(),
                h,
                w,
                &k,
                c1c,
                c2c,
                true,
            );
            total += r.mean;
            let gs = r.grad_sum.unwrap();
            let mut gview = grad.slice_mut(ndarray::s![bi, ci, .., ..]);
            for (g, &val) in gview.iter_mut().zip(&gs) {
                *g = val * scale;
            }
        }
    }
    Ok((total / (b * c) as f64, grad))
}

/// SSIM of two flat vectors under a single rectangular window covering the
/// whole vector (uniform weights `1/L`). This is the rectangular-window
/// special case of the windowed definition and is what the low-dimensional
/// density oracles use.
pub fn ssim_uniform_window(s: &[f64], v: &[f64], cfg: &SsimConfig) -> f64 {
    assert_eq!(s.len(), v.len(), "length mismatch");
    let l = s.len() as f64;
    let mu1 = s.iter().sum::<f64>() / l;
    let mu2 = v.iter().sum::<f64>() / l;
    let m11 = s.iter().map(|a| a * a).sum::<f64>() / l;
    let m22 = v.iter().map(|a| a * a).sum::<f64>() / l;
    let m12 = s.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / l;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let a = 2.0 * mu1 * mu2 + c1;
    let b = mu1 * mu1 + mu2 * mu2 + c1;
    let c = 2.0 * (m12 - mu1 * mu2) + c2;
    let d = (m11 - mu1 * mu1) + (m22 - mu2 * mu2) + c2;
    (a * c) / (b * d)
}

/// Mean over the batch of `-log p[label]`, with probabilities clamped at
/// `1e-12` before the log.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

pub fn classification_cross_entropy(probs: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    let (b, k) = probs.dim();
    if labels.len() != b {
        return Err(Error::Argument(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    let mut sum = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if (label as usize) >= k {
            return Err(Error::Argument(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        sum -= probs[[i, label as usize]].max(CROSS_ENTROPY_CLAMP).ln();
    }
    Ok(sum / b as f64)
}

/// Reconstruction loss `(1 - beta) * MSE + beta * (1 - SSIM)`.
pub fn reconstruction_loss(s: &Images, v: &Images, beta: f64, cfg: &SsimConfig) -> Result<f64> {
    LossWeights { alpha: 0.0, beta }.validate()?;
    // Endpoint forms skip the unused component entirely.
    if beta == 0.0 {
        return mse(s, v);
    }
    if beta == 1.0 {
        return Ok(1.0 - ssim(s, v, cfg)?);
    }
    Ok((1.0 - beta) * mse(s, v)? + beta * (1.0 - ssim(s, v, cfg)?))
}

/// Reconstruction loss value and gradient with respect to `v`.
pub fn reconstruction_loss_with_grad(
    s: &Images,
    v: &Images,
    beta: f64,
    cfg: &SsimConfig,
) -> Result<(f64, Images)> {
    LossWeights { alpha: 0.0, beta }.validate()?;
    if beta == 0.0 {
        return Ok((mse(s, v)?, mse_grad(s, v)?));
    }
    let (ssim_val, ssim_g) = ssim_with_grad(s, v, cfg)?;
    if beta == 1.0 {
        return Ok((1.0 - ssim_val, ssim_g.mapv(|g| -g)));
    }
    let mse_val = mse(s, v)?;
    let mse_g = mse_grad(s, v)?;
    let loss = (1.0 - beta) * mse_val + beta * (1.0 - ssim_val);
    let mut grad = mse_g;
    ndarray::Zip::from(&mut grad)
        .and(&ssim_g)
        .for_each(|g, &sg| *g = (1.0 - beta) * *g - beta * sg);
    Ok((loss, grad))
}

/// Rectangular-window sibling of [`reconstruction_loss`] on flat vectors,
/// used by the low-dimensional grid oracles.
pub fn reconstruction_loss_flat(s: &[f64], v: &[f64], beta: f64, cfg: &SsimConfig) -> f64 {
    let l = s.len() as f64;
    let mse_val = s.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / l;
    (1.0 - beta) * mse_val + beta * (1.0 - ssim_uniform_window(s, v, cfg))
}

/// Component values of one total-loss evaluation, kept for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub mse: f64,
    pub ssim: f64,
    pub cross_entropy: f64,
}

/// The solvable minimization objective:
/// `alpha * ((1-beta) MSE + beta (1-SSIM)) + (1-alpha) * cross-entropy`.
pub fn total_loss(
    s: &Images,
    v: &Images,
    probs: &Array2<f64>,
    labels: &[u8],
    weights: &LossWeights,
    cfg: &SsimConfig,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let mse_val = mse(s, v)?;
    let ssim_val = ssim(s, v, cfg)?;
    let rec = (1.0 - weights.beta) * mse_val + weights.beta * (1.0 - ssim_val);
    let ce = classification_cross_entropy(probs, labels)?;
    Ok(LossBreakdown {
        total: weights.alpha * rec + (1.0 - weights.alpha) * ce,
        reconstruction: rec,
        mse: mse_val,
        ssim: ssim_val,
        cross_entropy: ce,
    })
}

/// Gradient of the total loss with respect to the reconstruction `v`.
///
/// At `alpha = 0` this is exactly zero; the classification term never touches
/// `v`.
pub fn total_loss_grad_v(
    s: &Images,
    v: &Images,
    weights: &LossWeights,
    cfg: &SsimConfig,
) -> Result<Images> {
    weights.validate()?;
    if weights.alpha == 0.0 {
        return Ok(Images::zeros(s.dim()));
    }
    let (_, mut grad) = reconstruction_loss_with_grad(s, v, weights.beta, cfg)?;
    grad.mapv_inplace(|g| g * weights.alpha);
    Ok(grad)
}

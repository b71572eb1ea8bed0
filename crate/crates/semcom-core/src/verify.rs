//! Dataset-free property suite behind `semcom verify`.
//!
//! Certifies the mathematical core before any data or training exists: SSIM
//! identities and bounds, the NLL/MSE equivalence at the chosen variance,
//! Monte-Carlo normalization of the SSIM density, grid argmax of the mixture
//! density, analytic-vs-numeric gradients, the power constraint, and the
//! channel noise statistics. Each property reports a machine-readable
//! pass/fail line with the observed values.

use crate::channel::{add_noise_in_place, power_normalize, snr_db_to_noise_variance};
use crate::objective::{
    mse, ssim, ssim_with_grad, total_loss, total_loss_grad_v, Images, LossWeights, SsimConfig,
};
use crate::prob_semantics::{
    estimate_log_normalizer, gaussian_nll, mixture_log_pdf, ssim_exp_log_density_unnormalized,
    GaussianDecoderDensity, SsimDecoderDensity,
};
use crate::rng::{stream, STREAM_ORACLE};
use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyScale {
    Fast,
    Thorough,
}

impl VerifyScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fast" => Some(VerifyScale::Fast),
            "thorough" => Some(VerifyScale::Thorough),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub observed: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub scale: VerifyScale,
    pub results: Vec<PropertyResult>,
    pub wall_time_s: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// One `property=... passed=... observed=...` line per result.
    pub fn to_machine_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            s.push_str(&format!(
                "property={} passed={} observed=\"{}\"\n",
                r.name, r.passed, r.observed
            ));
        }
        s.push_str(&format!(
            "suite_passed={} wall_time_s={}\n",
            self.all_passed(),
            self.wall_time_s
        ));
        s
    }
}

struct Suite {
    results: Vec<PropertyResult>,
}

impl Suite {
    fn record(&mut self, name: &str, passed: bool, observed: String) {
        self.results.push(PropertyResult {
            name: name.to_string(),
            passed,
            observed,
        });
    }
}

fn random_images(shape: (usize, usize, usize, usize), seed: u64) -> Images {
    let mut rng = stream(seed, STREAM_ORACLE);
    Images::from_shape_fn(shape, |_| rng.random::<f64>())
}

/// Run the suite. `Fast` keeps every Monte-Carlo budget small enough for
/// interactive use; `Thorough` uses the 10^6-sample budgets.
pub fn run(scale: VerifyScale) -> VerifyReport {
    let start = std::time::Instant::now();
    let cfg = SsimConfig::default();
    let mut suite = Suite {
        results: Vec::new(),
    };

    // SSIM self-similarity: exact 1 to 1e-9.
    {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let x = random_images((1, 3, 16, 16), 1000 + seed);
            let v = ssim(&x, &x, &cfg).unwrap();
            worst = worst.max((v - 1.0).abs());
        }
        suite.record(
            "ssim_self_similarity",
            worst < 1e-9,
            format!("max |ssim(x,x)-1| = {worst:.3e}"),
        );
    }

    // |SSIM| <= 1 over 10^3 random pairs.
    {
        let pairs = 1000;
        let mut worst: f64 = 0.0;
        for seed in 0..pairs {
            let a = random_images((1, 1, 12, 12), 2000 + seed);
            let b = random_images((1, 1, 12, 12), 3000 + seed);
            worst = worst.max(ssim(&a, &b, &cfg).unwrap().abs());
        }
        suite.record(
            "ssim_bounded",
            worst <= 1.0 + 1e-12,
            format!("max |ssim| = {worst:.12}"),
        );
    }

    // NLL == MSE + constant at sigma^2 = L/2, to 1e-9, over 10^2 vectors.
    {
        let mut rng = stream(4000, STREAM_ORACLE);
        let l = 24usize;
        let constant = (l as f64 / 2.0) * (std::f64::consts::PI * l as f64).ln();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let s: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let mu: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
            let density = GaussianDecoderDensity::new(mu.clone(), l as f64 / 2.0).unwrap();
            let nll = gaussian_nll(&s, &density).unwrap();
            let mse_val = s
                .iter()
                .zip(&mu)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / l as f64;
            worst = worst.max((nll - constant - mse_val).abs());
        }
        suite.record(
            "nll_mse_identity",
            worst < 1e-9,
            format!("max |nll - const - mse| = {worst:.3e}"),
        );
    }

    // SSIM-density normalization: d * E[exp(SSIM-1)] = 1 within 2% (1%
    // thorough), with an independent sample for the check.
    {
        let (n_samples, tolerance) = match scale {
            VerifyScale::Fast => (100_000, 0.02),
            VerifyScale::Thorough => (1_000_000, 0.02),
        };
        let density = SsimDecoderDensity::new(vec![0.2, 0.4, 0.6, 0.8], cfg.clone()).unwrap();
        let (log_d, se) =
            estimate_log_normalizer(&density, n_samples, &mut stream(5000, STREAM_ORACLE)).unwrap();
        let mut rng = stream(5001, STREAM_ORACLE);
        let mut mean = 0.0;
        let mut sample = [0.0f64; 4];
        for _ in 0..n_samples {
            for x in sample.iter_mut() {
                *x = rng.random::<f64>();
            }
            mean += (log_d + ssim_exp_log_density_unnormalized(&sample, &density)).exp();
        }
        mean /= n_samples as f64;
        let in_bounds = (-1e-9..=2.0 + 1e-9).contains(&log_d);
        suite.record(
            "ssim_density_normalization",
            (mean - 1.0).abs() < tolerance && in_bounds,
            format!(
                "log_d = {log_d:.6} (se {se:.1e}), independent integral = {mean:.6}, n = {n_samples}"
            ),
        );
    }

    // Grid argmax of the mixture log pdf at s = v for beta in {0, 1/2, 1}.
    {
        let v = [0.25, 0.75];
        let mut density = SsimDecoderDensity::new(v.to_vec(), cfg.clone()).unwrap();
        let (log_d, _) =
            estimate_log_normalizer(&density, 50_000, &mut stream(6000, STREAM_ORACLE)).unwrap();
        density.log_normalizer = Some(log_d);
        let sigma2 = 1.0;
        let mut all_match = true;
        let mut detail = String::new();
        for beta in [0.0, 0.5, 1.0] {
            let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
            for i in 0..=100 {
                for j in 0..=100 {
                    let s = [i as f64 / 100.0, j as f64 / 100.0];
                    let val = mixture_log_pdf(&s, &v, beta, sigma2, &density).unwrap();
                    if val > best.0 {
                        best = (val, s);
                    }
                }
            }
            if best.1 != v {
                all_match = false;
            }
            detail.push_str(&format!(
                "beta {beta}: argmax ({}, {}); ",
                best.1[0], best.1[1]
            ));
        }
        suite.record(
            "mixture_grid_argmax",
            all_match,
            detail.trim_end().to_string(),
        );
    }

    // Analytic vs central-difference gradients at 64-bit precision.
    {
        let s = random_images((1, 1, 16, 16), 7000);
        let v = random_images((1, 1, 16, 16), 7001);
        let step = 1e-6;
        let rel_err = |analytic: &Images, f: &dyn Fn(&Images) -> f64, at: &Images| -> f64 {
            let mut worst: f64 = 0.0;
            let mut probe = at.clone();
            let norm = analytic
                .iter()
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            for idx in 0..at.len() {
                let orig = probe.as_slice().unwrap()[idx];
                probe.as_slice_mut().unwrap()[idx] = orig + step;
                let up = f(&probe);
                probe.as_slice_mut().unwrap()[idx] = orig - step;
                let down = f(&probe);
                probe.as_slice_mut().unwrap()[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let a = analytic.as_slice().unwrap()[idx];
                worst = worst.max((a - fd).abs() / norm.max(fd.abs()));
            }
            worst
        };

        let (_, g_ssim) = ssim_with_grad(&s, &v, &cfg).unwrap();
        let ssim_err = rel_err(&g_ssim, &|x| ssim(&s, x, &cfg).unwrap(), &v);

        let weights = LossWeights {
            alpha: 0.75,
            beta: 0.25,
        };
        let probs = Array2::from_elem((1, 10), 0.1);
        let labels = [3u8];
        let g_total = total_loss_grad_v(&s, &v, &weights, &cfg).unwrap();
        let total_err = rel_err(
            &g_total,
            &|x| {
                total_loss(&s, x, &probs, &labels, &weights, &cfg)
                    .unwrap()
                    .total
            },
            &v,
        );
        suite.record(
            "gradient_finite_difference",
            ssim_err < 1e-4 && total_err < 1e-4,
            format!("ssim rel err = {ssim_err:.2e}, total-loss rel err = {total_err:.2e}"),
        );
    }

    // Power constraint |P - 1| < 1e-6 over 10^4 random vectors.
    {
        let mut rng = stream(8000, STREAM_ORACLE);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let cw = power_normalize(&raw).unwrap();
            worst = worst.max((cw.average_power() - 1.0).abs());
        }
        suite.record(
            "power_normalization",
            worst < 1e-6,
            format!("max |P - 1| = {worst:.3e}"),
        );
    }

    // AWGN empirical variance at 3 dB vs the closed form 10^(-0.3).
    {
        let (n, tolerance) = match scale {
            VerifyScale::Fast => (100_000usize, 0.02),
            VerifyScale::Thorough => (1_000_000, 0.01),
        };
        let expected = snr_db_to_noise_variance(3.0);
        let mut buf = vec![0.0f64; n];
        add_noise_in_place(&mut buf, 3.0, &mut stream(9000, STREAM_ORACLE));
        let var = buf.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let rel = (var - expected).abs() / expected;
        suite.record(
            "awgn_variance_3db",
            rel < tolerance,
            format!("empirical {var:.6} vs {expected:.6} (rel {rel:.2e}, n = {n})"),
        );
    }

    // Noise whiteness: autocorrelation at nonzero lags.
    {
        let (n, threshold) = match scale {
            VerifyScale::Fast => (100_000usize, 0.015),
            VerifyScale::Thorough => (1_000_000, 0.01),
        };
        let mut buf = vec![0.0f64; n];
        add_noise_in_place(&mut buf, 3.0, &mut stream(9001, STREAM_ORACLE));
        let var = buf.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let mut worst: f64 = 0.0;
        for lag in 1..=10usize {
            let mut acc = 0.0;
            for i in 0..n - lag {
                acc += buf[i] * buf[i + lag];
            }
            worst = worst.max((acc / ((n - lag) as f64 * var)).abs());
        }
        suite.record(
            "awgn_whiteness",
            worst < threshold,
            format!("max |autocorr(lag 1..10)| = {worst:.4} (n = {n})"),
        );
    }

    // Loss-level unique minimizer: reconstruction loss over a dense grid.
    {
        let s = [0.25, 0.75];
        let mut all_match = true;
        for beta in [0.0, 0.5, 1.0] {
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for i in 0..=100 {
                for j in 0..=100 {
                    let v = [i as f64 / 100.0, j as f64 / 100.0];
                    let val = crate::objective::reconstruction_loss_flat(&s, &v, beta, &cfg);
                    if val < best.0 {
                        best = (val, v);
                    }
                }
            }
            if best.1 != s {
                all_match = false;
            }
        }
        suite.record(
            "reconstruction_loss_unique_minimum",
            all_match,
            "argmin at v = s for beta in {0, 0.5, 1}".to_string(),
        );
    }

    // MSE sanity anchors (cheap, always on).
    {
        let ones = Images::ones((1, 3, 8, 8));
        let zeros = Images::zeros((1, 3, 8, 8));
        let ok =
            mse(&ones, &ones).unwrap() == 0.0 && (mse(&ones, &zeros).unwrap() - 1.0).abs() < 1e-15;
        suite.record("mse_anchors", ok, "mse(x,x) = 0, mse(1,0) = 1".to_string());
    }

    VerifyReport {
        scale,
        results: suite.results,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

//! Layers with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward` in
//! training mode; `backward` consumes the cache and accumulates parameter
//! gradients. Backward passes panic when called without a matching
//! training-mode forward, since that is a wiring bug rather than a runtime
//! condition.

use super::conv::{
    conv_backward_bias, conv_backward_input, conv_backward_weight, conv_forward, ConvGeometry,
};
use super::param::{Param, Parameterized};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array4, ArrayD, Dimension, Ix1, Ix4};
use rand_chacha::ChaCha8Rng;

/// Forward-pass mode: training caches activations and uses batch statistics,
/// evaluation uses running statistics and keeps no state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn add_grad<D: Dimension>(param: &mut Param, g: &ndarray::Array<f64, D>) {
    let gd = g.view().into_dyn();
    param.grad.zip_mut_with(&gd, |a, b| *a += b);
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut out = ArrayD::zeros(ndarray::IxDyn(shape));
    crate::rng::fill_normal(rng, out.as_slice_mut().unwrap(), 0.0, std);
    out
}

// --------------------------------------------------------------------------
// Conv2d
// --------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // [co, ci, k, k]
    pub bias: Param,   // [co]
    pub geom: ConvGeometry,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Array2<f64>,
    in_hw: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        ci: usize,
        co: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = ci * kernel * kernel;
        Conv2d {
            weight: Param::new(
                format!("{name}.weight"),
                he_normal(rng, &[co, ci, kernel, kernel], fan_in),
            ),
            bias: Param::zeros(format!("{name}.bias"), &[co]),
            geom: ConvGeometry {
                kernel,
                stride,
                padding,
            },
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let (y, cols) = conv_forward(x, &w, b.as_slice(), self.geom);
        self.cache = (mode == Mode::Train).then(|| ConvCache {
            cols,
            in_hw: (x.dim().2, x.dim().3),
        });
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let cache = self
            .cache
            .take()
            .expect("Conv2d::backward without training forward");
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let (co, ci, k, _) = w.dim();
        let gw = conv_backward_weight(gy, &cache.cols, co, ci, k);
        add_grad(&mut self.weight, &gw);
        let gb = Array1::from_vec(conv_backward_bias(gy));
        add_grad(&mut self.bias, &gb);
        conv_backward_input(gy, &w, self.geom, cache.in_hw)
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// --------------------------------------------------------------------------
// ConvTranspose2d
// --------------------------------------------------------------------------

/// Transposed convolution: the adjoint of a convolution with the same
/// geometry, so its forward pass is `conv_backward_input` and its backward
/// pass is `conv_forward`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param, // [ci, co, k, k]
    pub bias: Param,   // [co]
    pub geom: ConvGeometry,
    pub output_padding: usize,
    cache: Option<Array4<f64>>, // input
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        ci: usize,
        co: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(output_padding < stride, "output_padding must be < stride");
        let fan_in = ci * kernel * kernel;
        ConvTranspose2d {
            weight: Param::new(
                format!("{name}.weight"),
                he_normal(rng, &[ci, co, kernel, kernel], fan_in),
            ),
            bias: Param::zeros(format!("{name}.bias"), &[co]),
            geom: ConvGeometry {
                kernel,
                stride,
                padding,
            },
            output_padding,
            cache: None,
        }
    }

    pub fn out_hw(&self, in_hw: (usize, usize)) -> (usize, usize) {
        (
            self.geom.transposed_out_size(in_hw.0, self.output_padding),
            self.geom.transposed_out_size(in_hw.1, self.output_padding),
        )
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let out_hw = self.out_hw((x.dim().2, x.dim().3));
        let mut y = conv_backward_input(x, &w, self.geom, out_hw);
        let b = self.bias.value.as_slice().unwrap();
        let (n, co, ho, wo) = y.dim();
        let y_slice = y.as_slice_mut().unwrap();
        for bi in 0..n {
            for (c, &bc) in b.iter().enumerate().take(co) {
                for v in &mut y_slice[(bi * co + c) * ho * wo..(bi * co + c + 1) * ho * wo] {
                    *v += bc;
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let x = self
            .cache
            .take()
            .expect("ConvTranspose2d::backward without training forward");
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        // Input gradient: run the underlying convolution forward on gy.
        let (gx, gy_cols) = conv_forward(gy, &w, None, self.geom);
        // Weight gradient: the roles of input and output swap.
        let (ci, co, k, _) = w.dim();
        let gw = conv_backward_weight(&x, &gy_cols, ci, co, k);
        add_grad(&mut self.weight, &gw);
        let gb = Array1::from_vec(conv_backward_bias(gy));
        add_grad(&mut self.bias, &gb);
        gx
    }
}

impl Parameterized for ConvTranspose2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// --------------------------------------------------------------------------
// BatchNorm2d
// --------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    name: String,
    pub gamma: Param, // [c]
    pub beta: Param,  // [c]
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array4<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            name: name.to_string(),
            gamma: Param::new(
                format!("{name}.gamma"),
                ArrayD::ones(ndarray::IxDyn(&[channels])),
            ),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f64;
        let gamma = self.gamma.value.as_slice().unwrap().to_vec();
        let beta = self.beta.value.as_slice().unwrap().to_vec();
        let x_slice = x.as_slice().unwrap();
        let hw = h * w;

        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..n {
                    for ci in 0..c {
                        let s = &x_slice[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                        mean[ci] += s.iter().sum::<f64>();
                    }
                }
                for m in &mut mean {
                    *m /= count;
                }
                for bi in 0..n {
                    for ci in 0..c {
                        let s = &x_slice[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                        var[ci] += s
                            .iter()
                            .map(|v| (v - mean[ci]) * (v - mean[ci]))
                            .sum::<f64>();
                    }
                }
                for v in &mut var {
                    *v /= count;
                }
                // Running statistics use the unbiased variance.
                let unbias = count / (count - 1.0).max(1.0);
                for ci in 0..c {
                    self.running_mean[ci] =
                        (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                    self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci]
                        + self.momentum * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Array4::<f64>::zeros((n, c, h, w));
        let mut y = Array4::<f64>::zeros((n, c, h, w));
        {
            let xh_slice = xhat.as_slice_mut().unwrap();
            let y_slice = y.as_slice_mut().unwrap();
            for bi in 0..n {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    for i in base..base + hw {
                        let xh = (x_slice[i] - mean[ci]) * inv_std[ci];
                        xh_slice[i] = xh;
                        y_slice[i] = gamma[ci] * xh + beta[ci];
                    }
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| BnCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let BnCache { xhat, inv_std } = self
            .cache
            .take()
            .expect("BatchNorm2d::backward without training forward");
        let (n, c, h, w) = gy.dim();
        let count = (n * h * w) as f64;
        let hw = h * w;
        let gy_slice = gy.as_slice().unwrap();
        let xhat_slice = xhat.as_slice().unwrap();
        let gamma = self.gamma.value.as_slice().unwrap().to_vec();

        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..n {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for i in base..base + hw {
                    dgamma[ci] += gy_slice[i] * xhat_slice[i];
                    dbeta[ci] += gy_slice[i];
                }
            }
        }

        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        let gx_slice = gx.as_slice_mut().unwrap();
        for bi in 0..n {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let k1 = dbeta[ci] / count;
                let k2 = dgamma[ci] / count;
                let a = gamma[ci] * inv_std[ci];
                for i in base..base + hw {
                    gx_slice[i] = a * (gy_slice[i] - k1 - xhat_slice[i] * k2);
                }
            }
        }

        add_grad(&mut self.gamma, &Array1::from_vec(dgamma));
        add_grad(&mut self.beta, &Array1::from_vec(dbeta));
        gx
    }
}

impl Parameterized for BatchNorm2d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        let mean_name = format!("{}.running_mean", self.name);
        f(&mean_name, &mut self.running_mean);
        let var_name = format!("{}.running_var", self.name);
        f(&var_name, &mut self.running_var);
    }
}

// --------------------------------------------------------------------------
// Linear
// --------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
    cache: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                he_normal(rng, &[output, input], input),
            ),
            bias: Param::zeros(format!("{name}.bias"), &[output]),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let b = self.bias.value.as_slice().unwrap();
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            for (v, bc) in row.iter_mut().zip(b) {
                *v += bc;
            }
        }
        self.cache = (mode == Mode::Train).then(|| x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self
            .cache
            .take()
            .expect("Linear::backward without training forward");
        let gw = gy.t().dot(&x);
        add_grad(&mut self.weight, &gw);
        let gb = gy.sum_axis(ndarray::Axis(0));
        add_grad(&mut self.bias, &gb);
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        gy.dot(&w)
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// --------------------------------------------------------------------------
// PowerNorm
// --------------------------------------------------------------------------

/// Per-sample power normalization: `y = x * sqrt(K / sum(x^2))`, matching
/// [`crate::channel::power_normalize`] row by row.
#[derive(Debug, Clone, Default)]
pub struct PowerNorm {
    cache: Option<PowerNormCache>,
}

#[derive(Debug, Clone)]
struct PowerNormCache {
    x: Array2<f64>,
    scale: Vec<f64>,
    norm_sq: Vec<f64>,
}

impl PowerNorm {
    pub fn new() -> Self {
        PowerNorm { cache: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        let (n, k) = x.dim();
        let mut y = x.clone();
        let mut scale = vec![0.0; n];
        let mut norm_sq = vec![0.0; n];
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            let ss: f64 = row.iter().map(|v| v * v).sum();
            if ss < crate::channel::DEGENERATE_POWER_THRESHOLD {
                return Err(Error::DegenerateInput(format!(
                    "encoder emitted an all-zero symbol vector for sample {i}"
                )));
            }
            let sc = (k as f64 / ss).sqrt();
            row.mapv_inplace(|v| v * sc);
            scale[i] = sc;
            norm_sq[i] = ss;
        }
        self.cache = (mode == Mode::Train).then(|| PowerNormCache {
            x: x.clone(),
            scale,
            norm_sq,
        });
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let PowerNormCache { x, scale, norm_sq } = self
            .cache
            .take()
            .expect("PowerNorm::backward without training forward");
        let mut gx = Array2::<f64>::zeros(gy.raw_dim());
        for i in 0..gy.dim().0 {
            let xi = x.row(i);
            let gi = gy.row(i);
            let dot: f64 = xi.iter().zip(gi.iter()).map(|(a, b)| a * b).sum();
            let coef = dot / norm_sq[i];
            let mut go = gx.row_mut(i);
            for j in 0..go.len() {
                go[j] = scale[i] * (gi[j] - xi[j] * coef);
            }
        }
        gx
    }
}

// --------------------------------------------------------------------------
// Activations
// --------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu<D: Dimension> {
    mask: Option<ndarray::Array<f64, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward(&mut self, x: &ndarray::Array<f64, D>, mode: Mode) -> ndarray::Array<f64, D> {
        let y = x.mapv(|v| v.max(0.0));
        self.mask = (mode == Mode::Train).then(|| x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        y
    }

    pub fn backward(&mut self, gy: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        let mask = self
            .mask
            .take()
            .expect("Relu::backward without training forward");
        gy * &mask
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<D: Dimension> {
    y: Option<ndarray::Array<f64, D>>,
}

impl<D: Dimension> Sigmoid<D> {
    pub fn new() -> Self {
        Sigmoid { y: None }
    }

    pub fn forward(&mut self, x: &ndarray::Array<f64, D>, mode: Mode) -> ndarray::Array<f64, D> {
        let y = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        if mode == Mode::Train {
            self.y = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        let y = self
            .y
            .take()
            .expect("Sigmoid::backward without training forward");
        let mut gx = gy.clone();
        gx.zip_mut_with(&y, |g, &yv| *g *= yv * (1.0 - yv));
        gx
    }
}

/// Row-wise softmax with the usual max-shift stabilization.
#[derive(Debug, Clone, Default)]
pub struct Softmax {
    probs: Option<Array2<f64>>,
}

impl Softmax {
    pub fn new() -> Self {
        Softmax { probs: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        if mode == Mode::Train {
            self.probs = Some(y.clone());
        }
        y
    }

    /// Vector-Jacobian product through the softmax, taking the gradient with
    /// respect to the probabilities.
    pub fn backward(&mut self, gprobs: &Array2<f64>) -> Array2<f64> {
        let p = self
            .probs
            .take()
            .expect("Softmax::backward without training forward");
        let mut gx = Array2::<f64>::zeros(p.raw_dim());
        for i in 0..p.dim().0 {
            let pi = p.row(i);
            let gi = gprobs.row(i);
            let dot: f64 = pi.iter().zip(gi.iter()).map(|(a, b)| a * b).sum();
            let mut go = gx.row_mut(i);
            for j in 0..go.len() {
                go[j] = pi[j] * (gi[j] - dot);
            }
        }
        gx
    }
}

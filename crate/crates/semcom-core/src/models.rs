//! The three learnable networks: per-user encoders, the reconstruction
//! decoder, and the classification decoder.
//!
//! Encoder (one per user, independent weights, identical architecture):
//! 3x3 conv to 16 filters, six pre-activation residual blocks in three
//! stages of widths (16, 32, 64) with stride-2 transitions
//! (16x16 -> 8x8 -> 4x4), flatten, fully connected to the per-user symbol
//! budget, and power normalization. Encoders are deterministic; the only
//! stochastic node in the system is the channel noise, which is sampled
//! independently of the parameters and added to the codewords.
//!
//! Reconstruction decoder: two fully connected layers (200 -> 1024 -> 4096),
//! reshape to 8x8x64, a residual block, two transposed-residual upsampling
//! blocks (to 16x16x32 then 32x32x16), another residual block, a 3x3
//! transposed convolution to 3 channels, and a logistic squashing that pins
//! the output to [0, 1]. The single output tensor serves as both the Gaussian
//! mean and the SSIM-density parameter (parameter sharing).
//!
//! Classification decoder: three fully connected layers 200 -> 256 -> 128 ->
//! 10 with a terminal softmax.

use crate::error::{Error, Result};
use crate::nn::{
    Conv2d, ConvTranspose2d, Linear, Mode, Param, Parameterized, PowerNorm, Relu, ResidualBlock,
    Sigmoid, Softmax, UpsampleResidualBlock,
};
use crate::objective::Images;
use crate::rng::{stream, STREAM_INIT};
use ndarray::{Array2, Array4, Ix2, Ix4};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Spatial side of a user observation (one quadrant).
pub const OBS_SIDE: usize = 16;
/// Side of the full source image.
pub const IMAGE_SIDE: usize = 32;
/// Color channels.
pub const CHANNELS: usize = 3;
/// Number of classes in the dataset.
pub const NUM_CLASSES: usize = 10;

/// One user's encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    conv_in: Conv2d,
    blocks: Vec<ResidualBlock>,
    fc: Linear,
    pnorm: PowerNorm,
}

impl Encoder {
    pub fn new(name: &str, symbols: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks = vec![
            ResidualBlock::new(&format!("{name}.s1b1"), 16, 16, 1, rng),
            ResidualBlock::new(&format!("{name}.s1b2"), 16, 16, 1, rng),
            ResidualBlock::new(&format!("{name}.s2b1"), 16, 32, 2, rng),
            ResidualBlock::new(&format!("{name}.s2b2"), 32, 32, 1, rng),
            ResidualBlock::new(&format!("{name}.s3b1"), 32, 64, 2, rng),
            ResidualBlock::new(&format!("{name}.s3b2"), 64, 64, 1, rng),
        ];
        Encoder {
            conv_in: Conv2d::new(&format!("{name}.conv_in"), CHANNELS, 16, 3, 1, 1, rng),
            blocks,
            fc: Linear::new(&format!("{name}.fc"), 64 * 4 * 4, symbols, rng),
            pnorm: PowerNorm::new(),
        }
    }

    /// Map a `[n, 3, 16, 16]` observation to `[n, symbols]` power-normalized
    /// codewords.
    pub fn forward(&mut self, obs: &Array4<f64>, mode: Mode) -> Result<Array2<f64>> {
        let (n, c, h, w) = obs.dim();
        if c != CHANNELS || h != OBS_SIDE || w != OBS_SIDE {
            return Err(Error::Argument(format!(
                "encoder expects [n, {CHANNELS}, {OBS_SIDE}, {OBS_SIDE}], got [{n}, {c}, {h}, {w}]"
            )));
        }
        let mut t = self.conv_in.forward(obs, mode);
        for b in &mut self.blocks {
            t = b.forward(&t, mode);
        }
        let flat = t.into_shape_with_order((n, 64 * 4 * 4)).unwrap();
        let raw = self.fc.forward(&flat, mode);
        self.pnorm.forward(&raw, mode)
    }

    /// Backpropagate from the codeword gradient to the observation gradient.
    pub fn backward(&mut self, g_code: &Array2<f64>) -> Array4<f64> {
        let g_raw = self.pnorm.backward(g_code);
        let g_flat = self.fc.backward(&g_raw);
        let n = g_flat.dim().0;
        let mut g = g_flat.into_shape_with_order((n, 64, 4, 4)).unwrap();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        self.conv_in.backward(&g)
    }
}

impl Parameterized for Encoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv_in.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        self.fc.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        for b in &mut self.blocks {
            b.visit_buffers(f);
        }
    }
}

/// Full-image reconstruction decoder.
#[derive(Debug, Clone)]
pub struct ReconDecoder {
    fc1: Linear,
    relu_fc: Relu<Ix2>,
    fc2: Linear,
    block_in: ResidualBlock,
    up1: UpsampleResidualBlock,
    up2: UpsampleResidualBlock,
    block_out: ResidualBlock,
    convt_out: ConvTranspose2d,
    squash: Sigmoid<Ix4>,
    total_symbols: usize,
}

impl ReconDecoder {
    pub fn new(name: &str, total_symbols: usize, rng: &mut ChaCha8Rng) -> Self {
        ReconDecoder {
            fc1: Linear::new(&format!("{name}.fc1"), total_symbols, 1024, rng),
            relu_fc: Relu::new(),
            fc2: Linear::new(&format!("{name}.fc2"), 1024, 4096, rng),
            block_in: ResidualBlock::new(&format!("{name}.block_in"), 64, 64, 1, rng),
            up1: UpsampleResidualBlock::new(&format!("{name}.up1"), 64, 32, rng),
            up2: UpsampleResidualBlock::new(&format!("{name}.up2"), 32, 16, rng),
            block_out: ResidualBlock::new(&format!("{name}.block_out"), 16, 16, 1, rng),
            convt_out: ConvTranspose2d::new(
                &format!("{name}.convt_out"),
                16,
                CHANNELS,
                3,
                1,
                1,
                0,
                rng,
            ),
            squash: Sigmoid::new(),
            total_symbols,
        }
    }

    /// Map `[n, total_symbols]` received signals to `[n, 3, 32, 32]` images
    /// with every element in `[0, 1]`.
    pub fn forward(&mut self, y: &Array2<f64>, mode: Mode) -> Result<Images> {
        let (n, d) = y.dim();
        if d != self.total_symbols {
            return Err(Error::Argument(format!(
                "reconstruction decoder expects [n, {}], got [{n}, {d}]",
                self.total_symbols
            )));
        }
        let t = self.relu_fc.forward(&self.fc1.forward(y, mode), mode);
        let t = self.fc2.forward(&t, mode);
        let mut t = t.into_shape_with_order((n, 64, 8, 8)).unwrap();
        t = self.block_in.forward(&t, mode);
        t = self.up1.forward(&t, mode);
        t = self.up2.forward(&t, mode);
        t = self.block_out.forward(&t, mode);
        t = self.convt_out.forward(&t, mode);
        Ok(self.squash.forward(&t, mode))
    }

    /// Backpropagate from the image gradient to the received-signal gradient.
    pub fn backward(&mut self, g_image: &Images) -> Array2<f64> {
        let g = self.squash.backward(g_image);
        let g = self.convt_out.backward(&g);
        let g = self.block_out.backward(&g);
        let g = self.up2.backward(&g);
        let g = self.up1.backward(&g);
        let g = self.block_in.backward(&g);
        let n = g.dim().0;
        let g = g.into_shape_with_order((n, 4096)).unwrap();
        let g = self.fc2.backward(&g);
        let g = self.relu_fc.backward(&g);
        self.fc1.backward(&g)
    }
}

impl Parameterized for ReconDecoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
        self.block_in.visit_params(f);
        self.up1.visit_params(f);
        self.up2.visit_params(f);
        self.block_out.visit_params(f);
        self.convt_out.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        self.block_in.visit_buffers(f);
        self.up1.visit_buffers(f);
        self.up2.visit_buffers(f);
        self.block_out.visit_buffers(f);
    }
}

/// Classification decoder.
#[derive(Debug, Clone)]
pub struct ClassDecoder {
    fc1: Linear,
    relu1: Relu<Ix2>,
    fc2: Linear,
    relu2: Relu<Ix2>,
    fc3: Linear,
    softmax: Softmax,
    total_symbols: usize,
}

impl ClassDecoder {
    pub fn new(name: &str, total_symbols: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassDecoder {
            fc1: Linear::new(&format!("{name}.fc1"), total_symbols, 256, rng),
            relu1: Relu::new(),
            fc2: Linear::new(&format!("{name}.fc2"), 256, 128, rng),
            relu2: Relu::new(),
            fc3: Linear::new(&format!("{name}.fc3"), 128, NUM_CLASSES, rng),
            softmax: Softmax::new(),
            total_symbols,
        }
    }

    /// Map `[n, total_symbols]` received signals to `[n, 10]` class
    /// probability rows summing to one.
    pub fn forward(&mut self, y: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        let (n, d) = y.dim();
        if d != self.total_symbols {
            return Err(Error::Argument(format!(
                "classification decoder expects [n, {}], got [{n}, {d}]",
                self.total_symbols
            )));
        }
        let t = self.relu1.forward(&self.fc1.forward(y, mode), mode);
        let t = self.relu2.forward(&self.fc2.forward(&t, mode), mode);
        Ok(self.softmax.forward(&self.fc3.forward(&t, mode), mode))
    }

    /// Backpropagate from the probability gradient to the received-signal
    /// gradient.
    pub fn backward(&mut self, g_probs: &Array2<f64>) -> Array2<f64> {
        let g = self.softmax.backward(g_probs);
        let g = self.fc3.backward(&g);
        let g = self.relu2.backward(&g);
        let g = self.fc2.backward(&g);
        let g = self.relu1.backward(&g);
        self.fc1.backward(&g)
    }
}

impl Parameterized for ClassDecoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
        self.fc3.visit_params(f);
    }
}

/// The complete system: `n_users` encoders plus the two decoders.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub encoders: Vec<Encoder>,
    pub recon_decoder: ReconDecoder,
    pub class_decoder: ClassDecoder,
    pub symbols_per_user: usize,
}

impl SystemModel {
    /// Deterministic initialization from the experiment seed.
    pub fn new(n_users: usize, symbols_per_user: usize, seed: u64) -> Self {
        let mut rng = stream(seed, STREAM_INIT);
        let encoders = (0..n_users)
            .map(|i| Encoder::new(&format!("encoder_{i}"), symbols_per_user, &mut rng))
            .collect();
        let total = n_users * symbols_per_user;
        SystemModel {
            encoders,
            recon_decoder: ReconDecoder::new("recon_decoder", total, &mut rng),
            class_decoder: ClassDecoder::new("class_decoder", total, &mut rng),
            symbols_per_user,
        }
    }

    pub fn n_users(&self) -> usize {
        self.encoders.len()
    }

    pub fn total_symbols(&self) -> usize {
        self.encoders.len() * self.symbols_per_user
    }

    /// Encode one user's observation; the per-sample output is already power
    /// normalized.
    pub fn encode_user(
        &mut self,
        user: usize,
        obs: &Array4<f64>,
        mode: Mode,
    ) -> Result<Array2<f64>> {
        if user >= self.encoders.len() {
            return Err(Error::Argument(format!("user index {user} out of range")));
        }
        self.encoders[user].forward(obs, mode)
    }

    /// Encode all user observations in parallel and concatenate the codewords
    /// in user-index order into `[n, total_symbols]`.
    pub fn encode_all(&mut self, observations: &[Array4<f64>], mode: Mode) -> Result<Array2<f64>> {
        if observations.len() != self.encoders.len() {
            return Err(Error::Argument(format!(
                "expected {} observations, got {}",
                self.encoders.len(),
                observations.len()
            )));
        }
        let symbols_per_user = self.symbols_per_user;
        let total = self.total_symbols();
        let codes: Vec<Result<Array2<f64>>> = self
            .encoders
            .par_iter_mut()
            .zip(observations.par_iter())
            .map(|(enc, obs)| enc.forward(obs, mode))
            .collect();
        let mut columns = Vec::with_capacity(codes.len());
        for c in codes {
            columns.push(c?);
        }
        let n = columns[0].dim().0;
        let mut out = Array2::<f64>::zeros((n, total));
        for (u, code) in columns.iter().enumerate() {
            out.slice_mut(ndarray::s![
                ..,
                u * symbols_per_user..(u + 1) * symbols_per_user
            ])
            .assign(code);
        }
        Ok(out)
    }

    /// Backpropagate the concatenated codeword gradient into every encoder.
    pub fn encode_all_backward(&mut self, g_codes: &Array2<f64>) -> Vec<Array4<f64>> {
        let k = self.symbols_per_user;
        let slices: Vec<Array2<f64>> = (0..self.encoders.len())
            .map(|u| {
                g_codes
                    .slice(ndarray::s![.., u * k..(u + 1) * k])
                    .to_owned()
            })
            .collect();
        self.encoders
            .par_iter_mut()
            .zip(slices.par_iter())
            .map(|(enc, g)| enc.backward(g))
            .collect()
    }

    pub fn decode_reconstruction(&mut self, y: &Array2<f64>, mode: Mode) -> Result<Images> {
        self.recon_decoder.forward(y, mode)
    }

    pub fn decode_class(&mut self, y: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        self.class_decoder.forward(y, mode)
    }
}

impl Parameterized for SystemModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for e in &mut self.encoders {
            e.visit_params(f);
        }
        self.recon_decoder.visit_params(f);
        self.class_decoder.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        for e in &mut self.encoders {
            e.visit_buffers(f);
        }
        self.recon_decoder.visit_buffers(f);
        self.class_decoder.visit_buffers(f);
    }
}

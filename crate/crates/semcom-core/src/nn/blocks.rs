//! Pre-activation residual blocks, in plain and upsampling variants.

use super::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Mode, Relu};
use super::param::{Param, Parameterized};
use ndarray::{Array4, Ix4};
use rand_chacha::ChaCha8Rng;

/// Pre-activation residual block: `y = conv2(relu(bn2(conv1(relu(bn1(x)))))) + skip`.
///
/// The skip is the identity when the shape is preserved, otherwise a 1x1
/// strided projection applied to the pre-activated input.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    projection: Option<Conv2d>,
    relu1: Relu<Ix4>,
    relu2: Relu<Ix4>,
    cache_x: Option<Array4<f64>>, // only needed for the identity skip
}

impl ResidualBlock {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let projection = (in_ch != out_ch || stride != 1)
            .then(|| Conv2d::new(&format!("{name}.proj"), in_ch, out_ch, 1, stride, 0, rng));
        ResidualBlock {
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), in_ch),
            conv1: Conv2d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_ch),
            conv2: Conv2d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, rng),
            projection,
            relu1: Relu::new(),
            relu2: Relu::new(),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let t = self.relu1.forward(&self.bn1.forward(x, mode), mode);
        let mut main = self.conv1.forward(&t, mode);
        main = self.relu2.forward(&self.bn2.forward(&main, mode), mode);
        main = self.conv2.forward(&main, mode);
        let skip = match &mut self.projection {
            Some(proj) => proj.forward(&t, mode),
            None => x.clone(),
        };
        if mode == Mode::Train && self.projection.is_none() {
            self.cache_x = Some(x.clone());
        }
        main + skip
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let g_main = self.conv2.backward(gy);
        let g_main = self.bn2.backward(&self.relu2.backward(&g_main));
        let mut g_t = self.conv1.backward(&g_main);
        let mut g_skip_x: Option<Array4<f64>> = None;
        match &mut self.projection {
            Some(proj) => {
                g_t += &proj.backward(gy);
            }
            None => {
                self.cache_x.take();
                g_skip_x = Some(gy.clone());
            }
        }
        let mut gx = self.bn1.backward(&self.relu1.backward(&g_t));
        if let Some(gs) = g_skip_x {
            gx += &gs;
        }
        gx
    }
}

impl Parameterized for ResidualBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.bn1.visit_params(f);
        self.conv1.visit_params(f);
        self.bn2.visit_params(f);
        self.conv2.visit_params(f);
        if let Some(p) = &mut self.projection {
            p.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
}

/// Transposed-residual block that doubles the spatial size:
/// main path `bn-relu-convT3x3(s2) -> bn-relu-conv3x3`, skip path a learned
/// 2x2 stride-2 transposed convolution on the pre-activated input.
#[derive(Debug, Clone)]
pub struct UpsampleResidualBlock {
    bn1: BatchNorm2d,
    convt1: ConvTranspose2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    projection: ConvTranspose2d,
    relu1: Relu<Ix4>,
    relu2: Relu<Ix4>,
}

impl UpsampleResidualBlock {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        UpsampleResidualBlock {
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), in_ch),
            convt1: ConvTranspose2d::new(&format!("{name}.convt1"), in_ch, out_ch, 3, 2, 1, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_ch),
            conv2: Conv2d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, rng),
            projection: ConvTranspose2d::new(
                &format!("{name}.proj"),
                in_ch,
                out_ch,
                2,
                2,
                0,
                0,
                rng,
            ),
            relu1: Relu::new(),
            relu2: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let t = self.relu1.forward(&self.bn1.forward(x, mode), mode);
        let mut main = self.convt1.forward(&t, mode);
        main = self.relu2.forward(&self.bn2.forward(&main, mode), mode);
        main = self.conv2.forward(&main, mode);
        let skip = self.projection.forward(&t, mode);
        main + skip
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let g_main = self.conv2.backward(gy);
        let g_main = self.bn2.backward(&self.relu2.backward(&g_main));
        let mut g_t = self.convt1.backward(&g_main);
        g_t += &self.projection.backward(gy);
        self.bn1.backward(&self.relu1.backward(&g_t))
    }
}

impl Parameterized for UpsampleResidualBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.bn1.visit_params(f);
        self.convt1.visit_params(f);
        self.bn2.visit_params(f);
        self.conv2.visit_params(f);
        self.projection.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, STREAM_INIT, STREAM_ORACLE};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = stream(seed, STREAM_ORACLE);
        Array4::from_shape_fn(shape, |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn residual_block_shapes() {
        let mut rng = stream(1, STREAM_INIT);
        let mut same = ResidualBlock::new("b", 8, 8, 1, &mut rng);
        let x = rand4((2, 8, 16, 16), 2);
        assert_eq!(same.forward(&x, Mode::Eval).dim(), (2, 8, 16, 16));

        let mut down = ResidualBlock::new("d", 8, 16, 2, &mut rng);
        assert_eq!(down.forward(&x, Mode::Eval).dim(), (2, 16, 8, 8));

        let mut up = UpsampleResidualBlock::new("u", 16, 8, &mut rng);
        let z = rand4((2, 16, 8, 8), 3);
        assert_eq!(up.forward(&z, Mode::Eval).dim(), (2, 8, 16, 16));
    }

    fn fd_input_check<F>(mut loss: F, x: &mut Array4<f64>, gx: &Array4<f64>, indices: &[usize])
    where
        F: FnMut(&Array4<f64>) -> f64,
    {
        let eps = 1e-6;
        for &idx in indices {
            let orig = x.as_slice().unwrap()[idx];
            x.as_slice_mut().unwrap()[idx] = orig + eps;
            let up = loss(x);
            x.as_slice_mut().unwrap()[idx] = orig - eps;
            let down = loss(x);
            x.as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = gx.as_slice().unwrap()[idx];
            assert!(
                (a - fd).abs() < 1e-4 * fd.abs().max(1.0),
                "idx {idx}: {a} vs {fd}"
            );
        }
    }

    #[test]
    fn residual_block_input_gradient_is_correct() {
        let mut rng = stream(4, STREAM_INIT);
        let mut block = ResidualBlock::new("b", 3, 5, 2, &mut rng);
        let mut x = rand4((2, 3, 8, 8), 5);
        let y = block.forward(&x, Mode::Train);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = block.backward(&gy);
        let snapshot = block.clone();
        fd_input_check(
            |xv| {
                let mut b = snapshot.clone();
                b.forward(xv, Mode::Train).iter().map(|v| v * v).sum()
            },
            &mut x,
            &gx,
            &[0, 33, 77, 190, 383],
        );
    }

    #[test]
    fn identity_skip_block_input_gradient_is_correct() {
        let mut rng = stream(6, STREAM_INIT);
        let mut block = ResidualBlock::new("b", 4, 4, 1, &mut rng);
        let mut x = rand4((1, 4, 6, 6), 7);
        let y = block.forward(&x, Mode::Train);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = block.backward(&gy);
        let snapshot = block.clone();
        fd_input_check(
            |xv| {
                let mut b = snapshot.clone();
                b.forward(xv, Mode::Train).iter().map(|v| v * v).sum()
            },
            &mut x,
            &gx,
            &[0, 21, 80, 143],
        );
    }

    #[test]
    fn upsample_block_input_gradient_is_correct() {
        let mut rng = stream(8, STREAM_INIT);
        let mut block = UpsampleResidualBlock::new("u", 4, 2, &mut rng);
        let mut x = rand4((1, 4, 4, 4), 9);
        let y = block.forward(&x, Mode::Train);
        assert_eq!(y.dim(), (1, 2, 8, 8));
        let gy = y.mapv(|v| 2.0 * v);
        let gx = block.backward(&gy);
        let snapshot = block.clone();
        fd_input_check(
            |xv| {
                let mut b = snapshot.clone();
                b.forward(xv, Mode::Train).iter().map(|v| v * v).sum()
            },
            &mut x,
            &gx,
            &[0, 13, 31, 63],
        );
    }

    #[test]
    fn parameter_gradients_flow_everywhere() {
        let mut rng = stream(10, STREAM_INIT);
        let mut block = ResidualBlock::new("b", 3, 6, 2, &mut rng);
        let x = rand4((4, 3, 8, 8), 11);
        let y = block.forward(&x, Mode::Train);
        let gy = y.mapv(|v| 2.0 * v);
        block.zero_grads();
        let _ = block.backward(&gy);
        block.visit_params(&mut |p| {
            let norm: f64 = p.grad.iter().map(|g| g * g).sum();
            assert!(norm > 0.0, "dead gradient on {}", p.name);
        });
    }
}

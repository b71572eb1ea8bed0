//! Trainable parameter storage.

use ndarray::{ArrayD, IxDyn};

/// One named parameter tensor with its gradient accumulator and the
/// first/second-moment buffers the optimizer maintains.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let zero = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            grad: zero.clone(),
            m: zero.clone(),
            v: zero,
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// True if every element of the value tensor is finite.
    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|x| x.is_finite())
    }
}

/// Visitor over the parameters of a network component.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Visit non-trainable state (running statistics) that checkpoints must
    /// capture. Layers without buffers keep the default no-op.
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut Vec<f64>)) {}

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Name of the first non-finite parameter, if any.
    fn first_non_finite(&mut self) -> Option<String> {
        let mut bad = None;
        self.visit_params(&mut |p| {
            if bad.is_none() && !p.is_finite() {
                bad = Some(p.name.clone());
            }
        });
        bad
    }

    /// FNV-1a hash over the exact bit patterns of all parameter values, in
    /// visitation order. Used by the freeze-contract tests.
    fn params_hash(&mut self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit_params(&mut |p| {
            for &x in p.value.iter() {
                for byte in x.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        });
        h
    }
}

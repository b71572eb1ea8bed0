//! Gradient-descent optimizers over [`Param`] collections.

use super::param::{Param, Parameterized};

/// Which update rule to apply. Adaptive moments are the default; plain SGD is
/// selectable from the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Optimizer with per-parameter first/second-moment state stored inside the
/// parameters themselves (so checkpoints capture it for free). `step_count`
/// drives Adam's bias correction.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        }
    }

    /// Apply one update to every parameter of `net` from its accumulated
    /// gradients. Does not zero the gradients.
    pub fn step(&mut self, net: &mut dyn Parameterized) {
        self.step_count += 1;
        let t = self.step_count;
        let (kind, lr, b1, b2, eps) = (
            self.kind,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
        );
        net.visit_params(&mut |p: &mut Param| match kind {
            OptimizerKind::Sgd => {
                ndarray::Zip::from(&mut p.value)
                    .and(&p.grad)
                    .for_each(|v, &g| *v -= lr * g);
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - b1.powi(t as i32);
                let bc2 = 1.0 - b2.powi(t as i32);
                ndarray::Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(&mut p.m)
                    .and(&mut p.v)
                    .for_each(|val, &g, m, v| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *val -= lr * mhat / (vhat.sqrt() + eps);
                    });
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    struct OneParam(Param);

    impl Parameterized for OneParam {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut p = Param::new("w", ArrayD::from_elem(ndarray::IxDyn(&[4]), 0.5));
            p.grad.fill(1.7);
            let before = p.value.clone();
            let mut net = OneParam(p);
            let mut opt = Optimizer::new(kind, 0.0);
            opt.step(&mut net);
            assert_eq!(net.0.value, before);
        }
    }

    #[test]
    fn sgd_descends_a_quadratic() {
        // minimize (w - 3)^2, gradient 2(w - 3)
        let mut net = OneParam(Param::new("w", ArrayD::zeros(ndarray::IxDyn(&[1]))));
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        for _ in 0..200 {
            let w = net.0.value[[0]];
            net.0.grad[[0]] = 2.0 * (w - 3.0);
            opt.step(&mut net);
        }
        assert!((net.0.value[[0]] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn adam_descends_a_quadratic_and_first_step_size_is_lr() {
        let mut net = OneParam(Param::new("w", ArrayD::zeros(ndarray::IxDyn(&[1]))));
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05);
        net.0.grad[[0]] = 4.2;
        opt.step(&mut net);
        // Bias-corrected first step has magnitude lr regardless of gradient scale.
        assert!((net.0.value[[0]] + 0.05).abs() < 1e-6);
        for _ in 0..500 {
            net.0.zero_grad();
            let w = net.0.value[[0]];
            net.0.grad[[0]] = 2.0 * (w - 3.0);
            opt.step(&mut net);
        }
        assert!((net.0.value[[0]] - 3.0).abs() < 1e-3);
    }
}

use crate::error::{Error, Result};
use crate::numkit::{Real, Tensor};

/// A collection of named parameter tensors with a stable enumeration order.
///
/// Models, their gradient accumulators and optimizer moments all share this
/// ordering, which is also the order entries appear in checkpoints.
pub trait ParamSet<R: Real> {
    fn named(&self) -> Vec<(String, &Tensor<R>)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>>;

    fn tensors(&self) -> Vec<&Tensor<R>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(R::zero());
        }
    }

    /// `self += alpha * other`, tensor by tensor.
    fn axpy_from(&mut self, alpha: R, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.axpy(alpha, src);
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Clone, Debug)]
pub struct AdamState<R = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<R>>,
    second: Vec<Tensor<R>>,
}

impl<R: Real> AdamState<R> {
    pub fn new(config: AdamConfig, shapes: &[&Tensor<R>]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|t| t.zeros_like()).collect(),
            second: shapes.iter().map(|t| t.zeros_like()).collect(),
        }
    }

    pub fn for_set(config: AdamConfig, params: &impl ParamSet<R>) -> Self {
        Self::new(config, &params.tensors())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One Adam update of `params` along `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor<R>], grads: &[&Tensor<R>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dims() != g.dims() || p.dims() != self.first[i].dims() {
                return Err(Error::Shape(format!(
                    "adam entry {i}: param {:?}, grad {:?}, moment {:?}",
                    p.dims(),
                    g.dims(),
                    self.first[i].dims()
                )));
            }
        }
        self.step += 1;
        let c = &self.config;
        let b1 = R::of(c.beta1);
        let b2 = R::of(c.beta2);
        let one = R::one();
        let bc1 = R::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = R::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = R::of(c.lr);
        let eps = R::of(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_set<P: ParamSet<R>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        self.step(&mut params, &grads)
    }
}

/// Multi-step learning-rate schedule: `base * gamma^(number of milestones passed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
            gamma: 1.0,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        self.base * self.gamma.powi(passed as i32)
    }
}

use crate::error::{Error, Result};
use crate::numkit::{Real, Tensor};

/// Linear-beta DDPM schedule over timesteps `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {t_max}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range [{beta_start}, {beta_end}] must satisfy 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f64> = (0..t_max)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64)
            .collect();
        let alpha_bar = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bar })
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative signal coefficient; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::OutOfRange {
                what: "timestep",
                value: format!("{t} (valid 1..={})", self.t_max()),
            });
        }
        Ok(())
    }

    /// Variance of `x_{t-1} | x_t, x_0`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(200, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn add_noise<R: Real>(x0: &Tensor<R>, t: usize, eps: &Tensor<R>, schedule: &NoiseSchedule) -> Result<Tensor<R>> {
    schedule.check_t(t)?;
    noise_with_alpha_bar(x0, eps, schedule.alpha_bar(t))
}

/// The noising formula for an explicit cumulative coefficient.
pub fn noise_with_alpha_bar<R: Real>(x0: &Tensor<R>, eps: &Tensor<R>, alpha_bar: f64) -> Result<Tensor<R>> {
    if x0.dims() != eps.dims() {
        return Err(Error::Shape(format!("x0 {:?} vs eps {:?}", x0.dims(), eps.dims())));
    }
    let a = R::of(alpha_bar.sqrt());
    let b = R::of((1.0 - alpha_bar).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + b * e).collect();
    Ok(Tensor::from_vec(x0.dims(), data))
}

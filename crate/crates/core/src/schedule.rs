//! Noise schedules and the closed-form forward (noising) process.

use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-timestep variances beta_t with the derived alpha_t = 1 - beta_t and
/// cumulative products alpha_bar_t, indexed 1..=T. By convention
/// alpha_bar_0 = 1, so a reverse step targeting timestep 0 lands in clean
/// data space.
///
/// Coefficients are computed once in `f64` and immutable afterwards.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>, // alpha_bar[t] for t in 0..=T, alpha_bar[0] = 1
}

impl NoiseSchedule {
    /// Linearly spaced beta from `beta_start` to `beta_end` inclusive.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::config("schedule needs at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule { beta, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.beta.len(), "beta index {t} out of range");
        self.beta[t - 1]
    }

    /// alpha_t = 1 - beta_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// Cumulative product alpha_bar_t for t in 0..=T; alpha_bar_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t < self.alpha_bar.len(), "alpha_bar index {t} out of range");
        self.alpha_bar[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.timesteps() {
            return Err(Error::contract(format!("timestep {t} outside 1..={}", self.timesteps())));
        }
        Ok(())
    }
}

/// Closed-form sample of the forward process at timestep `t`:
/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
///
/// `t = 0` is allowed and returns `x0` (alpha_bar_0 = 1 convention).
pub fn forward_marginal<R: Real>(
    x0: &Tensor<R>,
    t: usize,
    eps: &Tensor<R>,
    sched: &NoiseSchedule,
) -> Result<Tensor<R>> {
    if t > 0 {
        sched.check_t(t)?;
    }
    if x0.shape() != eps.shape() {
        return Err(Error::contract(format!(
            "eps shape {:?} differs from x0 shape {:?}",
            eps.shape(),
            x0.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let c0 = R::from_f64(ab.sqrt());
    let c1 = R::from_f64((1.0 - ab).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| c0 * x + c1 * e).collect();
    Tensor::from_vec(x0.shape().to_vec(), data)
}

/// One noised batch: per-row uniform timestep and Gaussian noise.
#[derive(Debug, Clone)]
pub struct CorruptedBatch<R: Real> {
    pub x_t: Tensor<R>,
    pub t: Vec<usize>,
    pub eps: Tensor<R>,
}

/// Applies [`forward_marginal`] row-wise with independent t ~ U{1..T} and
/// eps ~ N(0, I).
pub fn corrupt_batch<R: Real, G: Rng + ?Sized>(
    batch: &Tensor<R>,
    rng: &mut G,
    sched: &NoiseSchedule,
) -> Result<CorruptedBatch<R>> {
    let (n, d) = batch.rows_cols()?;
    if n == 0 {
        return Err(Error::contract("corrupt_batch on empty batch"));
    }
    let mut t = Vec::with_capacity(n);
    let eps = Tensor::randn(vec![n, d], rng);
    let mut x_t = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        let ti = rng.gen_range(1..=sched.timesteps());
        t.push(ti);
        let ab = sched.alpha_bar(ti);
        let c0 = R::from_f64(ab.sqrt());
        let c1 = R::from_f64((1.0 - ab).sqrt());
        for j in 0..d {
            x_t.data_mut()[i * d + j] = c0 * batch.data()[i * d + j] + c1 * eps.data()[i * d + j];
        }
    }
    Ok(CorruptedBatch { x_t, t, eps })
}

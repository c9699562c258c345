//! Timestep-subset selection and the DDPM / DDIM reverse-process samplers.
//!
//! Steps exist in two forms: on-graph (`*_node`) for the differentiable
//! finetuning chain, and value-level wrappers that run each step in a
//! throwaway graph so plain sampling keeps no tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{BoundDenoiser, DenoiserParams};
use crate::diffcore::{Graph, Node, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::schedule::NoiseSchedule;

/// How the budgeted subset is spaced over {1..T}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    /// tau_i = floor(c * i) with c = T / budget.
    Linear,
    /// tau_i = floor(c * i^2) with c = T / budget^2.
    Quadratic,
}

/// An ordered timestep budget: strictly decreasing timesteps in [1, T],
/// with the terminal step always targeting 0 (alpha_bar_0 = 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepSubset {
    method: SelectionMethod,
    /// Descending: steps[0] is the chain start, steps[last] >= 1.
    steps: Vec<usize>,
}

impl TimestepSubset {
    /// Descending timesteps, largest first.
    pub fn descending(&self) -> &[usize] {
        &self.steps
    }

    pub fn budget(&self) -> usize {
        self.steps.len()
    }

    pub fn method(&self) -> SelectionMethod {
        self.method
    }

    /// Consecutive (from, to) pairs, ending with (smallest, 0).
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.steps.len());
        for w in self.steps.windows(2) {
            pairs.push((w[0], w[1]));
        }
        pairs.push((*self.steps.last().unwrap(), 0));
        pairs
    }
}

/// Picks the budgeted subset. Indices are evaluated in integer arithmetic
/// (`floor(T * i / budget)` and `floor(T * i^2 / budget^2)`), clamped into
/// [1, T]; the largest selected timestep lands at T by construction.
/// Duplicate timesteps after flooring are a configuration error: the budget
/// is a contract, not a hint.
pub fn select_timesteps(
    method: SelectionMethod,
    total: usize,
    budget: usize,
) -> Result<TimestepSubset> {
    if total == 0 || budget == 0 || budget > total {
        return Err(Error::config(format!(
            "budget must satisfy 1 <= budget <= T, got budget={budget}, T={total}"
        )));
    }
    let mut ascending = Vec::with_capacity(budget);
    for i in 1..=budget {
        let tau = match method {
            SelectionMethod::Linear => total * i / budget,
            SelectionMethod::Quadratic => total * i * i / (budget * budget),
        };
        ascending.push(tau.clamp(1, total));
    }
    for w in ascending.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::config(format!(
                "{method:?} selection at T={total}, budget={budget} collapses duplicate timesteps"
            )));
        }
    }
    ascending.reverse();
    Ok(TimestepSubset { method, steps: ascending })
}

/// Which reverse-process sampler runs the chain. DDIM is the deterministic
/// sigma_t = 0 rule; DDPM injects Gaussian noise with sigma_t^2 = beta_t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

impl SamplerKind {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, SamplerKind::Ddpm)
    }
}

/// DDIM update on graph nodes: predict eps, reconstruct x0, re-noise
/// deterministically to `t_prev`.
pub fn ddim_step_node<R: Real>(
    graph: &Graph<R>,
    bound: &BoundDenoiser<R>,
    x_t: &Node<R>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Node<R>> {
    if t_prev > t {
        return Err(Error::contract(format!("ddim step requires t_prev <= t, got {t_prev} > {t}")));
    }
    if t == t_prev {
        return Ok(x_t.clone());
    }
    let (n, _) = node_rows_cols(x_t);
    let eps_hat = bound.predict(graph, x_t, &vec![t; n], sched.timesteps());
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    // x0_pred = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
    let x0_pred = x_t
        .add(&eps_hat.mul_scalar(R::from_f64(-(1.0 - ab_t).sqrt())))
        .mul_scalar(R::from_f64(1.0 / ab_t.sqrt()));
    Ok(x0_pred
        .mul_scalar(R::from_f64(ab_prev.sqrt()))
        .add(&eps_hat.mul_scalar(R::from_f64((1.0 - ab_prev).sqrt()))))
}

/// Generalized DDPM update between two budget timesteps, with the injected
/// noise passed explicitly (reparametrized). The effective variance of the
/// jump is beta_eff = 1 - alpha_bar_t / alpha_bar_prev, which reduces to
/// beta_t for an adjacent step. The terminal step to 0 must use zero noise.
pub fn ddpm_step_between_node<R: Real>(
    graph: &Graph<R>,
    bound: &BoundDenoiser<R>,
    x_t: &Node<R>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    noise: &Node<R>,
) -> Result<Node<R>> {
    if t < 1 || t > sched.timesteps() {
        return Err(Error::contract(format!(
            "ddpm step at t={t} outside 1..={}",
            sched.timesteps()
        )));
    }
    if t_prev >= t {
        return Err(Error::contract(format!("ddpm step requires t_prev < t, got {t_prev} >= {t}")));
    }
    let (n, _) = node_rows_cols(x_t);
    let eps_hat = bound.predict(graph, x_t, &vec![t; n], sched.timesteps());
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let alpha_eff = ab_t / ab_prev;
    let beta_eff = 1.0 - alpha_eff;
    // mu = (x_t - beta_eff/sqrt(1-ab_t) * eps_hat) / sqrt(alpha_eff)
    let mu = x_t
        .add(&eps_hat.mul_scalar(R::from_f64(-beta_eff / (1.0 - ab_t).sqrt())))
        .mul_scalar(R::from_f64(1.0 / alpha_eff.sqrt()));
    let sigma = beta_eff.sqrt();
    Ok(mu.add(&noise.mul_scalar(R::from_f64(sigma))))
}

fn node_rows_cols<R: Real>(node: &Node<R>) -> (usize, usize) {
    let shape = node.shape();
    assert_eq!(shape.len(), 2, "sampler states are rank-2 batches");
    (shape[0], shape[1])
}

/// Value-level DDIM step (throwaway graph).
pub fn ddim_step<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor<R>> {
    let graph = Graph::new();
    let bound = BoundDenoiser::bind(&graph, params, false);
    let x = graph.constant(x_t.clone());
    Ok(ddim_step_node(&graph, &bound, &x, t, t_prev, sched)?.value())
}

/// Value-level DDPM step from `t` to `t - 1`, per the reverse-process
/// definition. `noise` must be zero at t = 1.
pub fn ddpm_step<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Tensor<R>,
) -> Result<Tensor<R>> {
    ddpm_step_between(params, x_t, t, t - 1, sched, noise)
}

/// Value-level DDPM step between arbitrary subset timesteps.
pub fn ddpm_step_between<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    noise: &Tensor<R>,
) -> Result<Tensor<R>> {
    if noise.shape() != x_t.shape() {
        return Err(Error::contract("ddpm noise shape mismatch"));
    }
    let graph = Graph::new();
    let bound = BoundDenoiser::bind(&graph, params, false);
    let x = graph.constant(x_t.clone());
    let z = graph.constant(noise.clone());
    Ok(ddpm_step_between_node(&graph, &bound, &x, t, t_prev, sched, &z)?.value())
}

/// A generated batch plus everything needed to replay it: the initial
/// Gaussian draw and, for DDPM, the per-step injected noises.
#[derive(Debug, Clone)]
pub struct SampleBatch<R: Real> {
    pub samples: Tensor<R>,
    pub x_init: Tensor<R>,
    /// One noise tensor per chain transition when `kind` is DDPM
    /// (zero tensor recorded for the terminal step); empty for DDIM.
    pub noises: Vec<Tensor<R>>,
    pub subset: TimestepSubset,
    pub kind: SamplerKind,
}

/// Runs the reverse chain over the subset, starting from x ~ N(0, I).
pub fn sample_chain<R: Real, G: Rng + ?Sized>(
    params: &DenoiserParams<R>,
    sched: &NoiseSchedule,
    subset: &TimestepSubset,
    kind: SamplerKind,
    n: usize,
    rng: &mut G,
) -> Result<SampleBatch<R>> {
    if n == 0 {
        return Err(Error::contract("sample_chain needs n >= 1"));
    }
    let d = params.spec().input_dim;
    let x_init = Tensor::<R>::randn(vec![n, d], rng);
    let noises = match kind {
        SamplerKind::Ddim => Vec::new(),
        SamplerKind::Ddpm => {
            let transitions = subset.transitions();
            transitions
                .iter()
                .map(|&(_, to)| {
                    if to == 0 {
                        Tensor::zeros(vec![n, d])
                    } else {
                        Tensor::<R>::randn(vec![n, d], rng)
                    }
                })
                .collect()
        }
    };
    sample_chain_from(params, sched, subset, kind, x_init, noises)
}

/// Deterministic replay of a chain from explicit initial noise (and, for
/// DDPM, explicit per-step noises).
pub fn sample_chain_from<R: Real>(
    params: &DenoiserParams<R>,
    sched: &NoiseSchedule,
    subset: &TimestepSubset,
    kind: SamplerKind,
    x_init: Tensor<R>,
    noises: Vec<Tensor<R>>,
) -> Result<SampleBatch<R>> {
    let transitions = subset.transitions();
    if kind == SamplerKind::Ddpm && noises.len() != transitions.len() {
        return Err(Error::contract(format!(
            "DDPM chain over {} transitions needs {} noise tensors, got {}",
            transitions.len(),
            transitions.len(),
            noises.len()
        )));
    }
    let mut x = x_init.clone();
    for (i, &(from, to)) in transitions.iter().enumerate() {
        x = match kind {
            SamplerKind::Ddim => ddim_step(params, &x, from, to, sched)?,
            SamplerKind::Ddpm => ddpm_step_between(params, &x, from, to, sched, &noises[i])?,
        };
    }
    Ok(SampleBatch { samples: x, x_init, noises, subset: subset.clone(), kind })
}

//! The noise-prediction network and its standard pretraining loop.
//!
//! Desk scale replaces the usual UNet with an MLP: the input point is
//! concatenated with a sinusoidal embedding of the normalized timestep and
//! pushed through `depth` SiLU-activated hidden layers plus a linear output
//! head of the input dimension.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState, Graph, Node, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::schedule::{corrupt_batch, NoiseSchedule};

/// Architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    /// Data dimension d.
    pub input_dim: usize,
    pub hidden_width: usize,
    /// Number of SiLU-activated hidden layers.
    pub depth: usize,
    /// Total sinusoidal embedding width; must be even (sin and cos halves).
    pub time_embed_dim: usize,
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_width == 0
            || self.depth == 0
            || self.time_embed_dim == 0
        {
            return Err(Error::config("denoiser spec fields must be positive"));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "time_embed_dim must be even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    /// Linear layer shapes in storage order, `(fan_in, fan_out)` per layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.input_dim + self.time_embed_dim;
        for _ in 0..self.depth {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.input_dim));
        dims
    }
}

/// Weights and biases, stored flat as `[w0, b0, w1, b1, ...]` so the
/// optimizer, checkpoint format and gradient tests all see one ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<R: Real> {
    spec: DenoiserSpec,
    tensors: Vec<Tensor<R>>,
}

impl<R: Real> DenoiserParams<R> {
    pub fn from_tensors(spec: DenoiserSpec, tensors: Vec<Tensor<R>>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if tensors.len() != dims.len() * 2 {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                dims.len() * 2,
                tensors.len()
            )));
        }
        for (l, (fan_in, fan_out)) in dims.iter().enumerate() {
            if tensors[2 * l].shape() != [*fan_in, *fan_out] {
                return Err(Error::contract(format!("layer {l} weight shape mismatch")));
            }
            if tensors[2 * l + 1].shape() != [1, *fan_out] {
                return Err(Error::contract(format!("layer {l} bias shape mismatch")));
            }
        }
        Ok(DenoiserParams { spec, tensors })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    /// `layerN.weight` / `layerN.bias`, matching the storage order.
    pub fn tensor_names(&self) -> Vec<String> {
        (0..self.tensors.len())
            .map(|i| format!("layer{}.{}", i / 2, if i % 2 == 0 { "weight" } else { "bias" }))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    /// Lossy precision change; used to run `f32`-trained models through the
    /// `f64` verification paths.
    pub fn convert<S: Real>(&self) -> DenoiserParams<S> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                Tensor::from_vec(
                    t.shape().to_vec(),
                    t.data().iter().map(|v| S::from_f64(v.as_f64())).collect(),
                )
                .unwrap()
            })
            .collect();
        DenoiserParams { spec: self.spec, tensors }
    }
}

/// Fan-in-scaled Gaussian weights, zero biases; deterministic per seed.
pub fn init_denoiser<R: Real, G: Rng + ?Sized>(
    spec: DenoiserSpec,
    rng: &mut G,
) -> Result<DenoiserParams<R>> {
    spec.validate()?;
    let mut tensors = Vec::new();
    for (fan_in, fan_out) in spec.layer_dims() {
        let std = 1.0 / (fan_in as f64).sqrt();
        let mut w = Tensor::<R>::randn(vec![fan_in, fan_out], rng);
        for v in w.data_mut() {
            *v = *v * R::from_f64(std);
        }
        tensors.push(w);
        tensors.push(Tensor::zeros(vec![1, fan_out]));
    }
    Ok(DenoiserParams { spec, tensors })
}

/// Parameters bound to nodes of one graph, ready to run the network.
pub struct BoundDenoiser<R: Real> {
    spec: DenoiserSpec,
    nodes: Vec<Node<R>>,
}

impl<R: Real> BoundDenoiser<R> {
    /// Registers every tensor on `graph`; `trainable` marks them as leaves.
    pub fn bind(graph: &Graph<R>, params: &DenoiserParams<R>, trainable: bool) -> Self {
        let nodes = params
            .tensors
            .iter()
            .map(|t| if trainable { graph.leaf(t.clone()) } else { graph.constant(t.clone()) })
            .collect();
        BoundDenoiser { spec: params.spec, nodes }
    }

    pub fn param_nodes(&self) -> &[Node<R>] {
        &self.nodes
    }

    /// Rebuilds the binding from an explicit node list (the checkpointed
    /// sampling segments receive parameters this way).
    pub fn from_nodes(spec: DenoiserSpec, nodes: &[Node<R>]) -> Self {
        assert_eq!(nodes.len(), spec.layer_dims().len() * 2, "node count mismatch");
        BoundDenoiser { spec, nodes: nodes.to_vec() }
    }

    /// Runs the network on `x` with one timestep per row.
    pub fn predict(
        &self,
        graph: &Graph<R>,
        x: &Node<R>,
        ts: &[usize],
        total_timesteps: usize,
    ) -> Node<R> {
        let emb = time_embedding_matrix::<R>(ts, total_timesteps, self.spec.time_embed_dim);
        let angles = graph.constant(emb);
        let temb = angles.sin().concat_cols(&angles.cos());
        let mut h = x.concat_cols(&temb);
        for l in 0..self.spec.depth {
            h = h.matmul(&self.nodes[2 * l]).add_row(&self.nodes[2 * l + 1]).silu();
        }
        let out = self.spec.depth;
        h.matmul(&self.nodes[2 * out]).add_row(&self.nodes[2 * out + 1])
    }
}

/// Angle matrix for the sinusoidal embedding: entry (i, k) is
/// `(t_i / T) * omega_k` with geometrically spaced frequencies.
fn time_embedding_matrix<R: Real>(
    ts: &[usize],
    total_timesteps: usize,
    embed_dim: usize,
) -> Tensor<R> {
    let half = embed_dim / 2;
    let mut data = Vec::with_capacity(ts.len() * half);
    for &t in ts {
        let s = t as f64 / total_timesteps as f64;
        for k in 0..half {
            let omega = if half > 1 { 1000.0f64.powf(k as f64 / (half - 1) as f64) } else { 1.0 };
            data.push(R::from_f64(s * omega));
        }
    }
    Tensor::from_vec(vec![ts.len(), half], data).unwrap()
}

/// One forward pass on a throwaway graph.
pub fn predict_noise<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    ts: &[usize],
    total_timesteps: usize,
) -> Result<Tensor<R>> {
    let (n, d) = x_t.rows_cols()?;
    if d != params.spec.input_dim {
        return Err(Error::contract(format!(
            "input dimension {d} does not match spec d={}",
            params.spec.input_dim
        )));
    }
    if ts.len() != n {
        return Err(Error::contract(format!("{n} rows but {} timesteps", ts.len())));
    }
    let graph = Graph::new();
    let bound = BoundDenoiser::bind(&graph, params, false);
    let x = graph.constant(x_t.clone());
    Ok(bound.predict(&graph, &x, ts, total_timesteps).value())
}

/// Squared-error noise-prediction loss on one explicit corrupted batch.
pub fn noise_prediction_loss<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    ts: &[usize],
    eps: &Tensor<R>,
    total_timesteps: usize,
) -> Result<R> {
    let graph = Graph::new();
    let bound = BoundDenoiser::bind(&graph, params, false);
    let x = graph.constant(x_t.clone());
    let pred = bound.predict(&graph, &x, ts, total_timesteps);
    let diff = pred.sub(&graph.constant(eps.clone()));
    diff.mul(&diff).mean().value().item()
}

/// Pretraining settings. The 2e-4 learning rate is a conventional choice
/// for training from scratch; the much smaller finetuning rate lives in
/// [`crate::finetune::FinetuneConfig`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 20_000,
            batch_size: 128,
            optimizer: AdamConfig::with_learning_rate(2e-4),
        }
    }
}

/// Standard denoising pretraining: corrupt a batch, regress the noise,
/// Adam-update. Returns new parameters and the per-iteration loss history;
/// the input parameters are left untouched.
pub fn pretrain<R: Real, G: Rng + ?Sized>(
    params: &DenoiserParams<R>,
    dataset: &Tensor<R>,
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
    rng: &mut G,
) -> Result<(DenoiserParams<R>, Vec<f64>)> {
    let (n, d) = dataset.rows_cols()?;
    if n == 0 {
        return Err(Error::contract("pretrain on empty dataset"));
    }
    if d != params.spec.input_dim {
        return Err(Error::contract(format!(
            "dataset dimension {d} does not match spec d={}",
            params.spec.input_dim
        )));
    }
    let mut current = params.clone();
    let mut opt = AdamState::new(cfg.optimizer, current.tensors());
    let mut history = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        // Batch rows drawn with replacement.
        let rows: Vec<&[R]> =
            (0..cfg.batch_size).map(|_| dataset.row(rng.gen_range(0..n))).collect();
        let batch = Tensor::from_rows(&rows)?;
        let corrupted = corrupt_batch(&batch, rng, sched)?;

        let graph = Graph::new();
        let bound = BoundDenoiser::bind(&graph, &current, true);
        let x = graph.constant(corrupted.x_t.clone());
        let pred = bound.predict(&graph, &x, &corrupted.t, sched.timesteps());
        let diff = pred.sub(&graph.constant(corrupted.eps.clone()));
        let loss = diff.mul(&diff).mean();

        let loss_value = loss.value().item()?.as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, loss: loss_value });
        }
        history.push(loss_value);

        let grads = graph.grad(&loss, bound.param_nodes())?;
        opt.apply(current.tensors_mut(), &grads)?;
    }
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> DenoiserSpec {
        DenoiserSpec { input_dim: 2, hidden_width: 16, depth: 2, time_embed_dim: 8 }
    }

    #[test]
    fn spec_validation() {
        assert!(small_spec().validate().is_ok());
        let mut bad = small_spec();
        bad.time_embed_dim = 7;
        assert!(bad.validate().is_err());
        bad = small_spec();
        bad.depth = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_seed_deterministic_with_zero_biases() {
        let spec = small_spec();
        let a: DenoiserParams<f32> =
            init_denoiser(spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b: DenoiserParams<f32> =
            init_denoiser(spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        for (i, t) in a.tensors().iter().enumerate() {
            if i % 2 == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_weight_std_tracks_fan_in() {
        // Empirical std over a 128x128 layer vs 1/sqrt(128), within 10%.
        let spec = DenoiserSpec { input_dim: 2, hidden_width: 128, depth: 2, time_embed_dim: 8 };
        let params: DenoiserParams<f64> =
            init_denoiser(spec, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let w = &params.tensors()[2]; // hidden layer, fan_in = 128
        let n = w.numel() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let want = 1.0 / 128.0f64.sqrt();
        assert!((var.sqrt() - want).abs() < 0.1 * want);
    }

    #[test]
    fn predict_shape_and_determinism() {
        let params: DenoiserParams<f32> =
            init_denoiser(small_spec(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let x = Tensor::randn(vec![5, 2], &mut ChaCha8Rng::seed_from_u64(8));
        let ts = vec![3, 10, 50, 99, 100];
        let a = predict_noise(&params, &x, &ts, 100).unwrap();
        let b = predict_noise(&params, &x, &ts, 100).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, b);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let params: DenoiserParams<f32> =
            init_denoiser(small_spec(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let x = Tensor::zeros(vec![4, 3]);
        assert!(matches!(predict_noise(&params, &x, &[1, 2, 3, 4], 100), Err(Error::Contract(_))));
    }

    #[test]
    fn pretrain_zero_iterations_is_identity() {
        let params: DenoiserParams<f32> =
            init_denoiser(small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let data = Tensor::randn(vec![32, 2], &mut ChaCha8Rng::seed_from_u64(2));
        let sched = NoiseSchedule::linear(10, 1e-4, 2e-2).unwrap();
        let cfg = PretrainConfig { iterations: 0, ..Default::default() };
        let (out, history) =
            pretrain(&params, &data, &sched, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out, params);
        assert!(history.is_empty());
    }

    #[test]
    fn pretrain_is_seed_deterministic() {
        let params: DenoiserParams<f32> =
            init_denoiser(small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let data = Tensor::randn(vec![64, 2], &mut ChaCha8Rng::seed_from_u64(2));
        let sched = NoiseSchedule::linear(10, 1e-4, 2e-2).unwrap();
        let cfg = PretrainConfig { iterations: 5, batch_size: 16, ..Default::default() };
        let (p1, h1) =
            pretrain(&params, &data, &sched, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (p2, h2) =
            pretrain(&params, &data, &sched, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn loss_is_invariant_under_batch_permutation() {
        let params: DenoiserParams<f64> =
            init_denoiser(small_spec(), &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x_t = Tensor::randn(vec![6, 2], &mut rng);
        let eps = Tensor::randn(vec![6, 2], &mut rng);
        let ts = vec![1, 5, 9, 2, 7, 10];

        let loss = noise_prediction_loss(&params, &x_t, &ts, &eps, 10).unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let x_p = Tensor::from_rows(&perm.iter().map(|&i| x_t.row(i)).collect::<Vec<_>>()).unwrap();
        let e_p = Tensor::from_rows(&perm.iter().map(|&i| eps.row(i)).collect::<Vec<_>>()).unwrap();
        let ts_p: Vec<usize> = perm.iter().map(|&i| ts[i]).collect();
        let loss_p = noise_prediction_loss(&params, &x_p, &ts_p, &e_p, 10).unwrap();

        assert!((loss - loss_p).abs() < 1e-12);
    }
}

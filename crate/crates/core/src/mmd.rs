//! Kernels, feature maps, and the unbiased MMD² estimator, usable both as a
//! differentiable training loss and as an evaluation statistic.
//!
//! The estimator over generated features x and real features y is
//!
//! ```text
//! 1/(N(N-1)) sum_{i != j} k(x_i, x_j)  -  2/N^2 sum_{i,j} k(x_i, y_j)  +  c
//! ```
//!
//! where the constant `c = 1/(N(N-1)) sum_{i != j} k(y_i, y_j)` has zero
//! gradient in the generator parameters. The optimizer-facing form drops it;
//! reported values include it so they are genuine unbiased MMD² estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState, Graph, Node, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// RBF bandwidth: explicit, or the median heuristic over the joined batch.
/// Serializes as a bare number or the string "median".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RbfBandwidth {
    Sigma(f64),
    Median,
}

impl serde::Serialize for RbfBandwidth {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RbfBandwidth::Sigma(s) => serializer.serialize_f64(*s),
            RbfBandwidth::Median => serializer.serialize_str("median"),
        }
    }
}

impl<'de> serde::Deserialize<'de> for RbfBandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = RbfBandwidth;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a positive number or the string \"median\"")
            }

            fn visit_f64<E: serde::de::Error>(
                self,
                v: f64,
            ) -> std::result::Result<RbfBandwidth, E> {
                Ok(RbfBandwidth::Sigma(v))
            }

            fn visit_i64<E: serde::de::Error>(
                self,
                v: i64,
            ) -> std::result::Result<RbfBandwidth, E> {
                Ok(RbfBandwidth::Sigma(v as f64))
            }

            fn visit_str<E: serde::de::Error>(
                self,
                v: &str,
            ) -> std::result::Result<RbfBandwidth, E> {
                if v == "median" {
                    Ok(RbfBandwidth::Median)
                } else {
                    Err(E::custom(format!("expected \"median\" or a number, got {v:?}")))
                }
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

/// Kernel choice. The cubic kernel scales the inner product by 1/d with d
/// the feature dimension of its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Cubic,
    Rbf { bandwidth: RbfBandwidth },
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Cubic => "cubic",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(s) } = self {
            if s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::config(format!("rbf bandwidth must be positive, got {s}")));
            }
        }
        Ok(())
    }

    /// Pins the median-heuristic bandwidth against concrete batches.
    fn resolve<R: Real>(&self, fx: &Tensor<R>, fy: &Tensor<R>) -> Result<ResolvedKernel> {
        self.validate()?;
        Ok(match self {
            KernelSpec::Linear => ResolvedKernel::Linear,
            KernelSpec::Cubic => ResolvedKernel::Cubic,
            KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(s) } => {
                ResolvedKernel::Rbf { sigma_sq: s * s }
            }
            KernelSpec::Rbf { bandwidth: RbfBandwidth::Median } => {
                ResolvedKernel::Rbf { sigma_sq: median_heuristic_sigma_sq(fx, fy)? }
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum ResolvedKernel {
    Linear,
    Cubic,
    Rbf { sigma_sq: f64 },
}

/// Evaluates the kernel on one pair of feature vectors.
///
/// The median-heuristic bandwidth needs a whole batch to resolve, so it is
/// rejected here; evaluate through [`mmd2_unbiased`] or resolve a sigma
/// first.
pub fn kernel_eval<R: Real>(spec: &KernelSpec, u: &[R], v: &[R]) -> Result<R> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "kernel on mismatched dimensions {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let resolved = match spec {
        KernelSpec::Rbf { bandwidth: RbfBandwidth::Median } => {
            return Err(Error::contract(
                "median-heuristic bandwidth is batch-level; resolve it before kernel_eval",
            ));
        }
        other => other
            .resolve(&Tensor::<R>::zeros(vec![0, u.len()]), &Tensor::zeros(vec![0, u.len()]))?,
    };
    Ok(R::from_f64(kernel_value_f64(
        &resolved,
        &u.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
        &v.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
    )))
}

fn kernel_value_f64(kernel: &ResolvedKernel, u: &[f64], v: &[f64]) -> f64 {
    match kernel {
        ResolvedKernel::Linear => dot(u, v),
        ResolvedKernel::Cubic => {
            let d = u.len() as f64;
            (dot(u, v) / d + 1.0).powi(3)
        }
        ResolvedKernel::Rbf { sigma_sq } => {
            let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (-sq / (2.0 * sigma_sq)).exp()
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Median-heuristic bandwidth: sigma^2 is the median pairwise squared
/// distance over the joined batch, divided by two. Deterministic given the
/// inputs; even pair counts average the two middle values.
pub fn median_heuristic_sigma_sq<R: Real>(fx: &Tensor<R>, fy: &Tensor<R>) -> Result<f64> {
    let (nx, d) = fx.rows_cols()?;
    let (ny, dy) = fy.rows_cols()?;
    if d != dy {
        return Err(Error::contract("median heuristic on mismatched feature dimensions"));
    }
    let total = nx + ny;
    if total < 2 {
        return Err(Error::contract("median heuristic needs at least two points"));
    }
    let row = |i: usize| -> &[R] {
        if i < nx {
            fx.row(i)
        } else {
            fy.row(i - nx)
        }
    };
    let mut dists = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        for j in (i + 1)..total {
            let sq: f64 = row(i)
                .iter()
                .zip(row(j))
                .map(|(a, b)| {
                    let diff = a.as_f64() - b.as_f64();
                    diff * diff
                })
                .sum();
            dists.push(sq);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    Ok(median / 2.0)
}

/// Frozen embedding applied before kernel evaluation. Parameters never
/// train; gradients flow through the inputs only.
#[derive(Debug, Clone)]
pub enum FeatureMap<R: Real> {
    /// Raw coordinates; meaningful on the lab's low-dimensional data.
    Identity,
    /// Fixed seeded projection with a SiLU nonlinearity.
    RandomProjection { weight: Tensor<R>, bias: Tensor<R> },
    /// Small frozen encoder (SiLU hidden layer, linear head), trained as an
    /// autoencoder on the toy data and then frozen.
    Encoder { tensors: Vec<Tensor<R>> },
}

impl<R: Real> FeatureMap<R> {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Identity => "identity",
            FeatureMap::RandomProjection { .. } => "randproj",
            FeatureMap::Encoder { .. } => "encoder",
        }
    }

    /// Seeded Gaussian projection to `output_dim` features.
    pub fn random_projection<G: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        rng: &mut G,
    ) -> Self {
        let mut weight = Tensor::<R>::randn(vec![input_dim, output_dim], rng);
        let scale = R::from_f64(1.0 / (input_dim as f64).sqrt());
        for v in weight.data_mut() {
            *v = *v * scale;
        }
        let bias = Tensor::<R>::randn(vec![1, output_dim], rng);
        FeatureMap::RandomProjection { weight, bias }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::RandomProjection { weight, .. } => weight.shape()[1],
            FeatureMap::Encoder { tensors } => tensors[2].shape()[1],
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            FeatureMap::Identity => None,
            FeatureMap::RandomProjection { weight, .. } => Some(weight.shape()[0]),
            FeatureMap::Encoder { tensors } => Some(tensors[0].shape()[0]),
        }
    }

    /// Row-wise application on graph nodes; map parameters enter as
    /// constants so they stay frozen.
    pub fn apply_node(&self, graph: &Graph<R>, x: &Node<R>) -> Node<R> {
        match self {
            FeatureMap::Identity => x.clone(),
            FeatureMap::RandomProjection { weight, bias } => {
                let w = graph.constant(weight.clone());
                let b = graph.constant(bias.clone());
                x.matmul(&w).add_row(&b).silu()
            }
            FeatureMap::Encoder { tensors } => {
                let w1 = graph.constant(tensors[0].clone());
                let b1 = graph.constant(tensors[1].clone());
                let w2 = graph.constant(tensors[2].clone());
                let b2 = graph.constant(tensors[3].clone());
                x.matmul(&w1).add_row(&b1).silu().matmul(&w2).add_row(&b2)
            }
        }
    }

    /// Fingerprint of the frozen parameters, used to assert immutability
    /// across a finetuning run.
    pub fn checksum(&self) -> u64 {
        let mut acc: u64 = 0xcbf29ce484222325;
        let mut fold = |bits: u64| {
            acc ^= bits;
            acc = acc.wrapping_mul(0x100000001b3);
        };
        match self {
            FeatureMap::Identity => fold(1),
            FeatureMap::RandomProjection { weight, bias } => {
                for t in [weight, bias] {
                    for v in t.data() {
                        fold(v.as_f64().to_bits());
                    }
                }
            }
            FeatureMap::Encoder { tensors } => {
                for t in tensors {
                    for v in t.data() {
                        fold(v.as_f64().to_bits());
                    }
                }
            }
        }
        acc
    }
}

/// Row-wise feature extraction on plain values.
pub fn featurize<R: Real>(map: &FeatureMap<R>, batch: &Tensor<R>) -> Result<Tensor<R>> {
    let (_, d) = batch.rows_cols()?;
    if let Some(want) = map.input_dim() {
        if want != d {
            return Err(Error::contract(format!(
                "feature map expects input dimension {want}, got {d}"
            )));
        }
    }
    if matches!(map, FeatureMap::Identity) {
        return Ok(batch.clone());
    }
    let graph = Graph::new();
    let x = graph.constant(batch.clone());
    Ok(map.apply_node(&graph, &x).value())
}

/// Trains a small autoencoder on `data` and freezes its encoder half as a
/// feature map. Deterministic per rng state.
pub fn train_encoder<R: Real, G: Rng + ?Sized>(
    data: &Tensor<R>,
    hidden: usize,
    feature_dim: usize,
    iterations: usize,
    batch_size: usize,
    rng: &mut G,
) -> Result<FeatureMap<R>> {
    let (n, d) = data.rows_cols()?;
    if n == 0 {
        return Err(Error::contract("train_encoder on empty data"));
    }
    // [enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2]
    let dims = [(d, hidden), (hidden, feature_dim), (feature_dim, hidden), (hidden, d)];
    let mut tensors: Vec<Tensor<R>> = Vec::new();
    for (fan_in, fan_out) in dims {
        let std = R::from_f64(1.0 / (fan_in as f64).sqrt());
        let mut w = Tensor::<R>::randn(vec![fan_in, fan_out], rng);
        for v in w.data_mut() {
            *v = *v * std;
        }
        tensors.push(w);
        tensors.push(Tensor::zeros(vec![1, fan_out]));
    }
    let mut opt = AdamState::new(AdamConfig::with_learning_rate(1e-3), &tensors);
    for iter in 0..iterations {
        let rows: Vec<&[R]> = (0..batch_size).map(|_| data.row(rng.gen_range(0..n))).collect();
        let batch = Tensor::from_rows(&rows)?;
        let graph = Graph::new();
        let nodes: Vec<Node<R>> = tensors.iter().map(|t| graph.leaf(t.clone())).collect();
        let x = graph.constant(batch.clone());
        let mut h = x.clone();
        for l in 0..4 {
            h = h.matmul(&nodes[2 * l]).add_row(&nodes[2 * l + 1]);
            if l == 0 || l == 2 {
                h = h.silu();
            }
        }
        let diff = h.sub(&x);
        let loss = diff.mul(&diff).mean();
        let loss_value = loss.value().item()?.as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, loss: loss_value });
        }
        let grads = graph.grad(&loss, &nodes)?;
        opt.apply(&mut tensors, &grads)?;
    }
    tensors.truncate(4);
    Ok(FeatureMap::Encoder { tensors })
}

/// An MMD² estimate with the context needed to interpret it.
#[derive(Debug, Clone)]
pub struct MMDEstimate {
    pub value: f64,
    pub batch_size: usize,
    pub kernel: KernelSpec,
    /// Bandwidth actually used when the kernel is RBF.
    pub resolved_sigma_sq: Option<f64>,
    pub includes_constant: bool,
}

/// Differentiable unbiased MMD² between generated features `fx` (a graph
/// node) and real features `fy` (plain values). Gradients flow only through
/// `fx`. With `include_constant` the real-real term is materialized so the
/// value is a genuine unbiased estimate; without it the theta-independent
/// term is dropped, which leaves gradients unchanged.
pub fn mmd2_node<R: Real>(
    graph: &Graph<R>,
    fx: &Node<R>,
    fy: &Tensor<R>,
    kernel: &KernelSpec,
    include_constant: bool,
) -> Result<(Node<R>, MMDEstimate)> {
    let fx_value = fx.value();
    let (n, d) = fx_value.rows_cols()?;
    let (ny, dy) = fy.rows_cols()?;
    if n != ny {
        return Err(Error::contract(format!("batch sizes must match, got {n} vs {ny}")));
    }
    if d != dy {
        return Err(Error::contract(format!("feature dimensions must match, got {d} vs {dy}")));
    }
    if n < 2 {
        return Err(Error::EstimatorUndefined(n));
    }
    let resolved = kernel.resolve(&fx_value, fy)?;

    let k_xx = kernel_gram_node(graph, fx, fy, &resolved, GramSide::XX);
    let k_xy = kernel_gram_node(graph, fx, fy, &resolved, GramSide::XY);

    let nf = n as f64;
    // Off-diagonal mask keeps the i != j sum inside the op set.
    let mut mask = Tensor::filled(vec![n, n], R::one());
    for i in 0..n {
        mask.data_mut()[i * n + i] = R::zero();
    }
    let mask = graph.constant(mask);
    let term_xx = k_xx.mul(&mask).sum().mul_scalar(R::from_f64(1.0 / (nf * (nf - 1.0))));
    let term_xy = k_xy.sum().mul_scalar(R::from_f64(-2.0 / (nf * nf)));
    let mut loss = term_xx.add(&term_xy);

    if include_constant {
        let mut c = 0.0f64;
        let fy64 = fy.to_f64();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    c += kernel_value_f64(&resolved, fy64.row(i), fy64.row(j));
                }
            }
        }
        c /= nf * (nf - 1.0);
        loss = loss.add_scalar(R::from_f64(c));
    }

    let estimate = MMDEstimate {
        value: loss.value().item()?.as_f64(),
        batch_size: n,
        kernel: *kernel,
        resolved_sigma_sq: match resolved {
            ResolvedKernel::Rbf { sigma_sq } => Some(sigma_sq),
            _ => None,
        },
        includes_constant: include_constant,
    };
    Ok((loss, estimate))
}

enum GramSide {
    XX,
    XY,
}

/// Kernel matrix as a graph node: k(fx_i, fx_j) or k(fx_i, fy_j).
fn kernel_gram_node<R: Real>(
    graph: &Graph<R>,
    fx: &Node<R>,
    fy: &Tensor<R>,
    kernel: &ResolvedKernel,
    side: GramSide,
) -> Node<R> {
    let d = fx.shape()[1];
    let inner = match side {
        GramSide::XX => fx.matmul(&fx.transpose()),
        GramSide::XY => {
            let (ny, dy) = fy.rows_cols().unwrap();
            let mut fyt = Tensor::zeros(vec![dy, ny]);
            for i in 0..ny {
                for j in 0..dy {
                    fyt.data_mut()[j * ny + i] = fy.data()[i * dy + j];
                }
            }
            fx.matmul(&graph.constant(fyt))
        }
    };
    match kernel {
        ResolvedKernel::Linear => inner,
        ResolvedKernel::Cubic => {
            inner.mul_scalar(R::from_f64(1.0 / d as f64)).add_scalar(R::one()).powi(3)
        }
        ResolvedKernel::Rbf { sigma_sq } => {
            let ones = graph.constant(Tensor::filled(vec![d, 1], R::one()));
            let rx = fx.mul(fx).matmul(&ones); // [n,1] row squared norms
            let sq = match side {
                GramSide::XX => {
                    inner.mul_scalar(R::from_f64(-2.0)).add_col(&rx).add_row(&rx.transpose())
                }
                GramSide::XY => {
                    let (ny, dy) = fy.rows_cols().unwrap();
                    let mut ry = Tensor::zeros(vec![1, ny]);
                    for i in 0..ny {
                        let mut acc = R::zero();
                        for j in 0..dy {
                            let v = fy.data()[i * dy + j];
                            acc = acc + v * v;
                        }
                        ry.data_mut()[i] = acc;
                    }
                    inner.mul_scalar(R::from_f64(-2.0)).add_col(&rx).add_row(&graph.constant(ry))
                }
            };
            sq.mul_scalar(R::from_f64(-1.0 / (2.0 * sigma_sq))).exp()
        }
    }
}

/// Unbiased MMD² on plain feature batches.
pub fn mmd2_unbiased<R: Real>(
    fx: &Tensor<R>,
    fy: &Tensor<R>,
    kernel: &KernelSpec,
    include_constant: bool,
) -> Result<MMDEstimate> {
    let graph = Graph::new();
    let node = graph.constant(fx.clone());
    let (_, estimate) = mmd2_node(&graph, &node, fy, kernel, include_constant)?;
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_closed_forms() {
        // cubic at the origin: (0 + 1)^3 = 1
        let k: f64 = kernel_eval(&KernelSpec::Cubic, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(k, 1.0);
        // cubic, d=2, u=v=(1,1): ((1/2)*2 + 1)^3 = 8
        let k: f64 = kernel_eval(&KernelSpec::Cubic, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((k - 8.0).abs() < 1e-12);
        // rbf, sigma=1, squared distance 2: exp(-1)
        let k = kernel_eval(
            &KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(1.0) },
            &[1.0, 0.0],
            &[0.0, 1.0],
        )
        .unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        // linear
        let k = kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(k, 11.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-5.0f64..5.0, 3)
        }

        proptest! {
            // Exact symmetry: same floating-point result both ways.
            #[test]
            fn kernels_are_exactly_symmetric(u in vec3(), v in vec3(), sigma in 0.1f64..3.0) {
                let specs = [
                    KernelSpec::Linear,
                    KernelSpec::Cubic,
                    KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(sigma) },
                ];
                for spec in &specs {
                    let a: f64 = kernel_eval(spec, &u, &v).unwrap();
                    let b: f64 = kernel_eval(spec, &v, &u).unwrap();
                    prop_assert_eq!(a, b);
                }
            }

            // RBF values live in (0, 1], up to exp underflow at extreme
            // distance/bandwidth ratios; the cubic kernel on the diagonal
            // is ((||u||^2 / d) + 1)^3 >= 1.
            #[test]
            fn kernel_ranges(u in vec3(), v in vec3(), sigma in 0.1f64..3.0) {
                let spec = KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(sigma) };
                let k: f64 = kernel_eval(&spec, &u, &v).unwrap();
                prop_assert!((0.0..=1.0).contains(&k));
                let exponent: f64 = u
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (2.0 * sigma * sigma);
                if exponent < 700.0 {
                    prop_assert!(k > 0.0);
                }
                let kc: f64 = kernel_eval(&KernelSpec::Cubic, &u, &u).unwrap();
                prop_assert!(kc >= 1.0);
            }
        }
    }

    #[test]
    fn kernel_eval_rejects_median_bandwidth_and_dim_mismatch() {
        let spec = KernelSpec::Rbf { bandwidth: RbfBandwidth::Median };
        assert!(kernel_eval(&spec, &[1.0], &[2.0]).is_err());
        assert!(kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mmd2_linear_hand_instance() {
        // Oracle: explicit double sums in f64.
        let fx = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let fy = Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let n = 2.0;

        let k = |u: &[f64], v: &[f64]| u[0] * v[0] + u[1] * v[1];
        let mut term_xx = 0.0;
        let mut term_xy = 0.0;
        let mut term_yy = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                if i != j {
                    term_xx += k(fx.row(i), fx.row(j));
                    term_yy += k(fy.row(i), fy.row(j));
                }
                term_xy += k(fx.row(i), fy.row(j));
            }
        }
        let want = term_xx / (n * (n - 1.0)) - 2.0 / (n * n) * term_xy + term_yy / (n * (n - 1.0));

        let est = mmd2_unbiased(&fx, &fy, &KernelSpec::Linear, true).unwrap();
        assert!((est.value - want).abs() < 1e-12, "got {}, want {want}", est.value);
        assert!(est.includes_constant);

        // Optimizer form drops exactly the y-y term.
        let est_opt = mmd2_unbiased(&fx, &fy, &KernelSpec::Linear, false).unwrap();
        let want_opt = want - term_yy / (n * (n - 1.0));
        assert!((est_opt.value - want_opt).abs() < 1e-12);
    }

    #[test]
    fn mmd2_matches_double_sum_oracle_for_all_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let fx = Tensor::<f64>::randn(vec![6, 3], &mut rng);
        let fy = Tensor::<f64>::randn(vec![6, 3], &mut rng);
        let n = 6.0;
        let specs = [
            KernelSpec::Linear,
            KernelSpec::Cubic,
            KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(0.9) },
        ];
        for spec in &specs {
            let oracle = {
                let k = |u: &[f64], v: &[f64]| -> f64 {
                    match spec {
                        KernelSpec::Linear => u.iter().zip(v).map(|(a, b)| a * b).sum(),
                        KernelSpec::Cubic => {
                            let dp: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                            (dp / 3.0 + 1.0).powi(3)
                        }
                        KernelSpec::Rbf { .. } => {
                            let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                            (-sq / (2.0 * 0.81)).exp()
                        }
                    }
                };
                let mut xx = 0.0;
                let mut xy = 0.0;
                let mut yy = 0.0;
                for i in 0..6 {
                    for j in 0..6 {
                        if i != j {
                            xx += k(fx.row(i), fx.row(j));
                            yy += k(fy.row(i), fy.row(j));
                        }
                        xy += k(fx.row(i), fy.row(j));
                    }
                }
                xx / (n * (n - 1.0)) - 2.0 / (n * n) * xy + yy / (n * (n - 1.0))
            };
            let est = mmd2_unbiased(&fx, &fy, spec, true).unwrap();
            assert!((est.value - oracle).abs() < 1e-10, "{spec:?}: {} vs {oracle}", est.value);
        }
    }

    #[test]
    fn estimator_requires_two_samples() {
        let fx = Tensor::from_vec(vec![1, 2], vec![0.0f64, 0.0]).unwrap();
        let fy = Tensor::from_vec(vec![1, 2], vec![0.0f64, 0.0]).unwrap();
        assert!(matches!(
            mmd2_unbiased(&fx, &fy, &KernelSpec::Linear, true),
            Err(Error::EstimatorUndefined(1))
        ));
    }

    #[test]
    fn estimator_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let fx = Tensor::<f64>::randn(vec![5, 2], &mut rng);
        let fy = Tensor::<f64>::randn(vec![5, 2], &mut rng);
        let spec = KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(1.0) };
        let base = mmd2_unbiased(&fx, &fy, &spec, true).unwrap().value;

        let perm_x = [4usize, 2, 0, 3, 1];
        let perm_y = [1usize, 3, 4, 0, 2];
        let fx_p =
            Tensor::from_rows(&perm_x.iter().map(|&i| fx.row(i)).collect::<Vec<_>>()).unwrap();
        let fy_p =
            Tensor::from_rows(&perm_y.iter().map(|&i| fy.row(i)).collect::<Vec<_>>()).unwrap();
        let permuted = mmd2_unbiased(&fx_p, &fy_p, &spec, true).unwrap().value;
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn median_heuristic_hand_instance_and_determinism() {
        // Joined batch {0, 1, 3} in 1-D: squared distances 1, 9, 4;
        // median 4, sigma^2 = 2.
        let fx = Tensor::from_vec(vec![2, 1], vec![0.0f64, 1.0]).unwrap();
        let fy = Tensor::from_vec(vec![1, 1], vec![3.0f64]).unwrap();
        let s = median_heuristic_sigma_sq(&fx, &fy).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(s, median_heuristic_sigma_sq(&fx, &fy).unwrap());
    }

    #[test]
    fn featurize_identity_and_randproj() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let batch = Tensor::<f32>::randn(vec![4, 2], &mut rng);
        let id = featurize(&FeatureMap::Identity, &batch).unwrap();
        assert_eq!(id, batch);

        let map_a: FeatureMap<f32> =
            FeatureMap::random_projection(2, 8, &mut ChaCha8Rng::seed_from_u64(51));
        let map_b: FeatureMap<f32> =
            FeatureMap::random_projection(2, 8, &mut ChaCha8Rng::seed_from_u64(51));
        let fa = featurize(&map_a, &batch).unwrap();
        let fb = featurize(&map_b, &batch).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(fa.shape(), &[4, 8]);
        assert_eq!(map_a.checksum(), map_b.checksum());
    }

    #[test]
    fn featurize_rejects_dimension_mismatch() {
        let map: FeatureMap<f32> =
            FeatureMap::random_projection(2, 4, &mut ChaCha8Rng::seed_from_u64(52));
        let batch = Tensor::zeros(vec![3, 5]);
        assert!(matches!(featurize(&map, &batch), Err(Error::Contract(_))));
    }

    #[test]
    fn trained_encoder_reduces_reconstruction_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let data = Tensor::<f32>::randn(vec![256, 2], &mut rng);
        let map = train_encoder(&data, 16, 4, 200, 64, &mut ChaCha8Rng::seed_from_u64(54)).unwrap();
        assert_eq!(map.output_dim(2), 4);
        let feats = featurize(&map, &data).unwrap();
        assert_eq!(feats.shape(), &[256, 4]);
        assert!(feats.is_finite());
    }
}

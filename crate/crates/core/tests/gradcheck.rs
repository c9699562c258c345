//! Gradient correctness against the central-finite-difference oracle, in
//! double precision throughout (single precision cannot resolve 1e-5
//! relative agreement).

mod common;

use std::rc::Rc;

use common::{central_diff, max_rel_err};
use mmdlab::denoiser::{init_denoiser, BoundDenoiser, DenoiserParams, DenoiserSpec};
use mmdlab::diffcore::{Graph, Node, Tensor};
use mmdlab::mmd::{featurize, mmd2_node, train_encoder, FeatureMap, KernelSpec, RbfBandwidth};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Checks autodiff against finite differences for a scalar-valued graph
/// builder over one flat input vector.
fn check_against_fd<F>(build: F, x0: &[f64], shape: &[usize], label: &str)
where
    F: Fn(&Graph<f64>, &Node<f64>) -> Node<f64>,
{
    let eval = |x: &[f64]| -> f64 {
        let g = Graph::new();
        let node = g.leaf(Tensor::from_vec(shape.to_vec(), x.to_vec()).unwrap());
        build(&g, &node).value().item().unwrap()
    };
    let fd = central_diff(eval, x0, FD_STEP);

    let g = Graph::new();
    let node = g.leaf(Tensor::from_vec(shape.to_vec(), x0.to_vec()).unwrap());
    let out = build(&g, &node);
    let grads = g.grad(&out, &[node]).unwrap();
    let err = max_rel_err(grads[0].data(), &fd);
    assert!(err < TOL, "{label}: max relative error {err}");
}

#[test]
fn elementwise_and_reduction_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = Tensor::<f64>::randn(vec![3, 4], &mut rng);
    // Keep sqrt away from zero by squaring first.
    check_against_fd(|_, n| n.mul(n).add_scalar(0.1).sqrt().sum(), x.data(), &[3, 4], "sqrt");
    check_against_fd(|_, n| n.exp().mean(), x.data(), &[3, 4], "exp/mean");
    check_against_fd(|_, n| n.sin().sum(), x.data(), &[3, 4], "sin");
    check_against_fd(|_, n| n.cos().sum(), x.data(), &[3, 4], "cos");
    check_against_fd(|_, n| n.silu().sum(), x.data(), &[3, 4], "silu");
    check_against_fd(|_, n| n.powi(3).sum(), x.data(), &[3, 4], "powi");
    check_against_fd(
        |_, n| n.mul_scalar(2.5).add_scalar(-1.0).sum(),
        x.data(),
        &[3, 4],
        "scalar ops",
    );
    check_against_fd(|_, n| n.add(n).mul(n).sum(), x.data(), &[3, 4], "add/mul");
    check_against_fd(|_, n| n.sub(&n.mul_scalar(0.5)).powi(2).sum(), x.data(), &[3, 4], "sub");
    check_against_fd(|_, n| n.transpose().matmul(n).sum(), x.data(), &[3, 4], "transpose/matmul");
}

#[test]
fn broadcast_and_concat_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = Tensor::<f64>::randn(vec![3, 4], &mut rng);
    let row = Tensor::<f64>::randn(vec![1, 4], &mut rng);
    let col = Tensor::<f64>::randn(vec![3, 1], &mut rng);
    let rc = row.clone();
    check_against_fd(
        move |g, n| n.add_row(&g.constant(rc.clone())).powi(2).sum(),
        x.data(),
        &[3, 4],
        "add_row wrt matrix",
    );
    let xc = x.clone();
    check_against_fd(
        move |g, n| g.constant(xc.clone()).add_row(n).powi(2).sum(),
        row.data(),
        &[1, 4],
        "add_row wrt row",
    );
    let xc = x.clone();
    check_against_fd(
        move |g, n| g.constant(xc.clone()).add_col(n).powi(2).sum(),
        col.data(),
        &[3, 1],
        "add_col wrt col",
    );
    let xc = x.clone();
    check_against_fd(
        move |g, n| n.concat_cols(&g.constant(xc.clone())).powi(2).sum(),
        x.data(),
        &[3, 4],
        "concat",
    );
}

#[test]
fn matmul_both_sides_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let a = Tensor::<f64>::randn(vec![3, 5], &mut rng);
    let b = Tensor::<f64>::randn(vec![5, 2], &mut rng);
    let bc = b.clone();
    check_against_fd(
        move |g, n| n.matmul(&g.constant(bc.clone())).powi(2).sum(),
        a.data(),
        &[3, 5],
        "matmul lhs",
    );
    let ac = a.clone();
    check_against_fd(
        move |g, n| g.constant(ac.clone()).matmul(n).powi(2).sum(),
        b.data(),
        &[5, 2],
        "matmul rhs",
    );
}

#[test]
fn checkpointed_segment_chains_match_unsegmented_gradients() {
    // Chains of up to 20 checkpointed segments vs the same ops recorded
    // inline: gradients agree within relative 1e-10.
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for chain_len in [1usize, 5, 20] {
        let x0 = Tensor::<f64>::randn(vec![2, 3], &mut rng);
        let step = |_g: &Graph<f64>, n: &Node<f64>| n.silu().mul_scalar(1.1).add_scalar(0.05).sin();

        // Inline.
        let g1 = Graph::new();
        let leaf1 = g1.leaf(x0.clone());
        let mut cur = leaf1.clone();
        for _ in 0..chain_len {
            cur = step(&g1, &cur);
        }
        let loss1 = cur.sum();
        let grads1 = g1.grad(&loss1, &[leaf1]).unwrap();

        // Checkpointed, one segment per step.
        let g2 = Graph::new();
        let leaf2 = g2.leaf(x0.clone());
        let mut cur = leaf2.clone();
        for _ in 0..chain_len {
            cur = g2
                .checkpoint_segment(
                    &[cur.clone()],
                    Rc::new(move |g: &Graph<f64>, ins: &[Node<f64>]| vec![step(g, &ins[0])]),
                )
                .unwrap()
                .remove(0);
        }
        let loss2 = cur.sum();
        assert_eq!(loss1.value(), loss2.value(), "forward values must be identical");
        let grads2 = g2.grad(&loss2, &[leaf2]).unwrap();

        for (a, b) in grads1[0].data().iter().zip(grads2[0].data()) {
            let rel = (a - b).abs() / a.abs().max(1e-300);
            assert!(rel < 1e-10, "chain {chain_len}: {a} vs {b}");
        }
    }
}

#[test]
fn denoiser_output_gradient_matches_finite_differences() {
    // d(mean(eps_hat^2))/d(weights) against the oracle, per tensor.
    let spec = DenoiserSpec { input_dim: 2, hidden_width: 6, depth: 2, time_embed_dim: 4 };
    let params: DenoiserParams<f64> =
        init_denoiser(spec, &mut ChaCha8Rng::seed_from_u64(104)).unwrap();
    let x = Tensor::<f64>::randn(vec![4, 2], &mut ChaCha8Rng::seed_from_u64(105));
    let ts = vec![2usize, 5, 7, 9];

    let loss_at = |tensors: &[Tensor<f64>]| -> f64 {
        let p = DenoiserParams::from_tensors(spec, tensors.to_vec()).unwrap();
        let g = Graph::new();
        let bound = BoundDenoiser::bind(&g, &p, false);
        let out = bound.predict(&g, &g.constant(x.clone()), &ts, 10);
        out.mul(&out).mean().value().item().unwrap()
    };

    let g = Graph::new();
    let bound = BoundDenoiser::bind(&g, &params, true);
    let out = bound.predict(&g, &g.constant(x.clone()), &ts, 10);
    let loss = out.mul(&out).mean();
    let grads = g.grad(&loss, bound.param_nodes()).unwrap();

    for (ti, _) in params.tensors().iter().enumerate() {
        let base = params.tensors().to_vec();
        let flat = base[ti].data().to_vec();
        let fd = central_diff(
            |coords: &[f64]| {
                let mut tensors = base.clone();
                tensors[ti] =
                    Tensor::from_vec(tensors[ti].shape().to_vec(), coords.to_vec()).unwrap();
                loss_at(&tensors)
            },
            &flat,
            FD_STEP,
        );
        let err = max_rel_err(grads[ti].data(), &fd);
        assert!(err < TOL, "tensor {ti}: max relative error {err}");
    }
}

#[test]
fn feature_map_gradients_match_finite_differences() {
    // Gradient of sum(featurize(x)) w.r.t. x for the frozen maps.
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let x = Tensor::<f64>::randn(vec![3, 2], &mut rng);
    let data = Tensor::<f64>::randn(vec![128, 2], &mut rng);
    let maps: Vec<FeatureMap<f64>> = vec![
        FeatureMap::Identity,
        FeatureMap::random_projection(2, 5, &mut ChaCha8Rng::seed_from_u64(107)),
        train_encoder(&data, 8, 3, 100, 32, &mut ChaCha8Rng::seed_from_u64(108)).unwrap(),
    ];
    for map in &maps {
        let eval = |coords: &[f64]| -> f64 {
            let batch = Tensor::from_vec(vec![3, 2], coords.to_vec()).unwrap();
            featurize(map, &batch).unwrap().data().iter().sum()
        };
        let fd = central_diff(eval, x.data(), FD_STEP);

        let g = Graph::new();
        let node = g.leaf(x.clone());
        let out = map.apply_node(&g, &node).sum();
        let grads = g.grad(&out, &[node]).unwrap();
        let err = max_rel_err(grads[0].data(), &fd);
        assert!(err < TOL, "{}: max relative error {err}", map.name());
    }
}

#[test]
fn mmd2_gradient_wrt_generated_features_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let fx = Tensor::<f64>::randn(vec![6, 2], &mut rng);
    let fy = Tensor::<f64>::randn(vec![6, 2], &mut rng);
    let kernels = [
        KernelSpec::Linear,
        KernelSpec::Cubic,
        KernelSpec::Rbf { bandwidth: RbfBandwidth::Sigma(0.8) },
    ];
    for kernel in &kernels {
        let eval = |coords: &[f64]| -> f64 {
            let g = Graph::new();
            let node = g.constant(Tensor::from_vec(vec![6, 2], coords.to_vec()).unwrap());
            mmd2_node(&g, &node, &fy, kernel, false).unwrap().1.value
        };
        let fd = central_diff(eval, fx.data(), FD_STEP);

        let g = Graph::new();
        let node = g.leaf(fx.clone());
        let (loss, _) = mmd2_node(&g, &node, &fy, kernel, false).unwrap();
        let grads = g.grad(&loss, &[node]).unwrap();
        let err = max_rel_err(grads[0].data(), &fd);
        assert!(err < TOL, "{}: max relative error {err}", kernel.name());

        // The constant term must not change gradients.
        let g2 = Graph::new();
        let node2 = g2.leaf(fx.clone());
        let (loss2, _) = mmd2_node(&g2, &node2, &fy, kernel, true).unwrap();
        let grads2 = g2.grad(&loss2, &[node2]).unwrap();
        assert_eq!(grads[0].data(), grads2[0].data(), "{}", kernel.name());
    }
}

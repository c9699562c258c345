//! Quality metrics and analyses: held-out MMD², Fréchet feature distance,
//! k-NN precision/recall, nearest-neighbor audits, slerp interpolation.
//!
//! Everything here is pure given its inputs; metric arithmetic runs in
//! `f64` regardless of the model precision.

#![allow(clippy::needless_range_loop)] // index loops mirror the math

use rand::Rng;

use crate::denoiser::DenoiserParams;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::finetune::MMDConfig;
use crate::mmd::{featurize, mmd2_unbiased};
use crate::real::Real;
use crate::sampler::{sample_chain, SamplerKind, TimestepSubset};
use crate::schedule::NoiseSchedule;

/// One reported metric with its dispersion over repetitions.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Standard deviation over repetitions (0 when reps = 1).
    pub std: f64,
    pub reps: usize,
    /// Short description of the configuration that produced the value.
    pub fingerprint: String,
}

impl MetricReport {
    fn from_values(metric: &str, values: &[f64], fingerprint: String) -> Self {
        let reps = values.len();
        let mean = values.iter().sum::<f64>() / reps as f64;
        let std = if reps > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64).sqrt()
        } else {
            0.0
        };
        MetricReport { metric: metric.into(), value: mean, std, reps, fingerprint }
    }
}

/// Held-out MMD² with a custom sample source; the public entry point plugs
/// in the sampling chain, tests can plug in other generators.
pub fn heldout_mmd2_with<R: Real, G, F>(
    mut generate: F,
    heldout: &Tensor<R>,
    mmdcfg: &MMDConfig<R>,
    reps: usize,
    rng: &mut G,
) -> Result<MetricReport>
where
    G: Rng + ?Sized,
    F: FnMut(usize, &mut G) -> Result<Tensor<R>>,
{
    if reps == 0 {
        return Err(Error::contract("heldout_mmd2 needs reps >= 1"));
    }
    let n = mmdcfg.batch_size;
    let (pool, _) = heldout.rows_cols()?;
    if pool < n {
        return Err(Error::config(format!(
            "held-out pool of {pool} rows cannot supply batches of {n}"
        )));
    }
    let mut values = Vec::with_capacity(reps);
    for _ in 0..reps {
        let generated = generate(n, rng)?;
        let idx = rand::seq::index::sample(rng, pool, n);
        let real = Tensor::from_rows(&idx.iter().map(|i| heldout.row(i)).collect::<Vec<_>>())?;
        let fx = featurize(&mmdcfg.feature_map, &generated)?.to_f64();
        let fy = featurize(&mmdcfg.feature_map, &real)?.to_f64();
        values.push(mmd2_unbiased(&fx, &fy, &mmdcfg.kernel, true)?.value);
    }
    Ok(MetricReport::from_values(
        "heldout_mmd2",
        &values,
        format!("kernel={} features={} n={n}", mmdcfg.kernel.name(), mmdcfg.feature_map.name()),
    ))
}

/// Mean and std over `reps` repetitions of the full-constant unbiased MMD²
/// between freshly generated samples and held-out real batches.
#[allow(clippy::too_many_arguments)]
pub fn heldout_mmd2<R: Real, G: Rng + ?Sized>(
    params: &DenoiserParams<R>,
    sched: &NoiseSchedule,
    subset: &TimestepSubset,
    kind: SamplerKind,
    heldout: &Tensor<R>,
    mmdcfg: &MMDConfig<R>,
    reps: usize,
    rng: &mut G,
) -> Result<MetricReport> {
    let mut report = heldout_mmd2_with(
        |n, rng| Ok(sample_chain(params, sched, subset, kind, n, rng)?.samples),
        heldout,
        mmdcfg,
        reps,
        rng,
    )?;
    report.fingerprint =
        format!("{} budget={} sampler={kind:?}", report.fingerprint, subset.budget());
    Ok(report)
}

/// Fréchet distance between Gaussian fits of two feature batches.
#[derive(Debug, Clone, Copy)]
pub struct FfdResult {
    pub value: f64,
    /// True when a degenerate covariance needed 1e-10 added to its diagonal.
    pub regularized: bool,
}

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the matrix square
/// root evaluated through symmetric eigendecompositions, valid at the lab's
/// small feature dimensions. Covariances use the n-1 normalization.
pub fn frechet_feature_distance<R: Real>(fx: &Tensor<R>, fy: &Tensor<R>) -> Result<FfdResult> {
    let (nx, d) = fx.rows_cols()?;
    let (ny, dy) = fy.rows_cols()?;
    if d != dy {
        return Err(Error::contract("feature dimensions differ"));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::contract("frechet distance needs at least two rows per batch"));
    }
    let fx = fx.to_f64();
    let fy = fy.to_f64();
    let (mu1, mut s1) = gaussian_fit(&fx);
    let (mu2, mut s2) = gaussian_fit(&fy);

    let mut regularized = false;
    for s in [&mut s1, &mut s2] {
        if is_degenerate(s, d) {
            for i in 0..d {
                s[i * d + i] += 1e-10;
            }
            regularized = true;
        }
    }

    let mean_term: f64 = mu1.iter().zip(&mu2).map(|(a, b)| (a - b) * (a - b)).sum();

    // tr((S1 S2)^(1/2)) = tr((S1^(1/2) S2 S1^(1/2))^(1/2)), the inner matrix
    // being symmetric PSD.
    let s1_sqrt = sqrt_psd(&s1, d);
    let inner = matmul3(&s1_sqrt, &s2, &s1_sqrt, d);
    let (inner_eigs, _) = jacobi_eigh(&inner, d);
    let tr_sqrt: f64 = inner_eigs.iter().map(|l| l.max(0.0).sqrt()).sum();

    let tr1: f64 = (0..d).map(|i| s1[i * d + i]).sum();
    let tr2: f64 = (0..d).map(|i| s2[i * d + i]).sum();
    Ok(FfdResult { value: mean_term + tr1 + tr2 - 2.0 * tr_sqrt, regularized })
}

fn gaussian_fit(batch: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = batch.rows_cols().unwrap();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += batch.data()[i * d + j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            let da = batch.data()[i * d + a] - mean[a];
            for b in 0..d {
                let db = batch.data()[i * d + b] - mean[b];
                cov[a * d + b] += da * db;
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    (mean, cov)
}

fn is_degenerate(cov: &[f64], d: usize) -> bool {
    let (eigs, _) = jacobi_eigh(cov, d);
    eigs.iter().any(|&l| l < 1e-12)
}

fn matmul3(a: &[f64], b: &[f64], c: &[f64], d: usize) -> Vec<f64> {
    let ab = matmul_sq(a, b, d);
    matmul_sq(&ab, c, d)
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let av = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += av * b[k * d + j];
            }
        }
    }
    out
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues to zero.
fn sqrt_psd(mat: &[f64], d: usize) -> Vec<f64> {
    let (eigs, vecs) = jacobi_eigh(mat, d);
    // V diag(sqrt(l)) V^T with columns of V the eigenvectors.
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        let s = eigs[k].max(0.0).sqrt();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += s * vecs[i * d + k] * vecs[j * d + k];
            }
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and the orthogonal matrix whose column k is the k-th
/// eigenvector (A = V diag(l) V^T).
fn jacobi_eigh(mat: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(mat.len(), d * d);
    let mut a = mat.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return (vec![a[0]], v);
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= tol / (d as f64) {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigs = (0..d).map(|i| a[i * d + i]).collect();
    (eigs, v)
}

/// Manifold-overlap precision/recall: each set spans the union of balls
/// centered at its points with per-point radius equal to the k-th nearest
/// neighbor distance inside the same set. Precision is the fraction of
/// generated points inside the real manifold, recall the fraction of real
/// points inside the generated manifold.
pub fn knn_precision_recall<R: Real>(
    real_feats: &Tensor<R>,
    gen_feats: &Tensor<R>,
    k: usize,
) -> Result<(f64, f64)> {
    let (nr, d) = real_feats.rows_cols()?;
    let (ng, dg) = gen_feats.rows_cols()?;
    if d != dg {
        return Err(Error::contract("feature dimensions differ"));
    }
    if k == 0 || k >= nr || k >= ng {
        return Err(Error::config(format!(
            "k = {k} needs both sets larger than k (sizes {nr}, {ng})"
        )));
    }
    let real = real_feats.to_f64();
    let gen = gen_feats.to_f64();
    let r_real = knn_radii(&real, k);
    let r_gen = knn_radii(&gen, k);
    let precision = coverage_fraction(&gen, &real, &r_real);
    let recall = coverage_fraction(&real, &gen, &r_gen);
    Ok((precision, recall))
}

/// Per-point distance to the k-th nearest neighbor within the same set.
fn knn_radii(set: &Tensor<f64>, k: usize) -> Vec<f64> {
    let (n, _) = set.rows_cols().unwrap();
    (0..n)
        .map(|i| {
            let mut dists: Vec<f64> =
                (0..n).filter(|&j| j != i).map(|j| sq_dist(set.row(i), set.row(j))).collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[k - 1].sqrt()
        })
        .collect()
}

fn coverage_fraction(queries: &Tensor<f64>, anchors: &Tensor<f64>, radii: &[f64]) -> f64 {
    let (nq, _) = queries.rows_cols().unwrap();
    let (na, _) = anchors.rows_cols().unwrap();
    let mut hit = 0usize;
    for i in 0..nq {
        let inside = (0..na).any(|j| sq_dist(queries.row(i), anchors.row(j)).sqrt() <= radii[j]);
        if inside {
            hit += 1;
        }
    }
    hit as f64 / nq as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-query top-K training neighbors, distances ascending.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    /// `rows[i]` lists (training index, distance) for generated sample i.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub k: usize,
}

/// Exact top-K nearest training neighbors of each generated sample, by
/// Euclidean distance in the given feature space. No approximate index.
pub fn nn_audit<R: Real>(
    gen_batch: &Tensor<R>,
    train_set: &Tensor<R>,
    k: usize,
    map: &crate::mmd::FeatureMap<R>,
) -> Result<NeighborTable> {
    let (nt, _) = train_set.rows_cols()?;
    if k == 0 || k > nt {
        return Err(Error::contract(format!("K = {k} outside 1..={nt}")));
    }
    let gf = featurize(map, gen_batch)?.to_f64();
    let tf = featurize(map, train_set)?.to_f64();
    let (ng, _) = gf.rows_cols()?;
    let mut rows = Vec::with_capacity(ng);
    for i in 0..ng {
        let mut dists: Vec<(usize, f64)> =
            (0..nt).map(|j| (j, sq_dist(gf.row(i), tf.row(j)).sqrt())).collect();
        dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        dists.truncate(k);
        rows.push(dists);
    }
    Ok(NeighborTable { rows, k })
}

/// Spherical linear interpolation between two latent vectors, with a linear
/// fallback when the angle between them is below 1e-6.
pub fn slerp<R: Real>(x0: &Tensor<R>, x1: &Tensor<R>, alpha: f64) -> Result<Tensor<R>> {
    if x0.shape() != x1.shape() {
        return Err(Error::contract("slerp endpoints must share a shape"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let a = x0.to_f64();
    let b = x1.to_f64();
    let norm_a = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b = b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::contract("slerp endpoints must be nonzero"));
    }
    let cos = (a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>() / (norm_a * norm_b))
        .clamp(-1.0, 1.0);
    let theta = cos.acos();
    let (w0, w1) = if theta < 1e-6 {
        (1.0 - alpha, alpha)
    } else {
        let sin = theta.sin();
        (((1.0 - alpha) * theta).sin() / sin, (alpha * theta).sin() / sin)
    };
    let data = a.data().iter().zip(b.data()).map(|(x, y)| R::from_f64(w0 * x + w1 * y)).collect();
    Tensor::from_vec(x0.shape().to_vec(), data)
}

//! Synthetic 2-D datasets and model persistence.
//!
//! Every distribution is standardized to zero mean / unit variance per
//! coordinate using analytic constants (not per-batch statistics), so the
//! standardization is part of the distribution definition and identical
//! across runs and sample sizes.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserParams, DenoiserSpec};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Ring8 mixture: 8 Gaussians, radius 2, per-component std.
const RING8_STD: f64 = 0.05;
/// Swiss roll parameter range [1.5 pi, 4.5 pi] and additive noise std.
const SWISSROLL_NOISE: f64 = 0.1;
/// Checkerboard: 4x4 unit cells spanning [-2, 2]^2, alternate cells active.
const CHECKER_HALF_EXTENT: f64 = 2.0;

/// The lab's stand-ins for image datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyDistribution {
    Ring8,
    SwissRoll,
    Checkerboard,
}

impl ToyDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            ToyDistribution::Ring8 => "ring8",
            ToyDistribution::SwissRoll => "swissroll",
            ToyDistribution::Checkerboard => "checkerboard",
        }
    }

    pub fn dim(&self) -> usize {
        2
    }

    /// Per-coordinate (mean, std) of the raw distribution, in closed form.
    ///
    /// ring8: mean 0; E\[cos^2\] over the 8 equispaced angles is 1/2, so each
    /// coordinate has variance 2^2 * 1/2 + std^2.
    ///
    /// swissroll: with t ~ U[1.5pi, 4.5pi], x = t cos t, y = t sin t, the
    /// moment integrals have closed forms: E\[x\] = 2, E\[y\] = 2/(3pi),
    /// E\[t^2\] = 9.75 pi^2, E\[t^2 cos 2t\] = -1/2, giving
    /// E\[x^2\] = 4.875 pi^2 - 1/4 and E\[y^2\] = 4.875 pi^2 + 1/4; additive
    /// noise contributes its variance to each coordinate.
    ///
    /// checkerboard: both marginals uniform on [-2, 2], variance 4/3.
    pub fn standardization(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            ToyDistribution::Ring8 => {
                let var = 2.0 + RING8_STD * RING8_STD;
                ([0.0, 0.0], [var.sqrt(), var.sqrt()])
            }
            ToyDistribution::SwissRoll => {
                let mean_x = 2.0;
                let mean_y = 2.0 / (3.0 * PI);
                let ex2 = 4.875 * PI * PI - 0.25;
                let ey2 = 4.875 * PI * PI + 0.25;
                let noise_var = SWISSROLL_NOISE * SWISSROLL_NOISE;
                let var_x = ex2 - mean_x * mean_x + noise_var;
                let var_y = ey2 - mean_y * mean_y + noise_var;
                ([mean_x, mean_y], [var_x.sqrt(), var_y.sqrt()])
            }
            ToyDistribution::Checkerboard => {
                let var = (2.0 * CHECKER_HALF_EXTENT) * (2.0 * CHECKER_HALF_EXTENT) / 12.0;
                ([0.0, 0.0], [var.sqrt(), var.sqrt()])
            }
        }
    }

    fn raw_sample<G: Rng + ?Sized>(&self, rng: &mut G) -> [f64; 2] {
        match self {
            ToyDistribution::Ring8 => {
                let k = rng.gen_range(0..8usize);
                let angle = 2.0 * PI * k as f64 / 8.0;
                let (cx, cy) = (2.0 * angle.cos(), 2.0 * angle.sin());
                [
                    cx + RING8_STD * f64::standard_normal(rng),
                    cy + RING8_STD * f64::standard_normal(rng),
                ]
            }
            ToyDistribution::SwissRoll => {
                let t = 1.5 * PI + 3.0 * PI * rng.gen::<f64>();
                [
                    t * t.cos() + SWISSROLL_NOISE * f64::standard_normal(rng),
                    t * t.sin() + SWISSROLL_NOISE * f64::standard_normal(rng),
                ]
            }
            ToyDistribution::Checkerboard => {
                // Active cells of the 4x4 grid are those with even i+j.
                let cell = rng.gen_range(0..8usize);
                let (i, j) = CHECKER_ACTIVE_CELLS[cell];
                let x = -CHECKER_HALF_EXTENT + i as f64 + rng.gen::<f64>();
                let y = -CHECKER_HALF_EXTENT + j as f64 + rng.gen::<f64>();
                [x, y]
            }
        }
    }
}

const CHECKER_ACTIVE_CELLS: [(usize, usize); 8] =
    [(0, 0), (0, 2), (1, 1), (1, 3), (2, 0), (2, 2), (3, 1), (3, 3)];

/// Draws `n` standardized rows. Deterministic per rng state.
pub fn sample_toy<R: Real, G: Rng + ?Sized>(
    dist: ToyDistribution,
    n: usize,
    rng: &mut G,
) -> Result<Tensor<R>> {
    if n == 0 {
        return Err(Error::contract("sample_toy needs n >= 1"));
    }
    let (mean, std) = dist.standardization();
    let mut data = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let raw = dist.raw_sample(rng);
        data.push(R::from_f64((raw[0] - mean[0]) / std[0]));
        data.push(R::from_f64((raw[1] - mean[1]) / std[1]));
    }
    Tensor::from_vec(vec![n, 2], data)
}

/// Deterministic train/held-out split: shuffles row indices with a
/// dedicated rng seeded only by `seed`, then cuts off the held-out tail.
/// A pure function of (seed, row count, ratio).
pub fn split_dataset<R: Real>(
    data: &Tensor<R>,
    heldout_fraction: f64,
    seed: u64,
) -> Result<(Tensor<R>, Tensor<R>)> {
    let (n, _) = data.rows_cols()?;
    if !(0.0..1.0).contains(&heldout_fraction) {
        return Err(Error::config(format!(
            "heldout fraction must be in [0, 1), got {heldout_fraction}"
        )));
    }
    let heldout_n = (n as f64 * heldout_fraction).floor() as usize;
    if heldout_n >= n {
        return Err(Error::config("held-out split leaves no training data"));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    use rand::SeedableRng;
    indices.shuffle(&mut rng);
    let (heldout_idx, train_idx) = indices.split_at(heldout_n);
    let train = Tensor::from_rows(&train_idx.iter().map(|&i| data.row(i)).collect::<Vec<_>>())?;
    let heldout = Tensor::from_rows(&heldout_idx.iter().map(|&i| data.row(i)).collect::<Vec<_>>())?;
    Ok((train, heldout))
}

const CKPT_MAGIC: &str = "MMDLAB-CKPT";
const CKPT_VERSION: u32 = 1;

/// Writes a checkpoint: human-readable header (format name, version, spec,
/// tensor manifest with names/shapes/offsets in floats), then the raw
/// little-endian f32 payload. Round-trips are bit-exact.
pub fn serialize_model(params: &DenoiserParams<f32>, path: &Path) -> Result<()> {
    let spec = params.spec();
    let mut header = String::new();
    header.push_str(&format!("{CKPT_MAGIC} {CKPT_VERSION}\n"));
    header.push_str(&format!("input_dim = {}\n", spec.input_dim));
    header.push_str(&format!("hidden_width = {}\n", spec.hidden_width));
    header.push_str(&format!("depth = {}\n", spec.depth));
    header.push_str(&format!("time_embed_dim = {}\n", spec.time_embed_dim));
    let names = params.tensor_names();
    let mut offset = 0usize;
    for (t, name) in params.tensors().iter().zip(&names) {
        let (r, c) = t.rows_cols()?;
        header.push_str(&format!("tensor {name} {r}x{c} @ {offset}\n"));
        offset += t.numel();
    }
    header.push_str(&format!("payload = {offset}\n"));
    header.push_str("END-HEADER\n");

    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    for t in params.tensors() {
        for v in t.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`serialize_model`]. Bad magic, version
/// mismatches and manifest/payload disagreements are distinct errors and
/// never yield a partial model.
pub fn deserialize_model(path: &Path) -> Result<DenoiserParams<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;

    let terminator = b"END-HEADER\n";
    let header_end = find_subslice(&bytes, terminator)
        .ok_or_else(|| Error::MalformedHeader("missing END-HEADER".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let payload = &bytes[header_end + terminator.len()..];

    let mut lines = header.lines();
    let magic_line = lines.next().unwrap_or_default();
    let mut magic_parts = magic_line.split_whitespace();
    let magic = magic_parts.next().unwrap_or_default();
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic { expected: CKPT_MAGIC.into(), found: magic.into() });
    }
    let version: u32 = magic_parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::MalformedHeader("missing version".into()))?;
    if version != CKPT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: CKPT_VERSION });
    }

    let mut fields = std::collections::BTreeMap::new();
    let mut manifest: Vec<(String, usize, usize, usize)> = Vec::new();
    let mut payload_floats: Option<usize> = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 4 || parts[2] != "@" {
                return Err(Error::MalformedHeader(format!("bad tensor line: {line}")));
            }
            let (rows, cols) = parts[1]
                .split_once('x')
                .ok_or_else(|| Error::MalformedHeader(format!("bad shape: {}", parts[1])))?;
            manifest.push((
                parts[0].to_string(),
                parse_usize(rows, line)?,
                parse_usize(cols, line)?,
                parse_usize(parts[3], line)?,
            ));
        } else if let Some((key, value)) = line.split_once(" = ") {
            if key == "payload" {
                payload_floats = Some(parse_usize(value, line)?);
            } else {
                fields.insert(key.to_string(), parse_usize(value, line)?);
            }
        } else if !line.trim().is_empty() {
            return Err(Error::MalformedHeader(format!("unrecognized line: {line}")));
        }
    }

    let get = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::MalformedHeader(format!("missing field {key}")))
    };
    let spec = DenoiserSpec {
        input_dim: get("input_dim")?,
        hidden_width: get("hidden_width")?,
        depth: get("depth")?,
        time_embed_dim: get("time_embed_dim")?,
    };

    let expected_floats =
        payload_floats.ok_or_else(|| Error::MalformedHeader("missing payload length".into()))?;
    let manifest_floats: usize = manifest.iter().map(|(_, r, c, _)| r * c).sum();
    if manifest_floats != expected_floats || payload.len() != expected_floats * 4 {
        return Err(Error::PayloadLength { expected: expected_floats, actual: payload.len() / 4 });
    }

    let mut tensors = Vec::with_capacity(manifest.len());
    let mut running = 0usize;
    for (name, rows, cols, offset) in &manifest {
        if *offset != running {
            return Err(Error::MalformedHeader(format!(
                "tensor {name} offset {offset} does not match running total {running}"
            )));
        }
        let count = rows * cols;
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let at = (running + i) * 4;
            data.push(f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()));
        }
        tensors.push(Tensor::from_vec(vec![*rows, *cols], data)?);
        running += count;
    }
    DenoiserParams::from_tensors(spec, tensors)
}

fn parse_usize(s: &str, line: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::MalformedHeader(format!("bad integer in: {line}")))
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_denoiser;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampling_is_seed_deterministic() {
        for dist in
            [ToyDistribution::Ring8, ToyDistribution::SwissRoll, ToyDistribution::Checkerboard]
        {
            let a: Tensor<f32> = sample_toy(dist, 64, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
            let b: Tensor<f32> = sample_toy(dist, 64, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
            assert_eq!(a, b, "{dist:?}");
        }
    }

    #[test]
    fn single_row_sample() {
        let x: Tensor<f64> =
            sample_toy(ToyDistribution::Ring8, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(x.shape(), &[1, 2]);
        assert!(sample_toy::<f64, _>(ToyDistribution::Ring8, 0, &mut ChaCha8Rng::seed_from_u64(1))
            .is_err());
    }

    #[test]
    fn standardized_moments_are_near_zero_one() {
        // Large-sample check of the analytic constants for all three kinds.
        for dist in
            [ToyDistribution::Ring8, ToyDistribution::SwissRoll, ToyDistribution::Checkerboard]
        {
            let n = 400_000;
            let x: Tensor<f64> = sample_toy(dist, n, &mut ChaCha8Rng::seed_from_u64(123)).unwrap();
            for j in 0..2 {
                let mean: f64 = (0..n).map(|i| x.data()[i * 2 + j]).sum::<f64>() / n as f64;
                let var: f64 =
                    (0..n).map(|i| (x.data()[i * 2 + j] - mean).powi(2)).sum::<f64>() / n as f64;
                assert!(mean.abs() < 0.01, "{dist:?} coord {j} mean {mean}");
                assert!((var - 1.0).abs() < 0.02, "{dist:?} coord {j} var {var}");
            }
        }
    }

    #[test]
    fn ring8_mode_centers_recovered() {
        // Oracle: cluster means of de-standardized draws, assigned to the
        // nearest analytic center; must land within 0.01 of each center.
        let n = 1_000_000;
        let x: Tensor<f64> =
            sample_toy(ToyDistribution::Ring8, n, &mut ChaCha8Rng::seed_from_u64(55)).unwrap();
        let (mean, std) = ToyDistribution::Ring8.standardization();
        let centers: Vec<[f64; 2]> = (0..8)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 8.0;
                [2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let mut sums = vec![[0.0f64; 2]; 8];
        let mut counts = vec![0usize; 8];
        for i in 0..n {
            let px = x.data()[i * 2] * std[0] + mean[0];
            let py = x.data()[i * 2 + 1] * std[1] + mean[1];
            let nearest = (0..8)
                .min_by(|&a, &b| {
                    let da = (px - centers[a][0]).powi(2) + (py - centers[a][1]).powi(2);
                    let db = (px - centers[b][0]).powi(2) + (py - centers[b][1]).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            sums[nearest][0] += px;
            sums[nearest][1] += py;
            counts[nearest] += 1;
        }
        for k in 0..8 {
            assert!(counts[k] > 0);
            let cx = sums[k][0] / counts[k] as f64;
            let cy = sums[k][1] / counts[k] as f64;
            assert!(
                (cx - centers[k][0]).abs() < 0.01 && (cy - centers[k][1]).abs() < 0.01,
                "mode {k}: ({cx}, {cy}) vs {:?}",
                centers[k]
            );
        }
    }

    #[test]
    fn split_is_pure_in_seed_and_disjoint() {
        let data: Tensor<f32> =
            sample_toy(ToyDistribution::Ring8, 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (tr1, ho1) = split_dataset(&data, 0.2, 42).unwrap();
        let (tr2, ho2) = split_dataset(&data, 0.2, 42).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(ho1, ho2);
        assert_eq!(tr1.shape(), &[80, 2]);
        assert_eq!(ho1.shape(), &[20, 2]);
        let (tr3, _) = split_dataset(&data, 0.2, 43).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let spec = DenoiserSpec { input_dim: 2, hidden_width: 8, depth: 2, time_embed_dim: 4 };
        let params: DenoiserParams<f32> =
            init_denoiser(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        serialize_model(&params, &path).unwrap();
        let loaded = deserialize_model(&path).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let spec = DenoiserSpec { input_dim: 2, hidden_width: 8, depth: 2, time_embed_dim: 4 };
        let params: DenoiserParams<f32> =
            init_denoiser(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        serialize_model(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(deserialize_model(&path), Err(Error::PayloadLength { .. })));
    }

    #[test]
    fn bad_magic_and_version_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOT-A-CKPT 1\nEND-HEADER\n").unwrap();
        assert!(matches!(deserialize_model(&path), Err(Error::BadMagic { .. })));

        std::fs::write(&path, b"MMDLAB-CKPT 9\nEND-HEADER\n").unwrap();
        match deserialize_model(&path) {
            Err(Error::UnsupportedVersion { found, supported }) => {
                assert_eq!((found, supported), (9, 1));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }
}

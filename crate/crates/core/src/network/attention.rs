//! Single-head global self-attention over pixels (spatial) or over channels (spectral).
//!
//! Both variants take a `C × N` feature matrix (N = H·W pixel tokens) and
//! use bias-free linear projections `Q = Wq X`, `K = Wk X`, `V = Wv X`.
//!
//! * Spatial: scores `softmax(Qᵀ K / sqrt(C))` are `N × N`, each row sums to 1,
//!   and token i of the output is `Σ_j P_ij V[:, j]`.
//! * Spectral: scores `softmax(K Qᵀ / sqrt(N))` are `C × C`, normalized down
//!   each column, and output channel j is `Σ_i G_ij V[i, :]`, a convex mix
//!   of value channels.
//!
//! The result goes through the output projection `Wo`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, mat, FeatureMap, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Spectral,
    Spatial,
}

impl AttentionKind {
    pub fn tag(self) -> &'static str {
        match self {
            AttentionKind::Spectral => "spe",
            AttentionKind::Spatial => "spa",
        }
    }
}

/// Query/key/value/output projection matrices, each `C × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProj {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Tensor,
}

impl AttentionProj {
    pub fn zeros(channels: usize) -> Self {
        let z = || Tensor::zeros(vec![channels, channels]);
        Self {
            query: z(),
            key: z(),
            value: z(),
            output: z(),
        }
    }

    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut p = Self::zeros(channels);
        for t in [&mut p.query, &mut p.key, &mut p.value, &mut p.output] {
            t.data_mut()
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-bound..bound));
        }
        p
    }

    pub fn channels(&self) -> usize {
        self.query.shape()[0]
    }
}

/// Softmax-normalized score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub kind: AttentionKind,
    /// Side length: pixel count for spatial scores, channel count for spectral.
    pub size: usize,
    /// Row-major `size × size`.
    pub values: Vec<f64>,
}

impl AttentionScores {
    /// Sums along the normalization axis: rows for spatial, columns for spectral.
    pub fn normalization_sums(&self) -> Vec<f64> {
        let n = self.size;
        match self.kind {
            AttentionKind::Spatial => (0..n)
                .map(|i| self.values[i * n..(i + 1) * n].iter().sum())
                .collect(),
            AttentionKind::Spectral => (0..n)
                .map(|j| (0..n).map(|i| self.values[i * n + j]).sum())
                .collect(),
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    scores: Vec<f64>,
    mixed: Vec<f64>,
}

impl AttentionCache {
    pub fn scores(&self, kind: AttentionKind, size: usize) -> AttentionScores {
        AttentionScores {
            kind,
            size,
            values: self.scores.clone(),
        }
    }
}

fn project(w: &Tensor, x: &FeatureMap) -> Vec<f64> {
    let c = x.channels;
    let mut out = vec![0.0; c * x.pixels()];
    gemm(1.0, mat(w.data(), c, c), x.view(), 0.0, &mut out);
    out
}

fn softmax_rows(s: &mut [f64], n: usize) {
    for row in s.chunks_mut(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
}

fn softmax_cols(s: &mut [f64], n: usize) {
    for j in 0..n {
        let m = (0..n).map(|i| s[i * n + j]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..n {
            let e = (s[i * n + j] - m).exp();
            s[i * n + j] = e;
            z += e;
        }
        for i in 0..n {
            s[i * n + j] /= z;
        }
    }
}

pub fn check_token_cap(x: &FeatureMap, cap: usize) -> Result<()> {
    if x.pixels() > cap {
        return Err(Error::Resource(format!(
            "spatial attention over {}x{} = {} tokens exceeds the cap of {cap}; \
             tile the image into patches of at most {cap} pixels",
            x.height,
            x.width,
            x.pixels()
        )));
    }
    Ok(())
}

pub fn attention_forward(
    kind: AttentionKind,
    x: &FeatureMap,
    proj: &AttentionProj,
) -> (FeatureMap, AttentionCache) {
    let c = x.channels;
    let n = x.pixels();
    let q = project(&proj.query, x);
    let k = project(&proj.key, x);
    let v = project(&proj.value, x);
    let mut mixed = vec![0.0; c * n];
    let scores = match kind {
        AttentionKind::Spatial => {
            let mut s = vec![0.0; n * n];
            let scale = 1.0 / (c as f64).sqrt();
            gemm(scale, mat(&q, c, n).t(), mat(&k, c, n), 0.0, &mut s);
            softmax_rows(&mut s, n);
            gemm(1.0, mat(&v, c, n), mat(&s, n, n).t(), 0.0, &mut mixed);
            s
        }
        AttentionKind::Spectral => {
            let mut s = vec![0.0; c * c];
            let scale = 1.0 / (n as f64).sqrt();
            gemm(scale, mat(&k, c, n), mat(&q, c, n).t(), 0.0, &mut s);
            softmax_cols(&mut s, c);
            gemm(1.0, mat(&s, c, c).t(), mat(&v, c, n), 0.0, &mut mixed);
            s
        }
    };
    let mut out = FeatureMap::zeros(c, x.height, x.width);
    gemm(1.0, mat(proj.output.data(), c, c), mat(&mixed, c, n), 0.0, &mut out.data);
    (
        out,
        AttentionCache {
            q,
            k,
            v,
            scores,
            mixed,
        },
    )
}

/// Accumulates projection gradients and returns the input gradient.
pub fn attention_backward(
    kind: AttentionKind,
    x: &FeatureMap,
    proj: &AttentionProj,
    cache: &AttentionCache,
    dy: &FeatureMap,
    grad: &mut AttentionProj,
) -> FeatureMap {
    let c = x.channels;
    let n = x.pixels();
    let dyv = dy.view();
    gemm(1.0, dyv, mat(&cache.mixed, c, n).t(), 1.0, grad.output.data_mut());
    let mut dmixed = vec![0.0; c * n];
    gemm(1.0, mat(proj.output.data(), c, c).t(), dyv, 0.0, &mut dmixed);

    let mut dq = vec![0.0; c * n];
    let mut dk = vec![0.0; c * n];
    let mut dv = vec![0.0; c * n];
    match kind {
        AttentionKind::Spatial => {
            let p = &cache.scores;
            gemm(1.0, mat(&dmixed, c, n), mat(p, n, n), 0.0, &mut dv);
            let mut ds = vec![0.0; n * n];
            gemm(1.0, mat(&dmixed, c, n).t(), mat(&cache.v, c, n), 0.0, &mut ds);
            for (drow, prow) in ds.chunks_mut(n).zip(p.chunks(n)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                drow.iter_mut().zip(prow).for_each(|(d, &pv)| *d = pv * (*d - dot));
            }
            let scale = 1.0 / (c as f64).sqrt();
            gemm(scale, mat(&cache.k, c, n), mat(&ds, n, n).t(), 0.0, &mut dq);
            gemm(scale, mat(&cache.q, c, n), mat(&ds, n, n), 0.0, &mut dk);
        }
        AttentionKind::Spectral => {
            let g = &cache.scores;
            gemm(1.0, mat(g, c, c), mat(&dmixed, c, n), 0.0, &mut dv);
            let mut dz = vec![0.0; c * c];
            gemm(1.0, mat(&cache.v, c, n), mat(&dmixed, c, n).t(), 0.0, &mut dz);
            for j in 0..c {
                let dot: f64 = (0..c).map(|i| dz[i * c + j] * g[i * c + j]).sum();
                for i in 0..c {
                    dz[i * c + j] = g[i * c + j] * (dz[i * c + j] - dot);
                }
            }
            let scale = 1.0 / (n as f64).sqrt();
            gemm(scale, mat(&dz, c, c), mat(&cache.q, c, n), 0.0, &mut dk);
            gemm(scale, mat(&dz, c, c).t(), mat(&cache.k, c, n), 0.0, &mut dq);
        }
    }

    let xt = x.view();
    let xt = xt.t();
    gemm(1.0, mat(&dq, c, n), xt, 1.0, grad.query.data_mut());
    gemm(1.0, mat(&dk, c, n), xt, 1.0, grad.key.data_mut());
    gemm(1.0, mat(&dv, c, n), xt, 1.0, grad.value.data_mut());

    let mut dx = FeatureMap::zeros(c, x.height, x.width);
    gemm(1.0, mat(proj.query.data(), c, c).t(), mat(&dq, c, n), 0.0, &mut dx.data);
    gemm(1.0, mat(proj.key.data(), c, c).t(), mat(&dk, c, n), 1.0, &mut dx.data);
    gemm(1.0, mat(proj.value.data(), c, c).t(), mat(&dv, c, n), 1.0, &mut dx.data);
    dx
}

/// Spatial attention with the token cap enforced.
pub fn spatial_attention(x: &FeatureMap, proj: &AttentionProj, token_cap: usize) -> Result<FeatureMap> {
    check_token_cap(x, token_cap)?;
    Ok(attention_forward(AttentionKind::Spatial, x, proj).0)
}

pub fn spectral_attention(x: &FeatureMap, proj: &AttentionProj) -> FeatureMap {
    attention_forward(AttentionKind::Spectral, x, proj).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap {
            channels: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
        }
    }

    fn value_projection(proj: &AttentionProj, x: &FeatureMap) -> Vec<f64> {
        let v = project(&proj.value, x);
        let mut out = vec![0.0; v.len()];
        let c = x.channels;
        gemm(1.0, mat(proj.output.data(), c, c), mat(&v, c, x.pixels()), 0.0, &mut out);
        out
    }

    #[test]
    fn score_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_map(4, 3, 5, 1);
        let proj = AttentionProj::init(4, &mut rng);
        for kind in [AttentionKind::Spatial, AttentionKind::Spectral] {
            let (_, cache) = attention_forward(kind, &x, &proj);
            let size = if kind == AttentionKind::Spatial { 15 } else { 4 };
            let scores = cache.scores(kind, size);
            for s in scores.normalization_sums() {
                assert!((s - 1.0).abs() < 1e-6);
            }
            assert!(scores.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn degenerate_sizes_return_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // one pixel: spatial softmax is 1
        let x = random_map(3, 1, 1, 2);
        let proj = AttentionProj::init(3, &mut rng);
        let out = spatial_attention(&x, &proj, 4096).unwrap();
        let expect = value_projection(&proj, &x);
        for (a, b) in out.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // one channel: spectral score is 1
        let x = random_map(1, 3, 3, 3);
        let proj = AttentionProj::init(1, &mut rng);
        let out = spectral_attention(&x, &proj);
        let expect = value_projection(&proj, &x);
        for (a, b) in out.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spectrum = [0.2, 0.5, 0.9];
        let x = FeatureMap {
            channels: 3,
            height: 2,
            width: 3,
            data: spectrum.iter().flat_map(|&s| std::iter::repeat_n(s, 6)).collect(),
        };
        let proj = AttentionProj::init(3, &mut rng);
        let out = spatial_attention(&x, &proj, 4096).unwrap();
        let expect = value_projection(&proj, &x);
        for (a, b) in out.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_is_pixel_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_map(4, 3, 3, 9);
        let proj = AttentionProj::init(4, &mut rng);
        let perm = [4usize, 0, 8, 2, 6, 1, 3, 7, 5];
        let permute = |m: &FeatureMap| FeatureMap {
            data: (0..m.channels)
                .flat_map(|c| perm.iter().map(move |&p| m.data[c * 9 + p]))
                .collect(),
            ..*m
        };
        let a = permute(&spectral_attention(&x, &proj));
        let b = spectral_attention(&permute(&x), &proj);
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn token_cap_is_enforced() {
        let x = FeatureMap::zeros(2, 65, 64);
        let proj = AttentionProj::zeros(2);
        assert!(matches!(
            spatial_attention(&x, &proj, 4096),
            Err(Error::Resource(m)) if m.contains("tile")
        ));
    }
}

//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numerical kernels; each oracle is a
//! plain re-derivation so that agreement is meaningful.

#![allow(dead_code)]

use fta::datagen::Listing;
use fta::encoder::{EncoderParams, Layer};
use fta::fusion::{Embedding, Modality, ViewSet};
use fta::transport::SimplexWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

pub fn unit_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v = gaussian_vec(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_rows(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| gaussian_vec(rng, dim)).collect()
}

pub fn view_set(rows: &[Vec<f64>], modality: Modality) -> ViewSet<f64> {
    ViewSet::from_rows(rows.to_vec(), modality).unwrap()
}

/// Random point on the simplex with strictly positive entries.
pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    // push rounding residue into the last entry so the sum is 1 to the ulp
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    w
}

pub fn simplex(values: Vec<f64>) -> SimplexWeights<f64> {
    SimplexWeights::new(values).unwrap()
}

pub fn dot_oracle(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `C[i][j] = -<I_i, T_j>` by double loop.
pub fn neg_dot_oracle(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; texts.len()]; images.len()];
    for i in 0..images.len() {
        for j in 0..texts.len() {
            c[i][j] = -dot_oracle(&images[i], &texts[j]);
        }
    }
    c
}

pub fn nested_sum_oracle(gamma: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for i in 0..gamma.len() {
        for j in 0..gamma[i].len() {
            s += gamma[i][j] * cost[i][j];
        }
    }
    s
}

/// `sum_i w_i v_i` by accumulation.
pub fn weighted_sum_oracle(rows: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for (row, &wi) in rows.iter().zip(w) {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += wi * x;
        }
    }
    acc
}

/// `sum_ij w_i v_j <I_i, T_j>` by double loop.
pub fn bilinear_oracle(images: &[Vec<f64>], texts: &[Vec<f64>], w: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..images.len() {
        for j in 0..texts.len() {
            s += w[i] * v[j] * dot_oracle(&images[i], &texts[j]);
        }
    }
    s
}

/// Minimum-cost perfect assignment on a square matrix (Hungarian method with
/// row/column potentials, O(n^3)). Returns the cost and `assignment[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][assignment[i]]).sum();
    (total, assignment)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Rational marginal `counts / denominator`.
#[derive(Clone, Debug)]
pub struct RationalMarginal {
    pub counts: Vec<usize>,
    pub denominator: usize,
}

impl RationalMarginal {
    pub fn random(rng: &mut impl Rng, n: usize, max_denominator: usize) -> Self {
        let denominator = rng.random_range(n.max(1)..=max_denominator.max(n));
        // bins may stay empty: zero-mass rows and columns are allowed
        let mut counts = vec![0usize; n];
        for _ in 0..denominator {
            counts[rng.random_range(0..n)] += 1;
        }
        Self { counts, denominator }
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.denominator as f64).collect()
    }

    /// Owner of each unit atom once the marginal is refined to denominator `total`.
    fn atoms(&self, total: usize) -> Vec<usize> {
        let per = total / self.denominator;
        self.counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c * per)).collect()
    }
}

/// Exact OT cost between two rational marginals: both are refined to the
/// common denominator, every unit atom becomes a node, and the resulting
/// square assignment problem is solved with [`hungarian`].
pub fn unit_atom_ot(a: &RationalMarginal, b: &RationalMarginal, cost: &[Vec<f64>]) -> f64 {
    let total = a.denominator / gcd(a.denominator, b.denominator) * b.denominator;
    let rows = a.atoms(total);
    let cols = b.atoms(total);
    let matrix: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect();
    hungarian(&matrix).0 / total as f64
}

/// Central finite difference of `f` at every coordinate of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f(&probe);
            probe[k] = orig - h;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor so that near-zero coordinates are
/// compared on the scale of the whole gradient.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-3 * scale))
        .fold(0.0, f64::max)
}

pub fn params_to_vec(p: &EncoderParams<f64>) -> Vec<f64> {
    p.values().copied().collect()
}

pub fn params_from_vec(template: &EncoderParams<f64>, values: &[f64]) -> EncoderParams<f64> {
    let mut p = template.clone();
    for (dst, &src) in p.values_mut().zip(values) {
        *dst = src;
    }
    p
}

pub fn random_params(rng: &mut impl Rng, input: usize, output: usize, hidden: Option<usize>) -> EncoderParams<f64> {
    let mut layer = |i: usize, o: usize| {
        let mut l = Layer::zeros(i, o);
        for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *w = rng.random_range(-0.8..0.8);
        }
        l
    };
    let layers = match hidden {
        None => vec![layer(input, output)],
        Some(h) => vec![layer(input, h), layer(h, output)],
    };
    EncoderParams::from_layers(layers).unwrap()
}

/// Straight-line forward pass: matrix-vector products, optional tanh, normalize.
pub fn encode_oracle(p: &EncoderParams<f64>, raw: &[f64]) -> Vec<f64> {
    let mut x = raw.to_vec();
    let layers = p.layers();
    for (k, layer) in layers.iter().enumerate() {
        let mut y = layer.bias.clone();
        for (r, yr) in y.iter_mut().enumerate() {
            for c in 0..layer.inputs() {
                *yr += layer.weights[r * layer.inputs() + c] * x[c];
            }
        }
        if k + 1 < layers.len() {
            for v in &mut y {
                *v = v.tanh();
            }
        }
        x = y;
    }
    let n = dot_oracle(&x, &x).sqrt();
    x.into_iter().map(|v| v / n).collect()
}

pub fn embedding(v: Vec<f64>) -> Embedding<f64> {
    Embedding::new(v).unwrap()
}

/// Listing with random raw views; latent left empty.
pub fn random_listing(rng: &mut impl Rng, id: &str, n: usize, m: usize, raw_dim: usize) -> Listing {
    Listing {
        id: id.to_string(),
        category: "cat".to_string(),
        image_views: random_rows(rng, n, raw_dim),
        text_views: random_rows(rng, m, raw_dim),
        latent: Vec::new(),
    }
}

/// Top-k by sorting every (score, id) pair: descending score, then ascending id.
pub fn full_sort_knn(entries: &[(String, Vec<f32>)], query: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = entries
        .iter()
        .map(|(id, v)| (id.clone(), v.iter().zip(query).map(|(&a, &b)| f64::from(a) * b).sum()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

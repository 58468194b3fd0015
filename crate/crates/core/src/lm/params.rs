use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ModelConfig;

/// A fixed, ordered collection of named flat tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }

    fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= c);
        }
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of every tensor, in declaration order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }
}

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / (norm + 1e-6));
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Frozen backbone weights. Matrices are stored `[in × out]` so that a row
/// vector maps as `x · W`. The output head is tied to `tok_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub tok_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
}

/// One low-rank pair. `a` is `[in × rank]` and `b` is `[rank × out]`, i.e.
/// the transposes of the usual `A (r×k)` / `B (d×r)` factors, so the update
/// applied to a row vector is `scale · (x · a) · b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdapters {
    pub query: LowRankPair,
    pub value: LowRankPair,
}

/// Trainable actor parameters: adapters on the query and value projections
/// of every layer. There is no dropout anywhere on this path.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapters {
    pub layers: Vec<LayerAdapters>,
}

/// Value head: three affine layers with ReLU between them, scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticHead {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub base: BaseWeights,
    pub adapters: Adapters,
    pub critic: CriticHead,
    version: u64,
}

impl ParamSet for BaseWeights {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> =
            vec![("tok_emb".into(), &self.tok_emb), ("pos_emb".into(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                out.push((format!("layer{i}.{n}"), t));
            }
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g[..],
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out
    }
}

impl ParamSet for Adapters {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("adapter{i}.query.a"), &l.query.a));
            out.push((format!("adapter{i}.query.b"), &l.query.b));
            out.push((format!("adapter{i}.value.a"), &l.value.a));
            out.push((format!("adapter{i}.value.b"), &l.value.b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.extend([&mut l.query.a[..], &mut l.query.b, &mut l.value.a, &mut l.value.b]);
        }
        out
    }
}

impl ParamSet for CriticHead {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("critic.w1".into(), &self.w1),
            ("critic.b1".into(), &self.b1),
            ("critic.w2".into(), &self.w2),
            ("critic.b2".into(), &self.b2),
            ("critic.w3".into(), &self.w3),
            ("critic.b3".into(), &self.b3),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3, &mut self.b3]
    }
}

fn normal_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn uniform_vec(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl BaseWeights {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ff_dim();
        let std = 0.02;
        // Residual-path projections are scaled down with depth.
        let proj_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: normal_vec(rng, d * d, std),
                wk: normal_vec(rng, d * d, std),
                wv: normal_vec(rng, d * d, std),
                wo: normal_vec(rng, d * d, proj_std),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: normal_vec(rng, d * f, std),
                b1: vec![0.0; f],
                w2: normal_vec(rng, f * d, proj_std),
                b2: vec![0.0; d],
            })
            .collect();
        Self {
            tok_emb: normal_vec(rng, cfg.vocab_size * d, std),
            pos_emb: normal_vec(rng, cfg.context_length * d, 0.01),
            layers,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }
}

impl Adapters {
    /// `a` factors are drawn uniformly, `b` factors start at exactly zero so
    /// the adapted model initially reproduces the base model.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.embed_dim;
        let r = cfg.adapter_rank;
        let bound = 1.0 / (d as f64).sqrt();
        let layers = (0..cfg.n_layers)
            .map(|_| {
                let query = LowRankPair { a: uniform_vec(rng, d * r, bound), b: vec![0.0; r * d] };
                let value = LowRankPair { a: uniform_vec(rng, d * r, bound), b: vec![0.0; r * d] };
                LayerAdapters { query, value }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }
}

impl CriticHead {
    pub fn init(input_dim: usize, hidden: (usize, usize), rng: &mut impl Rng) -> Self {
        let (h1, h2) = hidden;
        let b_in = 1.0 / (input_dim as f64).sqrt();
        let b_h1 = 1.0 / (h1 as f64).sqrt();
        let b_h2 = 1.0 / (h2 as f64).sqrt();
        Self {
            w1: uniform_vec(rng, input_dim * h1, b_in),
            b1: uniform_vec(rng, h1, b_in),
            w2: uniform_vec(rng, h1 * h2, b_h1),
            b2: uniform_vec(rng, h2, b_h1),
            w3: uniform_vec(rng, h2, b_h2),
            b3: uniform_vec(rng, 1, b_h2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    pub fn hidden(&self) -> (usize, usize) {
        (self.b1.len(), self.b2.len())
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = BaseWeights::init(config, &mut rng);
        let adapters = Adapters::init(config, &mut rng);
        let critic = CriticHead::init(config.embed_dim, config.critic_hidden, &mut rng);
        Self { config: config.clone(), base, adapters, critic, version: 0 }
    }

    /// Monotone counter bumped on every in-place update; activation caches
    /// remember it so a backward pass against changed weights is refused.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn touch(&mut self) {
        self.version += 1;
    }

    /// Adapter scaling `adapter_scale / rank`.
    pub fn adapter_factor(&self) -> f64 {
        self.config.adapter_scale / self.config.adapter_rank as f64
    }
}

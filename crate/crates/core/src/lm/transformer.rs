//! Pre-norm causal transformer: forward pass with cached activations and the
//! matching reverse pass.
//!
//! A [`Sequence`] carries explicit position ids and a segment id per token.
//! Segment 0 is a shared prefix; a token in segment `s > 0` attends to the
//! prefix and to earlier tokens of its own segment only. This lets one pass
//! score several continuations of the same prompt, each one seeing exactly
//! what it would see if it were evaluated on its own.

use super::params::{Adapters, BaseWeights, LowRankPair, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_softmax_in_place, matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Base,
    WithAdapters,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub segments: Vec<u32>,
}

impl Sequence {
    /// Plain causal sequence with positions `0..n`.
    pub fn causal(tokens: &[u32]) -> Self {
        Self {
            tokens: tokens.to_vec(),
            positions: (0..tokens.len()).collect(),
            segments: vec![0; tokens.len()],
        }
    }

    /// Shared `prefix` followed by each continuation in its own segment.
    /// Every continuation restarts at position `prefix.len()`.
    pub fn with_branches(prefix: &[u32], branches: &[&[u32]]) -> Self {
        let mut seq = Self::causal(prefix);
        for (k, b) in branches.iter().enumerate() {
            for (i, &t) in b.iter().enumerate() {
                seq.tokens.push(t);
                seq.positions.push(prefix.len() + i);
                seq.segments.push(k as u32 + 1);
            }
        }
        seq
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    #[inline]
    fn attends(&self, i: usize, j: usize) -> bool {
        j <= i && (self.segments[j] == 0 || self.segments[j] == self.segments[i])
    }

    fn max_position(&self) -> usize {
        self.positions.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    x_in: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    uq: Vec<f64>,
    uv: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    x_mid: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    m: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub mode: Mode,
    pub seq: Sequence,
    version: u64,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
    /// Final normalized hidden states, `[T × d]`.
    pub hidden: Vec<f64>,
}

impl Activations {
    pub fn hidden_row(&self, i: usize) -> &[f64] {
        let d = self.hidden.len() / self.seq.len().max(1);
        &self.hidden[i * d..(i + 1) * d]
    }
}

/// Full per-position next-token distributions of a plain forward pass.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// `[T × V]` log-probabilities of the token following each position.
    pub log_probs: Vec<f64>,
    pub vocab_size: usize,
    /// Final hidden state at the last position.
    pub last_hidden: Vec<f64>,
    pub activations: Activations,
}

impl ForwardResult {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.log_probs[i * self.vocab_size..(i + 1) * self.vocab_size]
    }
}

/// Gradient accumulators; only the groups that are `Some` are computed.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub base: Option<BaseWeights>,
    pub adapters: Option<Adapters>,
}

impl Gradients {
    pub fn for_base(params: &ModelParams) -> Self {
        Self { base: Some(params.base.zeros_like()), adapters: None }
    }

    pub fn for_adapters(params: &ModelParams) -> Self {
        Self { base: None, adapters: Some(params.adapters.zeros_like()) }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64], mean: &mut [f64], rstd: &mut [f64], d: usize) {
    for t in 0..mean.len() {
        let row = &x[t * d..(t + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        mean[t] = mu;
        rstd[t] = rs;
        for (i, o) in out[t * d..(t + 1) * d].iter_mut().enumerate() {
            *o = (row[i] - mu) * rs * g[i] + b[i];
        }
    }
}

/// Adds the input gradient of a layer norm to `dx`; accumulates gain/bias
/// gradients when requested.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    x: &[f64],
    g: &[f64],
    mean: &[f64],
    rstd: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    mut dgb: Option<(&mut [f64], &mut [f64])>,
    d: usize,
) {
    let mut dxhat = vec![0.0; d];
    for t in 0..mean.len() {
        let row = &x[t * d..(t + 1) * d];
        let dyr = &dy[t * d..(t + 1) * d];
        let (mu, rs) = (mean[t], rstd[t]);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..d {
            let xhat = (row[i] - mu) * rs;
            dxhat[i] = dyr[i] * g[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xhat;
            if let Some((dg, db)) = dgb.as_mut() {
                dg[i] += dyr[i] * xhat;
                db[i] += dyr[i];
            }
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for (i, o) in dx[t * d..(t + 1) * d].iter_mut().enumerate() {
            let xhat = (row[i] - mu) * rs;
            *o += rs * (dxhat[i] - m1 - xhat * m2);
        }
    }
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `out += factor · (x · a) · b`, keeping `u = x · a` for the backward pass.
fn low_rank_forward(pair: &LowRankPair, x: &[f64], out: &mut [f64], factor: f64, t: usize, d: usize, r: usize) -> Vec<f64> {
    let mut u = vec![0.0; t * r];
    matmul(x, &pair.a, &mut u, t, d, r);
    let scaled: Vec<f64> = u.iter().map(|v| v * factor).collect();
    matmul_acc(&scaled, &pair.b, out, t, r, d);
    u
}

#[allow(clippy::too_many_arguments)]
fn low_rank_backward(
    pair: &LowRankPair,
    grad: &mut LowRankPair,
    x: &[f64],
    u: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    factor: f64,
    t: usize,
    d: usize,
    r: usize,
) {
    let scaled_u: Vec<f64> = u.iter().map(|v| v * factor).collect();
    matmul_tn_acc(&scaled_u, dy, &mut grad.b, t, r, d);
    let mut du = vec![0.0; t * r];
    matmul_nt_acc(dy, &pair.b, &mut du, t, d, r);
    du.iter_mut().for_each(|v| *v *= factor);
    matmul_tn_acc(x, &du, &mut grad.a, t, d, r);
    matmul_nt_acc(&du, &pair.a, dx, t, r, d);
}

impl ModelParams {
    /// Runs the decoder over `seq` and keeps every activation needed by
    /// [`ModelParams::backward`].
    pub fn run(&self, seq: &Sequence, mode: Mode) -> Result<Activations> {
        let cfg = &self.config;
        let (t, d, f, r, nh) = (seq.len(), cfg.embed_dim, cfg.ff_dim(), cfg.adapter_rank, cfg.n_heads);
        let hd = cfg.head_dim();
        if t == 0 {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if seq.max_position() >= cfg.context_length {
            return Err(Error::ContextOverflow {
                len: seq.max_position() + 1,
                limit: cfg.context_length,
                prompt: String::new(),
            });
        }
        if let Some(&bad) = seq.tokens.iter().find(|&&tok| tok as usize >= cfg.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} out of range")));
        }
        let base = &self.base;
        let factor = self.adapter_factor();
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = vec![0.0; t * d];
        for i in 0..t {
            let tok = seq.tokens[i] as usize;
            let pos = seq.positions[i];
            let row = &mut x[i * d..(i + 1) * d];
            for c in 0..d {
                row[c] = base.tok_emb[tok * d + c] + base.pos_emb[pos * d + c];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (li, lw) in base.layers.iter().enumerate() {
            let x_in = x.clone();
            let mut a = vec![0.0; t * d];
            let mut ln1_mean = vec![0.0; t];
            let mut ln1_rstd = vec![0.0; t];
            layer_norm(&x, &lw.ln1_g, &lw.ln1_b, &mut a, &mut ln1_mean, &mut ln1_rstd, d);

            let mut q = vec![0.0; t * d];
            let mut k = vec![0.0; t * d];
            let mut v = vec![0.0; t * d];
            matmul(&a, &lw.wq, &mut q, t, d, d);
            matmul(&a, &lw.wk, &mut k, t, d, d);
            matmul(&a, &lw.wv, &mut v, t, d, d);
            let (uq, uv) = if mode == Mode::WithAdapters {
                let ad = &self.adapters.layers[li];
                (
                    low_rank_forward(&ad.query, &a, &mut q, factor, t, d, r),
                    low_rank_forward(&ad.value, &a, &mut v, factor, t, d, r),
                )
            } else {
                (Vec::new(), Vec::new())
            };

            let mut probs = vec![0.0; nh * t * t];
            let mut attn = vec![0.0; t * d];
            let mut scores = vec![0.0; t];
            for h in 0..nh {
                let off = h * hd;
                for i in 0..t {
                    let qi = &q[i * d + off..i * d + off + hd];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..=i {
                        if seq.attends(i, j) {
                            let s = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                            scores[j] = s;
                            mx = mx.max(s);
                        }
                    }
                    let prow = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                    let mut z = 0.0;
                    for j in 0..=i {
                        if seq.attends(i, j) {
                            let e = (scores[j] - mx).exp();
                            prow[j] = e;
                            z += e;
                        }
                    }
                    let out = &mut attn[i * d + off..i * d + off + hd];
                    for j in 0..=i {
                        if prow[j] != 0.0 {
                            prow[j] /= z;
                            let p = prow[j];
                            for (o, vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                                *o += p * vv;
                            }
                        }
                    }
                }
            }
            matmul_acc(&attn, &lw.wo, &mut x, t, d, d);
            let x_mid = x.clone();

            let mut m = vec![0.0; t * d];
            let mut ln2_mean = vec![0.0; t];
            let mut ln2_rstd = vec![0.0; t];
            layer_norm(&x, &lw.ln2_g, &lw.ln2_b, &mut m, &mut ln2_mean, &mut ln2_rstd, d);
            let mut h_pre = vec![0.0; t * f];
            for i in 0..t {
                h_pre[i * f..(i + 1) * f].copy_from_slice(&lw.b1);
            }
            matmul_acc(&m, &lw.w1, &mut h_pre, t, d, f);
            let h: Vec<f64> = h_pre.iter().map(|&v| gelu(v)).collect();
            matmul_acc(&h, &lw.w2, &mut x, t, f, d);
            for i in 0..t {
                for (o, b) in x[i * d..(i + 1) * d].iter_mut().zip(&lw.b2) {
                    *o += b;
                }
            }
            layers.push(LayerCache {
                x_in,
                ln1_mean,
                ln1_rstd,
                a,
                q,
                k,
                v,
                uq,
                uv,
                probs,
                attn,
                x_mid,
                ln2_mean,
                ln2_rstd,
                m,
                h_pre,
                h,
            });
        }

        let mut hidden = vec![0.0; t * d];
        let mut lnf_mean = vec![0.0; t];
        let mut lnf_rstd = vec![0.0; t];
        layer_norm(&x, &base.lnf_g, &base.lnf_b, &mut hidden, &mut lnf_mean, &mut lnf_rstd, d);
        Ok(Activations {
            mode,
            seq: seq.clone(),
            version: self.version(),
            layers,
            x_final: x,
            lnf_mean,
            lnf_rstd,
            hidden,
        })
    }

    /// Next-token log-probabilities from one final hidden row (tied head).
    pub fn head_log_probs(&self, hidden_row: &[f64]) -> Vec<f64> {
        let d = self.config.embed_dim;
        let mut logits: Vec<f64> =
            (0..self.config.vocab_size).map(|v| dot(hidden_row, &self.base.tok_emb[v * d..(v + 1) * d])).collect();
        log_softmax_in_place(&mut logits);
        logits
    }

    /// Backpropagates `d_logp · log p(target | row)` through the tied head:
    /// adds to `d_hidden_row` and, when given, to the embedding gradient.
    pub fn head_backward(
        &self,
        hidden_row: &[f64],
        log_probs: &[f64],
        target: u32,
        d_logp: f64,
        d_hidden_row: &mut [f64],
        mut d_tok_emb: Option<&mut [f64]>,
    ) {
        let d = self.config.embed_dim;
        for (vid, &lp) in log_probs.iter().enumerate() {
            let indicator = if vid as u32 == target { 1.0 } else { 0.0 };
            let g = d_logp * (indicator - lp.exp());
            if g == 0.0 {
                continue;
            }
            let emb = &self.base.tok_emb[vid * d..(vid + 1) * d];
            for (o, e) in d_hidden_row.iter_mut().zip(emb) {
                *o += g * e;
            }
            if let Some(de) = d_tok_emb.as_deref_mut() {
                for (o, h) in de[vid * d..(vid + 1) * d].iter_mut().zip(hidden_row) {
                    *o += g * h;
                }
            }
        }
    }

    /// Plain causal forward over `tokens`, returning full next-token
    /// distributions at every position.
    pub fn forward(&self, tokens: &[u32], mode: Mode) -> Result<ForwardResult> {
        let acts = self.run(&Sequence::causal(tokens), mode)?;
        let v = self.config.vocab_size;
        let mut log_probs = Vec::with_capacity(tokens.len() * v);
        for i in 0..tokens.len() {
            log_probs.extend(self.head_log_probs(acts.hidden_row(i)));
        }
        let last_hidden = acts.hidden_row(tokens.len() - 1).to_vec();
        Ok(ForwardResult { log_probs, vocab_size: v, last_hidden, activations: acts })
    }

    /// Reverse pass from gradients w.r.t. the final hidden states.
    ///
    /// Base-weight gradients are produced only when `grads.base` is present;
    /// adapter gradients only when `grads.adapters` is present and the
    /// activations came from an adapted pass.
    pub fn backward(&self, acts: &Activations, d_hidden: &[f64], grads: &mut Gradients) -> Result<()> {
        if acts.version != self.version() {
            return Err(Error::InvalidInput(format!(
                "stale activation cache (params version {} vs cache {})",
                self.version(),
                acts.version
            )));
        }
        let cfg = &self.config;
        let seq = &acts.seq;
        let (t, d, f, r, nh) = (seq.len(), cfg.embed_dim, cfg.ff_dim(), cfg.adapter_rank, cfg.n_heads);
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let factor = self.adapter_factor();
        let base = &self.base;

        let mut dx = vec![0.0; t * d];
        {
            let dgb = grads.base.as_mut().map(|g| (&mut g.lnf_g[..], &mut g.lnf_b[..]));
            layer_norm_backward(&acts.x_final, &base.lnf_g, &acts.lnf_mean, &acts.lnf_rstd, d_hidden, &mut dx, dgb, d);
        }

        for li in (0..cfg.n_layers).rev() {
            let lw = &base.layers[li];
            let c = &acts.layers[li];
            let mut gl = grads.base.as_mut().map(|g| &mut g.layers[li]);

            // MLP block: x_out = x_mid + gelu(m·W1 + b1)·W2 + b2
            let mut dh = vec![0.0; t * f];
            matmul_nt_acc(&dx, &lw.w2, &mut dh, t, d, f);
            if let Some(g) = gl.as_deref_mut() {
                matmul_tn_acc(&c.h, &dx, &mut g.w2, t, f, d);
                for i in 0..t {
                    for (o, v) in g.b2.iter_mut().zip(&dx[i * d..(i + 1) * d]) {
                        *o += v;
                    }
                }
            }
            for (g, &hp) in dh.iter_mut().zip(&c.h_pre) {
                *g *= gelu_grad(hp);
            }
            let mut dm = vec![0.0; t * d];
            matmul_nt_acc(&dh, &lw.w1, &mut dm, t, f, d);
            if let Some(g) = gl.as_deref_mut() {
                matmul_tn_acc(&c.m, &dh, &mut g.w1, t, d, f);
                for i in 0..t {
                    for (o, v) in g.b1.iter_mut().zip(&dh[i * f..(i + 1) * f]) {
                        *o += v;
                    }
                }
            }
            {
                let dgb = gl.as_deref_mut().map(|g| (&mut g.ln2_g[..], &mut g.ln2_b[..]));
                layer_norm_backward(&c.x_mid, &lw.ln2_g, &c.ln2_mean, &c.ln2_rstd, &dm, &mut dx, dgb, d);
            }

            // Attention block: x_mid = x_in + attn·Wo
            let mut dattn = vec![0.0; t * d];
            matmul_nt_acc(&dx, &lw.wo, &mut dattn, t, d, d);
            if let Some(g) = gl.as_deref_mut() {
                matmul_tn_acc(&c.attn, &dx, &mut g.wo, t, d, d);
            }
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            let mut dp = vec![0.0; t];
            for h in 0..nh {
                let off = h * hd;
                for i in 0..t {
                    let prow = &c.probs[(h * t + i) * t..(h * t + i + 1) * t];
                    let doi = &dattn[i * d + off..i * d + off + hd];
                    let mut weighted = 0.0;
                    for j in 0..=i {
                        if prow[j] != 0.0 {
                            dp[j] = dot(doi, &c.v[j * d + off..j * d + off + hd]);
                            weighted += prow[j] * dp[j];
                            for (o, g) in dv[j * d + off..j * d + off + hd].iter_mut().zip(doi) {
                                *o += prow[j] * g;
                            }
                        }
                    }
                    for j in 0..=i {
                        if prow[j] != 0.0 {
                            let ds = prow[j] * (dp[j] - weighted) * scale;
                            for e in 0..hd {
                                dq[i * d + off + e] += ds * c.k[j * d + off + e];
                                dk[j * d + off + e] += ds * c.q[i * d + off + e];
                            }
                        }
                    }
                }
            }

            let mut da = vec![0.0; t * d];
            matmul_nt_acc(&dq, &lw.wq, &mut da, t, d, d);
            matmul_nt_acc(&dk, &lw.wk, &mut da, t, d, d);
            matmul_nt_acc(&dv, &lw.wv, &mut da, t, d, d);
            if let Some(g) = gl.as_deref_mut() {
                matmul_tn_acc(&c.a, &dq, &mut g.wq, t, d, d);
                matmul_tn_acc(&c.a, &dk, &mut g.wk, t, d, d);
                matmul_tn_acc(&c.a, &dv, &mut g.wv, t, d, d);
            }
            if acts.mode == Mode::WithAdapters {
                let ad = &self.adapters.layers[li];
                let mut scratch;
                let ga = match grads.adapters.as_mut() {
                    Some(g) => &mut g.layers[li],
                    None => {
                        // Input gradients still flow through the adapters.
                        scratch = self.adapters.layers[li].clone();
                        &mut scratch
                    }
                };
                low_rank_backward(&ad.query, &mut ga.query, &c.a, &c.uq, &dq, &mut da, factor, t, d, r);
                low_rank_backward(&ad.value, &mut ga.value, &c.a, &c.uv, &dv, &mut da, factor, t, d, r);
            }
            {
                let dgb = gl.map(|g| (&mut g.ln1_g[..], &mut g.ln1_b[..]));
                layer_norm_backward(&c.x_in, &lw.ln1_g, &c.ln1_mean, &c.ln1_rstd, &da, &mut dx, dgb, d);
            }
        }

        if let Some(g) = grads.base.as_mut() {
            for i in 0..t {
                let tok = seq.tokens[i] as usize;
                let pos = seq.positions[i];
                let row = &dx[i * d..(i + 1) * d];
                for cidx in 0..d {
                    g.tok_emb[tok * d + cidx] += row[cidx];
                    g.pos_emb[pos * d + cidx] += row[cidx];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ModelConfig, ParamSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            context_length: 12,
            embed_dim: 8,
            n_layers: 2,
            n_heads: 2,
            adapter_rank: 2,
            adapter_scale: 4.0,
            critic_hidden: (5, 3),
        }
    }

    fn randomized(seed: u64) -> ModelParams {
        let mut p = ModelParams::init(&tiny(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in p.adapters.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        for t in p.base.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        p
    }

    #[test]
    fn rows_are_normalized() {
        let p = randomized(1);
        let r = p.forward(&[1, 4, 5, 9, 3], Mode::WithAdapters).unwrap();
        for i in 0..5 {
            let s: f64 = r.row(i).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn later_tokens_do_not_affect_earlier_rows() {
        let p = randomized(2);
        let a = p.forward(&[1, 4, 5, 9, 3], Mode::WithAdapters).unwrap();
        let b = p.forward(&[1, 4, 5, 2, 7], Mode::WithAdapters).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), b.row(i));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn zero_adapters_reproduce_base_exactly() {
        let p = ModelParams::init(&tiny(), 3);
        let a = p.forward(&[1, 4, 5, 9], Mode::Base).unwrap();
        let b = p.forward(&[1, 4, 5, 9], Mode::WithAdapters).unwrap();
        assert_eq!(a.log_probs, b.log_probs);
        assert_eq!(a.last_hidden, b.last_hidden);
    }

    #[test]
    fn branched_rows_match_separate_passes_bitwise() {
        let p = randomized(4);
        let prefix = [1u32, 6, 7];
        let branches: [&[u32]; 3] = [&[3, 4], &[5], &[8, 9, 10]];
        let joint = p.run(&Sequence::with_branches(&prefix, &branches), Mode::WithAdapters).unwrap();
        let mut offset = prefix.len();
        for b in branches {
            let solo: Vec<u32> = prefix.iter().chain(b.iter()).copied().collect();
            let alone = p.run(&Sequence::causal(&solo), Mode::WithAdapters).unwrap();
            for i in 0..prefix.len() {
                assert_eq!(joint.hidden_row(i), alone.hidden_row(i));
            }
            for k in 0..b.len() {
                assert_eq!(joint.hidden_row(offset + k), alone.hidden_row(prefix.len() + k));
            }
            offset += b.len();
        }
    }

    #[test]
    fn overflow_and_bad_tokens_are_errors() {
        let p = ModelParams::init(&tiny(), 1);
        let long: Vec<u32> = vec![3; 13];
        assert!(matches!(p.forward(&long, Mode::Base), Err(Error::ContextOverflow { .. })));
        assert!(matches!(p.forward(&[1, 99], Mode::Base), Err(Error::InvalidInput(_))));
        assert!(p.forward(&[], Mode::Base).is_err());
    }

    #[test]
    fn stale_cache_is_refused() {
        let mut p = randomized(5);
        let acts = p.run(&Sequence::causal(&[1, 2, 3]), Mode::WithAdapters).unwrap();
        p.touch();
        let mut g = Gradients::for_adapters(&p);
        let d = vec![0.0; 3 * p.config.embed_dim];
        assert!(p.backward(&acts, &d, &mut g).is_err());
    }

    /// Loss = Σ_i w_i · log p(tokens[i+1] | ≤ i) over a fixed weight vector.
    fn loss(p: &ModelParams, tokens: &[u32], w: &[f64], mode: Mode) -> f64 {
        let r = p.forward(&tokens[..tokens.len() - 1], mode).unwrap();
        (0..tokens.len() - 1).map(|i| w[i] * r.row(i)[tokens[i + 1] as usize]).sum()
    }

    fn analytic(p: &ModelParams, tokens: &[u32], w: &[f64], mut grads: Gradients, mode: Mode) -> Gradients {
        let d = p.config.embed_dim;
        let acts = p.run(&Sequence::causal(&tokens[..tokens.len() - 1]), mode).unwrap();
        let mut dh = vec![0.0; (tokens.len() - 1) * d];
        for i in 0..tokens.len() - 1 {
            let lp = p.head_log_probs(acts.hidden_row(i));
            let emb = grads.base.as_mut().map(|b| &mut b.tok_emb[..]);
            p.head_backward(acts.hidden_row(i), &lp, tokens[i + 1], w[i], &mut dh[i * d..(i + 1) * d], emb);
        }
        p.backward(&acts, &dh, &mut grads).unwrap();
        grads
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!((analytic - numeric).abs() / denom < 1e-4, "{what}: analytic {analytic} vs numeric {numeric}");
    }

    #[test]
    fn base_gradients_match_finite_differences() {
        let p = randomized(6);
        let tokens = [1u32, 4, 9, 4, 2, 7];
        let w = [0.3, -1.0, 0.7, 1.2, -0.4];
        let g = analytic(&p, &tokens, &w, Gradients::for_base(&p), Mode::Base);
        let flat = g.base.unwrap().flatten();
        let h = 1e-5;
        let mut idx = 0;
        let n_tensors = p.base.tensors().len();
        for ti in 0..n_tensors {
            let len = p.base.tensors()[ti].1.len();
            for k in (0..len).step_by(7) {
                let mut plus = p.clone();
                plus.base.tensors_mut()[ti][k] += h;
                let mut minus = p.clone();
                minus.base.tensors_mut()[ti][k] -= h;
                let num = (loss(&plus, &tokens, &w, Mode::Base) - loss(&minus, &tokens, &w, Mode::Base)) / (2.0 * h);
                assert_close(flat[idx + k], num, &format!("base tensor {ti}[{k}]"));
            }
            idx += len;
        }
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let p = randomized(7);
        let tokens = [1u32, 3, 8, 5, 5, 10];
        let w = [1.0, 0.5, -0.8, 0.2, 1.1];
        let g = analytic(&p, &tokens, &w, Gradients::for_adapters(&p), Mode::WithAdapters);
        let flat = g.adapters.unwrap().flatten();
        let h = 1e-5;
        let mut idx = 0;
        for ti in 0..p.adapters.tensors().len() {
            let len = p.adapters.tensors()[ti].1.len();
            for k in 0..len {
                let mut plus = p.clone();
                plus.adapters.tensors_mut()[ti][k] += h;
                let mut minus = p.clone();
                minus.adapters.tensors_mut()[ti][k] -= h;
                let num = (loss(&plus, &tokens, &w, Mode::WithAdapters) - loss(&minus, &tokens, &w, Mode::WithAdapters))
                    / (2.0 * h);
                assert_close(flat[idx + k], num, &format!("adapter tensor {ti}[{k}]"));
            }
            idx += len;
        }
    }
}

//! Simplicial-embedding codec: encode points to per-position simplex
//! vectors, tokenize by argmax into discrete latent codes, compose codes
//! position-wise, and embed codes back into conditioning vectors.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math::{argmax, Real};
use crate::nn::adamw::{adamw_step, AdamWConfig, AdamWState};
use crate::nn::mlp::{Mlp, MlpArch, MlpCache};
use crate::nn::{Activation, ParamLayout};
use crate::rng::Rng;

/// Shape of the simplicial embedding: `tokens` positions, each a
/// distribution over `vocab` entries, projected from a `embed_dim`
/// encoder output with softmax temperature `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemConfig {
    pub tokens: usize,
    pub vocab: usize,
    pub embed_dim: usize,
    pub tau: f32,
}

impl SemConfig {
    pub fn new(tokens: usize, vocab: usize, embed_dim: usize) -> Self {
        SemConfig {
            tokens,
            vocab,
            embed_dim,
            tau: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens < 1 || self.vocab < 2 || self.embed_dim < 1 {
            return Err(CoreError::InvalidArgument(
                "need tokens >= 1, vocab >= 2, embed_dim >= 1".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "softmax temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Discrete latent code: `L` tokens in `[0, V)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dlc {
    tokens: Vec<u32>,
}

impl Dlc {
    pub fn new(tokens: Vec<u32>, vocab: usize) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(CoreError::InvalidArgument(format!(
                "token {t} out of vocabulary {vocab}"
            )));
        }
        Ok(Dlc { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Encoder: MLP trunk `R² → R^d` followed by `L` learned `d×V` projections,
/// each softmaxed onto the V-simplex at temperature `tau`.
#[derive(Debug, Clone)]
pub struct SemEncoder {
    cfg: SemConfig,
    trunk: MlpArch,
    params: Vec<f32>,
    layout: ParamLayout,
    trunk_len: usize,
}

/// Retained activations for [`SemEncoder::backward`].
#[derive(Debug, Clone, Default)]
pub struct SemEncoderCache {
    mlp: MlpCache,
    embed: Vec<f32>,
    sems: Vec<f32>,
    batch: usize,
}

impl SemEncoder {
    pub fn new(cfg: SemConfig, trunk_hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![2usize];
        widths.extend_from_slice(trunk_hidden);
        widths.push(cfg.embed_dim);
        let trunk = MlpArch::new(widths, Activation::SiLU);

        let mut layout = ParamLayout::default();
        layout.extend_prefixed("trunk", &trunk.layout());
        let trunk_len = trunk.layout().total();
        for i in 0..cfg.tokens {
            layout.push(format!("proj{i}"), vec![cfg.embed_dim, cfg.vocab]);
        }
        let mut params = vec![0.0f32; layout.total()];
        let tmp = Mlp::new(trunk.widths.clone(), Activation::SiLU, rng);
        params[..trunk_len].copy_from_slice(tmp.params());
        crate::nn::init_normal(
            &mut params[trunk_len..],
            1.0 / libm::sqrtf(cfg.embed_dim as f32),
            rng,
        );
        Ok(SemEncoder {
            cfg,
            trunk,
            params,
            layout,
            trunk_len,
        })
    }

    pub fn cfg(&self) -> &SemConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn trunk_widths(&self) -> &[usize] {
        &self.trunk.widths
    }

    fn proj(&self, params_offset_base: usize, i: usize) -> core::ops::Range<usize> {
        let sz = self.cfg.embed_dim * self.cfg.vocab;
        let start = params_offset_base + i * sz;
        start..start + sz
    }

    /// Simplex outputs for a `[batch, 2]` slice: `[batch, L, V]` flat.
    pub fn encode_generic<F: Real>(&self, params: &[F], xs: &[F], batch: usize) -> Vec<F> {
        let (l, v, d) = (self.cfg.tokens, self.cfg.vocab, self.cfg.embed_dim);
        let tau = F::from_f32(self.cfg.tau);
        let embed = self.trunk.forward_generic(&params[..self.trunk_len], xs, batch);
        let mut sems = vec![F::ZERO; batch * l * v];
        for b in 0..batch {
            let e = &embed[b * d..(b + 1) * d];
            for i in 0..l {
                let w = &params[self.proj(self.trunk_len, i)];
                let row = &mut sems[(b * l + i) * v..(b * l + i + 1) * v];
                for (col, r) in row.iter_mut().enumerate() {
                    let mut acc = F::ZERO;
                    for (j, &ev) in e.iter().enumerate() {
                        acc += ev * w[j * v + col];
                    }
                    *r = acc;
                }
                crate::math::softmax_in_place(row, tau);
            }
        }
        sems
    }

    /// Simplicial embeddings of one point: `L` rows of `V` simplex weights.
    pub fn encode_sem(&self, x: [f32; 2]) -> Result<Vec<f32>> {
        self.cfg.validate()?;
        let sems = self.encode_generic(&self.params, &x, 1);
        Ok(sems)
    }

    /// Batched encode at f32.
    pub fn encode_batch(&self, xs: &[f32], batch: usize) -> Vec<f32> {
        self.encode_generic(&self.params, xs, batch)
    }

    /// Training forward: retains the trunk activations and the simplexes.
    pub fn forward_train(&self, xs: &[f32], batch: usize, cache: &mut SemEncoderCache) -> Vec<f32> {
        let (l, v, d) = (self.cfg.tokens, self.cfg.vocab, self.cfg.embed_dim);
        let trunk = Mlp::from_params(
            self.trunk.widths.clone(),
            Activation::SiLU,
            self.params[..self.trunk_len].to_vec(),
        )
        .expect("trunk params sized by construction");
        cache.batch = batch;
        cache.embed = trunk.forward_train(xs, batch, &mut cache.mlp);
        let mut sems = vec![0.0f32; batch * l * v];
        for b in 0..batch {
            let e = &cache.embed[b * d..(b + 1) * d];
            for i in 0..l {
                let w = &self.params[self.proj(self.trunk_len, i)];
                let row = &mut sems[(b * l + i) * v..(b * l + i + 1) * v];
                for (col, r) in row.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for (j, &ev) in e.iter().enumerate() {
                        acc += ev * w[j * v + col];
                    }
                    *r = acc;
                }
                crate::math::softmax_in_place(row, self.cfg.tau);
            }
        }
        cache.sems = sems.clone();
        sems
    }

    /// Backward from `d_sems` (`[batch, L, V]`); accumulates into `grads`.
    pub fn backward(&self, cache: &SemEncoderCache, d_sems: &[f32], grads: &mut [f32]) -> Result<()> {
        let (l, v, d) = (self.cfg.tokens, self.cfg.vocab, self.cfg.embed_dim);
        let batch = cache.batch;
        let inv_tau = 1.0 / self.cfg.tau;
        let mut d_embed = vec![0.0f32; batch * d];
        for b in 0..batch {
            let e = &cache.embed[b * d..(b + 1) * d];
            for i in 0..l {
                let s_row = &cache.sems[(b * l + i) * v..(b * l + i + 1) * v];
                let ds_row = &d_sems[(b * l + i) * v..(b * l + i + 1) * v];
                // softmax(z/tau) backward: dz = S⊙(dS − ⟨dS,S⟩)/tau
                let mut dot = 0.0f32;
                for (&s, &ds) in s_row.iter().zip(ds_row.iter()) {
                    dot += s * ds;
                }
                let proj_range = self.proj(self.trunk_len, i);
                let w = self.params[proj_range.clone()].to_vec();
                let dw = &mut grads[proj_range];
                let de = &mut d_embed[b * d..(b + 1) * d];
                for col in 0..v {
                    let dz = s_row[col] * (ds_row[col] - dot) * inv_tau;
                    if dz == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        dw[j * v + col] += e[j] * dz;
                        de[j] += w[j * v + col] * dz;
                    }
                }
            }
        }
        let trunk = Mlp::from_params(
            self.trunk.widths.clone(),
            Activation::SiLU,
            self.params[..self.trunk_len].to_vec(),
        )
        .expect("trunk params sized by construction");
        trunk.backward(&cache.mlp, &d_embed, &mut grads[..self.trunk_len], None)
    }
}

/// Argmax tokenization of `[L, V]` simplex rows; ties break to the lowest
/// index.
pub fn tokenize(sems: &[f32], tokens: usize, vocab: usize) -> Dlc {
    debug_assert_eq!(sems.len(), tokens * vocab);
    let toks = (0..tokens)
        .map(|i| argmax(&sems[i * vocab..(i + 1) * vocab]) as u32)
        .collect();
    Dlc { tokens: toks }
}

/// Encode + tokenize a batch of points.
pub fn tokenize_batch(enc: &SemEncoder, xs: &[f32], batch: usize) -> Vec<Dlc> {
    let (l, v) = (enc.cfg.tokens, enc.cfg.vocab);
    let sems = enc.encode_batch(xs, batch);
    (0..batch)
        .map(|b| tokenize(&sems[b * l * v..(b + 1) * l * v], l, v))
        .collect()
}

/// Position-wise composition under an explicit selector: `true` takes the
/// token from `a`, `false` from `b`.
pub fn compose_mask(a: &Dlc, b: &Dlc, take_a: &[bool]) -> Result<Dlc> {
    if a.len() != b.len() || take_a.len() != a.len() {
        return Err(CoreError::InvalidArgument(format!(
            "composition needs equal lengths, got {}, {}, selector {}",
            a.len(),
            b.len(),
            take_a.len()
        )));
    }
    let tokens = take_a
        .iter()
        .enumerate()
        .map(|(i, &ta)| if ta { a.tokens[i] } else { b.tokens[i] })
        .collect();
    Ok(Dlc { tokens })
}

/// Composition with an independent fair coin per position.
pub fn compose(a: &Dlc, b: &Dlc, rng: &mut Rng) -> Result<Dlc> {
    let mask: Vec<bool> = (0..a.len()).map(|_| rng.bernoulli(0.5)).collect();
    compose_mask(a, b, &mask)
}

/// Per-position embedding tables mapping a code to a conditioning vector by
/// averaging one row per position. Row `V` of each position is the
/// drop-token row.
#[derive(Debug, Clone)]
pub struct TokenEmbedder {
    pub tokens: usize,
    pub vocab: usize,
    pub dim: usize,
    params: Vec<f32>,
    layout: ParamLayout,
}

/// Condition argument for [`TokenEmbedder::embed`]: a code, or the drop
/// sentinel standing in for "no condition".
#[derive(Debug, Clone, Copy)]
pub enum CodeCond<'a> {
    Code(&'a Dlc),
    Dropped,
}

impl TokenEmbedder {
    pub fn new(tokens: usize, vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut layout = ParamLayout::default();
        layout.push("token_tables", vec![tokens, vocab + 1, dim]);
        let mut params = vec![0.0f32; tokens * (vocab + 1) * dim];
        crate::nn::init_normal(&mut params, 1.0 / libm::sqrtf(dim as f32), rng);
        TokenEmbedder {
            tokens,
            vocab,
            dim,
            params,
            layout,
        }
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn row(&self, position: usize, token: usize) -> &[f32] {
        let start = (position * (self.vocab + 1) + token) * self.dim;
        &self.params[start..start + self.dim]
    }

    /// Mean over positions of the selected rows; the drop sentinel averages
    /// the per-position drop rows.
    pub fn embed(&self, cond: CodeCond<'_>, out: &mut [f32]) -> Result<()> {
        debug_assert_eq!(out.len(), self.dim);
        if let CodeCond::Code(code) = cond {
            if code.len() != self.tokens {
                return Err(CoreError::InvalidArgument(format!(
                    "code length {} does not match embedder positions {}",
                    code.len(),
                    self.tokens
                )));
            }
            if let Some(&t) = code.tokens().iter().find(|&&t| t as usize >= self.vocab) {
                return Err(CoreError::InvalidArgument(format!(
                    "token {t} out of vocabulary {}",
                    self.vocab
                )));
            }
        }
        out.fill(0.0);
        let inv_l = 1.0 / self.tokens as f32;
        for i in 0..self.tokens {
            let token = match cond {
                CodeCond::Code(code) => code.tokens()[i] as usize,
                CodeCond::Dropped => self.vocab,
            };
            for (o, &e) in out.iter_mut().zip(self.row(i, token).iter()) {
                *o += e * inv_l;
            }
        }
        Ok(())
    }

    /// Scatter the gradient of an embedded condition back into the tables.
    pub fn accumulate_grad(&self, cond: CodeCond<'_>, d_cond: &[f32], grads: &mut [f32]) {
        let inv_l = 1.0 / self.tokens as f32;
        for i in 0..self.tokens {
            let token = match cond {
                CodeCond::Code(code) => code.tokens()[i] as usize,
                CodeCond::Dropped => self.vocab,
            };
            let start = (i * (self.vocab + 1) + token) * self.dim;
            for (g, &d) in grads[start..start + self.dim].iter_mut().zip(d_cond.iter()) {
                *g += d * inv_l;
            }
        }
    }
}

/// Budget for the reconstruction-trained encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncTrainConfig {
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub weight_decay: f32,
}

impl Default for EncTrainConfig {
    fn default() -> Self {
        EncTrainConfig {
            train_steps: 2000,
            batch: 128,
            lr: 2e-3,
            weight_decay: 0.0,
        }
    }
}

/// Jointly trains encoder and decoder to minimize
/// `‖dec(concat(S_1..S_L)) − x‖²` with soft simplexes (no hard argmax on the
/// training path). Returns the loss trace; a non-finite loss aborts with a
/// training error.
pub fn train_encoder(
    enc: &mut SemEncoder,
    decoder: &mut Mlp,
    xs: &[f32],
    cfg: &EncTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f32>> {
    let n = xs.len() / 2;
    if n == 0 {
        return Err(CoreError::InvalidArgument("empty training set".into()));
    }
    let (l, v) = (enc.cfg.tokens, enc.cfg.vocab);
    if decoder.arch().input_dim() != l * v || decoder.arch().output_dim() != 2 {
        return Err(CoreError::ShapeMismatch {
            expected: format!("decoder {}->2", l * v),
            got: format!(
                "{}->{}",
                decoder.arch().input_dim(),
                decoder.arch().output_dim()
            ),
        });
    }
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut enc_opt = AdamWState::new(enc.params().len(), opt_cfg);
    let mut dec_opt = AdamWState::new(decoder.params().len(), opt_cfg);
    let mut trace = Vec::with_capacity(cfg.train_steps);

    let mut x0 = vec![0.0f32; cfg.batch * 2];
    let mut enc_grads = vec![0.0f32; enc.params().len()];
    let mut dec_grads = vec![0.0f32; decoder.params().len()];
    for _ in 0..cfg.train_steps {
        for b in 0..cfg.batch {
            let i = rng.below(n);
            x0[b * 2..(b + 1) * 2].copy_from_slice(&xs[i * 2..(i + 1) * 2]);
        }
        let mut enc_cache = SemEncoderCache::default();
        let sems = enc.forward_train(&x0, cfg.batch, &mut enc_cache);
        let mut dec_cache = MlpCache::default();
        let recon = decoder.forward_train(&sems, cfg.batch, &mut dec_cache);

        let mut loss = 0.0f64;
        let scale = 2.0 / cfg.batch as f32;
        let d_recon: Vec<f32> = recon
            .iter()
            .zip(x0.iter())
            .map(|(&r, &x)| {
                let d = r - x;
                loss += (d as f64) * (d as f64);
                scale * d
            })
            .collect();
        let loss = (loss / cfg.batch as f64) as f32;
        if !loss.is_finite() {
            return Err(CoreError::Training("encoder loss diverged".to_string()));
        }
        trace.push(loss);

        enc_grads.fill(0.0);
        dec_grads.fill(0.0);
        let mut d_sems = vec![0.0f32; sems.len()];
        decoder.backward(&dec_cache, &d_recon, &mut dec_grads, Some(&mut d_sems))?;
        enc.backward(&enc_cache, &d_sems, &mut enc_grads)?;

        let enc_layout = enc.layout().clone();
        adamw_step(&mut enc_opt, enc.params_mut(), &enc_grads, &enc_layout)?;
        let dec_layout = decoder.layout();
        adamw_step(&mut dec_opt, decoder.params_mut(), &dec_grads, &dec_layout)?;
    }
    Ok(trace)
}

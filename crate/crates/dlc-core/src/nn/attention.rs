//! Pre-LN self-attention blocks (bidirectional, no causal mask).
//!
//! The stack is an architecture description plus free functions over a flat
//! parameter slice, so it can be embedded in larger models that own a single
//! parameter vector. Sequences are short here (a code plus a small prompt),
//! so the per-pair attention loops stay cheap.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::Real;
use crate::nn::kernels::{
    activation_backward, activation_forward, layer_norm_backward, layer_norm_forward,
    linear_backward, linear_forward, softmax_rows, softmax_rows_backward,
};
use crate::nn::{Activation, ParamLayout};

#[derive(Debug, Clone, Copy)]
pub struct AttentionStack {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl AttentionStack {
    pub fn new(width: usize, heads: usize, blocks: usize) -> Self {
        assert!(width % heads == 0, "width must divide into heads");
        AttentionStack {
            width,
            heads,
            blocks,
            mlp_hidden: 4 * width,
        }
    }

    fn offsets(&self, block: usize) -> BlockOffsets {
        let k = self.width;
        let h = self.mlp_hidden;
        let block_size = 2 * k + 4 * (k * k + k) + 2 * k + (k * h + h) + (h * k + k);
        let mut at = block * block_size;
        let mut take = |n: usize| {
            let off = at;
            at += n;
            off
        };
        BlockOffsets {
            ln1_g: take(k),
            ln1_b: take(k),
            wq: take(k * k),
            bq: take(k),
            wk: take(k * k),
            bk: take(k),
            wv: take(k * k),
            bv: take(k),
            wo: take(k * k),
            bo: take(k),
            ln2_g: take(k),
            ln2_b: take(k),
            w1: take(k * h),
            b1: take(h),
            w2: take(h * k),
            b2: take(k),
            end: at,
        }
    }

    pub fn param_count(&self) -> usize {
        if self.blocks == 0 {
            0
        } else {
            self.offsets(self.blocks - 1).end
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let k = self.width;
        let h = self.mlp_hidden;
        let mut layout = ParamLayout::default();
        for b in 0..self.blocks {
            layout.push(format!("block{b}.ln1.gamma"), vec![k]);
            layout.push(format!("block{b}.ln1.beta"), vec![k]);
            layout.push(format!("block{b}.attn.wq"), vec![k, k]);
            layout.push(format!("block{b}.attn.bq"), vec![k]);
            layout.push(format!("block{b}.attn.wk"), vec![k, k]);
            layout.push(format!("block{b}.attn.bk"), vec![k]);
            layout.push(format!("block{b}.attn.wv"), vec![k, k]);
            layout.push(format!("block{b}.attn.bv"), vec![k]);
            layout.push(format!("block{b}.attn.wo"), vec![k, k]);
            layout.push(format!("block{b}.attn.bo"), vec![k]);
            layout.push(format!("block{b}.ln2.gamma"), vec![k]);
            layout.push(format!("block{b}.ln2.beta"), vec![k]);
            layout.push(format!("block{b}.mlp.w1"), vec![k, h]);
            layout.push(format!("block{b}.mlp.b1"), vec![h]);
            layout.push(format!("block{b}.mlp.w2"), vec![h, k]);
            layout.push(format!("block{b}.mlp.b2"), vec![k]);
        }
        layout
    }

    /// Random init: layer-norm gains at 1, projections N(0, sqrt(2/width)).
    pub fn init_params(&self, params: &mut [f32], rng: &mut crate::rng::Rng) {
        debug_assert_eq!(params.len(), self.param_count());
        let k = self.width;
        let h = self.mlp_hidden;
        for b in 0..self.blocks {
            let off = self.offsets(b);
            params[off.ln1_g..off.ln1_g + k].fill(1.0);
            params[off.ln2_g..off.ln2_g + k].fill(1.0);
            let wscale = libm::sqrtf(2.0 / k as f32);
            for range in [
                off.wq..off.wq + k * k,
                off.wk..off.wk + k * k,
                off.wv..off.wv + k * k,
                off.wo..off.wo + k * k,
            ] {
                crate::nn::init_normal(&mut params[range], wscale, rng);
            }
            crate::nn::init_normal(&mut params[off.w1..off.w1 + k * h], wscale, rng);
            crate::nn::init_normal(
                &mut params[off.w2..off.w2 + h * k],
                libm::sqrtf(2.0 / h as f32),
                rng,
            );
        }
    }

    /// Multi-head attention core: builds per-(sequence, head) score rows,
    /// softmaxes them and mixes values. Returns (y, attn\_weights).
    fn attend<F: Real>(
        &self,
        q: &[F],
        key: &[F],
        v: &[F],
        n_seqs: usize,
        seq_len: usize,
    ) -> (Vec<F>, Vec<F>) {
        let k = self.width;
        let dh = k / self.heads;
        let scale = F::ONE / F::from_usize(dh).sqrt();
        let mut y = vec![F::ZERO; n_seqs * seq_len * k];
        let mut attn = vec![F::ZERO; n_seqs * self.heads * seq_len * seq_len];
        for b in 0..n_seqs {
            let base = b * seq_len;
            for h in 0..self.heads {
                let hoff = h * dh;
                let a0 = (b * self.heads + h) * seq_len * seq_len;
                for s in 0..seq_len {
                    let q_row = &q[(base + s) * k + hoff..(base + s) * k + hoff + dh];
                    let score_row = &mut attn[a0 + s * seq_len..a0 + (s + 1) * seq_len];
                    for (t, sc) in score_row.iter_mut().enumerate() {
                        let k_row = &key[(base + t) * k + hoff..(base + t) * k + hoff + dh];
                        let mut dot = F::ZERO;
                        for (qv, kv) in q_row.iter().zip(k_row.iter()) {
                            dot += *qv * *kv;
                        }
                        *sc = dot * scale;
                    }
                }
                softmax_rows(&mut attn[a0..a0 + seq_len * seq_len], seq_len, seq_len);
                for s in 0..seq_len {
                    let y_row_off = (base + s) * k + hoff;
                    for t in 0..seq_len {
                        let a = attn[a0 + s * seq_len + t];
                        if a == F::ZERO {
                            continue;
                        }
                        let v_row = &v[(base + t) * k + hoff..(base + t) * k + hoff + dh];
                        for (j, vv) in v_row.iter().enumerate() {
                            let yv = &mut y[y_row_off + j];
                            *yv += a * *vv;
                        }
                    }
                }
            }
        }
        (y, attn)
    }

    /// Forward pass over `n_seqs` sequences of `seq_len` embeddings
    /// (`x` is `[n_seqs*seq_len, width]`).
    pub fn forward_generic<F: Real>(
        &self,
        params: &[F],
        x: &[F],
        n_seqs: usize,
        seq_len: usize,
    ) -> Vec<F> {
        let k = self.width;
        let rows = n_seqs * seq_len;
        debug_assert_eq!(x.len(), rows * k);
        let mut cur = x.to_vec();
        let mut x_hat = vec![F::ZERO; rows * k];
        let mut inv_std = vec![F::ZERO; rows];
        for b in 0..self.blocks {
            let off = self.offsets(b);
            let mut u = vec![F::ZERO; rows * k];
            layer_norm_forward(
                &cur,
                &params[off.ln1_g..off.ln1_g + k],
                &params[off.ln1_b..off.ln1_b + k],
                rows,
                k,
                &mut u,
                &mut x_hat,
                &mut inv_std,
            );
            let mut q = vec![F::ZERO; rows * k];
            let mut key = vec![F::ZERO; rows * k];
            let mut v = vec![F::ZERO; rows * k];
            linear_forward(&u, &params[off.wq..off.wq + k * k], &params[off.bq..off.bq + k], rows, k, k, &mut q);
            linear_forward(&u, &params[off.wk..off.wk + k * k], &params[off.bk..off.bk + k], rows, k, k, &mut key);
            linear_forward(&u, &params[off.wv..off.wv + k * k], &params[off.bv..off.bv + k], rows, k, k, &mut v);
            let (y, _attn) = self.attend(&q, &key, &v, n_seqs, seq_len);
            let mut attn_out = vec![F::ZERO; rows * k];
            linear_forward(&y, &params[off.wo..off.wo + k * k], &params[off.bo..off.bo + k], rows, k, k, &mut attn_out);
            for (h, &xv) in attn_out.iter_mut().zip(cur.iter()) {
                *h += xv;
            }
            let h1 = attn_out;
            let mut u2 = vec![F::ZERO; rows * k];
            layer_norm_forward(
                &h1,
                &params[off.ln2_g..off.ln2_g + k],
                &params[off.ln2_b..off.ln2_b + k],
                rows,
                k,
                &mut u2,
                &mut x_hat,
                &mut inv_std,
            );
            let hid = self.mlp_hidden;
            let mut m1 = vec![F::ZERO; rows * hid];
            linear_forward(&u2, &params[off.w1..off.w1 + k * hid], &params[off.b1..off.b1 + hid], rows, k, hid, &mut m1);
            let mut a = vec![F::ZERO; rows * hid];
            activation_forward(Activation::SiLU, &m1, &mut a);
            let mut out = vec![F::ZERO; rows * k];
            linear_forward(&a, &params[off.w2..off.w2 + hid * k], &params[off.b2..off.b2 + k], rows, hid, k, &mut out);
            for (o, &hv) in out.iter_mut().zip(h1.iter()) {
                *o += hv;
            }
            cur = out;
        }
        cur
    }

    /// Training forward: same computation as [`Self::forward_generic`] at
    /// f32, retaining everything the backward pass needs.
    pub fn forward_train(
        &self,
        params: &[f32],
        x: &[f32],
        n_seqs: usize,
        seq_len: usize,
        cache: &mut AttentionStackCache,
    ) -> Vec<f32> {
        let k = self.width;
        let rows = n_seqs * seq_len;
        cache.blocks.clear();
        cache.n_seqs = n_seqs;
        cache.seq_len = seq_len;
        let mut cur = x.to_vec();
        for b in 0..self.blocks {
            let off = self.offsets(b);
            let mut c = BlockCache::sized(rows, k, self.mlp_hidden, n_seqs, self.heads, seq_len);
            c.x = cur;
            layer_norm_forward(
                &c.x,
                &params[off.ln1_g..off.ln1_g + k],
                &params[off.ln1_b..off.ln1_b + k],
                rows,
                k,
                &mut c.u,
                &mut c.x_hat1,
                &mut c.inv_std1,
            );
            linear_forward(&c.u, &params[off.wq..off.wq + k * k], &params[off.bq..off.bq + k], rows, k, k, &mut c.q);
            linear_forward(&c.u, &params[off.wk..off.wk + k * k], &params[off.bk..off.bk + k], rows, k, k, &mut c.k);
            linear_forward(&c.u, &params[off.wv..off.wv + k * k], &params[off.bv..off.bv + k], rows, k, k, &mut c.v);
            let (y, attn) = self.attend(&c.q, &c.k, &c.v, n_seqs, seq_len);
            c.y = y;
            c.attn = attn;
            let mut attn_out = vec![0.0f32; rows * k];
            linear_forward(&c.y, &params[off.wo..off.wo + k * k], &params[off.bo..off.bo + k], rows, k, k, &mut attn_out);
            for (h, &xv) in attn_out.iter_mut().zip(c.x.iter()) {
                *h += xv;
            }
            c.h1 = attn_out;
            layer_norm_forward(
                &c.h1,
                &params[off.ln2_g..off.ln2_g + k],
                &params[off.ln2_b..off.ln2_b + k],
                rows,
                k,
                &mut c.u2,
                &mut c.x_hat2,
                &mut c.inv_std2,
            );
            let hid = self.mlp_hidden;
            linear_forward(&c.u2, &params[off.w1..off.w1 + k * hid], &params[off.b1..off.b1 + hid], rows, k, hid, &mut c.m1);
            activation_forward(Activation::SiLU, &c.m1, &mut c.a);
            let mut out = vec![0.0f32; rows * k];
            linear_forward(&c.a, &params[off.w2..off.w2 + hid * k], &params[off.b2..off.b2 + k], rows, hid, k, &mut out);
            for (o, &hv) in out.iter_mut().zip(c.h1.iter()) {
                *o += hv;
            }
            cur = out.clone();
            cache.blocks.push(c);
        }
        cache.populated = true;
        cur
    }

    /// Backward pass; accumulates into `grads` (stack-local flat layout) and
    /// returns the gradient w.r.t. the stack input.
    pub fn backward(
        &self,
        params: &[f32],
        cache: &AttentionStackCache,
        d_out: &[f32],
        grads: &mut [f32],
    ) -> Vec<f32> {
        assert!(cache.populated, "attention backward without forward_train");
        let k = self.width;
        let hid = self.mlp_hidden;
        let n_seqs = cache.n_seqs;
        let seq_len = cache.seq_len;
        let rows = n_seqs * seq_len;
        let dh = k / self.heads;
        let scale = 1.0f32 / libm::sqrtf(dh as f32);

        let mut d_cur = d_out.to_vec();
        for b in (0..self.blocks).rev() {
            let off = self.offsets(b);
            let c = &cache.blocks[b];

            // out = h1 + mlp(ln2(h1))
            let mut da = vec![0.0f32; rows * hid];
            {
                let (dw2, db2) = {
                    let (dw, rest) = grads[off.w2..off.b2 + k].split_at_mut(hid * k);
                    (dw, rest)
                };
                linear_backward(&c.a, &params[off.w2..off.w2 + hid * k], &d_cur, rows, hid, k, dw2, db2, Some(&mut da));
            }
            let mut dm1 = vec![0.0f32; rows * hid];
            activation_backward(Activation::SiLU, &c.m1, &da, &mut dm1);
            let mut du2 = vec![0.0f32; rows * k];
            {
                let (dw1, db1) = {
                    let (dw, rest) = grads[off.w1..off.w1 + k * hid + hid].split_at_mut(k * hid);
                    (dw, rest)
                };
                linear_backward(&c.u2, &params[off.w1..off.w1 + k * hid], &dm1, rows, k, hid, dw1, db1, Some(&mut du2));
            }
            let mut dh1 = d_cur.clone();
            {
                let mut dx_ln = vec![0.0f32; rows * k];
                let (dg, dbeta) = {
                    let (dg, rest) = grads[off.ln2_g..off.ln2_b + k].split_at_mut(k);
                    (dg, rest)
                };
                layer_norm_backward(
                    &params[off.ln2_g..off.ln2_g + k],
                    &c.x_hat2,
                    &c.inv_std2,
                    &du2,
                    rows,
                    k,
                    dg,
                    dbeta,
                    &mut dx_ln,
                );
                for (d, &v) in dh1.iter_mut().zip(dx_ln.iter()) {
                    *d += v;
                }
            }

            // h1 = x + Wo(attend(q,k,v)) with (q,k,v) = ln1(x) projections.
            let mut dy = vec![0.0f32; rows * k];
            {
                let (dwo, dbo) = {
                    let (dw, rest) = grads[off.wo..off.bo + k].split_at_mut(k * k);
                    (dw, rest)
                };
                linear_backward(&c.y, &params[off.wo..off.wo + k * k], &dh1, rows, k, k, dwo, dbo, Some(&mut dy));
            }

            let mut dq = vec![0.0f32; rows * k];
            let mut dk = vec![0.0f32; rows * k];
            let mut dv = vec![0.0f32; rows * k];
            for s_idx in 0..n_seqs {
                let base = s_idx * seq_len;
                for h in 0..self.heads {
                    let hoff = h * dh;
                    let a0 = (s_idx * self.heads + h) * seq_len * seq_len;
                    let a_block = &c.attn[a0..a0 + seq_len * seq_len];

                    // dA[s,t] = dy[s]·v[t]; dv[t] += A[s,t]·dy[s]
                    let mut d_attn = vec![0.0f32; seq_len * seq_len];
                    for s in 0..seq_len {
                        let dy_row = &dy[(base + s) * k + hoff..(base + s) * k + hoff + dh];
                        for t in 0..seq_len {
                            let v_row = &c.v[(base + t) * k + hoff..(base + t) * k + hoff + dh];
                            let mut dot = 0.0f32;
                            for (a, b2) in dy_row.iter().zip(v_row.iter()) {
                                dot += a * b2;
                            }
                            d_attn[s * seq_len + t] = dot;
                            let a = a_block[s * seq_len + t];
                            let dv_row = &mut dv[(base + t) * k + hoff..(base + t) * k + hoff + dh];
                            for (dvv, &dyv) in dv_row.iter_mut().zip(dy_row.iter()) {
                                *dvv += a * dyv;
                            }
                        }
                    }
                    softmax_rows_backward(a_block, &mut d_attn, seq_len, seq_len);
                    // scores[s,t] = q[s]·k[t]·scale
                    for s in 0..seq_len {
                        let q_row = &c.q[(base + s) * k + hoff..(base + s) * k + hoff + dh];
                        for t in 0..seq_len {
                            let g = d_attn[s * seq_len + t] * scale;
                            if g == 0.0 {
                                continue;
                            }
                            let k_row = &c.k[(base + t) * k + hoff..(base + t) * k + hoff + dh];
                            let dq_row = &mut dq[(base + s) * k + hoff..(base + s) * k + hoff + dh];
                            for (dqv, &kv) in dq_row.iter_mut().zip(k_row.iter()) {
                                *dqv += g * kv;
                            }
                            let dk_row = &mut dk[(base + t) * k + hoff..(base + t) * k + hoff + dh];
                            for (dkv, &qv) in dk_row.iter_mut().zip(q_row.iter()) {
                                *dkv += g * qv;
                            }
                        }
                    }
                }
            }

            let mut du = vec![0.0f32; rows * k];
            {
                let mut du_part = vec![0.0f32; rows * k];
                let (dwq, dbq) = {
                    let (dw, rest) = grads[off.wq..off.bq + k].split_at_mut(k * k);
                    (dw, rest)
                };
                linear_backward(&c.u, &params[off.wq..off.wq + k * k], &dq, rows, k, k, dwq, dbq, Some(&mut du_part));
                for (d, &v) in du.iter_mut().zip(du_part.iter()) {
                    *d += v;
                }
                let (dwk, dbk) = {
                    let (dw, rest) = grads[off.wk..off.bk + k].split_at_mut(k * k);
                    (dw, rest)
                };
                linear_backward(&c.u, &params[off.wk..off.wk + k * k], &dk, rows, k, k, dwk, dbk, Some(&mut du_part));
                for (d, &v) in du.iter_mut().zip(du_part.iter()) {
                    *d += v;
                }
                let (dwv, dbv) = {
                    let (dw, rest) = grads[off.wv..off.bv + k].split_at_mut(k * k);
                    (dw, rest)
                };
                linear_backward(&c.u, &params[off.wv..off.wv + k * k], &dv, rows, k, k, dwv, dbv, Some(&mut du_part));
                for (d, &v) in du.iter_mut().zip(du_part.iter()) {
                    *d += v;
                }
            }

            let mut dx = dh1.clone();
            {
                let mut dx_ln = vec![0.0f32; rows * k];
                let (dg, dbeta) = {
                    let (dg, rest) = grads[off.ln1_g..off.ln1_b + k].split_at_mut(k);
                    (dg, rest)
                };
                layer_norm_backward(
                    &params[off.ln1_g..off.ln1_g + k],
                    &c.x_hat1,
                    &c.inv_std1,
                    &du,
                    rows,
                    k,
                    dg,
                    dbeta,
                    &mut dx_ln,
                );
                for (d, &v) in dx.iter_mut().zip(dx_ln.iter()) {
                    *d += v;
                }
            }
            d_cur = dx;
        }
        d_cur
    }
}

#[derive(Debug, Clone, Default)]
struct BlockCache {
    x: Vec<f32>,
    x_hat1: Vec<f32>,
    inv_std1: Vec<f32>,
    u: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    attn: Vec<f32>,
    y: Vec<f32>,
    h1: Vec<f32>,
    x_hat2: Vec<f32>,
    inv_std2: Vec<f32>,
    u2: Vec<f32>,
    m1: Vec<f32>,
    a: Vec<f32>,
}

impl BlockCache {
    fn sized(rows: usize, k: usize, hid: usize, n_seqs: usize, heads: usize, seq_len: usize) -> Self {
        BlockCache {
            x: Vec::new(),
            x_hat1: vec![0.0; rows * k],
            inv_std1: vec![0.0; rows],
            u: vec![0.0; rows * k],
            q: vec![0.0; rows * k],
            k: vec![0.0; rows * k],
            v: vec![0.0; rows * k],
            attn: vec![0.0; n_seqs * heads * seq_len * seq_len],
            y: Vec::new(),
            h1: Vec::new(),
            x_hat2: vec![0.0; rows * k],
            inv_std2: vec![0.0; rows],
            u2: vec![0.0; rows * k],
            m1: vec![0.0; rows * hid],
            a: vec![0.0; rows * hid],
        }
    }
}

/// Retained activations for [`AttentionStack::backward`].
#[derive(Debug, Clone, Default)]
pub struct AttentionStackCache {
    blocks: Vec<BlockCache>,
    n_seqs: usize,
    seq_len: usize,
    populated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::rng::Rng;

    #[test]
    fn forward_train_matches_generic_forward() {
        let stack = AttentionStack::new(8, 2, 2);
        let mut rng = Rng::new(3);
        let mut params = vec![0.0f32; stack.param_count()];
        stack.init_params(&mut params, &mut rng);
        let x: Vec<f32> = (0..2 * 3 * 8).map(|_| rng.standard_normal()).collect();
        let mut cache = AttentionStackCache::default();
        let a = stack.forward_train(&params, &x, 2, 3, &mut cache);
        let b = stack.forward_generic(&params, &x, 2, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let stack = AttentionStack::new(6, 2, 2);
        let mut rng = Rng::new(17);
        let mut params = vec![0.0f32; stack.param_count()];
        stack.init_params(&mut params, &mut rng);
        let n_seqs = 2;
        let seq_len = 3;
        let x: Vec<f32> = (0..n_seqs * seq_len * 6).map(|_| rng.standard_normal()).collect();
        let target: Vec<f32> = (0..x.len()).map(|_| rng.standard_normal()).collect();

        let mut cache = AttentionStackCache::default();
        let out = stack.forward_train(&params, &x, n_seqs, seq_len, &mut cache);
        let d_out: Vec<f32> = out
            .iter()
            .zip(target.iter())
            .map(|(&y, &t)| 2.0 * (y - t) / out.len() as f32)
            .collect();
        let mut grads = vec![0.0f32; params.len()];
        let _dx = stack.backward(&params, &cache, &d_out, &mut grads);

        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let t64: Vec<f64> = target.iter().map(|&v| v as f64).collect();
        let layout = stack.layout();
        let mut idx_rng = Rng::new(99);
        let indices = crate::nn::gradcheck::sample_indices(params.len(), 128, &mut idx_rng);
        let report = check_gradients(&params, &grads, &layout, &indices, 1e-3, |p| {
            let y = stack.forward_generic(p, &x64, n_seqs, seq_len);
            y.iter().zip(t64.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
        });
        assert!(
            report.passes(1e-4),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let stack = AttentionStack::new(4, 1, 1);
        let mut rng = Rng::new(23);
        let mut params = vec![0.0f32; stack.param_count()];
        stack.init_params(&mut params, &mut rng);
        let x: Vec<f32> = (0..2 * 4).map(|_| rng.standard_normal()).collect();

        let mut cache = AttentionStackCache::default();
        let out = stack.forward_train(&params, &x, 1, 2, &mut cache);
        let d_out: Vec<f32> = out.iter().map(|&y| 2.0 * y / out.len() as f32).collect();
        let mut grads = vec![0.0f32; params.len()];
        let dx = stack.backward(&params, &cache, &d_out, &mut grads);

        let p64: Vec<f64> = params.iter().map(|&v| v as f64).collect();
        let mut x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for i in 0..x.len() {
            let h = 1e-3;
            let orig = x64[i];
            x64[i] = orig + h;
            let up: f64 = {
                let y = stack.forward_generic(&p64, &x64, 1, 2);
                y.iter().map(|&v| v * v).sum::<f64>() / y.len() as f64
            };
            x64[i] = orig - h;
            let down: f64 = {
                let y = stack.forward_generic(&p64, &x64, 1, 2);
                y.iter().map(|&v| v * v).sum::<f64>() / y.len() as f64
            };
            x64[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - dx[i] as f64).abs() / fd.abs().max(dx[i].abs() as f64).max(1e-2) < 1e-4,
                "dx[{i}] = {} vs fd {fd}",
                dx[i]
            );
        }
    }
}

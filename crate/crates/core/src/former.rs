//! Attention branch.
//!
//! Sequences become `V * S` tokens (joint × temporal segment), are embedded,
//! receive a learned positional table, and pass through post-norm encoder
//! blocks `F = Norm(X + Attention(X W_Q, X W_K, X W_V) W_O)` followed by
//! `Norm(F + W_2 relu(W_1 F))`. Token features are mean-pooled into a linear head.

use ndarray::{s, Array1, Array2, Array3, Array5, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{he_uniform, relu, Network};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    pub heads: usize,
}

impl AttentionParams {
    fn check(&self, d: usize) -> Result<()> {
        let dh = self.w_q.ncols();
        let ok = self.w_q.nrows() == d
            && self.w_k.dim() == (d, dh)
            && self.w_v.dim() == (d, dh)
            && self.w_o.dim() == (dh, d)
            && self.norm_scale.len() == d
            && self.norm_shift.len() == d
            && self.heads >= 1
            && dh % self.heads == 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "attention parameters do not chain for d={d} (W_Q {:?}, W_O {:?}, {} heads)",
                self.w_q.dim(),
                self.w_o.dim(),
                self.heads
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
}

impl FeedForward {
    fn check(&self, d: usize) -> Result<()> {
        let ff = self.w1.ncols();
        if self.w1.nrows() != d
            || self.w2.dim() != (ff, d)
            || self.norm_scale.len() != d
            || self.norm_shift.len() != d
        {
            return Err(Error::Dimension(format!(
                "feedforward weights {:?}/{:?} do not chain for d={d}",
                self.w1.dim(),
                self.w2.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormerBlock {
    pub attn: AttentionParams,
    pub ff: FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormerConfig {
    pub d_model: usize,
    /// Total width of the query/key/value projections across heads.
    pub d_head: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub depth: usize,
    pub segments: usize,
}

impl Default for FormerConfig {
    fn default() -> Self {
        FormerConfig {
            d_model: 64,
            d_head: 64,
            heads: 1,
            d_ff: 128,
            depth: 2,
            segments: 4,
        }
    }
}

/// Max-shifted softmax of each row, in place.
pub fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// Tokens `[B, V*S, C]` from `[B, M, T, V, C]`: token `v * S + s` holds the
/// mean of joint `v` over the frames of segment `s` and over all persons.
/// Segment `s` covers frames `floor(s*T/S) .. floor((s+1)*T/S)`.
pub fn tokenize(x: &Array5<f64>, segments: usize) -> Result<Array3<f64>> {
    let (b, m, t, v, c) = x.dim();
    if segments == 0 || segments > t {
        return Err(Error::Config(format!(
            "cannot split {t} frames into {segments} segments"
        )));
    }
    let mut out = Array3::<f64>::zeros((b, v * segments, c));
    for seg in 0..segments {
        let lo = seg * t / segments;
        let hi = (seg + 1) * t / segments;
        let count = ((hi - lo) * m) as f64;
        let sums = x
            .slice(s![.., .., lo..hi, .., ..])
            .sum_axis(Axis(1))
            .sum_axis(Axis(1));
        for bi in 0..b {
            for vi in 0..v {
                for ci in 0..c {
                    out[[bi, vi * segments + seg, ci]] = sums[[bi, vi, ci]] / count;
                }
            }
        }
    }
    Ok(out)
}

/// Add the learned position table to every sample's tokens.
pub fn positional_encode(tokens: &Array3<f64>, table: &Array2<f64>) -> Result<Array3<f64>> {
    let (_, n, d) = tokens.dim();
    if table.dim() != (n, d) {
        return Err(Error::Dimension(format!(
            "position table {:?} does not match {n} tokens of width {d}",
            table.dim()
        )));
    }
    Ok(tokens + &table.view().insert_axis(Axis(0)))
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn norm_forward(x: &Array2<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::<f64>::zeros((n, d));
    let mut inv_std = Array1::<f64>::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            xhat[[i, j]] = (row[j] - mean) * inv;
        }
    }
    let y = &xhat * &scale.view().insert_axis(Axis(0)) + &shift.view().insert_axis(Axis(0));
    (y, NormCache { xhat, inv_std })
}

/// Per-token normalization: zero mean, unit variance (epsilon 1e-5), then
/// per-feature `scale` and `shift`.
pub fn token_norm(x: &Array2<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> Array2<f64> {
    norm_forward(x, scale, shift).0
}

fn norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    scale: &Array1<f64>,
    dscale: &mut Array1<f64>,
    dshift: &mut Array1<f64>,
) -> Array2<f64> {
    let (n, d) = dy.dim();
    *dscale += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dshift += &dy.sum_axis(Axis(0));
    let mut dx = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let dxhat: Vec<f64> = (0..d).map(|j| dy[[i, j]] * scale[j]).collect();
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = (0..d).map(|j| dxhat[j] * cache.xhat[[i, j]]).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[[i, j]] = cache.inv_std[i] * (dxhat[j] - mean_d - cache.xhat[[i, j]] * mean_dx);
        }
    }
    dx
}

struct AttnCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    norm: NormCache,
}

fn head_scale(p: &AttentionParams) -> f64 {
    1.0 / ((p.w_q.ncols() / p.heads) as f64).sqrt()
}

fn attention_one(x: &Array2<f64>, p: &AttentionParams) -> (Array2<f64>, AttnCache) {
    let q = x.dot(&p.w_q);
    let k = x.dot(&p.w_k);
    let v = x.dot(&p.w_v);
    let dh = p.w_q.ncols() / p.heads;
    let scale = head_scale(p);
    let mut ctx = Array2::<f64>::zeros(q.raw_dim());
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut w = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows_inplace(&mut w);
        ctx.slice_mut(cols).assign(&w.dot(&v.slice(cols)));
        weights.push(w);
    }
    let resid = x + &ctx.dot(&p.w_o);
    let (out, norm) = norm_forward(&resid, &p.norm_scale, &p.norm_shift);
    (
        out,
        AttnCache {
            x: x.clone(),
            q,
            k,
            v,
            weights,
            ctx,
            norm,
        },
    )
}

fn attention_backward(
    dout: &Array2<f64>,
    cache: &AttnCache,
    p: &AttentionParams,
    g: &mut AttentionParams,
) -> Array2<f64> {
    let dresid = norm_backward(dout, &cache.norm, &p.norm_scale, &mut g.norm_scale, &mut g.norm_shift);
    g.w_o += &cache.ctx.t().dot(&dresid);
    let dctx = dresid.dot(&p.w_o.t());
    let dh = p.w_q.ncols() / p.heads;
    let scale = head_scale(p);
    let mut dq = Array2::<f64>::zeros(cache.q.raw_dim());
    let mut dk = Array2::<f64>::zeros(cache.k.raw_dim());
    let mut dv = Array2::<f64>::zeros(cache.v.raw_dim());
    for h in 0..p.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let w = &cache.weights[h];
        let dctx_h = dctx.slice(cols);
        let dw = dctx_h.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&w.t().dot(&dctx_h));
        let mut dscore = dw.clone();
        for (i, mut row) in dscore.rows_mut().into_iter().enumerate() {
            let dot: f64 = dw.row(i).dot(&w.row(i));
            row.zip_mut_with(&w.row(i), |d, &a| *d = a * (*d - dot) * scale);
        }
        dq.slice_mut(cols).assign(&dscore.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscore.t().dot(&cache.q.slice(cols)));
    }
    g.w_q += &cache.x.t().dot(&dq);
    g.w_k += &cache.x.t().dot(&dk);
    g.w_v += &cache.x.t().dot(&dv);
    dresid + dq.dot(&p.w_q.t()) + dk.dot(&p.w_k.t()) + dv.dot(&p.w_v.t())
}

/// Attention weights of every head for one sample's tokens `[N, d]`.
pub fn attention_weights(x: ArrayView2<'_, f64>, p: &AttentionParams) -> Result<Vec<Array2<f64>>> {
    p.check(x.ncols())?;
    Ok(attention_one(&x.to_owned(), p).1.weights)
}

/// `Norm(X + Attention(X W_Q, X W_K, X W_V) W_O)` on `[B, N, d]`.
pub fn attention_block_forward(x: &Array3<f64>, p: &AttentionParams) -> Result<Array3<f64>> {
    p.check(x.dim().2)?;
    let mut out = Array3::zeros(x.raw_dim());
    for (b, xb) in x.outer_iter().enumerate() {
        let (f, _) = attention_one(&xb.to_owned(), p);
        out.index_axis_mut(Axis(0), b).assign(&f);
    }
    Ok(out)
}

struct FfCache {
    f: Array2<f64>,
    hidden_pre: Array2<f64>,
    norm: NormCache,
}

fn ff_one(f: &Array2<f64>, ff: &FeedForward) -> (Array2<f64>, FfCache) {
    let hidden_pre = f.dot(&ff.w1);
    let resid = f + &hidden_pre.mapv(relu).dot(&ff.w2);
    let (out, norm) = norm_forward(&resid, &ff.norm_scale, &ff.norm_shift);
    (
        out,
        FfCache {
            f: f.clone(),
            hidden_pre,
            norm,
        },
    )
}

fn ff_backward(dout: &Array2<f64>, cache: &FfCache, ff: &FeedForward, g: &mut FeedForward) -> Array2<f64> {
    let dresid = norm_backward(dout, &cache.norm, &ff.norm_scale, &mut g.norm_scale, &mut g.norm_shift);
    g.w2 += &cache.hidden_pre.mapv(relu).t().dot(&dresid);
    let mut dhidden = dresid.dot(&ff.w2.t());
    dhidden.zip_mut_with(&cache.hidden_pre, |d, &h| {
        if h <= 0.0 {
            *d = 0.0
        }
    });
    g.w1 += &cache.f.t().dot(&dhidden);
    dresid + dhidden.dot(&ff.w1.t())
}

/// `Norm(F + W_2 relu(W_1 F))` on `[B, N, d]`.
pub fn feedforward_block(f: &Array3<f64>, ff: &FeedForward) -> Result<Array3<f64>> {
    ff.check(f.dim().2)?;
    let mut out = Array3::zeros(f.raw_dim());
    for (b, fb) in f.outer_iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(&ff_one(&fb.to_owned(), ff).0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormerModel {
    config: FormerConfig,
    in_channels: usize,
    num_joints: usize,
    pub embed_w: Array2<f64>,
    pub pos_table: Array2<f64>,
    pub blocks: Vec<FormerBlock>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

struct SampleCache {
    tokens: Array2<f64>,
    blocks: Vec<(AttnCache, FfCache)>,
    pooled: Array1<f64>,
}

pub struct FormerCache {
    samples: Vec<SampleCache>,
}

impl FormerModel {
    pub fn new<R: Rng + ?Sized>(
        num_joints: usize,
        in_channels: usize,
        num_classes: usize,
        config: FormerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = &config;
        if [c.d_model, c.d_head, c.heads, c.d_ff, c.depth, c.segments, num_joints, in_channels]
            .contains(&0)
        {
            return Err(Error::Config("attention dimensions must be positive".into()));
        }
        if c.d_head % c.heads != 0 {
            return Err(Error::Config(format!(
                "d_head {} not divisible by {} heads",
                c.d_head, c.heads
            )));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let d = c.d_model;
        let blocks = (0..c.depth)
            .map(|_| FormerBlock {
                attn: AttentionParams {
                    w_q: he_uniform((d, c.d_head), d, rng),
                    w_k: he_uniform((d, c.d_head), d, rng),
                    w_v: he_uniform((d, c.d_head), d, rng),
                    w_o: he_uniform((c.d_head, d), c.d_head, rng),
                    norm_scale: Array1::ones(d),
                    norm_shift: Array1::zeros(d),
                    heads: c.heads,
                },
                ff: FeedForward {
                    w1: he_uniform((d, c.d_ff), d, rng),
                    w2: he_uniform((c.d_ff, d), c.d_ff, rng),
                    norm_scale: Array1::ones(d),
                    norm_shift: Array1::zeros(d),
                },
            })
            .collect();
        Ok(FormerModel {
            embed_w: he_uniform((in_channels, d), in_channels, rng),
            pos_table: Array2::zeros((num_joints * c.segments, d)),
            head_w: he_uniform((d, num_classes), d, rng),
            head_b: Array1::zeros(num_classes),
            blocks,
            in_channels,
            num_joints,
            config,
        })
    }

    pub fn config(&self) -> &FormerConfig {
        &self.config
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    fn check_input(&self, x: &Array5<f64>) -> Result<()> {
        let (b, m, _, v, c) = x.dim();
        if b == 0 || m == 0 {
            return Err(Error::Dimension("empty input batch".into()));
        }
        if v != self.num_joints || c != self.in_channels {
            return Err(Error::Dimension(format!(
                "input has V={v} C={c}, model expects V={} C={}",
                self.num_joints, self.in_channels
            )));
        }
        Ok(())
    }
}

impl Network for FormerModel {
    type Cache = FormerCache;

    fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn forward(&self, x: &Array5<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    fn forward_train(&self, x: &Array5<f64>) -> Result<(Array2<f64>, FormerCache)> {
        self.check_input(x)?;
        let tokens = tokenize(x, self.config.segments)?;
        let b = tokens.dim().0;
        let mut logits = Array2::zeros((b, self.num_classes()));
        let mut samples = Vec::with_capacity(b);
        for (bi, tok) in tokens.outer_iter().enumerate() {
            let tok = tok.to_owned();
            let mut h = tok.dot(&self.embed_w) + &self.pos_table;
            let mut caches = Vec::with_capacity(self.blocks.len());
            for block in &self.blocks {
                let (f, ac) = attention_one(&h, &block.attn);
                let (out, fc) = ff_one(&f, &block.ff);
                caches.push((ac, fc));
                h = out;
            }
            let pooled = h.mean_axis(Axis(0)).unwrap();
            logits
                .row_mut(bi)
                .assign(&(pooled.dot(&self.head_w) + &self.head_b));
            samples.push(SampleCache {
                tokens: tok,
                blocks: caches,
                pooled,
            });
        }
        Ok((logits, FormerCache { samples }))
    }

    fn backward(&self, cache: &FormerCache, dlogits: &Array2<f64>) -> Self {
        let mut g = self.zeros_like();
        for (bi, sc) in cache.samples.iter().enumerate() {
            let dl = dlogits.row(bi);
            g.head_b += &dl;
            g.head_w += &sc
                .pooled
                .view()
                .insert_axis(Axis(1))
                .dot(&dl.insert_axis(Axis(0)));
            let dpooled = self.head_w.dot(&dl);
            let n = self.pos_table.nrows();
            let mut dh = Array2::from_shape_fn((n, self.config.d_model), |(_, j)| {
                dpooled[j] / n as f64
            });
            for (li, (ac, fc)) in sc.blocks.iter().enumerate().rev() {
                let block = &self.blocks[li];
                let gb = &mut g.blocks[li];
                let df = ff_backward(&dh, fc, &block.ff, &mut gb.ff);
                dh = attention_backward(&df, ac, &block.attn, &mut gb.attn);
            }
            g.pos_table += &dh;
            g.embed_w += &sc.tokens.t().dot(&dh);
        }
        g
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let mut v = |name: &str, a: &dyn TensorRef| f(name, a.shape_ref(), a.values());
        v("embed.weight", &self.embed_w);
        v("pos_table", &self.pos_table);
        for (i, b) in self.blocks.iter().enumerate() {
            v(&format!("block{i}.attn.w_q"), &b.attn.w_q);
            v(&format!("block{i}.attn.w_k"), &b.attn.w_k);
            v(&format!("block{i}.attn.w_v"), &b.attn.w_v);
            v(&format!("block{i}.attn.w_o"), &b.attn.w_o);
            v(&format!("block{i}.attn.norm_scale"), &b.attn.norm_scale);
            v(&format!("block{i}.attn.norm_shift"), &b.attn.norm_shift);
            v(&format!("block{i}.ff.w1"), &b.ff.w1);
            v(&format!("block{i}.ff.w2"), &b.ff.w2);
            v(&format!("block{i}.ff.norm_scale"), &b.ff.norm_scale);
            v(&format!("block{i}.ff.norm_shift"), &b.ff.norm_shift);
        }
        v("head.weight", &self.head_w);
        v("head.bias", &self.head_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("embed.weight", self.embed_w.as_slice_mut().unwrap());
        f("pos_table", self.pos_table.as_slice_mut().unwrap());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{i}.attn.w_q"), b.attn.w_q.as_slice_mut().unwrap());
            f(&format!("block{i}.attn.w_k"), b.attn.w_k.as_slice_mut().unwrap());
            f(&format!("block{i}.attn.w_v"), b.attn.w_v.as_slice_mut().unwrap());
            f(&format!("block{i}.attn.w_o"), b.attn.w_o.as_slice_mut().unwrap());
            f(&format!("block{i}.attn.norm_scale"), b.attn.norm_scale.as_slice_mut().unwrap());
            f(&format!("block{i}.attn.norm_shift"), b.attn.norm_shift.as_slice_mut().unwrap());
            f(&format!("block{i}.ff.w1"), b.ff.w1.as_slice_mut().unwrap());
            f(&format!("block{i}.ff.w2"), b.ff.w2.as_slice_mut().unwrap());
            f(&format!("block{i}.ff.norm_scale"), b.ff.norm_scale.as_slice_mut().unwrap());
            f(&format!("block{i}.ff.norm_shift"), b.ff.norm_shift.as_slice_mut().unwrap());
        }
        f("head.weight", self.head_w.as_slice_mut().unwrap());
        f("head.bias", self.head_b.as_slice_mut().unwrap());
    }
}

trait TensorRef {
    fn shape_ref(&self) -> &[usize];
    fn values(&self) -> &[f64];
}

impl<D: ndarray::Dimension> TensorRef for ndarray::Array<f64, D> {
    fn shape_ref(&self) -> &[usize] {
        self.shape()
    }

    fn values(&self) -> &[f64] {
        self.as_slice().expect("parameters are contiguous")
    }
}

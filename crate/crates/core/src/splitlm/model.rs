use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use crate::error::{Error, Result};
use crate::mathcore::{gaussian_sample, Matrix, RngStream};
use crate::neuralnet::{softmax_in_place, Parameters};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Activations crossing the split: one row per token, `d_mid` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateTensor(pub Matrix);

impl IntermediateTensor {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        LayerNorm {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm {
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
        }
    }
}

/// One pre-norm transformer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln1: LayerNorm,
    /// Fused query/key/value projection, `d_mid × 3·d_mid`.
    pub w_qkv: Matrix,
    pub b_qkv: Vec<f64>,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
    pub ln2: LayerNorm,
    pub w_ff1: Matrix,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Matrix,
    pub b_ff2: Vec<f64>,
}

impl Block {
    fn zeros(cfg: &LmConfig) -> Self {
        let d = cfg.d_mid;
        Block {
            ln1: LayerNorm::zeros(d),
            w_qkv: Matrix::zeros(d, 3 * d),
            b_qkv: vec![0.0; 3 * d],
            w_o: Matrix::zeros(d, d),
            b_o: vec![0.0; d],
            ln2: LayerNorm::zeros(d),
            w_ff1: Matrix::zeros(d, cfg.d_ff),
            b_ff1: vec![0.0; cfg.d_ff],
            w_ff2: Matrix::zeros(cfg.d_ff, d),
            b_ff2: vec![0.0; d],
        }
    }

    fn init(cfg: &LmConfig, rng: &mut RngStream) -> Result<Self> {
        let d = cfg.d_mid;
        let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
        Ok(Block {
            ln1: LayerNorm::new(d),
            w_qkv: normal_matrix(d, 3 * d, INIT_STD, rng)?,
            b_qkv: vec![0.0; 3 * d],
            w_o: normal_matrix(d, d, resid_std, rng)?,
            b_o: vec![0.0; d],
            ln2: LayerNorm::new(d),
            w_ff1: normal_matrix(d, cfg.d_ff, INIT_STD, rng)?,
            b_ff1: vec![0.0; cfg.d_ff],
            w_ff2: normal_matrix(cfg.d_ff, d, resid_std, rng)?,
            b_ff2: vec![0.0; d],
        })
    }

    fn tensors(&self) -> [&[f64]; 12] {
        [
            &self.ln1.gamma,
            &self.ln1.beta,
            self.w_qkv.data(),
            &self.b_qkv,
            self.w_o.data(),
            &self.b_o,
            &self.ln2.gamma,
            &self.ln2.beta,
            self.w_ff1.data(),
            &self.b_ff1,
            self.w_ff2.data(),
            &self.b_ff2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            &mut self.ln1.gamma,
            &mut self.ln1.beta,
            self.w_qkv.data_mut(),
            &mut self.b_qkv,
            self.w_o.data_mut(),
            &mut self.b_o,
            &mut self.ln2.gamma,
            &mut self.ln2.beta,
            self.w_ff1.data_mut(),
            &mut self.b_ff1,
            self.w_ff2.data_mut(),
            &mut self.b_ff2,
        ]
    }
}

/// Weights of the whole model. Blocks `0..p` run on the device, `p..L` on
/// the edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub config: LmConfig,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Result<Matrix> {
    let data = (0..rows * cols)
        .map(|_| gaussian_sample(rng, 0.0, std))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(rows, cols, data)
}

impl LmParams {
    pub fn init(config: LmConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let d = config.d_mid;
        let tok_emb = normal_matrix(config.vocab, d, INIT_STD, rng)?;
        let pos_emb = normal_matrix(config.d_in, d, INIT_STD, rng)?;
        let blocks = (0..config.n_layers)
            .map(|_| Block::init(&config, rng))
            .collect::<Result<Vec<_>>>()?;
        let w_out = normal_matrix(d, config.vocab, INIT_STD, rng)?;
        Ok(LmParams {
            config,
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(d),
            w_out,
            b_out: vec![0.0; config.vocab],
        })
    }

    pub fn zeros(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_mid;
        Ok(LmParams {
            config,
            tok_emb: Matrix::zeros(config.vocab, d),
            pos_emb: Matrix::zeros(config.d_in, d),
            blocks: (0..config.n_layers)
                .map(|_| Block::zeros(&config))
                .collect(),
            ln_f: LayerNorm::zeros(d),
            w_out: Matrix::zeros(d, config.vocab),
            b_out: vec![0.0; config.vocab],
        })
    }

    /// Checks every tensor shape against the config and that all entries are
    /// finite.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.config;
        cfg.validate()?;
        let reference = LmParams::zeros(cfg)?;
        let ok_count = self.blocks.len() == cfg.n_layers;
        let shapes_ok = ok_count
            && self.tok_emb.shape() == reference.tok_emb.shape()
            && self.pos_emb.shape() == reference.pos_emb.shape()
            && self.w_out.shape() == reference.w_out.shape()
            && self.blocks.iter().zip(&reference.blocks).all(|(a, b)| {
                a.w_qkv.shape() == b.w_qkv.shape()
                    && a.w_ff1.shape() == b.w_ff1.shape()
                    && a.w_ff2.shape() == b.w_ff2.shape()
                    && a.w_o.shape() == b.w_o.shape()
            })
            && self
                .tensors()
                .iter()
                .zip(reference.tensors())
                .all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(Error::shape("model tensors do not match the stored config"));
        }
        if !crate::neuralnet::all_finite(self) {
            return Err(Error::InvalidInput(
                "model weights contain non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }
}

impl Parameters for LmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.tok_emb.data(), self.pos_emb.data()];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([
            &self.ln_f.gamma[..],
            &self.ln_f.beta[..],
            self.w_out.data(),
            &self.b_out[..],
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.tok_emb.data_mut(), self.pos_emb.data_mut()];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.ln_f.gamma);
        out.push(&mut self.ln_f.beta);
        out.push(self.w_out.data_mut());
        out.push(&mut self.b_out);
        out
    }

    fn zeros_like(&self) -> Self {
        LmParams::zeros(self.config).expect("config was validated at construction")
    }
}

// ---------------------------------------------------------------------------
// Forward pieces

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, ln: &LayerNorm) -> (Matrix, LnCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        let xh = xhat.row(r).to_vec();
        for ((o, &h), (&g, &b)) in out
            .row_mut(r)
            .iter_mut()
            .zip(&xh)
            .zip(ln.gamma.iter().zip(&ln.beta))
        {
            *o = g * h + b;
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Returns dx and accumulates dγ, dβ.
fn layer_norm_backward(
    dy: &Matrix,
    cache: &LnCache,
    ln: &LayerNorm,
    grad: &mut LayerNorm,
) -> Matrix {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            grad.gamma[j] += dyr[j] * xh[j];
            grad.beta[j] += dyr[j];
            dxhat[j] = dyr[j] * ln.gamma[j];
        }
        let sum = dxhat.iter().sum::<f64>();
        let dot = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        let k = cache.rstd[r] / d as f64;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = k * (d as f64 * dxhat[j] - sum - xh[j] * dot);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    out.add_row_broadcast(b)?;
    Ok(out)
}

fn add_col_sums(acc: &mut [f64], m: &Matrix) {
    for r in 0..m.rows() {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
}

/// Copies the `t × w` sub-block starting at (`r0`, `c0`).
fn slice_block(m: &Matrix, r0: usize, c0: usize, t: usize, w: usize) -> Matrix {
    let mut out = Matrix::zeros(t, w);
    for i in 0..t {
        out.row_mut(i).copy_from_slice(&m.row(r0 + i)[c0..c0 + w]);
    }
    out
}

fn write_block(dst: &mut Matrix, r0: usize, c0: usize, src: &Matrix) {
    let w = src.cols();
    for i in 0..src.rows() {
        dst.row_mut(r0 + i)[c0..c0 + w].copy_from_slice(src.row(i));
    }
}

struct BlockCache {
    ln1: LnCache,
    a: Matrix,
    qkv: Matrix,
    probs: Vec<Matrix>,
    attn: Matrix,
    ln2: LnCache,
    c: Matrix,
    f1: Matrix,
    g: Matrix,
}

/// Causal multi-head attention over `x`, which stacks sequences of `seq_len`
/// rows each.
fn block_forward(
    blk: &Block,
    cfg: &LmConfig,
    x: &Matrix,
    seq_len: usize,
    keep: bool,
) -> Result<(Matrix, Option<BlockCache>)> {
    let d = cfg.d_mid;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let n_seq = x.rows() / seq_len;
    let (a, ln1) = layer_norm(x, &blk.ln1);
    let qkv = affine(&a, &blk.w_qkv, &blk.b_qkv)?;
    let mut attn = Matrix::zeros(x.rows(), d);
    let mut probs = Vec::with_capacity(if keep { n_seq * cfg.heads } else { 0 });
    for s in 0..n_seq {
        let r0 = s * seq_len;
        for h in 0..cfg.heads {
            let q = slice_block(&qkv, r0, h * hd, seq_len, hd);
            let k = slice_block(&qkv, r0, d + h * hd, seq_len, hd);
            let v = slice_block(&qkv, r0, 2 * d + h * hd, seq_len, hd);
            let mut sc = q.matmul_nt(&k)?;
            for i in 0..seq_len {
                let row = sc.row_mut(i);
                row.iter_mut().for_each(|z| *z *= scale);
                softmax_in_place(&mut row[..=i]);
                row[i + 1..].iter_mut().for_each(|z| *z = 0.0);
            }
            let o = sc.matmul(&v)?;
            write_block(&mut attn, r0, h * hd, &o);
            if keep {
                probs.push(sc);
            }
        }
    }
    let mut x1 = affine(&attn, &blk.w_o, &blk.b_o)?;
    x1.add_assign(x)?;
    let (c, ln2) = layer_norm(&x1, &blk.ln2);
    let f1 = affine(&c, &blk.w_ff1, &blk.b_ff1)?;
    let g = f1.map(gelu);
    let mut out = affine(&g, &blk.w_ff2, &blk.b_ff2)?;
    out.add_assign(&x1)?;
    let cache = keep.then(|| BlockCache {
        ln1,
        a,
        qkv,
        probs,
        attn,
        ln2,
        c,
        f1,
        g,
    });
    Ok((out, cache))
}

/// Back-propagates `dout` through one block, accumulating into `grad`.
fn block_backward(
    blk: &Block,
    cfg: &LmConfig,
    cache: &BlockCache,
    dout: &Matrix,
    seq_len: usize,
    grad: &mut Block,
) -> Result<Matrix> {
    let d = cfg.d_mid;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let n_seq = dout.rows() / seq_len;

    // feed-forward branch
    grad.w_ff2.add_product(1.0, &cache.g, true, dout, false)?;
    add_col_sums(&mut grad.b_ff2, dout);
    let dg = dout.matmul_nt(&blk.w_ff2)?;
    let mut df1 = dg;
    for (v, &pre) in df1.data_mut().iter_mut().zip(cache.f1.data()) {
        *v *= gelu_grad(pre);
    }
    grad.w_ff1.add_product(1.0, &cache.c, true, &df1, false)?;
    add_col_sums(&mut grad.b_ff1, &df1);
    let dc = df1.matmul_nt(&blk.w_ff1)?;
    let mut dx1 = layer_norm_backward(&dc, &cache.ln2, &blk.ln2, &mut grad.ln2);
    dx1.add_assign(dout)?;

    // attention branch
    grad.w_o.add_product(1.0, &cache.attn, true, &dx1, false)?;
    add_col_sums(&mut grad.b_o, &dx1);
    let dattn = dx1.matmul_nt(&blk.w_o)?;
    let mut dqkv = Matrix::zeros(dout.rows(), 3 * d);
    for s in 0..n_seq {
        let r0 = s * seq_len;
        for h in 0..cfg.heads {
            let p = &cache.probs[s * cfg.heads + h];
            let q = slice_block(&cache.qkv, r0, h * hd, seq_len, hd);
            let k = slice_block(&cache.qkv, r0, d + h * hd, seq_len, hd);
            let v = slice_block(&cache.qkv, r0, 2 * d + h * hd, seq_len, hd);
            let d_o = slice_block(&dattn, r0, h * hd, seq_len, hd);
            let mut ds = d_o.matmul_nt(&v)?;
            let dv = p.matmul_tn(&d_o)?;
            for i in 0..seq_len {
                let pr = p.row(i);
                let dr = ds.row_mut(i);
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for (z, &pv) in dr.iter_mut().zip(pr) {
                    *z = pv * (*z - dot) * scale;
                }
            }
            let dq = ds.matmul(&k)?;
            let dk = ds.matmul_tn(&q)?;
            write_block(&mut dqkv, r0, h * hd, &dq);
            write_block(&mut dqkv, r0, d + h * hd, &dk);
            write_block(&mut dqkv, r0, 2 * d + h * hd, &dv);
        }
    }
    grad.w_qkv.add_product(1.0, &cache.a, true, &dqkv, false)?;
    add_col_sums(&mut grad.b_qkv, &dqkv);
    let da = dqkv.matmul_nt(&blk.w_qkv)?;
    let mut dx = layer_norm_backward(&da, &cache.ln1, &blk.ln1, &mut grad.ln1);
    dx.add_assign(&dx1)?;
    Ok(dx)
}

fn check_tokens(params: &LmParams, tokens: &[u32]) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(Error::InvalidInput("token sequence is empty".into()));
    }
    if tokens.len() > cfg.d_in {
        return Err(Error::InvalidInput(format!(
            "sequence of {} tokens exceeds the context length {}",
            tokens.len(),
            cfg.d_in
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab) {
        return Err(Error::InvalidInput(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab
        )));
    }
    Ok(())
}

fn embed(params: &LmParams, tokens: &[u32]) -> Matrix {
    let d = params.config.d_mid;
    let mut x = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        let te = params.tok_emb.row(t as usize);
        let pe = params.pos_emb.row(i);
        for ((o, a), b) in x.row_mut(i).iter_mut().zip(te).zip(pe) {
            *o = a + b;
        }
    }
    x
}

fn run_blocks(params: &LmParams, mut x: Matrix, range: std::ops::Range<usize>) -> Result<Matrix> {
    let seq_len = x.rows();
    for blk in &params.blocks[range] {
        x = block_forward(blk, &params.config, &x, seq_len, false)?.0;
    }
    Ok(x)
}

fn head(params: &LmParams, x: &Matrix) -> Result<Matrix> {
    let (h, _) = layer_norm(x, &params.ln_f);
    affine(&h, &params.w_out, &params.b_out)
}

/// Device half: embeddings followed by blocks `1..=p`.
pub fn lm_forward_ue(params: &LmParams, tokens: &[u32], p: usize) -> Result<IntermediateTensor> {
    params.config.check_split(p)?;
    check_tokens(params, tokens)?;
    Ok(IntermediateTensor(run_blocks(
        params,
        embed(params, tokens),
        0..p,
    )?))
}

/// Edge half: blocks `p+1..=L`, final norm and output projection.
pub fn lm_forward_edge(
    params: &LmParams,
    intermediate: &IntermediateTensor,
    p: usize,
) -> Result<Matrix> {
    let cfg = &params.config;
    cfg.check_split(p)?;
    let x = intermediate.matrix();
    if x.cols() != cfg.d_mid || x.rows() == 0 || x.rows() > cfg.d_in {
        return Err(Error::shape(format!(
            "intermediate tensor is {}x{}, expected up to {}x{}",
            x.rows(),
            x.cols(),
            cfg.d_in,
            cfg.d_mid
        )));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput(
            "intermediate tensor is not finite".into(),
        ));
    }
    head(params, &run_blocks(params, x.clone(), p..cfg.n_layers)?)
}

/// Unsplit forward pass.
pub fn lm_forward_full(params: &LmParams, tokens: &[u32]) -> Result<Matrix> {
    check_tokens(params, tokens)?;
    let x = run_blocks(params, embed(params, tokens), 0..params.config.n_layers)?;
    head(params, &x)
}

/// Residual-stream activations after each device-side depth: entry `p - 1`
/// equals `lm_forward_ue(params, tokens, p)` for `p` in `1..=L-1`.
pub fn activations_by_layer(params: &LmParams, tokens: &[u32]) -> Result<Vec<IntermediateTensor>> {
    check_tokens(params, tokens)?;
    let mut x = embed(params, tokens);
    let mut out = Vec::with_capacity(params.config.max_split());
    for blk in &params.blocks[..params.config.max_split()] {
        x = block_forward(blk, &params.config, &x, tokens.len(), false)?.0;
        out.push(IntermediateTensor(x.clone()));
    }
    Ok(out)
}

/// Mean next-token cross-entropy over a batch of equal-length sequences and
/// its gradient. Position `i` of each sequence predicts token `i + 1`.
pub fn lm_loss_and_grad(params: &LmParams, batch: &[&[u32]]) -> Result<(f64, LmParams)> {
    let cfg = &params.config;
    let seq_len = batch.first().map_or(0, |s| s.len());
    if seq_len < 2 {
        return Err(Error::InvalidInput(
            "training sequences need at least two tokens".into(),
        ));
    }
    if batch.iter().any(|s| s.len() != seq_len) {
        return Err(Error::InvalidInput(
            "training batch mixes sequence lengths".into(),
        ));
    }
    let n = batch.len() * seq_len;
    let mut x = Matrix::zeros(n, cfg.d_mid);
    for (s, seq) in batch.iter().enumerate() {
        check_tokens(params, seq)?;
        let e = embed(params, seq);
        write_block(&mut x, s * seq_len, 0, &e);
    }
    let mut caches = Vec::with_capacity(cfg.n_layers);
    for blk in &params.blocks {
        let (y, c) = block_forward(blk, cfg, &x, seq_len, true)?;
        caches.push(c.expect("cache requested"));
        x = y;
    }
    let (hf, lnf_cache) = layer_norm(&x, &params.ln_f);
    let mut dlogits = affine(&hf, &params.w_out, &params.b_out)?;

    let count = batch.len() * (seq_len - 1);
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for (s, seq) in batch.iter().enumerate() {
        for i in 0..seq_len {
            let row = dlogits.row_mut(s * seq_len + i);
            if i + 1 == seq_len {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            softmax_in_place(row);
            let target = seq[i + 1] as usize;
            loss -= row[target].max(1e-300).ln();
            row[target] -= 1.0;
            row.iter_mut().for_each(|v| *v *= inv);
        }
    }
    loss *= inv;

    let mut grad = params.zeros_like();
    grad.w_out.add_product(1.0, &hf, true, &dlogits, false)?;
    add_col_sums(&mut grad.b_out, &dlogits);
    let dh = dlogits.matmul_nt(&params.w_out)?;
    let mut dx = layer_norm_backward(&dh, &lnf_cache, &params.ln_f, &mut grad.ln_f);
    for (l, blk) in params.blocks.iter().enumerate().rev() {
        dx = block_backward(blk, cfg, &caches[l], &dx, seq_len, &mut grad.blocks[l])?;
    }
    for (s, seq) in batch.iter().enumerate() {
        for (i, &t) in seq.iter().enumerate() {
            let g = dx.row(s * seq_len + i);
            for (o, v) in grad.tok_emb.row_mut(t as usize).iter_mut().zip(g) {
                *o += v;
            }
            for (o, v) in grad.pos_emb.row_mut(i).iter_mut().zip(g) {
                *o += v;
            }
        }
    }
    Ok((loss, grad))
}

//! Forward and backward passes composed as a static graph: each stage has
//! a cache struct holding exactly what its backward needs.

use super::config::{distance_bucket, region_row, ModelConfig};
use super::params::{ModelParams, RnnDirParams};
use crate::numerics::{
    conv2d_dilated, conv2d_dilated_grads, dropout, dropout_grads, gelu, gelu_grads, linear,
    linear_grads, softmax_rows, NumericsError, Rng, Tensor,
};
use crate::types::RelationGrid;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(usize),
    #[error("both predictors are disabled; nothing can produce scores")]
    BothPredictorsDisabled,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Per-cell scores from both predictors plus their softmaxed combination.
#[derive(Debug, Clone)]
pub struct GridLogits {
    /// Biaffine scores [N,N,R]; zeros when the biaffine branch is disabled.
    pub y_prime: Tensor,
    /// MLP scores [N,N,R]; zeros when the MLP branch is disabled.
    pub y_double_prime: Tensor,
    /// Softmax(y' + y'') per cell, [N,N,R].
    pub y: Tensor,
}

fn reshape(mut t: Tensor, shape: &[usize]) -> Tensor {
    assert_eq!(t.numel(), shape.iter().product::<usize>());
    t.shape = shape.to_vec();
    t
}

fn accum(t: &mut Tensor, d: &[f64]) {
    let g = t.grad_mut();
    for (gv, dv) in g.iter_mut().zip(d) {
        *gv += dv;
    }
}

// ---------------------------------------------------------------------------
// Encoder: embedding lookup -> dropout -> bidirectional recurrent layer.
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct EncoderCache {
    ids: Vec<usize>,
    /// Dropped-out embeddings [n, d_word].
    xd: Tensor,
    emb_mask: Option<Vec<f64>>,
    /// Hidden states per direction [n, d_h/2], indexed by token position.
    hf: Tensor,
    hb: Tensor,
}

fn rnn_scan(xd: &Tensor, dir: &RnnDirParams, reverse: bool) -> Tensor {
    let (n, d_word) = (xd.shape[0], xd.shape[1]);
    let d_dir = dir.b.numel();
    let mut h = Tensor::zeros(&[n, d_dir]);
    let mut prev = vec![0.0; d_dir];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for &t in &order {
        let x = &xd.data[t * d_word..(t + 1) * d_word];
        let hrow = &mut h.data[t * d_dir..(t + 1) * d_dir];
        for u in 0..d_dir {
            let mut a = dir.b.data[u];
            let wx = &dir.wx.data[u * d_word..(u + 1) * d_word];
            for p in 0..d_word {
                a += wx[p] * x[p];
            }
            let wh = &dir.wh.data[u * d_dir..(u + 1) * d_dir];
            for p in 0..d_dir {
                a += wh[p] * prev[p];
            }
            hrow[u] = a.tanh();
        }
        prev.copy_from_slice(hrow);
    }
    h
}

/// BPTT for one direction; accumulates into the direction's grads and the
/// embedding gradient buffer `dxd`.
fn rnn_scan_backward(
    xd: &Tensor,
    h: &Tensor,
    dir: &mut RnnDirParams,
    reverse: bool,
    dh_out: &Tensor,
    dxd: &mut Tensor,
) {
    let (n, d_word) = (xd.shape[0], xd.shape[1]);
    let d_dir = dir.b.numel();
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    let mut dwx = vec![0.0; dir.wx.numel()];
    let mut dwh = vec![0.0; dir.wh.numel()];
    let mut db = vec![0.0; d_dir];
    let mut carry = vec![0.0; d_dir];
    for (step, &t) in order.iter().enumerate().rev() {
        let hrow = &h.data[t * d_dir..(t + 1) * d_dir];
        let prev: Option<usize> = (step > 0).then(|| order[step - 1]);
        let mut da = vec![0.0; d_dir];
        for u in 0..d_dir {
            let dh = dh_out.data[t * d_dir + u] + carry[u];
            da[u] = dh * (1.0 - hrow[u] * hrow[u]);
            db[u] += da[u];
        }
        let x = &xd.data[t * d_word..(t + 1) * d_word];
        for u in 0..d_dir {
            let g = da[u];
            if g == 0.0 {
                continue;
            }
            let dwxrow = &mut dwx[u * d_word..(u + 1) * d_word];
            for p in 0..d_word {
                dwxrow[p] += g * x[p];
                dxd.data[t * d_word + p] += g * dir.wx.data[u * d_word + p];
            }
        }
        carry = vec![0.0; d_dir];
        if let Some(tp) = prev {
            let hprev = &h.data[tp * d_dir..(tp + 1) * d_dir];
            for u in 0..d_dir {
                let g = da[u];
                let dwhrow = &mut dwh[u * d_dir..(u + 1) * d_dir];
                for p in 0..d_dir {
                    dwhrow[p] += g * hprev[p];
                    carry[p] += g * dir.wh.data[u * d_dir + p];
                }
            }
        }
    }
    accum(&mut dir.wx, &dwx);
    accum(&mut dir.wh, &dwh);
    accum(&mut dir.b, &db);
}

/// Token ids -> contextual word representations H [n, d_h].
pub fn encode_words(
    ids: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor, EncoderCache), ModelError> {
    let n = ids.len();
    let d_word = cfg.d_word;
    if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(ModelError::UnknownTokenId(bad));
    }
    let mut x = Tensor::zeros(&[n, d_word]);
    for (t, &id) in ids.iter().enumerate() {
        x.data[t * d_word..(t + 1) * d_word]
            .copy_from_slice(&params.emb.data[id * d_word..(id + 1) * d_word]);
    }
    let (xd, emb_mask) = dropout(&x, cfg.dropout, rng, training);
    let hf = rnn_scan(&xd, &params.rnn_fwd, false);
    let hb = rnn_scan(&xd, &params.rnn_bwd, true);
    let d_dir = cfg.d_h / 2;
    let mut h = Tensor::zeros(&[n, cfg.d_h]);
    for t in 0..n {
        h.data[t * cfg.d_h..t * cfg.d_h + d_dir]
            .copy_from_slice(&hf.data[t * d_dir..(t + 1) * d_dir]);
        h.data[t * cfg.d_h + d_dir..(t + 1) * cfg.d_h]
            .copy_from_slice(&hb.data[t * d_dir..(t + 1) * d_dir]);
    }
    Ok((h, EncoderCache { ids: ids.to_vec(), xd, emb_mask, hf, hb }))
}

fn encode_words_backward(cache: &EncoderCache, params: &mut ModelParams, dh: &Tensor) {
    let n = cache.ids.len();
    let d_dir = cache.hf.shape[1];
    let mut dhf = Tensor::zeros(&cache.hf.shape);
    let mut dhb = Tensor::zeros(&cache.hb.shape);
    let d_h = 2 * d_dir;
    for t in 0..n {
        dhf.data[t * d_dir..(t + 1) * d_dir]
            .copy_from_slice(&dh.data[t * d_h..t * d_h + d_dir]);
        dhb.data[t * d_dir..(t + 1) * d_dir]
            .copy_from_slice(&dh.data[t * d_h + d_dir..(t + 1) * d_h]);
    }
    let mut dxd = Tensor::zeros(&cache.xd.shape);
    rnn_scan_backward(&cache.xd, &cache.hf, &mut params.rnn_fwd, false, &dhf, &mut dxd);
    rnn_scan_backward(&cache.xd, &cache.hb, &mut params.rnn_bwd, true, &dhb, &mut dxd);
    let dx = dropout_grads(&dxd, &cache.emb_mask);
    let d_word = cache.xd.shape[1];
    let demb = params.emb.grad_mut();
    for (t, &id) in cache.ids.iter().enumerate() {
        for p in 0..d_word {
            demb[id * d_word + p] += dx.data[t * d_word + p];
        }
    }
}

// ---------------------------------------------------------------------------
// Conditional layer normalization over word pairs.
// ---------------------------------------------------------------------------

const CLN_SIGMA_FLOOR: f64 = 1e-8;

pub struct ClnCache {
    /// Standardized rows (h_j − μ)/σ, [n, d_h].
    hat: Tensor,
    inv_sigma: Vec<f64>,
    floored: Vec<bool>,
    /// γ_i = W_α h_i + b_α, [n, d_h].
    gamma: Tensor,
}

/// V[i,j,:] = γ_i ⊙ standardize(h_j) + λ_i.
pub fn cln_grid(h: &Tensor, params: &ModelParams) -> (Tensor, ClnCache) {
    let (n, d_h) = (h.shape[0], h.shape[1]);
    let gamma = linear(h, &params.cln_w_alpha, &params.cln_b_alpha);
    let lambda = linear(h, &params.cln_w_beta, &params.cln_b_beta);
    let mut hat = Tensor::zeros(&[n, d_h]);
    let mut inv_sigma = vec![0.0; n];
    let mut floored = vec![false; n];
    for j in 0..n {
        let row = &h.data[j * d_h..(j + 1) * d_h];
        let mu = row.iter().sum::<f64>() / d_h as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d_h as f64;
        let sigma = var.sqrt();
        let (sigma_eff, fl) =
            if sigma < CLN_SIGMA_FLOOR { (CLN_SIGMA_FLOOR, true) } else { (sigma, false) };
        inv_sigma[j] = 1.0 / sigma_eff;
        floored[j] = fl;
        for k in 0..d_h {
            hat.data[j * d_h + k] = (row[k] - mu) * inv_sigma[j];
        }
    }
    let mut v = Tensor::zeros(&[n, n, d_h]);
    for i in 0..n {
        let grow = &gamma.data[i * d_h..(i + 1) * d_h];
        let lrow = &lambda.data[i * d_h..(i + 1) * d_h];
        for j in 0..n {
            let hrow = &hat.data[j * d_h..(j + 1) * d_h];
            let vcell = &mut v.data[(i * n + j) * d_h..(i * n + j + 1) * d_h];
            for k in 0..d_h {
                vcell[k] = grow[k] * hrow[k] + lrow[k];
            }
        }
    }
    (v, ClnCache { hat, inv_sigma, floored, gamma })
}

fn cln_grid_backward(
    h: &Tensor,
    cache: &ClnCache,
    params: &mut ModelParams,
    dv: &Tensor,
) -> Tensor {
    let (n, d_h) = (h.shape[0], h.shape[1]);
    let mut dgamma = Tensor::zeros(&[n, d_h]);
    let mut dlambda = Tensor::zeros(&[n, d_h]);
    let mut dhat = Tensor::zeros(&[n, d_h]);
    for i in 0..n {
        let grow = &cache.gamma.data[i * d_h..(i + 1) * d_h];
        for j in 0..n {
            let hrow = &cache.hat.data[j * d_h..(j + 1) * d_h];
            let dcell = &dv.data[(i * n + j) * d_h..(i * n + j + 1) * d_h];
            for k in 0..d_h {
                dgamma.data[i * d_h + k] += dcell[k] * hrow[k];
                dlambda.data[i * d_h + k] += dcell[k];
                dhat.data[j * d_h + k] += dcell[k] * grow[k];
            }
        }
    }
    let mut dh = Tensor::zeros(&[n, d_h]);
    for j in 0..n {
        let dhatr = &dhat.data[j * d_h..(j + 1) * d_h];
        let hatr = &cache.hat.data[j * d_h..(j + 1) * d_h];
        let mean_d = dhatr.iter().sum::<f64>() / d_h as f64;
        let mean_dh = dhatr.iter().zip(hatr).map(|(a, b)| a * b).sum::<f64>() / d_h as f64;
        for k in 0..d_h {
            let centered = dhatr[k] - mean_d;
            let term = if cache.floored[j] { centered } else { centered - hatr[k] * mean_dh };
            dh.data[j * d_h + k] += cache.inv_sigma[j] * term;
        }
    }
    // Gain/bias generators are plain linear layers of H.
    let mut dwa = vec![0.0; params.cln_w_alpha.numel()];
    let mut dba = vec![0.0; params.cln_b_alpha.numel()];
    let dh_gamma = linear_grads(h, &params.cln_w_alpha, &dgamma, &mut dwa, &mut dba);
    accum(&mut params.cln_w_alpha, &dwa);
    accum(&mut params.cln_b_alpha, &dba);
    let mut dwb = vec![0.0; params.cln_w_beta.numel()];
    let mut dbb = vec![0.0; params.cln_b_beta.numel()];
    let dh_lambda = linear_grads(h, &params.cln_w_beta, &dlambda, &mut dwb, &mut dbb);
    accum(&mut params.cln_w_beta, &dwb);
    accum(&mut params.cln_b_beta, &dbb);
    for k in 0..dh.data.len() {
        dh.data[k] += dh_gamma.data[k] + dh_lambda.data[k];
    }
    dh
}

// ---------------------------------------------------------------------------
// Grid build-up: [V; E^d; E^t] -> MLP1 -> C.
// ---------------------------------------------------------------------------

pub struct BuildCache {
    /// Per-cell concat input, [n², grid_in].
    z: Tensor,
    /// MLP₁ pre-activation, [n², d_c].
    a: Tensor,
    mask: Option<Vec<f64>>,
}

pub fn build_grid(
    v: &Tensor,
    cfg: &ModelConfig,
    params: &ModelParams,
    rng: &mut Rng,
    training: bool,
) -> (Tensor, BuildCache) {
    let n = v.shape[0];
    let d_h = cfg.d_h;
    let zdim = cfg.grid_input_dim();
    let mut z = Tensor::zeros(&[n * n, zdim]);
    for i in 0..n {
        for j in 0..n {
            let row = &mut z.data[(i * n + j) * zdim..(i * n + j + 1) * zdim];
            row[..d_h].copy_from_slice(&v.data[(i * n + j) * d_h..(i * n + j + 1) * d_h]);
            let mut off = d_h;
            if cfg.toggles.use_distance_emb {
                let b = distance_bucket(i, j);
                row[off..off + cfg.d_ed]
                    .copy_from_slice(&params.dist_emb.data[b * cfg.d_ed..(b + 1) * cfg.d_ed]);
                off += cfg.d_ed;
            }
            if cfg.toggles.use_region_emb {
                let r = region_row(i, j);
                row[off..off + cfg.d_et]
                    .copy_from_slice(&params.region_emb.data[r * cfg.d_et..(r + 1) * cfg.d_et]);
            }
        }
    }
    let a = linear(&z, &params.mlp1_w, &params.mlp1_b);
    let g = gelu(&a);
    let (c, mask) = dropout(&g, cfg.dropout, rng, training);
    (reshape(c, &[n, n, cfg.d_c]), BuildCache { z, a, mask })
}

fn build_grid_backward(
    cache: &BuildCache,
    cfg: &ModelConfig,
    params: &mut ModelParams,
    dc: &Tensor,
) -> Tensor {
    let n = dc.shape[0];
    let dc2 = reshape(dc.clone(), &[n * n, cfg.d_c]);
    let dg = dropout_grads(&dc2, &cache.mask);
    let da = gelu_grads(&cache.a, &dg);
    let mut dw = vec![0.0; params.mlp1_w.numel()];
    let mut db = vec![0.0; params.mlp1_b.numel()];
    let dz = linear_grads(&cache.z, &params.mlp1_w, &da, &mut dw, &mut db);
    accum(&mut params.mlp1_w, &dw);
    accum(&mut params.mlp1_b, &db);
    let d_h = cfg.d_h;
    let zdim = cfg.grid_input_dim();
    let mut dv = Tensor::zeros(&[n, n, d_h]);
    let ddist = cfg.toggles.use_distance_emb.then(|| params.dist_emb.grad_mut());
    let mut ddist = ddist;
    for i in 0..n {
        for j in 0..n {
            let row = &dz.data[(i * n + j) * zdim..(i * n + j + 1) * zdim];
            dv.data[(i * n + j) * d_h..(i * n + j + 1) * d_h].copy_from_slice(&row[..d_h]);
            let mut off = d_h;
            if let Some(g) = ddist.as_deref_mut() {
                let b = distance_bucket(i, j);
                for p in 0..cfg.d_ed {
                    g[b * cfg.d_ed + p] += row[off + p];
                }
                off += cfg.d_ed;
            }
            if cfg.toggles.use_region_emb {
                let r = region_row(i, j);
                let g = params.region_emb.grad_mut();
                for p in 0..cfg.d_et {
                    g[r * cfg.d_et + p] += row[off + p];
                }
            }
        }
    }
    dv
}

// ---------------------------------------------------------------------------
// Multi-granularity dilated convolution.
// ---------------------------------------------------------------------------

pub struct ConvCache {
    /// Pre-activation (conv + bias) per enabled rate, each [n, n, d_c].
    pre: Vec<Tensor>,
}

pub fn multi_dilated(
    c: &Tensor,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(Tensor, ConvCache), ModelError> {
    let n = c.shape[0];
    let d_c = cfg.d_c;
    let rates = cfg.enabled_dilations();
    let mut q = Tensor::zeros(&[n, n, rates.len() * d_c]);
    let mut pre = Vec::with_capacity(rates.len());
    for (li, conv) in params.convs.iter().enumerate() {
        let mut y = conv2d_dilated(c, &conv.kernel, conv.rate)?;
        for cell in 0..n * n {
            for ch in 0..d_c {
                y.data[cell * d_c + ch] += conv.bias.data[ch];
            }
        }
        let g = gelu(&y);
        let qw = rates.len() * d_c;
        for cell in 0..n * n {
            q.data[cell * qw + li * d_c..cell * qw + (li + 1) * d_c]
                .copy_from_slice(&g.data[cell * d_c..(cell + 1) * d_c]);
        }
        pre.push(y);
    }
    Ok((q, ConvCache { pre }))
}

fn multi_dilated_backward(
    c: &Tensor,
    cache: &ConvCache,
    cfg: &ModelConfig,
    params: &mut ModelParams,
    dq: &Tensor,
) -> Tensor {
    let n = c.shape[0];
    let d_c = cfg.d_c;
    let nrates = params.convs.len();
    let qw = nrates * d_c;
    let mut dc = Tensor::zeros(&c.shape);
    for li in 0..nrates {
        let mut dg = Tensor::zeros(&[n, n, d_c]);
        for cell in 0..n * n {
            dg.data[cell * d_c..(cell + 1) * d_c]
                .copy_from_slice(&dq.data[cell * qw + li * d_c..cell * qw + (li + 1) * d_c]);
        }
        let dpre = gelu_grads(&cache.pre[li], &dg);
        let conv = &params.convs[li];
        let (dx, dk) = conv2d_dilated_grads(c, &conv.kernel, conv.rate, &dpre);
        let mut dbias = vec![0.0; d_c];
        for cell in 0..n * n {
            for ch in 0..d_c {
                dbias[ch] += dpre.data[cell * d_c + ch];
            }
        }
        let conv = &mut params.convs[li];
        accum(&mut conv.kernel, &dk.data);
        accum(&mut conv.bias, &dbias);
        for k in 0..dc.data.len() {
            dc.data[k] += dx.data[k];
        }
    }
    dc
}

// ---------------------------------------------------------------------------
// Biaffine predictor.
// ---------------------------------------------------------------------------

pub struct BiaffineCache {
    s_pre: Tensor,
    s: Tensor,
    mask_s: Option<Vec<f64>>,
    o_pre: Tensor,
    o: Tensor,
    mask_o: Option<Vec<f64>>,
}

/// y'_ij = s_iᵀ U o_j + W[s_i; o_j] + b with s, o from per-word MLPs.
pub fn biaffine_scores(
    h: &Tensor,
    cfg: &ModelConfig,
    params: &ModelParams,
    rng: &mut Rng,
    training: bool,
) -> (Tensor, BiaffineCache) {
    let n = h.shape[0];
    let (d_b, r_cnt) = (cfg.d_biaffine, cfg.relation_count);
    let s_pre = linear(h, &params.mlp2_w, &params.mlp2_b);
    let (s, mask_s) = dropout(&gelu(&s_pre), cfg.dropout, rng, training);
    let o_pre = linear(h, &params.mlp3_w, &params.mlp3_b);
    let (o, mask_o) = dropout(&gelu(&o_pre), cfg.dropout, rng, training);
    // t[j,r,a] = sum_b U[a,r,b] o[j,b]
    let mut t = vec![0.0; n * r_cnt * d_b];
    for j in 0..n {
        let orow = &o.data[j * d_b..(j + 1) * d_b];
        for a in 0..d_b {
            for r in 0..r_cnt {
                let urow = &params.bi_u.data[(a * r_cnt + r) * d_b..(a * r_cnt + r + 1) * d_b];
                let mut acc = 0.0;
                for b in 0..d_b {
                    acc += urow[b] * orow[b];
                }
                t[(j * r_cnt + r) * d_b + a] = acc;
            }
        }
    }
    // Linear terms, precomputed per word.
    let mut ws = vec![0.0; n * r_cnt];
    let mut wo = vec![0.0; n * r_cnt];
    for i in 0..n {
        for r in 0..r_cnt {
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            for p in 0..d_b {
                a1 += params.bi_w.data[r * 2 * d_b + p] * s.data[i * d_b + p];
                a2 += params.bi_w.data[r * 2 * d_b + d_b + p] * o.data[i * d_b + p];
            }
            ws[i * r_cnt + r] = a1;
            wo[i * r_cnt + r] = a2;
        }
    }
    let mut y = Tensor::zeros(&[n, n, r_cnt]);
    for i in 0..n {
        let srow = &s.data[i * d_b..(i + 1) * d_b];
        for j in 0..n {
            for r in 0..r_cnt {
                let trow = &t[(j * r_cnt + r) * d_b..(j * r_cnt + r + 1) * d_b];
                let mut acc = params.bi_b.data[r] + ws[i * r_cnt + r] + wo[j * r_cnt + r];
                for a in 0..d_b {
                    acc += srow[a] * trow[a];
                }
                y.data[(i * n + j) * r_cnt + r] = acc;
            }
        }
    }
    (y, BiaffineCache { s_pre, s, mask_s, o_pre, o, mask_o })
}

fn biaffine_scores_backward(
    h: &Tensor,
    cache: &BiaffineCache,
    cfg: &ModelConfig,
    params: &mut ModelParams,
    dy: &Tensor,
) -> Tensor {
    let n = h.shape[0];
    let (d_b, r_cnt) = (cfg.d_biaffine, cfg.relation_count);
    let (s, o) = (&cache.s, &cache.o);
    let mut ds = Tensor::zeros(&[n, d_b]);
    let mut do_ = Tensor::zeros(&[n, d_b]);
    let mut du = vec![0.0; params.bi_u.numel()];
    let mut dw = vec![0.0; params.bi_w.numel()];
    let mut db = vec![0.0; r_cnt];
    for r in 0..r_cnt {
        // P[i,b] = sum_j dy[i,j,r] o[j,b];  G[j,a] = sum_i dy[i,j,r] s[i,a]
        let mut p_mat = vec![0.0; n * d_b];
        let mut g_mat = vec![0.0; n * d_b];
        let mut rowsum = vec![0.0; n];
        let mut colsum = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let g = dy.data[(i * n + j) * r_cnt + r];
                if g == 0.0 {
                    continue;
                }
                db[r] += g;
                rowsum[i] += g;
                colsum[j] += g;
                for b in 0..d_b {
                    p_mat[i * d_b + b] += g * o.data[j * d_b + b];
                    g_mat[j * d_b + b] += g * s.data[i * d_b + b];
                }
            }
        }
        for i in 0..n {
            for a in 0..d_b {
                let sia = s.data[i * d_b + a];
                let urow = &params.bi_u.data[(a * r_cnt + r) * d_b..(a * r_cnt + r + 1) * d_b];
                let durow = &mut du[(a * r_cnt + r) * d_b..(a * r_cnt + r + 1) * d_b];
                let mut acc = 0.0;
                for b in 0..d_b {
                    let pib = p_mat[i * d_b + b];
                    acc += pib * urow[b];
                    durow[b] += sia * pib;
                }
                ds.data[i * d_b + a] += acc + rowsum[i] * params.bi_w.data[r * 2 * d_b + a];
                dw[r * 2 * d_b + a] += rowsum[i] * sia;
            }
        }
        for j in 0..n {
            for b in 0..d_b {
                let mut acc = 0.0;
                for a in 0..d_b {
                    acc += g_mat[j * d_b + a] * params.bi_u.data[(a * r_cnt + r) * d_b + b];
                }
                do_.data[j * d_b + b] +=
                    acc + colsum[j] * params.bi_w.data[r * 2 * d_b + d_b + b];
                dw[r * 2 * d_b + d_b + b] += colsum[j] * o.data[j * d_b + b];
            }
        }
    }
    accum(&mut params.bi_u, &du);
    accum(&mut params.bi_w, &dw);
    accum(&mut params.bi_b, &db);
    // Through the subject/object MLPs back to H.
    let ds_g = dropout_grads(&ds, &cache.mask_s);
    let ds_pre = gelu_grads(&cache.s_pre, &ds_g);
    let mut dw2 = vec![0.0; params.mlp2_w.numel()];
    let mut db2 = vec![0.0; params.mlp2_b.numel()];
    let dh_s = linear_grads(h, &params.mlp2_w, &ds_pre, &mut dw2, &mut db2);
    accum(&mut params.mlp2_w, &dw2);
    accum(&mut params.mlp2_b, &db2);
    let do_g = dropout_grads(&do_, &cache.mask_o);
    let do_pre = gelu_grads(&cache.o_pre, &do_g);
    let mut dw3 = vec![0.0; params.mlp3_w.numel()];
    let mut db3 = vec![0.0; params.mlp3_b.numel()];
    let dh_o = linear_grads(h, &params.mlp3_w, &do_pre, &mut dw3, &mut db3);
    accum(&mut params.mlp3_w, &dw3);
    accum(&mut params.mlp3_b, &db3);
    let mut dh = dh_s;
    for k in 0..dh.data.len() {
        dh.data[k] += dh_o.data[k];
    }
    dh
}

// ---------------------------------------------------------------------------
// MLP predictor.
// ---------------------------------------------------------------------------

pub struct PredCache {
    h1_pre: Tensor,
    h1: Tensor,
    mask: Option<Vec<f64>>,
}

/// Per-cell MLP from Q_ij to relation scores.
pub fn mlp_scores(
    q: &Tensor,
    cfg: &ModelConfig,
    params: &ModelParams,
    rng: &mut Rng,
    training: bool,
) -> (Tensor, PredCache) {
    let n = q.shape[0];
    let qdim = cfg.q_dim();
    let q2 = reshape(q.clone(), &[n * n, qdim]);
    let h1_pre = linear(&q2, &params.pred_w1, &params.pred_b1);
    let (h1, mask) = dropout(&gelu(&h1_pre), cfg.dropout, rng, training);
    let y = linear(&h1, &params.pred_w2, &params.pred_b2);
    (reshape(y, &[n, n, cfg.relation_count]), PredCache { h1_pre, h1, mask })
}

fn mlp_scores_backward(
    q: &Tensor,
    cache: &PredCache,
    cfg: &ModelConfig,
    params: &mut ModelParams,
    dy: &Tensor,
) -> Tensor {
    let n = q.shape[0];
    let dy2 = reshape(dy.clone(), &[n * n, cfg.relation_count]);
    let mut dw2 = vec![0.0; params.pred_w2.numel()];
    let mut db2 = vec![0.0; params.pred_b2.numel()];
    let dh1 = linear_grads(&cache.h1, &params.pred_w2, &dy2, &mut dw2, &mut db2);
    accum(&mut params.pred_w2, &dw2);
    accum(&mut params.pred_b2, &db2);
    let dh1_g = dropout_grads(&dh1, &cache.mask);
    let dh1_pre = gelu_grads(&cache.h1_pre, &dh1_g);
    let q2 = reshape(q.clone(), &[n * n, cfg.q_dim()]);
    let mut dw1 = vec![0.0; params.pred_w1.numel()];
    let mut db1 = vec![0.0; params.pred_b1.numel()];
    let dq = linear_grads(&q2, &params.pred_w1, &dh1_pre, &mut dw1, &mut db1);
    accum(&mut params.pred_w1, &dw1);
    accum(&mut params.pred_b1, &db1);
    reshape(dq, &[n, n, cfg.q_dim()])
}

// ---------------------------------------------------------------------------
// Score combination and loss.
// ---------------------------------------------------------------------------

/// Softmax over the elementwise sum of the enabled predictors' scores.
pub fn combine_scores(
    y_prime: Option<&Tensor>,
    y_double_prime: Option<&Tensor>,
) -> Result<Tensor, ModelError> {
    let logits = match (y_prime, y_double_prime) {
        (Some(a), Some(b)) => {
            if a.shape != b.shape {
                return Err(ModelError::ShapeMismatch(format!(
                    "combine_scores {:?} vs {:?}",
                    a.shape, b.shape
                )));
            }
            let mut l = a.clone();
            for k in 0..l.data.len() {
                l.data[k] += b.data[k];
            }
            l
        }
        (Some(a), None) => a.clone(),
        (None, Some(b)) => b.clone(),
        (None, None) => return Err(ModelError::BothPredictorsDisabled),
    };
    Ok(softmax_rows(&logits))
}

const LOG_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the gold relation over the valid N²
/// cells. `y` may be padded to [M,M,R] with M ≥ N; padding cells are
/// excluded from both the sum and the normalizer.
pub fn grid_loss(y: &Tensor, gold: &RelationGrid) -> Result<f64, ModelError> {
    let n = gold.n();
    let r_cnt = *y.shape.last().unwrap();
    let m = y.shape[0];
    if y.shape.len() != 3 || y.shape[1] != m || m < n {
        return Err(ModelError::ShapeMismatch(format!(
            "grid_loss probabilities {:?} vs grid n={n}",
            y.shape
        )));
    }
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r = gold.get(i, j) as usize;
            let p = y.data[(i * m + j) * r_cnt + r];
            loss -= p.max(LOG_FLOOR).ln();
        }
    }
    Ok(loss / (n * n) as f64)
}

/// Full pipeline: tokens to per-cell relation probabilities.
pub fn forward(
    ids: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<GridLogits, ModelError> {
    let (logits, _caches) = forward_cached(ids, params, cfg, rng, training)?;
    Ok(logits)
}

struct Caches {
    encoder: EncoderCache,
    h: Tensor,
    cln: ClnCache,
    build: Option<(Tensor, BuildCache)>, // V kept alongside for the backward
    conv: Option<(Tensor, ConvCache)>,   // C kept alongside
    q: Option<Tensor>,
    biaffine: Option<BiaffineCache>,
    pred: Option<PredCache>,
}

fn forward_cached(
    ids: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<(GridLogits, Caches), ModelError> {
    let (h, encoder) = encode_words(ids, params, cfg, rng, training)?;
    let (v, cln) = cln_grid(&h, params);
    let n = ids.len();
    let r_cnt = cfg.relation_count;
    let mut caches = Caches {
        encoder,
        h: h.clone(),
        cln,
        build: None,
        conv: None,
        q: None,
        biaffine: None,
        pred: None,
    };
    let y_double_prime = if cfg.toggles.use_mlp_predictor {
        let (c, build_cache) = build_grid(&v, cfg, params, rng, training);
        let (q, conv_cache) = multi_dilated(&c, cfg, params)?;
        let (y2, pred_cache) = mlp_scores(&q, cfg, params, rng, training);
        caches.build = Some((v, build_cache));
        caches.conv = Some((c, conv_cache));
        caches.q = Some(q);
        caches.pred = Some(pred_cache);
        Some(y2)
    } else {
        None
    };
    let y_prime = if cfg.toggles.use_biaffine {
        let (y1, bi_cache) = biaffine_scores(&h, cfg, params, rng, training);
        caches.biaffine = Some(bi_cache);
        Some(y1)
    } else {
        None
    };
    let y = combine_scores(y_prime.as_ref(), y_double_prime.as_ref())?;
    y.check_finite("combined probabilities")?;
    let zeros = || Tensor::zeros(&[n, n, r_cnt]);
    Ok((
        GridLogits {
            y_prime: y_prime.unwrap_or_else(zeros),
            y_double_prime: y_double_prime.unwrap_or_else(zeros),
            y,
        },
        caches,
    ))
}

/// Forward pass plus gradient accumulation into every parameter's grad
/// buffer. `loss_scale` multiplies the loss gradient (1/batch for batch
/// averaging); the returned loss is unscaled.
pub fn forward_backward(
    ids: &[usize],
    gold: &RelationGrid,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    rng: &mut Rng,
    training: bool,
    loss_scale: f64,
) -> Result<f64, ModelError> {
    let n = ids.len();
    if gold.n() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "gold grid n={} vs sentence length {n}",
            gold.n()
        )));
    }
    let (logits, caches) = forward_cached(ids, params, cfg, rng, training)?;
    let loss = grid_loss(&logits.y, gold)?;
    // Fused softmax + NLL gradient w.r.t. the summed scores.
    let r_cnt = cfg.relation_count;
    let scale = loss_scale / (n * n) as f64;
    let mut dlogits = Tensor::zeros(&[n, n, r_cnt]);
    for i in 0..n {
        for j in 0..n {
            let g = gold.get(i, j) as usize;
            for r in 0..r_cnt {
                let y = logits.y.data[(i * n + j) * r_cnt + r];
                let target = if r == g { 1.0 } else { 0.0 };
                dlogits.data[(i * n + j) * r_cnt + r] = (y - target) * scale;
            }
        }
    }
    let mut dh = Tensor::zeros(&caches.h.shape);
    if let Some(pred_cache) = &caches.pred {
        let q = caches.q.as_ref().unwrap();
        let (c, conv_cache) = caches.conv.as_ref().unwrap();
        let (v, build_cache) = caches.build.as_ref().unwrap();
        let dq = mlp_scores_backward(q, pred_cache, cfg, params, &dlogits);
        let dc = multi_dilated_backward(c, conv_cache, cfg, params, &dq);
        let dv = build_grid_backward(build_cache, cfg, params, &dc);
        let _ = v;
        let dh_cln = cln_grid_backward(&caches.h, &caches.cln, params, &dv);
        for k in 0..dh.data.len() {
            dh.data[k] += dh_cln.data[k];
        }
    }
    if let Some(bi_cache) = &caches.biaffine {
        let dh_bi = biaffine_scores_backward(&caches.h, bi_cache, cfg, params, &dlogits);
        for k in 0..dh.data.len() {
            dh.data[k] += dh_bi.data[k];
        }
    }
    encode_words_backward(&caches.encoder, params, &dh);
    Ok(loss)
}

//! Forward and backward passes of the pre-norm decoder.
//!
//! Block ℓ (1-based) maps the residual stream as
//!   h_mid = h_{ℓ-1} + Σ_k a_{ℓ,k},   a_{ℓ,k} = softmax(q_k k_kᵀ/√d_h) v_k · W_O[k]
//!   h_ℓ   = h_mid + m_ℓ,             m_ℓ = W_2 · gelu(W_1 · rms(h_mid) + b_1) + b_2
//! and logits are `h_L · U` with no final normalisation, so the last residual
//! state decomposes exactly into embedding, head and MLP contributions.

use super::config::ModelConfig;
use super::params::{BlockOffsets, Layout};
use super::scalar::{matmul, matmul_nt, matmul_tn_acc, Scalar};

pub const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Interception points at the final position of a single-sequence pass.
/// Layers are 1-based for head and MLP outputs; `residual` sees h_ℓ for
/// ℓ = 0..=L, after the block has been applied.
pub trait ForwardHook<T> {
    fn heads(&mut self, _layer: usize, _heads: &mut [Vec<T>]) {}
    fn mlp(&mut self, _layer: usize, _out: &mut [T]) {}
    fn residual(&mut self, _layer: usize, _h: &mut [T]) {}
}

pub struct NoHook;

impl<T> ForwardHook<T> for NoHook {}

/// Final-position record of a pass, after any hook edits.
#[derive(Debug, Clone, Default)]
pub struct RawTrace<T> {
    pub hidden: Vec<Vec<T>>,
    pub heads: Vec<Vec<Vec<T>>>,
    pub mlp: Vec<Vec<T>>,
    pub attention: Vec<Vec<Vec<T>>>,
}

pub struct Inspect<'a, T> {
    pub hook: &'a mut dyn ForwardHook<T>,
    pub trace: &'a mut RawTrace<T>,
    pub attention: bool,
}

/// Activations kept for the backward pass, one per block.
#[derive(Debug, Default)]
pub struct BlockCache<T> {
    h_in: Vec<T>,
    n1: Vec<T>,
    inv1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    att: Vec<T>,
    z: Vec<T>,
    h_mid: Vec<T>,
    n2: Vec<T>,
    inv2: Vec<T>,
    u: Vec<T>,
    tanh: Vec<T>,
    act: Vec<T>,
}

/// tanh through one exponential; saturates correctly when exp overflows.
fn fast_tanh<T: Scalar>(x: T) -> T {
    let two = T::of(2.0);
    T::one() - two / ((two * x).exp() + T::one())
}

/// tanh of the GELU argument, c·(u + a·u³).
fn gelu_tanh<T: Scalar>(u: T) -> T {
    fast_tanh(T::of(GELU_C) * (u + T::of(GELU_A) * u * u * u))
}

/// Tanh-approximated GELU given `t = gelu_tanh(u)`.
fn gelu<T: Scalar>(u: T, t: T) -> T {
    T::of(0.5) * u * (T::one() + t)
}

fn gelu_grad<T: Scalar>(u: T, t: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + t) + half * u * (T::one() - t * t) * T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * u * u)
}

fn rmsnorm<T: Scalar>(x: &[T], g: &[T], d: usize, out: &mut [T], inv: &mut [T]) {
    for (r, (row, o)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let ms = row.iter().map(|v| v.f64() * v.f64()).sum::<f64>() / d as f64;
        let iv = 1.0 / (ms + RMS_EPS).sqrt();
        inv[r] = T::of(iv);
        let iv = T::of(iv);
        for j in 0..d {
            o[j] = row[j] * iv * g[j];
        }
    }
}

/// Accumulates dx and dg for y = g ⊙ x · inv.
fn rmsnorm_backward<T: Scalar>(x: &[T], g: &[T], inv: &[T], dy: &[T], d: usize, dx: &mut [T], dg: &mut [T]) {
    for r in 0..inv.len() {
        let row = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let iv = inv[r].f64();
        let mut dot = 0.0;
        for j in 0..d {
            dot += (g[j] * dyr[j] * row[j]).f64();
            dg[j] += dyr[j] * row[j] * inv[r];
        }
        let coef = T::of(dot * iv * iv * iv / d as f64);
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            dxr[j] += g[j] * dyr[j] * inv[r] - row[j] * coef;
        }
    }
}

/// Causal multi-head attention for `b` sequences of length `t`. Writes
/// softmax weights into `att` (b·K·t·t) and concatenated head outputs into `z`.
#[allow(clippy::too_many_arguments)]
fn attention<T: Scalar>(cfg: &ModelConfig, q: &[T], k: &[T], v: &[T], b: usize, t: usize, att: &mut [T], z: &mut [T]) {
    let (d, nh, dh) = (cfg.dim, cfg.heads, cfg.head_dim());
    let scale = T::of(1.0 / (dh as f64).sqrt());
    for bi in 0..b {
        for hk in 0..nh {
            let base = bi * t * d + hk * dh;
            let a = &mut att[(bi * nh + hk) * t * t..(bi * nh + hk + 1) * t * t];
            T::gemm_raw(t, dh, t, scale, &q[base..], d, 1, &k[base..], 1, d, T::zero(), a, t, 1);
            for i in 0..t {
                let row = &mut a[i * t..(i + 1) * t];
                let mx = row[..=i].iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let mut sum = T::zero();
                for x in row[..=i].iter_mut() {
                    *x = (*x - mx).exp();
                    sum += *x;
                }
                for x in row[..=i].iter_mut() {
                    *x /= sum;
                }
                for x in row[i + 1..].iter_mut() {
                    *x = T::zero();
                }
            }
            T::gemm_raw(t, t, dh, T::one(), a, t, 1, &v[base..], d, 1, T::zero(), &mut z[base..], d, 1);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    cfg: &ModelConfig,
    c: &BlockCache<T>,
    dz: &[T],
    b: usize,
    t: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let (d, nh, dh) = (cfg.dim, cfg.heads, cfg.head_dim());
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut da = vec![T::zero(); t * t];
    for bi in 0..b {
        for hk in 0..nh {
            let base = bi * t * d + hk * dh;
            let a = &c.att[(bi * nh + hk) * t * t..(bi * nh + hk + 1) * t * t];
            T::gemm_raw(t, dh, t, T::one(), &dz[base..], d, 1, &c.v[base..], 1, d, T::zero(), &mut da, t, 1);
            T::gemm_raw(t, t, dh, T::one(), a, 1, t, &dz[base..], d, 1, T::zero(), &mut dv[base..], d, 1);
            for i in 0..t {
                let ar = &a[i * t..(i + 1) * t];
                let dr = &mut da[i * t..(i + 1) * t];
                let mut dot = T::zero();
                for j in 0..=i {
                    dot += ar[j] * dr[j];
                }
                for j in 0..=i {
                    dr[j] = ar[j] * (dr[j] - dot) * scale;
                }
                for x in dr[i + 1..].iter_mut() {
                    *x = T::zero();
                }
            }
            T::gemm_raw(t, t, dh, T::one(), &da, t, 1, &c.k[base..], d, 1, T::zero(), &mut dq[base..], d, 1);
            T::gemm_raw(t, t, dh, T::one(), &da, 1, t, &c.q[base..], d, 1, T::zero(), &mut dk[base..], d, 1);
        }
    }
}

/// Runs `b` sequences of length `t` through the stack and returns the final
/// residual states (b·t × d). `cache` collects what `backward` needs;
/// `inspect` (single sequence only) applies hooks and records the trace.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar>(
    cfg: &ModelConfig,
    lay: &Layout,
    w: &[T],
    tokens: &[u32],
    b: usize,
    t: usize,
    mut cache: Option<&mut Vec<BlockCache<T>>>,
    mut inspect: Option<Inspect<'_, T>>,
) -> Vec<T> {
    let (d, nh, dh, f) = (cfg.dim, cfg.heads, cfg.head_dim(), cfg.mlp_dim());
    let rows = b * t;
    assert_eq!(tokens.len(), rows, "token buffer does not match b·t");
    assert!(inspect.is_none() || b == 1, "inspection requires a single sequence");
    let last = t - 1;

    let mut h = vec![T::zero(); rows * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % t;
        let e = &w[lay.tok_emb + tok as usize * d..][..d];
        let p = &w[lay.pos_emb + pos * d..][..d];
        for j in 0..d {
            h[r * d + j] = e[j] + p[j];
        }
    }
    if let Some(ins) = inspect.as_mut() {
        ins.hook.residual(0, &mut h[last * d..rows * d]);
        ins.trace.hidden.push(h[last * d..rows * d].to_vec());
    }

    for (li, blk) in lay.blocks.iter().enumerate() {
        let layer = li + 1;
        let BlockOffsets { norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2 } = *blk;
        let mut n1 = vec![T::zero(); rows * d];
        let mut inv1 = vec![T::zero(); rows];
        rmsnorm(&h, &w[norm1..norm1 + d], d, &mut n1, &mut inv1);
        let mut q = vec![T::zero(); rows * d];
        let mut k = vec![T::zero(); rows * d];
        let mut v = vec![T::zero(); rows * d];
        matmul(rows, d, d, &n1, &w[wq..wq + d * d], &mut q, false);
        matmul(rows, d, d, &n1, &w[wk..wk + d * d], &mut k, false);
        matmul(rows, d, d, &n1, &w[wv..wv + d * d], &mut v, false);
        let mut att = vec![T::zero(); b * nh * t * t];
        let mut z = vec![T::zero(); rows * d];
        attention(cfg, &q, &k, &v, b, t, &mut att, &mut z);

        let mut h_mid = h.clone();
        matmul(rows, d, d, &z, &w[wo..wo + d * d], &mut h_mid, true);
        if let Some(ins) = inspect.as_mut() {
            let zl = &z[last * d..rows * d];
            let mut heads: Vec<Vec<T>> = (0..nh)
                .map(|hk| {
                    let mut a = vec![T::zero(); d];
                    matmul(1, dh, d, &zl[hk * dh..(hk + 1) * dh], &w[wo + hk * dh * d..wo + (hk + 1) * dh * d], &mut a, false);
                    a
                })
                .collect();
            ins.hook.heads(layer, &mut heads);
            let mut sum = vec![T::zero(); d];
            for a in &heads {
                for j in 0..d {
                    sum[j] += a[j];
                }
            }
            for j in 0..d {
                h_mid[last * d + j] = h[last * d + j] + sum[j];
            }
            if ins.attention {
                ins.trace
                    .attention
                    .push((0..nh).map(|hk| att[(hk * t + last) * t..(hk * t + last + 1) * t].to_vec()).collect());
            }
            ins.trace.heads.push(heads);
        }

        let mut n2 = vec![T::zero(); rows * d];
        let mut inv2 = vec![T::zero(); rows];
        rmsnorm(&h_mid, &w[norm2..norm2 + d], d, &mut n2, &mut inv2);
        let mut u = vec![T::zero(); rows * f];
        for r in 0..rows {
            u[r * f..(r + 1) * f].copy_from_slice(&w[b1..b1 + f]);
        }
        matmul(rows, d, f, &n2, &w[w1..w1 + d * f], &mut u, true);
        let tanh: Vec<T> = u.iter().map(|&x| gelu_tanh(x)).collect();
        let act: Vec<T> = u.iter().zip(&tanh).map(|(&x, &t)| gelu(x, t)).collect();
        let mut m = vec![T::zero(); rows * d];
        for r in 0..rows {
            m[r * d..(r + 1) * d].copy_from_slice(&w[b2..b2 + d]);
        }
        matmul(rows, f, d, &act, &w[w2..w2 + f * d], &mut m, true);
        if let Some(ins) = inspect.as_mut() {
            ins.hook.mlp(layer, &mut m[last * d..rows * d]);
            ins.trace.mlp.push(m[last * d..rows * d].to_vec());
        }
        let h_in = std::mem::replace(&mut h, h_mid.clone());
        for (x, y) in h.iter_mut().zip(&m) {
            *x += *y;
        }
        if let Some(ins) = inspect.as_mut() {
            ins.hook.residual(layer, &mut h[last * d..rows * d]);
            ins.trace.hidden.push(h[last * d..rows * d].to_vec());
        }
        if let Some(c) = cache.as_mut() {
            c.push(BlockCache { h_in, n1, inv1, q, k, v, att, z, h_mid, n2, inv2, u, tanh, act });
        }
    }
    h
}

/// Logits (rows × V) for the selected residual rows.
pub fn logits<T: Scalar>(cfg: &ModelConfig, lay: &Layout, w: &[T], h: &[T], rows: &[usize]) -> Vec<T> {
    let (d, vsz) = (cfg.dim, cfg.vocab);
    let mut x = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        x.extend_from_slice(&h[r * d..(r + 1) * d]);
    }
    let mut out = vec![T::zero(); rows.len() * vsz];
    matmul(rows.len(), d, vsz, &x, &w[lay.unembed..lay.unembed + d * vsz], &mut out, false);
    out
}

/// Back-propagates `dh` (gradient w.r.t. the final residual, b·t × d) through
/// the stack, accumulating into `grad` (same layout as the weights). The
/// unembedding gradient is the caller's responsibility.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    cfg: &ModelConfig,
    lay: &Layout,
    w: &[T],
    tokens: &[u32],
    b: usize,
    t: usize,
    caches: &[BlockCache<T>],
    mut dh: Vec<T>,
    grad: &mut [T],
) {
    let (d, f) = (cfg.dim, cfg.mlp_dim());
    let rows = b * t;
    for (blk, c) in lay.blocks.iter().zip(caches).rev() {
        let BlockOffsets { norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2 } = *blk;
        // h = h_mid + W2ᵀ-path
        matmul_tn_acc(rows, f, d, &c.act, &dh, &mut grad[w2..w2 + f * d]);
        for r in 0..rows {
            for j in 0..d {
                grad[b2 + j] += dh[r * d + j];
            }
        }
        let mut du = vec![T::zero(); rows * f];
        matmul_nt(rows, d, f, &dh, &w[w2..w2 + f * d], &mut du, false);
        for ((g, &u), &t) in du.iter_mut().zip(&c.u).zip(&c.tanh) {
            *g *= gelu_grad(u, t);
        }
        matmul_tn_acc(rows, d, f, &c.n2, &du, &mut grad[w1..w1 + d * f]);
        for r in 0..rows {
            for j in 0..f {
                grad[b1 + j] += du[r * f + j];
            }
        }
        let mut dn2 = vec![T::zero(); rows * d];
        matmul_nt(rows, f, d, &du, &w[w1..w1 + d * f], &mut dn2, false);
        let mut dh_mid = dh;
        {
            let (gw, gg) = (&w[norm2..norm2 + d], &mut grad[norm2..norm2 + d]);
            rmsnorm_backward(&c.h_mid, gw, &c.inv2, &dn2, d, &mut dh_mid, gg);
        }
        // h_mid = h_in + z·Wo
        matmul_tn_acc(rows, d, d, &c.z, &dh_mid, &mut grad[wo..wo + d * d]);
        let mut dz = vec![T::zero(); rows * d];
        matmul_nt(rows, d, d, &dh_mid, &w[wo..wo + d * d], &mut dz, false);
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); rows * d];
        let mut dv = vec![T::zero(); rows * d];
        attention_backward(cfg, c, &dz, b, t, &mut dq, &mut dk, &mut dv);
        matmul_tn_acc(rows, d, d, &c.n1, &dq, &mut grad[wq..wq + d * d]);
        matmul_tn_acc(rows, d, d, &c.n1, &dk, &mut grad[wk..wk + d * d]);
        matmul_tn_acc(rows, d, d, &c.n1, &dv, &mut grad[wv..wv + d * d]);
        let mut dn1 = vec![T::zero(); rows * d];
        matmul_nt(rows, d, d, &dq, &w[wq..wq + d * d], &mut dn1, false);
        matmul_nt(rows, d, d, &dk, &w[wk..wk + d * d], &mut dn1, true);
        matmul_nt(rows, d, d, &dv, &w[wv..wv + d * d], &mut dn1, true);
        let mut dh_in = dh_mid;
        {
            let (gw, gg) = (&w[norm1..norm1 + d], &mut grad[norm1..norm1 + d]);
            rmsnorm_backward(&c.h_in, gw, &c.inv1, &dn1, d, &mut dh_in, gg);
        }
        dh = dh_in;
    }
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % t;
        for j in 0..d {
            grad[lay.tok_emb + tok as usize * d + j] += dh[r * d + j];
            grad[lay.pos_emb + pos * d + j] += dh[r * d + j];
        }
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

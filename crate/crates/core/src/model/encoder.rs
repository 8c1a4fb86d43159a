//! Pre-norm transformer encoder: forward pass with activation caching and the
//! matching reverse-mode gradient.
//!
//! ```text
//! x0 = drop(tok[ids] + pos[0..L])
//! per layer:
//!   x1 = x + drop(MHA(LN1(x), mask) · Wo + bo)
//!   x2 = x1 + drop(GELU(LN2(x1) · W1 + b1) · W2 + b2)
//! logits = x_last[0] · Wc + bc
//! ```
//!
//! Masked keys get an additive `-1e9` score, so padded positions never feed
//! the rows of real tokens.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{accumulate_col_sums, add_row_bias, gemm, Mat, MatMut, Scalar};
use super::params::{LayerParams, Parameters};
use super::{ModelError, NUM_CLASSES};
use crate::windowing::Window;

pub const MASK_PENALTY: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// Forward-pass mode. Dropout draws from the supplied stream in training.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    norm1: NormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[heads, L, L]` attention probabilities.
    probs: Vec<T>,
    ctx: Vec<T>,
    drop_attn: Option<Vec<T>>,
    norm2: NormCache<T>,
    b: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
    drop_ffn: Option<Vec<T>>,
}

/// Activations saved by [`forward_cached`] for [`backward`].
pub struct ForwardCache<T> {
    ids: Vec<u32>,
    drop_embed: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    cls: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Attention probabilities of `layer`, `[heads, L, L]`, row-major.
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }
}

fn check_window<T: Scalar>(params: &Parameters<T>, window: &Window) -> Result<(), ModelError> {
    let cfg = &params.config;
    let len = window.ids.len();
    if len == 0 || len != window.mask.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "window ids/mask lengths {} / {}",
            len,
            window.mask.len()
        )));
    }
    if len > cfg.max_pos {
        return Err(ModelError::ShapeMismatch(format!(
            "window length {len} exceeds max_pos {}",
            cfg.max_pos
        )));
    }
    if !window.mask[0] {
        return Err(ModelError::ShapeMismatch("first position is masked".into()));
    }
    if let Some(&id) = window.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::IdOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let dn = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns dx, accumulating dgain and dbias.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    d: usize,
) -> Vec<T> {
    let rows = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let dn = T::from_f64(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dgain[j] = dgain[j] + dyr[j] * xh[j];
            dbias[j] = dbias[j] + dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
        for j in 0..d {
            dx[r * d + j] = cache.rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (
        T::from_f64((2.0 / std::f64::consts::PI).sqrt()),
        T::from_f64(0.044715),
    )
}

fn gelu<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Inverted dropout: returns per-element multipliers (0 or 1/(1-p)).
fn dropout_mask<T: Scalar>(len: usize, rate: f64, mode: &mut Mode<'_>) -> Option<Vec<T>> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = T::from_f64(1.0 / (1.0 - rate));
            Some(
                (0..len)
                    .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                    .collect(),
            )
        }
        _ => None,
    }
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v = *v * *k;
        }
    }
}

fn linear<T: Scalar>(x: &[T], rows: usize, w: &[T], bias: &[T], d_in: usize, d_out: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * d_out];
    gemm(
        T::one(),
        Mat::new(x, rows, d_in),
        Mat::new(w, d_in, d_out),
        T::zero(),
        MatMut::new(&mut out, rows, d_out),
    );
    add_row_bias(&mut out, bias);
    out
}

/// Gradient of `y = x·W + b`: accumulates dW, db and returns dx.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    rows: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    gemm(
        T::one(),
        Mat::new(x, rows, d_in).t(),
        Mat::new(dy, rows, d_out),
        T::one(),
        MatMut::new(dw, d_in, d_out),
    );
    accumulate_col_sums(db, dy);
    let mut dx = vec![T::zero(); rows * d_in];
    gemm(
        T::one(),
        Mat::new(dy, rows, d_out),
        Mat::new(w, d_in, d_out).t(),
        T::zero(),
        MatMut::new(&mut dx, rows, d_in),
    );
    dx
}

fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    mask: &[bool],
    heads: usize,
    d: usize,
) -> (Vec<T>, Vec<T>) {
    let l = mask.len();
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let penalty = T::from_f64(MASK_PENALTY);
    let mut probs = vec![T::zero(); heads * l * l];
    let mut ctx = vec![T::zero(); l * d];
    for h in 0..heads {
        let p = &mut probs[h * l * l..(h + 1) * l * l];
        gemm(
            scale,
            Mat::new(q, l, d).cols(h * dh, dh),
            Mat::new(k, l, d).cols(h * dh, dh).t(),
            T::zero(),
            MatMut::new(p, l, l),
        );
        for row in p.chunks_exact_mut(l) {
            for (s, &m) in row.iter_mut().zip(mask) {
                if !m {
                    *s = *s + penalty;
                }
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum = sum + *s;
            }
            for s in row.iter_mut() {
                *s = *s / sum;
            }
        }
        gemm(
            T::one(),
            Mat::new(p, l, l),
            Mat::new(v, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut ctx, l, d).cols(h * dh, dh),
        );
    }
    (probs, ctx)
}

/// Runs the encoder and keeps every activation needed by [`backward`].
pub fn forward_cached<T: Scalar>(
    params: &Parameters<T>,
    window: &Window,
    mode: &mut Mode<'_>,
) -> Result<([T; NUM_CLASSES], ForwardCache<T>), ModelError> {
    check_window(params, window)?;
    let cfg = &params.config;
    let (l, d, f) = (window.ids.len(), cfg.d_model, cfg.d_ff);

    let mut x = vec![T::zero(); l * d];
    for (i, &id) in window.ids.iter().enumerate() {
        let tok = &params.token_embedding[id as usize * d..(id as usize + 1) * d];
        let pos = &params.position_embedding[i * d..(i + 1) * d];
        for j in 0..d {
            x[i * d + j] = tok[j] + pos[j];
        }
    }
    let drop_embed = dropout_mask(l * d, cfg.dropout_rate, mode);
    apply_mask(&mut x, &drop_embed);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &params.layers {
        let (a, norm1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias, d);
        let q = linear(&a, l, &lp.wq, &lp.bq, d, d);
        let k = linear(&a, l, &lp.wk, &lp.bk, d, d);
        let v = linear(&a, l, &lp.wv, &lp.bv, d, d);
        let (probs, ctx) = attention_forward(&q, &k, &v, &window.mask, cfg.n_heads, d);
        let mut o = linear(&ctx, l, &lp.wo, &lp.bo, d, d);
        let drop_attn = dropout_mask(l * d, cfg.dropout_rate, mode);
        apply_mask(&mut o, &drop_attn);
        for (xi, oi) in x.iter_mut().zip(&o) {
            *xi = *xi + *oi;
        }

        let (b, norm2) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias, d);
        let pre_act = linear(&b, l, &lp.w1, &lp.b1, d, f);
        let act: Vec<T> = pre_act.iter().map(|&z| gelu(z)).collect();
        let mut y = linear(&act, l, &lp.w2, &lp.b2, f, d);
        let drop_ffn = dropout_mask(l * d, cfg.dropout_rate, mode);
        apply_mask(&mut y, &drop_ffn);
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = *xi + *yi;
        }
        layers.push(LayerCache {
            norm1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            drop_attn,
            norm2,
            b,
            pre_act,
            act,
            drop_ffn,
        });
    }

    let cls = x[..d].to_vec();
    let mut logits = [T::zero(); NUM_CLASSES];
    for (c, out) in logits.iter_mut().enumerate() {
        let mut acc = params.classifier_bias[c];
        for j in 0..d {
            acc = acc + cls[j] * params.classifier_weight[j * NUM_CLASSES + c];
        }
        *out = acc;
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok((
        logits,
        ForwardCache {
            ids: window.ids.clone(),
            drop_embed,
            layers,
            cls,
        },
    ))
}

fn attention_backward<T: Scalar>(
    dctx: &[T],
    lc: &LayerCache<T>,
    heads: usize,
    l: usize,
    d: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); l * d];
    let mut dk = vec![T::zero(); l * d];
    let mut dv = vec![T::zero(); l * d];
    let mut dp = vec![T::zero(); l * l];
    for h in 0..heads {
        let p = &lc.probs[h * l * l..(h + 1) * l * l];
        // dV_h = P^T dctx_h
        gemm(
            T::one(),
            Mat::new(p, l, l).t(),
            Mat::new(dctx, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut dv, l, d).cols(h * dh, dh),
        );
        // dP = dctx_h V_h^T
        gemm(
            T::one(),
            Mat::new(dctx, l, d).cols(h * dh, dh),
            Mat::new(&lc.v, l, d).cols(h * dh, dh).t(),
            T::zero(),
            MatMut::new(&mut dp, l, l),
        );
        // softmax backward, in place: dS = P ⊙ (dP - rowsum(dP ⊙ P))
        for (dpr, pr) in dp.chunks_exact_mut(l).zip(p.chunks_exact(l)) {
            let dot = dpr.iter().zip(pr).map(|(&a, &b)| a * b).sum::<T>();
            for (g, &pv) in dpr.iter_mut().zip(pr) {
                *g = pv * (*g - dot);
            }
        }
        gemm(
            scale,
            Mat::new(&dp, l, l),
            Mat::new(&lc.k, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut dq, l, d).cols(h * dh, dh),
        );
        gemm(
            scale,
            Mat::new(&dp, l, l).t(),
            Mat::new(&lc.q, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut dk, l, d).cols(h * dh, dh),
        );
    }
    (dq, dk, dv)
}

/// Accumulates into `grads` the gradient of `dot(dlogits, logits)` with
/// respect to every parameter, given the cache of the matching forward pass.
pub fn backward<T: Scalar>(
    params: &Parameters<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T; NUM_CLASSES],
    grads: &mut Parameters<T>,
) {
    let cfg = &params.config;
    let (l, d, f) = (cache.ids.len(), cfg.d_model, cfg.d_ff);

    let mut dx = vec![T::zero(); l * d];
    for j in 0..d {
        let mut acc = T::zero();
        for c in 0..NUM_CLASSES {
            grads.classifier_weight[j * NUM_CLASSES + c] =
                grads.classifier_weight[j * NUM_CLASSES + c] + cache.cls[j] * dlogits[c];
            acc = acc + params.classifier_weight[j * NUM_CLASSES + c] * dlogits[c];
        }
        dx[j] = acc;
    }
    for c in 0..NUM_CLASSES {
        grads.classifier_bias[c] = grads.classifier_bias[c] + dlogits[c];
    }

    for (idx, lc) in cache.layers.iter().enumerate().rev() {
        let lp: &LayerParams<T> = &params.layers[idx];
        let lg = &mut grads.layers[idx];

        // feed-forward block
        let mut dy = dx.clone();
        apply_mask(&mut dy, &lc.drop_ffn);
        let mut dact = linear_backward(&dy, &lc.act, &lp.w2, &mut lg.w2, &mut lg.b2, l, f, d);
        for (g, &z) in dact.iter_mut().zip(&lc.pre_act) {
            *g = *g * gelu_grad(z);
        }
        let db = linear_backward(&dact, &lc.b, &lp.w1, &mut lg.w1, &mut lg.b1, l, d, f);
        let dnorm = layer_norm_backward(&db, &lc.norm2, &lp.ln2_gain, &mut lg.ln2_gain, &mut lg.ln2_bias, d);
        for (a, b) in dx.iter_mut().zip(&dnorm) {
            *a = *a + *b;
        }

        // attention block
        let mut dout = dx.clone();
        apply_mask(&mut dout, &lc.drop_attn);
        let dctx = linear_backward(&dout, &lc.ctx, &lp.wo, &mut lg.wo, &mut lg.bo, l, d, d);
        let (dq, dk, dv) = attention_backward(&dctx, lc, cfg.n_heads, l, d);
        let mut da = linear_backward(&dq, &lc.a, &lp.wq, &mut lg.wq, &mut lg.bq, l, d, d);
        for (src, w, gw, gb) in [
            (&dk, &lp.wk, &mut lg.wk, &mut lg.bk),
            (&dv, &lp.wv, &mut lg.wv, &mut lg.bv),
        ] {
            let part = linear_backward(src, &lc.a, w, gw, gb, l, d, d);
            for (a, b) in da.iter_mut().zip(&part) {
                *a = *a + *b;
            }
        }
        let dnorm = layer_norm_backward(&da, &lc.norm1, &lp.ln1_gain, &mut lg.ln1_gain, &mut lg.ln1_bias, d);
        for (a, b) in dx.iter_mut().zip(&dnorm) {
            *a = *a + *b;
        }
    }

    apply_mask(&mut dx, &cache.drop_embed);
    for (i, &id) in cache.ids.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        let tok = &mut grads.token_embedding[id as usize * d..(id as usize + 1) * d];
        for (g, v) in tok.iter_mut().zip(row) {
            *g = *g + *v;
        }
        let pos = &mut grads.position_embedding[i * d..(i + 1) * d];
        for (g, v) in pos.iter_mut().zip(row) {
            *g = *g + *v;
        }
    }
}

/// Logits of one window.
pub fn forward<T: Scalar>(
    params: &Parameters<T>,
    window: &Window,
    mode: &mut Mode<'_>,
) -> Result<[T; NUM_CLASSES], ModelError> {
    forward_cached(params, window, mode).map(|(logits, _)| logits)
}

//! Differentiable layers built on the tape: masked attention, variable
//! selection and inverted dropout.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::mask::MaskMatrix;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// `softmax((x Wq)(x Wk)^T / sqrt(d) (.) M)` with `d` the key width.
pub fn attention_weights(
    g: &mut Graph,
    x: Var,
    wq: Var,
    wk: Var,
    mask: Option<&MaskMatrix>,
) -> Result<Var> {
    let d = g.value(wk).cols();
    if g.value(wq).cols() != d {
        return Err(Error::shape(format!(
            "query width {} != key width {d}",
            g.value(wq).cols()
        )));
    }
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let logits = g.matmul_t(q, k)?;
    let scaled = g.scale(logits, 1.0 / (d as f64).sqrt());
    g.softmax(scaled, mask)
}

/// Masked self-attention `Z(X; Wq, Wk, Wv, M) = A (X Wv)`.
/// Returns the output and the attention weights `A`.
pub fn self_attention(
    g: &mut Graph,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    mask: Option<&MaskMatrix>,
) -> Result<(Var, Var)> {
    let t = g.value(x).rows();
    if let Some(m) = mask {
        if m.shape() != (t, t) {
            return Err(Error::shape(format!(
                "mask {:?} for a sequence of length {t}",
                m.shape()
            )));
        }
    }
    let a = attention_weights(g, x, wq, wk, mask)?;
    let v = g.matmul(x, wv)?;
    let out = g.matmul(a, v)?;
    Ok((out, a))
}

/// Parameters of one variable selection network scoring `n` rows.
#[derive(Debug, Clone, Copy)]
pub struct VsnParams {
    /// `(n * d) x hidden`
    pub w1: Var,
    /// `1 x hidden`
    pub b1: Var,
    /// `hidden x n`
    pub w2: Var,
    /// `1 x n`
    pub b2: Var,
}

/// Weighted average of the rows of `h` (`n x d`). The weights are the softmax
/// of a one-hidden-layer ELU network applied to the flattened input, one score
/// per row. Returns the `1 x d` summary and the `1 x n` weights.
pub fn vsn(g: &mut Graph, h: Var, p: &VsnParams) -> Result<(Var, Var)> {
    let (n, d) = g.value(h).shape();
    if g.value(p.w2).cols() != n {
        return Err(Error::shape(format!(
            "variable selection scores {} rows, input has {n}",
            g.value(p.w2).cols()
        )));
    }
    let flat = g.reshape(h, 1, n * d)?;
    let pre = g.matmul(flat, p.w1)?;
    let pre = g.add_row(pre, p.b1)?;
    let hidden = g.elu(pre);
    let scores = g.matmul(hidden, p.w2)?;
    let scores = g.add_row(scores, p.b2)?;
    let weights = g.softmax(scores, None)?;
    let out = g.matmul(weights, h)?;
    Ok((out, weights))
}

/// Inverted dropout: zeroes each entry with probability `rate` and scales the
/// survivors by `1 / (1 - rate)`. Identity when `rng` is `None`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut SplitMix64>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let (r, c) = g.value(x).shape();
    let mask = Tensor::from_fn(r, c, |_, _| if rng.next_f64() < rate { 0.0 } else { keep });
    g.mul_const(x, mask)
}

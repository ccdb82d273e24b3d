//! Bidirectional cross-domain attention fusion and the gamma heads.

use sfae_autodiff::{layer_norm, Var};

use super::layers::{linear, linear_layout, norm_layout};
use super::{check_stage, Bound, NetConfig, ParamSpec};
use crate::error::{Error, Result};

pub(crate) fn mha_layout(specs: &mut Vec<ParamSpec>, p: &str, d: usize) {
    linear_layout(specs, &format!("{p}.q"), d, d, true, false);
    // a key bias shifts every score in a row equally and cancels in softmax
    linear_layout(specs, &format!("{p}.k"), d, d, false, false);
    linear_layout(specs, &format!("{p}.v"), d, d, true, false);
    linear_layout(specs, &format!("{p}.o"), d, d, true, false);
}

fn ffn_layout(specs: &mut Vec<ParamSpec>, p: &str, d: usize, expansion: usize) {
    norm_layout(specs, &format!("{p}.ln"), d);
    linear_layout(specs, &format!("{p}.fc1"), d, expansion * d, true, false);
    linear_layout(specs, &format!("{p}.fc2"), expansion * d, d, true, false);
}

pub(crate) fn fusion_layout(specs: &mut Vec<ParamSpec>, cfg: &NetConfig) {
    let d = cfg.d_model();
    norm_layout(specs, "fusion.ln_spa", d);
    norm_layout(specs, "fusion.ln_freq", d);
    mha_layout(specs, "fusion.mha_spa", d);
    mha_layout(specs, "fusion.mha_freq", d);
    ffn_layout(specs, "fusion.ffn_spa", d, cfg.ffn_expansion);
    ffn_layout(specs, "fusion.ffn_freq", d, cfg.ffn_expansion);
}

pub(crate) fn heads_layout(specs: &mut Vec<ParamSpec>, cfg: &NetConfig) {
    let d = cfg.d_model();
    linear_layout(specs, "head_spa.fc1", d, d, true, false);
    linear_layout(specs, "head_spa.fc2", d, cfg.in_channels, true, true);
    linear_layout(specs, "head_freq.fc1", d, d, true, false);
    linear_layout(specs, "head_freq.fc2", d, d, true, true);
}

/// `[B, d, h, w]` → `[B, h·w, d]`: positions become tokens.
pub fn to_tokens(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Config(format!("expected a [B, d, h, w] feature map, got {s:?}")));
    }
    Ok(x.reshape(&[s[0], s[1], s[2] * s[3]])?.permute(&[0, 2, 1])?)
}

/// Inverse of [`to_tokens`].
pub fn from_tokens(t: Var<'_>, h: usize, w: usize) -> Result<Var<'_>> {
    let s = t.shape();
    Ok(t.permute(&[0, 2, 1])?.reshape(&[s[0], s[2], h, w])?)
}

/// `[B, L, d]` → `[B, heads, L, d / heads]`.
fn split_heads(x: Var<'_>, heads: usize) -> Result<Var<'_>> {
    let s = x.shape();
    Ok(x.reshape(&[s[0], s[1], heads, s[2] / heads])?.permute(&[0, 2, 1, 3])?)
}

/// Scaled dot-product attention over token sequences `[B, L, d]`.
/// Returns the projected output and the attention weights
/// `[B, heads, Lq, Lk]`.
pub(crate) fn mha_tokens<'t>(
    p: &Bound<'_, 't>,
    prefix: &str,
    heads: usize,
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (qs, ks) = (q.shape(), k.shape());
    let d = qs[2];
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("embedding {d} is not divisible by {heads} heads")));
    }
    if ks != v.shape() || ks[2] != d || ks[0] != qs[0] {
        return Err(Error::Config(format!(
            "attention shapes disagree: q {qs:?}, k {ks:?}, v {:?}",
            v.shape()
        )));
    }
    let q = split_heads(linear(p, &format!("{prefix}.q"), q)?, heads)?;
    let k = split_heads(linear(p, &format!("{prefix}.k"), k)?, heads)?;
    let v = split_heads(linear(p, &format!("{prefix}.v"), v)?, heads)?;
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let scores = q.matmul(k.permute(&[0, 1, 3, 2])?)?.mul_scalar(scale);
    let weights = scores.softmax();
    let out = weights
        .matmul(v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[qs[0], qs[1], d])?;
    Ok((linear(p, &format!("{prefix}.o"), out)?, weights))
}

/// Multi-head attention between feature maps; tokens are spatial
/// positions, channels the embedding.
pub fn mha<'t>(
    p: &Bound<'_, 't>,
    prefix: &str,
    heads: usize,
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
) -> Result<Var<'t>> {
    Ok(mha_with_weights(p, prefix, heads, q, k, v)?.0)
}

/// [`mha`] also returning the attention weights `[B, heads, Lq, Lk]`.
pub fn mha_with_weights<'t>(
    p: &Bound<'_, 't>,
    prefix: &str,
    heads: usize,
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let s = q.shape();
    let (out, w) = mha_tokens(p, prefix, heads, to_tokens(q)?, to_tokens(k)?, to_tokens(v)?)?;
    Ok((from_tokens(out, s[2], s[3])?, w))
}

fn ln<'t>(p: &Bound<'_, 't>, name: &str, x: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let g = p.get(&format!("{name}.g"))?;
    let b = p.get(&format!("{name}.b"))?;
    Ok(layer_norm(x, Some(g), Some(b), eps)?)
}

fn ffn_residual<'t>(p: &Bound<'_, 't>, prefix: &str, y: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let h = ln(p, &format!("{prefix}.ln"), y, eps)?;
    let h = linear(p, &format!("{prefix}.fc1"), h)?.selu();
    let h = linear(p, &format!("{prefix}.fc2"), h)?;
    Ok(y.add(h)?)
}

/// Each domain queries the other, then a pre-norm feed-forward residual.
pub fn cross_fusion<'t>(
    p: &Bound<'_, 't>,
    cfg: &NetConfig,
    z_spa: Var<'t>,
    z_freq: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let s = z_spa.shape();
    if s != z_freq.shape() || s.len() != 4 {
        return Err(Error::Config(format!(
            "fusion needs equal [B, d, h, w] maps, got {s:?} and {:?}",
            z_freq.shape()
        )));
    }
    let (h, w) = (s[2], s[3]);
    let eps = cfg.norm_eps;
    let ts = to_tokens(z_spa)?;
    let tf = to_tokens(z_freq)?;
    let ns = ln(p, "fusion.ln_spa", ts, eps)?;
    let nf = ln(p, "fusion.ln_freq", tf, eps)?;
    let (as_, _) = mha_tokens(p, "fusion.mha_spa", cfg.mha_heads, ns, nf, nf)?;
    let (af, _) = mha_tokens(p, "fusion.mha_freq", cfg.mha_heads, nf, ns, ns)?;
    let ys = as_.add(ts)?;
    let yf = af.add(tf)?;
    let ys = ffn_residual(p, "fusion.ffn_spa", ys, eps)?;
    let yf = ffn_residual(p, "fusion.ffn_freq", yf, eps)?;
    let zs = from_tokens(ys, h, w)?;
    let zf = from_tokens(yf, h, w)?;
    check_stage("cross fusion", zs)?;
    check_stage("cross fusion", zf)?;
    Ok((zs, zf))
}

/// Predicted gammas: `orig` is `[B, C, 1, 1]`, `freq` is `[B, N·C, 1, 1]`.
#[derive(Clone, Copy)]
pub struct GammaVars<'t> {
    pub orig: Var<'t>,
    pub freq: Var<'t>,
}

fn head<'t>(p: &Bound<'_, 't>, prefix: &str, z: Var<'t>, gamma_max: f64) -> Result<Var<'t>> {
    let b = z.shape()[0];
    let pooled = z.mean(&[2, 3], false)?;
    let h = linear(p, &format!("{prefix}.fc1"), pooled)?.selu();
    let y = linear(p, &format!("{prefix}.fc2"), h)?;
    let out = y.shape()[1];
    Ok(y.tanh().mul_scalar(gamma_max.ln()).exp().reshape(&[b, out, 1, 1])?)
}

/// Pool → linear → SELU → linear, mapped into `[1/γ_max, γ_max]` by
/// `exp(ln γ_max · tanh(y))`.
pub fn gamma_heads<'t>(
    p: &Bound<'_, 't>,
    cfg: &NetConfig,
    z_spa: Var<'t>,
    z_freq: Var<'t>,
) -> Result<GammaVars<'t>> {
    let orig = head(p, "head_spa", z_spa, cfg.gamma_max)?;
    let freq = head(p, "head_freq", z_freq, cfg.gamma_max)?;
    check_stage("gamma heads", orig)?;
    check_stage("gamma heads", freq)?;
    Ok(GammaVars { orig, freq })
}

//! The full enhancement forward pass: band decomposition, network, gamma
//! application in both domains, band summation, and averaging.

use sfae_autodiff::{ExecMode, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::freq::{band_boundaries, decompose};
use crate::net::{forward, Bound, GammaVars, NetConfig, NetParams, MIN_SIDE};

/// `sign(S) · (|S| + ε)^γ`, broadcasting `γ` against `S`.
///
/// `sign` contributes no gradient, so `∂/∂γ = S′ · ln(|S| + ε)`.
pub fn safe_pow<'t>(s: Var<'t>, gamma: Var<'t>, eps: f64) -> Result<Var<'t>> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("safe_pow epsilon must be positive, got {eps}")));
    }
    if let Some(g) = gamma.value().data().iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Domain(format!("safe_pow exponent must be positive, got {g}")));
    }
    Ok(s.sign().mul(s.abs().add_scalar(eps).pow(gamma)?)?)
}

/// [`safe_pow`] on plain tensors.
pub fn safe_pow_tensor(s: &Tensor, gamma: &Tensor, eps: f64) -> Result<Tensor> {
    let tape = Tape::new();
    let out = safe_pow(tape.constant(s.clone()), tape.constant(gamma.clone()), eps)?;
    Ok(out.value().as_ref().clone())
}

/// Spatial path `SafePow(I, γ_orig)` and per-band `SafePow(I_freq,i, γ_freq,i)`
/// on the band-major stack.
pub fn apply_gammas<'t>(
    image: Var<'t>,
    bands: Var<'t>,
    gammas: GammaVars<'t>,
    n_bands: usize,
    eps: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let is = image.shape();
    let bs = bands.shape();
    let (go, gf) = (gammas.orig.shape(), gammas.freq.shape());
    if is.len() != 4 || bs.len() != 4 {
        return Err(Error::Config(format!("expected 4-D image and bands, got {is:?} and {bs:?}")));
    }
    let c = is[1];
    if bs[1] != n_bands * c || gf[1] != n_bands * c || go[1] != c {
        return Err(Error::Config(format!(
            "band count mismatch: image {is:?}, bands {bs:?}, γ_orig {go:?}, γ_freq {gf:?} for {n_bands} bands"
        )));
    }
    let orig = safe_pow(image, gammas.orig, eps)?;
    let freq = safe_pow(bands, gammas.freq, eps)?;
    Ok((orig, freq))
}

/// `Σ_i I′_freq,i` and the average `(I′_orig + Σ_i I′_freq,i) / 2`.
pub fn recombine<'t>(orig: Var<'t>, freq: Var<'t>, n_bands: usize) -> Result<(Var<'t>, Var<'t>)> {
    let os = orig.shape();
    let fs = freq.shape();
    if os.len() != 4 || fs.len() != 4 || fs[1] != n_bands * os[1] || fs[0] != os[0] || fs[2..] != os[2..] {
        return Err(Error::Config(format!(
            "cannot recombine {n_bands} bands {fs:?} with image {os:?}"
        )));
    }
    let band_sum = freq
        .reshape(&[os[0], n_bands, os[1], os[2], os[3]])?
        .sum(&[1], false)?;
    let enhanced = orig.add(band_sum)?.mul_scalar(0.5);
    Ok((band_sum, enhanced))
}

/// Tape-level outputs of one enhancement pass.
pub struct EnhanceVars<'t> {
    pub enhanced: Var<'t>,
    pub orig: Var<'t>,
    pub band_sum: Var<'t>,
    pub gammas: GammaVars<'t>,
}

/// Run the network and the gamma pipeline on a tape. `bands` is the
/// band-major stack of `image`; it enters as a constant.
pub fn enhance_on_tape<'t>(
    p: &Bound<'_, 't>,
    cfg: &NetConfig,
    image: Var<'t>,
    bands: &Tensor,
) -> Result<EnhanceVars<'t>> {
    let bands = image.tape().constant(bands.clone());
    let out = forward(p, cfg, image, bands)?;
    let (orig, freq) = apply_gammas(image, bands, out.gammas, cfg.n_bands, cfg.pow_eps)?;
    let (band_sum, enhanced) = recombine(orig, freq, cfg.n_bands)?;
    Ok(EnhanceVars {
        enhanced,
        orig,
        band_sum,
        gammas: out.gammas,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceOutput {
    pub enhanced: Tensor,
    pub enhanced_orig: Tensor,
    pub enhanced_band_sum: Tensor,
    /// `[B, C, 1, 1]`.
    pub gamma_orig: Tensor,
    /// `[B, N·C, 1, 1]`, band-major.
    pub gamma_freq: Tensor,
}

/// Side length the network runs at for an input side `n`.
pub fn padded_side(n: usize) -> usize {
    n.div_ceil(8).max(MIN_SIDE / 8) * 8
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Extend `[B, C, H, W]` to `[B, C, hp, wp]` at the bottom and right by
/// mirror reflection about the last row and column.
pub fn reflect_pad(x: &Tensor, hp: usize, wp: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || hp < s[2] || wp < s[3] {
        return Err(Error::Config(format!("cannot pad {s:?} to {hp}x{wp}")));
    }
    let (h, w) = (s[2], s[3]);
    let mut out = Vec::with_capacity(s[0] * s[1] * hp * wp);
    for plane in x.data().chunks(h * w) {
        for i in 0..hp {
            let row = &plane[reflect_index(i, h) * w..][..w];
            out.extend((0..wp).map(|j| row[reflect_index(j, w)]));
        }
    }
    Ok(Tensor::new(vec![s[0], s[1], hp, wp], out)?)
}

fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    Ok(x.narrow(2, 0, h)?.narrow(3, 0, w)?)
}

/// End-to-end enhancement of a packed `[B, C, H, W]` image. Sides that are
/// not multiples of 8 are reflect-padded and the outputs cropped back.
pub fn enhance(raw: &Tensor, params: &NetParams, cfg: &NetConfig, mode: ExecMode) -> Result<EnhanceOutput> {
    cfg.validate()?;
    params.check_against(cfg)?;
    let s = raw.shape();
    if s.len() != 4 || s[1] != cfg.in_channels {
        return Err(Error::Config(format!(
            "input shape {s:?} does not match the network's {} input channels",
            cfg.in_channels
        )));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let (hp, wp) = (padded_side(h), padded_side(w));
    let padded = if (hp, wp) == (h, w) {
        raw.clone()
    } else {
        reflect_pad(raw, hp, wp)?
    };
    let spec = band_boundaries(cfg.n_bands, cfg.f_max)?;
    let stacked = decompose(&padded, &spec, mode)?.stacked();

    let per_sample = mode.map_indexed(b, |i| -> Result<[Tensor; 5]> {
        let image = padded.narrow(0, i, 1)?;
        let bands = stacked.narrow(0, i, 1)?;
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = enhance_on_tape(&bound, cfg, tape.constant(image), &bands)?;
        Ok([
            crop(&out.enhanced.value(), h, w)?,
            crop(&out.orig.value(), h, w)?,
            crop(&out.band_sum.value(), h, w)?,
            out.gammas.orig.value().as_ref().clone(),
            out.gammas.freq.value().as_ref().clone(),
        ])
    });
    let mut parts: [Vec<Tensor>; 5] = Default::default();
    for r in per_sample {
        for (dst, t) in parts.iter_mut().zip(r?) {
            dst.push(t);
        }
    }
    let cat = |v: &Vec<Tensor>| -> Result<Tensor> {
        let refs: Vec<&Tensor> = v.iter().collect();
        Ok(Tensor::concat(&refs, 0)?)
    };
    Ok(EnhanceOutput {
        enhanced: cat(&parts[0])?,
        enhanced_orig: cat(&parts[1])?,
        enhanced_band_sum: cat(&parts[2])?,
        gamma_orig: cat(&parts[3])?,
        gamma_freq: cat(&parts[4])?,
    })
}

//! CBAM attention, CBAM residual blocks, and the two convolutional encoders.

use sfae_autodiff::{conv2d, instance_norm, Conv2dParams, Var};

use super::{check_stage, Bound, InitKind, NetConfig, ParamSpec};
use crate::error::{Error, Result};

/// Hidden width of the channel-attention MLP (reduction `min(8, ch)`).
pub(crate) fn cbam_hidden(ch: usize) -> usize {
    (ch / ch.min(8)).max(1)
}

fn push(specs: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, kind: InitKind) {
    specs.push(ParamSpec { name, shape, kind });
}

pub(crate) fn linear_layout(specs: &mut Vec<ParamSpec>, p: &str, din: usize, dout: usize, bias: bool, gate: bool) {
    let kind = if gate {
        InitKind::Gate { fan_in: din }
    } else {
        InitKind::Uniform { fan_in: din }
    };
    push(specs, format!("{p}.w"), vec![din, dout], kind);
    if bias {
        push(specs, format!("{p}.b"), vec![dout], kind);
    }
}

fn conv_layout(specs: &mut Vec<ParamSpec>, p: &str, cin_g: usize, cout: usize, k: usize, bias: bool, gate: bool) {
    let fan_in = cin_g * k * k;
    let kind = if gate {
        InitKind::Gate { fan_in }
    } else {
        InitKind::Uniform { fan_in }
    };
    push(specs, format!("{p}.w"), vec![cout, cin_g, k, k], kind);
    if bias {
        push(specs, format!("{p}.b"), vec![cout], kind);
    }
}

pub(crate) fn norm_layout(specs: &mut Vec<ParamSpec>, p: &str, ch: usize) {
    push(specs, format!("{p}.g"), vec![ch], InitKind::NormScale);
    push(specs, format!("{p}.b"), vec![ch], InitKind::NormShift);
}

pub(crate) fn cbam_layout(specs: &mut Vec<ParamSpec>, p: &str, ch: usize) {
    let hid = cbam_hidden(ch);
    linear_layout(specs, &format!("{p}.ca.fc1"), ch, hid, true, false);
    linear_layout(specs, &format!("{p}.ca.fc2"), hid, ch, true, true);
    conv_layout(specs, &format!("{p}.sa.conv"), 2, 1, 7, true, true);
}

/// Convolutions feeding an instance norm carry no bias: the norm would
/// remove it.
pub(crate) fn resblock_layout(specs: &mut Vec<ParamSpec>, p: &str, cin: usize, cout: usize, stride: usize) {
    conv_layout(specs, &format!("{p}.conv1"), cin, cout, 3, false, false);
    norm_layout(specs, &format!("{p}.in1"), cout);
    conv_layout(specs, &format!("{p}.conv2"), cout, cout, 3, false, false);
    norm_layout(specs, &format!("{p}.in2"), cout);
    cbam_layout(specs, &format!("{p}.cbam"), cout);
    if stride != 1 || cin != cout {
        conv_layout(specs, &format!("{p}.skip"), cin, cout, 1, true, false);
    }
}

pub(crate) fn freq_block_layout(specs: &mut Vec<ParamSpec>, p: &str, d: usize, groups: usize) {
    conv_layout(specs, &format!("{p}.conv1"), d / groups, d, 3, false, false);
    norm_layout(specs, &format!("{p}.in1"), d);
    conv_layout(specs, &format!("{p}.conv2"), d, d, 3, false, false);
    norm_layout(specs, &format!("{p}.in2"), d);
    cbam_layout(specs, &format!("{p}.cbam"), d);
    conv_layout(specs, &format!("{p}.skip"), d, d, 1, true, false);
}

pub(crate) fn spatial_encoder_layout(specs: &mut Vec<ParamSpec>, cfg: &NetConfig) {
    let (c, d) = (cfg.in_channels, cfg.d_model());
    resblock_layout(specs, "enc_spa.b1", c, d, 2);
    resblock_layout(specs, "enc_spa.b2", d, d, 2);
    resblock_layout(specs, "enc_spa.b3", d, d, 2);
}

pub(crate) fn freq_encoder_layout(specs: &mut Vec<ParamSpec>, cfg: &NetConfig) {
    let d = cfg.d_model();
    freq_block_layout(specs, "enc_freq.b1", d, cfg.n_bands);
    resblock_layout(specs, "enc_freq.b2", d, d, 2);
}

pub(crate) fn linear<'t>(p: &Bound<'_, 't>, name: &str, x: Var<'t>) -> Result<Var<'t>> {
    let y = x.matmul(p.get(&format!("{name}.w"))?)?;
    match p.params().position(&format!("{name}.b")) {
        Some(_) => Ok(y.add(p.get(&format!("{name}.b"))?)?),
        None => Ok(y),
    }
}

fn conv<'t>(p: &Bound<'_, 't>, name: &str, x: Var<'t>, stride: usize, groups: usize) -> Result<Var<'t>> {
    let w = p.get(&format!("{name}.w"))?;
    let k = w.shape()[2];
    let bias = match p.params().position(&format!("{name}.b")) {
        Some(_) => Some(p.get(&format!("{name}.b"))?),
        None => None,
    };
    Ok(conv2d(x, w, bias, Conv2dParams::new(stride, k / 2, groups))?)
}

fn norm<'t>(p: &Bound<'_, 't>, name: &str, x: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let g = p.get(&format!("{name}.g"))?;
    let b = p.get(&format!("{name}.b"))?;
    Ok(instance_norm(x, Some(g), Some(b), eps)?)
}

/// Channel then spatial attention gating; output shape equals input shape.
pub fn cbam<'t>(p: &Bound<'_, 't>, prefix: &str, x: Var<'t>) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 4 || s[1] == 0 {
        return Err(Error::Config(format!("cbam expects [B, Ch, h, w], got {s:?}")));
    }
    let (b, ch) = (s[0], s[1]);
    let mlp = |v: Var<'t>| -> Result<Var<'t>> {
        let h = linear(p, &format!("{prefix}.ca.fc1"), v)?.selu();
        linear(p, &format!("{prefix}.ca.fc2"), h)
    };
    let avg = x.mean(&[2, 3], false)?;
    let max = x.max(&[2, 3], false)?;
    let channel_gate = mlp(avg)?.add(mlp(max)?)?.sigmoid().reshape(&[b, ch, 1, 1])?;
    let x = x.mul(channel_gate)?;

    let avg = x.mean(&[1], true)?;
    let max = x.max(&[1], true)?;
    let pooled = x.tape().concat(&[avg, max], 1)?;
    let spatial_gate = conv(p, &format!("{prefix}.sa.conv"), pooled, 1, 1)?.sigmoid();
    Ok(x.mul(spatial_gate)?)
}

fn main_path<'t>(
    p: &Bound<'_, 't>,
    prefix: &str,
    x: Var<'t>,
    strides: (usize, usize),
    groups: usize,
    eps: f64,
) -> Result<Var<'t>> {
    let h = conv(p, &format!("{prefix}.conv1"), x, strides.0, groups)?;
    let h = norm(p, &format!("{prefix}.in1"), h, eps)?.selu();
    let h = conv(p, &format!("{prefix}.conv2"), h, strides.1, 1)?;
    let h = norm(p, &format!("{prefix}.in2"), h, eps)?.selu();
    cbam(p, &format!("{prefix}.cbam"), h)
}

fn residual<'t>(main: Var<'t>, skip: Var<'t>) -> Result<Var<'t>> {
    if main.shape() != skip.shape() {
        return Err(Error::Config(format!(
            "residual shapes differ: main {:?}, skip {:?}",
            main.shape(),
            skip.shape()
        )));
    }
    Ok(main.add(skip)?)
}

/// conv3×3(stride) → IN → SELU → conv3×3 → IN → SELU → CBAM, plus a skip
/// that is the identity or a strided 1×1 projection.
pub fn cbam_resblock<'t>(p: &Bound<'_, 't>, prefix: &str, x: Var<'t>, stride: usize, eps: f64) -> Result<Var<'t>> {
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!("resblock stride must be 1 or 2, got {stride}")));
    }
    let main = main_path(p, prefix, x, (stride, 1), 1, eps)?;
    let skip = match p.params().position(&format!("{prefix}.skip.w")) {
        Some(_) => conv(p, &format!("{prefix}.skip"), x, stride, 1)?,
        None => x,
    };
    residual(main, skip)
}

/// Residual block that downsamples by 4: a band-grouped stride-2 conv, a
/// stride-2 conv, and a stride-4 1×1 skip.
pub fn freq_cbam_resblock<'t>(p: &Bound<'_, 't>, prefix: &str, x: Var<'t>, groups: usize, eps: f64) -> Result<Var<'t>> {
    let main = main_path(p, prefix, x, (2, 2), groups, eps)?;
    let skip = conv(p, &format!("{prefix}.skip"), x, 4, 1)?;
    residual(main, skip)
}

pub fn spatial_encoder<'t>(p: &Bound<'_, 't>, cfg: &NetConfig, image: Var<'t>) -> Result<Var<'t>> {
    let s = image.shape();
    if s.len() != 4 || s[1] != cfg.in_channels {
        return Err(Error::Config(format!(
            "spatial encoder expects [B, {}, H, W], got {s:?}",
            cfg.in_channels
        )));
    }
    cfg.check_size(s[2], s[3])?;
    let mut x = image;
    for (name, stage) in [("enc_spa.b1", "spatial block 1"), ("enc_spa.b2", "spatial block 2"), ("enc_spa.b3", "spatial block 3")] {
        x = cbam_resblock(p, name, x, 2, cfg.norm_eps)?;
        check_stage(stage, x)?;
    }
    Ok(x)
}

pub fn freq_encoder<'t>(p: &Bound<'_, 't>, cfg: &NetConfig, bands: Var<'t>) -> Result<Var<'t>> {
    let s = bands.shape();
    if s.len() != 4 || s[1] != cfg.d_model() {
        return Err(Error::Config(format!(
            "frequency encoder expects [B, {}, H, W], got {s:?}",
            cfg.d_model()
        )));
    }
    cfg.check_size(s[2], s[3])?;
    let x = freq_cbam_resblock(p, "enc_freq.b1", bands, cfg.n_bands, cfg.norm_eps)?;
    check_stage("frequency block 1", x)?;
    let x = cbam_resblock(p, "enc_freq.b2", x, 2, cfg.norm_eps)?;
    check_stage("frequency block 2", x)?;
    Ok(x)
}

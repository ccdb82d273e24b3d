use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layout {
    /// Groups are `[H*W]` planes; affine indexed by channel.
    Instance { channels: usize },
    /// Groups are the last axis; affine indexed by position in the group.
    Layer,
}

pub(crate) struct NormSaved {
    layout: Layout,
    group: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl NormSaved {
    pub fn name(&self) -> &'static str {
        match self.layout {
            Layout::Instance { .. } => "instance_norm",
            Layout::Layer => "layer_norm",
        }
    }

    fn affine_index(&self, flat: usize) -> usize {
        match self.layout {
            Layout::Instance { channels } => (flat / self.group) % channels,
            Layout::Layer => flat % self.group,
        }
    }
}

pub(crate) struct NormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

fn check_affine(op: &'static str, t: Option<&Tensor>, len: usize) -> Result<()> {
    match t {
        Some(t) if t.shape() != [len] => Err(TensorError::mismatch(op, t.shape(), &[len])),
        _ => Ok(()),
    }
}

fn normalize(
    x: &Tensor,
    gamma: Option<&Tensor>,
    beta: Option<&Tensor>,
    eps: f64,
    group: usize,
    layout: Layout,
) -> (Tensor, NormSaved) {
    let n_groups = x.numel() / group;
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = Vec::with_capacity(n_groups);
    for (src, dst) in x.data().chunks(group).zip(xhat.chunks_mut(group)) {
        let mean = src.iter().sum::<f64>() / group as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * is;
        }
        inv_std.push(is);
    }
    let saved = NormSaved {
        layout,
        group,
        xhat,
        inv_std,
    };
    let out: Vec<f64> = saved
        .xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let a = saved.affine_index(i);
            let g = gamma.map_or(1.0, |t| t.data()[a]);
            let b = beta.map_or(0.0, |t| t.data()[a]);
            g * v + b
        })
        .collect();
    (Tensor::new(x.shape().to_vec(), out).expect("shape"), saved)
}

pub(crate) fn instance_norm(
    x: &Tensor,
    gamma: Option<&Tensor>,
    beta: Option<&Tensor>,
    eps: f64,
) -> Result<(Tensor, NormSaved)> {
    const OP: &str = "instance_norm";
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::invalid(OP, format!("expected [B,C,H,W], got {s:?}")));
    }
    let group = s[2] * s[3];
    if group < 2 {
        return Err(TensorError::DegenerateDim { op: OP, size: group });
    }
    check_affine(OP, gamma, s[1])?;
    check_affine(OP, beta, s[1])?;
    Ok(normalize(x, gamma, beta, eps, group, Layout::Instance { channels: s[1] }))
}

pub(crate) fn layer_norm(
    x: &Tensor,
    gamma: Option<&Tensor>,
    beta: Option<&Tensor>,
    eps: f64,
) -> Result<(Tensor, NormSaved)> {
    const OP: &str = "layer_norm";
    let d = *x.shape().last().unwrap_or(&1);
    if d < 2 {
        return Err(TensorError::DegenerateDim { op: OP, size: d });
    }
    check_affine(OP, gamma, d)?;
    check_affine(OP, beta, d)?;
    Ok(normalize(x, gamma, beta, eps, d, Layout::Layer))
}

pub(crate) fn norm_backward(saved: &NormSaved, gamma: Option<&Tensor>, g: &Tensor) -> NormGrads {
    let affine_len = match saved.layout {
        Layout::Instance { channels } => channels,
        Layout::Layer => saved.group,
    };
    let mut ggamma = vec![0.0; affine_len];
    let mut gbeta = vec![0.0; affine_len];
    let m = saved.group as f64;
    let mut gx = vec![0.0; g.numel()];
    for (gi, ((gs, xs), dst)) in g
        .data()
        .chunks(saved.group)
        .zip(saved.xhat.chunks(saved.group))
        .zip(gx.chunks_mut(saved.group))
        .enumerate()
    {
        let base = gi * saved.group;
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        // dxhat = g * gamma
        for (j, (&gv, &xv)) in gs.iter().zip(xs).enumerate() {
            let a = saved.affine_index(base + j);
            ggamma[a] += gv * xv;
            gbeta[a] += gv;
            let d = gv * gamma.map_or(1.0, |t| t.data()[a]);
            dst[j] = d;
            sum_d += d;
            sum_dx += d * xv;
        }
        let is = saved.inv_std[gi];
        for (d, &xv) in dst.iter_mut().zip(xs) {
            *d = is / m * (m * *d - sum_d - xv * sum_dx);
        }
    }
    NormGrads {
        x: Tensor::new(g.shape().to_vec(), gx).expect("shape"),
        gamma: Tensor::new(vec![affine_len], ggamma).expect("shape"),
        beta: Tensor::new(vec![affine_len], gbeta).expect("shape"),
    }
}

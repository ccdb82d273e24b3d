use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dParams {
            stride,
            padding,
            groups,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn geometry(x: &[usize], w: &[usize], p: &Conv2dParams) -> Result<Geometry> {
    const OP: &str = "conv2d";
    if x.len() != 4 || w.len() != 4 {
        return Err(TensorError::invalid(
            OP,
            format!("expected rank-4 input and weight, got {x:?} and {w:?}"),
        ));
    }
    if p.stride == 0 || p.groups == 0 {
        return Err(TensorError::invalid(OP, "stride and groups must be positive"));
    }
    let (batch, cin, h, wd) = (x[0], x[1], x[2], x[3]);
    let (cout, cin_g, kh, kw) = (w[0], w[1], w[2], w[3]);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::invalid(OP, format!("kernel {kh}x{kw} must be odd")));
    }
    if cin % p.groups != 0 || cout % p.groups != 0 || cin / p.groups != cin_g {
        return Err(TensorError::mismatch(OP, x, w));
    }
    if h + 2 * p.padding < kh || wd + 2 * p.padding < kw {
        return Err(TensorError::invalid(OP, "kernel larger than padded input"));
    }
    Ok(Geometry {
        batch,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        cout_g: cout / p.groups,
        kh,
        kw,
        ho: (h + 2 * p.padding - kh) / p.stride + 1,
        wo: (wd + 2 * p.padding - kw) / p.stride + 1,
        stride: p.stride,
        pad: p.padding,
    })
}

/// Output columns `ox` whose input column `ox*stride + k - pad` lands in
/// `[0, w)`.
fn valid_range(k: usize, pad: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    // ox*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // ox*stride + k - pad <= len_in - 1
    let hi = if len_in + pad > k {
        ((len_in + pad - k - 1) / stride + 1).min(len_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, p: &Conv2dParams) -> Result<Tensor> {
    let g = geometry(x.shape(), w.shape(), p)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(TensorError::mismatch("conv2d bias", b.shape(), &[g.cout]));
        }
    }
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.batch * g.cout * plane_out];
    let (xd, wd) = (x.data(), w.data());
    for b in 0..g.batch {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let o_off = (b * g.cout + oc) * plane_out;
            let oplane = &mut out[o_off..o_off + plane_out];
            if let Some(bias) = bias {
                oplane.fill(bias.data()[oc]);
            }
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let iplane = &xd[(b * g.cin + ic) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.kw {
                        let wv = wd[((oc * g.cin_g + icl) * g.kh + ky) * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let irow = &iplane[iy * g.w..(iy + 1) * g.w];
                            let orow = &mut oplane[oy * g.wo..(oy + 1) * g.wo];
                            for ox in ox0..ox1 {
                                orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.batch, g.cout, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub bias: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    p: &Conv2dParams,
    gout: &Tensor,
) -> ConvGrads {
    let g = geometry(x.shape(), w.shape(), p).expect("validated in forward");
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; g.cout];
    for b in 0..g.batch {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let gplane = &gd[(b * g.cout + oc) * plane_out..][..plane_out];
            if has_bias {
                gb[oc] += gplane.iter().sum::<f64>();
            }
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let i_off = (b * g.cin + ic) * plane_in;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.kw {
                        let widx = ((oc * g.cin_g + icl) * g.kh + ky) * g.kw + kx;
                        let wv = wd[widx];
                        let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let row_off = i_off + iy * g.w;
                            let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                acc += grow[ox] * xd[row_off + ix];
                                gx[row_off + ix] += wv * grow[ox];
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    ConvGrads {
        x: Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        w: Tensor::new(w.shape().to_vec(), gw).expect("shape"),
        bias: has_bias.then(|| Tensor::new(vec![g.cout], gb).expect("shape")),
    }
}

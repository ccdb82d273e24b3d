use crate::error::{Result, TensorError};
use crate::tensor::{broadcast_map, broadcast_shapes, sum_to_shape, Tensor};

struct MatmulPlan {
    batch: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(TensorError::invalid(
            "matmul",
            format!("operands must be at least rank 2, got {a:?} and {b:?}"),
        ));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(TensorError::mismatch("matmul", a, b));
    }
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let batch = broadcast_shapes(a_batch, b_batch).map_err(|_| TensorError::mismatch("matmul", a, b))?;
    let a_offsets = broadcast_map(a_batch, &batch)
        .into_iter()
        .map(|i| i * m * k)
        .collect();
    let b_offsets = broadcast_map(b_batch, &batch)
        .into_iter()
        .map(|i| i * k * n)
        .collect();
    Ok(MatmulPlan {
        batch,
        m,
        k,
        n,
        a_offsets,
        b_offsets,
    })
}

/// `out[m,n] += a[m,k] · b[k,n]` on row-major slices.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let p = plan(a.shape(), b.shape())?;
    let count = p.a_offsets.len();
    let mut out = vec![0.0; count * p.m * p.n];
    for (bi, chunk) in out.chunks_mut(p.m * p.n).enumerate() {
        let ao = p.a_offsets[bi];
        let bo = p.b_offsets[bi];
        gemm_acc(
            &a.data()[ao..ao + p.m * p.k],
            &b.data()[bo..bo + p.k * p.n],
            chunk,
            p.m,
            p.k,
            p.n,
        );
    }
    let mut shape = p.batch.clone();
    shape.extend([p.m, p.n]);
    Tensor::new(shape, out)
}

pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let p = plan(a.shape(), b.shape())?;
    let (m, k, n) = (p.m, p.k, p.n);
    let count = p.a_offsets.len();
    // gradients in the broadcast batch shape, then summed down
    let mut ga = vec![0.0; count * m * k];
    let mut gb = vec![0.0; count * k * n];
    for bi in 0..count {
        let av = &a.data()[p.a_offsets[bi]..p.a_offsets[bi] + m * k];
        let bv = &b.data()[p.b_offsets[bi]..p.b_offsets[bi] + k * n];
        let gv = &g.data()[bi * m * n..(bi + 1) * m * n];
        let ga_b = &mut ga[bi * m * k..(bi + 1) * m * k];
        // dA = G · Bᵀ
        for i in 0..m {
            for j in 0..n {
                let gij = gv[i * n + j];
                if gij == 0.0 {
                    continue;
                }
                for q in 0..k {
                    ga_b[i * k + q] += gij * bv[q * n + j];
                }
            }
        }
        // dB = Aᵀ · G
        let gb_b = &mut gb[bi * k * n..(bi + 1) * k * n];
        for i in 0..m {
            let grow = &gv[i * n..(i + 1) * n];
            for q in 0..k {
                let aiq = av[i * k + q];
                if aiq == 0.0 {
                    continue;
                }
                for (o, &gvj) in gb_b[q * n..(q + 1) * n].iter_mut().zip(grow) {
                    *o += aiq * gvj;
                }
            }
        }
    }
    let mut ga_shape = p.batch.clone();
    ga_shape.extend([m, k]);
    let mut gb_shape = p.batch.clone();
    gb_shape.extend([k, n]);
    let ga = Tensor::new(ga_shape, ga)?;
    let gb = Tensor::new(gb_shape, gb)?;
    Ok((sum_to_shape(&ga, a.shape()), sum_to_shape(&gb, b.shape())))
}

use crate::error::{Result, TensorError};
use crate::tensor::{strides, Tensor};

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `out.shape[i] = x.shape[perm[i]]`.
pub(crate) fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::invalid(
            "permute",
            format!("{perm:?} is not a permutation of rank {rank}"),
        ));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    let xd = x.data();
    for _ in 0..x.numel() {
        out.push(xd[pos]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            pos += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            pos -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn narrow_backward(in_shape: &[usize], axis: usize, start: usize, g: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(in_shape);
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let len = g.shape()[axis];
    let extent = in_shape[axis];
    for o in 0..outer {
        let dst = (o * extent + start) * inner;
        let src = o * len * inner;
        gx.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        let p = permute(&t, &[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(permute(&p, &inverse_perm(&[1, 0])).unwrap(), t);
    }

    #[test]
    fn rejects_non_permutation() {
        let t = Tensor::zeros(&[2, 3]);
        assert!(permute(&t, &[0, 0]).is_err());
    }
}

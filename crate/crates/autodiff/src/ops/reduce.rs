use crate::error::{Result, TensorError};
use crate::tensor::{broadcast_map, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl ReduceKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
        }
    }
}

pub(crate) struct ReduceSaved {
    pub kind: ReduceKind,
    pub out_shape: Vec<usize>,
    pub count: usize,
    /// Flat input index of the winning element per output, for `Max`.
    pub argmax: Option<Vec<usize>>,
}

/// Reduce over `axes`, keeping them as size-1 extents.
pub(crate) fn reduce(kind: ReduceKind, x: &Tensor, axes: &[usize]) -> Result<(Tensor, ReduceSaved)> {
    let op = kind.name();
    if axes.is_empty() {
        return Err(TensorError::EmptyReduction { op });
    }
    if let Some(&a) = axes.iter().find(|&&a| a >= x.rank()) {
        return Err(TensorError::invalid(op, format!("axis {a} out of range for {:?}", x.shape())));
    }
    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let out_numel: usize = out_shape.iter().product();
    let count = x.numel() / out_numel;
    let map = broadcast_map(&out_shape, x.shape());

    let (data, argmax) = match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let mut acc = vec![0.0; out_numel];
            for (&o, &v) in map.iter().zip(x.data()) {
                acc[o] += v;
            }
            if kind == ReduceKind::Mean {
                acc.iter_mut().for_each(|v| *v /= count as f64);
            }
            (acc, None)
        }
        ReduceKind::Max => {
            let mut best = vec![f64::NEG_INFINITY; out_numel];
            let mut arg = vec![usize::MAX; out_numel];
            // strictly greater keeps the lowest flat index on ties
            for (i, (&o, &v)) in map.iter().zip(x.data()).enumerate() {
                if arg[o] == usize::MAX || v > best[o] {
                    best[o] = v;
                    arg[o] = i;
                }
            }
            (best, Some(arg))
        }
    };
    let out = Tensor::new(out_shape.clone(), data)?;
    Ok((
        out,
        ReduceSaved {
            kind,
            out_shape,
            count,
            argmax,
        },
    ))
}

pub(crate) fn reduce_backward(saved: &ReduceSaved, x: &Tensor, g: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(x.shape());
    match saved.kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let scale = if saved.kind == ReduceKind::Mean {
                1.0 / saved.count as f64
            } else {
                1.0
            };
            let map = broadcast_map(&saved.out_shape, x.shape());
            for (d, &o) in gx.data_mut().iter_mut().zip(&map) {
                *d = g.data()[o] * scale;
            }
        }
        ReduceKind::Max => {
            let arg = saved.argmax.as_ref().expect("max keeps argmax");
            for (o, &i) in arg.iter().enumerate() {
                gx.data_mut()[i] += g.data()[o];
            }
        }
    }
    gx
}

use crate::error::Result;
use crate::tensor::{broadcast_map, broadcast_shapes, sum_to_shape, Tensor};

/// SELU scale.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// SELU negative-branch coefficient.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    AddScalar(f64),
    MulScalar(f64),
    PowScalar(f64),
    Abs,
    Sign,
    Clamp(f64, f64),
    Exp,
    Ln,
    Selu,
    Sigmoid,
    Tanh,
}

impl UnaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            UnaryKind::AddScalar(_) => "add_scalar",
            UnaryKind::MulScalar(_) => "mul_scalar",
            UnaryKind::PowScalar(_) => "pow_scalar",
            UnaryKind::Abs => "abs",
            UnaryKind::Sign => "sign",
            UnaryKind::Clamp(..) => "clamp",
            UnaryKind::Exp => "exp",
            UnaryKind::Ln => "ln",
            UnaryKind::Selu => "selu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Pow => "pow",
        }
    }
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn apply_unary(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::AddScalar(c) => x + c,
        UnaryKind::MulScalar(c) => x * c,
        UnaryKind::PowScalar(p) => x.powf(p),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Sign => sign(x),
        UnaryKind::Clamp(lo, hi) => x.clamp(lo, hi),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Selu => selu(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
    }
}

/// Derivative at `x` given the forward output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::AddScalar(_) => 1.0,
        UnaryKind::MulScalar(c) => c,
        UnaryKind::PowScalar(p) => {
            if p == 0.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        }
        UnaryKind::Abs => sign(x),
        UnaryKind::Sign => 0.0,
        UnaryKind::Clamp(lo, hi) => {
            if (lo..=hi).contains(&x) {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Exp => y,
        UnaryKind::Ln => 1.0 / x,
        UnaryKind::Selu => {
            if x > 0.0 {
                SELU_LAMBDA
            } else {
                y + SELU_LAMBDA * SELU_ALPHA
            }
        }
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Tanh => 1.0 - y * y,
    }
}

pub(crate) fn unary_forward(kind: UnaryKind, x: &Tensor) -> Tensor {
    x.map(|v| apply_unary(kind, v))
}

/// Which smooth piece each element falls on, for non-smooth ops.
pub(crate) fn unary_branches(kind: UnaryKind, x: &Tensor) -> Option<Vec<u64>> {
    let classify: fn(f64, UnaryKind) -> u64 = match kind {
        UnaryKind::Abs | UnaryKind::Sign | UnaryKind::Selu => |v, _| match v {
            v if v > 0.0 => 1,
            v if v < 0.0 => 2,
            _ => 3,
        },
        UnaryKind::Clamp(..) => |v, k| {
            let UnaryKind::Clamp(lo, hi) = k else { unreachable!() };
            match v {
                v if v < lo => 1,
                v if v > hi => 2,
                v if v == lo || v == hi => 3,
                _ => 4,
            }
        },
        _ => return None,
    };
    // one word per 21 elements, three bits each
    let words = x
        .data()
        .chunks(21)
        .map(|chunk| {
            chunk
                .iter()
                .fold(0u64, |acc, &v| (acc << 3) | classify(v, kind))
        })
        .collect();
    Some(words)
}

pub(crate) fn unary_backward(kind: UnaryKind, x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&xv, &yv), &gv)| gv * unary_derivative(kind, xv, yv))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

fn apply_binary(kind: BinaryKind, a: f64, b: f64) -> f64 {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
        BinaryKind::Pow => a.powf(b),
    }
}

pub(crate) fn binary_forward(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| apply_binary(kind, x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let ma = broadcast_map(a.shape(), &shape);
    let mb = broadcast_map(b.shape(), &shape);
    let (ad, bd) = (a.data(), b.data());
    let data = ma
        .iter()
        .zip(&mb)
        .map(|(&i, &j)| apply_binary(kind, ad[i], bd[j]))
        .collect();
    Tensor::new(shape, data)
}

pub(crate) fn binary_backward(
    kind: BinaryKind,
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor) {
    let shape = out.shape();
    let ma = broadcast_map(a.shape(), shape);
    let mb = broadcast_map(b.shape(), shape);
    let (ad, bd, od, gd) = (a.data(), b.data(), out.data(), g.data());
    let n = od.len();
    let mut ga = Vec::with_capacity(n);
    let mut gb = Vec::with_capacity(n);
    for k in 0..n {
        let (x, y, o, gv) = (ad[ma[k]], bd[mb[k]], od[k], gd[k]);
        let (da, db) = match kind {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (y, x),
            BinaryKind::Div => (1.0 / y, -x / (y * y)),
            BinaryKind::Pow => {
                let da = if y == 0.0 { 0.0 } else { y * x.powf(y - 1.0) };
                let db = if x > 0.0 { o * x.ln() } else { 0.0 };
                (da, db)
            }
        };
        ga.push(gv * da);
        gb.push(gv * db);
    }
    let ga = Tensor::new(shape.to_vec(), ga).expect("broadcast shape");
    let gb = Tensor::new(shape.to_vec(), gb).expect("broadcast shape");
    (sum_to_shape(&ga, a.shape()), sum_to_shape(&gb, b.shape()))
}

/// Max-shifted softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let n = *y.shape().last().unwrap_or(&1);
    let mut dx = g.clone();
    for (dxr, yr) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
        let dot: f64 = dxr.iter().zip(yr).map(|(a, b)| a * b).sum();
        for (d, &yv) in dxr.iter_mut().zip(yr) {
            *d = yv * (*d - dot);
        }
    }
    dx
}

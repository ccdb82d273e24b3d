//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::par::ExecMode;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
    /// Check at most this many coordinates per input (sampled with `seed`).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
    pub mode: ExecMode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_input: None,
            seed: 0,
            mode: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    /// `(input, index)` pairs whose ±h evaluations crossed a non-smooth
    /// point and were left out.
    pub excluded: Vec<(usize, usize)>,
    pub worst: Option<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// One scalar evaluation of `f` on fresh leaves, with its branch fingerprint.
fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::with_finite_checks(true);
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    tape.finite_status()?;
    let value = out.value();
    let v = value
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(value.shape().to_vec()))?;
    Ok((v, tape.branch_fingerprint()))
}

/// Compare the tape gradient of scalar `f` against
/// `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Sync,
{
    for (i, t) in inputs.iter().enumerate() {
        if !t.is_finite() {
            return Err(TensorError::invalid("gradcheck", format!("input {i} is not finite")));
        }
    }

    let analytic: Vec<Tensor> = {
        let tape = Tape::with_finite_checks(true);
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        tape.finite_status()?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };
    for (i, g) in analytic.iter().enumerate() {
        if !g.is_finite() {
            return Err(TensorError::invalid(
                "gradcheck",
                format!("non-finite reverse-mode gradient for input {i}"),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let n = t.numel();
            let picked: Vec<usize> = match opts.max_coords_per_input {
                Some(k) if k < n => {
                    let mut v = sample(&mut rng, n, k).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..n).collect(),
            };
            picked.into_iter().map(move |j| (i, j))
        })
        .collect();

    let h = opts.step;
    let results = opts.mode.map_indexed(coords.len(), |c| -> Result<Option<CoordCheck>> {
        let (i, j) = coords[c];
        let mut shifted = inputs.to_vec();
        let x0 = inputs[i].data()[j];
        shifted[i].data_mut()[j] = x0 + h;
        let (fp, bp) = evaluate(&f, &shifted)?;
        shifted[i].data_mut()[j] = x0 - h;
        let (fm, bm) = evaluate(&f, &shifted)?;
        if bp != bm {
            return Ok(None);
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i].data()[j];
        Ok(Some(CoordCheck {
            input: i,
            index: j,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric, opts.abs_floor),
        }))
    });

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        tol: opts.tol,
        checked: 0,
        excluded: Vec::new(),
        worst: None,
    };
    for (r, &coord) in results.into_iter().zip(&coords) {
        match r? {
            None => report.excluded.push(coord),
            Some(c) => {
                report.checked += 1;
                if report.worst.is_none() || c.rel_err > report.max_rel_err {
                    report.max_rel_err = c.rel_err;
                    report.worst = Some(c);
                }
            }
        }
    }
    Ok(report)
}

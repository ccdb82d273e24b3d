//! Surrogate training objective: L1 to a tone-mapped clean target minus a
//! differentiable histogram entropy.

use sfae_autodiff::{CustomOp, Tensor, Var};

use crate::error::Result;

/// Display gamma used by the tone-mapped target.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Bins of the soft histogram over `[0, 1]`.
pub const SOFT_BINS: usize = 64;

/// Gaussian kernel bandwidth in bin widths.
pub const SOFT_BANDWIDTH_BINS: f64 = 1.5;

/// `clean^(1/2.2)`.
pub fn tonemap_target(clean: &Tensor) -> Tensor {
    clean.map(|v| v.max(0.0).powf(1.0 / DISPLAY_GAMMA))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftHistogram {
    pub bins: usize,
    /// Kernel standard deviation in value units.
    pub sigma: f64,
}

impl Default for SoftHistogram {
    fn default() -> Self {
        SoftHistogram {
            bins: SOFT_BINS,
            sigma: SOFT_BANDWIDTH_BINS / SOFT_BINS as f64,
        }
    }
}

impl SoftHistogram {
    fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.bins as f64
    }

    /// Kernel weights of one value against every bin center.
    fn weights(&self, x: f64, out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        for (k, w) in out.iter_mut().enumerate() {
            let u = x - self.center(k);
            *w = (-u * u * inv).exp();
        }
    }

    /// Unnormalized bin masses `h_k = Σ_j K(x_j - c_k)`.
    fn masses(&self, xs: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.bins];
        let mut w = vec![0.0; self.bins];
        for &x in xs {
            self.weights(x, &mut w);
            for (hk, wk) in h.iter_mut().zip(&w) {
                *hk += wk;
            }
        }
        h
    }

    /// Entropy in bits of the normalized soft histogram.
    pub fn entropy(&self, xs: &[f64]) -> f64 {
        let h = self.masses(xs);
        let z: f64 = h.iter().sum();
        h.iter()
            .map(|&m| m / z)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.log2())
            .sum()
    }
}

struct SoftEntropyOp {
    hist: SoftHistogram,
}

impl CustomOp for SoftEntropyOp {
    fn name(&self) -> &'static str {
        "soft_entropy"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let xs = inputs[0].data();
        let hist = &self.hist;
        let h = hist.masses(xs);
        let z: f64 = h.iter().sum();
        let entropy = output.data()[0];
        // ∂H/∂h_m = (-log2 p_m - H) / Z; bins whose mass underflows carry
        // no kernel weight
        let dh: Vec<f64> = h
            .iter()
            .map(|&m| {
                let p = m / z;
                if p > 0.0 {
                    (-p.log2() - entropy) / z
                } else {
                    0.0
                }
            })
            .collect();
        let g = grad_out.data()[0];
        let inv_var = 1.0 / (hist.sigma * hist.sigma);
        let mut w = vec![0.0; hist.bins];
        let grad = xs
            .iter()
            .map(|&x| {
                hist.weights(x, &mut w);
                let s: f64 = (0..hist.bins)
                    .map(|k| dh[k] * w[k] * (hist.center(k) - x) * inv_var)
                    .sum();
                g * s
            })
            .collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), grad).expect("gradient shape")]
    }
}

/// Entropy in bits of a Gaussian-kernel soft histogram of `x` clamped to
/// `[0, 1]`, pooled over all elements.
pub fn soft_entropy<'t>(x: Var<'t>, hist: SoftHistogram) -> Var<'t> {
    let clamped = x.clamp(0.0, 1.0);
    let value = hist.entropy(clamped.value().data());
    x.tape().custom(
        &[clamped],
        Tensor::scalar(value),
        Box::new(SoftEntropyOp { hist }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            entropy: 0.05,
        }
    }
}

pub struct LossTerms<'t> {
    pub loss: Var<'t>,
    pub l1: Var<'t>,
    pub entropy_bits: Var<'t>,
}

/// `λ_recon · mean|output - target| - λ_entropy · soft_entropy(output)`.
pub fn loss<'t>(output: Var<'t>, target: Var<'t>, weights: LossWeights) -> Result<LossTerms<'t>> {
    let l1 = output.sub(target)?.abs().mean_all()?;
    let entropy_bits = soft_entropy(output, SoftHistogram::default());
    let loss = l1
        .mul_scalar(weights.recon)
        .sub(entropy_bits.mul_scalar(weights.entropy))?;
    Ok(LossTerms {
        loss,
        l1,
        entropy_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_entropy_is_the_kernel_floor() {
        let hist = SoftHistogram::default();
        let spread: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let point = vec![0.5; 1000];
        assert!(hist.entropy(&point) < hist.entropy(&spread));
        assert!(hist.entropy(&spread) <= (SOFT_BINS as f64).log2() + 1e-12);
    }
}

//! Spatialized frequency band maps: per-plane 2-D DFT, centering shifts,
//! octave annular masks on the centered spectrum, and band-limited inverse
//! transforms.
//!
//! The top band is open-ended so the masks partition the whole grid and the
//! band maps always sum back to the input.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use sfae_autodiff::{ExecMode, Tensor};

use crate::error::{Error, Result};

/// Imaginary residue above which an inverse transform is reported as
/// non-Hermitian.
pub const SYMMETRY_WARN_THRESHOLD: f64 = 1e-6;

/// Complex spectrum of a `[B, C, H, W]` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    shape: [usize; 4],
    data: Vec<Complex64>,
    centered: bool,
}

impl Spectrum {
    pub fn new(shape: [usize; 4], data: Vec<Complex64>, centered: bool) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(Error::Domain(format!(
                "spectrum shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Spectrum {
            shape,
            data,
            centered,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
    pub fn is_centered(&self) -> bool {
        self.centered
    }
    pub fn at(&self, b: usize, c: usize, u: usize, v: usize) -> Complex64 {
        let [_, cc, h, w] = self.shape;
        self.data[((b * cc + c) * h + u) * w + v]
    }
}

/// Forward and inverse plans for one `H × W` plane size.
#[derive(Clone)]
pub struct PlanePlans {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl PlanePlans {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        PlanePlans {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            col_fwd: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, plane: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(plane);
        let mut t = vec![Complex64::default(); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = plane[i * w + j];
            }
        }
        col.process(&mut t);
        for i in 0..h {
            for j in 0..w {
                plane[i * w + j] = t[j * h + i];
            }
        }
    }

    /// Unnormalized forward DFT of one plane, in place.
    pub fn forward(&self, plane: &mut [Complex64]) {
        self.run(plane, false);
    }

    /// Inverse DFT with `1 / (H W)` scaling, in place.
    pub fn inverse(&self, plane: &mut [Complex64]) {
        self.run(plane, true);
        let s = 1.0 / (self.h * self.w) as f64;
        for v in plane.iter_mut() {
            *v *= s;
        }
    }
}

fn image_dims(image: &Tensor) -> Result<[usize; 4]> {
    let s = image.shape();
    if s.len() != 4 {
        return Err(Error::Domain(format!("expected [B, C, H, W], got {s:?}")));
    }
    if s[2] < 2 || s[3] < 2 {
        return Err(Error::Domain(format!(
            "planes must be at least 2x2, got {}x{}",
            s[2], s[3]
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Forward DFT of every `(b, c)` plane, uncentered.
pub fn fft2(image: &Tensor, mode: ExecMode) -> Result<Spectrum> {
    let shape = image_dims(image)?;
    let [_, _, h, w] = shape;
    let plans = PlanePlans::new(h, w);
    let mut data: Vec<Complex64> = image.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    mode.for_each_chunk_mut(&mut data, h * w, |_, plane| plans.forward(plane));
    Spectrum::new(shape, data, false)
}

/// Real part of the inverse DFT, with the largest discarded imaginary
/// magnitude.
pub fn ifft2(spectrum: &Spectrum, mode: ExecMode) -> Result<(Tensor, f64)> {
    if spectrum.centered {
        return Err(Error::SpectrumState("centered; apply ifftshift first"));
    }
    let [b, c, h, w] = spectrum.shape;
    let plans = PlanePlans::new(h, w);
    let mut data = spectrum.data.clone();
    mode.for_each_chunk_mut(&mut data, h * w, |_, plane| plans.inverse(plane));
    let residue = data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > SYMMETRY_WARN_THRESHOLD {
        log::warn!(
            "inverse transform discarded imaginary residue {residue:.3e}; spectrum is not Hermitian"
        );
    }
    let real = Tensor::new(vec![b, c, h, w], data.iter().map(|z| z.re).collect())?;
    Ok((real, residue))
}

/// Circularly shift each plane down by `dy` rows and right by `dx` columns.
fn roll_plane<T: Copy>(src: &[T], dst: &mut [T], h: usize, w: usize, dy: usize, dx: usize) {
    for i in 0..h {
        let ti = (i + dy) % h;
        for j in 0..w {
            dst[ti * w + (j + dx) % w] = src[i * w + j];
        }
    }
}

fn roll(spectrum: &Spectrum, dy: usize, dx: usize, centered: bool) -> Spectrum {
    let [_, _, h, w] = spectrum.shape;
    let mut data = vec![Complex64::default(); spectrum.data.len()];
    for (src, dst) in spectrum.data.chunks(h * w).zip(data.chunks_mut(h * w)) {
        roll_plane(src, dst, h, w, dy, dx);
    }
    Spectrum {
        shape: spectrum.shape,
        data,
        centered,
    }
}

/// Move the zero frequency from `(0, 0)` to `(⌊H/2⌋, ⌊W/2⌋)`.
pub fn fftshift(spectrum: &Spectrum) -> Result<Spectrum> {
    if spectrum.centered {
        return Err(Error::SpectrumState("centered"));
    }
    let [_, _, h, w] = spectrum.shape;
    Ok(roll(spectrum, h / 2, w / 2, true))
}

/// Exact inverse of [`fftshift`], odd sizes included.
pub fn ifftshift(spectrum: &Spectrum) -> Result<Spectrum> {
    if !spectrum.centered {
        return Err(Error::SpectrumState("uncentered"));
    }
    let [_, _, h, w] = spectrum.shape;
    Ok(roll(spectrum, h.div_ceil(2), w.div_ceil(2), false))
}

/// Octave band layout: band `i` (1-based) spans `[f_low,i, f_high,i)` with
/// `f_high,i = f_max / 2^(N-i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    n_bands: usize,
    f_max: f64,
    boundaries: Vec<(f64, f64)>,
}

impl BandSpec {
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }
    pub fn f_max(&self) -> f64 {
        self.f_max
    }
    pub fn boundaries(&self) -> &[(f64, f64)] {
        &self.boundaries
    }

    /// Zero-based band containing radial frequency `rho`. Frequencies at or
    /// beyond `f_max` belong to the top band.
    pub fn band_of(&self, rho: f64) -> usize {
        self.boundaries
            .iter()
            .position(|&(_, hi)| rho < hi)
            .unwrap_or(self.n_bands - 1)
            .min(self.n_bands - 1)
    }
}

pub const DEFAULT_F_MAX: f64 = 0.5;

pub fn band_boundaries(n_bands: usize, f_max: f64) -> Result<BandSpec> {
    if n_bands == 0 {
        return Err(Error::Domain("need at least one frequency band".into()));
    }
    if !(f_max > 0.0 && f_max <= 0.5 * std::f64::consts::SQRT_2) {
        return Err(Error::Domain(format!("f_max {f_max} outside (0, √0.5]")));
    }
    let exp = i32::try_from(n_bands).map_err(|_| Error::Domain("too many bands".into()))?;
    let mut boundaries = Vec::with_capacity(n_bands);
    let mut low = 0.0;
    for i in 1..=n_bands {
        let high = f_max / 2f64.powi(exp - i as i32);
        boundaries.push((low, high));
        low = high;
    }
    Ok(BandSpec {
        n_bands,
        f_max,
        boundaries,
    })
}

/// Radial frequency of centered bin `(r, c)`, each axis normalized by its
/// own extent.
pub fn radial_frequency(r: usize, c: usize, h: usize, w: usize) -> f64 {
    let fu = (r as f64 - (h / 2) as f64) / h as f64;
    let fv = (c as f64 - (w / 2) as f64) / w as f64;
    (fu * fu + fv * fv).sqrt()
}

/// Zero-based band of every centered bin, row-major `H × W`.
pub fn band_index_map(h: usize, w: usize, spec: &BandSpec) -> Vec<usize> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(spec.band_of(radial_frequency(r, c, h, w)));
        }
    }
    out
}

/// Binary mask over the centered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMask {
    /// One-based band number.
    pub band: usize,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<u8>,
}

impl BandMask {
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.mask[r * self.width + c]
    }

    /// Whether the mask equals its reflection through the centered DC bin.
    pub fn is_point_symmetric(&self) -> bool {
        let (h, w) = (self.height, self.width);
        (0..h).all(|r| {
            (0..w).all(|c| {
                let mr = (2 * (h / 2) + h - r) % h;
                let mc = (2 * (w / 2) + w - c) % w;
                self.get(r, c) == self.get(mr, mc)
            })
        })
    }
}

pub fn radial_masks(h: usize, w: usize, spec: &BandSpec) -> Vec<BandMask> {
    let index = band_index_map(h, w, spec);
    (0..spec.n_bands)
        .map(|b| BandMask {
            band: b + 1,
            height: h,
            width: w,
            mask: index.iter().map(|&i| u8::from(i == b)).collect(),
        })
        .collect()
}

/// `N` real band maps of a `[B, C, H, W]` image.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMapSet {
    maps: Vec<Tensor>,
    max_imag: f64,
}

impl BandMapSet {
    pub fn n_bands(&self) -> usize {
        self.maps.len()
    }

    /// Zero-based band map, `[B, C, H, W]`.
    pub fn band(&self, i: usize) -> &Tensor {
        &self.maps[i]
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    /// Largest imaginary magnitude discarded across all band inversions.
    pub fn max_imag_residue(&self) -> f64 {
        self.max_imag
    }

    /// Elementwise sum over bands.
    pub fn sum(&self) -> Tensor {
        let mut acc = self.maps[0].clone();
        for m in &self.maps[1..] {
            for (a, v) in acc.data_mut().iter_mut().zip(m.data()) {
                *a += v;
            }
        }
        acc
    }

    /// Band-major stack `[B, N·C, H, W]`: channel `i·C + c` is band `i`,
    /// input channel `c`.
    pub fn stacked(&self) -> Tensor {
        let s = self.maps[0].shape();
        let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
        let n = self.maps.len();
        let mut data = Vec::with_capacity(b * n * c * plane);
        for bi in 0..b {
            for m in &self.maps {
                data.extend_from_slice(&m.data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        Tensor::new(vec![b, n * c, s[2], s[3]], data).expect("stacked shape")
    }
}

struct PlaneBands {
    bands: Vec<Vec<f64>>,
    energy: Vec<f64>,
    max_imag: f64,
}

/// Centered spectrum of one real plane.
fn centered_plane(plans: &PlanePlans, plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut z: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plans.forward(&mut z);
    let mut shifted = vec![Complex64::default(); h * w];
    roll_plane(&z, &mut shifted, h, w, h / 2, w / 2);
    shifted
}

fn decompose_plane(
    plans: &PlanePlans,
    plane: &[f64],
    h: usize,
    w: usize,
    index: &[usize],
    n: usize,
    want_maps: bool,
) -> PlaneBands {
    let centered = centered_plane(plans, plane, h, w);
    let norm = 1.0 / (h * w) as f64;
    let mut energy = vec![0.0; n];
    for (z, &b) in centered.iter().zip(index) {
        energy[b] += z.norm_sqr() * norm;
    }
    let mut bands = Vec::new();
    let mut max_imag: f64 = 0.0;
    if want_maps {
        let mut masked = vec![Complex64::default(); h * w];
        let mut uncentered = vec![Complex64::default(); h * w];
        for b in 0..n {
            for ((m, z), &i) in masked.iter_mut().zip(&centered).zip(index) {
                *m = if i == b { *z } else { Complex64::default() };
            }
            roll_plane(&masked, &mut uncentered, h, w, h.div_ceil(2), w.div_ceil(2));
            plans.inverse(&mut uncentered);
            max_imag = uncentered.iter().map(|z| z.im.abs()).fold(max_imag, f64::max);
            bands.push(uncentered.iter().map(|z| z.re).collect());
        }
    }
    PlaneBands {
        bands,
        energy,
        max_imag,
    }
}

fn per_plane(image: &Tensor, spec: &BandSpec, mode: ExecMode, want_maps: bool) -> Result<Vec<PlaneBands>> {
    let [b, c, h, w] = image_dims(image)?;
    let plans = PlanePlans::new(h, w);
    let index = band_index_map(h, w, spec);
    let n = spec.n_bands;
    let data = image.data();
    Ok(mode.map_indexed(b * c, |p| {
        decompose_plane(&plans, &data[p * h * w..(p + 1) * h * w], h, w, &index, n, want_maps)
    }))
}

/// Split an image into its spatialized frequency band maps.
pub fn decompose(image: &Tensor, spec: &BandSpec, mode: ExecMode) -> Result<BandMapSet> {
    let [b, c, h, w] = image_dims(image)?;
    let planes = per_plane(image, spec, mode, true)?;
    let n = spec.n_bands;
    let mut maps: Vec<Vec<f64>> = vec![Vec::with_capacity(b * c * h * w); n];
    let mut max_imag: f64 = 0.0;
    for p in planes {
        max_imag = max_imag.max(p.max_imag);
        for (m, band) in maps.iter_mut().zip(p.bands) {
            m.extend(band);
        }
    }
    if max_imag > SYMMETRY_WARN_THRESHOLD {
        log::warn!("band maps discarded imaginary residue {max_imag:.3e}");
    }
    let maps = maps
        .into_iter()
        .map(|d| Tensor::new(vec![b, c, h, w], d))
        .collect::<std::result::Result<_, _>>()?;
    Ok(BandMapSet { maps, max_imag })
}

/// Per-band spectral energy `Σ|F_shift,i|² / (H W)`, summed over planes.
pub fn band_energy(image: &Tensor, spec: &BandSpec, mode: ExecMode) -> Result<Vec<f64>> {
    let planes = per_plane(image, spec, mode, false)?;
    let mut energy = vec![0.0; spec.n_bands];
    for p in planes {
        for (e, v) in energy.iter_mut().zip(p.energy) {
            *e += v;
        }
    }
    Ok(energy)
}

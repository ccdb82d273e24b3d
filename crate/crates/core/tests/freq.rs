use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use sfae_autodiff::{ExecMode, Tensor};
use sfae_core::freq::*;
use sfae_core::Error;

const SEQ: ExecMode = ExecMode::Sequential;

fn random_image(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Double-sum DFT of one plane, negative exponent, no scaling.
fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::default();
            for x in 0..h {
                for y in 0..w {
                    let phase = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                    acc += plane[x * w + y] * Complex64::from_polar(1.0, phase);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

#[test]
fn fft_matches_naive_dft_on_all_small_sizes() {
    for h in 2..=8 {
        for w in 2..=8 {
            let x = random_image((h * 10 + w) as u64, &[1, 2, h, w]);
            let s = fft2(&x, SEQ).unwrap();
            assert!(!s.is_centered());
            for c in 0..2 {
                let plane = &x.data()[c * h * w..(c + 1) * h * w];
                let oracle = naive_dft(plane, h, w);
                for u in 0..h {
                    for v in 0..w {
                        let d = (s.at(0, c, u, v) - oracle[u * w + v]).norm();
                        assert!(d < 1e-10, "{h}x{w} ({u},{v}): {d:e}");
                    }
                }
            }
        }
    }
}

#[test]
fn fft_five_by_seven() {
    let x = random_image(57, &[1, 1, 5, 7]);
    let s = fft2(&x, SEQ).unwrap();
    let oracle = naive_dft(x.data(), 5, 7);
    for (a, b) in s.data().iter().zip(&oracle) {
        assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn dc_and_impulse_examples() {
    let s = fft2(&Tensor::full(&[1, 1, 4, 4], 0.3), SEQ).unwrap();
    assert!((s.at(0, 0, 0, 0) - Complex64::new(16.0 * 0.3, 0.0)).norm() < 1e-12);
    assert!(s.data()[1..].iter().all(|z| z.norm() < 1e-12));

    let mut imp = Tensor::zeros(&[1, 1, 4, 4]);
    imp.data_mut()[0] = 1.0;
    let s = fft2(&imp, SEQ).unwrap();
    assert!(s.data().iter().all(|z| *z == Complex64::new(1.0, 0.0)));

    let flat = Spectrum::new([1, 1, 4, 4], vec![Complex64::new(1.0, 0.0); 16], false).unwrap();
    let (x, residue) = ifft2(&flat, SEQ).unwrap();
    assert_eq!(residue, 0.0);
    assert!((x.data()[0] - 1.0).abs() < 1e-15);
    assert!(x.data()[1..].iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn round_trip_up_to_128() {
    for &(h, w) in &[(8, 8), (2, 2), (3, 17), (31, 64), (127, 128), (128, 128)] {
        let x = random_image((h * w) as u64, &[2, 1, h, w]);
        let (y, residue) = ifft2(&fft2(&x, SEQ).unwrap(), SEQ).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-10, "{h}x{w}");
        assert!(residue < 1e-10);
    }
}

#[test]
fn hermitian_spectrum_inverts_to_real() {
    let (h, w) = (6, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<Complex64> = (0..h * w)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let mut sym = vec![Complex64::default(); h * w];
    for u in 0..h {
        for v in 0..w {
            let m = ((h - u) % h) * w + (w - v) % w;
            sym[u * w + v] = 0.5 * (z[u * w + v] + z[m].conj());
        }
    }
    let (_, residue) = ifft2(&Spectrum::new([1, 1, h, w], sym, false).unwrap(), SEQ).unwrap();
    assert!(residue < 1e-10, "{residue:e}");
}

#[test]
fn shift_examples_and_state_errors() {
    let x = random_image(5, &[1, 1, 5, 5]);
    let s = fft2(&x, SEQ).unwrap();
    let c = fftshift(&s).unwrap();
    assert!(c.is_centered());
    assert_eq!(c.at(0, 0, 2, 2), s.at(0, 0, 0, 0));
    assert_eq!(ifftshift(&c).unwrap(), s);

    let data: Vec<Complex64> = (0..24).map(|i| Complex64::new(i as f64, 0.0)).collect();
    let s = Spectrum::new([1, 1, 4, 6], data, false).unwrap();
    let c = fftshift(&s).unwrap();
    assert_eq!(c.at(0, 0, 2, 3), Complex64::new(0.0, 0.0));
    assert_eq!(ifftshift(&c).unwrap(), s);

    assert!(matches!(fftshift(&c), Err(Error::SpectrumState(_))));
    assert!(matches!(ifftshift(&s), Err(Error::SpectrumState(_))));
    assert!(matches!(ifft2(&c, SEQ), Err(Error::SpectrumState(_))));
}

#[test]
fn boundary_examples() {
    assert_eq!(band_boundaries(1, 0.5).unwrap().boundaries(), &[(0.0, 0.5)]);
    assert_eq!(band_boundaries(2, 0.5).unwrap().boundaries(), &[(0.0, 0.25), (0.25, 0.5)]);
    let spec = band_boundaries(8, 0.5).unwrap();
    let highs = [0.00390625, 0.0078125, 0.015625, 0.03125, 0.0625, 0.125, 0.25, 0.5];
    for (i, &(lo, hi)) in spec.boundaries().iter().enumerate() {
        assert_eq!(hi, highs[i]);
        assert_eq!(lo, if i == 0 { 0.0 } else { highs[i - 1] });
    }
    assert!(band_boundaries(0, 0.5).is_err());
    assert!(band_boundaries(4, 0.0).is_err());
    assert!(band_boundaries(4, 0.8).is_err());
}

#[test]
fn mask_examples() {
    let spec = band_boundaries(2, 0.5).unwrap();
    let masks = radial_masks(8, 8, &spec);
    assert_eq!(masks[0].get(4, 4), 1);
    assert_eq!(masks[1].get(4, 4), 0);
    assert_eq!(masks[1].get(0, 0), 1);
    assert_eq!(masks[1].band, 2);
}

#[test]
fn masks_partition_and_are_symmetric() {
    for &(h, w) in &[(2, 2), (3, 5), (8, 8), (7, 12), (33, 16), (64, 64)] {
        for n in [1, 2, 4, 6, 8, 10] {
            let spec = band_boundaries(n, DEFAULT_F_MAX).unwrap();
            let masks = radial_masks(h, w, &spec);
            assert_eq!(masks.len(), n);
            for r in 0..h {
                for c in 0..w {
                    let total: u32 = masks.iter().map(|m| m.get(r, c) as u32).sum();
                    assert_eq!(total, 1, "{h}x{w} N={n} at ({r},{c})");
                }
            }
            assert!(masks.iter().all(BandMask::is_point_symmetric), "{h}x{w} N={n}");
            assert_eq!(masks[0].get(h / 2, w / 2), 1);
        }
    }
}

#[test]
fn constant_image_lives_in_band_one() {
    let x = Tensor::full(&[1, 2, 9, 10], 0.7);
    let maps = decompose(&x, &band_boundaries(6, 0.5).unwrap(), SEQ).unwrap();
    assert!(maps.band(0).data().iter().all(|v| (v - 0.7).abs() < 1e-10));
    for i in 1..6 {
        assert!(maps.band(i).max_abs() < 1e-10);
    }
    let e = band_energy(&x, &band_boundaries(6, 0.5).unwrap(), SEQ).unwrap();
    assert!((e[0] - 0.49 * 180.0).abs() < 1e-9);
    assert!(e[1..].iter().all(|&v| v < 1e-18));
}

#[test]
fn bands_sum_to_the_input() {
    let x = random_image(8, &[1, 4, 32, 48]);
    let maps = decompose(&x, &band_boundaries(8, 0.5).unwrap(), SEQ).unwrap();
    assert_eq!(maps.n_bands(), 8);
    assert!(maps.sum().max_abs_diff(&x).unwrap() < 1e-9);
    assert!(maps.max_imag_residue() < 1e-9);
    let stacked = maps.stacked();
    assert_eq!(stacked.shape(), &[1, 32, 32, 48]);
    assert_eq!(stacked.at(&[0, 3 * 4 + 2, 5, 7]), maps.band(3).at(&[0, 2, 5, 7]));
}

#[test]
fn cosine_energy_lands_in_band_seven() {
    let x = Tensor::from_fn(&[1, 1, 64, 64], |i| (2.0 * PI * 8.0 * (i % 64) as f64 / 64.0).cos());
    let e = band_energy(&x, &band_boundaries(8, 0.5).unwrap(), SEQ).unwrap();
    let total: f64 = e.iter().sum();
    let argmax = (0..8).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
    assert_eq!(argmax, 6);
    assert!(e[6] >= 0.999 * total, "{e:?}");
}

#[test]
fn parseval_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..50 {
        let h = rng.random_range(2..40);
        let w = rng.random_range(2..40);
        let x = random_image(k, &[1, 2, h, w]);
        let e = band_energy(&x, &band_boundaries(1 + k as usize % 10, 0.5).unwrap(), SEQ).unwrap();
        let sum_sq: f64 = x.data().iter().map(|v| v * v).sum();
        let total: f64 = e.iter().sum();
        assert!((total - sum_sq).abs() <= 1e-9 * sum_sq, "{h}x{w}");
    }
}

#[test]
fn impulse_energy_follows_mask_areas() {
    let (h, w) = (12, 10);
    let mut x = Tensor::zeros(&[1, 1, h, w]);
    x.data_mut()[17] = 1.0;
    let spec = band_boundaries(4, 0.5).unwrap();
    let e = band_energy(&x, &spec, SEQ).unwrap();
    // |F| = 1 everywhere, so each band carries (its bin count) / (H W)
    let highs = [0.0625, 0.125, 0.25];
    let mut counts = [0usize; 4];
    for r in 0..h {
        for c in 0..w {
            let fu = (r as f64 - 6.0) / 12.0;
            let fv = (c as f64 - 5.0) / 10.0;
            let rho = (fu * fu + fv * fv).sqrt();
            counts[highs.iter().position(|&hi| rho < hi).unwrap_or(3)] += 1;
        }
    }
    for b in 0..4 {
        assert!((e[b] - counts[b] as f64 / (h * w) as f64).abs() < 1e-12, "{e:?} {counts:?}");
    }
    assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn parallel_matches_sequential() {
    let x = random_image(3, &[2, 4, 24, 20]);
    let spec = band_boundaries(8, 0.5).unwrap();
    assert_eq!(
        decompose(&x, &spec, SEQ).unwrap(),
        decompose(&x, &spec, ExecMode::Parallel).unwrap()
    );
    assert_eq!(fft2(&x, SEQ).unwrap(), fft2(&x, ExecMode::Parallel).unwrap());
}

#[test]
fn rejects_bad_shapes() {
    assert!(fft2(&Tensor::zeros(&[4, 4]), SEQ).is_err());
    assert!(fft2(&Tensor::zeros(&[1, 1, 1, 4]), SEQ).is_err());
    assert!(Spectrum::new([1, 1, 2, 2], vec![Complex64::default(); 3], false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linearity(h in 2usize..20, w in 2usize..20, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let x = random_image(seed, &[1, 1, h, w]);
        let y = random_image(seed + 1, &[1, 1, h, w]);
        let combo = Tensor::from_fn(&[1, 1, h, w], |i| a * x.data()[i] + b * y.data()[i]);
        let spec = band_boundaries(5, 0.5).unwrap();
        let (dx, dy, dc) = (
            decompose(&x, &spec, SEQ).unwrap(),
            decompose(&y, &spec, SEQ).unwrap(),
            decompose(&combo, &spec, SEQ).unwrap(),
        );
        for i in 0..5 {
            let expect = Tensor::from_fn(&[1, 1, h, w], |k| a * dx.band(i).data()[k] + b * dy.band(i).data()[k]);
            prop_assert!(dc.band(i).max_abs_diff(&expect).unwrap() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_and_realness(h in 2usize..=40, w in 2usize..=40, n in 1usize..=10, seed in 0u64..1000) {
        let x = random_image(seed, &[1, 1, h, w]);
        let maps = decompose(&x, &band_boundaries(n, 0.5).unwrap(), SEQ).unwrap();
        prop_assert!(maps.sum().max_abs_diff(&x).unwrap() < 1e-9);
        prop_assert!(maps.max_imag_residue() < 1e-9);
    }
}

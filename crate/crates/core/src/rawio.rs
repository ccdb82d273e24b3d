//! Bayer RAW ingest, normalization and 4-channel packing, a synthetic
//! low-light generator, and histogram / PGM output.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sfae_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Black level used by the synthetic generator.
pub const DEFAULT_BLACK_LEVEL: u16 = 512;
/// White level used by the synthetic generator (14-bit sensor).
pub const DEFAULT_WHITE_LEVEL: u16 = 16383;

/// Packed channel names, in tensor order.
pub const CHANNELS: [&str; 4] = ["R", "G1", "G2", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaColor {
    R,
    G,
    B,
}

impl BayerPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RGGB" => Some(BayerPattern::Rggb),
            "BGGR" => Some(BayerPattern::Bggr),
            "GRBG" => Some(BayerPattern::Grbg),
            "GBRG" => Some(BayerPattern::Gbrg),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        }
    }

    /// `(dy, dx)` inside the 2×2 quad of the R, G1, G2, B samples.
    /// G1 is the green sharing a row with red.
    pub fn offsets(self) -> [(usize, usize); 4] {
        match self {
            BayerPattern::Rggb => [(0, 0), (0, 1), (1, 0), (1, 1)],
            BayerPattern::Bggr => [(1, 1), (1, 0), (0, 1), (0, 0)],
            BayerPattern::Grbg => [(0, 1), (0, 0), (1, 1), (1, 0)],
            BayerPattern::Gbrg => [(1, 0), (1, 1), (0, 0), (0, 1)],
        }
    }

    pub fn color_at(self, row: usize, col: usize) -> CfaColor {
        let pos = (row % 2, col % 2);
        match self.offsets().iter().position(|&o| o == pos) {
            Some(0) => CfaColor::R,
            Some(3) => CfaColor::B,
            _ => CfaColor::G,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayerFrame {
    width: usize,
    height: usize,
    samples: Vec<u16>,
    pattern: BayerPattern,
    black_level: u16,
    white_level: u16,
}

impl BayerFrame {
    pub fn new(
        width: usize,
        height: usize,
        samples: Vec<u16>,
        pattern: BayerPattern,
        black_level: u16,
        white_level: u16,
    ) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::Frame(format!(
                "dimensions {width}x{height} must be positive and even"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::Frame(format!(
                "{} samples for a {width}x{height} frame",
                samples.len()
            )));
        }
        if black_level >= white_level {
            return Err(Error::Frame(format!(
                "black level {black_level} must be below white level {white_level}"
            )));
        }
        Ok(BayerFrame {
            width,
            height,
            samples,
            pattern,
            black_level,
            white_level,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn samples(&self) -> &[u16] {
        &self.samples
    }
    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }
    pub fn black_level(&self) -> u16 {
        self.black_level
    }
    pub fn white_level(&self) -> u16 {
        self.white_level
    }
    pub fn sample(&self, row: usize, col: usize) -> u16 {
        self.samples[row * self.width + col]
    }

    /// Sidecar metadata describing this frame.
    pub fn metadata(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("pattern", self.pattern.as_str());
        kv.insert("black_level", self.black_level);
        kv.insert("white_level", self.white_level);
        kv
    }
}

/// A packed, normalized RAW tensor `[B, 4, H/2, W/2]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub tensor: Tensor,
    pub channels: Vec<String>,
}

/// Decode a binary 16-bit PGM.
pub fn parse_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Pgm {
            offset: 0,
            msg: "bad magic, expected P5".into(),
        });
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm {
            offset: cur.pos,
            msg: format!("empty image {width}x{height}"),
        });
    }
    if maxval != 65535 {
        return Err(Error::UnsupportedDepth {
            found: maxval as u32,
            expected: 65535,
        });
    }
    if width % 2 != 0 || height % 2 != 0 {
        return Err(Error::Pgm {
            offset: cur.pos,
            msg: format!("odd dimensions {width}x{height}; Bayer frames need full quads"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::Pgm {
                offset: cur.pos,
                msg: "missing whitespace after maxval".into(),
            })
        }
    }
    let start = cur.pos;
    let need = width * height * 2;
    if bytes.len() - start < need {
        return Err(Error::Pgm {
            offset: bytes.len(),
            msg: format!(
                "truncated raster: {} of {need} bytes",
                bytes.len() - start
            ),
        });
    }
    let samples = bytes[start..start + need]
        .chunks_exact(2)
        .map(|p| u16::from_be_bytes([p[0], p[1]]))
        .collect();
    Ok((width, height, samples))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Pgm {
                offset: start,
                msg: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

pub fn encode_pgm16(frame: &BayerFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.width, frame.height).into_bytes();
    out.reserve(frame.samples.len() * 2);
    for s in &frame.samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn parse_sidecar(text: &str) -> Result<(BayerPattern, u16, u16)> {
    let kv = KeyValues::parse(text)?;
    let raw = kv.require("pattern")?;
    let pattern = BayerPattern::parse(raw).ok_or_else(|| Error::BadValue {
        key: "pattern".into(),
        msg: format!("`{raw}` is not one of RGGB, BGGR, GRBG, GBRG"),
    })?;
    let black = kv.parse_required::<u16>("black_level")?;
    let white = kv.parse_required::<u16>("white_level")?;
    Ok((pattern, black, white))
}

pub fn load_raw(image_path: &Path, sidecar_path: &Path) -> Result<BayerFrame> {
    let bytes = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let (width, height, samples) = parse_pgm16(&bytes)?;
    let (pattern, black, white) = parse_sidecar(&text)?;
    BayerFrame::new(width, height, samples, pattern, black, white)
}

/// Write a frame as PGM plus its sidecar metadata.
pub fn save_raw(frame: &BayerFrame, image_path: &Path, sidecar_path: &Path) -> Result<()> {
    fs::write(image_path, encode_pgm16(frame)).map_err(|e| Error::io(image_path, e))?;
    fs::write(sidecar_path, frame.metadata().to_string()).map_err(|e| Error::io(sidecar_path, e))
}

/// Black-subtract, scale to `[0, 1]`, clamp, and pack quads into R, G1, G2, B.
pub fn normalize_pack(frame: &BayerFrame) -> RawImage {
    let (h2, w2) = (frame.height / 2, frame.width / 2);
    let black = frame.black_level as f64;
    let range = (frame.white_level - frame.black_level) as f64;
    let offsets = frame.pattern.offsets();
    let mut data = vec![0.0; 4 * h2 * w2];
    for (c, &(dy, dx)) in offsets.iter().enumerate() {
        let plane = &mut data[c * h2 * w2..(c + 1) * h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                let s = frame.sample(2 * i + dy, 2 * j + dx) as f64;
                plane[i * w2 + j] = ((s - black) / range).clamp(0.0, 1.0);
            }
        }
    }
    RawImage {
        tensor: Tensor::new(vec![1, 4, h2, w2], data).expect("packed shape"),
        channels: CHANNELS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Inverse of the packing: `[B, 4, h, w]` → mosaic `[B, 1, 2h, 2w]`.
pub fn unpack(packed: &Tensor, pattern: BayerPattern) -> Result<Tensor> {
    let s = packed.shape();
    if s.len() != 4 || s[1] != 4 {
        return Err(Error::Frame(format!("unpack expects [B, 4, h, w], got {s:?}")));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let (hh, ww) = (2 * h, 2 * w);
    let mut out = vec![0.0; b * hh * ww];
    let src = packed.data();
    for n in 0..b {
        for (c, &(dy, dx)) in pattern.offsets().iter().enumerate() {
            let plane = &src[(n * 4 + c) * h * w..(n * 4 + c + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    out[n * hh * ww + (2 * i + dy) * ww + 2 * j + dx] = plane[i * w + j];
                }
            }
        }
    }
    Ok(Tensor::new(vec![b, 1, hh, ww], out)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Signal-dependent variance coefficient (shot noise).
    pub a: f64,
    /// Signal-independent variance (read noise).
    pub b: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams { a: 0.0, b: 0.0 };
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { a: 2e-4, b: 1e-6 }
    }
}

/// The noiseless, unit-exposure linear scene, packed like [`normalize_pack`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanReference {
    pub tensor: Tensor,
}

/// Piecewise-smooth RGB scene in `[0, 1]`, planes `[3, height, width]`.
fn synth_scene(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<f64> {
    let n = width * height;
    let mut rgb = vec![0.0; 3 * n];
    let base: [[f64; 3]; 3] = std::array::from_fn(|_| {
        [
            rng.random_range(0.05..0.4),
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.25..0.25),
        ]
    });
    for (c, coef) in base.iter().enumerate() {
        for y in 0..height {
            for x in 0..width {
                let fx = x as f64 / width as f64;
                let fy = y as f64 / height as f64;
                rgb[c * n + y * width + x] = coef[0] + coef[1] * fx + coef[2] * fy;
            }
        }
    }

    let shapes = rng.random_range(4..=9);
    for _ in 0..shapes {
        // reflectances skew dark, as in most real scenes
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0f64..1.0).powi(2));
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(0.05..0.3) * width as f64;
        let ry = rng.random_range(0.05..0.3) * height as f64;
        let disk = rng.random_bool(0.5);
        let amp = rng.random_range(0.0..0.3);
        let (kx, ky) = (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if disk {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if !inside {
                    continue;
                }
                let tex = 1.0
                    + amp * (std::f64::consts::TAU * (kx * x as f64 + ky * y as f64) + phase).sin();
                for c in 0..3 {
                    rgb[c * n + y * width + x] = color[c] * tex;
                }
            }
        }
    }
    // small bright light sources
    let lights = rng.random_range(1..=3);
    for _ in 0..lights {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let r = rng.random_range(0.02..0.06) * width.min(height) as f64;
        let level = rng.random_range(0.85..1.0);
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= r * r {
                    for c in 0..3 {
                        rgb[c * n + y * width + x] = level;
                    }
                }
            }
        }
    }
    for v in &mut rgb {
        *v = v.clamp(0.0, 1.0);
    }
    rgb
}

/// Generate a low-light RGGB frame from a random scene, with its clean
/// linear reference.
pub fn synthesize_raw(
    seed: u64,
    width: usize,
    height: usize,
    exposure_scale: f64,
    noise: NoiseParams,
) -> Result<(BayerFrame, CleanReference)> {
    synthesize_raw_with_levels(
        seed,
        width,
        height,
        exposure_scale,
        noise,
        DEFAULT_BLACK_LEVEL,
        DEFAULT_WHITE_LEVEL,
    )
}

pub fn synthesize_raw_with_levels(
    seed: u64,
    width: usize,
    height: usize,
    exposure_scale: f64,
    noise: NoiseParams,
    black_level: u16,
    white_level: u16,
) -> Result<(BayerFrame, CleanReference)> {
    if !(exposure_scale > 0.0 && exposure_scale <= 1.0) {
        return Err(Error::Domain(format!(
            "exposure scale {exposure_scale} outside (0, 1]"
        )));
    }
    if noise.a < 0.0 || noise.b < 0.0 {
        return Err(Error::Domain("noise variances must be nonnegative".into()));
    }
    if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) || black_level >= white_level {
        return Err(Error::Frame(format!(
            "cannot synthesize {width}x{height} with levels {black_level}..{white_level}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = synth_scene(&mut rng, width, height);
    let n = width * height;
    let pattern = BayerPattern::Rggb;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let range = (white_level - black_level) as f64;

    let mut samples = vec![0u16; n];
    let mut linear = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            let c = match pattern.color_at(y, x) {
                CfaColor::R => 0,
                CfaColor::G => 1,
                CfaColor::B => 2,
            };
            let lin = scene[c * n + y * width + x].powf(2.2);
            linear[y * width + x] = lin;
            let signal = exposure_scale * lin;
            let sigma = (noise.a * signal + noise.b).sqrt();
            let z: f64 = std_normal.sample(&mut rng);
            let v = signal + sigma * z;
            let counts = (black_level as f64 + v * range).round();
            samples[y * width + x] = counts.clamp(0.0, 65535.0) as u16;
        }
    }
    let frame = BayerFrame::new(width, height, samples, pattern, black_level, white_level)?;

    let (h2, w2) = (height / 2, width / 2);
    let mut clean = vec![0.0; 4 * h2 * w2];
    for (c, &(dy, dx)) in pattern.offsets().iter().enumerate() {
        for i in 0..h2 {
            for j in 0..w2 {
                clean[c * h2 * w2 + i * w2 + j] = linear[(2 * i + dy) * width + 2 * j + dx];
            }
        }
    }
    let reference = CleanReference {
        tensor: Tensor::new(vec![1, 4, h2, w2], clean)?,
    };
    Ok((frame, reference))
}

/// Per-channel histogram over uniform bins on `[0, 1]`, batch pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: usize,
    /// `counts[channel][bin]`.
    pub counts: Vec<Vec<u64>>,
}

impl Histogram {
    /// Counts summed over channels.
    pub fn pooled(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.bins];
        for ch in &self.counts {
            for (o, c) in out.iter_mut().zip(ch) {
                *o += c;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "bin_lo,bin_hi")?;
        for c in 0..self.counts.len() {
            write!(w, ",count_c{c}")?;
        }
        writeln!(w)?;
        for b in 0..self.bins {
            let lo = b as f64 / self.bins as f64;
            let hi = (b + 1) as f64 / self.bins as f64;
            write!(w, "{lo},{hi}")?;
            for ch in &self.counts {
                write!(w, ",{}", ch[b])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn bin_index(v: f64, bins: usize) -> usize {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

/// Histogram of a `[B, C, H, W]` tensor.
pub fn histogram(image: &Tensor, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Domain(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let s = image.shape();
    if s.len() != 4 {
        return Err(Error::Domain(format!("histogram expects [B, C, H, W], got {s:?}")));
    }
    let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut counts = vec![vec![0u64; bins]; c];
    for n in 0..b {
        for (ch, hist) in counts.iter_mut().enumerate() {
            let off = (n * c + ch) * plane;
            for &v in &image.data()[off..off + plane] {
                hist[bin_index(v, bins)] += 1;
            }
        }
    }
    Ok(Histogram { bins, counts })
}

/// Shannon entropy in bits.
pub fn entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("entropy of an empty histogram".into()));
    }
    let t = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum())
}

/// Sample skewness `m3 / m2^1.5`; zero for constant data.
pub fn skewness(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    /// `[0, 1]` → `[0, 255]`, out-of-range values clamped.
    Clamp01,
    /// `[min, max]` → `[0, 255]`; a constant plane maps to 0.
    MinMax,
}

/// Quantize a 2-D plane to 8 bits, rounding half up.
pub fn to_bytes(plane: &Tensor, mode: NormalizeMode) -> Result<Vec<u8>> {
    if plane.rank() != 2 {
        return Err(Error::Domain(format!(
            "image output expects a 2-D plane, got {:?}",
            plane.shape()
        )));
    }
    let d = plane.data();
    let (lo, scale) = match mode {
        NormalizeMode::Clamp01 => (0.0, 1.0),
        NormalizeMode::MinMax => {
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            (lo, if span > 0.0 { 1.0 / span } else { 0.0 })
        }
    };
    Ok(d.iter()
        .map(|&v| {
            let u = ((v - lo) * scale).clamp(0.0, 1.0);
            let u = if u.is_nan() { 0.0 } else { u };
            (u * 255.0 + 0.5).floor().min(255.0) as u8
        })
        .collect())
}

pub fn encode_pgm8(plane: &Tensor, mode: NormalizeMode) -> Result<Vec<u8>> {
    let bytes = to_bytes(plane, mode)?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&bytes);
    Ok(out)
}

pub fn write_image(plane: &Tensor, path: &Path, mode: NormalizeMode) -> Result<()> {
    let bytes = encode_pgm8(plane, mode)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_cover_the_quad() {
        for p in [BayerPattern::Rggb, BayerPattern::Bggr, BayerPattern::Grbg, BayerPattern::Gbrg] {
            let mut seen = p.offsets().to_vec();
            seen.sort();
            assert_eq!(seen, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
            let [r, g1, g2, b] = p.offsets();
            assert_eq!(p.color_at(r.0, r.1), CfaColor::R);
            assert_eq!(p.color_at(b.0, b.1), CfaColor::B);
            assert_eq!(p.color_at(g1.0, g1.1), CfaColor::G);
            assert_eq!(p.color_at(g2.0, g2.1), CfaColor::G);
            assert_eq!(g1.0, r.0, "G1 shares the red row");
            assert_eq!(BayerPattern::parse(p.as_str()), Some(p));
        }
    }

    #[test]
    fn bin_index_edges() {
        assert_eq!(bin_index(0.0, 256), 0);
        assert_eq!(bin_index(1.0, 256), 255);
        assert_eq!(bin_index(0.5, 256), 128);
        assert_eq!(bin_index(-3.0, 4), 0);
        assert_eq!(bin_index(f64::NAN, 4), 0);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # comment\n2 # w\n2\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 0, 2, 1, 0, 255, 255]);
        let (w, h, s) = parse_pgm16(&bytes).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(s, vec![1, 2, 256, 65535]);
    }
}

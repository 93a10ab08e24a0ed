//! Video tensors, temporal resampling, seeded Gaussian noise and the raw dump format.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Counter-based generator used for every random stream in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `(seed, tag)` with a splitmix64 finalizer.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(frames, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_frames(self, frames: usize) -> Self {
        Self { frames, ..self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}x{}x{}x{}]",
            self.frames, self.channels, self.height, self.width
        )
    }
}

/// Frame-major `[F x C x H x W]` array. `stride_level = k` means the tensor holds
/// every `2^k`-th frame of the full-rate clip.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor<T: Scalar> {
    data: Vec<T>,
    shape: Shape,
    stride_level: u32,
}

fn check_pow2(factor: usize) -> Result<u32> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::Shape(format!("factor {factor} is not a power of two")));
    }
    Ok(factor.trailing_zeros())
}

impl<T: Scalar> VideoTensor<T> {
    pub fn new(data: Vec<T>, shape: Shape) -> Result<Self> {
        if shape.frames == 0 || shape.frame_len() == 0 {
            return Err(Error::Shape(format!("degenerate shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            shape,
            stride_level: 0,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::new(vec![T::zero(); shape.len()], shape).expect("valid shape")
    }

    /// One scalar per frame, `C = H = W = 1`.
    pub fn scalar_frames(values: &[T]) -> Self {
        Self::new(values.to_vec(), Shape::new(values.len(), 1, 1, 1)).expect("non-empty frames")
    }

    pub fn with_stride_level(mut self, level: u32) -> Self {
        self.stride_level = level;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn frames(&self) -> usize {
        self.shape.frames
    }

    pub fn frame_len(&self) -> usize {
        self.shape.frame_len()
    }

    pub fn stride_level(&self) -> u32 {
        self.stride_level
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn frame(&self, i: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.check_same(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Ok(Self {
            data,
            shape: self.shape,
            stride_level: self.stride_level,
        })
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            shape: self.shape,
            stride_level: self.stride_level,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lin_comb(T::one(), other, -T::one())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.lin_comb(T::one(), other, T::one())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs())))
    }

    /// Keeps frames `0, factor, 2*factor, ...`.
    pub fn down_temporal(&self, factor: usize) -> Result<Self> {
        let level = check_pow2(factor)?;
        if self.frames() % factor != 0 {
            return Err(Error::Shape(format!(
                "{} frames not divisible by {factor}",
                self.frames()
            )));
        }
        let n = self.frame_len();
        let frames = self.frames() / factor;
        let mut data = Vec::with_capacity(frames * n);
        for i in 0..frames {
            data.extend_from_slice(self.frame(i * factor));
        }
        Ok(Self {
            data,
            shape: self.shape.with_frames(frames),
            stride_level: self.stride_level + level,
        })
    }

    /// Repeats each frame `factor` times in order.
    pub fn up_temporal_nearest(&self, factor: usize) -> Result<Self> {
        let level = check_pow2(factor)?;
        let n = self.frame_len();
        let frames = self.frames() * factor;
        let mut data = Vec::with_capacity(frames * n);
        for i in 0..self.frames() {
            for _ in 0..factor {
                data.extend_from_slice(self.frame(i));
            }
        }
        Ok(Self {
            data,
            shape: self.shape.with_frames(frames),
            stride_level: self.stride_level.saturating_sub(level),
        })
    }

    /// i.i.d. standard normal entries drawn from `rng`.
    pub fn gaussian(shape: Shape, rng: &mut SeededRng) -> Self {
        let data = (0..shape.len())
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::new(data, shape).expect("valid shape")
    }

    /// i.i.d. standard normal tensor, deterministic in `seed`.
    pub fn sample_gaussian(shape: Shape, seed: u64) -> Self {
        Self::gaussian(shape, &mut seeded_rng(seed))
    }

    /// Writes the raw dump: four little-endian `u32` dims `F, C, H, W`, then
    /// little-endian `f32` samples.
    pub fn write_raw(&self, mut w: impl Write) -> Result<()> {
        let s = self.shape;
        for d in [s.frames, s.channels, s.height, s.width] {
            let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dim {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &x in &self.data {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raw(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let dim = |i: usize| {
            u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize
        };
        let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
        let mut bytes = vec![0u8; shape.len() * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Self::new(data, shape)
    }

    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_raw(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_raw(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frames(n: usize) -> VideoTensor<f64> {
        VideoTensor::scalar_frames(&(0..n).map(|i| i as f64).collect::<Vec<_>>())
    }

    #[test]
    fn down_stride() {
        assert_eq!(frames(4).down_temporal(2).unwrap().data(), &[0.0, 2.0]);
        assert_eq!(frames(8).down_temporal(4).unwrap().data(), &[0.0, 4.0]);
        assert_eq!(frames(4).down_temporal(1).unwrap(), frames(4));
        assert_eq!(frames(8).down_temporal(4).unwrap().stride_level(), 2);
        assert!(matches!(frames(6).down_temporal(4), Err(Error::Shape(_))));
        assert!(matches!(frames(6).down_temporal(3), Err(Error::Shape(_))));
    }

    #[test]
    fn up_nearest() {
        let x = VideoTensor::scalar_frames(&[0.0, 2.0]);
        assert_eq!(x.up_temporal_nearest(2).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
        assert_eq!(x.up_temporal_nearest(1).unwrap(), x);
        let y = frames(8);
        let round = y.down_temporal(2).unwrap().up_temporal_nearest(2).unwrap();
        assert_eq!(round.shape(), y.shape());
        for i in (0..8).step_by(2) {
            assert_eq!(round.frame(i), y.frame(i));
        }
    }

    #[test]
    fn multi_pixel_frames_move_together() {
        let shape = Shape::new(4, 1, 2, 2);
        let x = VideoTensor::<f64>::new((0..16).map(|i| i as f64).collect(), shape).unwrap();
        let d = x.down_temporal(2).unwrap();
        assert_eq!(d.frame(1), x.frame(2));
        let u = d.up_temporal_nearest(2).unwrap();
        assert_eq!(u.frame(3), x.frame(2));
    }

    #[test]
    fn gaussian_determinism_and_moments() {
        let shape = Shape::new(1000, 1, 10, 100);
        let a = VideoTensor::<f64>::sample_gaussian(shape, 7);
        let b = VideoTensor::<f64>::sample_gaussian(shape, 7);
        assert_eq!(a, b);
        let c = VideoTensor::<f64>::sample_gaussian(shape, 8);
        assert_ne!(a, c);
        let n = a.data().len() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        let var = a.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn strided_noise_stays_standard() {
        let a = VideoTensor::<f64>::sample_gaussian(Shape::new(4096, 1, 8, 8), 3);
        let d = a.down_temporal(4).unwrap();
        let n = d.data().len() as f64;
        let mean = d.data().iter().sum::<f64>() / n;
        let var = d.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
        // adjacent retained frames are uncorrelated
        let cov = (0..d.frames() - 1)
            .flat_map(|i| d.frame(i).iter().zip(d.frame(i + 1)).map(|(a, b)| a * b))
            .sum::<f64>()
            / (n - 64.0);
        assert!(cov.abs() < 0.03, "cov {cov}");
    }

    #[test]
    fn nearest_upsampling_pair_covariance() {
        let n = 100_000usize;
        let g = VideoTensor::<f64>::sample_gaussian(Shape::new(n, 1, 1, 1), 11);
        let u = g.up_temporal_nearest(2).unwrap();
        let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (a, b) = (u.data()[2 * i], u.data()[2 * i + 1]);
            c00 += a * a;
            c01 += a * b;
            c11 += b * b;
        }
        for c in [c00, c01, c11] {
            assert!((c / n as f64 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn raw_dump_header_layout() {
        let x = VideoTensor::<f64>::new(vec![1.5, -2.0], Shape::new(2, 1, 1, 1)).unwrap();
        let mut buf = Vec::new();
        x.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8);
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1.5f32.to_le_bytes());
        let back = VideoTensor::<f64>::read_raw(&buf[..]).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    proptest! {
        #[test]
        fn raw_dump_roundtrip(vals in proptest::collection::vec(-1e3f32..1e3, 1..64)) {
            let x = VideoTensor::<f32>::scalar_frames(&vals);
            let mut buf = Vec::new();
            x.write_raw(&mut buf).unwrap();
            let back = VideoTensor::<f32>::read_raw(&buf[..]).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }

        #[test]
        fn down_then_up_keeps_even_frames(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..16),
        ) {
            let mut v = vals.clone();
            v.extend(vals.iter().map(|x| x + 1.0));
            let x = VideoTensor::scalar_frames(&v);
            let r = x.down_temporal(2).unwrap().up_temporal_nearest(2).unwrap();
            for i in (0..v.len()).step_by(2) {
                prop_assert_eq!(r.frame(i), x.frame(i));
            }
        }
    }
}

//! Semantic layouts, RGB images, noise vectors and datasets.

mod augment;
mod netpbm;
mod synth;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use augment::{augment, flip_horizontal, resize_bilinear, resize_nearest, AugmentParams};
pub use netpbm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, quantize, read_image, read_layout, read_manifest,
    read_dataset_dir, write_atomic, write_dataset_dir, write_image, write_layout, write_manifest,
    TEST_MANIFEST, TRAIN_MANIFEST,
};
pub use synth::{generate, render, Rgb, SyntheticWorldConfig};

/// Per-pixel class-index map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticLayout {
    width: usize,
    height: usize,
    classes: usize,
    pixels: Vec<u8>,
}

impl SemanticLayout {
    pub fn new(width: usize, height: usize, classes: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Layout(format!("zero extent {width}×{height}")));
        }
        if classes == 0 || classes > 256 {
            return Err(Error::Layout(format!("class count {classes} outside 1..=256")));
        }
        if pixels.len() != width * height {
            return Err(Error::Layout(format!(
                "{} pixels for a {width}×{height} layout",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|&p| p as usize >= classes) {
            return Err(Error::Layout(format!(
                "pixel {i} has class {} but only {classes} classes exist",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, classes: usize, class: u8) -> Result<Self> {
        Self::new(width, height, classes, vec![class; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel count of every class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }

    /// Classes with at least one pixel, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        self.histogram()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(c, _)| c)
            .collect()
    }

    /// One-hot encoding as a `[|C|, H, W]` tensor.
    pub fn one_hot<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut data = vec![T::zero(); self.classes * plane];
        for (i, &p) in self.pixels.iter().enumerate() {
            data[p as usize * plane + i] = T::one();
        }
        Tensor::from_raw(vec![self.classes, self.height, self.width], data)
    }

    /// 0/1 mask of class `c` replicated over `channels`, shaped `[channels, H, W]`.
    pub fn class_mask<T: Real>(&self, c: usize, channels: usize) -> Result<Tensor<T>> {
        if c >= self.classes {
            return Err(Error::Invalid(format!(
                "class {c} out of range for {} classes",
                self.classes
            )));
        }
        let plane: Vec<T> = self
            .pixels
            .iter()
            .map(|&p| if p as usize == c { T::one() } else { T::zero() })
            .collect();
        let mut data = Vec::with_capacity(plane.len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(&plane);
        }
        Ok(Tensor::from_raw(vec![channels, self.height, self.width], data))
    }
}

/// RGB image with intensities in `[0, 1]`, stored interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height * 3 {
            return Err(Error::Invalid(format!(
                "{} values for a {width}×{height} RGB image",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!(
                "intensity {} at index {i} outside [0,1]",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    /// Planar `[3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut data = vec![T::zero(); 3 * plane];
        for (i, px) in self.values.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = T::from_f64(px[c] as f64);
            }
        }
        Tensor::from_raw(vec![3, self.height, self.width], data)
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); values are clamped to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 3 {
            return Err(Error::Invalid(format!("expected 3 channels, got {c}")));
        }
        let plane = h * w;
        let src = t.data();
        let mut values = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for ch in 0..3 {
                values.push((src[ch * plane + i].as_f64() as f32).clamp(0.0, 1.0));
            }
        }
        Self::new(w, h, values)
    }

    /// Mean absolute per-channel difference.
    pub fn mean_l1(&self, other: &Self) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        s / self.values.len() as f64
    }
}

/// Per-class noise values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f32>);

impl NoiseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("noise entry {v} outside [-1,1]")));
        }
        Ok(Self(values))
    }

    /// Clamps every entry into `[-1, 1]`, reporting whether anything changed.
    /// Non-finite entries become zero.
    pub fn clamped(values: &[f64]) -> (Self, bool) {
        let mut changed = false;
        let v = values
            .iter()
            .map(|&x| {
                let y = if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
                changed |= y != x;
                y as f32
            })
            .collect();
        (Self(v), changed)
    }

    pub fn zeros(classes: usize) -> Self {
        Self(vec![0.0; classes])
    }

    /// Uniform sample from `[-1, 1]^classes`.
    pub fn sample(classes: usize, rng: &mut impl Rng) -> Self {
        Self((0..classes).map(|_| rng.random_range(-1.0f32..=1.0)).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Componentwise distance `|other − self|`.
    pub fn distance(&self, other: &Self) -> Vec<f32> {
        self.0.iter().zip(&other.0).map(|(a, b)| (b - a).abs()).collect()
    }
}

/// Noise input channel: each pixel carries the noise entry of its class.
pub fn build_noise_channel<T: Real>(layout: &SemanticLayout, noise: &NoiseVector) -> Result<Tensor<T>> {
    if noise.len() != layout.class_count() {
        return Err(Error::Invalid(format!(
            "noise has {} entries, layout has {} classes",
            noise.len(),
            layout.class_count()
        )));
    }
    let data = layout
        .pixels()
        .iter()
        .map(|&p| T::from_f64(noise.values()[p as usize] as f64))
        .collect();
    Ok(Tensor::from_raw(vec![1, layout.height(), layout.width()], data))
}

/// Number of distinct noise settings when class `c` admits `k_c` values.
pub fn count_compositions(valid_values_per_class: &[u64]) -> Result<u128> {
    if valid_values_per_class.is_empty() {
        return Err(Error::Invalid("composition count of an empty class list".into()));
    }
    valid_values_per_class.iter().try_fold(1u128, |acc, &k| {
        if k == 0 {
            return Err(Error::Invalid("every class needs at least one valid value".into()));
        }
        acc.checked_mul(k as u128)
            .ok_or_else(|| Error::Invalid("composition count overflows u128".into()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub layout: SemanticLayout,
    pub image: ImageRgb,
    pub split: Split,
}

/// Paired layouts and images sharing dimensions and class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Invalid("dataset is empty".into()))?;
        let (w, h, c) = (first.layout.width(), first.layout.height(), first.layout.class_count());
        for (i, s) in samples.iter().enumerate() {
            if (s.layout.width(), s.layout.height(), s.layout.class_count()) != (w, h, c)
                || (s.image.width(), s.image.height()) != (w, h)
            {
                return Err(Error::Invalid(format!(
                    "sample {i} does not match the {w}×{h}, {c}-class shape of sample 0"
                )));
            }
        }
        Ok(Self {
            samples,
            class_count: c,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn size(&self) -> (usize, usize) {
        let s = &self.samples[0];
        (s.layout.width(), s.layout.height())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Re-tags the last `n` samples as test data.
    pub fn with_holdout(mut self, n: usize) -> Self {
        let len = self.samples.len();
        for s in &mut self.samples[len.saturating_sub(n)..] {
            s.split = Split::Test;
        }
        self
    }
}

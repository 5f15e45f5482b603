//! Image augmentation: zero-pad, random crop, random horizontal flip,
//! per-image whitening, then cutout, in that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `height x width x channels` image, row-major HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height * width * channels != data.len() || data.is_empty() {
            return Err(Error::Invalid(format!(
                "{} values do not form a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    fn px(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.width + j) * self.channels;
        &self.data[o..o + self.channels]
    }

    fn px_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.width + j) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Side of the zero-padded canvas.
    pub pad_to: usize,
    /// Side of the random crop fed to the network.
    pub crop_to: usize,
    pub flip: bool,
    pub whiten: bool,
    /// Side of the cutout square; 0 disables cutout.
    pub cutout_size: usize,
}

impl AugmentConfig {
    /// Proportions of the usual 32 -> 40 -> 32 pad-and-crop recipe scaled to
    /// `side`, with a cutout of half the crop.
    pub fn standard(side: usize) -> Self {
        Self {
            pad_to: (side * 40).div_ceil(32),
            crop_to: side,
            flip: true,
            whiten: true,
            cutout_size: side / 2,
        }
    }

    /// Checks the config against stored images of `height x width`.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.crop_to == 0 || self.pad_to < self.crop_to {
            return Err(Error::Invalid(format!(
                "augment: need pad_to >= crop_to >= 1 (pad_to {}, crop_to {})",
                self.pad_to, self.crop_to
            )));
        }
        if self.pad_to < height.max(width) || self.crop_to > height.min(width) {
            return Err(Error::Invalid(format!(
                "augment: {height}x{width} images need crop_to <= {} and pad_to >= {}",
                height.min(width),
                height.max(width)
            )));
        }
        Ok(())
    }
}

/// Places `img` at the centre of a `size x size` zero canvas.
pub fn pad_centered(img: &Image, size: usize) -> Image {
    let mut out = Image::zeros(size, size, img.channels);
    let (top, left) = ((size - img.height) / 2, (size - img.width) / 2);
    for i in 0..img.height {
        for j in 0..img.width {
            out.px_mut(top + i, left + j).copy_from_slice(img.px(i, j));
        }
    }
    out
}

/// `size x size` window with its top-left corner at `(top, left)`.
pub fn crop(img: &Image, top: usize, left: usize, size: usize) -> Image {
    let mut out = Image::zeros(size, size, img.channels);
    for i in 0..size {
        for j in 0..size {
            out.px_mut(i, j).copy_from_slice(img.px(top + i, left + j));
        }
    }
    out
}

/// Crop at a uniformly random offset that stays inside `img`.
pub fn random_crop(img: &Image, size: usize, rng: &mut impl Rng) -> Image {
    let top = rng.random_range(0..=img.height - size);
    let left = rng.random_range(0..=img.width - size);
    crop(img, top, left, size)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    for i in 0..img.height {
        for j in 0..img.width {
            out.px_mut(i, j).copy_from_slice(img.px(i, img.width - 1 - j));
        }
    }
    out
}

/// Subtracts the mean and divides by `max(std, 1/sqrt(n))`, where `n`
/// counts every value in the image.
pub fn whiten(img: &Image) -> Image {
    let mean = img.mean();
    let floor = 1.0 / (img.data.len() as f64).sqrt();
    let scale = img.std().max(floor);
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = (*v - mean) / scale);
    out
}

/// Zeroes a `size x size` square centred on `(cy, cx)`, clipped at the
/// borders.
pub fn cutout(img: &Image, cy: usize, cx: usize, size: usize) -> Image {
    let mut out = img.clone();
    let half = size / 2;
    let (r0, c0) = (cy.saturating_sub(half), cx.saturating_sub(half));
    let (r1, c1) = ((cy + size - half).min(img.height), (cx + size - half).min(img.width));
    for i in r0..r1 {
        for j in c0..c1 {
            out.px_mut(i, j).fill(0.0);
        }
    }
    out
}

/// The training-time pipeline.
pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let padded = pad_centered(img, cfg.pad_to);
    let mut out = random_crop(&padded, cfg.crop_to, rng);
    if cfg.flip && rng.random_bool(0.5) {
        out = flip_horizontal(&out);
    }
    if cfg.whiten {
        out = whiten(&out);
    }
    if cfg.cutout_size > 0 {
        let cy = rng.random_range(0..out.height);
        let cx = rng.random_range(0..out.width);
        out = cutout(&out, cy, cx, cfg.cutout_size);
    }
    out
}

/// The deterministic evaluation pipeline: centre crop, then whitening.
pub fn eval_transform(img: &Image, cfg: &AugmentConfig) -> Image {
    let top = (img.height - cfg.crop_to) / 2;
    let left = (img.width - cfg.crop_to) / 2;
    let out = crop(img, top, left, cfg.crop_to);
    if cfg.whiten {
        whiten(&out)
    } else {
        out
    }
}

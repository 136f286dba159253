//! Image augmentation on `height x width x channels` row-major pixel buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::Matrix;

pub const CROP_PADDING: usize = 4;
pub const CONTRAST_RANGE: (f64, f64) = (0.45, 0.55);
pub const BRIGHTNESS_RANGE: (f64, f64) = (-0.15, 0.15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn at(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    /// Random left/right flip, then a random crop of the 4-pixel zero-padded image.
    FlipCrop,
    /// Random contrast and brightness, then a random crop. No flip.
    BrightnessContrastCrop,
}

pub fn flip_horizontal(img: &[f64], shape: ImageShape) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..shape.height {
        for x in 0..shape.width {
            for c in 0..shape.channels {
                out[shape.at(y, shape.width - 1 - x, c)] = img[shape.at(y, x, c)];
            }
        }
    }
    out
}

/// Zero-pads by `pad` on every side and crops back to the original size with
/// the window's top-left corner at `offset = (dy, dx)` in padded coordinates.
/// `offset = (pad, pad)` recovers the input.
pub fn pad_and_crop(img: &[f64], shape: ImageShape, pad: usize, offset: (usize, usize)) -> Vec<f64> {
    let (dy, dx) = offset;
    let mut out = vec![0.0; img.len()];
    for y in 0..shape.height {
        let sy = (y + dy) as isize - pad as isize;
        if sy < 0 || sy >= shape.height as isize {
            continue;
        }
        for x in 0..shape.width {
            let sx = (x + dx) as isize - pad as isize;
            if sx < 0 || sx >= shape.width as isize {
                continue;
            }
            for c in 0..shape.channels {
                out[shape.at(y, x, c)] = img[shape.at(sy as usize, sx as usize, c)];
            }
        }
    }
    out
}

pub fn adjust_brightness(img: &mut [f64], delta: f64) {
    img.iter_mut().for_each(|v| *v += delta);
}

/// `(x - mean_c) * factor + mean_c` with the mean taken per channel.
pub fn adjust_contrast(img: &mut [f64], shape: ImageShape, factor: f64) {
    let pixels = (shape.height * shape.width) as f64;
    for c in 0..shape.channels {
        let mean = img.iter().skip(c).step_by(shape.channels).sum::<f64>() / pixels;
        img.iter_mut()
            .skip(c)
            .step_by(shape.channels)
            .for_each(|v| *v = (*v - mean) * factor + mean);
    }
}

/// Augments every row of `batch` in place with fresh random draws per image.
pub fn augment_batch<R: Rng + ?Sized>(
    batch: &mut Matrix,
    shape: Option<ImageShape>,
    kind: AugmentKind,
    rng: &mut R,
) -> Result<()> {
    let shape = shape.ok_or_else(|| invalid("augmentation requires image features"))?;
    if shape.len() != batch.cols() {
        return Err(invalid("image shape does not match feature width"));
    }
    if shape.height != shape.width {
        return Err(invalid("augmentation expects square images"));
    }
    for i in 0..batch.rows() {
        let mut img = batch.row(i).to_vec();
        match kind {
            AugmentKind::FlipCrop => {
                if rng.random_bool(0.5) {
                    img = flip_horizontal(&img, shape);
                }
            }
            AugmentKind::BrightnessContrastCrop => {
                adjust_contrast(&mut img, shape, rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1));
                adjust_brightness(&mut img, rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1));
            }
        }
        let offset = (
            rng.random_range(0..=2 * CROP_PADDING),
            rng.random_range(0..=2 * CROP_PADDING),
        );
        img = pad_and_crop(&img, shape, CROP_PADDING, offset);
        batch.row_mut(i).copy_from_slice(&img);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    const SHAPE: ImageShape = ImageShape {
        height: 6,
        width: 6,
        channels: 2,
    };

    fn image() -> Vec<f64> {
        (0..SHAPE.len()).map(|i| i as f64 / 100.0).collect()
    }

    #[test]
    fn centre_crop_of_padding_is_identity() {
        assert_eq!(pad_and_crop(&image(), SHAPE, 4, (4, 4)), image());
    }

    #[test]
    fn shifted_crop_moves_pixels_and_fills_zeros() {
        let out = pad_and_crop(&image(), SHAPE, 4, (5, 4));
        // one row up: output row 0 is input row 1, last row is padding
        assert_eq!(out[SHAPE.at(0, 2, 1)], image()[SHAPE.at(1, 2, 1)]);
        assert_eq!(out[SHAPE.at(5, 2, 1)], 0.0);
    }

    #[test]
    fn flip_is_an_involution() {
        let once = flip_horizontal(&image(), SHAPE);
        assert_ne!(once, image());
        assert_eq!(flip_horizontal(&once, SHAPE), image());
    }

    #[test]
    fn brightness_shift_is_bounded() {
        let mut rng = rng_from_seed(3);
        let original = Matrix::from_vec(20, SHAPE.len(), (0..20).flat_map(|_| image()).collect()).unwrap();
        for _ in 0..20 {
            let mut img = image();
            let delta = rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1);
            adjust_brightness(&mut img, delta);
            let shifts: Vec<f64> = img.iter().zip(image()).map(|(a, b)| a - b).collect();
            assert!(shifts.iter().all(|s| (s - shifts[0]).abs() < 1e-12));
            assert!(shifts[0].abs() <= 0.15 + 1e-12);
        }
        let mut batch = original.clone();
        augment_batch(&mut batch, Some(SHAPE), AugmentKind::BrightnessContrastCrop, &mut rng).unwrap();
        assert_eq!(batch.rows(), original.rows());
        assert_eq!(batch.cols(), original.cols());
    }

    #[test]
    fn contrast_preserves_channel_means() {
        let mut img = image();
        adjust_contrast(&mut img, SHAPE, 0.5);
        for c in 0..2 {
            let before: f64 = image().iter().skip(c).step_by(2).sum();
            let after: f64 = img.iter().skip(c).step_by(2).sum();
            assert!((before - after).abs() < 1e-10);
        }
    }

    #[test]
    fn non_image_features_rejected() {
        let mut batch = Matrix::zeros(2, 5);
        let mut rng = rng_from_seed(0);
        assert!(augment_batch(&mut batch, None, AugmentKind::FlipCrop, &mut rng).is_err());
        assert!(augment_batch(&mut batch, Some(SHAPE), AugmentKind::FlipCrop, &mut rng).is_err());
    }
}

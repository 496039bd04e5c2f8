//! Small image helpers: loading, float conversion, bilinear resizing and
//! content hashing.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// One output coordinate of a 1-D bilinear resize: the two source indices
/// and the weight of the second one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centre bilinear taps (the `align_corners = false` convention),
/// with source coordinates clamped to `[0, in_len - 1]`.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    assert!(in_len > 0 && out_len > 0, "empty resize");
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn resize_bilinear(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.to_owned();
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (a, b) = (ty[r], tx[c]);
        let top = src[(a.lo, b.lo)] * (1.0 - b.frac) + src[(a.lo, b.hi)] * b.frac;
        let bot = src[(a.hi, b.lo)] * (1.0 - b.frac) + src[(a.hi, b.hi)] * b.frac;
        top * (1.0 - a.frac) + bot * a.frac
    })
}

/// Resizes each channel of a `C x H x W` array.
pub fn resize_bilinear_chw(src: ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let c = src.dim().0;
    let mut out = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = resize_bilinear(src.index_axis(ndarray::Axis(0), ch), out_h, out_w);
        out.index_axis_mut(ndarray::Axis(0), ch).assign(&plane);
    }
    out
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(|e| CoreError::image(path, e))?.into_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| CoreError::image(path, e))
}

/// `3 x H x W` array in `[0, 1]`.
pub fn rgb_to_chw(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

/// Any image file read as luma and scaled to `[0, 1]`.
pub fn read_gray(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let gray = image::open(path).map_err(|e| CoreError::image(path, e))?.into_luma8();
    Ok(gray_to_array(&gray))
}

pub fn gray_to_array(gray: &GrayImage) -> Array2<f64> {
    let (w, h) = gray.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        gray.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
    })
}

/// Quantizes `[0, 1]` values to 8 bits (round to nearest) and writes a PNG.
pub fn write_gray(values: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = values.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = values[(y as usize, x as usize)].clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| CoreError::image(path, e))
}

/// Hex SHA-256 over the dimensions and raw RGB bytes; independent of the
/// file encoding.
pub fn content_hash(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hex::encode(hasher.finalize())
}

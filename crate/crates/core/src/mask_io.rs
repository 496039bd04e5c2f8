//! Masks on disk are 8-bit single-channel PNGs holding only 0 and 255.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::types::BinaryMask;

pub fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    let (h, w) = mask.shape();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask_to_gray(mask)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| CoreError::image(path, e))
}

/// Strict reader: the file must be 8-bit grayscale with values in {0, 255}.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| CoreError::image(path, e))?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(CoreError::MaskFormat {
                path: path.to_path_buf(),
                message: format!("expected 8-bit grayscale, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let mut values = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in gray.enumerate_pixels() {
        values[(y as usize, x as usize)] = match p.0[0] {
            0 => 0,
            255 => 1,
            v => {
                return Err(CoreError::MaskFormat {
                    path: path.to_path_buf(),
                    message: format!("value {v} at ({y}, {x}) is neither 0 nor 255"),
                })
            }
        };
    }
    Ok(BinaryMask::from_array(values).expect("values are 0/1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(mask: &BinaryMask) -> BinaryMask {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_mask(mask, &p).unwrap();
        read_mask(&p).unwrap()
    }

    #[test]
    fn all_zero_and_all_one() {
        let z = BinaryMask::zeros(4, 4);
        assert_eq!(roundtrip(&z), z);
        let o = BinaryMask::ones(4, 4);
        assert_eq!(roundtrip(&o), o);
    }

    #[test]
    fn zero_mask_png_is_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.png");
        write_mask(&BinaryMask::zeros(4, 4), &p).unwrap();
        let img = image::open(&p).unwrap().into_luma8();
        assert_eq!(img.as_raw(), &vec![0u8; 16]);
    }

    #[test]
    fn checkerboard_roundtrip() {
        let m = BinaryMask::from_fn(4, 4, |r, c| (r + c) % 2 == 0);
        assert_eq!(roundtrip(&m), m);
    }

    #[test]
    fn non_binary_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        GrayImage::from_pixel(3, 3, image::Luma([128])).save(&p).unwrap();
        assert!(matches!(read_mask(&p).unwrap_err(), CoreError::MaskFormat { .. }));
    }

    #[test]
    fn rgb_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&p).unwrap();
        assert!(read_mask(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn read_write_is_identity(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let m = BinaryMask::from_fn(h, w, |r, c| bits[r * 12 + c]);
            prop_assert_eq!(roundtrip(&m), m);
        }
    }
}

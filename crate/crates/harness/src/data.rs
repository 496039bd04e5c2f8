//! Training samples: image, pseudo-label and the two derived targets, all at
//! the network input size.
//!
//! Edge targets and certainty masks are deterministic functions of the
//! resized pseudo-label, so they are computed once and cached under
//! `<labels>/.targets_<size>/`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sodkit_core::imageops::{load_rgb, resize_bilinear, resize_bilinear_chw, rgb_to_chw};
use sodkit_core::{read_mask, write_mask, BinaryMask, CertaintyMask, EdgeMap, ImageRecord};
use sodkit_model::losskit::{certainty_mask, edge_target, DEFAULT_BAND};

use crate::error::{HarnessError, Result};

/// Per-channel input normalization (ImageNet statistics).
pub const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub image_id: String,
    /// Normalized `3 x S x S`.
    pub image: Array3<f64>,
    pub label: BinaryMask,
    pub certainty: CertaintyMask,
    pub edge: EdgeMap,
}

impl TrainItem {
    /// Horizontal flip of the image and every target together.
    pub fn flipped(&self) -> TrainItem {
        let mut image = self.image.clone();
        image.invert_axis(Axis(2));
        TrainItem {
            image_id: self.image_id.clone(),
            image: image.as_standard_layout().to_owned(),
            label: self.label.flip_horizontal(),
            certainty: CertaintyMask(self.certainty.0.flip_horizontal()),
            edge: EdgeMap(self.edge.0.flip_horizontal()),
        }
    }
}

/// `3 x S x S` network input from an RGB image of any size.
pub fn image_tensor(img: &image::RgbImage, size: usize) -> Array3<f64> {
    let mut x = resize_bilinear_chw(rgb_to_chw(img).view(), size, size);
    for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
        plane.mapv_inplace(|v| (v - MEAN[c]) / STD[c]);
    }
    x
}

/// Bilinear resize of the 0/1 mask, re-binarized at 0.5.
pub fn resize_mask(mask: &BinaryMask, size: usize) -> BinaryMask {
    if mask.shape() == (size, size) {
        return mask.clone();
    }
    let r = resize_bilinear(mask.to_f64().view(), size, size);
    BinaryMask::from_fn(size, size, |y, x| r[(y, x)] >= 0.5)
}

pub fn label_path(labels: &Path, image_id: &str) -> PathBuf {
    labels.join(format!("{image_id}.png"))
}

fn cache_dir(labels: &Path, size: usize) -> PathBuf {
    labels.join(format!(".targets_{size}"))
}

fn is_fresh(cache: &Path, source: &Path) -> bool {
    let modified = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((modified(cache), modified(source)), (Some(c), Some(s)) if c >= s)
}

/// Label, certainty mask and edge target at `size`, from the cache when it
/// is at least as new as the label.
pub fn load_targets(labels: &Path, image_id: &str, size: usize) -> Result<(BinaryMask, CertaintyMask, EdgeMap)> {
    let src = label_path(labels, image_id);
    if !src.exists() {
        return Err(HarnessError::MissingLabel {
            image_id: image_id.to_string(),
            path: src,
        });
    }
    let label = resize_mask(&read_mask(&src)?, size);
    let dir = cache_dir(labels, size);
    let cert_path = dir.join(format!("{image_id}_certainty.png"));
    let edge_path = dir.join(format!("{image_id}_edge.png"));
    if is_fresh(&cert_path, &src) && is_fresh(&edge_path, &src) {
        let certainty = read_mask(&cert_path)?;
        let edge = read_mask(&edge_path)?;
        if certainty.shape() == label.shape() && edge.shape() == label.shape() {
            return Ok((label, CertaintyMask(certainty), EdgeMap(edge)));
        }
    }
    let certainty = certainty_mask(&label, DEFAULT_BAND);
    let edge = edge_target(&label);
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    write_mask(&certainty.0, &cert_path)?;
    write_mask(&edge.0, &edge_path)?;
    Ok((label, certainty, edge))
}

/// Fills the target cache for every record; fails on the first missing label.
pub fn prepare_targets(labels: &Path, records: &[ImageRecord], size: usize) -> Result<()> {
    for r in records {
        let p = label_path(labels, &r.image_id);
        if !p.exists() {
            return Err(HarnessError::MissingLabel {
                image_id: r.image_id.clone(),
                path: p,
            });
        }
    }
    records
        .par_iter()
        .try_for_each(|r| load_targets(labels, &r.image_id, size).map(|_| ()))
}

pub fn load_item(record: &ImageRecord, labels: &Path, size: usize) -> Result<TrainItem> {
    let img = load_rgb(&record.path)?;
    let (label, certainty, edge) = load_targets(labels, &record.image_id, size)?;
    Ok(TrainItem {
        image_id: record.image_id.clone(),
        image: image_tensor(&img, size),
        label,
        certainty,
        edge,
    })
}

/// Stable 64-bit FNV-1a hash.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

/// RNG seed for one (run, epoch, image) triple, independent of worker count
/// and batch position.
pub fn sample_seed(seed: u64, epoch: usize, image_id: &str) -> u64 {
    fnv1a(image_id.as_bytes())
        ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (epoch as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

pub fn flip_draw(seed: u64, epoch: usize, image_id: &str, prob: f64) -> bool {
    ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, image_id)).random_bool(prob)
}

/// Loads a batch in parallel and applies the per-sample flip draw.
pub fn load_batch(
    records: &[&ImageRecord],
    labels: &Path,
    size: usize,
    seed: u64,
    epoch: usize,
    flip_prob: f64,
) -> Result<Vec<TrainItem>> {
    records
        .par_iter()
        .map(|r| {
            let item = load_item(r, labels, size)?;
            Ok(if flip_draw(seed, epoch, &r.image_id, flip_prob) {
                item.flipped()
            } else {
                item
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_moves_everything_together() {
        let label = BinaryMask::from_fn(4, 4, |r, c| r == 1 && c < 2);
        let item = TrainItem {
            image_id: "a".into(),
            image: Array3::from_shape_fn((3, 4, 4), |(ch, r, c)| (ch * 16 + r * 4 + c) as f64),
            certainty: certainty_mask(&label, 3),
            edge: EdgeMap(label.clone()),
            label,
        };
        let f = item.flipped();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(f.label.get(r, c), item.label.get(r, 3 - c));
                assert_eq!(f.edge.0.get(r, c), item.edge.0.get(r, 3 - c));
                assert_eq!(f.certainty.0.get(r, c), item.certainty.0.get(r, 3 - c));
                assert_eq!(f.image[(2, r, c)], item.image[(2, r, 3 - c)]);
            }
        }
        assert_eq!(f.flipped(), item);
    }

    #[test]
    fn flip_draws_are_stable_and_vary() {
        assert_eq!(flip_draw(1, 2, "x", 0.5), flip_draw(1, 2, "x", 0.5));
        let ids: Vec<String> = (0..64).map(|i| format!("img{i}")).collect();
        let n = ids.iter().filter(|id| flip_draw(0, 0, id, 0.5)).count();
        assert!((16..48).contains(&n), "{n}");
        assert!(!flip_draw(0, 0, "x", 0.0));
        assert!(flip_draw(0, 0, "x", 1.0));
        let a: Vec<bool> = ids.iter().map(|id| flip_draw(0, 0, id, 0.5)).collect();
        let b: Vec<bool> = ids.iter().map(|id| flip_draw(0, 1, id, 0.5)).collect();
        assert_ne!(a, b);
    }
}

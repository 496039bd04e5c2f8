//! Inference: the network runs at the training input size and the map is
//! resized bilinearly back to the original resolution. No post-processing.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use sodkit_core::imageops::{load_rgb, resize_bilinear, write_gray};
use sodkit_model::checkpoint::Checkpoint;
use sodkit_model::Model;

use crate::data::image_tensor;
use crate::error::{HarnessError, Result};

/// Input size used when a checkpoint does not record one.
pub const DEFAULT_INPUT_SIZE: usize = 352;

/// Model plus the input size it was trained at.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, usize)> {
    let path = path.as_ref();
    let ck = Checkpoint::load(path)?;
    let size = ck.meta["input_size"]
        .as_u64()
        .map_or(DEFAULT_INPUT_SIZE, |v| v as usize);
    let model = sodkit_model::checkpoint::load_model(path)?;
    Ok((model, size))
}

/// Saliency map in `[0, 1]` at the image's own resolution.
pub fn predict_image(model: &Model, img: &RgbImage, input_size: usize) -> Result<Array2<f64>> {
    let x = image_tensor(img, input_size).insert_axis(Axis(0));
    let probs = model.predict(&x)?;
    let map = probs.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
    let (w, h) = img.dimensions();
    Ok(resize_bilinear(map.view(), h as usize, w as usize).mapv(|v| v.clamp(0.0, 1.0)))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Writes `<out>/<stem>.png` for every image in `image_dir`; returns the
/// written paths in name order.
pub fn predict_dir(model: &Model, image_dir: &Path, out_dir: &Path, input_size: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    image_files(image_dir)?
        .par_iter()
        .map(|path| {
            let img = load_rgb(path)?;
            let map = predict_image(model, &img, input_size)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let out = out_dir.join(format!("{stem}.png"));
            write_gray(map.view(), &out)?;
            Ok(out)
        })
        .collect()
}

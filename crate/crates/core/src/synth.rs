//! Synthetic "shapes" scenes: flat-colored discs, squares and triangles on a
//! textured gray background. Each scene knows its ground-truth saliency mask
//! and the phrases describing its salient objects, which makes it the fixture
//! for the mock foundation-model backends and for toy-scale training.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imageops::{content_hash, save_rgb};
use crate::manifest::write_manifest;
use crate::mask_io::write_mask;
use crate::types::{BinaryMask, Category, ImageRecord, SourcePool, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disc,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Disc, Shape::Square, Shape::Triangle];

    pub fn noun(self) -> &'static str {
        match self {
            Shape::Disc => "disc",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    /// Classifies a filled blob by the fraction of its bounding box it covers.
    pub fn from_fill_ratio(ratio: f64) -> Shape {
        if ratio > 0.9 {
            Shape::Square
        } else if ratio > 0.65 {
            Shape::Disc
        } else {
            Shape::Triangle
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NamedColor {
    pub name: &'static str,
    pub rgb: [u8; 3],
}

/// Foreground colors. The background is always pure gray (r = g = b), so a
/// pixel belongs to an object iff its color is in this table.
pub const PALETTE: [NamedColor; 6] = [
    NamedColor {
        name: "red",
        rgb: [220, 40, 40],
    },
    NamedColor {
        name: "green",
        rgb: [40, 180, 60],
    },
    NamedColor {
        name: "blue",
        rgb: [40, 80, 220],
    },
    NamedColor {
        name: "yellow",
        rgb: [230, 210, 40],
    },
    NamedColor {
        name: "purple",
        rgb: [150, 60, 190],
    },
    NamedColor {
        name: "orange",
        rgb: [240, 140, 30],
    },
];

pub fn palette_color(rgb: [u8; 3]) -> Option<&'static NamedColor> {
    PALETTE.iter().find(|c| c.rgb == rgb)
}

pub fn palette_by_name(name: &str) -> Option<&'static NamedColor> {
    PALETTE.iter().find(|c| c.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub shape: Shape,
    pub color: String,
    pub cx: f64,
    pub cy: f64,
    /// Radius for discs, half side for squares, half height for triangles.
    pub size: f64,
    pub salient: bool,
}

impl SynthObject {
    /// Point test at continuous coordinates (pixel centres are `x + 0.5`).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy, r) = (x - self.cx, y - self.cy, self.size);
        match self.shape {
            Shape::Disc => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r && dy.abs() <= r,
            Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= r * (dy + r) / (2.0 * r),
        }
    }

    pub fn phrase(&self) -> String {
        format!("{} {}", self.color, self.shape.noun())
    }

    fn rgb(&self) -> [u8; 3] {
        palette_by_name(&self.color).map(|c| c.rgb).unwrap_or([255, 0, 255])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub background_seed: u64,
    pub objects: Vec<SynthObject>,
}

impl Scene {
    pub fn render(&self) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(self.background_seed);
        let (w, h) = (self.width, self.height);
        let mut img = RgbImage::from_fn(w, h, |x, y| {
            let ramp = 48.0 * (x + y) as f64 / (w + h) as f64;
            let noise: i32 = rng.random_range(-4..=4);
            let g = (96 + ramp.round() as i32 + noise).clamp(0, 255) as u8;
            Rgb([g, g, g])
        });
        for obj in &self.objects {
            let rgb = obj.rgb();
            for y in 0..h {
                for x in 0..w {
                    if obj.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        img.put_pixel(x, y, Rgb(rgb));
                    }
                }
            }
        }
        img
    }

    pub fn object_mask(&self, index: usize) -> BinaryMask {
        let obj = &self.objects[index];
        BinaryMask::from_fn(self.height as usize, self.width as usize, |r, c| {
            obj.contains(c as f64 + 0.5, r as f64 + 0.5)
        })
    }

    /// Union of the salient objects.
    pub fn saliency_gt(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height as usize, self.width as usize, |r, c| {
            self.objects
                .iter()
                .any(|o| o.salient && o.contains(c as f64 + 0.5, r as f64 + 0.5))
        })
    }

    /// "color shape" for every salient object, in object order.
    pub fn phrases(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in self.objects.iter().filter(|o| o.salient).map(|o| o.phrase()) {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    pub fn categories(&self) -> Vec<Category> {
        let mut out: Vec<Category> = Vec::new();
        for o in self.objects.iter().filter(|o| o.salient) {
            let cat = Category::new(o.shape.noun(), o.phrase());
            if !out.contains(&cat) {
                out.push(cat);
            }
        }
        out
    }
}

/// Random scene with 1-3 salient, non-overlapping objects.
pub fn random_scene(rng: &mut impl Rng, width: u32, height: u32) -> Scene {
    let min_side = width.min(height) as f64;
    let n_objects = rng.random_range(1..=3usize);
    let mut objects: Vec<SynthObject> = Vec::new();
    let mut attempts = 0;
    while objects.len() < n_objects && attempts < 200 {
        attempts += 1;
        let size = rng.random_range(0.12 * min_side..0.25 * min_side);
        let margin = size + 2.0;
        if 2.0 * margin >= width as f64 || 2.0 * margin >= height as f64 {
            continue;
        }
        let cx = rng.random_range(margin..width as f64 - margin);
        let cy = rng.random_range(margin..height as f64 - margin);
        // circumradius bound keeps every shape inside its disc of radius size*sqrt(2)
        let reach = size * std::f64::consts::SQRT_2;
        let clear = objects.iter().all(|o| {
            let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
            d > reach + o.size * std::f64::consts::SQRT_2 + 3.0
        });
        if !clear {
            continue;
        }
        let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
        let color = PALETTE[rng.random_range(0..PALETTE.len())].name.to_string();
        objects.push(SynthObject {
            shape,
            color,
            cx,
            cy,
            size,
            salient: true,
        });
    }
    Scene {
        width,
        height,
        background_seed: rng.random(),
        objects,
    }
}

/// Two discs with the same noun: the red one is salient, the blue one is a
/// distractor. Only the adjective tells them apart.
pub fn disambiguation_scene(width: u32, height: u32) -> Scene {
    let (w, h) = (width as f64, height as f64);
    let size = 0.16 * w.min(h);
    Scene {
        width,
        height,
        background_seed: 7,
        objects: vec![
            SynthObject {
                shape: Shape::Disc,
                color: "red".into(),
                cx: 0.3 * w,
                cy: 0.35 * h,
                size,
                salient: true,
            },
            SynthObject {
                shape: Shape::Disc,
                color: "blue".into(),
                cx: 0.7 * w,
                cy: 0.65 * h,
                size: 0.8 * size,
                salient: false,
            },
        ],
    }
}

/// Maps an image content hash to the phrases describing it.
pub type CaptionTable = BTreeMap<String, Vec<String>>;

/// Files written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
    pub scenes: Vec<Scene>,
}

impl SynthDataset {
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }
    pub fn gt_dir(&self) -> PathBuf {
        self.root.join("gt")
    }
    pub fn image_dir(&self) -> PathBuf {
        self.root.join("images")
    }
    pub fn captions_path(&self) -> PathBuf {
        self.root.join("captions.json")
    }
    pub fn phrases_path(&self) -> PathBuf {
        self.root.join("phrases.jsonl")
    }
}

/// Writes `images/`, `gt/`, `manifest.jsonl`, the caption table
/// `captions.json` and a manual phrase file `phrases.jsonl` under `root`.
pub fn write_scenes(root: impl AsRef<Path>, id_prefix: &str, scenes: Vec<Scene>, split: Split) -> Result<SynthDataset> {
    let root = root.as_ref().to_path_buf();
    let images = root.join("images");
    let gt = root.join("gt");
    for dir in [&root, &images, &gt] {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    let mut records = Vec::with_capacity(scenes.len());
    let mut captions = CaptionTable::new();
    let mut phrase_lines = String::new();
    for (i, scene) in scenes.iter().enumerate() {
        let id = format!("{id_prefix}{i:04}");
        let img = scene.render();
        let img_path = images.join(format!("{id}.png"));
        save_rgb(&img, &img_path)?;
        write_mask(&scene.saliency_gt(), gt.join(format!("{id}.png")))?;
        captions.insert(content_hash(&img), scene.phrases());
        // Identical objects share one phrase.
        let mut phrases: Vec<serde_json::Value> = Vec::new();
        for o in scene.objects.iter().filter(|o| o.salient) {
            let p = serde_json::json!({"adjective": o.color, "noun": o.shape.noun()});
            if !phrases.contains(&p) {
                phrases.push(p);
            }
        }
        if !phrases.is_empty() {
            let line = serde_json::json!({"image_id": id, "origin": "manual", "phrases": phrases});
            phrase_lines.push_str(&line.to_string());
            phrase_lines.push('\n');
        }
        records.push(ImageRecord {
            image_id: id,
            path: img_path,
            width: scene.width,
            height: scene.height,
            source_pool: SourcePool::Synthetic,
            split,
            categories: scene.categories(),
        });
    }
    write_manifest(root.join("manifest.jsonl"), &records)?;
    let captions_path = root.join("captions.json");
    let json = serde_json::to_string_pretty(&captions).expect("caption table serializes");
    fs::write(&captions_path, json).map_err(|e| CoreError::io(&captions_path, e))?;
    let phrases_path = root.join("phrases.jsonl");
    fs::write(&phrases_path, phrase_lines).map_err(|e| CoreError::io(&phrases_path, e))?;
    Ok(SynthDataset { root, records, scenes })
}

/// `n` random scenes of `size x size` drawn from `seed`.
pub fn write_dataset(root: impl AsRef<Path>, n: usize, size: u32, seed: u64, split: Split) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = (0..n).map(|_| random_scene(&mut rng, size, size)).collect();
    let prefix = match split {
        Split::Train => "train_",
        Split::Test => "test_",
    };
    write_scenes(root, prefix, scenes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_never_matches_palette() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = random_scene(&mut rng, 64, 64);
        let img = scene.render();
        let gt = scene.saliency_gt();
        for (x, y, p) in img.enumerate_pixels() {
            let fg = palette_color(p.0).is_some();
            assert_eq!(fg, gt.get(y as usize, x as usize));
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = random_scene(&mut ChaCha8Rng::seed_from_u64(9), 96, 96);
        let b = random_scene(&mut ChaCha8Rng::seed_from_u64(9), 96, 96);
        assert_eq!(a, b);
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn objects_do_not_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = random_scene(&mut rng, 64, 64);
            assert!(!s.objects.is_empty());
            let total: usize = (0..s.objects.len()).map(|i| s.object_mask(i).count_ones()).sum();
            assert_eq!(total, s.saliency_gt().count_ones());
        }
    }

    #[test]
    fn fill_ratio_classifies_rendered_shapes() {
        for shape in Shape::ALL {
            let obj = SynthObject {
                shape,
                color: "red".into(),
                cx: 32.0,
                cy: 32.0,
                size: 9.0,
                salient: true,
            };
            let scene = Scene {
                width: 64,
                height: 64,
                background_seed: 0,
                objects: vec![obj],
            };
            let m = scene.object_mask(0);
            let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
            for ((r, c), &v) in m.view().indexed_iter() {
                if v == 1 {
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
            let ratio = m.count_ones() as f64 / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            assert_eq!(Shape::from_fill_ratio(ratio), shape, "ratio {ratio}");
        }
    }

    #[test]
    fn disambiguation_scene_has_one_salient_disc() {
        let s = disambiguation_scene(64, 64);
        assert_eq!(s.phrases(), vec!["red disc".to_string()]);
        assert!(s.saliency_gt().count_ones() < s.object_mask(0).count_ones() + s.object_mask(1).count_ones());
    }
}

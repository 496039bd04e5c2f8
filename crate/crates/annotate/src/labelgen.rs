//! Text -> box -> mask pseudo-label generation.
//!
//! For every image: caption it into phrases, turn the phrases into one prompt,
//! ask the grounder for scored boxes, keep boxes above a confidence threshold,
//! segment each box separately and OR the per-box masks into one label.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sodkit_core::imageops::load_rgb;
use sodkit_core::synth::{palette_color, Shape};
use sodkit_core::{mask_io, BinaryMask, BoxCoords, ImageRecord, Provenance, PseudoLabel};

use crate::error::{AnnotateError, BackendError, Result};
use crate::phrasekit::{build_prompt, caption_image, parse_phrase, parse_prompt, CaptionerBackend, Phrase};

/// Default confidence cut-off for grounder boxes.
pub const DEFAULT_TAU: f64 = 0.35;

/// Pipeline exits unsuccessfully when more than this fraction of images fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

/// How far outside its box a segmenter mask may reach, in pixels.
pub const BOX_DILATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub bbox: BoxCoords,
    pub logit: f64,
    pub source_phrase: Phrase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBoxSet {
    pub image_id: String,
    pub boxes: Vec<ScoredBox>,
}

impl ScoredBoxSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Unvalidated detection as returned by a grounder.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoxCoords,
    pub logit: f64,
    pub phrase: String,
}

/// The grounder role: (image, prompt) -> scored boxes.
pub trait GrounderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn reentrant(&self) -> bool {
        true
    }
    fn detect(&self, image: &RgbImage, prompt: &str) -> std::result::Result<Vec<Detection>, BackendError>;
}

/// The segmenter role: (image, box) -> binary mask of the full image size.
pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;
    fn reentrant(&self) -> bool {
        true
    }
    fn segment(&self, image: &RgbImage, bbox: &BoxCoords) -> std::result::Result<BinaryMask, BackendError>;
}

/// Calls the grounder and validates every box; out-of-bounds boxes are an
/// error, never clipped.
pub fn ground(backend: &dyn GrounderBackend, image_id: &str, image: &RgbImage, prompt: &str) -> Result<ScoredBoxSet> {
    let (w, h) = image.dimensions();
    let mut boxes = Vec::new();
    for det in backend.detect(image, prompt)? {
        let invalid = |reason: &str| AnnotateError::InvalidBox {
            image_id: image_id.to_string(),
            bbox: det.bbox,
            reason: reason.to_string(),
        };
        if !det.bbox.is_well_formed() {
            return Err(invalid("requires x1 < x2 and y1 < y2"));
        }
        if !det.bbox.within(w, h) {
            return Err(invalid("outside image bounds"));
        }
        if !(0.0..=1.0).contains(&det.logit) {
            return Err(invalid("logit outside [0, 1]"));
        }
        let source_phrase = parse_phrase(&det.phrase).map_err(|e| AnnotateError::BackendOutput {
            image_id: image_id.to_string(),
            reason: e.to_string(),
        })?;
        boxes.push(ScoredBox {
            bbox: det.bbox,
            logit: det.logit,
            source_phrase,
        });
    }
    Ok(ScoredBoxSet {
        image_id: image_id.to_string(),
        boxes,
    })
}

/// Keeps boxes with `logit >= tau`, preserving order.
pub fn filter_boxes(bs: &ScoredBoxSet, tau: f64) -> ScoredBoxSet {
    ScoredBoxSet {
        image_id: bs.image_id.clone(),
        boxes: bs.boxes.iter().filter(|b| b.logit >= tau).cloned().collect(),
    }
}

/// Mask for one box. `failed` marks an all-zero result.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: BinaryMask,
    pub failed: bool,
}

pub fn segment(backend: &dyn SegmenterBackend, image: &RgbImage, sbox: &ScoredBox) -> Result<Segmentation> {
    let (w, h) = image.dimensions();
    let expected = (h as usize, w as usize);
    let mask = backend.segment(image, &sbox.bbox)?;
    if mask.shape() != expected {
        return Err(AnnotateError::ShapeMismatch {
            expected,
            actual: mask.shape(),
        });
    }
    let b = &sbox.bbox;
    let outside = mask.view().indexed_iter().any(|((r, c), &v)| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        v == 1
            && (x < b.x1 - BOX_DILATION
                || x > b.x2 + BOX_DILATION
                || y < b.y1 - BOX_DILATION
                || y > b.y2 + BOX_DILATION)
    });
    if outside {
        return Err(AnnotateError::BackendOutput {
            image_id: String::new(),
            reason: format!("segmenter mask reaches outside box {b:?}"),
        });
    }
    let failed = mask.is_empty();
    Ok(Segmentation { mask, failed })
}

/// Result of fusing per-box masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLabel {
    pub label: PseudoLabel,
    pub empty: bool,
}

/// Pixelwise OR. An empty list yields an all-zero label flagged empty.
pub fn fuse_masks(masks: &[BinaryMask], provenance: Vec<Provenance>, shape: (usize, usize)) -> Result<FusedLabel> {
    let mut acc = BinaryMask::zeros(shape.0, shape.1);
    for m in masks {
        if m.shape() != shape {
            return Err(AnnotateError::ShapeMismatch {
                expected: shape,
                actual: m.shape(),
            });
        }
        acc = acc.union(m)?;
    }
    let empty = acc.is_empty();
    Ok(FusedLabel {
        label: PseudoLabel::new(acc, provenance),
        empty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    Ok,
    Empty,
    Failed,
}

/// One line of the pipeline report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub image_id: String,
    pub status: ImageStatus,
    pub n_boxes: usize,
    pub n_phrases: usize,
    pub seg_failures: usize,
    pub provenance: Vec<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineReport {
    pub entries: Vec<ReportEntry>,
}

impl PipelineReport {
    pub fn count(&self, status: ImageStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.count(ImageStatus::Failed) as f64 / self.entries.len() as f64
        }
    }

    /// `false` when more than 10% of images failed.
    pub fn acceptable(&self) -> bool {
        self.failure_fraction() <= MAX_FAILURE_FRACTION
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&serde_json::to_string(e).expect("serializable"));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| AnnotateError::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub tau: f64,
    pub adjectives: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            out_dir: out_dir.into(),
            tau: DEFAULT_TAU,
            adjectives: true,
            seed: 0,
        }
    }
}

pub struct Backends<'a> {
    pub captioner: &'a dyn CaptionerBackend,
    pub grounder: &'a dyn GrounderBackend,
    pub segmenter: &'a dyn SegmenterBackend,
}

impl Backends<'_> {
    fn reentrant(&self) -> bool {
        self.captioner.reentrant() && self.grounder.reentrant() && self.segmenter.reentrant()
    }
}

struct ImageOutcome {
    entry: ReportEntry,
    mask: BinaryMask,
}

/// Pseudo-label for one image. `Err` means a backend or I/O failure.
pub fn label_image(
    record: &ImageRecord,
    image: &RgbImage,
    backends: &Backends<'_>,
    tau: f64,
    adjectives: bool,
) -> Result<(FusedLabel, ReportEntry)> {
    let mut phrases = caption_image(backends.captioner, image, record)?;
    if !adjectives {
        phrases = phrases.without_adjectives();
    }
    let prompt = build_prompt(&phrases);
    let boxes = filter_boxes(&ground(backends.grounder, &record.image_id, image, &prompt)?, tau);
    let mut masks = Vec::with_capacity(boxes.len());
    let mut provenance = Vec::with_capacity(boxes.len());
    let mut seg_failures = 0;
    for b in &boxes.boxes {
        let seg = segment(backends.segmenter, image, b)?;
        if seg.failed {
            seg_failures += 1;
            continue;
        }
        masks.push(seg.mask);
        provenance.push(Provenance {
            phrase: b.source_phrase.to_string(),
            bbox: b.bbox,
            logit: b.logit,
        });
    }
    let shape = (image.height() as usize, image.width() as usize);
    let fused = fuse_masks(&masks, provenance, shape)?;
    let entry = ReportEntry {
        image_id: record.image_id.clone(),
        status: if fused.empty {
            ImageStatus::Empty
        } else {
            ImageStatus::Ok
        },
        n_boxes: boxes.len(),
        n_phrases: phrases.phrases().len(),
        seg_failures,
        provenance: fused.label.provenance.clone(),
        error: None,
    };
    Ok((fused, entry))
}

fn process(record: &ImageRecord, backends: &Backends<'_>, cfg: &PipelineConfig) -> ImageOutcome {
    let result = load_rgb(&record.path)
        .map_err(AnnotateError::from)
        .and_then(|img| label_image(record, &img, backends, cfg.tau, cfg.adjectives));
    match result {
        Ok((fused, entry)) => ImageOutcome {
            entry,
            mask: fused.label.mask,
        },
        Err(e) => {
            log::warn!("pseudo-label for `{}` failed: {e}", record.image_id);
            ImageOutcome {
                entry: ReportEntry {
                    image_id: record.image_id.clone(),
                    status: ImageStatus::Failed,
                    n_boxes: 0,
                    n_phrases: 0,
                    seg_failures: 0,
                    provenance: Vec::new(),
                    error: Some(e.to_string()),
                },
                mask: BinaryMask::zeros(record.height as usize, record.width as usize),
            }
        }
    }
}

/// Labels every manifest image and writes `<out>/<image_id>.png` plus
/// `<out>/report.jsonl`. Per-image failures are recorded, not fatal; check
/// [`PipelineReport::acceptable`] for the overall verdict.
pub fn run_pipeline(manifest: &[ImageRecord], backends: &Backends<'_>, cfg: &PipelineConfig) -> Result<PipelineReport> {
    if !(0.0..=1.0).contains(&cfg.tau) {
        return Err(AnnotateError::Fraction(cfg.tau));
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| AnnotateError::io(&cfg.out_dir, e))?;
    let outcomes: Vec<ImageOutcome> = if backends.reentrant() {
        manifest.par_iter().map(|r| process(r, backends, cfg)).collect()
    } else {
        manifest.iter().map(|r| process(r, backends, cfg)).collect()
    };
    let mut report = PipelineReport::default();
    for o in outcomes {
        mask_io::write_mask(&o.mask, cfg.out_dir.join(format!("{}.png", o.entry.image_id)))?;
        report.entries.push(o.entry);
    }
    report.write_jsonl(cfg.out_dir.join("report.jsonl"))?;
    Ok(report)
}

/// A connected blob of one palette color.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub color: &'static str,
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BoxCoords,
}

impl Component {
    pub fn shape(&self) -> Shape {
        let area = (self.bbox.x2 - self.bbox.x1) * (self.bbox.y2 - self.bbox.y1);
        Shape::from_fill_ratio(self.pixels.len() as f64 / area)
    }
}

/// 4-connected components of exact palette colors, in raster discovery order.
pub fn palette_components(image: &RgbImage) -> Vec<Component> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let (sx, sy) = (start % w, start / w);
        let rgb = image.get_pixel(sx as u32, sy as u32).0;
        let Some(color) = palette_color(rgb) else {
            continue;
        };
        seen[start] = true;
        let mut stack = vec![(sy, sx)];
        let mut pixels = Vec::new();
        while let Some((y, x)) = stack.pop() {
            pixels.push((y, x));
            let neighbors = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
            for (ny, nx) in neighbors {
                if ny < h && nx < w && !seen[ny * w + nx] && image.get_pixel(nx as u32, ny as u32).0 == rgb {
                    seen[ny * w + nx] = true;
                    stack.push((ny, nx));
                }
            }
        }
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for &(y, x) in &pixels {
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x + 1);
            y2 = y2.max(y + 1);
        }
        out.push(Component {
            color: color.name,
            pixels,
            bbox: BoxCoords::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64),
        });
    }
    out
}

/// Grounder over synthetic scenes: each palette-colored component is matched
/// against the prompt phrases by shape noun and, when given, color adjective.
/// The logit is the component area over the image area.
#[derive(Debug, Clone, Default)]
pub struct MockGrounder;

impl GrounderBackend for MockGrounder {
    fn name(&self) -> &str {
        "mock-grounder"
    }

    fn detect(&self, image: &RgbImage, prompt: &str) -> std::result::Result<Vec<Detection>, BackendError> {
        let phrases = parse_prompt(prompt).map_err(|e| BackendError::Failed(e.to_string()))?;
        let area = (image.width() * image.height()) as f64;
        let mut components: Vec<Option<Component>> = palette_components(image).into_iter().map(Some).collect();
        let mut out = Vec::new();
        for phrase in &phrases {
            for slot in components.iter_mut() {
                let Some(c) = slot else { continue };
                let noun_ok = c.shape().noun() == phrase.noun();
                let adj_ok = phrase.adjective().is_none_or(|a| a == c.color);
                if noun_ok && adj_ok {
                    out.push(Detection {
                        bbox: c.bbox,
                        logit: c.pixels.len() as f64 / area,
                        phrase: phrase.to_string(),
                    });
                    *slot = None;
                }
            }
        }
        Ok(out)
    }
}

/// Flood fill from the box centre over pixels whose color is within
/// `tolerance` (max channel difference) of the seed color, confined to the
/// box. A gray seed (background) gives an all-zero mask.
#[derive(Debug, Clone)]
pub struct MockSegmenter {
    pub tolerance: u8,
}

impl Default for MockSegmenter {
    fn default() -> Self {
        MockSegmenter { tolerance: 30 }
    }
}

fn color_distance(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|i| a[i].abs_diff(b[i])).max().unwrap_or(0)
}

fn is_chromatic(rgb: [u8; 3]) -> bool {
    let max = *rgb.iter().max().unwrap_or(&0);
    let min = *rgb.iter().min().unwrap_or(&0);
    max - min > 40
}

impl SegmenterBackend for MockSegmenter {
    fn name(&self) -> &str {
        "mock-segmenter"
    }

    fn segment(&self, image: &RgbImage, bbox: &BoxCoords) -> std::result::Result<BinaryMask, BackendError> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut mask = BinaryMask::zeros(h, w);
        let (rows, cols) = bbox.pixel_ranges(w, h);
        if rows.is_empty() || cols.is_empty() {
            return Ok(mask);
        }
        let (cx, cy) = bbox.center();
        let sx = (cx.floor() as usize).clamp(cols.start, cols.end - 1);
        let sy = (cy.floor() as usize).clamp(rows.start, rows.end - 1);
        let seed = image.get_pixel(sx as u32, sy as u32).0;
        if !is_chromatic(seed) {
            return Ok(mask);
        }
        let mut stack = vec![(sy, sx)];
        mask.set(sy, sx, true);
        while let Some((y, x)) = stack.pop() {
            let neighbors = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
            for (ny, nx) in neighbors {
                if rows.contains(&ny)
                    && cols.contains(&nx)
                    && !mask.get(ny, nx)
                    && color_distance(image.get_pixel(nx as u32, ny as u32).0, seed) <= self.tolerance
                {
                    mask.set(ny, nx, true);
                    stack.push((ny, nx));
                }
            }
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phrasekit::MockCaptioner;
    use proptest::prelude::*;
    use sodkit_core::synth::{disambiguation_scene, Scene, SynthObject};

    fn disc_scene(size: u32, objects: Vec<(Shape, &str, f64, f64, f64)>) -> Scene {
        Scene {
            width: size,
            height: size,
            background_seed: 5,
            objects: objects
                .into_iter()
                .map(|(shape, color, cx, cy, r)| SynthObject {
                    shape,
                    color: color.into(),
                    cx,
                    cy,
                    size: r,
                    salient: true,
                })
                .collect(),
        }
    }

    /// Oracle: brute-force bounding box and pixel count of a palette color.
    fn brute_box(image: &RgbImage, rgb: [u8; 3]) -> (BoxCoords, usize) {
        let (mut x1, mut y1, mut x2, mut y2, mut n) = (u32::MAX, u32::MAX, 0, 0, 0);
        for (x, y, p) in image.enumerate_pixels() {
            if p.0 == rgb {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
                n += 1;
            }
        }
        (BoxCoords::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64), n)
    }

    #[test]
    fn mock_grounder_single_disc() {
        let scene = disc_scene(352, vec![(Shape::Disc, "red", 150.0, 170.0, 20.0)]);
        let img = scene.render();
        let bs = ground(&MockGrounder, "d", &img, "red disc .").unwrap();
        assert_eq!(bs.len(), 1);
        let (bbox, n) = brute_box(&img, [220, 40, 40]);
        assert_eq!(bs.boxes[0].bbox, bbox);
        assert!((bs.boxes[0].logit - n as f64 / (352.0 * 352.0)).abs() < 1e-15);
        assert!((bs.boxes[0].logit - 0.0101).abs() < 2e-4, "{}", bs.boxes[0].logit);
    }

    #[test]
    fn mock_grounder_two_shapes_and_blank() {
        let scene = disc_scene(
            96,
            vec![
                (Shape::Disc, "red", 25.0, 25.0, 10.0),
                (Shape::Square, "blue", 65.0, 65.0, 10.0),
            ],
        );
        let img = scene.render();
        let bs = ground(&MockGrounder, "t", &img, "red disc . blue square .").unwrap();
        assert_eq!(bs.len(), 2);
        assert_eq!(bs.boxes[0].bbox, brute_box(&img, [220, 40, 40]).0);
        assert_eq!(bs.boxes[1].bbox, brute_box(&img, [40, 80, 220]).0);

        let blank = disc_scene(64, vec![]).render();
        assert!(ground(&MockGrounder, "b", &blank, "red disc .").unwrap().is_empty());
    }

    struct OutOfBounds;
    impl GrounderBackend for OutOfBounds {
        fn name(&self) -> &str {
            "oob"
        }
        fn detect(&self, _: &RgbImage, _: &str) -> std::result::Result<Vec<Detection>, BackendError> {
            Ok(vec![Detection {
                bbox: BoxCoords::new(10.0, 10.0, 70.0, 20.0),
                logit: 0.5,
                phrase: "dog".into(),
            }])
        }
    }

    #[test]
    fn out_of_bounds_box_is_rejected() {
        let img = RgbImage::new(64, 64);
        assert!(matches!(
            ground(&OutOfBounds, "x", &img, "dog .").unwrap_err(),
            AnnotateError::InvalidBox { .. }
        ));
    }

    fn boxes_with_logits(logits: &[f64]) -> ScoredBoxSet {
        ScoredBoxSet {
            image_id: "x".into(),
            boxes: logits
                .iter()
                .map(|&logit| ScoredBox {
                    bbox: BoxCoords::new(0.0, 0.0, 1.0, 1.0),
                    logit,
                    source_phrase: parse_phrase("dog").unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn filter_examples() {
        let bs = boxes_with_logits(&[0.4, 0.9]);
        assert_eq!(filter_boxes(&bs, 0.0), bs);
        assert!(filter_boxes(&bs, 1.0).is_empty());
        let half = filter_boxes(&bs, 0.5);
        assert_eq!(half.len(), 1);
        assert_eq!(half.boxes[0].logit, 0.9);
    }

    /// Oracle: iterate 4-neighbour growth to a fixpoint.
    fn relaxation_fill(img: &RgbImage, bbox: &BoxCoords, tol: u8) -> BinaryMask {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (rows, cols) = bbox.pixel_ranges(w, h);
        let (cx, cy) = bbox.center();
        let (sx, sy) = (cx.floor() as usize, cy.floor() as usize);
        let seed = img.get_pixel(sx as u32, sy as u32).0;
        let ok = |y: usize, x: usize| {
            rows.contains(&y) && cols.contains(&x) && color_distance(img.get_pixel(x as u32, y as u32).0, seed) <= tol
        };
        let mut m = BinaryMask::zeros(h, w);
        m.set(sy, sx, true);
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    if m.get(y, x) || !ok(y, x) {
                        continue;
                    }
                    let near = (y > 0 && m.get(y - 1, x))
                        || (y + 1 < h && m.get(y + 1, x))
                        || (x > 0 && m.get(y, x - 1))
                        || (x + 1 < w && m.get(y, x + 1));
                    if near {
                        m.set(y, x, true);
                        changed = true;
                    }
                }
            }
            if !changed {
                return m;
            }
        }
    }

    #[test]
    fn mock_segmenter_matches_flood_fill_oracle() {
        let scene = disc_scene(64, vec![(Shape::Disc, "green", 30.0, 32.0, 12.0)]);
        let img = scene.render();
        // box cuts through the disc; centre stays inside it
        let bbox = BoxCoords::new(22.0, 18.0, 50.0, 40.0);
        let sbox = ScoredBox {
            bbox,
            logit: 0.5,
            source_phrase: parse_phrase("disc").unwrap(),
        };
        let seg = segment(&MockSegmenter::default(), &img, &sbox).unwrap();
        assert!(!seg.failed);
        assert_eq!(seg.mask, relaxation_fill(&img, &bbox, 30));
        let disc = scene.object_mask(0);
        let (rows, cols) = bbox.pixel_ranges(64, 64);
        let expected = BinaryMask::from_fn(64, 64, |r, c| rows.contains(&r) && cols.contains(&c) && disc.get(r, c));
        assert_eq!(seg.mask, expected);
        let again = segment(&MockSegmenter::default(), &img, &sbox).unwrap();
        assert_eq!(seg, again);
    }

    #[test]
    fn background_box_is_a_segmentation_failure() {
        let img = disc_scene(64, vec![]).render();
        let sbox = ScoredBox {
            bbox: BoxCoords::new(5.0, 5.0, 30.0, 30.0),
            logit: 0.5,
            source_phrase: parse_phrase("disc").unwrap(),
        };
        assert!(segment(&MockSegmenter::default(), &img, &sbox).unwrap().failed);
    }

    fn random_mask(seed: u64, h: usize, w: usize) -> BinaryMask {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_fn(h, w, |_, _| rng.random_bool(0.3))
    }

    #[test]
    fn fuse_examples() {
        let a = BinaryMask::from_fn(6, 6, |r, _| r < 2);
        let b = BinaryMask::from_fn(6, 6, |r, _| r > 3);
        let u = fuse_masks(&[a.clone(), b.clone()], vec![], (6, 6)).unwrap();
        assert_eq!(u.label.mask.count_ones(), a.count_ones() + b.count_ones());
        assert_eq!(
            fuse_masks(&[a.clone(), a.clone()], vec![], (6, 6)).unwrap().label.mask,
            a
        );
        let e = fuse_masks(&[], vec![], (3, 4)).unwrap();
        assert!(e.empty && e.label.mask.shape() == (3, 4));
        assert!(fuse_masks(&[a], vec![], (5, 6)).is_err());

        let ms: Vec<BinaryMask> = (0..3).map(|s| random_mask(s, 8, 8)).collect();
        let fused = fuse_masks(&ms, vec![], (8, 8)).unwrap().label.mask;
        for r in 0..8 {
            for c in 0..8 {
                let max = ms.iter().map(|m| m.as_array()[(r, c)]).max().unwrap();
                assert_eq!(fused.as_array()[(r, c)], max);
            }
        }
    }

    proptest! {
        #[test]
        fn filter_is_monotone(logits in proptest::collection::vec(0.0f64..=1.0, 0..12), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let bs = boxes_with_logits(&logits);
            let strict = filter_boxes(&bs, hi);
            let loose = filter_boxes(&bs, lo);
            prop_assert!(strict.len() <= loose.len());
            prop_assert!(strict.boxes.iter().all(|b| loose.boxes.contains(b)));
        }

        #[test]
        fn fusion_laws(seeds in proptest::collection::vec(any::<u64>(), 1..5)) {
            let ms: Vec<BinaryMask> = seeds.iter().map(|&s| random_mask(s, 7, 5)).collect();
            let fused = fuse_masks(&ms, vec![], (7, 5)).unwrap().label.mask;
            let mut rev = ms.clone();
            rev.reverse();
            prop_assert_eq!(&fuse_masks(&rev, vec![], (7, 5)).unwrap().label.mask, &fused);
            let mut doubled = ms.clone();
            doubled.extend(ms.iter().cloned());
            prop_assert_eq!(&fuse_masks(&doubled, vec![], (7, 5)).unwrap().label.mask, &fused);
            let (left, right) = ms.split_at(ms.len() / 2);
            let l = fuse_masks(left, vec![], (7, 5)).unwrap().label.mask;
            let r = fuse_masks(right, vec![], (7, 5)).unwrap().label.mask;
            prop_assert_eq!(&fuse_masks(&[l, r], vec![], (7, 5)).unwrap().label.mask, &fused);
            for m in &ms {
                prop_assert_eq!(&fused.union(m).unwrap(), &fused);
            }
        }
    }

    #[test]
    fn pipeline_adjectives_ablation_on_disambiguation_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let data = sodkit_core::synth::write_scenes(
            dir.path().join("data"),
            "amb_",
            vec![disambiguation_scene(64, 64)],
            sodkit_core::Split::Test,
        )
        .unwrap();
        let captioner = MockCaptioner::from_file(data.captions_path()).unwrap();
        let backends = Backends {
            captioner: &captioner,
            grounder: &MockGrounder,
            segmenter: &MockSegmenter::default(),
        };
        let mut cfg = PipelineConfig::new(dir.path().join("on"));
        cfg.tau = 0.0;
        let on = run_pipeline(&data.records, &backends, &cfg).unwrap();
        cfg.out_dir = dir.path().join("off");
        cfg.adjectives = false;
        let off = run_pipeline(&data.records, &backends, &cfg).unwrap();
        let m_on = mask_io::read_mask(dir.path().join("on/amb_0000.png")).unwrap();
        let m_off = mask_io::read_mask(dir.path().join("off/amb_0000.png")).unwrap();
        assert!(m_on.count_ones() < m_off.count_ones());
        assert_eq!(m_on, data.scenes[0].saliency_gt());
        assert_eq!(on.entries[0].n_boxes, 1);
        assert_eq!(off.entries[0].n_boxes, 2);
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let captioner = MockCaptioner::default();
        let backends = Backends {
            captioner: &captioner,
            grounder: &MockGrounder,
            segmenter: &MockSegmenter::default(),
        };
        let report = run_pipeline(&[], &backends, &PipelineConfig::new(dir.path())).unwrap();
        assert!(report.entries.is_empty());
        assert!(report.acceptable());
        assert_eq!(std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap(), "");
    }

    #[test]
    fn missing_caption_is_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let data =
            sodkit_core::synth::write_dataset(dir.path().join("d"), 3, 32, 4, sodkit_core::Split::Train).unwrap();
        let captioner = MockCaptioner::default();
        let backends = Backends {
            captioner: &captioner,
            grounder: &MockGrounder,
            segmenter: &MockSegmenter::default(),
        };
        let report = run_pipeline(&data.records, &backends, &PipelineConfig::new(dir.path().join("o"))).unwrap();
        assert_eq!(report.count(ImageStatus::Failed), 3);
        assert!(!report.acceptable());
        assert!(report.entries[0].error.is_some());
    }
}

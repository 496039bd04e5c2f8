//! Dataset curation: assembling a manifest from source pools through a
//! reviewable accept list, category statistics, seeded splits and the
//! per-parent distribution report.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sodkit_core::{read_manifest, Category, ImageRecord, SourcePool, Split};

use crate::error::{AnnotateError, Result};
use crate::phrasekit::PhraseSet;

/// All candidate images of one source pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndex {
    pub pool: SourcePool,
    pub entries: Vec<ImageRecord>,
}

impl PoolIndex {
    /// Index stored as a manifest-format JSON Lines file.
    pub fn from_index_file(pool: SourcePool, path: impl AsRef<Path>) -> Result<Self> {
        let mut entries = read_manifest(path)?;
        for e in &mut entries {
            e.source_pool = pool;
        }
        Ok(PoolIndex { pool, entries })
    }

    /// Every `.png`/`.jpg`/`.jpeg` file directly under `dir`, sorted by name.
    /// The file stem becomes the image id.
    pub fn ingest_dir(pool: SourcePool, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| AnnotateError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        let mut entries = Vec::with_capacity(paths.len());
        for path in paths {
            let (width, height) = image::image_dimensions(&path).map_err(|e| {
                AnnotateError::Core(sodkit_core::CoreError::Image {
                    path: path.clone(),
                    source: e,
                })
            })?;
            let image_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            entries.push(ImageRecord {
                image_id,
                path,
                width,
                height,
                source_pool: pool,
                split: Split::Train,
                categories: Vec::new(),
            });
        }
        Ok(PoolIndex { pool, entries })
    }
}

/// Reference `<pool>/<image_id>` to one source image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceRef {
    pub pool: SourcePool,
    pub image_id: String,
}

impl std::fmt::Display for SourceRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.pool, self.image_id)
    }
}

impl std::str::FromStr for SourceRef {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self> {
        let (pool, id) = s
            .split_once('/')
            .ok_or_else(|| AnnotateError::UnknownSource(s.to_string()))?;
        let pool = pool
            .parse::<SourcePool>()
            .map_err(|_| AnnotateError::UnknownSource(s.to_string()))?;
        if id.is_empty() {
            return Err(AnnotateError::UnknownSource(s.to_string()));
        }
        Ok(SourceRef {
            pool,
            image_id: id.to_string(),
        })
    }
}

/// One reference per line; `#` starts a comment.
pub fn read_accept_list(path: impl AsRef<Path>) -> Result<Vec<SourceRef>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AnnotateError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.trim().parse().map_err(|e: AnnotateError| AnnotateError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_accept_list(path: impl AsRef<Path>, refs: &[SourceRef]) -> Result<()> {
    let path = path.as_ref();
    let text: String = refs.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).map_err(|e| AnnotateError::io(path, e))
}

/// Draws up to `n` candidates across all pools for manual review.
pub fn sample_candidates(pools: &[PoolIndex], n: usize, seed: u64) -> Vec<SourceRef> {
    let mut all: Vec<SourceRef> = pools
        .iter()
        .flat_map(|p| {
            p.entries.iter().map(move |e| SourceRef {
                pool: p.pool,
                image_id: e.image_id.clone(),
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n);
    all
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltManifest {
    pub seed: u64,
    pub records: Vec<ImageRecord>,
}

/// Manifest of exactly the accepted images, in a seeded shuffled order.
pub fn build_manifest(pools: &[PoolIndex], seed: u64, accept: &[SourceRef]) -> Result<BuiltManifest> {
    let mut lookup: HashMap<(SourcePool, &str), &ImageRecord> = HashMap::new();
    for p in pools {
        for e in &p.entries {
            lookup.insert((p.pool, e.image_id.as_str()), e);
        }
    }
    let mut seen_refs = HashSet::new();
    let mut seen_ids = HashSet::new();
    let mut records = Vec::with_capacity(accept.len());
    for r in accept {
        if !seen_refs.insert(r) {
            return Err(AnnotateError::Duplicate(r.to_string()));
        }
        let rec = lookup
            .get(&(r.pool, r.image_id.as_str()))
            .ok_or_else(|| AnnotateError::UnknownSource(r.to_string()))?;
        if !seen_ids.insert(rec.image_id.clone()) {
            return Err(AnnotateError::Duplicate(rec.image_id.clone()));
        }
        let mut rec = (*rec).clone();
        rec.source_pool = r.pool;
        records.push(rec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    Ok(BuiltManifest { seed, records })
}

/// Fills empty category lists from phrases: noun as parent, full phrase as
/// subcategory.
pub fn assign_categories_from_phrases(records: &mut [ImageRecord], phrases: &[PhraseSet]) {
    let by_id: HashMap<&str, &PhraseSet> = phrases.iter().map(|p| (p.image_id(), p)).collect();
    for rec in records.iter_mut().filter(|r| r.categories.is_empty()) {
        if let Some(ps) = by_id.get(rec.image_id.as_str()) {
            for p in ps.phrases() {
                let cat = Category::new(p.noun(), p.to_string());
                if !rec.categories.contains(&cat) {
                    rec.categories.push(cat);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCount {
    pub parent: String,
    pub sub: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct CategoryStats {
    /// Per (parent, sub) image counts, by descending count then name.
    pub pairs: Vec<CategoryCount>,
    /// Per parent image counts, same ordering.
    pub parents: Vec<(String, usize)>,
    pub n_images: usize,
    pub n_parents: usize,
    pub n_subs: usize,
}

impl CategoryStats {
    pub fn total_assignments(&self) -> usize {
        self.pairs.iter().map(|p| p.count).sum()
    }
}

/// Exact counts; a pair repeated within one record counts once, and a parent
/// counts once per image however many of its subcategories appear.
pub fn category_stats(records: &[ImageRecord]) -> CategoryStats {
    let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut parents: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in records {
        let unique: BTreeSet<(&str, &str)> = rec
            .categories
            .iter()
            .map(|c| (c.parent_category.as_str(), c.subcategory.as_str()))
            .collect();
        for &pair in &unique {
            *pairs.entry(pair).or_default() += 1;
        }
        let unique_parents: BTreeSet<&str> = unique.iter().map(|p| p.0).collect();
        for p in unique_parents {
            *parents.entry(p).or_default() += 1;
        }
    }
    let mut pair_list: Vec<CategoryCount> = pairs
        .into_iter()
        .map(|((p, s), count)| CategoryCount {
            parent: p.to_string(),
            sub: s.to_string(),
            count,
        })
        .collect();
    pair_list.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.parent.cmp(&b.parent))
            .then_with(|| a.sub.cmp(&b.sub))
    });
    let mut parent_list: Vec<(String, usize)> = parents.into_iter().map(|(p, c)| (p.to_string(), c)).collect();
    parent_list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    CategoryStats {
        n_images: records.len(),
        n_parents: parent_list.len(),
        n_subs: pair_list.len(),
        pairs: pair_list,
        parents: parent_list,
    }
}

/// Seeded partition into `(train, test)`; `round(ratio * N)` records go to
/// train. Both halves keep manifest order and get their `split` field set.
pub fn split_manifest(records: &[ImageRecord], ratio: f64, seed: u64) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(AnnotateError::Ratio(ratio));
    }
    let n_train = (ratio * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut is_train = vec![false; records.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (rec, t) in records.iter().zip(is_train) {
        let mut rec = rec.clone();
        if t {
            rec.split = Split::Train;
            train.push(rec);
        } else {
            rec.split = Split::Test;
            test.push(rec);
        }
    }
    Ok((train, test))
}

/// Writes `categories.csv` (parent, sub, count, share within parent) and one
/// SVG bar chart per parent. Returns the written paths.
pub fn emit_distribution_report(stats: &CategoryStats, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| AnnotateError::io(out_dir, e))?;
    let csv_path = out_dir.join("categories.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(["parent", "sub", "count", "share"])?;
    let mut per_parent: BTreeMap<&str, Vec<&CategoryCount>> = BTreeMap::new();
    for p in &stats.pairs {
        per_parent.entry(p.parent.as_str()).or_default().push(p);
    }
    let parent_total: HashMap<&str, usize> = per_parent
        .iter()
        .map(|(k, v)| (*k, v.iter().map(|c| c.count).sum()))
        .collect();
    for p in &stats.pairs {
        let share = p.count as f64 / parent_total[p.parent.as_str()] as f64;
        writer.write_record([p.parent.clone(), p.sub.clone(), p.count.to_string(), share.to_string()])?;
    }
    writer.flush().map_err(|e| AnnotateError::io(&csv_path, e))?;
    let mut written = vec![csv_path];
    for (parent, subs) in &per_parent {
        let path = out_dir.join(format!("hist_{}.svg", file_safe(parent)));
        let bars: Vec<(&str, usize)> = subs.iter().map(|c| (c.sub.as_str(), c.count)).collect();
        fs::write(&path, bar_chart_svg(parent, &bars)).map_err(|e| AnnotateError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bar_chart_svg(title: &str, bars: &[(&str, usize)]) -> String {
    let max = bars.iter().map(|b| b.1).max().unwrap_or(1).max(1) as f64;
    let (bar_w, gap, height) = (24.0, 8.0, 200.0);
    let width = 60.0 + bars.len() as f64 * (bar_w + gap);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}"><text x="10" y="20">{}</text>"#,
        height + 120.0,
        xml_escape(title)
    );
    for (i, (label, count)) in bars.iter().enumerate() {
        let h = height * *count as f64 / max;
        let x = 40.0 + i as f64 * (bar_w + gap);
        svg.push_str(&format!(
            r#"<rect x="{x}" y="{}" width="{bar_w}" height="{h}" fill="steelblue"><title>{}: {count}</title></rect><text x="{}" y="{}" font-size="10" transform="rotate(60 {} {})">{}</text>"#,
            30.0 + height - h,
            xml_escape(label),
            x + 4.0,
            height + 44.0,
            x + 4.0,
            height + 44.0,
            xml_escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

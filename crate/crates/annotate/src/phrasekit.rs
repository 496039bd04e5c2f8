//! Structured phrase labels: optional adjective tokens followed by a noun.
//!
//! Text form is whitespace separated lowercase tokens, e.g. `"white dog"`.
//! The last token is the noun; everything before it is the adjective.
//! Compound nouns are written as one hyphenated token (`"fire-truck"`).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sodkit_core::imageops::{content_hash, load_rgb};
use sodkit_core::synth::CaptionTable;
use sodkit_core::ImageRecord;

use crate::error::{AnnotateError, BackendError, Result};

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '.' | ',' | ';')
}

fn check_token(token: &str, text: &str) -> Result<()> {
    let bad = |reason: &str| AnnotateError::Phrase {
        text: text.to_string(),
        reason: reason.to_string(),
    };
    if token.is_empty() {
        return Err(bad("empty token"));
    }
    if token.chars().any(is_separator) {
        return Err(bad("token contains a separator"));
    }
    if token.chars().any(char::is_uppercase) {
        return Err(bad("token is not lowercase"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phrase {
    adjective: Vec<String>,
    noun: String,
}

impl Phrase {
    pub fn new<S: AsRef<str>>(adjective: &[S], noun: &str) -> Result<Self> {
        let text = format!(
            "{} {}",
            adjective.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "),
            noun
        );
        check_token(noun, &text)?;
        let adjective: Vec<String> = adjective.iter().map(|s| s.as_ref().to_string()).collect();
        for t in &adjective {
            check_token(t, &text)?;
        }
        Ok(Phrase {
            adjective,
            noun: noun.to_string(),
        })
    }

    pub fn noun_only(noun: &str) -> Result<Self> {
        Phrase::new::<&str>(&[], noun)
    }

    pub fn adjective_tokens(&self) -> &[String] {
        &self.adjective
    }

    /// Adjective tokens joined by spaces, `None` when absent.
    pub fn adjective(&self) -> Option<String> {
        (!self.adjective.is_empty()).then(|| self.adjective.join(" "))
    }

    pub fn noun(&self) -> &str {
        &self.noun
    }

    pub fn without_adjective(&self) -> Phrase {
        Phrase {
            adjective: Vec::new(),
            noun: self.noun.clone(),
        }
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.adjective {
            write!(f, "{a} ")?;
        }
        f.write_str(&self.noun)
    }
}

/// Lowercases, splits on separators and takes the final token as the noun.
pub fn parse_phrase(text: &str) -> Result<Phrase> {
    let lowered = text.to_lowercase();
    let mut tokens: Vec<&str> = lowered.split(is_separator).filter(|t| !t.is_empty()).collect();
    let Some(noun) = tokens.pop() else {
        return Err(AnnotateError::Phrase {
            text: text.to_string(),
            reason: if text.is_empty() {
                "empty string".into()
            } else {
                "only separators".into()
            },
        });
    };
    Phrase::new(&tokens, noun)
}

pub fn format_phrase(p: &Phrase) -> String {
    p.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Manual,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSet {
    image_id: String,
    phrases: Vec<Phrase>,
    origin: Origin,
}

impl PhraseSet {
    pub fn new(image_id: impl Into<String>, phrases: Vec<Phrase>, origin: Origin) -> Result<Self> {
        let image_id = image_id.into();
        if phrases.is_empty() {
            return Err(AnnotateError::PhraseSet {
                image_id,
                reason: "no phrases".into(),
            });
        }
        for (i, p) in phrases.iter().enumerate() {
            if phrases[..i].contains(p) {
                return Err(AnnotateError::PhraseSet {
                    image_id,
                    reason: format!("duplicate phrase `{p}`"),
                });
            }
        }
        Ok(PhraseSet {
            image_id,
            phrases,
            origin,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn phrases(&self) -> &[Phrase] {
        &self.phrases
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Drops every adjective; phrases that collapse onto the same noun are
    /// merged, keeping first-occurrence order.
    pub fn without_adjectives(&self) -> PhraseSet {
        let mut phrases: Vec<Phrase> = Vec::new();
        for p in self.phrases.iter().map(Phrase::without_adjective) {
            if !phrases.contains(&p) {
                phrases.push(p);
            }
        }
        PhraseSet {
            image_id: self.image_id.clone(),
            phrases,
            origin: self.origin,
        }
    }
}

/// Renders phrases in the given order, joined by `" . "` and terminated by `" ."`.
pub fn build_prompt(ps: &PhraseSet) -> String {
    let body: Vec<String> = ps.phrases.iter().map(ToString::to_string).collect();
    format!("{} .", body.join(" . "))
}

/// Inverse of [`build_prompt`].
pub fn parse_prompt(prompt: &str) -> Result<Vec<Phrase>> {
    prompt
        .split('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_phrase)
        .collect()
}

/// The captioner role: image in, phrase texts out.
pub trait CaptionerBackend: Send + Sync {
    fn name(&self) -> &str;

    /// `false` makes the pipeline serialize calls.
    fn reentrant(&self) -> bool {
        true
    }

    fn describe(&self, image: &RgbImage, record: &ImageRecord) -> std::result::Result<Vec<String>, BackendError>;
}

/// Runs the captioner on an already decoded image.
pub fn caption_image(backend: &dyn CaptionerBackend, image: &RgbImage, record: &ImageRecord) -> Result<PhraseSet> {
    let texts = backend.describe(image, record)?;
    if texts.is_empty() {
        return Err(AnnotateError::BackendOutput {
            image_id: record.image_id.clone(),
            reason: "no phrases returned".into(),
        });
    }
    let mut phrases: Vec<Phrase> = Vec::with_capacity(texts.len());
    for t in &texts {
        let p = parse_phrase(t).map_err(|e| AnnotateError::BackendOutput {
            image_id: record.image_id.clone(),
            reason: e.to_string(),
        })?;
        if !phrases.contains(&p) {
            phrases.push(p);
        }
    }
    PhraseSet::new(record.image_id.clone(), phrases, Origin::Generated)
}

pub fn caption(backend: &dyn CaptionerBackend, record: &ImageRecord) -> Result<PhraseSet> {
    let image = load_rgb(&record.path)?;
    caption_image(backend, &image, record)
}

/// Looks phrases up by image content hash in a fixture table.
#[derive(Debug, Clone, Default)]
pub struct MockCaptioner {
    table: CaptionTable,
}

impl MockCaptioner {
    pub fn new(table: CaptionTable) -> Self {
        MockCaptioner { table }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AnnotateError::io(path, e))?;
        let table = serde_json::from_str(&text).map_err(|e| AnnotateError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(MockCaptioner { table })
    }
}

impl CaptionerBackend for MockCaptioner {
    fn name(&self) -> &str {
        "mock-captioner"
    }

    fn describe(&self, image: &RgbImage, record: &ImageRecord) -> std::result::Result<Vec<String>, BackendError> {
        let hash = content_hash(image);
        self.table
            .get(&hash)
            .cloned()
            .ok_or_else(|| BackendError::Failed(format!("no fixture entry for `{}` (hash {hash})", record.image_id)))
    }
}

#[derive(Serialize, Deserialize)]
struct PhraseEntry {
    adjective: Option<String>,
    noun: String,
}

#[derive(Serialize, Deserialize)]
struct PhraseLine {
    image_id: String,
    origin: Origin,
    phrases: Vec<PhraseEntry>,
}

/// Reads a phrase file (JSON Lines `{image_id, origin, phrases}`).
pub fn read_phrase_file(path: impl AsRef<Path>) -> Result<Vec<PhraseSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AnnotateError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AnnotateError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| AnnotateError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: PhraseLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mut phrases = Vec::with_capacity(raw.phrases.len());
        for e in raw.phrases {
            let adj: Vec<&str> = e
                .adjective
                .as_deref()
                .map(|a| a.split_whitespace().collect())
                .unwrap_or_default();
            phrases.push(Phrase::new(&adj, &e.noun).map_err(|e| parse_err(e.to_string()))?);
        }
        out.push(PhraseSet::new(raw.image_id, phrases, raw.origin).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_phrase_file(path: impl AsRef<Path>, sets: &[PhraseSet]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| AnnotateError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ps in sets {
        let line = PhraseLine {
            image_id: ps.image_id.clone(),
            origin: ps.origin,
            phrases: ps
                .phrases
                .iter()
                .map(|p| PhraseEntry {
                    adjective: p.adjective(),
                    noun: p.noun.clone(),
                })
                .collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))
            .map_err(|e| AnnotateError::io(path, e))?;
    }
    out.flush().map_err(|e| AnnotateError::io(path, e))
}

/// Captioner fine-tuning pairs sampled from manually annotated images.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneCorpus {
    pub seed: u64,
    pub pairs: Vec<(PathBuf, String)>,
}

impl FinetuneCorpus {
    /// TSV with a `# seed=<n>` header line.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = format!("# seed={}\n", self.seed);
        for (p, prompt) in &self.pairs {
            text.push_str(&format!("{}\t{}\n", p.display(), prompt));
        }
        std::fs::write(path, text).map_err(|e| AnnotateError::io(path, e))
    }
}

/// `ceil(fraction * n)`, with products that are integral up to rounding
/// error (e.g. `0.3 * 10`) taken as exact.
pub fn finetune_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * (n.max(1) as f64) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Samples `ceil(fraction * N)` manifest images with a seeded RNG and pairs
/// each with the prompt of its manual phrase set. Output follows manifest order.
pub fn export_finetune_set(
    manifest: &[ImageRecord],
    phrases: &[PhraseSet],
    fraction: f64,
    seed: u64,
) -> Result<FinetuneCorpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AnnotateError::Fraction(fraction));
    }
    let manual: HashMap<&str, &PhraseSet> = phrases
        .iter()
        .filter(|p| p.origin == Origin::Manual)
        .map(|p| (p.image_id.as_str(), p))
        .collect();
    let n = manifest.len();
    let k = finetune_count(fraction, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    let mut pairs = Vec::with_capacity(k);
    for i in picked {
        let rec = &manifest[i];
        let ps = manual
            .get(rec.image_id.as_str())
            .ok_or_else(|| AnnotateError::MissingAnnotation(rec.image_id.clone()))?;
        pairs.push((rec.path.clone(), build_prompt(ps)));
    }
    Ok(FinetuneCorpus { seed, pairs })
}

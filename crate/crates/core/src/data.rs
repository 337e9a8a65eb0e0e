//! Dataset manifests, image decoding, stratified splitting and a synthetic
//! dataset generator.
//!
//! A manifest is a UTF-8 CSV with header `path,label` or `path,label,split`.
//! Relative image paths resolve against the manifest's directory. Labels come
//! from the canonical vocabulary `covid, normal, pneumonia`, whose order fixes
//! class indices and confusion-matrix axes.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const CANONICAL_CLASSES: [&str; 3] = ["covid", "normal", "pneumonia"];

/// Ordered class names; position is the class index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary(Vec<String>);

impl ClassVocabulary {
    /// `[covid, normal]` for 2 classes, all three canonical classes for 3.
    pub fn for_count(k: usize) -> Result<Self> {
        if !(2..=CANONICAL_CLASSES.len()).contains(&k) {
            return Err(Error::Config(format!("class count must be 2 or 3, got {k}")));
        }
        Ok(ClassVocabulary(CANONICAL_CLASSES[..k].iter().map(|s| s.to_string()).collect()))
    }

    /// Canonical classes filtered to those present in `labels`.
    pub fn from_present<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let present: HashSet<&str> = labels.into_iter().collect();
        ClassVocabulary(
            CANONICAL_CLASSES
                .iter()
                .filter(|c| present.contains(*c))
                .map(|s| s.to_string())
                .collect(),
        )
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|c| c == label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub path: String,
    pub label: String,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub vocabulary: ClassVocabulary,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Per-class counts in vocabulary order.
    /// Moves the manifest to `new_base`, rewriting relative paths so they
    /// still name the same files.
    pub fn rebased(mut self, new_base: impl AsRef<Path>) -> Self {
        let new_base = new_base.as_ref();
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let (from, to) = (abs(&self.base_dir), abs(new_base));
        if from != to {
            for e in &mut self.entries {
                if Path::new(&e.path).is_relative() {
                    let target = from.join(&e.path);
                    let rel = pathdiff::diff_paths(&target, &to).unwrap_or(target);
                    e.path = rel.to_string_lossy().into_owned();
                }
            }
        }
        self.base_dir = new_base.to_path_buf();
        self
    }

    pub fn histogram(&self) -> Vec<(String, usize)> {
        self.count_where(|_| true)
    }

    pub fn split_histogram(&self, split: Split) -> Vec<(String, usize)> {
        self.count_where(|e| e.split == Some(split))
    }

    fn count_where(&self, keep: impl Fn(&ManifestEntry) -> bool) -> Vec<(String, usize)> {
        self.vocabulary
            .names()
            .iter()
            .map(|c| {
                let n = self.entries.iter().filter(|e| &e.label == c && keep(e)).count();
                (c.clone(), n)
            })
            .collect()
    }

    pub fn has_splits(&self) -> bool {
        self.entries.iter().any(|e| e.split.is_some())
    }

    /// Re-indexes labels under `vocabulary`; every label must belong to it.
    pub fn with_vocabulary(mut self, vocabulary: &ClassVocabulary) -> Result<Self> {
        for (i, e) in self.entries.iter().enumerate() {
            if vocabulary.index_of(&e.label).is_none() {
                return Err(Error::Data(format!(
                    "entry {} ({}) has label {:?}, not in the class vocabulary {:?}",
                    i + 1,
                    e.path,
                    e.label,
                    vocabulary.names()
                )));
            }
        }
        self.vocabulary = vocabulary.clone();
        Ok(self)
    }

    /// Serialized CSV. A split column is written only if some entry has one.
    pub fn to_csv(&self) -> String {
        let with_split = self.has_splits();
        let mut out = String::from(if with_split { "path,label,split\n" } else { "path,label\n" });
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for e in &self.entries {
            let mut row = vec![e.path.as_str(), e.label.as_str()];
            if with_split {
                row.push(e.split.map(Split::as_str).unwrap_or(""));
            }
            w.write_record(&row).expect("in-memory csv write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a manifest, inferring the vocabulary from the labels present.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    load_manifest_with(path, None)
}

/// Reads a manifest. With `vocabulary`, every label must belong to it;
/// otherwise labels must be canonical class names.
pub fn load_manifest_with(path: impl AsRef<Path>, vocabulary: Option<&ClassVocabulary>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = parse_manifest(&text, vocabulary).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    m.base_dir = base_dir;
    Ok(m)
}

/// Parses manifest CSV text. Errors name the 1-based file line.
pub fn parse_manifest(text: &str, vocabulary: Option<&ClassVocabulary>) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let with_split = match cols.as_slice() {
        ["path", "label"] => false,
        ["path", "label", "split"] => true,
        _ => {
            return Err(Error::Data(format!(
                "header must be `path,label` or `path,label,split`, got {:?}",
                cols.join(",")
            )))
        }
    };

    let allowed: Vec<&str> = match vocabulary {
        Some(v) => v.names().iter().map(String::as_str).collect(),
        None => CANONICAL_CLASSES.to_vec(),
    };
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let path = rec.get(0).unwrap_or("").to_string();
        let label = rec.get(1).unwrap_or("").trim().to_string();
        if path.is_empty() {
            return Err(Error::Data(format!("line {line}: empty path")));
        }
        if !allowed.contains(&label.as_str()) {
            return Err(Error::Data(format!(
                "line {line}: unknown label {label:?} (expected one of {allowed:?})"
            )));
        }
        if !seen.insert(path.clone()) {
            return Err(Error::Data(format!("line {line}: duplicate path {path:?}")));
        }
        let split = if with_split {
            match rec.get(2).unwrap_or("").trim() {
                "" => None,
                "train" => Some(Split::Train),
                "test" => Some(Split::Test),
                other => return Err(Error::Data(format!("line {line}: unknown split {other:?}"))),
            }
        } else {
            None
        };
        entries.push(ManifestEntry { path, label, split });
    }
    let vocabulary = match vocabulary {
        Some(v) => v.clone(),
        None => ClassVocabulary::from_present(entries.iter().map(|e| e.label.as_str())),
    };
    Ok(DatasetManifest {
        entries,
        vocabulary,
        base_dir: PathBuf::new(),
    })
}

/// Bilinear resampling of a row-major `src_w x src_h` plane with
/// half-pixel-centred sampling and edge clamping.
pub fn resize_bilinear(src: &[f32], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f32> {
    let axis = |dst: usize, n_src: usize, n_dst: usize| {
        let pos = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..dst_w).map(|x| axis(x, src_w, dst_w)).collect();
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let (y0, y1, fy) = axis(y, src_h, dst_h);
        for &(x0, x1, fx) in &cols {
            let p = |yy: usize, xx: usize| src[yy * src_w + xx] as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Grayscale intensities in `[0, 1]`, row-major, with the image's width and
/// height. Colour images are reduced with luma weights 0.299/0.587/0.114.
pub fn decode_gray(path: impl AsRef<Path>) -> Result<(Vec<f32>, usize, usize)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("cannot decode {}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = if img.color().has_color() {
        img.to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0) as f32
            })
            .collect()
    } else {
        img.to_luma8().pixels().map(|p| p.0[0] as f32 / 255.0).collect()
    };
    Ok((values, w, h))
}

/// Decodes an image file to a `[1, size, size]` tensor in `[0, 1]`.
pub fn decode_and_resize(path: impl AsRef<Path>, size: usize) -> Result<Tensor<f32>> {
    let (values, w, h) = decode_gray(path)?;
    let data = if (w, h) == (size, size) {
        values
    } else {
        resize_bilinear(&values, w, h, size, size)
    };
    Tensor::new(&[1, size, size], data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// A decoded, labelled image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label_index: usize,
    pub source_path: PathBuf,
}

/// Decodes the entries matching `split` (all entries for `None`) in manifest
/// order. Decoding runs in parallel.
pub fn load_samples(manifest: &DatasetManifest, split: Option<Split>, size: usize) -> Result<Vec<Sample>> {
    manifest
        .entries
        .par_iter()
        .filter(|e| split.is_none() || e.split == split)
        .map(|e| {
            let label_index = manifest
                .vocabulary
                .index_of(&e.label)
                .ok_or_else(|| Error::Data(format!("{}: label {:?} not in vocabulary", e.path, e.label)))?;
            let source_path = manifest.resolve(e);
            Ok(Sample {
                image: decode_and_resize(&source_path, size)?,
                label_index,
                source_path,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Exact `(train, test)` counts per class name, replacing the fraction.
    pub per_class_override: Option<Vec<(String, usize, usize)>>,
    pub seed: u64,
    /// Replace existing split assignments instead of refusing.
    pub overwrite: bool,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            per_class_override: None,
            seed,
            overwrite: false,
        }
    }
}

/// `floor(fraction * n)`, tolerant of representation error just below an
/// integer (e.g. 0.29 * 100).
pub fn floor_train_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Assigns every entry to train or test, class by class.
///
/// Class `c` with `n` entries gets `floor(train_fraction * n)` training
/// entries (or the override counts), chosen by a seeded shuffle of that
/// class's entries; the rest are test.
pub fn stratified_split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {}",
            spec.train_fraction
        )));
    }
    if manifest.has_splits() && !spec.overwrite {
        return Err(Error::Usage("manifest already has split assignments; pass overwrite to replace them".into()));
    }
    if let Some(over) = &spec.per_class_override {
        for (name, _, _) in over {
            if manifest.vocabulary.index_of(name).is_none() {
                return Err(Error::Config(format!("override names unknown class {name:?}")));
            }
        }
    }

    let mut out = manifest.clone();
    let mut rng = Rng::new(spec.seed);
    for class in manifest.vocabulary.names() {
        let mut members: Vec<usize> = (0..manifest.entries.len())
            .filter(|&i| &manifest.entries[i].label == class)
            .collect();
        let n = members.len();
        let n_train = match &spec.per_class_override {
            Some(over) => {
                let &(_, train, test) = over
                    .iter()
                    .find(|(name, _, _)| name == class)
                    .ok_or_else(|| Error::Config(format!("override is missing class {class:?}")))?;
                if train + test != n {
                    return Err(Error::Config(format!(
                        "override for {class:?} asks for {train} train + {test} test but the class has {n} entries"
                    )));
                }
                train
            }
            None => floor_train_count(spec.train_fraction, n),
        };
        rng.shuffle(&mut members);
        for (rank, &i) in members.iter().enumerate() {
            out.entries[i].split = Some(if rank < n_train { Split::Train } else { Split::Test });
        }
    }
    Ok(out)
}

/// Location of the planted class feature in a synthetic image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureRecord {
    pub path: String,
    pub class_index: usize,
    /// `[x0, y0, x1, y1]`, half-open pixel bounds.
    pub feature_box: [usize; 4],
}

impl FeatureRecord {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let [x0, y0, x1, y1] = self.feature_box;
        (x0..x1).contains(&x) && (y0..y1).contains(&y)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub features: Vec<FeatureRecord>,
    pub manifest_path: PathBuf,
    pub features_path: PathBuf,
}

pub const SYNTH_MANIFEST: &str = "manifest.csv";
pub const SYNTH_FEATURES: &str = "features.jsonl";

/// Nominal top-left corner of class `k`'s feature box in a `size` image.
/// The box side is `size / 4`.
pub fn synthetic_anchor(class_index: usize, size: usize) -> (usize, usize) {
    match class_index {
        0 => (size / 8, size / 8),
        1 => (5 * size / 8, size / 8),
        _ => (3 * size / 8, 5 * size / 8),
    }
}

/// Texture of class `k` at offset `(dx, dy)` inside its box: horizontal
/// stripes, vertical stripes or a checkerboard, each with period 4.
fn synthetic_pattern(class_index: usize, dx: usize, dy: usize) -> bool {
    match class_index {
        0 => (dy / 2) % 2 == 0,
        1 => (dx / 2) % 2 == 0,
        _ => ((dx / 2) + (dy / 2)) % 2 == 0,
    }
}

/// Writes `num_per_class * num_classes` grayscale PNGs to `out_dir` with a
/// manifest and a JSON-lines feature sidecar.
///
/// Each image is uniform background noise in `[0, 0.3]` plus one bright
/// textured square (side `size / 4`) near its class's anchor, jittered by up
/// to `size / 32` pixels. Entries interleave classes.
pub fn generate_synthetic(
    out_dir: impl AsRef<Path>,
    num_per_class: usize,
    size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if size < 16 {
        return Err(Error::Parameter(format!("synthetic images need size >= 16, got {size}")));
    }
    if num_per_class == 0 {
        return Err(Error::Parameter("need at least one image per class".into()));
    }
    let vocabulary = ClassVocabulary::for_count(num_classes)?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rng = Rng::new(seed);
    let side = size / 4;
    let jitter = (size / 32).max(1);
    let mut entries = Vec::new();
    let mut features = Vec::new();
    for i in 0..num_per_class {
        for (k, label) in vocabulary.names().iter().enumerate() {
            let (ax, ay) = synthetic_anchor(k, size);
            let shift = |rng: &mut Rng, a: usize| {
                let off = rng.below(2 * jitter as u64 + 1) as usize;
                (a + off).saturating_sub(jitter).min(size - side)
            };
            let x0 = shift(&mut rng, ax);
            let y0 = shift(&mut rng, ay);
            let mut img = GrayImage::new(size as u32, size as u32);
            for y in 0..size {
                for x in 0..size {
                    let inside = (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y);
                    let v = if inside {
                        let on = synthetic_pattern(k, x - x0, y - y0);
                        (if on { 0.95 } else { 0.35 }) + 0.05 * rng.uniform()
                    } else {
                        0.2 * rng.uniform()
                    };
                    img.put_pixel(x as u32, y as u32, Luma([(v * 255.0).round() as u8]));
                }
            }
            let name = format!("img_{i:04}_{label}.png");
            let file = out_dir.join(&name);
            DynamicImage::ImageLuma8(img)
                .save_with_format(&file, image::ImageFormat::Png)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(&file, io),
                    other => Error::Data(format!("cannot encode {}: {other}", file.display())),
                })?;
            entries.push(ManifestEntry {
                path: name.clone(),
                label: label.clone(),
                split: None,
            });
            features.push(FeatureRecord {
                path: name,
                class_index: k,
                feature_box: [x0, y0, x0 + side, y0 + side],
            });
        }
    }

    let manifest = DatasetManifest {
        entries,
        vocabulary,
        base_dir: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join(SYNTH_MANIFEST);
    manifest.save(&manifest_path)?;
    let features_path = out_dir.join(SYNTH_FEATURES);
    let mut f = fs::File::create(&features_path).map_err(|e| Error::io(&features_path, e))?;
    for r in &features {
        writeln!(f, "{}", serde_json::to_string(r).expect("feature record serializes"))
            .map_err(|e| Error::io(&features_path, e))?;
    }
    Ok(SyntheticDataset {
        manifest,
        features,
        manifest_path,
        features_path,
    })
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

//! Seeded procedural images and the two synthetic datasets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quality::RatingDistribution;
use crate::tensor::Tensor;

use super::image::{read_image, write_image, Image};
use super::ops::{degrade, haze_pair, synth_rating, tone_operator, DegradeKind};

/// Per-image `gamma_lift` range of the tone operator.
pub const TONE_GAMMA_RANGE: (f64, f64) = (0.68, 0.72);
/// Per-image S-curve strength range of the tone operator.
pub const TONE_STRENGTH_RANGE: (f64, f64) = (0.45, 0.55);
pub const HAZE_TRANSMISSION_RANGE: (f64, f64) = (0.7, 0.9);
pub const HAZE_AIRLIGHT_RANGE: (f64, f64) = (0.8, 1.0);
/// Smallest image side accepted by dataset generation.
pub const MIN_SIZE: usize = 16;
pub const MIN_IMAGES: usize = 10;

fn fill_shape(data: &mut [f64], width: usize, height: usize, shape: Shape, color: [f64; 3]) {
    for i in 0..height {
        for j in 0..width {
            let (py, px) = (i as f64 + 0.5 - shape.cy, j as f64 + 0.5 - shape.cx);
            let inside = if shape.circle {
                py * py + px * px <= shape.r * shape.r
            } else {
                py.abs() <= shape.r && px.abs() <= shape.r
            };
            if inside {
                data[(i * width + j) * 3..][..3].copy_from_slice(&color);
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Shape {
    cy: f64,
    cx: f64,
    r: f64,
    circle: bool,
}

/// Seeded multi-frequency image: a mid-range colour gradient with a
/// sinusoidal texture and random coloured shapes, overlaid with three
/// fixed-size landmarks (a black shape, a white shape and a patch of fine
/// stripes) in a random order across the width.
pub fn procedural_image(height: usize, width: usize, rng: &mut impl Rng) -> Image {
    let (hf, wf) = (height as f64, width as f64);
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let (dy, dx) = angle.sin_cos();
    let freq = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));

    let mut data = vec![0.0; height * width * 3];
    for i in 0..height {
        for j in 0..width {
            let (y, x) = (i as f64 / hf, j as f64 / wf);
            let t = (0.5 + (y - 0.5) * dy + (x - 0.5) * dx).clamp(0.0, 1.0);
            let wave = (std::f64::consts::TAU * (freq.0 * y + freq.1 * x) + phase).sin();
            for c in 0..3 {
                data[(i * width + j) * 3 + c] = c0[c] * (1.0 - t) + c1[c] * t + tint[c] * wave;
            }
        }
    }

    for _ in 0..rng.random_range(1..4) {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
        let shape = Shape {
            cy: rng.random::<f64>() * hf,
            cx: rng.random::<f64>() * wf,
            r: rng.random_range(0.1..0.25) * hf.min(wf),
            circle: rng.random_bool(0.5),
        };
        fill_shape(&mut data, width, height, shape, color);
    }

    let mut slots = [0usize, 1, 2];
    slots.shuffle(rng);
    let cell = wf / 3.0;
    let side = (0.8 * cell.min(hf)).floor();
    let jitter_y = (hf - side) / 2.0;
    let center = |slot: usize, rng: &mut dyn rand::RngCore| {
        let cx = cell * (slot as f64 + 0.5) + rng.random_range(-0.1..0.1) * cell;
        let cy = hf / 2.0 + rng.random_range(-0.5..0.5) * jitter_y;
        (cy, cx)
    };
    for (k, color) in [[0.0; 3], [1.0; 3]].into_iter().enumerate() {
        let (cy, cx) = center(slots[k], rng);
        let circle = rng.random_bool(0.5);
        fill_shape(&mut data, width, height, Shape { cy, cx, r: side / 2.0, circle }, color);
    }
    let (cy, cx) = center(slots[2], rng);
    let vertical = rng.random_bool(0.5);
    let (oy, ox) = ((cy - side / 2.0).max(0.0) as usize, (cx - side / 2.0).max(0.0) as usize);
    let n = side as usize;
    for i in oy..(oy + n).min(height) {
        for j in ox..(ox + n).min(width) {
            let k = if vertical { j - ox } else { i - oy };
            let v = if (k / 2) % 2 == 0 { 0.9 } else { 0.1 };
            data[(i * width + j) * 3..][..3].fill(v);
        }
    }

    Image::clamped(Tensor::from_parts(vec![height, width, 3], data)).expect("rgb")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Which reference operator produces the enhancement pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairOperator {
    Tone,
    Haze,
    /// Tone for even pair ids, haze for odd ones.
    Mixed,
}

impl FromStr for PairOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tone" => Ok(PairOperator::Tone),
            "haze" => Ok(PairOperator::Haze),
            "mixed" => Ok(PairOperator::Mixed),
            other => Err(Error::InvalidParameter(format!("unknown operator `{other}` (tone, haze, mixed)"))),
        }
    }
}

impl fmt::Display for PairOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairOperator::Tone => "tone",
            PairOperator::Haze => "haze",
            PairOperator::Mixed => "mixed",
        })
    }
}

/// Operator and parameters that produced one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorTag {
    Tone { gamma_lift: f64, strength: f64 },
    Haze { transmission: f64, airlight: f64 },
}

impl OperatorTag {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorTag::Tone { .. } => "tone",
            OperatorTag::Haze { .. } => "haze",
        }
    }

    pub fn params_string(&self) -> String {
        match self {
            OperatorTag::Tone { gamma_lift, strength } => format!("gamma_lift={gamma_lift};strength={strength}"),
            OperatorTag::Haze { transmission, airlight } => format!("transmission={transmission};airlight={airlight}"),
        }
    }

    pub fn parse(name: &str, params: &str) -> Result<Self> {
        let mut values = std::collections::BTreeMap::new();
        for kv in params.split(';').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("bad operator parameter `{kv}`")))?;
            let v: f64 = v.parse().map_err(|_| Error::InvalidParameter(format!("bad operator value `{kv}`")))?;
            values.insert(k, v);
        }
        let get = |k: &str| values.get(k).copied().ok_or_else(|| Error::InvalidParameter(format!("missing `{k}` in `{params}`")));
        match name {
            "tone" => Ok(OperatorTag::Tone { gamma_lift: get("gamma_lift")?, strength: get("strength")? }),
            "haze" => Ok(OperatorTag::Haze { transmission: get("transmission")?, airlight: get("airlight")? }),
            other => Err(Error::InvalidParameter(format!("unknown operator `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatedImage {
    pub image: Image,
    pub rating: RatingDistribution,
    pub severity: f64,
    pub kind: DegradeKind,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPair {
    pub id: usize,
    pub input: Image,
    pub reference: Image,
    pub operator: OperatorTag,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub rated: Vec<RatedImage>,
    pub pairs: Vec<DatasetPair>,
}

impl Datasets {
    /// `(image, rating)` tuples of one split, in generation order.
    pub fn rated_split(&self, split: Split) -> Vec<(Tensor, RatingDistribution)> {
        self.rated
            .iter()
            .filter(|r| r.split == split)
            .map(|r| (r.image.tensor().clone(), r.rating.clone()))
            .collect()
    }

    /// `(input, reference)` tuples of one split, in generation order.
    pub fn pair_split(&self, split: Split) -> Vec<(Tensor, Tensor)> {
        self.pairs
            .iter()
            .filter(|p| p.split == split)
            .map(|p| (p.input.tensor().clone(), p.reference.tensor().clone()))
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates `n_images` rated images (first 80% train) and `n_images`
/// enhancement pairs (first half train). A pure function of its arguments.
///
/// Rated image `i` degrades a fresh procedural image with kind
/// `i mod 3` (blur, noise, contrast loss) at a uniform random severity.
pub fn make_datasets(seed: u64, n_images: usize, height: usize, width: usize, operator: PairOperator) -> Result<Datasets> {
    if n_images < MIN_IMAGES {
        return Err(Error::InvalidConfig(format!("need at least {MIN_IMAGES} images, got {n_images}")));
    }
    if height < MIN_SIZE || width < MIN_SIZE {
        return Err(Error::InvalidConfig(format!("image size {height}x{width} below the {MIN_SIZE}x{MIN_SIZE} minimum")));
    }
    let rated_train = n_images * 8 / 10;
    let mut rated = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let mut rng = stream_rng(seed, 2 * i as u64);
        let base = procedural_image(height, width, &mut rng);
        let severity: f64 = rng.random();
        let kind = DegradeKind::ALL[i % 3];
        let image = degrade(&base, severity, kind, rng.random())?;
        rated.push(RatedImage {
            image,
            rating: synth_rating(severity)?,
            severity,
            kind,
            split: if i < rated_train { Split::Train } else { Split::Test },
        });
    }

    let pair_train = n_images / 2;
    let mut pairs = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let mut rng = stream_rng(seed, 2 * i as u64 + 1);
        let base = procedural_image(height, width, &mut rng);
        let use_tone = match operator {
            PairOperator::Tone => true,
            PairOperator::Haze => false,
            PairOperator::Mixed => i % 2 == 0,
        };
        let (input, reference, tag) = if use_tone {
            let gamma_lift = rng.random_range(TONE_GAMMA_RANGE.0..=TONE_GAMMA_RANGE.1);
            let strength = rng.random_range(TONE_STRENGTH_RANGE.0..=TONE_STRENGTH_RANGE.1);
            let reference = tone_operator(&base, gamma_lift, strength)?;
            (base, reference, OperatorTag::Tone { gamma_lift, strength })
        } else {
            let transmission = rng.random_range(HAZE_TRANSMISSION_RANGE.0..=HAZE_TRANSMISSION_RANGE.1);
            let airlight = rng.random_range(HAZE_AIRLIGHT_RANGE.0..=HAZE_AIRLIGHT_RANGE.1);
            let (hazy, clean) = haze_pair(&base, transmission, airlight)?;
            (hazy, clean, OperatorTag::Haze { transmission, airlight })
        };
        pairs.push(DatasetPair {
            id: i,
            input,
            reference,
            operator: tag,
            split: if i < pair_train { Split::Train } else { Split::Test },
        });
    }
    Ok(Datasets { rated, pairs })
}

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 7] = ["path", "role", "operator", "sigma", "split", "pair_id", "op_params"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { path: path.to_path_buf(), offset, reason: format!("{other:?}") },
    }
}

/// Writes every image as PPM under `dir` plus `manifest.csv`; returns the
/// manifest path. Paths in the manifest are relative to `dir`.
pub fn write_datasets(dir: &Path, data: &Datasets) -> Result<PathBuf> {
    for sub in ["rated", "pairs"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_error(&manifest, e))?;
    for (i, r) in data.rated.iter().enumerate() {
        let rel = format!("rated/rated_{i:05}.ppm");
        write_image(&dir.join(&rel), &r.image)?;
        let row = [rel, "rated".into(), r.kind.to_string(), r.severity.to_string(), r.split.to_string(), String::new(), String::new()];
        w.write_record(&row).map_err(|e| csv_error(&manifest, e))?;
    }
    for p in &data.pairs {
        for (role, img) in [("input", &p.input), ("reference", &p.reference)] {
            let rel = format!("pairs/pair_{:05}_{role}.ppm", p.id);
            write_image(&dir.join(&rel), img)?;
            let row = [
                rel,
                role.into(),
                p.operator.name().into(),
                String::new(),
                p.split.to_string(),
                p.id.to_string(),
                p.operator.params_string(),
            ];
            w.write_record(&row).map_err(|e| csv_error(&manifest, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Loads a dataset written by [`write_datasets`]; ratings are re-derived
/// from the recorded severities.
pub fn load_datasets(dir: &Path) -> Result<Datasets> {
    let manifest = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
    let header = r.headers().map_err(|e| csv_error(&manifest, e))?.clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Parse { path: manifest, offset: 0, reason: format!("unexpected header {header:?}") });
    }
    let bad = |pos: Option<&csv::Position>, reason: String| Error::Parse {
        path: manifest.clone(),
        offset: pos.map_or(0, |p| p.byte() as usize),
        reason,
    };
    let mut rated = Vec::new();
    let mut halves: std::collections::BTreeMap<usize, (Option<Image>, Option<Image>, OperatorTag, Split)> = Default::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&manifest, e))?;
        let pos = rec.position();
        let image = read_image(&dir.join(&rec[0]))?;
        let split: Split = rec[4].parse().map_err(|e: Error| bad(pos, e.to_string()))?;
        match &rec[1] {
            "rated" => {
                let kind: DegradeKind = rec[2].parse().map_err(|e: Error| bad(pos, e.to_string()))?;
                let severity: f64 = rec[3].parse().map_err(|_| bad(pos, format!("bad sigma `{}`", &rec[3])))?;
                rated.push(RatedImage { image, rating: synth_rating(severity)?, severity, kind, split });
            }
            role @ ("input" | "reference") => {
                let id: usize = rec[5].parse().map_err(|_| bad(pos, format!("bad pair_id `{}`", &rec[5])))?;
                let tag = OperatorTag::parse(&rec[2], &rec[6]).map_err(|e| bad(pos, e.to_string()))?;
                let entry = halves.entry(id).or_insert((None, None, tag, split));
                if role == "input" {
                    entry.0 = Some(image);
                } else {
                    entry.1 = Some(image);
                }
            }
            other => return Err(bad(pos, format!("unknown role `{other}`"))),
        }
    }
    let mut pairs = Vec::with_capacity(halves.len());
    for (id, (input, reference, operator, split)) in halves {
        match (input, reference) {
            (Some(input), Some(reference)) => pairs.push(DatasetPair { id, input, reference, operator, split }),
            _ => return Err(Error::Parse { path: manifest.clone(), offset: 0, reason: format!("pair {id} is incomplete") }),
        }
    }
    Ok(Datasets { rated, pairs })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn deterministic_and_split_sizes() {
        let a = make_datasets(3, 100, 16, 20, PairOperator::Mixed).unwrap();
        assert_eq!(a, make_datasets(3, 100, 16, 20, PairOperator::Mixed).unwrap());
        assert_eq!(a.rated.iter().filter(|r| r.split == Split::Train).count(), 80);
        assert_eq!(a.rated.iter().filter(|r| r.split == Split::Test).count(), 20);
        assert_eq!(a.pairs.iter().filter(|p| p.split == Split::Train).count(), 50);
        assert_eq!(a.pairs.iter().filter(|p| p.split == Split::Test).count(), 50);
    }

    #[test]
    fn splits_are_disjoint_by_content() {
        let d = make_datasets(11, 30, 16, 16, PairOperator::Tone).unwrap();
        let train: HashSet<_> = d.rated.iter().filter(|r| r.split == Split::Train).map(|r| r.image.sha256_hex()).collect();
        assert!(d.rated.iter().filter(|r| r.split == Split::Test).all(|r| !train.contains(&r.image.sha256_hex())));
        let train: HashSet<_> = d.pairs.iter().filter(|p| p.split == Split::Train).map(|p| p.input.sha256_hex()).collect();
        assert!(d.pairs.iter().filter(|p| p.split == Split::Test).all(|p| !train.contains(&p.input.sha256_hex())));
    }

    #[test]
    fn invalid_requests() {
        assert!(make_datasets(0, 9, 32, 32, PairOperator::Tone).is_err());
        assert!(make_datasets(0, 10, 15, 32, PairOperator::Tone).is_err());
    }

    #[test]
    fn operator_tags_round_trip() {
        for tag in [OperatorTag::Tone { gamma_lift: 0.7, strength: 0.5 }, OperatorTag::Haze { transmission: 0.8, airlight: 0.9 }] {
            assert_eq!(OperatorTag::parse(tag.name(), &tag.params_string()).unwrap(), tag);
        }
    }
}

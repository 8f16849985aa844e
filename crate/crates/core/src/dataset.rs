//! Embedding records, the line-oriented dataset file, deterministic
//! splitting, and a synthetic generator with planted genre signal.
//!
//! # File format
//!
//! UTF-8 text, one JSON object per line. Line 1 is the header:
//!
//! ```text
//! {"format":"posterfuse-embeddings","version":1,"visual_shape":[6,48],"textual_shape":[4,32],"genres":["action",...]}
//! ```
//!
//! Every following non-blank line is one record:
//!
//! ```text
//! {"id":"p-0001","visual":[[0.1,...],...],"textual":[[...],...],"labels":["drama","horror"]}
//! ```
//!
//! Floats are written in shortest round-trip form, so save followed by load
//! reproduces every value bit for bit.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT: &str = "posterfuse-embeddings";
pub const DATASET_VERSION: u32 = 1;

/// Most positive labels a record may carry.
pub const MAX_LABELS: usize = 5;

const DEFAULT_GENRES: [&str; 13] = [
    "action",
    "adventure",
    "animation",
    "biography",
    "comedy",
    "crime",
    "drama",
    "fantasy",
    "horror",
    "mystery",
    "romance",
    "sci-fi",
    "thriller",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct GenreVocabulary {
    names: Vec<String>,
}

impl Default for GenreVocabulary {
    fn default() -> Self {
        GenreVocabulary {
            names: DEFAULT_GENRES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for GenreVocabulary {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        GenreVocabulary::new(names)
    }
}

impl From<GenreVocabulary> for Vec<String> {
    fn from(v: GenreVocabulary) -> Self {
        v.names
    }
}

impl GenreVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config(vec!["genre vocabulary is empty".into()]));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::Config(vec!["genre names must be non-empty".into()]));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Config(vec![format!("duplicate genre name {n:?}")]));
            }
        }
        Ok(GenreVocabulary { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Names of the positive entries of `labels`.
    pub fn decode(&self, labels: &[bool]) -> Vec<&str> {
        self.names
            .iter()
            .zip(labels)
            .filter(|(_, &on)| on)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// One poster: visual region embeddings, textual token embeddings, labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    /// `[visual_tokens, d_visual]`
    pub visual: Tensor,
    /// `[textual_tokens, d_textual]`
    pub textual: Tensor,
    pub labels: Vec<bool>,
}

impl EmbeddingRecord {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    fn check(&self) -> std::result::Result<(), String> {
        let k = self.positives();
        if k == 0 {
            return Err(format!("record {:?} has no positive label", self.id));
        }
        if k > MAX_LABELS {
            return Err(format!("record {:?} has {k} labels (max {MAX_LABELS})", self.id));
        }
        if !self.visual.all_finite() || !self.textual.all_finite() {
            return Err(format!("record {:?} has non-finite embedding values", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    visual_shape: [usize; 2],
    textual_shape: [usize; 2],
    genres: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    visual: Vec<Vec<f64>>,
    textual: Vec<Vec<f64>>,
    labels: Vec<String>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.last_dim()).map(<[f64]>::to_vec).collect()
}

/// Serializes a dataset to its text form.
pub fn write_dataset<W: Write>(out: &mut W, vocabulary: &GenreVocabulary, records: &[EmbeddingRecord]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("cannot write an empty dataset".into()))?;
    let shape2 = |t: &Tensor| -> Result<[usize; 2]> {
        match *t.shape() {
            [a, b] => Ok([a, b]),
            _ => Err(Error::Contract(format!("embedding must be rank 2, got {:?}", t.shape()))),
        }
    };
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        visual_shape: shape2(&first.visual)?,
        textual_shape: shape2(&first.textual)?,
        genres: vocabulary.names().to_vec(),
    };
    let io_err = |e| Error::io("<dataset output>", e);
    let json_err = |source| Error::Json {
        context: "serializing dataset".into(),
        source,
    };
    serde_json::to_writer(&mut *out, &header).map_err(json_err)?;
    out.write_all(b"\n").map_err(io_err)?;
    for r in records {
        if r.visual.shape() != first.visual.shape() || r.textual.shape() != first.textual.shape() {
            return Err(Error::Contract(format!("record {:?} has inconsistent widths", r.id)));
        }
        if r.labels.len() != vocabulary.len() {
            return Err(Error::Contract(format!("record {:?} label length mismatch", r.id)));
        }
        let line = RecordLine {
            id: r.id.clone(),
            visual: rows_of(&r.visual),
            textual: rows_of(&r.textual),
            labels: vocabulary.decode(&r.labels).into_iter().map(String::from).collect(),
        };
        serde_json::to_writer(&mut *out, &line).map_err(json_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, vocabulary: &GenreVocabulary, records: &[EmbeddingRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, vocabulary, records)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Embedding widths declared by a dataset header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetShape {
    pub visual: [usize; 2],
    pub textual: [usize; 2],
}

/// Loads and validates a dataset whose header vocabulary must equal `vocabulary`.
///
/// The whole file is rejected on the first violation.
pub fn load_dataset(path: &Path, vocabulary: &GenreVocabulary) -> Result<Vec<EmbeddingRecord>> {
    load_dataset_with_shape(path, vocabulary).map(|(_, r)| r)
}

pub fn load_dataset_with_shape(
    path: &Path,
    vocabulary: &GenreVocabulary,
) -> Result<(DatasetShape, Vec<EmbeddingRecord>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let fail = |line: usize, message: String| Error::Dataset {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(fail(1, "empty dataset".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| fail(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(fail(
            1,
            format!("unsupported format {:?} version {}", header.format, header.version),
        ));
    }
    if header.genres != vocabulary.names() {
        return Err(fail(
            1,
            format!("header genres {:?} differ from vocabulary {:?}", header.genres, vocabulary.names()),
        ));
    }
    if header.visual_shape.contains(&0) || header.textual_shape.contains(&0) {
        return Err(fail(1, "header widths must be positive".into()));
    }

    let mut ids = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| fail(n, format!("malformed record: {e}")))?;
        let to_tensor = |rows: Vec<Vec<f64>>, shape: [usize; 2], what: &str| -> Result<Tensor> {
            if rows.len() != shape[0] || rows.iter().any(|r| r.len() != shape[1]) {
                let got = [rows.len(), rows.first().map_or(0, Vec::len)];
                return Err(fail(
                    n,
                    format!("record {:?}: {what} embedding is {got:?}, header says {shape:?}", raw.id),
                ));
            }
            Tensor::new(shape.to_vec(), rows.into_iter().flatten().collect())
        };
        let visual = to_tensor(raw.visual, header.visual_shape, "visual")?;
        let textual = to_tensor(raw.textual, header.textual_shape, "textual")?;
        let mut labels = vec![false; vocabulary.len()];
        for name in &raw.labels {
            let j = vocabulary
                .index_of(name)
                .ok_or_else(|| fail(n, format!("record {:?}: unknown genre {name:?}", raw.id)))?;
            if labels[j] {
                return Err(fail(n, format!("record {:?}: genre {name:?} listed twice", raw.id)));
            }
            labels[j] = true;
        }
        let record = EmbeddingRecord {
            id: raw.id,
            visual,
            textual,
            labels,
        };
        record.check().map_err(|m| fail(n, m))?;
        if !ids.insert(record.id.clone()) {
            return Err(fail(n, format!("duplicate record id {:?}", record.id)));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(fail(1, "empty dataset: no records after header".into()));
    }
    let shape = DatasetShape {
        visual: header.visual_shape,
        textual: header.textual_shape,
    };
    Ok((shape, records))
}

/// Train/validation/test ratios and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, r) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if !(r > 0.0 && r < 1.0) {
                problems.push(format!("split ratio {name} must lie in (0, 1), got {r}"));
            }
        }
        if (self.train + self.valid + self.test - 1.0).abs() > 1e-9 {
            problems.push("split ratios must sum to 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Partition sizes for `n` records: validation and test take the floor of
    /// their share, training takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
        let share = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
        let (valid, test) = (share(self.valid), share(self.test));
        (n - valid - test, valid, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<EmbeddingRecord>,
    pub valid: Vec<EmbeddingRecord>,
    pub test: Vec<EmbeddingRecord>,
}

/// Seeded shuffle, then partition per [`SplitSpec::sizes`].
pub fn split(records: Vec<EmbeddingRecord>, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = records.len();
    let (n_train, n_valid, n_test) = spec.sizes(n);
    if n < 3 || n_valid == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::Contract(format!(
            "{n} records are too few for non-empty train/valid/test partitions"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut slots: Vec<Option<EmbeddingRecord>> = records.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<EmbeddingRecord> {
        order[range].iter().map(|&i| slots[i].take().expect("each index once")).collect()
    };
    let train = take(0..n_train);
    let valid = take(n_train..n_train + n_valid);
    let test = take(n_train + n_valid..n);
    Ok(Split { train, valid, test })
}

/// Stacked batch tensors: `[B, tokens, width]` inputs and `[B, M]` labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub visual: Tensor,
    pub textual: Tensor,
    pub labels: Tensor,
}

pub fn stack_batch(records: &[&EmbeddingRecord]) -> Result<Batch> {
    let visual: Vec<&Tensor> = records.iter().map(|r| &r.visual).collect();
    let textual: Vec<&Tensor> = records.iter().map(|r| &r.textual).collect();
    let m = records
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?
        .labels
        .len();
    let labels = records
        .iter()
        .flat_map(|r| r.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    Ok(Batch {
        visual: Tensor::stack(&visual)?,
        textual: Tensor::stack(&textual)?,
        labels: Tensor::new(vec![records.len(), m], labels)?,
    })
}

/// Knobs of the planted-signal generator.
///
/// Each genre owns one visual and one textual prototype vector. Every token
/// of a record's visual embedding is the sum of its genres' visual
/// prototypes plus independent noise; textual tokens likewise. A fixed
/// background vector per modality is added to every token, so a modality
/// without genre signal still looks like ordinary content rather than pure
/// noise.
/// A `text_only_fraction` of records carries no visual signal at all, only
/// the full textual sum; the remaining records show each genre's textual
/// prototype independently with probability `text_cue_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub n_records: usize,
    pub n_genres: usize,
    pub visual_tokens: usize,
    pub d_visual: usize,
    pub textual_tokens: usize,
    pub d_textual: usize,
    pub noise_sigma: f64,
    /// Relative weights of label arities 1, 2, 3, ...
    pub arity_weights: Vec<f64>,
    /// Relative genre-sampling weights; empty means uniform.
    pub genre_weights: Vec<f64>,
    pub text_only_fraction: f64,
    pub text_cue_rate: f64,
    /// Expected norm of each genre prototype vector.
    pub prototype_scale: f64,
    /// Expected norm of the genre-independent content vector present in
    /// every token of every record.
    pub background_scale: f64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            n_records: 2000,
            n_genres: 13,
            visual_tokens: 6,
            d_visual: 48,
            textual_tokens: 4,
            d_textual: 32,
            noise_sigma: 0.05,
            arity_weights: vec![0.5, 0.3, 0.2],
            genre_weights: Vec::new(),
            text_only_fraction: 0.3,
            text_cue_rate: 0.4,
            prototype_scale: 1.0,
            background_scale: 1.0,
        }
    }
}

impl GeneratorSettings {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        for (name, v) in [
            ("n_genres", self.n_genres),
            ("visual_tokens", self.visual_tokens),
            ("d_visual", self.d_visual),
            ("textual_tokens", self.textual_tokens),
            ("d_textual", self.d_textual),
        ] {
            if v == 0 {
                p.push(format!("generator {name} must be positive"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            p.push("noise_sigma must be >= 0".into());
        }
        if self.arity_weights.is_empty()
            || self.arity_weights.len() > 3
            || self.arity_weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || self.arity_weights.iter().sum::<f64>() <= 0.0
        {
            p.push("arity_weights must hold 1 to 3 non-negative weights with a positive sum".into());
        }
        if self.arity_weights.len() > self.n_genres {
            p.push("arity cannot exceed n_genres".into());
        }
        if !self.genre_weights.is_empty()
            && (self.genre_weights.len() != self.n_genres || self.genre_weights.iter().any(|w| w.is_nan() || *w <= 0.0))
        {
            p.push("genre_weights must be empty or hold n_genres positive weights".into());
        }
        for (name, v) in [
            ("text_only_fraction", self.text_only_fraction),
            ("text_cue_rate", self.text_cue_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                p.push(format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("prototype_scale", self.prototype_scale),
            ("background_scale", self.background_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("{name} must be >= 0"));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    fn genre_weights_or_uniform(&self) -> Vec<f64> {
        if self.genre_weights.is_empty() {
            vec![1.0; self.n_genres]
        } else {
            self.genre_weights.clone()
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates `n` records with planted genre signal; fully determined by `seed`.
pub fn generate_synthetic(
    n: usize,
    settings: &GeneratorSettings,
    vocabulary: &GenreVocabulary,
    seed: u64,
) -> Result<Vec<EmbeddingRecord>> {
    settings.validate()?;
    if n == 0 {
        return Err(Error::Contract("generate_synthetic needs n >= 1".into()));
    }
    if settings.n_genres != vocabulary.len() {
        return Err(Error::Config(vec![format!(
            "generator has {} genres but the vocabulary has {}",
            settings.n_genres,
            vocabulary.len()
        )]));
    }
    let s = settings;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_v = 1.0 / (s.d_visual as f64).sqrt();
    let unit_t = 1.0 / (s.d_textual as f64).sqrt();
    let visual_protos: Vec<Vec<f64>> = (0..s.n_genres)
        .map(|_| gaussian_matrix(&mut rng, 1, s.d_visual, s.prototype_scale * unit_v))
        .collect();
    let textual_protos: Vec<Vec<f64>> = (0..s.n_genres)
        .map(|_| gaussian_matrix(&mut rng, 1, s.d_textual, s.prototype_scale * unit_t))
        .collect();
    let visual_background = gaussian_matrix(&mut rng, 1, s.d_visual, s.background_scale * unit_v);
    let textual_background = gaussian_matrix(&mut rng, 1, s.d_textual, s.background_scale * unit_t);

    let arity = WeightedIndex::new(&s.arity_weights).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let genre_weights = s.genre_weights_or_uniform();

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let k = arity.sample(&mut rng) + 1;
        let mut genres = sample_without_replacement(&mut rng, &genre_weights, k);
        genres.sort_unstable();
        let text_only = rng.random_bool(s.text_only_fraction);

        let mut visual = gaussian_matrix(&mut rng, s.visual_tokens, s.d_visual, s.noise_sigma);
        let mut textual = gaussian_matrix(&mut rng, s.textual_tokens, s.d_textual, s.noise_sigma);
        add_to_every_row(&mut visual, &visual_background);
        add_to_every_row(&mut textual, &textual_background);
        for &g in &genres {
            let cue = text_only || rng.random_bool(s.text_cue_rate);
            if !text_only {
                add_to_every_row(&mut visual, &visual_protos[g]);
            }
            if cue {
                add_to_every_row(&mut textual, &textual_protos[g]);
            }
        }
        let mut labels = vec![false; s.n_genres];
        for g in genres {
            labels[g] = true;
        }
        records.push(EmbeddingRecord {
            id: format!("synth-{i:06}"),
            visual: Tensor::new(vec![s.visual_tokens, s.d_visual], visual)?,
            textual: Tensor::new(vec![s.textual_tokens, s.d_textual], textual)?,
            labels,
        });
    }
    Ok(records)
}

fn add_to_every_row(matrix: &mut [f64], row: &[f64]) {
    for chunk in matrix.chunks_mut(row.len()) {
        for (m, r) in chunk.iter_mut().zip(row) {
            *m += r;
        }
    }
}

/// Sequential weighted draws without replacement, returned in draw order.
fn sample_without_replacement(rng: &mut ChaCha8Rng, weights: &[f64], k: usize) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = w.iter().rposition(|&x| x > 0.0).expect("positive weight remains");
        for (i, &x) in w.iter().enumerate() {
            if x > 0.0 && u < x {
                pick = i;
                break;
            }
            u -= x;
        }
        out.push(pick);
        w[pick] = 0.0;
    }
    out
}

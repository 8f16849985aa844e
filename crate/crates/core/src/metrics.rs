//! Multi-label evaluation: F1 and balanced accuracy under macro, micro,
//! weighted and samples averaging, hamming loss, top-genre hit ratio, and
//! per-genre precision/recall/F1/balanced accuracy/specificity.
//!
//! Conventions:
//! * a rate whose denominator is zero is 0;
//! * a class with no positive ground-truth labels has F1 and balanced
//!   accuracy 0 and is flagged with `zero_support`;
//! * the hit-ratio argmax breaks ties toward the lowest class index.
//!
//! Reported F1/BA/P/R/Sp values are percentages; hamming loss and hit ratio
//! are fractions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::GenreVocabulary;
use crate::error::{Error, Result};
use crate::loss::quantize;

type Field = (&'static str, fn(&GenreMetrics) -> f64);

/// Ground truth, thresholded predictions and raw scores for `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    n_classes: usize,
    y_true: Vec<Vec<bool>>,
    y_pred: Vec<Vec<bool>>,
    scores: Vec<Vec<f64>>,
}

impl PredictionSet {
    pub fn new(y_true: Vec<Vec<bool>>, y_pred: Vec<Vec<bool>>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let n_classes = y_true.first().map_or(0, Vec::len);
        if n_classes == 0 {
            return Err(Error::Contract("prediction set needs at least one sample and one class".into()));
        }
        if y_pred.len() != y_true.len() || scores.len() != y_true.len() {
            return Err(Error::shape(
                "prediction set",
                &[y_true.len(), n_classes],
                &[y_pred.len(), scores.len()],
            ));
        }
        for (i, ((t, p), s)) in y_true.iter().zip(&y_pred).zip(&scores).enumerate() {
            if t.len() != n_classes || p.len() != n_classes || s.len() != n_classes {
                return Err(Error::Contract(format!("sample {i} has inconsistent class count")));
            }
        }
        Ok(PredictionSet {
            n_classes,
            y_true,
            y_pred,
            scores,
        })
    }

    /// Thresholds `scores` strictly above `tau` to form predictions.
    pub fn from_scores(y_true: Vec<Vec<bool>>, scores: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        let y_pred = scores.iter().map(|s| quantize(s, tau)).collect();
        Self::new(y_true, y_pred, scores)
    }

    pub fn n_samples(&self) -> usize {
        self.y_true.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn y_true(&self) -> &[Vec<bool>] {
        &self.y_true
    }

    pub fn y_pred(&self) -> &[Vec<bool>] {
        &self.y_pred
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    fn record(&mut self, truth: bool, pred: bool) {
        match (truth, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn balanced_accuracy(&self) -> f64 {
        (self.recall() + self.specificity()) / 2.0
    }
}

/// One-vs-rest counts for `class` over all samples.
pub fn confusion_counts(preds: &PredictionSet, class: usize) -> Result<Confusion> {
    if class >= preds.n_classes {
        return Err(Error::Contract(format!(
            "class index {class} out of range for {} classes",
            preds.n_classes
        )));
    }
    let mut c = Confusion::default();
    for (t, p) in preds.y_true.iter().zip(&preds.y_pred) {
        c.record(t[class], p[class]);
    }
    Ok(c)
}

/// Totals pooled over every class.
pub fn pooled_counts(preds: &PredictionSet) -> Confusion {
    let mut c = Confusion::default();
    for (t, p) in preds.y_true.iter().zip(&preds.y_pred) {
        for (&ti, &pi) in t.iter().zip(p) {
            c.record(ti, pi);
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub specificity: f64,
    pub support: usize,
    pub zero_support: bool,
}

impl GenreMetrics {
    fn from_confusion(c: &Confusion) -> Self {
        let zero_support = c.support() == 0;
        GenreMetrics {
            precision: 100.0 * c.precision(),
            recall: 100.0 * c.recall(),
            f1: if zero_support { 0.0 } else { 100.0 * c.f1() },
            balanced_accuracy: if zero_support { 0.0 } else { 100.0 * c.balanced_accuracy() },
            specificity: 100.0 * c.specificity(),
            support: c.support(),
            zero_support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1_macro: f64,
    pub ba_macro: f64,
    pub f1_micro: f64,
    pub ba_micro: f64,
    pub f1_weighted: f64,
    pub ba_weighted: f64,
    pub f1_samples: f64,
    pub ba_samples: f64,
    pub hamming_loss: f64,
    pub hit_ratio: f64,
    pub per_genre: Vec<GenreMetrics>,
}

/// Index of the highest score, lowest index on ties.
pub fn top_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose top-scored class is a true class.
pub fn hit_ratio(preds: &PredictionSet) -> f64 {
    let hits = preds
        .scores
        .iter()
        .zip(&preds.y_true)
        .filter(|(s, t)| t[top_class(s)])
        .count();
    ratio(hits, preds.n_samples())
}

pub fn hamming_loss(preds: &PredictionSet) -> f64 {
    let c = pooled_counts(preds);
    ratio(c.fp + c.fn_, c.total())
}

pub fn aggregate_metrics(preds: &PredictionSet) -> Result<MetricsReport> {
    let m = preds.n_classes;
    let per_class: Vec<Confusion> = (0..m).map(|j| confusion_counts(preds, j)).collect::<Result<_>>()?;
    let per_genre: Vec<GenreMetrics> = per_class.iter().map(GenreMetrics::from_confusion).collect();

    let f1_macro = per_genre.iter().map(|g| g.f1).sum::<f64>() / m as f64;
    let ba_macro = per_genre.iter().map(|g| g.balanced_accuracy).sum::<f64>() / m as f64;

    let pooled = pooled_counts(preds);

    let total_support: usize = per_genre.iter().map(|g| g.support).sum();
    let weighted = |f: fn(&GenreMetrics) -> f64| {
        if total_support == 0 {
            0.0
        } else {
            per_genre.iter().map(|g| g.support as f64 * f(g)).sum::<f64>() / total_support as f64
        }
    };

    let mut f1_samples = 0.0;
    let mut ba_samples = 0.0;
    for (t, p) in preds.y_true.iter().zip(&preds.y_pred) {
        let mut c = Confusion::default();
        for (&ti, &pi) in t.iter().zip(p) {
            c.record(ti, pi);
        }
        f1_samples += c.f1();
        ba_samples += c.balanced_accuracy();
    }
    let n = preds.n_samples() as f64;

    Ok(MetricsReport {
        f1_macro,
        ba_macro,
        f1_micro: 100.0 * pooled.f1(),
        ba_micro: 100.0 * pooled.balanced_accuracy(),
        f1_weighted: weighted(|g| g.f1),
        ba_weighted: weighted(|g| g.balanced_accuracy),
        f1_samples: 100.0 * f1_samples / n,
        ba_samples: 100.0 * ba_samples / n,
        hamming_loss: ratio(pooled.fp + pooled.fn_, pooled.total()),
        hit_ratio: hit_ratio(preds),
        per_genre,
    })
}

/// Aggregate figures published for the full model on the IMDb poster corpus
/// (percentages, except hamming loss). Used only as a comparison row.
pub const IMDB_REFERENCE: [(&str, f64); 10] = [
    ("F_m", 68.23),
    ("BA_m", 79.79),
    ("F_mu", 72.34),
    ("BA_mu", 82.38),
    ("F_w", 72.09),
    ("BA_w", 80.69),
    ("F_s", 71.58),
    ("BA_s", 82.73),
    ("HL", 0.1205),
    ("Hit", 87.55),
];

impl MetricsReport {
    /// The ten aggregate values in table column order; hit ratio as a percentage.
    pub fn aggregate_row(&self) -> [f64; 10] {
        [
            self.f1_macro,
            self.ba_macro,
            self.f1_micro,
            self.ba_micro,
            self.f1_weighted,
            self.ba_weighted,
            self.f1_samples,
            self.ba_samples,
            self.hamming_loss,
            100.0 * self.hit_ratio,
        ]
    }

    /// Plain-text aggregate table; each `(label, report)` becomes a row.
    pub fn comparison_table(rows: &[(&str, &MetricsReport)], include_reference: bool) -> String {
        let width = rows
            .iter()
            .map(|(l, _)| l.len())
            .chain(std::iter::once(24))
            .max()
            .unwrap_or(24);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Model");
        for (name, _) in IMDB_REFERENCE {
            let _ = write!(out, " {name:>8}");
        }
        out.push('\n');
        let mut line = |label: &str, values: [f64; 10]| {
            let _ = write!(out, "{label:<width$}");
            for (i, v) in values.iter().enumerate() {
                if i == 8 {
                    let _ = write!(out, " {v:>8.4}");
                } else {
                    let _ = write!(out, " {v:>8.2}");
                }
            }
            out.push('\n');
        };
        for (label, report) in rows {
            line(label, report.aggregate_row());
        }
        if include_reference {
            line("IMDb reference (full)", IMDB_REFERENCE.map(|(_, v)| v));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreRow {
    pub genre: String,
    #[serde(flatten)]
    pub metrics: GenreMetrics,
}

/// Per-genre table with columns BA, F, P, R, Sp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreTable {
    pub rows: Vec<GenreRow>,
}

pub fn genre_table(preds: &PredictionSet, vocabulary: &GenreVocabulary) -> Result<GenreTable> {
    if vocabulary.len() != preds.n_classes {
        return Err(Error::Contract(format!(
            "vocabulary has {} genres but predictions have {} classes",
            vocabulary.len(),
            preds.n_classes
        )));
    }
    let rows = vocabulary
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            Ok(GenreRow {
                genre: name.clone(),
                metrics: GenreMetrics::from_confusion(&confusion_counts(preds, j)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(GenreTable { rows })
}

impl GenreTable {
    /// Sorts genres by balanced accuracy, highest first; stable on ties.
    pub fn sort_by_balanced_accuracy(&mut self) {
        self.rows
            .sort_by(|a, b| b.metrics.balanced_accuracy.total_cmp(&a.metrics.balanced_accuracy));
    }

    /// Genres as columns, metrics as rows, two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<4}", "");
        for r in &self.rows {
            let _ = write!(out, " {:>10}", r.genre);
        }
        out.push('\n');
        let fields: [Field; 5] = [
            ("BA", |m| m.balanced_accuracy),
            ("F", |m| m.f1),
            ("P", |m| m.precision),
            ("R", |m| m.recall),
            ("Sp", |m| m.specificity),
        ];
        for (label, get) in fields {
            let _ = write!(out, "{label:<4}");
            for r in &self.rows {
                let _ = write!(out, " {:>10.2}", get(&r.metrics));
            }
            out.push('\n');
        }
        let flagged: Vec<&str> = self
            .rows
            .iter()
            .filter(|r| r.metrics.zero_support)
            .map(|r| r.genre.as_str())
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "zero support: {}", flagged.join(", "));
        }
        out
    }
}

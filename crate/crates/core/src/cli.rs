//! Run configuration and the pipeline commands behind the `posterfuse` binary.
//!
//! Every command takes a resolved [`RunConfig`]. Resolution order is built-in
//! defaults, then the TOML file, then [`Overrides`] from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_synthetic, load_dataset_with_shape, save_dataset, split, DatasetShape, EmbeddingRecord,
    GeneratorSettings, GenreVocabulary, Split, SplitSpec,
};
use crate::error::{Error, Result};
use crate::loss::quantize;
use crate::metrics::{genre_table, top_class, MetricsReport};
use crate::model::checkpoint;
use crate::model::{InputModality, ModelConfig, ModelParams};
use crate::train::{evaluate, score_records, train, History, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Derives an independent sub-seed for a named purpose.
///
/// The result fits in 63 bits so it survives a TOML round trip.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a command needs. `split.seed` and `train.shuffle_seed` are
/// always derived from `seed`; values given for them in a file are replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub genres: GenreVocabulary,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub generator: GeneratorSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            seed: 0,
            genres: GenreVocabulary::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            generator: GeneratorSettings::default(),
            paths: Paths::default(),
        };
        c.derive_seeds();
        c
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub disable_mcam: bool,
    pub disable_smsam: bool,
    pub depth_smsam: Option<usize>,
    pub tau: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        c.derive_seeds();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(p) => Error::Config(p.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    /// Defaults, then `file` if given, then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.apply(overrides);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.disable_mcam {
            self.model.enable_mcam = false;
        }
        if o.disable_smsam {
            self.model.enable_smsam = false;
        }
        if let Some(l) = o.depth_smsam {
            self.model.depth_smsam = l;
        }
        if let Some(t) = o.tau {
            self.train.tau = t;
        }
        if let Some(p) = &o.out {
            self.paths.out = Some(p.clone());
        }
        self.derive_seeds();
    }

    fn derive_seeds(&mut self) {
        self.split.seed = sub_seed(self.seed, "split");
        self.train.shuffle_seed = sub_seed(self.seed, "shuffle");
    }

    pub fn data_seed(&self) -> u64 {
        sub_seed(self.seed, "data")
    }

    pub fn init_seed(&self) -> u64 {
        sub_seed(self.seed, "init")
    }

    /// Collects every violated constraint across all sections.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut take = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Config(p) => problems.extend(p),
                    other => problems.push(other.to_string()),
                }
            }
        };
        take(self.model.validate());
        take(self.train.validate());
        take(self.split.validate());
        take(self.generator.validate());
        if self.genres.len() != self.model.n_genres {
            problems.push(format!(
                "vocabulary has {} genres but model.n_genres is {}",
                self.genres.len(),
                self.model.n_genres
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is TOML-representable")
    }

    /// Refuses generator widths that the model could not consume.
    pub fn check_generator_matches_model(&self) -> Result<()> {
        let g = &self.generator;
        let m = &self.model;
        let pairs = [
            ("visual_tokens", g.visual_tokens, m.visual_tokens),
            ("d_visual / d_visual_in", g.d_visual, m.d_visual_in),
            ("textual_tokens", g.textual_tokens, m.textual_tokens),
            ("d_textual / d_textual_in", g.d_textual, m.d_textual_in),
            ("n_genres", g.n_genres, m.n_genres),
        ];
        let problems: Vec<String> = pairs
            .iter()
            .filter(|(_, a, b)| a != b)
            .map(|(name, a, b)| format!("generator {name} = {a} but model expects {b}"))
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

fn check_dataset_matches_model(shape: &DatasetShape, model: &ModelConfig) -> Result<()> {
    let want = DatasetShape {
        visual: [model.visual_tokens, model.d_visual_in],
        textual: [model.textual_tokens, model.d_textual_in],
    };
    if *shape != want {
        return Err(Error::Config(vec![format!(
            "dataset widths visual {:?} textual {:?} do not match model visual {:?} textual {:?}",
            shape.visual, shape.textual, want.visual, want.textual
        )]));
    }
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(vec![format!("no {what} path given")]))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_pretty_json(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "serializing report".into(),
        source,
    })
}

/// Machine-readable report envelope shared by every command.
#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn emit_report<T: Serialize>(
    dir: &Path,
    stem: &str,
    command: &'static str,
    config: &RunConfig,
    body: T,
    table: &str,
) -> Result<(PathBuf, PathBuf)> {
    let envelope = Envelope {
        tool: "posterfuse",
        version: VERSION,
        command,
        config,
        body,
    };
    let json_path = dir.join(format!("{stem}.json"));
    let text_path = dir.join(format!("{stem}.txt"));
    write_text(&json_path, &to_pretty_json(&envelope)?)?;
    let mut text = format!("posterfuse {VERSION} {command}\n\n{table}\n# effective configuration\n");
    for line in config.to_toml().lines() {
        let _ = writeln!(text, "# {line}");
    }
    write_text(&text_path, &text)?;
    Ok((json_path, text_path))
}

/// Writes a synthetic dataset; returns the number of records.
pub fn cmd_gen_synth(config: &RunConfig, out: &Path) -> Result<usize> {
    config.validate()?;
    config.check_generator_matches_model()?;
    let records = generate_synthetic(
        config.generator.n_records,
        &config.generator,
        &config.genres,
        config.data_seed(),
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_dataset(out, &config.genres, &records)?;
    Ok(records.len())
}

fn load_for_model(path: &Path, config: &RunConfig) -> Result<Vec<EmbeddingRecord>> {
    let (shape, records) = load_dataset_with_shape(path, &config.genres)?;
    check_dataset_matches_model(&shape, &config.model)?;
    Ok(records)
}

/// Result of one training run evaluated on the test partition.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub parameter_count: usize,
    pub history: History,
    pub test: MetricsReport,
    pub checkpoint: PathBuf,
}

/// Trains one model on an existing split.
pub fn train_on_split(config: &RunConfig, data: &Split) -> Result<(ModelParams, History, MetricsReport)> {
    let init = ModelParams::init(&config.model, config.init_seed())?;
    let outcome = train(init, &data.train, &data.valid, &config.train)?;
    let (_, test) = evaluate(&outcome.params, &data.test, config.train.tau)?;
    Ok((outcome.params, outcome.history, test))
}

/// Splits the dataset, trains, writes checkpoint, history and report into
/// the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let dataset = require(&config.paths.dataset, "dataset")?;
    let out = require(&config.paths.out, "output")?;
    let records = load_for_model(dataset, config)?;
    let data = split(records, &config.split)?;
    let (params, history, test) = train_on_split(config, &data)?;

    let ckpt = out.join("checkpoint.json");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    checkpoint::save(&ckpt, &params, config.init_seed())?;
    write_text(&out.join("history.tsv"), &history.to_log())?;

    let summary = TrainSummary {
        parameter_count: params.count(),
        history,
        test,
        checkpoint: ckpt,
    };
    let mut table = MetricsReport::comparison_table(&[("test", &summary.test)], true);
    let _ = writeln!(
        table,
        "\nparameters {}  best epoch {} of {}",
        summary.parameter_count,
        summary.history.best_epoch,
        summary.history.epochs.len()
    );
    emit_report(out, "train_report", "train", config, &summary, &table)?;
    Ok(summary)
}

fn load_checkpoint_for(path: &Path, config: &RunConfig) -> Result<ModelParams> {
    let ckpt = checkpoint::load(path)?;
    if ckpt.params.config().n_genres != config.genres.len() {
        return Err(Error::Config(vec![format!(
            "checkpoint predicts {} genres, vocabulary has {}",
            ckpt.params.config().n_genres,
            config.genres.len()
        )]));
    }
    Ok(ckpt.params)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub records: usize,
    pub tau: f64,
    pub metrics: MetricsReport,
}

/// Evaluates a checkpoint on every record of a dataset; writes
/// `evaluation.json` and `evaluation.txt` into the output directory.
pub fn cmd_evaluate(config: &RunConfig, checkpoint_path: &Path, dataset: &Path) -> Result<EvaluationReport> {
    config.validate()?;
    let out = require(&config.paths.out, "output")?;
    let params = load_checkpoint_for(checkpoint_path, config)?;
    let mut cfg = config.clone();
    cfg.model = params.config().clone();
    let records = load_for_model(dataset, &cfg)?;
    let (preds, metrics) = evaluate(&params, &records, cfg.train.tau)?;
    let mut genres = genre_table(&preds, &cfg.genres)?;
    genres.sort_by_balanced_accuracy();
    let table = format!(
        "{}\n{}",
        MetricsReport::comparison_table(&[("evaluation", &metrics)], true),
        genres.to_text()
    );
    let report = EvaluationReport {
        records: records.len(),
        tau: cfg.train.tau,
        metrics,
    };
    emit_report(out, "evaluation", "evaluate", &cfg, &report, &table)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionLine {
    pub id: String,
    pub scores: Vec<f64>,
    /// Genres above the threshold, highest confidence first.
    pub genres: Vec<String>,
    /// Highest-confidence genre, ties to the lowest index.
    pub top: String,
}

/// Scores every record; one [`PredictionLine`] per record.
pub fn cmd_predict(config: &RunConfig, checkpoint_path: &Path, dataset: &Path) -> Result<Vec<PredictionLine>> {
    config.validate()?;
    let params = load_checkpoint_for(checkpoint_path, config)?;
    let mut cfg = config.clone();
    cfg.model = params.config().clone();
    let records = load_for_model(dataset, &cfg)?;
    let scores = score_records(&params, &records)?;
    let names = cfg.genres.names();
    let lines = records
        .iter()
        .zip(scores)
        .map(|(r, s)| {
            let on = quantize(&s, cfg.train.tau);
            let mut picked: Vec<usize> = (0..s.len()).filter(|&j| on[j]).collect();
            picked.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            PredictionLine {
                id: r.id.clone(),
                top: names[top_class(&s)].clone(),
                genres: picked.into_iter().map(|j| names[j].clone()).collect(),
                scores: s,
            }
        })
        .collect();
    Ok(lines)
}

/// Predictions as JSON lines.
pub fn predictions_to_jsonl(lines: &[PredictionLine]) -> Result<String> {
    let mut s = String::new();
    for l in lines {
        let json = serde_json::to_string(l).map_err(|source| Error::Json {
            context: "serializing prediction".into(),
            source,
        })?;
        s.push_str(&json);
        s.push('\n');
    }
    Ok(s)
}

/// One architecture in the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

/// The module grid {full, -SMSAM, -MCAM (L), -MCAM (L=1), L=1, -both}
/// followed by the two single-modality runs.
pub fn ablation_variants(base: &ModelConfig) -> Vec<Variant> {
    let with = |name: &str, f: &dyn Fn(&mut ModelConfig)| {
        let mut m = base.clone();
        f(&mut m);
        Variant {
            name: name.to_string(),
            model: m,
        }
    };
    let depth = base.depth_smsam;
    vec![
        with("full", &|_| {}),
        with("-SMSAM", &|m| m.enable_smsam = false),
        with(&format!("-MCAM (L={depth})"), &|m| m.enable_mcam = false),
        with("-MCAM (L=1)", &|m| {
            m.enable_mcam = false;
            m.depth_smsam = 1;
        }),
        with("L=1", &|m| m.depth_smsam = 1),
        with("-MCAM -SMSAM", &|m| {
            m.enable_mcam = false;
            m.enable_smsam = false;
        }),
        with("image only", &|m| m.input_modality = InputModality::VisualOnly),
        with("text only", &|m| m.input_modality = InputModality::TextualOnly),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub parameter_count: usize,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

/// Trains every variant on the same split with the same seeds.
pub fn run_ablation(config: &RunConfig, data: &Split, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            let mut cfg = config.clone();
            cfg.model = v.model.clone();
            let (params, history, test) = train_on_split(&cfg, data)?;
            Ok(AblationRow {
                variant: v.name.clone(),
                parameter_count: params.count(),
                best_epoch: history.best_epoch,
                test,
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let pairs: Vec<(&str, &MetricsReport)> = rows.iter().map(|r| (r.variant.as_str(), &r.test)).collect();
    let mut s = MetricsReport::comparison_table(&pairs, false);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{:<24} parameters {:>8}  best epoch {}", r.variant, r.parameter_count, r.best_epoch);
    }
    s
}

#[derive(Debug, Serialize)]
struct AblationBody<'a> {
    rows: &'a [AblationRow],
}

/// Runs the full ablation grid and writes `ablation.json` / `ablation.txt`.
pub fn cmd_ablate(config: &RunConfig) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let dataset = require(&config.paths.dataset, "dataset")?;
    let out = require(&config.paths.out, "output")?;
    let records = load_for_model(dataset, config)?;
    let data = split(records, &config.split)?;
    let rows = run_ablation(config, &data, &ablation_variants(&config.model))?;
    emit_report(out, "ablation", "ablate", config, AblationBody { rows: &rows }, &ablation_table(&rows))?;
    Ok(rows)
}

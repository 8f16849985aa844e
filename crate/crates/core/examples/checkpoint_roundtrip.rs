//! Briefly trains a tiny model, saves a checkpoint, reloads it and checks the
//! predictions are bit-identical.
//!
//! cargo run --example checkpoint_roundtrip

use posterfuse::dataset::{generate_synthetic, GenreVocabulary, GeneratorSettings};
use posterfuse::model::{checkpoint, ModelConfig, ModelParams};
use posterfuse::train::{score_records, train, TrainConfig};

fn main() -> posterfuse::Result<()> {
    let model = ModelConfig::tiny();
    let genres = GenreVocabulary::new((0..model.n_genres).map(|j| format!("genre{j}")).collect())?;
    let settings = GeneratorSettings {
        n_genres: model.n_genres,
        visual_tokens: model.visual_tokens,
        d_visual: model.d_visual_in,
        textual_tokens: model.textual_tokens,
        d_textual: model.d_textual_in,
        ..GeneratorSettings::default()
    };
    let records = generate_synthetic(120, &settings, &genres, 3)?;
    let (tr, va) = records.split_at(100);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let outcome = train(ModelParams::init(&model, 5)?, tr, va, &cfg)?;
    println!("trained {} epochs, best {}", outcome.history.epochs.len(), outcome.history.best_epoch);

    let path = std::env::temp_dir().join("posterfuse-tiny-checkpoint.json");
    checkpoint::save(&path, &outcome.params, 5)?;
    let loaded = checkpoint::load(&path)?;
    let before = score_records(&outcome.params, va)?;
    let after = score_records(&loaded.params, va)?;
    let identical = before.iter().flatten().zip(after.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("checkpoint {} ({} parameters), predictions identical: {identical}", path.display(), loaded.params.count());
    Ok(())
}

//! Runs the fusion model forward on random embeddings and prints the genre
//! confidences, with and without each attention module.
//!
//! cargo run --example fusion_forward

use posterfuse::dataset::GenreVocabulary;
use posterfuse::model::{parameter_count, predict, ModelConfig, ModelParams};
use posterfuse::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> posterfuse::Result<()> {
    let config = ModelConfig::default();
    let genres = GenreVocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let visual = random(vec![2, config.visual_tokens, config.d_visual_in])?;
    let textual = random(vec![2, config.textual_tokens, config.d_textual_in])?;

    for (name, mcam, smsam) in [("full", true, true), ("-MCAM", false, true), ("-SMSAM", true, false)] {
        let c = ModelConfig {
            enable_mcam: mcam,
            enable_smsam: smsam,
            ..config.clone()
        };
        let params = ModelParams::init(&c, 7)?;
        let scores = predict(&params, &visual, &textual)?;
        println!("{name}: {} parameters", parameter_count(&c)?);
        for (b, row) in scores.data().chunks(c.n_genres).enumerate() {
            let top = row
                .iter()
                .zip(genres.names())
                .map(|(s, g)| format!("{g} {s:.3}"))
                .take(4)
                .collect::<Vec<_>>()
                .join(", ");
            println!("  poster {b}: {top}, ...");
        }
    }
    Ok(())
}

//! Computes the aggregate metric row and the per-genre table for a small
//! hand-written prediction set.
//!
//! cargo run --example metrics_report

use posterfuse::dataset::GenreVocabulary;
use posterfuse::metrics::{aggregate_metrics, genre_table, MetricsReport, PredictionSet};

fn main() -> posterfuse::Result<()> {
    let genres = GenreVocabulary::new(["action", "comedy", "drama", "horror"].map(String::from).to_vec())?;
    let y_true = vec![
        vec![true, false, true, false],
        vec![false, true, false, false],
        vec![false, false, true, true],
        vec![true, true, false, false],
        vec![false, false, false, true],
    ];
    let scores = vec![
        vec![0.91, 0.12, 0.64, 0.05],
        vec![0.30, 0.72, 0.55, 0.10],
        vec![0.08, 0.20, 0.49, 0.88],
        vec![0.77, 0.41, 0.15, 0.02],
        vec![0.12, 0.05, 0.61, 0.70],
    ];
    let preds = PredictionSet::from_scores(y_true, scores, 0.5)?;
    let report = aggregate_metrics(&preds)?;
    print!("{}", MetricsReport::comparison_table(&[("example", &report)], true));

    let mut table = genre_table(&preds, &genres)?;
    table.sort_by_balanced_accuracy();
    println!("\n{}", table.to_text());
    Ok(())
}

//! Trains the full model on a planted-signal dataset with the default
//! optimizer settings and reports test metrics.
//!
//! cargo run --release --example train_synthetic -- [records] [seed]

use std::time::Instant;

use posterfuse::cli::RunConfig;
use posterfuse::dataset::{generate_synthetic, split};
use posterfuse::metrics::MetricsReport;
use posterfuse::model::ModelParams;
use posterfuse::train::{evaluate, train_with_observer};

fn main() -> posterfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(2000, |s| s.parse().expect("record count"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let mut config = RunConfig::default();
    config.apply(&posterfuse::cli::Overrides {
        seed: Some(seed),
        ..Default::default()
    });
    let records = generate_synthetic(n, &config.generator, &config.genres, config.data_seed())?;
    let data = split(records, &config.split)?;
    println!(
        "train {} / valid {} / test {} records",
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );

    let params = ModelParams::init(&config.model, config.init_seed())?;
    println!("{} parameters", params.count());
    let start = Instant::now();
    let outcome = train_with_observer(params, &data.train, &data.valid, &config.train, |e| {
        println!(
            "epoch {:>3}  train {:.5}  valid {:.5}  valid macro-F1 {:6.2}  ({:.1}s)",
            e.epoch,
            e.train_cost,
            e.valid_cost,
            e.valid_macro_f1,
            start.elapsed().as_secs_f64()
        );
    })?;
    let (_, report) = evaluate(&outcome.params, &data.test, config.train.tau)?;
    println!("\nbest epoch {}", outcome.history.best_epoch);
    print!("{}", MetricsReport::comparison_table(&[("test", &report)], true));
    Ok(())
}

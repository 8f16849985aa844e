//! Trains the module and modality ablation grid on one synthetic dataset
//! and prints the comparison table. Slow with the default model: expect a
//! few minutes per variant in release mode.
//!
//! cargo run --release --example ablation_sweep -- [records] [seed]

use posterfuse::cli::{ablation_table, ablation_variants, run_ablation, Overrides, RunConfig};
use posterfuse::dataset::{generate_synthetic, split};

fn main() -> posterfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(2000, |s| s.parse().expect("record count"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let mut config = RunConfig::default();
    config.apply(&Overrides {
        seed: Some(seed),
        ..Overrides::default()
    });
    let records = generate_synthetic(n, &config.generator, &config.genres, config.data_seed())?;
    let data = split(records, &config.split)?;
    let variants = ablation_variants(&config.model);
    for v in &variants {
        eprintln!("{}", v.name);
    }
    let rows = run_ablation(&config, &data, &variants)?;
    print!("{}", ablation_table(&rows));
    Ok(())
}

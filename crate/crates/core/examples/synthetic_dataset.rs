//! Generates a planted-signal dataset, writes it, reads it back, and splits
//! it.
//!
//! cargo run --example synthetic_dataset -- [records] [path]

use posterfuse::dataset::{generate_synthetic, load_dataset, save_dataset, split, GenreVocabulary, GeneratorSettings, SplitSpec};

fn main() -> posterfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(500, |s| s.parse().expect("record count"));
    let path = args.next().map_or_else(|| std::env::temp_dir().join("posterfuse-synthetic.jsonl"), Into::into);

    let genres = GenreVocabulary::default();
    let settings = GeneratorSettings::default();
    let records = generate_synthetic(n, &settings, &genres, 42)?;
    save_dataset(&path, &genres, &records)?;
    let back = load_dataset(&path, &genres)?;
    assert_eq!(back, records);
    println!("wrote and reloaded {} records at {}", back.len(), path.display());

    let mut counts = vec![0usize; genres.len()];
    for r in &back {
        for (c, &y) in counts.iter_mut().zip(&r.labels) {
            *c += usize::from(y);
        }
    }
    for (g, c) in genres.names().iter().zip(&counts) {
        println!("  {g:<10} {c}");
    }
    let first = &back[0];
    println!("{}: {:?}, visual {:?}, textual {:?}", first.id, genres.decode(&first.labels), first.visual.shape(), first.textual.shape());

    let parts = split(back, &SplitSpec::default())?;
    println!("split {} / {} / {}", parts.train.len(), parts.valid.len(), parts.test.len());
    Ok(())
}

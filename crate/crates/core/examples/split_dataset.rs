//! Stratified train/test split of a synthetic manifest, once by fraction and
//! once with explicit per-class counts.
//!
//! cargo run --example split_dataset

use xraynet::data::{generate_synthetic, stratified_split, Split, SplitSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("xrn-split");
    std::fs::create_dir_all(&dir)?;
    let ds = generate_synthetic(&dir, 10, 32, 3, 1)?;

    let by_fraction = stratified_split(&ds.manifest, &SplitSpec::new(0.8, 7))?;
    println!("fraction 0.8");
    println!("  train {:?}", by_fraction.split_histogram(Split::Train));
    println!("  test  {:?}", by_fraction.split_histogram(Split::Test));

    let spec = SplitSpec {
        per_class_override: Some(vec![
            ("covid".into(), 6, 4),
            ("normal".into(), 9, 1),
            ("pneumonia".into(), 5, 5),
        ]),
        ..SplitSpec::new(0.8, 7)
    };
    let by_count = stratified_split(&ds.manifest, &spec)?;
    println!("explicit counts");
    println!("  train {:?}", by_count.split_histogram(Split::Train));
    println!("  test  {:?}", by_count.split_histogram(Split::Test));

    let path = dir.join("split.csv");
    by_count.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

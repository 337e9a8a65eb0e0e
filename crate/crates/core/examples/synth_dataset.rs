//! Writes a small synthetic dataset and prints its class histogram and the
//! first few feature boxes.
//!
//! cargo run --example synth_dataset -- [out_dir] [per_class] [size]

use xraynet::data::{generate_synthetic, load_features};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("xrn-synth"), Into::into);
    let per_class = args.next().map_or(10, |s| s.parse().expect("per_class"));
    let size = args.next().map_or(64, |s| s.parse().expect("size"));

    std::fs::create_dir_all(&out)?;
    let ds = generate_synthetic(&out, per_class, size, 3, 0)?;
    println!("manifest: {}", ds.manifest_path.display());
    for (name, n) in ds.manifest.histogram() {
        println!("{name:>10}: {n}");
    }
    for f in load_features(&ds.features_path)?.iter().take(3) {
        println!("{} class {} box {:?}", f.path, f.class_index, f.feature_box);
    }
    Ok(())
}

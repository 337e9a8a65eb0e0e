//! Overfits a mini W-Net on a small synthetic three-class set and prints
//! the per-epoch mean loss and training accuracy.
//!
//! cargo run --release --example train_wnet -- [epochs] [lr] [seed]

use xraynet::arch::{Arch, ModelConfig, ModelGraph};
use xraynet::data::{generate_synthetic, load_samples};
use xraynet::train::{train, TrainConfig};

fn main() -> xraynet::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(30, |s| s.parse().expect("epochs"));
    let lr = args.next().map_or(1e-3, |s| s.parse().expect("lr"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let dir = std::env::temp_dir().join("xrn-train-wnet");
    std::fs::create_dir_all(&dir).map_err(|e| xraynet::error::Error::Io { path: dir.clone(), source: e })?;
    let ds = generate_synthetic(&dir, 6, 64, 3, seed)?;
    let mut samples = load_samples(&ds.manifest, None, 64)?;
    samples.truncate(16);

    let mut model = ModelGraph::<f32>::new(&ModelConfig { seed, ..ModelConfig::mini(Arch::Wnet, 3) })?;
    println!("parameters: {}", model.num_parameters());
    let cfg = TrainConfig { epochs, learning_rate: lr, seed, record_time: true, ..TrainConfig::default() };
    let log = train(&mut model, &samples, &cfg, |_| {})?;
    for e in 1..=epochs {
        let recs: Vec<_> = log.iter().filter(|r| r.epoch == e).collect();
        let mean = recs.iter().map(|r| r.loss).sum::<f64>() / recs.len() as f64;
        let last = recs.last().expect("one batch per epoch at least");
        println!("epoch {e:>3}  loss {mean:.5}  acc {:.3}  {} ms", last.running_accuracy, last.wall_millis);
    }
    Ok(())
}

//! Saves a mini U-Net, loads it back and checks the logits agree. Then
//! flips a header byte and shows the format error.
//!
//! cargo run --example checkpoint

use xraynet::arch::{Arch, ModelConfig, ModelGraph};
use xraynet::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use xraynet::tensor::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig::mini(Arch::Unet, 3);
    let model = ModelGraph::<f32>::new(&config)?;
    let path = std::env::temp_dir().join("xrn-example.ckpt");
    save_checkpoint(&model, &path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let loaded = load_checkpoint(&path)?;
    let s = config.input_size;
    let image = Rng::new(1).fill_uniform::<f32>(&[config.input_channels, s, s], 0.0, 1.0)?;
    println!("logits before: {:?}", model.logits(&image)?.data());
    println!("logits after:  {:?}", loaded.logits(&image)?.data());

    let mut bytes = to_bytes(&model);
    bytes[0] ^= 0xff;
    match from_bytes(&bytes) {
        Ok(_) => println!("corrupted checkpoint loaded?"),
        Err(e) => println!("corrupted magic: {e} (exit code {})", e.exit_code()),
    }
    Ok(())
}

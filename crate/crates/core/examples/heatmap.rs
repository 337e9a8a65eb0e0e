//! Trains a mini U-Net briefly on synthetic data, then writes Grad-CAM and
//! occlusion overlays for the first image and reports how much of each map
//! falls inside the known feature box.
//!
//! cargo run --release --example heatmap -- [epochs]

use xraynet::arch::{Arch, ModelConfig, ModelGraph};
use xraynet::data::{generate_synthetic, load_features, load_samples};
use xraynet::explain::{gradcam, occlusion_map, render_heatmap, spearman, top_decile_mass_in_box};
use xraynet::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(15, |s| s.parse().expect("epochs"));
    let dir = std::env::temp_dir().join("xrn-heatmap");
    std::fs::create_dir_all(&dir)?;
    let ds = generate_synthetic(&dir, 4, 64, 3, 0)?;
    let samples = load_samples(&ds.manifest, None, 64)?;
    let features = load_features(&ds.features_path)?;

    let mut model = ModelGraph::<f32>::new(&ModelConfig::mini(Arch::Unet, 3))?;
    train(&mut model, &samples, &TrainConfig { epochs, ..TrainConfig::default() }, |_| {})?;

    let sample = &samples[0];
    let feature = &features[0];
    let cam = gradcam(&model, &sample.image, sample.label_index)?;
    let occ = occlusion_map(&model, &sample.image, sample.label_index, 16, 4, None)?;
    render_heatmap(&cam, &sample.image, dir.join("gradcam.png"))?;
    render_heatmap(&occ, &sample.image, dir.join("occlusion.png"))?;

    println!("feature box {:?}", feature.feature_box);
    println!("gradcam top-decile mass in box:   {:.3}", top_decile_mass_in_box(&cam, feature.feature_box));
    println!("occlusion top-decile mass in box: {:.3}", top_decile_mass_in_box(&occ, feature.feature_box));
    let a: Vec<f64> = cam.values.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = occ.values.data().iter().map(|&v| v as f64).collect();
    println!("spearman(gradcam, occlusion): {:.3}", spearman(&a, &b));
    println!("overlays in {}", dir.display());
    Ok(())
}

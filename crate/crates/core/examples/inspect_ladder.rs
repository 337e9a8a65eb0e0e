//! Prints the encoder ladder, parameter inventory size and parameter count
//! of the full-size U-Net and W-Net.
//!
//! cargo run --example inspect_ladder -- [classes]

use xraynet::arch::{parameter_inventory, stage_shapes, Arch, ModelConfig};

fn main() {
    let classes = std::env::args().nth(1).map_or(2, |s| s.parse().expect("classes"));
    for arch in [Arch::Unet, Arch::Wnet] {
        let config = ModelConfig::paper(arch, classes);
        println!("{arch:?}");
        for (l, (c, h, w)) in stage_shapes(&config).into_iter().enumerate() {
            println!("  stage {l}: ({c}, {h}, {w})");
        }
        let inventory = parameter_inventory(&config);
        let params: usize = inventory.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        println!("  tensors: {}  parameters: {params}", inventory.len());
    }
}

//! Derives accuracy, precision, recall, specificity and F1 from the four
//! published confusion matrices.
//!
//! cargo run --example paper_metrics

use xraynet::metrics::{metrics_from_confusion, round4, ConfusionMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let two = names(&["covid", "normal"]);
    let three = names(&["covid", "normal", "pneumonia"]);
    let cases = [
        ("U-Net, 2 classes", vec![vec![38, 1], vec![0, 81]], &two),
        ("W-Net, 2 classes", vec![vec![39, 0], vec![1, 80]], &two),
        ("U-Net, 3 classes", vec![vec![40, 0, 0], vec![0, 77, 3], vec![1, 2, 77]], &three),
        ("W-Net, 3 classes", vec![vec![40, 0, 0], vec![0, 78, 2], vec![0, 3, 77]], &three),
    ];
    for (title, counts, classes) in cases {
        let cm = ConfusionMatrix::new(counts, classes.clone())?;
        let m = metrics_from_confusion(&cm)?;
        println!("{title}: accuracy {}", round4(m.accuracy));
        print!("{}", cm.render());
        for (name, c) in classes.iter().zip(&m.classes) {
            println!(
                "  {name:>10}  precision {}  recall {}  specificity {}  f1 {}",
                round4(c.precision),
                round4(c.recall),
                round4(c.specificity),
                round4(c.f1)
            );
        }
    }
    Ok(())
}

//! One-vs-rest ROC curves and AUC for a handful of hand-written
//! probability rows.
//!
//! cargo run --example roc_auc

use xraynet::metrics::{one_vs_rest_roc, round4};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let names: Vec<String> = ["covid", "normal", "pneumonia"].iter().map(|s| s.to_string()).collect();
    let probabilities = vec![
        vec![0.80, 0.15, 0.05],
        vec![0.55, 0.30, 0.15],
        vec![0.20, 0.70, 0.10],
        vec![0.40, 0.45, 0.15],
        vec![0.10, 0.30, 0.60],
        vec![0.30, 0.20, 0.50],
        vec![0.35, 0.25, 0.40],
    ];
    let actual = [0, 0, 1, 0, 2, 2, 1];
    let (curves, warnings) = one_vs_rest_roc(&probabilities, &actual, &names)?;
    for curve in &curves {
        println!("{}: auc {}", curve.class_name, round4(curve.auc));
        for (fpr, tpr) in &curve.points {
            println!("  fpr {fpr:.3}  tpr {tpr:.3}");
        }
    }
    for w in warnings {
        println!("warning: {w}");
    }
    Ok(())
}

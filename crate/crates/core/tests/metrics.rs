mod common;

use common::*;
use proptest::prelude::*;
use xraynet::error::Error;
use xraynet::metrics::*;
use xraynet::tensor::Rng;

#[test]
fn published_tables_reproduce_from_confusion_matrices() {
    let pairs = paper_metric_pairs();
    assert_eq!(pairs.len(), 4 + 8 + 8 + 12 + 12);
    for (what, got, want) in pairs {
        assert!((got - want).abs() <= PAPER_TOL, "{what}: computed {got}, published {want}");
    }
}

#[test]
fn exact_fractions() {
    let cm = ConfusionMatrix::new(matrix(&UNET_3), class_names(3)).unwrap();
    let m = metrics_from_confusion(&cm).unwrap();
    assert_eq!(m.accuracy, 194.0 / 200.0);
    assert_eq!(m.classes[0].specificity, 159.0 / 160.0);
    assert_eq!(round4(m.classes[0].specificity), "0.9938");
    assert_eq!(round4(metrics_from_confusion(&ConfusionMatrix::new(matrix(&UNET_2), class_names(2)).unwrap()).unwrap().accuracy), "0.9917");
}

#[test]
fn zero_denominators_warn() {
    let cm = ConfusionMatrix::new(vec![vec![5, 0], vec![3, 0]], class_names(2)).unwrap();
    let m = metrics_from_confusion(&cm).unwrap();
    assert_eq!(m.classes[1].precision, 0.0);
    assert_eq!(m.classes[1].f1, 0.0);
    assert!(!m.warnings.is_empty());
}

#[test]
fn confusion_orientation_is_actual_by_predicted() {
    let names = class_names(2);
    let cm = confusion_from_predictions(&[0, 0, 1], &[0, 1, 1], &names).unwrap();
    assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
    let text = cm.render();
    assert!(text.contains("actual") && text.contains("predicted"), "{text}");
}

fn random_matrix(rng: &mut Rng, k: usize) -> Vec<Vec<u64>> {
    (0..k)
        .map(|i| (0..k).map(|j| rng.below(if i == j { 100 } else { 10 }) + u64::from(i == j)).collect())
        .collect()
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total_and_binary_duality(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = Rng::new(seed);
        let counts = random_matrix(&mut rng, k);
        let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let cm = ConfusionMatrix::new(counts.clone(), names).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        prop_assert_eq!(m.accuracy, cm.trace() as f64 / cm.total() as f64);
        if k == 2 {
            prop_assert_eq!(m.classes[0].recall, m.classes[1].specificity);
            prop_assert_eq!(m.classes[1].recall, m.classes[0].specificity);
        }
    }

    #[test]
    fn roc_is_monotone_and_anchored(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = Rng::new(seed);
        let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 10.0).floor() / 10.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
        labels[0] = true;
        labels[1] = false;
        let roc = roc_curve(&scores, &labels, "c").unwrap();
        prop_assert_eq!(roc.points.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.points.last().copied(), Some((1.0, 1.0)));
        for w in roc.points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert!((roc.auc - mann_whitney(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn auc_examples() {
    let perfect = roc_curve(&[0.9, 0.9, 0.1, 0.1], &[true, true, false, false], "c").unwrap();
    assert_eq!(perfect.auc, 1.0);
    let scores = [0.8, 0.4, 0.6, 0.2];
    let labels = [true, true, false, false];
    let roc = roc_curve(&scores, &labels, "c").unwrap();
    assert!((roc.auc - 0.75).abs() < 1e-12);
    assert!((mann_whitney(&scores, &labels) - 0.75).abs() < 1e-12);
    assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true], "c"), Err(Error::Usage(_))));
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let mut rng = Rng::new(31);
    let scores: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
    let mut labels: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
    rng.shuffle(&mut labels);
    let auc = roc_curve(&scores, &labels, "c").unwrap().auc;
    assert!((0.45..=0.55).contains(&auc), "{auc}");
}

fn sample_report() -> MetricsReport {
    let names = class_names(2);
    let cm = ConfusionMatrix::new(matrix(&UNET_2), names.clone()).unwrap();
    let probs: Vec<Vec<f64>> = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.2, 0.8]];
    let (roc, _) = one_vs_rest_roc(&probs, &[0, 1, 0, 1], &names).unwrap();
    MetricsReport::new("unet", &cm, roc).unwrap()
}

#[test]
fn report_round_trip_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (jp, rp) = (dir.path().join("r.json"), dir.path().join("roc.csv"));
    let report = sample_report();
    write_report(&report, &jp, &rp).unwrap();
    let back = read_report(&jp, Some(&rp)).unwrap();
    assert_eq!(back.classes.len(), report.classes.len());
    assert!((back.accuracy - report.accuracy).abs() <= 1e-12);
    for (a, b) in back.roc.iter().zip(&report.roc) {
        assert_eq!(a.class_name, b.class_name);
        assert!((a.auc - b.auc).abs() <= 1e-12);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p.0 - q.0).abs() <= 1e-12 && (p.1 - q.1).abs() <= 1e-12);
        }
    }
    assert_eq!(back.to_json(), report.to_json());

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&jp).unwrap()).unwrap();
    assert_eq!(v["schemaVersion"], 1);
    assert!(v["accuracy"].is_f64());
    for c in v["classes"].as_array().unwrap() {
        for field in ["name", "precision", "recall", "specificity", "f1"] {
            assert!(c.get(field).is_some(), "missing {field}");
        }
    }
    assert_eq!(v["confusion"], serde_json::json!([[38, 1], [0, 81]]));
    assert!(v["auc"]["covid"].is_f64());
    assert!(std::fs::read_to_string(&rp).unwrap().starts_with("class,fpr,tpr\n"));
}

#[test]
fn report_to_empty_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = write_report(&sample_report(), "", dir.path().join("roc.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn rendered_table_rounds_to_published_precision() {
    let text = sample_report().render_table();
    assert!(text.contains("accuracy 0.9917"), "{text}");
    assert!(text.contains("0.9744"), "{text}");
}

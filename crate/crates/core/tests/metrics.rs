use fewshot::data::ClassGroup;
use fewshot::harness::{compute_metrics, render_jsonl, render_text, MetricsReport};
use fewshot::Error;
use proptest::prelude::*;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

#[test]
fn perfect_predictions() {
    let y = [0, 1, 2, 2, 1, 0];
    let m = compute_metrics(&y, &y, &names(3), &[ClassGroup::Base, ClassGroup::Base, ClassGroup::FewShot]).unwrap();
    assert_eq!(m.balanced_accuracy, 1.0);
    for c in &m.per_class {
        assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
    }
    assert_eq!(m.base.unwrap().f1, 1.0);
    assert_eq!(m.few_shot.unwrap().recall, 1.0);
}

#[test]
fn hand_computed_confusion() {
    // [[8, 2], [4, 6]]
    let mut t = Vec::new();
    let mut p = Vec::new();
    for (truth, pred, n) in [(0, 0, 8), (0, 1, 2), (1, 0, 4), (1, 1, 6)] {
        t.extend(std::iter::repeat(truth).take(n));
        p.extend(std::iter::repeat(pred).take(n));
    }
    let m = compute_metrics(&t, &p, &names(2), &[ClassGroup::Base, ClassGroup::FewShot]).unwrap();
    assert_eq!(m.confusion, vec![vec![8, 2], vec![4, 6]]);
    assert!((m.per_class[0].recall - 0.8).abs() < 1e-15);
    assert!((m.per_class[1].recall - 0.6).abs() < 1e-15);
    assert!((m.balanced_accuracy - 0.7).abs() < 1e-15);
    assert!((m.per_class[0].precision - 8.0 / 12.0).abs() < 1e-15);
    assert!((m.per_class[1].precision - 6.0 / 8.0).abs() < 1e-15);
    let f1 = 2.0 * (8.0 / 12.0) * 0.8 / (8.0 / 12.0 + 0.8);
    assert!((m.per_class[0].f1 - f1).abs() < 1e-15);
}

#[test]
fn never_predicted_class_has_zero_precision() {
    let m = compute_metrics(&[0, 1, 1], &[0, 0, 0], &names(2), &[ClassGroup::Base; 2]).unwrap();
    assert_eq!(m.per_class[1].precision, 0.0);
    assert_eq!(m.per_class[1].f1, 0.0);
    assert!(m.few_shot.is_none());
}

#[test]
fn invalid_input() {
    assert!(matches!(compute_metrics(&[], &[], &names(2), &[ClassGroup::Base; 2]), Err(Error::Contract(_))));
    assert!(matches!(compute_metrics(&[0], &[2], &names(2), &[ClassGroup::Base; 2]), Err(Error::Contract(_))));
}

#[test]
fn reports_render_stably() {
    let m = compute_metrics(&[0, 1], &[0, 0], &names(2), &[ClassGroup::Base, ClassGroup::FewShot]).unwrap();
    let r = MetricsReport {
        experiment: "exp1".into(),
        model: "triplet".into(),
        seed: 1,
        metrics: m,
        diagnostics: vec![("gate_tau".into(), -3.5)],
        config: serde_json::json!({"k": 1}),
    };
    let text = render_text(std::slice::from_ref(&r));
    assert!(text.contains("exp1"));
    assert!(text.contains("gate_tau = -3.5"));
    let jsonl = render_jsonl(&[r.clone(), r.clone()]).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    let back: MetricsReport = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(back, r);
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_consistent(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let groups = [ClassGroup::Base, ClassGroup::Base, ClassGroup::FewShot, ClassGroup::FewShot];
        let m = compute_metrics(&t, &p, &names(4), &groups).unwrap();
        for c in &m.per_class {
            for v in [c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        prop_assert!((m.balanced_accuracy - m.balanced_accuracy_from_confusion()).abs() < 1e-15);
        let mean_recall = m.per_class.iter().map(|c| c.recall).sum::<f64>() / 4.0;
        prop_assert!((m.balanced_accuracy - mean_recall).abs() < 1e-15);
    }
}

//! Volume-level majority voting over per-slice predictions.

/// Plurality label of `labels`. Labels tied on count are separated by their
/// summed per-slice scores (`scores[s][class]`), then by the smaller index.
pub fn majority_vote(labels: &[usize], scores: &[Vec<f64>]) -> usize {
    assert!(!labels.is_empty(), "majority vote over no slices");
    assert_eq!(labels.len(), scores.len(), "one score row per slice");
    let n_classes = scores
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0)
        .max(labels.iter().max().map_or(0, |m| m + 1));
    let mut counts = vec![0usize; n_classes];
    let mut mass = vec![0.0f64; n_classes];
    for (&l, row) in labels.iter().zip(scores) {
        counts[l] += 1;
        for (m, s) in mass.iter_mut().zip(row) {
            *m += s;
        }
    }
    let mut best = 0;
    for c in 1..n_classes {
        if counts[c] > counts[best] || (counts[c] == counts[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    best
}

//! Shared oracles for the integration tests.

use std::collections::BTreeSet;

/// GAP by counting: each item's rank is the number of pooled items that
/// precede it, with no sorting involved.
pub fn brute_gap(truth: &[BTreeSet<u32>], scores: &[Vec<Option<f64>>], k: usize) -> f64 {
    let precedes_in_video = |a: (u32, f64), b: (u32, f64)| a.1 > b.1 || (a.1 == b.1 && a.0 < b.0);
    let mut pooled = Vec::new();
    for (v, scores) in scores.iter().enumerate() {
        let items: Vec<(u32, f64)> = scores
            .iter()
            .enumerate()
            .filter_map(|(cls, s)| s.map(|s| (cls as u32, s)))
            .collect();
        for &it in &items {
            let ahead = items.iter().filter(|&&o| precedes_in_video(o, it)).count();
            if ahead < k {
                pooled.push((v, it.0, it.1, truth[v].contains(&it.0)));
            }
        }
    }
    let precedes = |a: &(usize, u32, f64, bool), b: &(usize, u32, f64, bool)| {
        a.2 > b.2 || (a.2 == b.2 && (a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)))
    };
    let positives: usize = truth.iter().map(BTreeSet::len).sum();
    if positives == 0 {
        return 0.0;
    }
    let mut gap = 0.0;
    for it in pooled.iter().filter(|it| it.3) {
        let rank = 1 + pooled.iter().filter(|o| precedes(o, it)).count();
        let hits = 1 + pooled.iter().filter(|o| o.3 && precedes(o, it)).count();
        gap += hits as f64 / rank as f64 / positives as f64;
    }
    gap
}

//! Global average precision over pooled top-k predictions.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::LabelSet;
use crate::data::FrameExample;
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 20;

/// Per-video `(class id, confidence)` lists keyed by video id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    videos: BTreeMap<String, Vec<(u32, f64)>>,
}

/// Descending confidence, then ascending class id.
pub(crate) fn by_confidence(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the list for `video_id`. Class ids must be unique
    /// and confidences finite.
    pub fn insert(&mut self, video_id: impl Into<String>, mut preds: Vec<(u32, f64)>) -> Result<()> {
        let video_id = video_id.into();
        preds.sort_by(by_confidence);
        let mut seen = std::collections::BTreeSet::new();
        for &(c, conf) in &preds {
            if !seen.insert(c) {
                return Err(Error::Input(format!("video {video_id}: class {c} predicted twice")));
            }
            if !conf.is_finite() {
                return Err(Error::Input(format!(
                    "video {video_id}: class {c} has confidence {conf}"
                )));
            }
        }
        self.videos.insert(video_id, preds);
        Ok(())
    }

    /// Keeps the `k` highest scores of a dense score vector.
    pub fn insert_scores(&mut self, video_id: impl Into<String>, scores: &[f64], k: usize) -> Result<()> {
        let mut preds: Vec<(u32, f64)> = scores.iter().enumerate().map(|(c, s)| (c as u32, *s)).collect();
        preds.sort_by(by_confidence);
        preds.truncate(k);
        self.insert(video_id, preds)
    }

    pub fn get(&self, video_id: &str) -> Option<&[(u32, f64)]> {
        self.videos.get(video_id).map(Vec::as_slice)
    }

    /// Videos in ascending id order; each list sorted by descending confidence.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(u32, f64)])> {
        self.videos.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.videos.keys().map(String::as_str)
    }

    /// The same predictions with each list cut to its top `k`.
    pub fn top_k(&self, k: usize) -> PredictionSet {
        PredictionSet {
            videos: self
                .videos
                .iter()
                .map(|(id, p)| (id.clone(), p.iter().take(k).copied().collect()))
                .collect(),
        }
    }

    /// Applies `f` to every confidence.
    pub fn map_confidences(&self, f: impl Fn(f64) -> f64) -> PredictionSet {
        let mut out = PredictionSet::new();
        for (id, p) in &self.videos {
            let mapped = p.iter().map(|&(c, s)| (c, f(s))).collect();
            out.insert(id.clone(), mapped).expect("mapping preserves class ids");
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    videos: BTreeMap<String, LabelSet>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, video_id: impl Into<String>, labels: LabelSet) {
        self.videos.insert(video_id.into(), labels);
    }

    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a FrameExample>) -> Self {
        GroundTruth {
            videos: examples
                .into_iter()
                .map(|e| (e.video_id.clone(), e.labels.clone()))
                .collect(),
        }
    }

    pub fn get(&self, video_id: &str) -> Option<&LabelSet> {
        self.videos.get(video_id)
    }

    /// Number of (video, label) pairs.
    pub fn positives(&self) -> usize {
        self.videos.values().map(LabelSet::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub video_id: String,
    pub class: u32,
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: f64,
    pub k: usize,
    /// Retained predictions.
    pub n: usize,
    pub positives: usize,
    /// Globally sorted pooled predictions.
    pub ledger: Vec<LedgerEntry>,
}

impl GapReport {
    /// `sum_i p(i) Δr(i)` over the ledger.
    pub fn recompute(&self) -> f64 {
        gap_from_ledger(&self.ledger, self.positives)
    }
}

fn gap_from_ledger(ledger: &[LedgerEntry], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut gap = 0.0;
    for (i, e) in ledger.iter().enumerate() {
        if e.correct {
            hits += 1;
            gap += (hits as f64 / (i + 1) as f64) / positives as f64;
        }
    }
    gap
}

/// GAP@k: each video's top `k` predictions are pooled, sorted by
/// descending confidence (ties by video id, then class id), and scored as
/// `sum_i p(i) Δr(i)` with recall measured against every ground-truth pair.
pub fn gap_at_k(preds: &PredictionSet, truth: &GroundTruth, k: usize) -> Result<GapReport> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let mut ledger = Vec::new();
    for (video_id, list) in preds.iter() {
        let labels = truth
            .get(video_id)
            .ok_or_else(|| Error::Input(format!("predictions for unknown video `{video_id}`")))?;
        ledger.extend(list.iter().take(k).map(|&(class, confidence)| LedgerEntry {
            video_id: video_id.to_string(),
            class,
            confidence,
            correct: labels.contains(class),
        }));
    }
    ledger.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then(a.class.cmp(&b.class))
    });
    let positives = truth.positives();
    Ok(GapReport {
        gap: gap_from_ledger(&ledger, positives),
        k,
        n: ledger.len(),
        positives,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(entries: &[(&str, &[u32])]) -> GroundTruth {
        let mut t = GroundTruth::new();
        for (id, labels) in entries {
            t.insert(*id, LabelSet::new(labels.iter().copied()).unwrap());
        }
        t
    }

    #[test]
    fn hand_case_five_sixths() {
        let mut p = PredictionSet::new();
        p.insert("v", vec![(0, 0.9), (1, 0.8), (2, 0.7)]).unwrap();
        let r = gap_at_k(&p, &truth(&[("v", &[0, 2])]), 20).unwrap();
        assert!((r.gap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            r.ledger.iter().map(|e| e.correct).collect::<Vec<_>>(),
            vec![true, false, true]
        );
        assert_eq!(r.recompute(), r.gap);
    }

    #[test]
    fn perfect_retrieval_is_one() {
        let mut p = PredictionSet::new();
        p.insert("a", vec![(1, 1.0), (4, 1.0)]).unwrap();
        p.insert("b", vec![(0, 1.0)]).unwrap();
        let r = gap_at_k(&p, &truth(&[("a", &[1, 4]), ("b", &[0])]), 20).unwrap();
        assert!((r.gap - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unpredicted_positives_count_in_recall() {
        let mut p = PredictionSet::new();
        p.insert("a", vec![(1, 0.9)]).unwrap();
        let r = gap_at_k(&p, &truth(&[("a", &[1, 2]), ("b", &[3])]), 20).unwrap();
        assert!((r.gap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn top_k_is_applied_per_video() {
        let mut p = PredictionSet::new();
        p.insert_scores("a", &[0.1, 0.5, 0.4, 0.3], 4).unwrap();
        let r = gap_at_k(&p, &truth(&[("a", &[0])]), 2).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn errors() {
        let mut p = PredictionSet::new();
        p.insert("x", vec![(0, 0.5)]).unwrap();
        assert!(matches!(gap_at_k(&p, &truth(&[("y", &[0])]), 20), Err(Error::Input(_))));
        assert!(matches!(
            gap_at_k(&p, &truth(&[("x", &[0])]), 0),
            Err(Error::Parameter(_))
        ));
        assert!(p.insert("x", vec![(0, 0.5), (0, 0.2)]).is_err());
        assert!(p.insert("x", vec![(0, f64::NAN)]).is_err());
    }

    #[test]
    fn ties_break_by_class_then_video() {
        let mut p = PredictionSet::new();
        p.insert("b", vec![(3, 0.5), (1, 0.5)]).unwrap();
        p.insert("a", vec![(2, 0.5)]).unwrap();
        let r = gap_at_k(&p, &truth(&[("a", &[]), ("b", &[1])]), 20).unwrap();
        let order: Vec<(&str, u32)> = r.ledger.iter().map(|e| (e.video_id.as_str(), e.class)).collect();
        assert_eq!(order, vec![("a", 2), ("b", 1), ("b", 3)]);
        assert!((r.gap - 0.5).abs() < 1e-15);
    }
}

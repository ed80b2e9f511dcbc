//! GAP-weighted score averaging across models.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::{by_confidence, PredictionSet};

/// `α_i = gap_i / Σ gap_j`.
pub fn ensemble_weights(model_gaps: &[f64]) -> Result<Vec<f64>> {
    if model_gaps.is_empty() {
        return Err(Error::Input("ensemble needs at least one model".into()));
    }
    if let Some(g) = model_gaps.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::Input(format!(
            "model GAP {g} is not a finite non-negative number"
        )));
    }
    let total: f64 = model_gaps.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights("all model GAPs are zero".into()));
    }
    Ok(model_gaps.iter().map(|g| g / total).collect())
}

/// Per video and class the combined score is `Σ α_i S_i`, with a model that
/// did not predict the class contributing zero. Each video keeps its top `k`
/// classes (ties by ascending class id).
pub fn ensemble_combine(model_preds: &[PredictionSet], model_gaps: &[f64], k: usize) -> Result<PredictionSet> {
    if model_preds.len() != model_gaps.len() {
        return Err(Error::Input(format!(
            "{} prediction sets but {} GAP values",
            model_preds.len(),
            model_gaps.len()
        )));
    }
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let weights = ensemble_weights(model_gaps)?;
    let first = &model_preds[0];
    for (i, p) in model_preds.iter().enumerate().skip(1) {
        if !p.video_ids().eq(first.video_ids()) {
            return Err(Error::Input(format!(
                "model {i} covers a different set of videos than model 0"
            )));
        }
    }

    let mut out = PredictionSet::new();
    for video_id in first.video_ids() {
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for (p, w) in model_preds.iter().zip(&weights) {
            for &(class, s) in p.get(video_id).unwrap_or_default() {
                *scores.entry(class).or_insert(0.0) += w * s;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(by_confidence);
        ranked.truncate(k);
        out.insert(video_id, ranked)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(entries: &[(&str, &[(u32, f64)])]) -> PredictionSet {
        let mut p = PredictionSet::new();
        for (id, preds) in entries {
            p.insert(*id, preds.to_vec()).unwrap();
        }
        p
    }

    #[test]
    fn single_model_keeps_its_top_k() {
        let p = set(&[("a", &[(0, 0.1), (1, 0.9), (2, 0.5)]), ("b", &[(3, 0.2)])]);
        let out = ensemble_combine(std::slice::from_ref(&p), &[0.4], 2).unwrap();
        assert_eq!(out, p.top_k(2));
    }

    #[test]
    fn hand_weighted_example() {
        let a = set(&[("v", &[(7, 0.8)])]);
        let b = set(&[("v", &[(7, 0.4)])]);
        let w = ensemble_weights(&[0.6, 0.2]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let out = ensemble_combine(&[a, b], &[0.6, 0.2], 20).unwrap();
        assert!((out.get("v").unwrap()[0].1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn missing_class_counts_as_zero() {
        let a = set(&[("v", &[(1, 0.8), (2, 0.6)])]);
        let b = set(&[("v", &[(1, 0.4)])]);
        let out = ensemble_combine(&[a, b], &[0.5, 0.5], 20).unwrap();
        assert_eq!(out.get("v").unwrap(), &[(1, 0.6000000000000001), (2, 0.3)]);
    }

    #[test]
    fn identical_models_reproduce_scores() {
        let p = set(&[("v", &[(1, 0.3), (4, 0.7), (2, 0.1)])]);
        let out = ensemble_combine(&[p.clone(), p.clone(), p.clone()], &[0.2, 0.5, 0.9], 20).unwrap();
        for ((c1, s1), (c2, s2)) in out.get("v").unwrap().iter().zip(p.get("v").unwrap()) {
            assert_eq!(c1, c2);
            assert!((s1 - s2).abs() <= 1e-12);
        }
    }

    #[test]
    fn error_paths() {
        let p = set(&[("v", &[(1, 0.3)])]);
        let q = set(&[("w", &[(1, 0.3)])]);
        assert!(matches!(
            ensemble_combine(&[p.clone(), p.clone()], &[0.0, 0.0], 5),
            Err(Error::DegenerateWeights(_))
        ));
        assert!(matches!(
            ensemble_combine(&[p.clone(), q], &[0.5, 0.5], 5),
            Err(Error::Input(_))
        ));
        assert!(ensemble_combine(&[], &[], 5).is_err());
        assert!(ensemble_combine(std::slice::from_ref(&p), &[-0.1], 5).is_err());
        assert!(ensemble_combine(&[p], &[0.1, 0.2], 5).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let w = ensemble_weights(&[0.83, 0.79, 0.81, 0.70727]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

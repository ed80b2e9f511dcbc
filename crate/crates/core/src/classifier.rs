//! Sigmoid multi-label head and binary cross-entropy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sample_params, sigmoid, InitScheme, Matrix, Rng};
use crate::params::flat_param_set;

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` inside the loss.
pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct LabelSet(BTreeSet<u32>);

impl LabelSet {
    /// Rejects duplicate ids.
    pub fn new(ids: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for id in ids {
            if !set.insert(id) {
                return Err(Error::Input(format!("duplicate label {id}")));
            }
        }
        Ok(LabelSet(set))
    }

    pub fn contains(&self, id: u32) -> bool {
        self.0.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn max(&self) -> Option<u32> {
        self.0.last().copied()
    }
}

impl TryFrom<Vec<u32>> for LabelSet {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        LabelSet::new(v)
    }
}

impl From<LabelSet> for Vec<u32> {
    fn from(s: LabelSet) -> Self {
        s.0.into_iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

flat_param_set!(HeadParams { weight, bias });

impl HeadParams {
    pub fn init(num_classes: usize, rep_dim: usize, rng: &mut Rng) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Parameter("num_classes must be >= 1".into()));
        }
        Ok(HeadParams {
            weight: sample_params(num_classes, rep_dim, InitScheme::GlorotNormal, rng)?,
            bias: Matrix::zeros(num_classes, 1),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }
}

/// `sigmoid(W rep + b)`
pub fn predict_scores(rep: &[f64], p: &HeadParams) -> Result<Vec<f64>> {
    let mut logits = crate::numeric::affine(rep, &p.weight, p.bias.as_slice())?;
    logits.iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(logits)
}

fn targets(n: usize, truth: &LabelSet) -> Vec<f64> {
    (0..n)
        .map(|c| if truth.contains(c as u32) { 1.0 } else { 0.0 })
        .collect()
}

/// Mean per-class binary cross-entropy.
pub fn bce_loss(scores: &[f64], truth: &LabelSet) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::shape("at least one class score", "empty scores"));
    }
    if let Some(max) = truth.max() {
        if max as usize >= scores.len() {
            return Err(Error::Input(format!(
                "label {max} out of range for {} classes",
                scores.len()
            )));
        }
    }
    let mut total = 0.0;
    for (s, y) in scores.iter().zip(targets(scores.len(), truth)) {
        let s = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Numeric(format!("score {s} outside (0, 1)")));
        }
        total -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
    }
    Ok(total / scores.len() as f64)
}

/// `d bce / d logit` per class. Zero where the clamp is active.
pub fn bce_logit_gradient(scores: &[f64], truth: &LabelSet) -> Vec<f64> {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(targets(scores.len(), truth))
        .map(|(&s, y)| {
            if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s) {
                0.0
            } else {
                (s - y) / n
            }
        })
        .collect()
}

/// Adds head gradients for `dL/d logits` and returns `dL/d rep`.
pub fn head_backward(rep: &[f64], p: &HeadParams, grad_logits: &[f64], grads: &mut HeadParams) -> Vec<f64> {
    grads.weight.add_outer(grad_logits, rep);
    grads.bias.add_assign(grad_logits);
    let mut out = vec![0.0; rep.len()];
    p.weight.matvec_t_acc(grad_logits, &mut out);
    out
}

pub fn total_loss(bce: f64, align_loss: f64, lambda: f64) -> f64 {
    bce + lambda * align_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_from_seed;
    use rand::Rng as _;

    fn labels(ids: &[u32]) -> LabelSet {
        LabelSet::new(ids.iter().copied()).unwrap()
    }

    #[test]
    fn zero_head_scores_half() {
        let p = HeadParams {
            weight: Matrix::zeros(10, 8),
            bias: Matrix::zeros(10, 1),
        };
        assert_eq!(predict_scores(&[0.3; 8], &p).unwrap(), vec![0.5; 10]);
        assert!(predict_scores(&[0.3; 7], &p).is_err());
    }

    #[test]
    fn scores_match_affine_sigmoid() {
        let mut rng = rng_from_seed(1);
        let p = HeadParams::init(4, 3, &mut rng).unwrap();
        let rep: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = predict_scores(&rep, &p).unwrap();
        for c in 0..4 {
            let z: f64 = (0..3).map(|k| p.weight.get(c, k) * rep[k]).sum::<f64>() + p.bias.get(c, 0);
            assert!((s[c] - 1.0 / (1.0 + (-z).exp())).abs() <= 1e-12);
        }
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let l = bce_loss(&[0.5; 6], &labels(&[1, 4])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_saturated_correct_tends_to_zero() {
        let l = bce_loss(&[1.0 - 1e-15, 1e-15, 1.0], &labels(&[0, 2])).unwrap();
        assert!((0.0..1e-11).contains(&l));
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let mut rng = rng_from_seed(2);
        let scores: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..0.99)).collect();
        let truth = labels(&[0, 3, 8]);
        let mut want = 0.0;
        for (c, s) in scores.iter().enumerate() {
            want += if truth.contains(c as u32) {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            };
        }
        want /= 9.0;
        assert!((bce_loss(&scores, &truth).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn bce_rejects_nan_and_bad_labels() {
        assert!(matches!(bce_loss(&[f64::NAN], &labels(&[])), Err(Error::Numeric(_))));
        assert!(bce_loss(&[0.5, 0.5], &labels(&[2])).is_err());
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.3, 5.0, 0.0), 0.3);
        assert_eq!(total_loss(0.3, 0.0, 0.1), 0.3);
        assert!((total_loss(0.5, 2.0, 0.1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn label_set_rejects_duplicates() {
        assert!(LabelSet::new([1, 2, 1]).is_err());
        let s: LabelSet = serde_json::from_str("[3,1]").unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![1, 3]);
        assert!(serde_json::from_str::<LabelSet>("[3,3]").is_err());
    }

    #[test]
    fn scores_monotone_in_logits() {
        let mut p = HeadParams {
            weight: Matrix::zeros(1, 1),
            bias: Matrix::zeros(1, 1),
        };
        let mut prev = 0.0;
        for b in [-5.0, -1.0, 0.0, 0.5, 3.0] {
            p.bias.set(0, 0, b);
            let s = predict_scores(&[0.0], &p).unwrap()[0];
            assert!(s > prev);
            prev = s;
        }
    }
}

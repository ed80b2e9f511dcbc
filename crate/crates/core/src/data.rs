//! Video records and the synthetic planted-signal corpus.
//!
//! Each class owns two patterns `A_c`, `B_c` spanning both modalities and a
//! frame offset `p_c`. A video labelled `c` carries `A_c` in its early band
//! `[p_c, p_c + w)` and `B_c` in its late band `[T/2 + p_c, T/2 + p_c + w)`.
//! Some videos *not* labelled `c` carry a decoy with the two patterns
//! swapped. Decoys and true instances have identical frame means, so only
//! the temporal order separates them.

use rand::Rng as _;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::LabelSet;
use crate::error::{Error, Result};
use crate::numeric::{rng_from_seed, Matrix, Rng};

/// Tolerance for stored means against recomputed frame means.
pub const MEAN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameExample {
    pub video_id: String,
    pub labels: LabelSet,
    /// T x D_v
    pub visual: Matrix,
    /// T x D_a
    pub audio: Matrix,
    pub mean_visual: Vec<f64>,
    pub mean_audio: Vec<f64>,
}

impl FrameExample {
    /// Builds a record with the video-level means derived from the frames.
    pub fn new(video_id: impl Into<String>, labels: LabelSet, visual: Matrix, audio: Matrix) -> Result<Self> {
        let ex = FrameExample {
            video_id: video_id.into(),
            labels,
            mean_visual: visual.column_means(),
            mean_audio: audio.column_means(),
            visual,
            audio,
        };
        ex.validate(0)?;
        Ok(ex)
    }

    pub fn num_frames(&self) -> usize {
        self.visual.rows()
    }

    /// Frame counts agree, T >= 1, and the means match the frames.
    pub fn validate(&self, record: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::Validation { record, reason });
        if self.visual.rows() == 0 {
            return bad("video has no frames".into());
        }
        if self.visual.rows() != self.audio.rows() {
            return bad(format!(
                "{} visual frames but {} audio frames",
                self.visual.rows(),
                self.audio.rows()
            ));
        }
        for (name, mean, frames) in [
            ("mean_rgb", &self.mean_visual, &self.visual),
            ("mean_audio", &self.mean_audio, &self.audio),
        ] {
            if mean.len() != frames.cols() {
                return bad(format!(
                    "{name} has length {}, frames have width {}",
                    mean.len(),
                    frames.cols()
                ));
            }
            let want = frames.column_means();
            if let Some((i, (a, b))) = mean
                .iter()
                .zip(&want)
                .enumerate()
                .find(|(_, (a, b))| !((*a - *b).abs() <= MEAN_TOLERANCE))
            {
                return bad(format!("{name}[{i}] = {a} but frame mean is {b}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_classes: usize,
    /// Nominal frames per video.
    pub frames: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Leading records that form the training split; the rest are test.
    pub train_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<FrameExample>,
}

impl Dataset {
    pub fn train(&self) -> &[FrameExample] {
        &self.examples[..self.header.train_count.min(self.examples.len())]
    }

    pub fn test(&self) -> &[FrameExample] {
        &self.examples[self.header.train_count.min(self.examples.len())..]
    }

    /// Checks every record against the header.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.train_count > self.examples.len() {
            return Err(Error::Validation {
                record: self.examples.len(),
                reason: format!(
                    "header declares {} training records, file has {}",
                    h.train_count,
                    self.examples.len()
                ),
            });
        }
        for (i, ex) in self.examples.iter().enumerate() {
            let bad = |reason: String| Err(Error::Validation { record: i, reason });
            if ex.visual.cols() != h.visual_dim {
                return bad(format!(
                    "rgb width {} differs from header D_v {}",
                    ex.visual.cols(),
                    h.visual_dim
                ));
            }
            if ex.audio.cols() != h.audio_dim {
                return bad(format!(
                    "audio width {} differs from header D_a {}",
                    ex.audio.cols(),
                    h.audio_dim
                ));
            }
            if let Some(max) = ex.labels.max() {
                if max as usize >= h.num_classes {
                    return bad(format!("label {max} outside {} classes", h.num_classes));
                }
            }
            ex.validate(i)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_videos: usize,
    pub num_classes: usize,
    pub frames: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub labels_per_video: f64,
    pub seed: u64,
    pub signal_strength: f64,
    pub train_fraction: f64,
}

impl Default for DatasetSpec {
    /// 2000 train / 500 test videos, 10 classes, 20 frames, D_v = 16, D_a = 4.
    fn default() -> Self {
        DatasetSpec {
            num_videos: 2500,
            num_classes: 10,
            frames: 20,
            visual_dim: 16,
            audio_dim: 4,
            labels_per_video: 2.0,
            seed: 0,
            signal_strength: 1.0,
            train_fraction: 0.8,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("videos", self.num_videos),
            ("classes", self.num_classes),
            ("frames", self.frames),
            ("dv", self.visual_dim),
            ("da", self.audio_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be >= 1")));
        }
        let m = self.labels_per_video;
        if !(m >= 1.0 && m <= self.num_classes as f64) {
            return Err(Error::Parameter(format!(
                "labels per video must lie in [1, {}], got {m}",
                self.num_classes
            )));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::Parameter(format!(
                "signal strength must be >= 0, got {}",
                self.signal_strength
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "train fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

struct ClassSignature {
    early: Vec<f64>,
    late: Vec<f64>,
    offset: usize,
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let (c, t, dv, da) = (spec.num_classes, spec.frames, spec.visual_dim, spec.audio_dim);
    let half = t / 2;
    let width = (half / 2).max(1);

    let classes: Vec<ClassSignature> = (0..c)
        .map(|_| ClassSignature {
            early: normal_vec(&mut rng, dv + da),
            late: normal_vec(&mut rng, dv + da),
            offset: if half > width {
                rng.random_range(0..=half - width)
            } else {
                0
            },
        })
        .collect();

    let extra = if c > 1 {
        Some(
            Binomial::new((c - 1) as u64, (spec.labels_per_video - 1.0) / (c - 1) as f64)
                .map_err(|e| Error::Parameter(format!("label distribution: {e}")))?,
        )
    } else {
        None
    };
    let free = c as f64 - spec.labels_per_video;
    let decoy_rate = if free > 0.0 {
        (spec.labels_per_video / free).min(1.0)
    } else {
        0.0
    };

    let stamp = |frames: &mut Matrix, start: usize, pattern: &[f64], s: f64| {
        for f in start..(start + width).min(t) {
            for (v, p) in frames.row_mut(f).iter_mut().zip(pattern) {
                *v += s * p;
            }
        }
    };

    let mut examples = Vec::with_capacity(spec.num_videos);
    for idx in 0..spec.num_videos {
        let k = 1 + extra.as_ref().map_or(0, |b| b.sample(&mut rng) as usize);
        let mut pool: Vec<u32> = (0..c as u32).collect();
        let mut labels = Vec::with_capacity(k);
        for _ in 0..k {
            let j = rng.random_range(0..pool.len());
            labels.push(pool.swap_remove(j));
        }
        let decoys: Vec<u32> = pool.into_iter().filter(|_| rng.random::<f64>() < decoy_rate).collect();

        let noise = normal_vec(&mut rng, t * (dv + da));
        let mut frames = Matrix::from_vec(t, dv + da, noise)?;
        let s = spec.signal_strength;
        let late_start = |sig: &ClassSignature| if half > 0 { half + sig.offset } else { sig.offset };
        for &l in &labels {
            let sig = &classes[l as usize];
            stamp(&mut frames, sig.offset, &sig.early, s);
            stamp(&mut frames, late_start(sig), &sig.late, s);
        }
        for &d in &decoys {
            let sig = &classes[d as usize];
            stamp(&mut frames, sig.offset, &sig.late, s);
            stamp(&mut frames, late_start(sig), &sig.early, s);
        }

        let visual = frames.column_slice(0, dv);
        let audio = frames.column_slice(dv, dv + da);
        examples.push(FrameExample::new(
            format!("vid{idx:06}"),
            LabelSet::new(labels)?,
            visual,
            audio,
        )?);
    }

    let train_count = ((spec.num_videos as f64) * spec.train_fraction).round() as usize;
    Ok(Dataset {
        header: DatasetHeader {
            num_classes: c,
            frames: t,
            visual_dim: dv,
            audio_dim: da,
            train_count: train_count.clamp(1, spec.num_videos),
        },
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            num_videos: 200,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&DatasetSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_split_and_shapes() {
        let d = generate_synthetic(&DatasetSpec::default()).unwrap();
        assert_eq!(d.train().len(), 2000);
        assert_eq!(d.test().len(), 500);
        let ex = &d.examples[0];
        assert_eq!(ex.visual.shape(), (20, 16));
        assert_eq!(ex.audio.shape(), (20, 4));
        d.validate().unwrap();
    }

    #[test]
    fn mean_label_count_matches_spec() {
        let d = generate_synthetic(&DatasetSpec {
            num_videos: 4000,
            labels_per_video: 3.4,
            ..DatasetSpec::default()
        })
        .unwrap();
        let mean = d.examples.iter().map(|e| e.labels.len() as f64).sum::<f64>() / 4000.0;
        assert!((mean - 3.4).abs() < 0.1, "mean labels {mean}");
        assert!(d.examples.iter().all(|e| !e.labels.is_empty()));
    }

    #[test]
    fn infeasible_specs_rejected() {
        for spec in [
            DatasetSpec {
                labels_per_video: 11.0,
                ..small()
            },
            DatasetSpec {
                labels_per_video: 0.5,
                ..small()
            },
            DatasetSpec {
                num_classes: 0,
                ..small()
            },
            DatasetSpec { frames: 0, ..small() },
            DatasetSpec {
                signal_strength: -1.0,
                ..small()
            },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn single_class_and_single_frame_work() {
        let d = generate_synthetic(&DatasetSpec {
            num_videos: 5,
            num_classes: 1,
            frames: 1,
            labels_per_video: 1.0,
            ..DatasetSpec::default()
        })
        .unwrap();
        d.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_means() {
        let d = generate_synthetic(&small()).unwrap();
        let mut ex = d.examples[3].clone();
        ex.mean_audio[1] += 1e-6;
        assert!(matches!(ex.validate(3), Err(Error::Validation { record: 3, .. })));
    }
}

//! Full classifier: fusion, optional frame embedding, recurrent encoder,
//! pooling and the sigmoid head, with hand-written backpropagation.
//!
//! Without an encoder the model is the video-level logistic-regression
//! baseline: the head reads the fused per-video mean features directly.

use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_pool, attention_pool_backward, embed_frames, embed_frames_backward, last_states, last_states_backward,
    AttentionOutput, AttentionParams,
};
use crate::classifier::{bce_logit_gradient, bce_loss, head_backward, predict_scores, total_loss, HeadParams};
use crate::data::FrameExample;
use crate::encoder::{cap_frames, encode, encode_backward, EncoderConfig, EncoderParams, EncoderTrace};
use crate::error::{Error, Result};
use crate::fusion::{fuse, fuse_backward, fuse_frames, Fused, FusionConfig, FusionMode, FusionParams};
use crate::numeric::{rng_from_seed, Matrix};
use crate::params::ParamSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Width of the embedded frames; `None` keeps the fused width.
    pub embed_dim: Option<usize>,
    /// Width of `u_t`; `None` means the encoder output width.
    pub attn_dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub num_classes: usize,
    pub fusion: FusionConfig,
    /// `None` selects the video-level baseline.
    pub encoder: Option<EncoderConfig>,
    /// Attention pooling; otherwise final states are pooled.
    pub attention: Option<AttentionConfig>,
}

impl ModelConfig {
    /// Logistic regression on concatenated video-level means.
    pub fn video_level(visual_dim: usize, audio_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            visual_dim,
            audio_dim,
            num_classes,
            fusion: FusionConfig::default(),
            encoder: None,
            attention: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual_dim == 0 || self.audio_dim == 0 || self.num_classes == 0 {
            return Err(Error::Parameter(
                "visual_dim, audio_dim and num_classes must be >= 1".into(),
            ));
        }
        self.fusion.validate()?;
        if let Some(enc) = &self.encoder {
            enc.validate()?;
        } else if self.attention.is_some() {
            return Err(Error::Parameter("attention pooling needs a frame-level encoder".into()));
        }
        if let Some(a) = &self.attention {
            if a.embed_dim == Some(0) || a.attn_dim == Some(0) {
                return Err(Error::Parameter("attention dimensions must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Width of a fused frame.
    pub fn fused_dim(&self) -> usize {
        self.fusion.output_dim(self.visual_dim, self.audio_dim)
    }

    pub fn encoder_input_dim(&self) -> usize {
        match &self.attention {
            Some(a) => a.embed_dim.unwrap_or_else(|| self.fused_dim()),
            None => self.fused_dim(),
        }
    }

    /// Width of the vector the head reads.
    pub fn rep_dim(&self) -> usize {
        match &self.encoder {
            Some(enc) => enc.output_dim(),
            None => self.fused_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub fusion: FusionParams,
    pub attention: Option<AttentionParams>,
    pub encoder: Option<EncoderParams>,
    pub head: HeadParams,
}

impl ParamSet for ModelParams {
    fn named_params(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let p = |s: &str| crate::params::join(prefix, s);
        let mut out = self.fusion.named_params(&p("fusion"));
        if let Some(a) = &self.attention {
            out.extend(a.named_params(&p("attention")));
        }
        if let Some(e) = &self.encoder {
            out.extend(e.named_params(&p("encoder")));
        }
        out.extend(self.head.named_params(&p("head")));
        out
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let p = |s: &str| crate::params::join(prefix, s);
        let mut out = self.fusion.named_params_mut(&p("fusion"));
        if let Some(a) = &mut self.attention {
            out.extend(a.named_params_mut(&p("attention")));
        }
        if let Some(e) = &mut self.encoder {
            out.extend(e.named_params_mut(&p("encoder")));
        }
        out.extend(self.head.named_params_mut(&p("head")));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Per-example loss split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleLoss {
    pub bce: f64,
    pub align: f64,
    pub total: f64,
}

enum Cache {
    Video {
        fused: Fused,
    },
    Frame {
        visual: Matrix,
        audio: Matrix,
        fused: Matrix,
        embedded: Option<Matrix>,
        encoded: Matrix,
        trace: EncoderTrace,
        attention: Option<AttentionOutput>,
    },
}

struct Forward {
    rep: Vec<f64>,
    scores: Vec<f64>,
    align: f64,
    cache: Cache,
}

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let fusion = FusionParams::init(&config.fusion, config.visual_dim, config.audio_dim, &mut rng)?;
        let (encoder, attention) = match &config.encoder {
            Some(enc) => {
                let attention = match &config.attention {
                    Some(a) => Some(AttentionParams::init(
                        config.fused_dim(),
                        config.encoder_input_dim(),
                        enc.output_dim(),
                        a.attn_dim.unwrap_or_else(|| enc.output_dim()),
                        &mut rng,
                    )?),
                    None => None,
                };
                (
                    Some(EncoderParams::init(enc, config.encoder_input_dim(), &mut rng)?),
                    attention,
                )
            }
            None => (None, None),
        };
        let head = HeadParams::init(config.num_classes, config.rep_dim(), &mut rng)?;
        Ok(Model {
            config,
            params: ModelParams {
                fusion,
                attention,
                encoder,
                head,
            },
        })
    }

    /// Checks that the parameters implement the configuration.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let p = &self.params;
        if p.fusion.mode() != c.fusion.mode
            || p.fusion.visual_dim != c.visual_dim
            || p.fusion.audio_dim != c.audio_dim
            || p.fusion.output_dim() != c.fused_dim()
        {
            return Err(Error::Consistency(
                "fusion parameters do not match the configuration".into(),
            ));
        }
        match (&c.encoder, &p.encoder) {
            (Some(cfg), Some(enc)) => enc.check(cfg, c.encoder_input_dim())?,
            (None, None) => {}
            _ => {
                return Err(Error::Consistency(
                    "encoder presence differs between config and params".into(),
                ))
            }
        }
        if c.attention.is_some() != p.attention.is_some() {
            return Err(Error::Consistency(
                "attention presence differs between config and params".into(),
            ));
        }
        if let Some(a) = &p.attention {
            if a.w_e.shape() != (c.encoder_input_dim(), c.fused_dim()) || a.state_dim() != c.rep_dim() {
                return Err(Error::Consistency("attention parameter shapes".into()));
            }
        }
        if p.head.weight.shape() != (c.num_classes, c.rep_dim()) || p.head.bias.shape() != (c.num_classes, 1) {
            return Err(Error::Consistency("head parameter shapes".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_example(&self, ex: &FrameExample) -> Result<()> {
        if ex.visual.cols() != self.config.visual_dim || ex.audio.cols() != self.config.audio_dim {
            return Err(Error::Input(format!(
                "video {} has feature widths ({}, {}), model expects ({}, {})",
                ex.video_id,
                ex.visual.cols(),
                ex.audio.cols(),
                self.config.visual_dim,
                self.config.audio_dim
            )));
        }
        Ok(())
    }

    fn forward(&self, ex: &FrameExample) -> Result<Forward> {
        self.check_example(ex)?;
        let cfg = &self.config;
        let p = &self.params;
        let Some(enc_cfg) = &cfg.encoder else {
            let fused = fuse(&ex.mean_visual, &ex.mean_audio, &cfg.fusion, &p.fusion)?;
            let scores = predict_scores(&fused.fused, &p.head)?;
            return Ok(Forward {
                rep: fused.fused.clone(),
                scores,
                align: fused.align_loss,
                cache: Cache::Video { fused },
            });
        };
        let enc_params = p
            .encoder
            .as_ref()
            .ok_or_else(|| Error::Consistency("encoder configured but parameters missing".into()))?;

        let visual = cap_frames(&ex.visual, enc_cfg.max_frames);
        let audio = cap_frames(&ex.audio, enc_cfg.max_frames);
        let (fused, align) = fuse_frames(&visual, &audio, &cfg.fusion, &p.fusion)?;
        let embedded = match &p.attention {
            Some(a) => Some(embed_frames(&fused, &a.w_e)?),
            None => None,
        };
        let (encoded, trace) = encode(embedded.as_ref().unwrap_or(&fused), enc_cfg, enc_params)?;
        let (rep, attention) = match &p.attention {
            Some(a) => {
                let out = attention_pool(&encoded, a)?;
                (out.pooled.clone(), Some(out))
            }
            None => (last_states(&encoded, enc_cfg.hidden_dim, enc_cfg.bidirectional)?, None),
        };
        let scores = predict_scores(&rep, &p.head)?;
        Ok(Forward {
            rep,
            scores,
            align,
            cache: Cache::Frame {
                visual,
                audio,
                fused,
                embedded,
                encoded,
                trace,
                attention,
            },
        })
    }

    /// Class scores in `(0, 1)` for one video.
    pub fn predict(&self, ex: &FrameExample) -> Result<Vec<f64>> {
        Ok(self.forward(ex)?.scores)
    }

    pub fn example_loss(&self, ex: &FrameExample) -> Result<ExampleLoss> {
        let f = self.forward(ex)?;
        let bce = bce_loss(&f.scores, &ex.labels)?;
        Ok(ExampleLoss {
            bce,
            align: f.align,
            total: total_loss(bce, f.align, self.config.fusion.lambda_align),
        })
    }

    /// Mean total loss over `batch`.
    pub fn batch_loss(&self, batch: &[&FrameExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut sum = 0.0;
        for ex in batch {
            sum += self.example_loss(ex)?.total;
        }
        Ok(sum / batch.len() as f64)
    }

    /// Adds `scale * d(example loss)/d(params)` into `grads`.
    pub fn accumulate_gradients(&self, ex: &FrameExample, scale: f64, grads: &mut ModelParams) -> Result<ExampleLoss> {
        let f = self.forward(ex)?;
        let bce = bce_loss(&f.scores, &ex.labels)?;
        let lambda = self.config.fusion.lambda_align;
        let loss = ExampleLoss {
            bce,
            align: f.align,
            total: total_loss(bce, f.align, lambda),
        };
        let p = &self.params;

        let mut grad_logits = bce_logit_gradient(&f.scores, &ex.labels);
        grad_logits.iter_mut().for_each(|g| *g *= scale);
        let grad_rep = head_backward(&f.rep, &p.head, &grad_logits, &mut grads.head);
        let grad_align = scale * lambda;

        match f.cache {
            Cache::Video { fused } => {
                if self.config.fusion.mode != FusionMode::Concat {
                    fuse_backward(
                        &ex.mean_visual,
                        &ex.mean_audio,
                        &p.fusion,
                        &fused,
                        &grad_rep,
                        grad_align,
                        &mut grads.fusion,
                    )?;
                }
            }
            Cache::Frame {
                visual,
                audio,
                fused,
                embedded,
                encoded,
                trace,
                attention,
            } => {
                let enc_cfg = self.config.encoder.as_ref().expect("frame cache implies encoder");
                let grad_encoded = match (&attention, &p.attention, &mut grads.attention) {
                    (Some(out), Some(ap), Some(ag)) => attention_pool_backward(&encoded, ap, out, &grad_rep, ag)?,
                    (None, None, None) => {
                        last_states_backward(encoded.rows(), enc_cfg.hidden_dim, enc_cfg.bidirectional, &grad_rep)
                    }
                    _ => return Err(Error::Consistency("attention gradient buffer".into())),
                };
                let enc_grads = grads
                    .encoder
                    .as_mut()
                    .ok_or_else(|| Error::Consistency("encoder gradient buffer missing".into()))?;
                let enc_params = p.encoder.as_ref().expect("checked in forward");
                let grad_input = encode_backward(enc_params, &trace, &grad_encoded, enc_grads)?;
                let grad_fused = match (&embedded, &p.attention, &mut grads.attention) {
                    (Some(_), Some(ap), Some(ag)) => embed_frames_backward(&fused, &ap.w_e, &grad_input, &mut ag.w_e)?,
                    _ => grad_input,
                };
                if self.config.fusion.mode != FusionMode::Concat {
                    for t in 0..fused.rows() {
                        let out = Fused {
                            fused: fused.row(t).to_vec(),
                            align_loss: 0.0,
                        };
                        fuse_backward(
                            visual.row(t),
                            audio.row(t),
                            &p.fusion,
                            &out,
                            grad_fused.row(t),
                            grad_align,
                            &mut grads.fusion,
                        )?;
                    }
                }
            }
        }
        Ok(loss)
    }
}

/// Gradient of the batch-mean total loss, added into `grads` (which the
/// caller zeroes per batch). Returns the batch-mean loss.
pub fn compute_gradients(model: &Model, batch: &[&FrameExample], grads: &mut ModelParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        loss += model.accumulate_gradients(ex, scale, grads)?.total;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { tensor: "loss".into() });
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: format!("grad.{name}"),
        });
    }
    Ok(loss * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::classifier::LabelSet;
    use crate::numeric::sigmoid;

    fn example(seed: u64, t: usize, dv: usize, da: usize, labels: &[u32]) -> FrameExample {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let v = Matrix::from_vec(t, dv, (0..t * dv).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = Matrix::from_vec(t, da, (0..t * da).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        FrameExample::new(format!("v{seed}"), LabelSet::new(labels.iter().copied()).unwrap(), v, a).unwrap()
    }

    #[test]
    fn lr_gradient_matches_closed_form() {
        let cfg = ModelConfig::video_level(3, 2, 4);
        let model = Model::init(cfg, 1).unwrap();
        let batch = [example(1, 5, 3, 2, &[0, 2]), example(2, 4, 3, 2, &[3])];
        let refs: Vec<&FrameExample> = batch.iter().collect();
        let mut grads = model.params.zeros_like();
        compute_gradients(&model, &refs, &mut grads).unwrap();

        // d/dW = 1/(B C) sum_b (sigmoid(W x_b + b) - y_b) x_bᵀ
        let mut want = Matrix::zeros(4, 5);
        for ex in &batch {
            let x: Vec<f64> = ex.mean_visual.iter().chain(&ex.mean_audio).copied().collect();
            for c in 0..4 {
                let z: f64 = (0..5).map(|k| model.params.head.weight.get(c, k) * x[k]).sum::<f64>()
                    + model.params.head.bias.get(c, 0);
                let y = if ex.labels.contains(c as u32) { 1.0 } else { 0.0 };
                for k in 0..5 {
                    let cur = want.get(c, k);
                    want.set(c, k, cur + (sigmoid(z) - y) * x[k] / 8.0);
                }
            }
        }
        for (a, b) in grads.head.weight.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_correct_batch_has_tiny_gradients() {
        let cfg = ModelConfig::video_level(2, 1, 3);
        let mut model = Model::init(cfg, 0).unwrap();
        model.params.head.weight.fill(0.0);
        for (c, b) in [40.0, -40.0, 40.0].iter().enumerate() {
            model.params.head.bias.set(c, 0, *b);
        }
        let ex = example(3, 3, 2, 1, &[0, 2]);
        let mut grads = model.params.zeros_like();
        compute_gradients(&model, &[&ex], &mut grads).unwrap();
        let norm: f64 = grads
            .params()
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(norm <= 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn attention_requires_encoder() {
        let mut cfg = ModelConfig::video_level(2, 2, 2);
        cfg.attention = Some(AttentionConfig {
            embed_dim: None,
            attn_dim: None,
        });
        assert!(Model::init(cfg, 0).is_err());
    }

    #[test]
    fn frame_level_model_predicts_and_checks() {
        let cfg = ModelConfig {
            visual_dim: 3,
            audio_dim: 2,
            num_classes: 4,
            fusion: FusionConfig {
                mode: FusionMode::Projection,
                shared_dim: 3,
                lambda_align: 0.1,
            },
            encoder: Some(EncoderConfig {
                cell: CellKind::Lstm,
                hidden_dim: 4,
                num_layers: 2,
                bidirectional: true,
                max_frames: 300,
            }),
            attention: Some(AttentionConfig {
                embed_dim: Some(5),
                attn_dim: Some(3),
            }),
        };
        let model = Model::init(cfg, 3).unwrap();
        model.check().unwrap();
        let s = model.predict(&example(4, 6, 3, 2, &[1])).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(model.predict(&example(4, 6, 2, 2, &[1])).is_err());
    }

    #[test]
    fn overflow_is_reported_with_tensor_name() {
        let cfg = ModelConfig::video_level(2, 1, 2);
        let mut model = Model::init(cfg, 0).unwrap();
        model.params.head.weight.set(0, 0, f64::NAN);
        let ex = example(5, 3, 2, 1, &[0]);
        let mut grads = model.params.zeros_like();
        let err = compute_gradients(&model, &[&ex], &mut grads).unwrap_err();
        assert!(err.is_numeric_error(), "{err}");
    }
}

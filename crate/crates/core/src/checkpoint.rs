//! Versioned JSON checkpoints of a [`Trainer`]: model configuration, named
//! parameter tensors, Adam moments and the step/epoch counters.
//!
//! Floats are written in shortest round-trip form, so save → load is
//! bit-exact for finite values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::model::{Model, ModelConfig};
use crate::numeric::Matrix;
use crate::optim::AdamState;
use crate::params::ParamSet;
use crate::train::Trainer;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "framefuse-checkpoint";

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    #[serde(flatten)]
    value: Matrix,
}

#[derive(Serialize, Deserialize)]
struct StoredAdam {
    t: u64,
    m: Vec<Matrix>,
    n: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    config: ModelConfig,
    step: u64,
    epoch: usize,
    params: Vec<Tensor>,
    adam: StoredAdam,
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::parse(0, field, reason)
}

pub fn checkpoint_to_string(trainer: &Trainer) -> Result<String> {
    if let Some(name) = trainer.model.params.first_non_finite() {
        return Err(Error::NonFinite { tensor: name });
    }
    let stored = Stored {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: trainer.model.config.clone(),
        step: trainer.step,
        epoch: trainer.epoch,
        params: trainer
            .model
            .params
            .named_params("")
            .into_iter()
            .map(|(name, m)| Tensor { name, value: m.clone() })
            .collect(),
        adam: StoredAdam {
            t: trainer.adam.t,
            m: trainer.adam.m.clone(),
            n: trainer.adam.n.clone(),
        },
    };
    serde_json::to_string(&stored).map_err(|e| Error::Numeric(format!("checkpoint serialization: {e}")))
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_string(trainer)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    parse_checkpoint(&fs::read(path)?)
}

/// Rejects configurations whose tensors could not fit in `budget` scalars,
/// before anything is allocated for them.
fn check_plausible(c: &ModelConfig, budget: usize, tensors: usize) -> Result<()> {
    let fusion_weights = c.fusion.mode != FusionMode::Concat;
    let mut raw = vec![c.visual_dim, c.audio_dim, c.num_classes];
    if fusion_weights {
        raw.push(c.fusion.shared_dim);
    }
    if let Some(e) = &c.encoder {
        raw.push(e.hidden_dim);
        if e.num_layers > tensors {
            return Err(bad("config", "more layers than stored tensors"));
        }
    }
    if let Some(a) = &c.attention {
        raw.extend(a.embed_dim.into_iter().chain(a.attn_dim));
    }
    if raw.iter().any(|&d| d > budget) {
        return Err(bad("config", "dimensions exceed the stored parameters"));
    }
    c.validate()?;
    let mut products = vec![(c.num_classes, c.rep_dim())];
    if fusion_weights {
        products.push((c.fusion.shared_dim, c.visual_dim + c.audio_dim));
    }
    if let Some(e) = &c.encoder {
        products.push((e.hidden_dim, e.hidden_dim + c.encoder_input_dim()));
        products.push((e.hidden_dim, 3 * e.hidden_dim));
        if let Some(a) = &c.attention {
            products.push((c.encoder_input_dim(), c.fused_dim()));
            products.push((a.attn_dim.unwrap_or(c.rep_dim()), c.rep_dim()));
        }
    }
    if products
        .iter()
        .any(|&(a, b)| a.checked_mul(b).is_none_or(|n| n > budget))
    {
        return Err(bad("config", "tensor sizes exceed the stored parameters"));
    }
    Ok(())
}

/// Parses a checkpoint and rebuilds the trainer, matching tensors by name
/// and shape against the stored configuration.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    let stored: Stored = serde_json::from_slice(bytes).map_err(|e| bad("checkpoint", e.to_string()))?;
    if stored.format != FORMAT {
        return Err(bad("format", format!("expected \"{FORMAT}\"")));
    }
    if stored.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: stored.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let budget: usize = stored.params.iter().map(|t| t.value.len()).sum();
    check_plausible(&stored.config, budget, stored.params.len())?;

    let mut model = Model::init(stored.config, 0)?;
    {
        let mut slots = model.params.named_params_mut("");
        if slots.len() != stored.params.len() {
            return Err(bad(
                "params",
                format!(
                    "configuration has {} tensors, checkpoint stores {}",
                    slots.len(),
                    stored.params.len()
                ),
            ));
        }
        for ((name, slot), t) in slots.iter_mut().zip(stored.params) {
            if *name != t.name {
                return Err(bad("params", format!("expected tensor `{name}`, found `{}`", t.name)));
            }
            if slot.shape() != t.value.shape() {
                return Err(bad(
                    "params",
                    format!(
                        "tensor `{name}` is {:?}, configuration needs {:?}",
                        t.value.shape(),
                        slot.shape()
                    ),
                ));
            }
            **slot = t.value;
        }
    }
    let shapes: Vec<(usize, usize)> = model.params.params().iter().map(|m| m.shape()).collect();
    for (field, moments) in [("adam.m", &stored.adam.m), ("adam.n", &stored.adam.n)] {
        if moments.len() != shapes.len() || moments.iter().zip(&shapes).any(|(m, s)| m.shape() != *s) {
            return Err(bad(field, "moment buffers do not match the parameters"));
        }
    }
    model.check()?;
    Ok(Trainer {
        model,
        adam: AdamState {
            t: stored.adam.t,
            m: stored.adam.m,
            n: stored.adam.n,
        },
        step: stored.step,
        epoch: stored.epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn trainer() -> Trainer {
        let cfg = ModelConfig {
            encoder: Some(EncoderConfig {
                hidden_dim: 3,
                num_layers: 1,
                ..EncoderConfig::default()
            }),
            ..ModelConfig::video_level(2, 2, 4)
        };
        let mut t = Trainer::new(Model::init(cfg, 5).unwrap());
        t.step = 17;
        t.epoch = 2;
        t.adam.t = 17;
        t.adam.m[0].set(0, 0, 0.1 + 0.2);
        t
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let t = trainer();
        let back = parse_checkpoint(checkpoint_to_string(&t).unwrap().as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn version_and_format_checked() {
        let s = checkpoint_to_string(&trainer()).unwrap();
        let v2 = s.replacen("\"version\":1", "\"version\":3", 1);
        assert!(matches!(
            parse_checkpoint(v2.as_bytes()),
            Err(Error::Version { found: 3, .. })
        ));
        let other = s.replacen(FORMAT, "something-else", 1);
        assert!(parse_checkpoint(other.as_bytes()).is_err());
        assert!(parse_checkpoint(b"{").is_err());
    }

    #[test]
    fn shape_and_name_mismatches_rejected() {
        let s = checkpoint_to_string(&trainer()).unwrap();
        let renamed = s.replacen("head.weight", "head.wait", 1);
        assert!(parse_checkpoint(renamed.as_bytes()).is_err());
        let resized = s.replacen("\"num_classes\":4", "\"num_classes\":5", 1);
        assert!(parse_checkpoint(resized.as_bytes()).is_err());
    }

    #[test]
    fn absurd_dimensions_rejected_without_allocating() {
        let s = checkpoint_to_string(&trainer()).unwrap();
        let huge = s.replacen("\"hidden_dim\":3", "\"hidden_dim\":1000000000000", 1);
        assert!(parse_checkpoint(huge.as_bytes()).is_err());
    }

    #[test]
    fn non_finite_parameters_not_saved() {
        let mut t = trainer();
        t.model.params.head.bias.set(0, 0, f64::NAN);
        assert!(matches!(checkpoint_to_string(&t), Err(Error::NonFinite { .. })));
    }
}

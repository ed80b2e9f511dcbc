//! Visual/audio fusion: concatenation, shared space, or paired projections
//! with an L2 alignment penalty.
//!
//! The frame-level path fuses each frame independently before encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sample_params, InitScheme, Matrix, Rng};
use crate::params::{join, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Concat,
    SharedSpace,
    Projection,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::SharedSpace => "shared_space",
            FusionMode::Projection => "projection",
        }
    }
}

pub const DEFAULT_LAMBDA_ALIGN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub shared_dim: usize,
    pub lambda_align: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Concat,
            shared_dim: 16,
            lambda_align: DEFAULT_LAMBDA_ALIGN,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shared_dim == 0 {
            return Err(Error::Parameter("shared_dim must be >= 1".into()));
        }
        if !(self.lambda_align >= 0.0 && self.lambda_align.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda_align must be a finite non-negative number, got {}",
                self.lambda_align
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self, visual_dim: usize, audio_dim: usize) -> usize {
        match self.mode {
            FusionMode::Concat => visual_dim + audio_dim,
            FusionMode::SharedSpace => self.shared_dim,
            FusionMode::Projection => 2 * self.shared_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FusionWeights {
    Concat,
    SharedSpace {
        weight: Matrix,
        bias: Matrix,
    },
    Projection {
        visual_weight: Matrix,
        visual_bias: Matrix,
        audio_weight: Matrix,
        audio_bias: Matrix,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub weights: FusionWeights,
}

impl FusionParams {
    /// Mapping matrices are drawn from N(0, 0.01); biases start at zero.
    pub fn init(cfg: &FusionConfig, visual_dim: usize, audio_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.shared_dim;
        let weights = match cfg.mode {
            FusionMode::Concat => FusionWeights::Concat,
            FusionMode::SharedSpace => FusionWeights::SharedSpace {
                weight: sample_params(s, visual_dim + audio_dim, InitScheme::FUSION, rng)?,
                bias: Matrix::zeros(s, 1),
            },
            FusionMode::Projection => FusionWeights::Projection {
                visual_weight: sample_params(s, visual_dim, InitScheme::FUSION, rng)?,
                visual_bias: Matrix::zeros(s, 1),
                audio_weight: sample_params(s, audio_dim, InitScheme::FUSION, rng)?,
                audio_bias: Matrix::zeros(s, 1),
            },
        };
        Ok(FusionParams {
            visual_dim,
            audio_dim,
            weights,
        })
    }

    pub fn mode(&self) -> FusionMode {
        match self.weights {
            FusionWeights::Concat => FusionMode::Concat,
            FusionWeights::SharedSpace { .. } => FusionMode::SharedSpace,
            FusionWeights::Projection { .. } => FusionMode::Projection,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.weights {
            FusionWeights::Concat => self.visual_dim + self.audio_dim,
            FusionWeights::SharedSpace { weight, .. } => weight.rows(),
            FusionWeights::Projection { visual_weight, .. } => 2 * visual_weight.rows(),
        }
    }

    fn check_inputs(&self, visual: &[f64], audio: &[f64]) -> Result<()> {
        if visual.len() != self.visual_dim {
            return Err(Error::shape(
                format!("visual features of length {}", self.visual_dim),
                format!("length {}", visual.len()),
            ));
        }
        if audio.len() != self.audio_dim {
            return Err(Error::shape(
                format!("audio features of length {}", self.audio_dim),
                format!("length {}", audio.len()),
            ));
        }
        Ok(())
    }
}

impl ParamSet for FusionParams {
    fn named_params(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        match &self.weights {
            FusionWeights::Concat => Vec::new(),
            FusionWeights::SharedSpace { weight, bias } => {
                vec![(join(prefix, "weight"), weight), (join(prefix, "bias"), bias)]
            }
            FusionWeights::Projection {
                visual_weight,
                visual_bias,
                audio_weight,
                audio_bias,
            } => vec![
                (join(prefix, "visual_weight"), visual_weight),
                (join(prefix, "visual_bias"), visual_bias),
                (join(prefix, "audio_weight"), audio_weight),
                (join(prefix, "audio_bias"), audio_bias),
            ],
        }
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        match &mut self.weights {
            FusionWeights::Concat => Vec::new(),
            FusionWeights::SharedSpace { weight, bias } => {
                vec![(join(prefix, "weight"), weight), (join(prefix, "bias"), bias)]
            }
            FusionWeights::Projection {
                visual_weight,
                visual_bias,
                audio_weight,
                audio_bias,
            } => vec![
                (join(prefix, "visual_weight"), visual_weight),
                (join(prefix, "visual_bias"), visual_bias),
                (join(prefix, "audio_weight"), audio_weight),
                (join(prefix, "audio_bias"), audio_bias),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fused {
    pub fused: Vec<f64>,
    /// `||f(visual) - g(audio)||²`, zero outside projection mode.
    pub align_loss: f64,
}

fn check_mode(cfg: &FusionConfig, p: &FusionParams) -> Result<()> {
    if cfg.mode != p.mode() {
        return Err(Error::Mode {
            expected: cfg.mode.as_str(),
            actual: p.mode().as_str(),
        });
    }
    Ok(())
}

fn project(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = b.as_slice().to_vec();
    w.matvec_acc(x, &mut out);
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn fuse(visual: &[f64], audio: &[f64], cfg: &FusionConfig, p: &FusionParams) -> Result<Fused> {
    check_mode(cfg, p)?;
    p.check_inputs(visual, audio)?;
    Ok(match &p.weights {
        FusionWeights::Concat => Fused {
            fused: visual.iter().chain(audio).copied().collect(),
            align_loss: 0.0,
        },
        FusionWeights::SharedSpace { weight, bias } => {
            let cat: Vec<f64> = visual.iter().chain(audio).copied().collect();
            let mut fused = project(weight, bias, &cat);
            fused.iter_mut().for_each(|v| *v = v.tanh());
            Fused { fused, align_loss: 0.0 }
        }
        FusionWeights::Projection {
            visual_weight,
            visual_bias,
            audio_weight,
            audio_bias,
        } => {
            let fv = project(visual_weight, visual_bias, visual);
            let ga = project(audio_weight, audio_bias, audio);
            let align_loss = sq_dist(&fv, &ga);
            Fused {
                fused: fv.into_iter().chain(ga).collect(),
                align_loss,
            }
        }
    })
}

/// Fuses every frame; returns the fused T x out_dim matrix and the summed
/// alignment loss.
pub fn fuse_frames(visual: &Matrix, audio: &Matrix, cfg: &FusionConfig, p: &FusionParams) -> Result<(Matrix, f64)> {
    if visual.rows() != audio.rows() {
        return Err(Error::shape(
            format!("{} visual frames", visual.rows()),
            format!("{} audio frames", audio.rows()),
        ));
    }
    let mut out = Matrix::zeros(visual.rows(), p.output_dim());
    let mut align = 0.0;
    for t in 0..visual.rows() {
        let f = fuse(visual.row(t), audio.row(t), cfg, p)?;
        out.row_mut(t).copy_from_slice(&f.fused);
        align += f.align_loss;
    }
    Ok((out, align))
}

/// Backward of one [`fuse`] call. `grad_fused` is `dL/d(fused)` and
/// `grad_align` is `dL/d(align_loss)`. Parameter gradients are added to
/// `grads`; returns `(dL/d(visual), dL/d(audio))`.
pub fn fuse_backward(
    visual: &[f64],
    audio: &[f64],
    p: &FusionParams,
    out: &Fused,
    grad_fused: &[f64],
    grad_align: f64,
    grads: &mut FusionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check_inputs(visual, audio)?;
    if grad_fused.len() != out.fused.len() {
        return Err(Error::shape(
            format!("fused vector of length {}", out.fused.len()),
            format!("gradient of length {}", grad_fused.len()),
        ));
    }
    let (dv, da) = (p.visual_dim, p.audio_dim);
    match (&p.weights, &mut grads.weights) {
        (FusionWeights::Concat, FusionWeights::Concat) => Ok((grad_fused[..dv].to_vec(), grad_fused[dv..].to_vec())),
        (FusionWeights::SharedSpace { weight, .. }, FusionWeights::SharedSpace { weight: gw, bias: gb }) => {
            let cat: Vec<f64> = visual.iter().chain(audio).copied().collect();
            let pre: Vec<f64> = grad_fused
                .iter()
                .zip(&out.fused)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            gw.add_outer(&pre, &cat);
            gb.add_assign(&pre);
            let mut gcat = vec![0.0; dv + da];
            weight.matvec_t_acc(&pre, &mut gcat);
            let ga = gcat.split_off(dv);
            Ok((gcat, ga))
        }
        (
            FusionWeights::Projection {
                visual_weight,
                audio_weight,
                ..
            },
            FusionWeights::Projection {
                visual_weight: gvw,
                visual_bias: gvb,
                audio_weight: gaw,
                audio_bias: gab,
            },
        ) => {
            let s = visual_weight.rows();
            let (fv, ga) = out.fused.split_at(s);
            let mut d_fv = grad_fused[..s].to_vec();
            let mut d_ga = grad_fused[s..].to_vec();
            for j in 0..s {
                let diff = 2.0 * grad_align * (fv[j] - ga[j]);
                d_fv[j] += diff;
                d_ga[j] -= diff;
            }
            gvw.add_outer(&d_fv, visual);
            gvb.add_assign(&d_fv);
            gaw.add_outer(&d_ga, audio);
            gab.add_assign(&d_ga);
            let mut g_visual = vec![0.0; dv];
            visual_weight.matvec_t_acc(&d_fv, &mut g_visual);
            let mut g_audio = vec![0.0; da];
            audio_weight.matvec_t_acc(&d_ga, &mut g_audio);
            Ok((g_visual, g_audio))
        }
        _ => Err(Error::Consistency("fusion gradient buffer has a different mode".into())),
    }
}

/// Gradients of the alignment loss alone.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignGradients {
    pub params: FusionParams,
    pub visual: Vec<f64>,
    pub audio: Vec<f64>,
}

/// Gradient of `||f(visual) - g(audio)||²` with respect to the projection
/// parameters and both inputs.
pub fn align_loss_gradient(visual: &[f64], audio: &[f64], p: &FusionParams) -> Result<AlignGradients> {
    if p.mode() != FusionMode::Projection {
        return Err(Error::Mode {
            expected: FusionMode::Projection.as_str(),
            actual: p.mode().as_str(),
        });
    }
    let cfg = FusionConfig {
        mode: FusionMode::Projection,
        shared_dim: p.output_dim() / 2,
        lambda_align: 0.0,
    };
    let out = fuse(visual, audio, &cfg, p)?;
    let mut grads = p.zeros_like();
    let zero = vec![0.0; out.fused.len()];
    let (gv, ga) = fuse_backward(visual, audio, p, &out, &zero, 1.0, &mut grads)?;
    Ok(AlignGradients {
        params: grads,
        visual: gv,
        audio: ga,
    })
}

//! Unrolled recurrent encoders: single direction, bidirectional, stacked.

use serde::{Deserialize, Serialize};

use crate::cells::{gru_backward, gru_step, lstm_backward, lstm_step, CellKind, CellParams, CellTape};
use crate::error::{Error, Result};
use crate::numeric::{add_into, Matrix, Rng};
use crate::params::{join, ParamSet};

pub const DEFAULT_MAX_FRAMES: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub cell: CellKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
}

fn default_max_frames() -> usize {
    DEFAULT_MAX_FRAMES
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            cell: CellKind::Gru,
            hidden_dim: 16,
            num_layers: 2,
            bidirectional: true,
            max_frames: DEFAULT_MAX_FRAMES,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.max_frames == 0 {
            return Err(Error::Parameter(format!(
                "encoder needs num_layers, hidden_dim and max_frames >= 1 (got {}, {}, {})",
                self.num_layers, self.hidden_dim, self.max_frames
            )));
        }
        Ok(())
    }

    /// Width of each output row.
    pub fn output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_dim
        } else {
            self.hidden_dim
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn order(self, len: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            Direction::Forward => Box::new(0..len),
            Direction::Backward => Box::new((0..len).rev()),
        }
    }
}

/// Cell tapes of one direction, in traversal order.
#[derive(Clone, Debug)]
pub struct DirectionTrace {
    pub direction: Direction,
    pub tapes: Vec<CellTape>,
}

/// Runs `cell` over the rows of `frames` starting from zero state.
///
/// Row `t` of the output is the hidden state after consuming frame `t`;
/// for [`Direction::Backward`] the rows stay aligned with frame order.
pub fn run_direction(frames: &Matrix, cell: &CellParams, direction: Direction) -> Result<(Matrix, DirectionTrace)> {
    let len = frames.rows();
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let hd = cell.hidden_dim();
    let mut out = Matrix::zeros(len, hd);
    let mut tapes = Vec::with_capacity(len);
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for t in direction.order(len) {
        let x = frames.row(t);
        let tape = match cell {
            CellParams::Lstm(p) => {
                let (h_next, c_next, tape) = lstm_step(x, &h, &c, p)?;
                h = h_next;
                c = c_next;
                CellTape::Lstm(tape)
            }
            CellParams::Gru(p) => {
                let (h_next, tape) = gru_step(x, &h, p)?;
                h = h_next;
                CellTape::Gru(tape)
            }
        };
        out.row_mut(t).copy_from_slice(&h);
        tapes.push(tape);
    }
    Ok((out, DirectionTrace { direction, tapes }))
}

/// Backpropagates through one direction. `grad_out` is `dL/d(output)` in
/// frame order; returns `dL/d(frames)` and adds parameter gradients to `grads`.
pub fn backward_direction(
    cell: &CellParams,
    trace: &DirectionTrace,
    grad_out: &Matrix,
    grads: &mut CellParams,
) -> Result<Matrix> {
    let len = trace.tapes.len();
    let hd = cell.hidden_dim();
    if grad_out.shape() != (len, hd) {
        return Err(Error::shape(
            format!("direction output {len}x{hd}"),
            format!("gradient {}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let mut grad_in = Matrix::zeros(len, cell.input_dim());
    let mut dh = vec![0.0; hd];
    let mut dc = vec![0.0; hd];
    let frame_order: Vec<usize> = trace.direction.order(len).collect();
    for (tape, &t) in trace.tapes.iter().zip(&frame_order).rev() {
        add_into(&mut dh, grad_out.row(t));
        let step = match (cell, tape, &mut *grads) {
            (CellParams::Lstm(p), CellTape::Lstm(tape), CellParams::Lstm(g)) => lstm_backward(p, tape, &dh, &dc, g)?,
            (CellParams::Gru(p), CellTape::Gru(tape), CellParams::Gru(g)) => gru_backward(p, tape, &dh, g)?,
            _ => {
                return Err(Error::Consistency(
                    "cell kind differs between tape, parameters and gradients".into(),
                ))
            }
        };
        grad_in.row_mut(t).copy_from_slice(&step.x);
        dh = step.h_prev;
        if !step.c_prev.is_empty() {
            dc = step.c_prev;
        }
    }
    Ok(grad_in)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub forward: CellParams,
    pub backward: Option<CellParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut d = input_dim;
        for _ in 0..cfg.num_layers {
            let forward = CellParams::init(cfg.cell, d, cfg.hidden_dim, rng)?;
            let backward = if cfg.bidirectional {
                Some(CellParams::init(cfg.cell, d, cfg.hidden_dim, rng)?)
            } else {
                None
            };
            layers.push(LayerParams { forward, backward });
            d = cfg.output_dim();
        }
        Ok(EncoderParams { layers })
    }

    /// Checks that these parameters implement `cfg` over `input_dim` inputs.
    pub fn check(&self, cfg: &EncoderConfig, input_dim: usize) -> Result<()> {
        let mismatch = |what: String| Err(Error::Consistency(format!("encoder config/params mismatch: {what}")));
        if self.layers.len() != cfg.num_layers {
            return mismatch(format!(
                "{} layers configured, {} present",
                cfg.num_layers,
                self.layers.len()
            ));
        }
        let mut d = input_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.backward.is_some() != cfg.bidirectional {
                return mismatch(format!("layer {l} directionality"));
            }
            for cell in std::iter::once(&layer.forward).chain(layer.backward.as_ref()) {
                if cell.kind() != cfg.cell {
                    return mismatch(format!("layer {l} cell kind {}", cell.kind().as_str()));
                }
                if cell.hidden_dim() != cfg.hidden_dim || cell.input_dim() != d {
                    return mismatch(format!(
                        "layer {l} is {}->{}, expected {d}->{}",
                        cell.input_dim(),
                        cell.hidden_dim(),
                        cfg.hidden_dim
                    ));
                }
            }
            d = cfg.output_dim();
        }
        Ok(())
    }
}

impl ParamSet for EncoderParams {
    fn named_params(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.forward.named_params(&join(prefix, &format!("layer{l}.fwd"))));
            if let Some(b) = &layer.backward {
                out.extend(b.named_params(&join(prefix, &format!("layer{l}.bwd"))));
            }
        }
        out
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.forward.named_params_mut(&join(prefix, &format!("layer{l}.fwd"))));
            if let Some(b) = &mut layer.backward {
                out.extend(b.named_params_mut(&join(prefix, &format!("layer{l}.bwd"))));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub forward: DirectionTrace,
    pub backward: Option<DirectionTrace>,
}

#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub layers: Vec<LayerTrace>,
}

/// Encodes `frames` (T x input_dim) through the stacked, optionally
/// bidirectional encoder. Each layer after the first reads the previous
/// layer's `[forward | backward]` rows. Output is T x `cfg.output_dim()`.
pub fn encode(frames: &Matrix, cfg: &EncoderConfig, params: &EncoderParams) -> Result<(Matrix, EncoderTrace)> {
    cfg.validate()?;
    params.check(cfg, frames.cols())?;
    if frames.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let mut input = frames.clone();
    let mut traces = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (fwd_out, fwd_trace) = run_direction(&input, &layer.forward, Direction::Forward)?;
        let (out, bwd_trace) = match &layer.backward {
            Some(cell) => {
                let (bwd_out, trace) = run_direction(&input, cell, Direction::Backward)?;
                (fwd_out.hconcat(&bwd_out)?, Some(trace))
            }
            None => (fwd_out, None),
        };
        traces.push(LayerTrace {
            forward: fwd_trace,
            backward: bwd_trace,
        });
        input = out;
    }
    Ok((input, EncoderTrace { layers: traces }))
}

/// Backward through the whole stack; returns `dL/d(frames)`.
pub fn encode_backward(
    params: &EncoderParams,
    trace: &EncoderTrace,
    grad_out: &Matrix,
    grads: &mut EncoderParams,
) -> Result<Matrix> {
    if trace.layers.len() != params.layers.len() || grads.layers.len() != params.layers.len() {
        return Err(Error::Consistency("encoder trace depth differs from parameters".into()));
    }
    let mut grad = grad_out.clone();
    for ((layer, lt), lg) in params
        .layers
        .iter()
        .zip(&trace.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        let hd = layer.forward.hidden_dim();
        grad = match (&layer.backward, &lt.backward, &mut lg.backward) {
            (Some(bcell), Some(btrace), Some(bgrad)) => {
                if grad.cols() != 2 * hd {
                    return Err(Error::shape(
                        format!("bidirectional output width {}", 2 * hd),
                        format!("gradient width {}", grad.cols()),
                    ));
                }
                let mut gin =
                    backward_direction(&layer.forward, &lt.forward, &grad.column_slice(0, hd), &mut lg.forward)?;
                let gb = backward_direction(bcell, btrace, &grad.column_slice(hd, 2 * hd), bgrad)?;
                gin.add_assign(gb.as_slice());
                gin
            }
            (None, None, None) => backward_direction(&layer.forward, &lt.forward, &grad, &mut lg.forward)?,
            _ => {
                return Err(Error::Consistency(
                    "encoder directionality differs between params, trace and gradients".into(),
                ))
            }
        };
    }
    Ok(grad)
}

/// First `max_frames` rows of `frames`; logs a warning when truncating.
pub fn cap_frames(frames: &Matrix, max_frames: usize) -> Matrix {
    if frames.rows() <= max_frames {
        return frames.clone();
    }
    log::warn!("sequence of {} frames truncated to {max_frames}", frames.rows());
    Matrix::from_vec(
        max_frames,
        frames.cols(),
        frames.as_slice()[..max_frames * frames.cols()].to_vec(),
    )
    .expect("prefix of a well-formed matrix")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{gru_step, GruParams};
    use crate::numeric::rng_from_seed;
    use rand::Rng as _;

    fn random_frames(rng: &mut Rng, t: usize, d: usize) -> Matrix {
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn bits(m: &Matrix) -> Vec<u64> {
        m.as_slice().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn single_frame_directions_agree() {
        let mut rng = rng_from_seed(1);
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let cell = CellParams::init(kind, 3, 4, &mut rng).unwrap();
            let x = random_frames(&mut rng, 1, 3);
            let (f, _) = run_direction(&x, &cell, Direction::Forward).unwrap();
            let (b, _) = run_direction(&x, &cell, Direction::Backward).unwrap();
            assert_eq!(f, b);
        }
    }

    #[test]
    fn backward_equals_reversed_forward_of_reversed() {
        let mut rng = rng_from_seed(2);
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let cell = CellParams::init(kind, 3, 5, &mut rng).unwrap();
            let x = random_frames(&mut rng, 7, 3);
            let (b, _) = run_direction(&x, &cell, Direction::Backward).unwrap();
            let (f, _) = run_direction(&x.reversed_rows(), &cell, Direction::Forward).unwrap();
            assert_eq!(bits(&b), bits(&f.reversed_rows()));
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = rng_from_seed(3);
        let cell = CellParams::init(CellKind::Gru, 3, 2, &mut rng).unwrap();
        assert!(matches!(
            run_direction(&Matrix::zeros(0, 3), &cell, Direction::Forward),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn gru_rows_match_iterated_steps() {
        let mut rng = rng_from_seed(4);
        let p = GruParams::init(3, 4, &mut rng).unwrap();
        let x = random_frames(&mut rng, 5, 3);
        let (out, _) = run_direction(&x, &CellParams::Gru(p.clone()), Direction::Forward).unwrap();
        let mut h = vec![0.0; 4];
        for t in 0..5 {
            h = gru_step(x.row(t), &h, &p).unwrap().0;
            for j in 0..4 {
                assert!((out.get(t, j) - h[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unidirectional_single_layer_is_run_direction() {
        let mut rng = rng_from_seed(5);
        let cfg = EncoderConfig {
            cell: CellKind::Lstm,
            hidden_dim: 4,
            num_layers: 1,
            bidirectional: false,
            max_frames: 300,
        };
        let params = EncoderParams::init(&cfg, 3, &mut rng).unwrap();
        let x = random_frames(&mut rng, 6, 3);
        let (enc, _) = encode(&x, &cfg, &params).unwrap();
        let (dir, _) = run_direction(&x, &params.layers[0].forward, Direction::Forward).unwrap();
        assert_eq!(enc, dir);
    }

    #[test]
    fn output_shapes() {
        let mut rng = rng_from_seed(6);
        for bidirectional in [false, true] {
            let cfg = EncoderConfig {
                bidirectional,
                hidden_dim: 3,
                ..EncoderConfig::default()
            };
            let params = EncoderParams::init(&cfg, 5, &mut rng).unwrap();
            let (out, _) = encode(&random_frames(&mut rng, 4, 5), &cfg, &params).unwrap();
            assert_eq!(out.shape(), (4, if bidirectional { 6 } else { 3 }));
        }
    }

    #[test]
    fn two_layer_bigru_is_composition_of_directions() {
        let mut rng = rng_from_seed(7);
        let cfg = EncoderConfig {
            cell: CellKind::Gru,
            hidden_dim: 3,
            num_layers: 2,
            bidirectional: true,
            max_frames: 300,
        };
        let params = EncoderParams::init(&cfg, 2, &mut rng).unwrap();
        let x = random_frames(&mut rng, 4, 2);
        let (out, _) = encode(&x, &cfg, &params).unwrap();

        let mut input = x.clone();
        for layer in &params.layers {
            let (f, _) = run_direction(&input, &layer.forward, Direction::Forward).unwrap();
            let (b, _) = run_direction(&input, layer.backward.as_ref().unwrap(), Direction::Backward).unwrap();
            input = f.hconcat(&b).unwrap();
        }
        for (a, b) in out.as_slice().iter().zip(input.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_second_layer_stays_finite() {
        let mut rng = rng_from_seed(8);
        let cfg = EncoderConfig {
            cell: CellKind::Lstm,
            hidden_dim: 2,
            ..EncoderConfig::default()
        };
        let mut params = EncoderParams::init(&cfg, 3, &mut rng).unwrap();
        params.layers[1].forward.zero();
        let (out, _) = encode(&random_frames(&mut rng, 5, 3), &cfg, &params).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn config_params_mismatch_is_reported() {
        let mut rng = rng_from_seed(9);
        let cfg = EncoderConfig::default();
        let params = EncoderParams::init(&cfg, 3, &mut rng).unwrap();
        let x = random_frames(&mut rng, 2, 3);
        let one_layer = EncoderConfig {
            num_layers: 1,
            ..cfg.clone()
        };
        assert!(matches!(encode(&x, &one_layer, &params), Err(Error::Consistency(_))));
        let lstm = EncoderConfig {
            cell: CellKind::Lstm,
            ..cfg.clone()
        };
        assert!(matches!(encode(&x, &lstm, &params), Err(Error::Consistency(_))));
        let wide = random_frames(&mut rng, 2, 4);
        assert!(matches!(encode(&wide, &cfg, &params), Err(Error::Consistency(_))));
    }

    #[test]
    fn cap_frames_truncates() {
        let m = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cap_frames(&m, 2).as_slice(), &[1.0, 2.0]);
        assert_eq!(cap_frames(&m, 10), m);
    }
}

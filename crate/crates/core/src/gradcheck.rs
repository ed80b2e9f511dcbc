//! Central finite-difference audit of analytic gradients.
//!
//! For each parameter tensor a random sample of coordinates (all of them
//! for small tensors) is perturbed by `±step` and
//! `(L(θ+δ) - L(θ-δ)) / 2δ` is compared against the analytic gradient.
//! The error of a coordinate is `|analytic - numeric| / max(|numeric|, floor)`.

use rand::seq::index::sample;

use crate::data::FrameExample;
use crate::error::{Error, Result};
use crate::model::{compute_gradients, Model};
use crate::numeric::rng_from_seed;
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor.
    pub samples_per_group: usize,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples_per_group: 100,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(floor)
}

/// Central difference of `f` at `x[i]`, restoring `x[i]` afterwards.
pub fn central_difference(x: &mut [f64], i: usize, step: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + step;
    let plus = f(x);
    x[i] = orig - step;
    let minus = f(x);
    x[i] = orig;
    Ok((plus? - minus?) / (2.0 * step))
}

/// Compares `analytic` against finite differences of `loss` around `params`.
/// `params` is perturbed in place and restored before returning.
pub fn check_gradients<P: ParamSet>(
    params: &mut P,
    analytic: &P,
    mut loss: impl FnMut(&P) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let names: Vec<(String, usize)> = params.named_params("").into_iter().map(|(n, m)| (n, m.len())).collect();
    let analytic = analytic.params();
    if analytic.len() != names.len() {
        return Err(Error::Consistency(
            "gradient buffer has a different layout than the parameters".into(),
        ));
    }
    let mut rng = rng_from_seed(opts.seed);
    let mut report = GradCheckReport::default();
    for (g, (name, len)) in names.into_iter().enumerate() {
        if analytic[g].len() != len {
            return Err(Error::Consistency(format!("gradient for {name} has the wrong size")));
        }
        let coords: Vec<usize> = if len <= opts.samples_per_group {
            (0..len).collect()
        } else {
            sample(&mut rng, len, opts.samples_per_group).into_vec()
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = params.params_mut()[g].as_slice()[i];
            params.params_mut()[g].as_mut_slice()[i] = orig + opts.step;
            let plus = loss(params);
            params.params_mut()[g].as_mut_slice()[i] = orig - opts.step;
            let minus = loss(params);
            params.params_mut()[g].as_mut_slice()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let err = relative_error(analytic[g].as_slice()[i], numeric, opts.floor);
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
        report.groups.push(GroupError {
            name,
            max_rel_error: worst,
            checked: coords.len(),
        });
    }
    Ok(report)
}

/// Finite-difference audit of [`compute_gradients`] on `batch`.
pub fn finite_diff_check(model: &Model, batch: &[&FrameExample], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut grads = model.params.zeros_like();
    compute_gradients(model, batch, &mut grads)?;
    let mut probe = model.clone();
    let mut params = model.params.clone();
    check_gradients(
        &mut params,
        &grads,
        |p| {
            probe.params.clone_from(p);
            probe.batch_loss(batch)
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;
    use crate::params::flat_param_set;

    #[derive(Clone)]
    struct Lin {
        w: Matrix,
    }
    flat_param_set!(Lin { w });

    fn quadratic(p: &Lin) -> Result<f64> {
        // 0.5 * ||W x - y||² with fixed x, y
        let x = [1.0, -2.0, 0.5];
        let y = [0.3, -0.7];
        let out = p.w.matvec(&x)?;
        Ok(0.5 * out.iter().zip(&y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>())
    }

    fn quadratic_grad(p: &Lin) -> Lin {
        let x = [1.0, -2.0, 0.5];
        let y = [0.3, -0.7];
        let out = p.w.matvec(&x).unwrap();
        let mut g = Matrix::zeros(2, 3);
        for r in 0..2 {
            for c in 0..3 {
                g.set(r, c, (out[r] - y[r]) * x[c]);
            }
        }
        Lin { w: g }
    }

    #[test]
    fn exact_on_quadratics() {
        let mut p = Lin {
            w: Matrix::from_vec(2, 3, vec![0.1, 0.4, -0.3, 0.8, -0.5, 0.2]).unwrap(),
        };
        let g = quadratic_grad(&p);
        let report = check_gradients(&mut p, &g, quadratic, &GradCheckOptions::default()).unwrap();
        assert!(report.max_error() < 1e-8, "{report:?}");
        assert_eq!(report.groups[0].checked, 6);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut p = Lin {
            w: Matrix::from_vec(2, 3, vec![0.1, 0.4, -0.3, 0.8, -0.5, 0.2]).unwrap(),
        };
        let mut g = quadratic_grad(&p);
        g.w.scale(2.0);
        let report = check_gradients(&mut p, &g, quadratic, &GradCheckOptions::default()).unwrap();
        assert!((report.max_error() - 1.0).abs() < 1e-6, "{report:?}");
    }

    #[test]
    fn parameters_are_restored() {
        let w = Matrix::from_vec(2, 3, vec![0.1, 0.4, -0.3, 0.8, -0.5, 0.2]).unwrap();
        let mut p = Lin { w: w.clone() };
        let g = quadratic_grad(&p);
        check_gradients(&mut p, &g, quadratic, &GradCheckOptions::default()).unwrap();
        assert_eq!(p.w, w);
    }

    #[test]
    fn central_difference_of_cubic() {
        let mut x = [2.0];
        let d = central_difference(&mut x, 0, 1e-5, |v| Ok(v[0].powi(3))).unwrap();
        assert!((d - 12.0).abs() < 1e-8);
        assert_eq!(x[0], 2.0);
    }
}

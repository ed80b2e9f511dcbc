//! Named parameter collections.
//!
//! Every trainable block exposes its matrices through [`ParamSet`] in a fixed
//! order. Gradients reuse the same types: the gradient of a block is a block
//! of the same shape, created with [`ParamSet::zeros_like`].

use crate::numeric::Matrix;

pub trait ParamSet {
    fn named_params(&self, prefix: &str) -> Vec<(String, &Matrix)>;
    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)>;

    fn params(&self) -> Vec<&Matrix> {
        self.named_params("").into_iter().map(|(_, m)| m).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.named_params_mut("").into_iter().map(|(_, m)| m).collect()
    }

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    fn zero(&mut self) {
        for m in self.params_mut() {
            m.fill(0.0);
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// Name of the first tensor holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        self.named_params("")
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`ParamSet`] for a struct whose parameters are plain
/// `Matrix` fields.
macro_rules! flat_param_set {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::params::ParamSet for $ty {
            fn named_params(&self, prefix: &str) -> Vec<(String, &$crate::numeric::Matrix)> {
                vec![$(($crate::params::join(prefix, stringify!($field)), &self.$field)),+]
            }

            fn named_params_mut(
                &mut self,
                prefix: &str,
            ) -> Vec<(String, &mut $crate::numeric::Matrix)> {
                vec![$(($crate::params::join(prefix, stringify!($field)), &mut self.$field)),+]
            }
        }
    };
}

pub(crate) use flat_param_set;

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Pair {
        a: Matrix,
        b: Matrix,
    }

    flat_param_set!(Pair { a, b });

    #[test]
    fn names_and_zeroing() {
        let p = Pair {
            a: Matrix::identity(2),
            b: Matrix::column(vec![1.0, f64::NAN]),
        };
        let names: Vec<String> = p.named_params("blk").into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["blk.a", "blk.b"]);
        assert_eq!(p.num_scalars(), 6);
        assert_eq!(p.first_non_finite().as_deref(), Some("b"));
        let z = p.zeros_like();
        assert!(z.params().iter().all(|m| m.as_slice().iter().all(|x| *x == 0.0)));
    }
}

//! Elementwise activation functions, including data-selected linear
//! combinations of a base list.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    /// `0.5 sin(x) + 0.5 cos(x)`.
    SinCosHalf,
    /// `sum_j weights[j] * bases[j](x)`. Bases are never combinations themselves.
    Combination {
        weights: Vec<f64>,
        bases: Vec<ActivationKind>,
    },
}

impl ActivationKind {
    pub fn combination(weights: Vec<f64>, bases: Vec<ActivationKind>) -> Result<Self> {
        let kind = ActivationKind::Combination { weights, bases };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActivationKind::LeakyRelu { slope } if !slope.is_finite() => {
                Err(Error::invalid("leaky relu slope must be finite"))
            }
            ActivationKind::Combination { weights, bases } => {
                if weights.len() != bases.len() {
                    return Err(Error::DimensionMismatch {
                        context: "combination weights vs bases",
                        expected: bases.len(),
                        found: weights.len(),
                    });
                }
                if bases.is_empty() {
                    return Err(Error::invalid("combination needs at least one base"));
                }
                if weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::NonFinite("combination weight".into()));
                }
                for b in bases {
                    if matches!(b, ActivationKind::Combination { .. }) {
                        return Err(Error::invalid("nested activation combinations"));
                    }
                    b.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::SinCosHalf => 0.5 * x.sin() + 0.5 * x.cos(),
            ActivationKind::Combination { weights, bases } => {
                weights.iter().zip(bases).map(|(w, b)| w * b.apply(x)).sum()
            }
        }
    }

    /// Derivative; the ReLU family uses 0 (or `slope`) at the kink.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::SinCosHalf => 0.5 * x.cos() - 0.5 * x.sin(),
            ActivationKind::Combination { weights, bases } => weights
                .iter()
                .zip(bases)
                .map(|(w, b)| w * b.derivative(x))
                .sum(),
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn eval_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z.map(|x| self.apply(x))
    }

    pub fn eval_matrix_mut(&self, z: &mut DMatrix<f64>) {
        z.apply(|x| *x = self.apply(*x));
    }

    /// Whether `σ(0) = 0`.
    pub fn fixes_zero(&self) -> bool {
        self.apply(0.0) == 0.0
    }

    pub fn name(&self) -> String {
        match self {
            ActivationKind::Identity => "identity".into(),
            ActivationKind::Relu => "relu".into(),
            ActivationKind::LeakyRelu { slope } => format!("leaky_relu({slope})"),
            ActivationKind::Tanh => "tanh".into(),
            ActivationKind::SinCosHalf => "sincos".into(),
            ActivationKind::Combination { bases, .. } => {
                let names: Vec<_> = bases.iter().map(|b| b.name()).collect();
                format!("combination[{}]", names.join("+"))
            }
        }
    }
}

/// Elementwise activation of a vector.
pub fn activation_eval(kind: &ActivationKind, z: &[f64]) -> Vec<f64> {
    kind.eval(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(
            activation_eval(&ActivationKind::Relu, &[-1.0, 2.0]),
            vec![0.0, 2.0]
        );
    }

    #[test]
    fn sincos_half_at_zero() {
        assert_eq!(
            activation_eval(&ActivationKind::SinCosHalf, &[0.0]),
            vec![0.5]
        );
        let x = 0.7_f64;
        assert_eq!(
            ActivationKind::SinCosHalf.apply(x),
            0.5 * x.sin() + 0.5 * x.cos()
        );
    }

    #[test]
    fn combination_of_relu_and_identity() {
        let c = ActivationKind::combination(
            vec![0.25, 0.75],
            vec![ActivationKind::Relu, ActivationKind::Identity],
        )
        .unwrap();
        // 0.25 * 0 + 0.75 * (-4)
        assert_eq!(activation_eval(&c, &[-4.0]), vec![-3.0]);
    }

    #[test]
    fn combination_length_mismatch_rejected() {
        let err = ActivationKind::combination(vec![1.0], vec![]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let nested = ActivationKind::combination(
            vec![1.0],
            vec![ActivationKind::combination(vec![1.0], vec![ActivationKind::Tanh]).unwrap()],
        );
        assert!(nested.is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kinds = [
            ActivationKind::Identity,
            ActivationKind::Relu,
            ActivationKind::LeakyRelu { slope: 0.1 },
            ActivationKind::Tanh,
            ActivationKind::SinCosHalf,
            ActivationKind::combination(
                vec![0.3, -1.2],
                vec![ActivationKind::Tanh, ActivationKind::SinCosHalf],
            )
            .unwrap(),
        ];
        for k in &kinds {
            for &x in &[-1.3, -0.2, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (k.apply(x + h) - k.apply(x - h)) / (2.0 * h);
                assert!((fd - k.derivative(x)).abs() < 1e-7, "{k:?} at {x}");
            }
        }
    }

    #[test]
    fn serde_shape() {
        let json = serde_json::to_string(&ActivationKind::LeakyRelu { slope: 0.5 }).unwrap();
        assert_eq!(json, r#"{"kind":"leaky_relu","params":{"slope":0.5}}"#);
        let relu: ActivationKind = serde_json::from_str(r#"{"kind":"relu"}"#).unwrap();
        assert_eq!(relu, ActivationKind::Relu);
    }
}

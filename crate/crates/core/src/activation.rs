use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::PchnError;

/// Elementwise nonlinearity applied to value nodes before they predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative. ReLU at exactly zero returns 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative, taken as 0 for ReLU away from its kink.
    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Distance from `x` to the nearest point where the activation is not
    /// differentiable, or `None` for smooth activations.
    pub fn kink_distance(self, x: f64) -> Option<f64> {
        match self {
            Activation::Relu => Some(x.abs()),
            Activation::Identity | Activation::Tanh => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn map(self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| self.apply(x))
    }

    pub fn map_derivative(self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| self.derivative(x))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = PchnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(PchnError::InvalidConfig(format!(
                "unknown activation '{other}'"
            ))),
        }
    }
}

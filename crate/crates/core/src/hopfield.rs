//! Classical Hopfield network with Hebbian storage and asynchronous sign
//! updates, used as the behavioural reference for the PC-trained networks.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{PchnError, Result};
use crate::rng::rng_from_seed;

/// Symmetric, zero-diagonal weights and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldNet {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl HopfieldNet {
    /// Symmetrises `weights`, clears its diagonal.
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let d = weights.nrows();
        if weights.ncols() != d {
            return Err(PchnError::DimensionMismatch {
                expected: d,
                found: weights.ncols(),
            });
        }
        if bias.len() != d {
            return Err(PchnError::DimensionMismatch {
                expected: d,
                found: bias.len(),
            });
        }
        let mut weights = (&weights + weights.transpose()) * 0.5;
        weights.fill_diagonal(0.0);
        Ok(HopfieldNet { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Positive rescaling of weights and bias.
    pub fn scaled(&self, factor: f64) -> Self {
        HopfieldNet {
            weights: &self.weights * factor,
            bias: &self.bias * factor,
        }
    }

    fn field(&self, v: &DVector<f64>, i: usize) -> f64 {
        self.weights.row(i).dot(&v.transpose()) + self.bias[i]
    }
}

fn check_binary(x: &DMatrix<f64>) -> Result<()> {
    for (col, column) in x.column_iter().enumerate() {
        for (row, &value) in column.iter().enumerate() {
            if value != 1.0 && value != -1.0 {
                return Err(PchnError::NonBinary { row, col, value });
            }
        }
    }
    Ok(())
}

/// `W = sum_n x_n x_n^T` with the diagonal cleared, unnormalised; zero bias.
pub fn hebbian_store(patterns: &DMatrix<f64>) -> Result<HopfieldNet> {
    check_binary(patterns)?;
    let mut weights = patterns.transpose() * patterns;
    weights.fill_diagonal(0.0);
    let d = patterns.ncols();
    Ok(HopfieldNet {
        weights,
        bias: DVector::zeros(d),
    })
}

/// `E = -1/2 v^T W v - b^T v`.
pub fn hn_energy(net: &HopfieldNet, v: &DVector<f64>) -> f64 {
    -0.5 * v.dot(&(&net.weights * v)) - net.bias.dot(v)
}

/// `E = -1/2 sum_n F(x_n . v)` with `F(x) = x^2`. On {-1, +1}^d this equals
/// `hn_energy` of the Hebbian network plus the constant `N d / 2` removed
/// with the diagonal.
pub fn interaction_energy(patterns: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    -0.5 * (patterns * v).iter().map(|o| o * o).sum::<f64>()
}

/// One asynchronous pass in `order`. A neuron whose field is exactly zero
/// keeps its value.
pub fn async_sweep(net: &HopfieldNet, v: &DVector<f64>, order: &[usize]) -> DVector<f64> {
    async_sweep_traced(net, v, order, |_, _| {})
}

/// As [`async_sweep`], calling `observe(neuron, state)` after every
/// single-neuron update.
pub fn async_sweep_traced(
    net: &HopfieldNet,
    v: &DVector<f64>,
    order: &[usize],
    mut observe: impl FnMut(usize, &DVector<f64>),
) -> DVector<f64> {
    let mut v = v.clone();
    for &i in order {
        let h = net.field(&v, i);
        if h > 0.0 {
            v[i] = 1.0;
        } else if h < 0.0 {
            v[i] = -1.0;
        }
        observe(i, &v);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub v: DVector<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Repeats randomly ordered sweeps until one changes nothing.
pub fn recall(net: &HopfieldNet, v0: &DVector<f64>, max_sweeps: usize, seed: u64) -> Recall {
    recall_traced(net, v0, max_sweeps, seed, |_, _| {})
}

pub fn recall_traced(
    net: &HopfieldNet,
    v0: &DVector<f64>,
    max_sweeps: usize,
    seed: u64,
    mut observe: impl FnMut(usize, &DVector<f64>),
) -> Recall {
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..net.dim()).collect();
    let mut v = v0.clone();
    for sweep in 1..=max_sweeps {
        order.shuffle(&mut rng);
        let next = async_sweep_traced(net, &v, &order, &mut observe);
        let changed = next != v;
        v = next;
        if !changed {
            return Recall {
                v,
                sweeps: sweep,
                converged: true,
            };
        }
    }
    Recall {
        v,
        sweeps: max_sweeps,
        converged: false,
    }
}

/// True when a full sweep in natural order leaves `v` unchanged.
pub fn is_fixed_point(net: &HopfieldNet, v: &DVector<f64>) -> bool {
    let order: Vec<usize> = (0..net.dim()).collect();
    async_sweep(net, v, &order) == *v
}

//! Predictive-coding network: populations of paired value/error nodes joined
//! by directed prediction edges, and explicit-Euler integration of the fast
//! (error, value) and slow (weights, bias) dynamics.
//!
//! For a population `i` predicted over connection `c` (source `s`):
//!
//! ```text
//! mu_i        = M_c * sigma(v_s) + b_c
//! tau  d eps_i = v_i - mu_i - zeta * eps_i
//! tau  d v_i   = -eps_i + sigma'(v_i) . sum_{c': src(c') = i} W_c' * eps_dst(c')
//! gamma dM_c   = eps_i (x) sigma(v_s)
//! gamma dW_c   = sigma(v_s) (x) eps_i
//! gamma db_c   = eps_i
//! ```
//!
//! The fixed points of the fast system with `eps = 0` are exactly the states
//! the network predicts perfectly; those minimise `E = sum zeta/2 |eps_i|^2`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::Activation;
use crate::error::{PchnError, Result};

/// State magnitudes beyond this count as overflow; keeps every derived
/// distance and energy finite.
pub const DIVERGENCE_LIMIT: f64 = 1e100;

/// Optional per-equation time constants. `None` falls back to the shared value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimeConstantOverrides {
    pub tau_error: Option<f64>,
    pub tau_value: Option<f64>,
    pub gamma_prediction: Option<f64>,
    pub gamma_correction: Option<f64>,
    pub gamma_bias: Option<f64>,
}

/// Time constants (seconds), decay coefficient and integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub tau: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub dt: f64,
    pub overrides: TimeConstantOverrides,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            tau: 1.0,
            gamma: 10.0,
            zeta: 1.0,
            dt: 0.01,
            overrides: TimeConstantOverrides::default(),
        }
    }
}

impl Hyperparams {
    pub fn new(tau: f64, gamma: f64, zeta: f64, dt: f64) -> Result<Self> {
        let h = Hyperparams {
            tau,
            gamma,
            zeta,
            dt,
            overrides: TimeConstantOverrides::default(),
        };
        h.validate()?;
        Ok(h)
    }

    pub fn tau_error(&self) -> f64 {
        self.overrides.tau_error.unwrap_or(self.tau)
    }
    pub fn tau_value(&self) -> f64 {
        self.overrides.tau_value.unwrap_or(self.tau)
    }
    pub fn gamma_prediction(&self) -> f64 {
        self.overrides.gamma_prediction.unwrap_or(self.gamma)
    }
    pub fn gamma_correction(&self) -> f64 {
        self.overrides.gamma_correction.unwrap_or(self.gamma)
    }
    pub fn gamma_bias(&self) -> f64 {
        self.overrides.gamma_bias.unwrap_or(self.gamma)
    }

    /// Rejects non-positive constants, `tau >= gamma` and `dt >= tau / 2`.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("tau", self.tau),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("dt", self.dt),
            ("tau_error", self.tau_error()),
            ("tau_value", self.tau_value()),
            ("gamma_prediction", self.gamma_prediction()),
            ("gamma_correction", self.gamma_correction()),
            ("gamma_bias", self.gamma_bias()),
        ];
        for (name, x) in named {
            if !(x.is_finite() && x > 0.0) {
                return Err(PchnError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {x}"
                )));
            }
        }
        let tau_max = self.tau_error().max(self.tau_value());
        let tau_min = self.tau_error().min(self.tau_value());
        let gamma_min = self
            .gamma_prediction()
            .min(self.gamma_correction())
            .min(self.gamma_bias());
        if tau_max >= gamma_min {
            return Err(PchnError::InvalidConfig(format!(
                "fast time constant ({tau_max}) must be smaller than slow time constant ({gamma_min})"
            )));
        }
        if self.dt >= tau_min / 2.0 {
            return Err(PchnError::InvalidConfig(format!(
                "dt ({}) must be smaller than tau / 2 ({})",
                self.dt,
                tau_min / 2.0
            )));
        }
        Ok(())
    }
}

/// How correction weights evolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionMode {
    /// W follows its own learning rule.
    #[default]
    Learned,
    /// W is overwritten with the transpose of M after every slow step.
    Tied,
}

/// How error nodes are advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// Euler-integrated error dynamics.
    #[default]
    Integrated,
    /// Errors pinned to their instantaneous equilibrium `(v - mu) / zeta`.
    Algebraic,
}

/// A layer of PC units.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub id: usize,
    pub size: usize,
    pub v: DVector<f64>,
    pub eps: DVector<f64>,
    pub clamped: bool,
    pub clamp_target: Option<DVector<f64>>,
    pub activation: Activation,
}

impl Population {
    fn new(id: usize, size: usize, activation: Activation) -> Self {
        Population {
            id,
            size,
            v: DVector::zeros(size),
            eps: DVector::zeros(size),
            clamped: false,
            clamp_target: None,
            activation,
        }
    }
}

/// Prediction weights `m` (dst x src), correction weights `w` (src x dst)
/// and the bias `b` on the predicted population.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub src: usize,
    pub dst: usize,
    pub m: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Connection {
    pub fn is_self_connection(&self) -> bool {
        self.src == self.dst
    }
}

/// Result of relaxing the fast dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumRun {
    pub steps: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Time derivatives of the fast state, per population.
#[derive(Debug, Clone)]
pub struct FastDerivative {
    pub eps: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub populations: Vec<Population>,
    pub connections: Vec<Connection>,
    pub hyper: Hyperparams,
    pub weights_frozen: bool,
    pub correction_mode: CorrectionMode,
    pub error_mode: ErrorMode,
    /// Index of the single connection predicting each population.
    incoming: Vec<usize>,
    /// Connections in which each population is the predictor.
    outgoing: Vec<Vec<usize>>,
    steps_taken: u64,
}

impl Network {
    /// Builds a network from population sizes and `(src, dst)` prediction
    /// edges. M is drawn i.i.d. from N(0, (0.1 / sqrt(src size))^2) and W
    /// starts as its transpose; biases start at zero.
    pub fn from_topology(
        sizes: &[usize],
        edges: &[(usize, usize)],
        activation: Activation,
        hyper: Hyperparams,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if sizes.is_empty() {
            return Err(PchnError::InvalidConfig("network needs at least one population".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(PchnError::InvalidConfig(format!("population {i} has size 0")));
        }
        let mut incoming = vec![None; sizes.len()];
        let mut outgoing = vec![Vec::new(); sizes.len()];
        for (c, &(src, dst)) in edges.iter().enumerate() {
            if src >= sizes.len() || dst >= sizes.len() {
                return Err(PchnError::InvalidConfig(format!(
                    "connection {c} ({src} -> {dst}) references a missing population"
                )));
            }
            if incoming[dst].replace(c).is_some() {
                return Err(PchnError::InvalidConfig(format!(
                    "population {dst} is predicted by more than one connection"
                )));
            }
            outgoing[src].push(c);
        }
        let incoming = incoming
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    PchnError::InvalidConfig(format!("population {i} has no incoming prediction"))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let connections = edges
            .iter()
            .map(|&(src, dst)| {
                let std = 0.1 / (sizes[src] as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let mut m = DMatrix::from_fn(sizes[dst], sizes[src], |_, _| normal.sample(&mut rng));
                if src == dst {
                    m.fill_diagonal(0.0);
                }
                let w = m.transpose();
                Connection {
                    src,
                    dst,
                    m,
                    w,
                    b: DVector::zeros(sizes[dst]),
                }
            })
            .collect();

        Ok(Network {
            populations: sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| Population::new(i, n, activation))
                .collect(),
            connections,
            hyper,
            weights_frozen: false,
            correction_mode: CorrectionMode::Learned,
            error_mode: ErrorMode::Integrated,
            incoming,
            outgoing,
            steps_taken: 0,
        })
    }

    /// One population of `n` units predicting itself through a dense
    /// zero-diagonal self-connection.
    pub fn single_population(n: usize, activation: Activation, hyper: Hyperparams, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(PchnError::InvalidConfig("population size must be positive".into()));
        }
        Self::from_topology(&[n], &[(0, 0)], activation, hyper, seed)
    }

    /// A directed cycle where population `(i + 1) mod L` predicts population `i`.
    pub fn ring(sizes: &[usize], activation: Activation, hyper: Hyperparams, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(PchnError::InvalidConfig(
                "a loop needs at least two populations".into(),
            ));
        }
        let l = sizes.len();
        let edges: Vec<_> = (0..l).map(|i| ((i + 1) % l, i)).collect();
        Self::from_topology(sizes, &edges, activation, hyper, seed)
    }

    pub fn with_correction_mode(mut self, mode: CorrectionMode) -> Self {
        self.correction_mode = mode;
        if mode == CorrectionMode::Tied {
            for c in &mut self.connections {
                c.w = c.m.transpose();
            }
        }
        self
    }

    pub fn with_error_mode(mut self, mode: ErrorMode) -> Self {
        self.error_mode = mode;
        self
    }

    pub fn total_units(&self) -> usize {
        self.populations.iter().map(|p| p.size).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.populations.iter().map(|p| p.size).collect()
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn incoming_connection(&self, population: usize) -> usize {
        self.incoming[population]
    }

    /// `mu_dst = M * sigma(v_src) + b` for one connection.
    pub fn compute_prediction(&self, conn_index: usize) -> DVector<f64> {
        let c = &self.connections[conn_index];
        let src = &self.populations[c.src];
        prediction(c, src.activation, &src.v)
    }

    /// `E = sum_i zeta / 2 * |eps_i|^2`.
    pub fn energy(&self) -> f64 {
        let zeta = self.hyper.zeta;
        self.populations
            .iter()
            .map(|p| 0.5 * zeta * p.eps.norm_squared())
            .sum()
    }

    /// Energy the network would have with every error node at its
    /// instantaneous equilibrium `(v - mu) / zeta`.
    pub fn prediction_energy(&self) -> f64 {
        let zeta = self.hyper.zeta;
        (0..self.populations.len())
            .map(|i| {
                let mu = self.compute_prediction(self.incoming[i]);
                (&self.populations[i].v - mu).norm_squared() / (2.0 * zeta)
            })
            .sum()
    }

    /// Prediction errors `v_i - mu_i` for a flat value-node state, without
    /// touching the network state.
    pub fn prediction_errors_at(&self, values: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let v = self.split(values)?;
        Ok(self
            .connections
            .iter()
            .map(|c| {
                let act = self.populations[c.src].activation;
                &v[c.dst] - prediction(c, act, &v[c.src])
            })
            .collect())
    }

    /// Splits a flat vector of length `total_units` into per-population parts.
    pub fn split(&self, flat: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let n = self.total_units();
        if flat.len() != n {
            return Err(PchnError::DimensionMismatch {
                expected: n,
                found: flat.len(),
            });
        }
        let mut out = Vec::with_capacity(self.populations.len());
        let mut off = 0;
        for p in &self.populations {
            out.push(flat.rows(off, p.size).into_owned());
            off += p.size;
        }
        Ok(out)
    }

    pub fn values(&self) -> DVector<f64> {
        concat(self.populations.iter().map(|p| &p.v))
    }

    pub fn errors(&self) -> DVector<f64> {
        concat(self.populations.iter().map(|p| &p.eps))
    }

    /// Full fast state: all error nodes then all value nodes.
    pub fn state(&self) -> DVector<f64> {
        let n = self.total_units();
        let mut s = DVector::zeros(2 * n);
        s.rows_mut(0, n).copy_from(&self.errors());
        s.rows_mut(n, n).copy_from(&self.values());
        s
    }

    pub fn set_state(&mut self, state: &DVector<f64>) -> Result<()> {
        let n = self.total_units();
        if state.len() != 2 * n {
            return Err(PchnError::DimensionMismatch {
                expected: 2 * n,
                found: state.len(),
            });
        }
        let eps = self.split(&state.rows(0, n).into_owned())?;
        let v = self.split(&state.rows(n, n).into_owned())?;
        for ((p, e), v) in self.populations.iter_mut().zip(eps).zip(v) {
            p.eps = e;
            p.v = v;
        }
        Ok(())
    }

    pub fn set_values(&mut self, values: &DVector<f64>) -> Result<()> {
        let parts = self.split(values)?;
        for (p, v) in self.populations.iter_mut().zip(parts) {
            p.v = v;
        }
        Ok(())
    }

    pub fn reset_errors(&mut self) {
        for p in &mut self.populations {
            p.eps.fill(0.0);
        }
    }

    /// Clamps every population to its slice of `target` and sets `v` to it.
    pub fn clamp_all(&mut self, target: &DVector<f64>) -> Result<()> {
        let parts = self.split(target)?;
        for (p, t) in self.populations.iter_mut().zip(parts) {
            p.v.copy_from(&t);
            p.clamped = true;
            p.clamp_target = Some(t);
        }
        Ok(())
    }

    pub fn unclamp_all(&mut self) {
        for p in &mut self.populations {
            p.clamped = false;
            p.clamp_target = None;
        }
    }

    /// Stops all weight and bias learning; equivalent to infinite `gamma`.
    pub fn freeze(&mut self) {
        self.weights_frozen = true;
    }

    /// Right-hand side of the fast dynamics at an arbitrary state, ignoring
    /// clamping.
    pub fn fast_derivative_at(&self, eps: &[DVector<f64>], v: &[DVector<f64>]) -> FastDerivative {
        let h = &self.hyper;
        let (tau_e, tau_v) = (h.tau_error(), h.tau_value());
        let mut d_eps: Vec<DVector<f64>> = Vec::with_capacity(eps.len());
        let mut d_v: Vec<DVector<f64>> = Vec::with_capacity(v.len());
        for (i, p) in self.populations.iter().enumerate() {
            let c = &self.connections[self.incoming[i]];
            let mu = prediction(c, self.populations[c.src].activation, &v[c.src]);
            d_eps.push((&v[i] - mu - &eps[i] * h.zeta) / tau_e);

            let mut feedback = DVector::zeros(p.size);
            for &ci in &self.outgoing[i] {
                let c = &self.connections[ci];
                feedback.gemv(1.0, &c.w, &eps[c.dst], 1.0);
            }
            let act = p.activation;
            let dv = DVector::from_fn(p.size, |k, _| {
                (-eps[i][k] + act.derivative(v[i][k]) * feedback[k]) / tau_v
            });
            d_v.push(dv);
        }
        FastDerivative { eps: d_eps, v: d_v }
    }

    /// Unclamped fast RHS on a flat (errors, values) state.
    pub fn fast_rhs(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.total_units();
        if state.len() != 2 * n {
            return Err(PchnError::DimensionMismatch {
                expected: 2 * n,
                found: state.len(),
            });
        }
        let eps = self.split(&state.rows(0, n).into_owned())?;
        let v = self.split(&state.rows(n, n).into_owned())?;
        let d = self.fast_derivative_at(&eps, &v);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&concat(d.eps.iter()));
        out.rows_mut(n, n).copy_from(&concat(d.v.iter()));
        Ok(out)
    }

    fn current_derivative(&self) -> FastDerivative {
        let eps: Vec<_> = self.populations.iter().map(|p| p.eps.clone()).collect();
        let v: Vec<_> = self.populations.iter().map(|p| p.v.clone()).collect();
        self.fast_derivative_at(&eps, &v)
    }

    fn algebraic_errors(&self, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let zeta = self.hyper.zeta;
        (0..self.populations.len())
            .map(|i| {
                let c = &self.connections[self.incoming[i]];
                (&v[i] - prediction(c, self.populations[c.src].activation, &v[c.src])) / zeta
            })
            .collect()
    }

    /// Sup-norm of the fast-state time derivative, with clamped value nodes
    /// held fixed (and error nodes pinned in algebraic mode).
    pub fn fast_residual(&self) -> f64 {
        let d = self.current_derivative();
        let mut r: f64 = 0.0;
        for (i, p) in self.populations.iter().enumerate() {
            if self.error_mode == ErrorMode::Integrated {
                r = r.max(d.eps[i].amax());
            }
            if !p.clamped {
                r = r.max(d.v[i].amax());
            }
        }
        r
    }

    /// One explicit-Euler step of the error and value nodes. On divergence
    /// the state is left at the last finite values.
    pub fn step_fast(&mut self) -> Result<()> {
        let dt = self.hyper.dt;
        let (new_eps, new_v) = match self.error_mode {
            ErrorMode::Integrated => {
                let d = self.current_derivative();
                let eps: Vec<_> = self
                    .populations
                    .iter()
                    .zip(&d.eps)
                    .map(|(p, de)| &p.eps + de * dt)
                    .collect();
                let v = self.advance_values(&d.v, dt);
                (eps, v)
            }
            ErrorMode::Algebraic => {
                let v_now: Vec<_> = self.populations.iter().map(|p| p.v.clone()).collect();
                let eps_now = self.algebraic_errors(&v_now);
                let d = self.fast_derivative_at(&eps_now, &v_now);
                let v = self.advance_values(&d.v, dt);
                let eps = self.algebraic_errors(&v);
                (eps, v)
            }
        };
        let finite = |xs: &[DVector<f64>]| xs.iter().all(|x| x.iter().all(|e| e.abs() <= DIVERGENCE_LIMIT));
        if !finite(&new_eps) {
            return Err(PchnError::Diverged {
                step: self.steps_taken,
                what: "error nodes",
            });
        }
        if !finite(&new_v) {
            return Err(PchnError::Diverged {
                step: self.steps_taken,
                what: "value nodes",
            });
        }
        for ((p, e), v) in self.populations.iter_mut().zip(new_eps).zip(new_v) {
            p.eps = e;
            p.v = v;
        }
        self.steps_taken += 1;
        Ok(())
    }

    fn advance_values(&self, dv: &[DVector<f64>], dt: f64) -> Vec<DVector<f64>> {
        self.populations
            .iter()
            .zip(dv)
            .map(|(p, dv)| match (&p.clamp_target, p.clamped) {
                (Some(t), true) => t.clone(),
                _ => &p.v + dv * dt,
            })
            .collect()
    }

    /// One explicit-Euler step of M, W and b for every connection.
    pub fn step_slow(&mut self) -> Result<()> {
        if self.weights_frozen {
            return Err(PchnError::WeightsFrozen);
        }
        let dt = self.hyper.dt;
        let rate_m = dt / self.hyper.gamma_prediction();
        let rate_w = dt / self.hyper.gamma_correction();
        let rate_b = dt / self.hyper.gamma_bias();
        for c in &mut self.connections {
            let src = &self.populations[c.src];
            let s = src.activation.map(&src.v);
            let e = &self.populations[c.dst].eps;
            c.m.ger(rate_m, e, &s, 1.0);
            if self.correction_mode == CorrectionMode::Learned {
                c.w.ger(rate_w, &s, e, 1.0);
            }
            c.b.axpy(rate_b, e, 1.0);
            if c.src == c.dst {
                c.m.fill_diagonal(0.0);
                c.w.fill_diagonal(0.0);
            }
            if self.correction_mode == CorrectionMode::Tied {
                c.w = c.m.transpose();
            }
            if !(c.m.iter().chain(c.w.iter()).chain(c.b.iter()).all(|x| x.is_finite())) {
                return Err(PchnError::Diverged {
                    step: self.steps_taken,
                    what: "weights",
                });
            }
        }
        Ok(())
    }

    /// Steps the fast dynamics until the residual drops below `tol` or
    /// `max_steps` is exhausted.
    pub fn run_fast_to_equilibrium(&mut self, tol: f64, max_steps: usize) -> Result<EquilibriumRun> {
        for steps in 0..max_steps {
            let residual = self.fast_residual();
            if residual < tol {
                return Ok(EquilibriumRun {
                    steps,
                    converged: true,
                    residual,
                });
            }
            self.step_fast()?;
        }
        Ok(EquilibriumRun {
            steps: max_steps,
            converged: false,
            residual: self.fast_residual(),
        })
    }
}

fn prediction(c: &Connection, act: Activation, v_src: &DVector<f64>) -> DVector<f64> {
    let mut mu = c.b.clone();
    mu.gemv(1.0, &c.m, &act.map(v_src), 1.0);
    mu
}

fn concat<'a>(parts: impl Iterator<Item = &'a DVector<f64>>) -> DVector<f64> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(p.as_slice());
    }
    DVector::from_vec(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp() -> Hyperparams {
        Hyperparams::default()
    }

    #[test]
    fn single_population_shapes() {
        let net = Network::single_population(100, Activation::Relu, hp(), 1).unwrap();
        assert_eq!(net.populations.len(), 1);
        assert_eq!(net.connections.len(), 1);
        let c = &net.connections[0];
        assert_eq!(c.m.shape(), (100, 100));
        assert!((0..100).all(|i| c.m[(i, i)] == 0.0 && c.w[(i, i)] == 0.0));
        assert!(c.b.iter().all(|&x| x == 0.0));
        assert!(!net.weights_frozen);
    }

    #[test]
    fn degenerate_single_unit_has_zero_weight() {
        let net = Network::single_population(1, Activation::Identity, hp(), 1).unwrap();
        assert_eq!(net.connections[0].m[(0, 0)], 0.0);
    }

    #[test]
    fn three_unit_population_has_six_free_entries() {
        let net = Network::single_population(3, Activation::Tanh, hp(), 4).unwrap();
        assert_eq!(net.populations[0].v.len(), 3);
        assert_eq!(net.populations[0].eps.len(), 3);
        let nonzero = net.connections[0].m.iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nonzero, 6);
    }

    #[test]
    fn ring_topology() {
        let net = Network::ring(&[50, 30, 20], Activation::Relu, hp(), 1).unwrap();
        assert_eq!(net.connections.len(), 3);
        assert_eq!(net.total_units(), 100);
        assert_eq!(net.values().len(), 100);
        let edges: Vec<_> = net.connections.iter().map(|c| (c.src, c.dst)).collect();
        assert_eq!(edges, vec![(1, 0), (2, 1), (0, 2)]);
        assert_eq!(net.connections[0].m.shape(), (50, 30));
        assert_eq!(net.connections[0].w.shape(), (30, 50));

        let net = Network::ring(&[2, 2], Activation::Identity, hp(), 1).unwrap();
        let edges: Vec<_> = net.connections.iter().map(|c| (c.src, c.dst)).collect();
        assert_eq!(edges, vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn construction_errors() {
        assert!(Network::ring(&[5], Activation::Relu, hp(), 1).is_err());
        assert!(Network::single_population(0, Activation::Relu, hp(), 1).is_err());
        let bad = Hyperparams { gamma: 0.5, ..hp() };
        assert!(Network::single_population(3, Activation::Relu, bad, 1).is_err());
        let bad = Hyperparams { dt: 0.6, ..hp() };
        assert!(bad.validate().is_err());
        assert!(Network::from_topology(&[2, 2], &[(0, 0), (1, 0)], Activation::Relu, hp(), 0).is_err());
        assert!(Network::from_topology(&[2, 2], &[(0, 1)], Activation::Relu, hp(), 0).is_err());
    }

    #[test]
    fn prediction_identity_and_bias_only() {
        let mut net = Network::ring(&[2, 2], Activation::Identity, hp(), 1).unwrap();
        net.connections[0].m = DMatrix::identity(2, 2);
        net.populations[1].v = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(net.compute_prediction(0), DVector::from_vec(vec![1.0, -1.0]));

        net.connections[0].m.fill(0.0);
        net.connections[0].b = DVector::from_vec(vec![0.5, 0.5]);
        net.populations[1].v = DVector::from_vec(vec![3.0, -7.0]);
        assert_eq!(net.compute_prediction(0), DVector::from_vec(vec![0.5, 0.5]));
    }

    #[test]
    fn prediction_matches_row_dot_products() {
        let mut net = Network::ring(&[3, 3], Activation::Tanh, hp(), 9).unwrap();
        let m = [[0.3, -0.2, 0.9], [1.1, 0.0, -0.4], [-0.7, 0.25, 0.5]];
        net.connections[0].m = DMatrix::from_fn(3, 3, |i, j| m[i][j]);
        net.connections[0].b = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let vs = [0.4, -1.3, 2.0];
        net.populations[1].v = DVector::from_vec(vs.to_vec());
        let mu = net.compute_prediction(0);
        for i in 0..3 {
            let mut acc = net.connections[0].b[i];
            for j in 0..3 {
                acc += m[i][j] * vs[j].tanh();
            }
            assert!((mu[i] - acc).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let mut net = Network::single_population(10, Activation::Tanh, hp(), 3).unwrap();
        net.connections[0].m.fill(0.0);
        let before = net.state();
        net.step_fast().unwrap();
        assert_eq!(net.state(), before);
    }

    #[test]
    fn energy_values() {
        let mut net = Network::single_population(2, Activation::Identity, hp(), 0).unwrap();
        assert_eq!(net.energy(), 0.0);
        net.populations[0].eps = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(net.energy(), 12.5);
        net.hyper.zeta = 2.0;
        assert_eq!(net.energy(), 25.0);
    }

    #[test]
    fn slow_step_scalar_outer_product() {
        let hyper = Hyperparams {
            tau: 0.1,
            gamma: 1.0,
            zeta: 1.0,
            dt: 1.0,
            overrides: Default::default(),
        };
        // dt is deliberately outside the validated range; build via a valid
        // config and then overwrite.
        let mut net = Network::ring(&[1, 1], Activation::Identity, hp(), 0).unwrap();
        net.hyper = hyper;
        net.connections[0].m.fill(0.0);
        net.populations[0].eps = DVector::from_vec(vec![2.0]);
        net.populations[1].v = DVector::from_vec(vec![3.0]);
        net.step_slow().unwrap();
        assert_eq!(net.connections[0].m[(0, 0)], 6.0);
        assert_eq!(net.connections[0].b[0], 2.0);

        // On a self-connection the same update is re-zeroed.
        let mut net = Network::single_population(1, Activation::Identity, hp(), 0).unwrap();
        net.hyper = hyper;
        net.populations[0].eps = DVector::from_vec(vec![2.0]);
        net.populations[0].v = DVector::from_vec(vec![3.0]);
        net.step_slow().unwrap();
        assert_eq!(net.connections[0].m[(0, 0)], 0.0);
    }

    #[test]
    fn zero_error_slow_step_is_noop() {
        let mut net = Network::ring(&[4, 3], Activation::Tanh, hp(), 2).unwrap();
        net.populations[0].v = DVector::from_element(4, 0.3);
        net.populations[1].v = DVector::from_element(3, -0.8);
        let before = net.connections.clone();
        net.step_slow().unwrap();
        assert_eq!(net.connections, before);
    }

    #[test]
    fn frozen_rejects_slow_step() {
        let mut net = Network::single_population(4, Activation::Tanh, hp(), 2).unwrap();
        net.freeze();
        net.freeze();
        assert!(matches!(net.step_slow(), Err(PchnError::WeightsFrozen)));
        net.step_fast().unwrap();
    }

    #[test]
    fn clamped_values_survive_steps() {
        let mut net = Network::ring(&[3, 2], Activation::Tanh, hp(), 5).unwrap();
        let target = DVector::from_vec(vec![0.1, -0.5, 1.7, 0.3, -2.2]);
        net.clamp_all(&target).unwrap();
        for _ in 0..50 {
            net.step_fast().unwrap();
            net.step_slow().unwrap();
        }
        assert_eq!(net.values(), target);
        assert!(net.energy() > 0.0);
    }

    #[test]
    fn perfect_prediction_keeps_zero_error() {
        let mut net = Network::single_population(3, Activation::Identity, hp(), 5).unwrap();
        net.connections[0].m.fill(0.0);
        let target = DVector::from_vec(vec![0.4, -0.2, 0.9]);
        net.connections[0].b = target.clone();
        net.clamp_all(&target).unwrap();
        net.step_fast().unwrap();
        assert!(net.errors().iter().all(|&e| e == 0.0));
        assert_eq!(net.values(), target);
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = Network::single_population(2, Activation::Identity, hp(), 0).unwrap();
        net.populations[0].v = DVector::from_vec(vec![f64::MAX, 1.0]);
        net.populations[0].eps = DVector::from_vec(vec![-f64::MAX, 0.0]);
        let err = net.step_fast().unwrap_err();
        assert!(matches!(err, PchnError::Diverged { step: 0, .. }));
    }

    #[test]
    fn tied_mode_keeps_transpose() {
        let mut net = Network::ring(&[4, 3], Activation::Tanh, hp(), 7)
            .unwrap()
            .with_correction_mode(CorrectionMode::Tied);
        net.populations[0].eps = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.5]);
        net.populations[1].v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        net.step_slow().unwrap();
        for c in &net.connections {
            assert_eq!(c.w, c.m.transpose());
        }
    }

    #[test]
    fn equilibrium_run_budget() {
        let mut net = Network::single_population(5, Activation::Tanh, hp(), 1).unwrap();
        net.populations[0].v = DVector::from_element(5, 0.7);
        let run = net.run_fast_to_equilibrium(1e-9, 0).unwrap();
        assert_eq!(run.steps, 0);
        assert!(!run.converged);

        let mut net = Network::single_population(5, Activation::Tanh, hp(), 1).unwrap();
        let run = net.run_fast_to_equilibrium(1e-9, 10).unwrap();
        assert!(run.converged);
        assert_eq!(run.steps, 0);
    }

    #[test]
    fn algebraic_mode_pins_errors() {
        let mut net = Network::single_population(6, Activation::Tanh, hp(), 11)
            .unwrap()
            .with_error_mode(ErrorMode::Algebraic);
        net.set_values(&DVector::from_fn(6, |i, _| i as f64 * 0.3 - 0.8)).unwrap();
        net.step_fast().unwrap();
        let errs = net.prediction_errors_at(&net.values()).unwrap();
        assert!((&errs[0] - &net.populations[0].eps).amax() < 1e-15);
    }

    proptest! {
        #[test]
        fn self_connection_diagonal_stays_zero(seed in 0u64..1000, steps in 1usize..40) {
            let mut net = Network::single_population(8, Activation::Tanh, hp(), seed).unwrap();
            let target = DVector::from_fn(8, |i, _| if (seed >> i) & 1 == 1 { 1.0 } else { -1.0 });
            net.clamp_all(&target).unwrap();
            for _ in 0..steps {
                net.step_fast().unwrap();
                net.step_slow().unwrap();
            }
            let c = &net.connections[0];
            for i in 0..8 {
                prop_assert_eq!(c.m[(i, i)], 0.0);
                prop_assert_eq!(c.w[(i, i)], 0.0);
            }
            prop_assert_eq!(net.values(), target);
        }
    }
}

//! Linear stability of the frozen fast dynamics around trained equilibria.
//!
//! The state is ordered as all error nodes (population order) followed by
//! all value nodes. Eigenvalues come from a real Schur decomposition.

use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{PchnError, Result};
use crate::format::fmt_sig;
use crate::network::Network;

pub type Complex64 = Complex<f64>;

/// Value nodes closer than this to an activation kink are rejected.
pub const KINK_TOLERANCE: f64 = 1e-8;

/// Exact Jacobian of the unclamped fast dynamics at `state`.
pub fn jacobian_analytic(net: &Network, state: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = net.total_units();
    if state.len() != 2 * n {
        return Err(PchnError::DimensionMismatch {
            expected: 2 * n,
            found: state.len(),
        });
    }
    let eps = net.split(&state.rows(0, n).into_owned())?;
    let v = net.split(&state.rows(n, n).into_owned())?;
    let offsets: Vec<usize> = net
        .populations
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.size;
            Some(o)
        })
        .collect();
    for (i, p) in net.populations.iter().enumerate() {
        for (k, &x) in v[i].iter().enumerate() {
            if p.activation.kink_distance(x).is_some_and(|d| d < KINK_TOLERANCE) {
                return Err(PchnError::NonDifferentiable {
                    index: n + offsets[i] + k,
                    value: x,
                });
            }
        }
    }

    let h = &net.hyper;
    let (tau_e, tau_v, zeta) = (h.tau_error(), h.tau_value(), h.zeta);
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for (i, p) in net.populations.iter().enumerate() {
        let ei = offsets[i];
        let vi = n + offsets[i];
        let act = p.activation;

        // Error rows: d eps_i / dt = (v_i - M sigma(v_src) - b - zeta eps_i) / tau_e
        let c = &net.connections[net.incoming_connection(i)];
        let src_act = net.populations[c.src].activation;
        let vs = n + offsets[c.src];
        for r in 0..p.size {
            jac[(ei + r, ei + r)] -= zeta / tau_e;
            jac[(ei + r, vi + r)] += 1.0 / tau_e;
            for (q, &x) in v[c.src].iter().enumerate() {
                jac[(ei + r, vs + q)] -= c.m[(r, q)] * src_act.derivative(x) / tau_e;
            }
        }

        // Value rows: d v_i / dt = (-eps_i + sigma'(v_i) . sum W eps_dst) / tau_v
        let mut feedback = DVector::zeros(p.size);
        for (ci, c) in net.connections.iter().enumerate().filter(|(_, c)| c.src == i) {
            let _ = ci;
            feedback.gemv(1.0, &c.w, &eps[c.dst], 1.0);
            let ed = offsets[c.dst];
            for r in 0..p.size {
                let gain = act.derivative(v[i][r]) / tau_v;
                for q in 0..c.w.ncols() {
                    jac[(vi + r, ed + q)] += gain * c.w[(r, q)];
                }
            }
        }
        for r in 0..p.size {
            jac[(vi + r, ei + r)] -= 1.0 / tau_v;
            jac[(vi + r, vi + r)] += act.second_derivative(v[i][r]) * feedback[r] / tau_v;
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian of the unclamped fast dynamics.
pub fn jacobian_fd(net: &Network, state: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(PchnError::InvalidConfig(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let dim = state.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut probe = state.clone();
    for j in 0..dim {
        let x = state[j];
        probe[j] = x + h;
        let plus = net.fast_rhs(&probe)?;
        probe[j] = x - h;
        let minus = net.fast_rhs(&probe)?;
        probe[j] = x;
        let col = (plus - minus) / (2.0 * h);
        if col.iter().any(|c| !c.is_finite()) {
            return Err(PchnError::Diverged {
                step: 0,
                what: "finite-difference evaluation",
            });
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// All eigenvalues of a real square matrix, sorted by real then imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 1000 * m.nrows().max(1))
        .ok_or(PchnError::Eigen)?;
    let mut eigs: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(eigs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex64>,
    pub max_real_part: f64,
    /// Eigenvalues whose real part is within 1% of -1/(2 tau).
    pub count_at_minus_half_tau: usize,
    /// Eigenvalues within 0.1 of -1.
    pub count_near_minus_one: usize,
    /// Eigenvalues with |Re| < 0.1.
    pub near_zero: Vec<Complex64>,
    pub all_stable: bool,
    pub tau: f64,
    /// Sup-norm of the fast derivative at the analysed state.
    pub residual: f64,
    /// Euclidean distance from the equilibrium's value nodes to the target.
    pub distance_to_target: f64,
    /// The analysed state, errors then values; empty when built from a bare
    /// eigenvalue list.
    pub equilibrium: DVector<f64>,
}

impl SpectrumReport {
    pub fn classify(eigenvalues: Vec<Complex64>, tau: f64) -> Self {
        let half = 1.0 / (2.0 * tau);
        let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let count_at_minus_half_tau = eigenvalues
            .iter()
            .filter(|z| (z.re + half).abs() / half < 0.01)
            .count();
        let count_near_minus_one = eigenvalues
            .iter()
            .filter(|z| (**z - Complex64::new(-1.0, 0.0)).norm() < 0.1)
            .count();
        let near_zero = eigenvalues.iter().copied().filter(|z| z.re.abs() < 1e-1).collect();
        SpectrumReport {
            all_stable: eigenvalues.iter().all(|z| z.re < 0.0),
            eigenvalues,
            max_real_part,
            count_at_minus_half_tau,
            count_near_minus_one,
            near_zero,
            tau,
            residual: 0.0,
            distance_to_target: 0.0,
            equilibrium: DVector::zeros(0),
        }
    }

    /// Eigenvalues whose real part has magnitude in [1e-4, 1e-2].
    pub fn slow_modes(&self) -> Vec<Complex64> {
        self.near_zero
            .iter()
            .copied()
            .filter(|z| (1e-4..=1e-2).contains(&z.re.abs()))
            .collect()
    }

    pub fn majority_at_minus_half_tau(&self) -> bool {
        2 * self.count_at_minus_half_tau > self.eigenvalues.len()
    }

    pub fn summary(&self) -> String {
        format!(
            "all_stable={} max_re={} at_-1/(2tau)={}/{} near_-1={} near_zero={} slow_modes={} residual={} distance_to_target={}",
            self.all_stable,
            fmt_sig(self.max_real_part, 6),
            self.count_at_minus_half_tau,
            self.eigenvalues.len(),
            self.count_near_minus_one,
            self.near_zero.len(),
            self.slow_modes().len(),
            fmt_sig(self.residual, 3),
            fmt_sig(self.distance_to_target, 6)
        )
    }

    /// One `re,im` row per eigenvalue and a `#`-prefixed summary footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im\n");
        for z in &self.eigenvalues {
            writeln!(out, "{},{}", fmt_sig(z.re, 10), fmt_sig(z.im, 10)).unwrap();
        }
        writeln!(out, "# {}", self.summary()).unwrap();
        out
    }
}

/// Controls how the equilibrium near a target is located.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    pub tol: f64,
    /// Fast-dynamics steps before switching to Newton refinement.
    pub max_steps: usize,
    pub newton_iterations: usize,
    /// Largest accepted |v_eq - target| as a fraction of |target|.
    pub max_relative_drift: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            tol: 1e-8,
            max_steps: 20_000,
            newton_iterations: 20,
            max_relative_drift: 0.1,
        }
    }
}

/// Relaxes the frozen network from `target` (errors zeroed) and returns the
/// classified spectrum of the equilibrium it settles into.
pub fn analyze_equilibrium(net: &Network, target: &DVector<f64>, tol: f64) -> Result<SpectrumReport> {
    analyze_equilibrium_with(
        net,
        target,
        &EquilibriumOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn analyze_equilibrium_with(net: &Network, target: &DVector<f64>, opts: &EquilibriumOptions) -> Result<SpectrumReport> {
    let mut work = net.clone();
    work.unclamp_all();
    work.freeze();
    work.set_values(target)?;
    work.reset_errors();
    let run = work.run_fast_to_equilibrium(opts.tol, opts.max_steps)?;
    let mut state = work.state();
    let mut residual = run.residual;
    if !run.converged {
        (state, residual) = newton_refine(&work, state, opts)?;
    }
    let n = work.total_units();
    let v_eq = state.rows(n, n).into_owned();
    let distance = (&v_eq - target).norm();
    if !(residual < opts.tol) || distance > opts.max_relative_drift * target.norm().max(f64::MIN_POSITIVE) {
        return Err(PchnError::NotAnEquilibrium { residual, distance });
    }
    let jac = jacobian_analytic(&work, &state)?;
    let mut report = SpectrumReport::classify(eigenvalues(&jac)?, work.hyper.tau);
    report.residual = residual;
    report.distance_to_target = distance;
    report.equilibrium = state;
    Ok(report)
}

fn newton_refine(net: &Network, mut state: DVector<f64>, opts: &EquilibriumOptions) -> Result<(DVector<f64>, f64)> {
    let mut f = net.fast_rhs(&state)?;
    let mut residual = f.amax();
    for _ in 0..opts.newton_iterations {
        if residual < opts.tol {
            break;
        }
        let jac = match jacobian_analytic(net, &state) {
            Ok(j) => j,
            Err(PchnError::NonDifferentiable { .. }) => break,
            Err(e) => return Err(e),
        };
        let Some(step) = jac.lu().solve(&f) else { break };
        let candidate = &state - step;
        let f_new = net.fast_rhs(&candidate)?;
        if !f_new.iter().all(|x| x.is_finite()) {
            break;
        }
        state = candidate;
        f = f_new;
        residual = f.amax();
    }
    Ok((state, residual))
}

/// |trace(J) - sum Re(lambda)| / max(|trace(J)|, 1).
pub fn trace_gap(jac: &DMatrix<f64>, eigs: &[Complex64]) -> f64 {
    let tr = jac.trace();
    let sum: f64 = eigs.iter().map(|z| z.re).sum();
    (tr - sum).abs() / tr.abs().max(1.0)
}

/// Largest distance from any eigenvalue to the conjugate of its nearest
/// partner; zero for a conjugate-closed list.
pub fn conjugate_defect(eigs: &[Complex64]) -> f64 {
    eigs.iter()
        .map(|z| {
            eigs.iter()
                .map(|w| (w - z.conj()).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::network::Hyperparams;

    fn zero_weight_net(n: usize, act: Activation) -> Network {
        let mut net = Network::single_population(n, act, Hyperparams::default(), 0).unwrap();
        net.connections[0].m.fill(0.0);
        net.connections[0].w.fill(0.0);
        net.freeze();
        net
    }

    #[test]
    fn decoupled_identity_block_structure() {
        let net = zero_weight_net(3, Activation::Identity);
        let tau = net.hyper.tau;
        let state = DVector::from_fn(6, |i, _| i as f64 * 0.1 - 0.2);
        let j = jacobian_analytic(&net, &state).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let d = if r == c { 1.0 / tau } else { 0.0 };
                assert_eq!(j[(r, c)], -d);
                assert_eq!(j[(r, 3 + c)], d);
                assert_eq!(j[(3 + r, c)], -d);
                assert_eq!(j[(3 + r, 3 + c)], 0.0);
            }
        }
        // (-1 +- i sqrt(3)) / (2 tau)
        let eigs = eigenvalues(&j).unwrap();
        for z in eigs {
            assert!((z.re + 0.5 / tau).abs() < 1e-12);
            assert!((z.im.abs() - 3f64.sqrt() / (2.0 * tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_step_bounds() {
        let net = zero_weight_net(2, Activation::Tanh);
        let s = DVector::zeros(4);
        assert!(jacobian_fd(&net, &s, 1e-8).is_err());
        assert!(jacobian_fd(&net, &s, 1e-2).is_err());
        assert!(jacobian_fd(&net, &s, 1e-5).is_ok());
    }

    #[test]
    fn relu_kink_rejected() {
        let net = zero_weight_net(2, Activation::Relu);
        let s = DVector::from_vec(vec![0.0, 0.0, 0.5, 1e-9]);
        assert!(matches!(
            jacobian_analytic(&net, &s),
            Err(PchnError::NonDifferentiable { index: 3, .. })
        ));
    }

    #[test]
    fn classification_counts() {
        let tau = 0.5;
        let eigs = vec![
            Complex64::new(-1.0, 0.9),
            Complex64::new(-1.0, -0.9),
            Complex64::new(-1.004, 0.0),
            Complex64::new(-0.95, 0.0),
            Complex64::new(-0.003, 0.0),
            Complex64::new(-0.05, 0.0),
        ];
        let r = SpectrumReport::classify(eigs, tau);
        assert_eq!(r.count_at_minus_half_tau, 3);
        assert_eq!(r.count_near_minus_one, 2);
        assert_eq!(r.near_zero.len(), 2);
        assert_eq!(r.slow_modes(), vec![Complex64::new(-0.003, 0.0)]);
        assert!(r.all_stable);
        assert_eq!(r.max_real_part, -0.003);
        assert!(!r.majority_at_minus_half_tau());

        let r = SpectrumReport::classify(vec![Complex64::new(0.0, 0.0)], tau);
        assert!(!r.all_stable);
    }

    #[test]
    fn csv_has_footer() {
        let r = SpectrumReport::classify(vec![Complex64::new(-0.5, 0.25), Complex64::new(-0.5, -0.25)], 1.0);
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "re,im");
        assert_eq!(lines[1], "-0.5,0.25");
        assert!(lines[3].starts_with("# all_stable=true"));
    }

    #[test]
    fn untrained_net_does_not_hold_a_target() {
        let mut net = Network::single_population(20, Activation::Tanh, Hyperparams::default(), 3).unwrap();
        net.freeze();
        let target = DVector::from_fn(20, |i, _| if i % 3 == 0 { 1.0 } else { -1.0 });
        assert!(matches!(
            analyze_equilibrium(&net, &target, 1e-8),
            Err(PchnError::NotAnEquilibrium { .. })
        ));
    }
}

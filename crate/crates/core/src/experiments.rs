//! Target generation, probe construction, distance measurement and the
//! recall studies run against a trained, frozen network.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{PchnError, Result};
use crate::format::fmt_sig;
use crate::hopfield::{hebbian_store, recall};
use crate::network::Network;
use crate::rng::{derive_seed, rng_from_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetKind {
    /// Entries i.i.d. standard normal.
    RealGaussian,
    /// Entries +1 or -1 with equal probability.
    BinarySign,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::RealGaussian => "real",
            TargetKind::BinarySign => "binary",
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            TargetKind::RealGaussian => Metric::Euclidean,
            TargetKind::BinarySign => Metric::Hamming,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = PchnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "real" | "realgaussian" | "gaussian" => Ok(TargetKind::RealGaussian),
            "binary" | "binarysign" | "sign" => Ok(TargetKind::BinarySign),
            other => Err(PchnError::InvalidConfig(format!("unknown target kind '{other}'"))),
        }
    }
}

/// `N` patterns of dimension `d`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub kind: TargetKind,
    pub patterns: DMatrix<f64>,
    pub seed: u64,
}

impl TargetSet {
    pub fn from_patterns(kind: TargetKind, patterns: DMatrix<f64>, seed: u64) -> Self {
        TargetSet { kind, patterns, seed }
    }

    pub fn len(&self) -> usize {
        self.patterns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.patterns.ncols()
    }

    pub fn pattern(&self, k: usize) -> DVector<f64> {
        self.patterns.row(k).transpose()
    }
}

pub fn gen_targets(kind: TargetKind, n: usize, d: usize, seed: u64) -> TargetSet {
    let mut rng = rng_from_seed(seed);
    let patterns = DMatrix::from_fn(n, d, |_, _| match kind {
        TargetKind::RealGaussian => StandardNormal.sample(&mut rng),
        TargetKind::BinarySign => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    });
    TargetSet { kind, patterns, seed }
}

/// Adds i.i.d. N(0, `variance`) noise to every component.
pub fn perturb_gaussian(x: &DVector<f64>, variance: f64, seed: u64) -> DVector<f64> {
    if variance <= 0.0 {
        return x.clone();
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    let mut rng = rng_from_seed(seed);
    x.map(|xi| xi + normal.sample(&mut rng))
}

/// Flips the sign of exactly `k` distinct, uniformly chosen components.
pub fn perturb_flip(x: &DVector<f64>, k: usize, seed: u64) -> Result<DVector<f64>> {
    if k > x.len() {
        return Err(PchnError::InvalidConfig(format!(
            "cannot flip {k} bits of a {}-bit pattern",
            x.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = x.clone();
    for i in sample(&mut rng, x.len(), k) {
        out[i] = -out[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Euclidean,
    /// Count of sign mismatches, with sign(0) taken as +1.
    Hamming,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Hamming => "hamming",
        }
    }
}

pub fn distance(a: &DVector<f64>, b: &DVector<f64>, metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PchnError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(match metric {
        Metric::Euclidean => (a - b).norm(),
        Metric::Hamming => a
            .iter()
            .zip(b.iter())
            .filter(|(x, y)| (**x >= 0.0) != (**y >= 0.0))
            .count() as f64,
    })
}

/// One distance sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub run_id: usize,
    pub t: f64,
    pub target_id: usize,
    pub distance: f64,
    pub metric: Metric,
    /// The run stopped early because the dynamics diverged; this is the last
    /// finite state.
    pub diverged: bool,
}

pub const TRACE_HEADER: &str = "run_id,t,target_id,distance,metric,flags";

pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * records.len() + 64);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            fmt_sig(r.t, 10),
            r.target_id,
            fmt_sig(r.distance, 10),
            r.metric.name(),
            if r.diverged { "diverged" } else { "" }
        )
        .unwrap();
    }
    out
}

/// Integration horizon, sampling and perturbation strengths for a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    /// Simulated seconds per run.
    pub horizon: f64,
    pub sample_interval: f64,
    /// Per-component variance of the Gaussian perturbation (real targets).
    pub perturb_variance: f64,
    /// Bits flipped per probe (binary targets).
    pub flip_bits: usize,
    pub random_runs: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            horizon: 20.0,
            sample_interval: 0.05,
            perturb_variance: 0.5,
            flip_bits: 13,
            random_runs: 10,
            seed: 0,
        }
    }
}

/// Summary of one run of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: usize,
    /// Target the probe was built from, if any.
    pub source_target: Option<usize>,
    pub initial_distances: Vec<f64>,
    pub final_distances: Vec<f64>,
    pub diverged: bool,
    /// Distance under which a run counts as having reached a target.
    pub threshold: f64,
}

impl RunOutcome {
    /// Reached its source target (or any target, for unsourced runs).
    pub fn success(&self) -> bool {
        match self.source_target {
            Some(k) => !self.diverged && self.final_distances[k] <= self.threshold,
            None => self.reached_any(),
        }
    }

    pub fn reached_any(&self) -> bool {
        !self.diverged && self.final_distances.iter().any(|&d| d <= self.threshold)
    }

    pub fn closest_target(&self) -> (usize, f64) {
        self.final_distances
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |a, (i, d)| if d < a.1 { (i, d) } else { a })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyResult {
    pub records: Vec<TraceRecord>,
    pub runs: Vec<RunOutcome>,
}

impl StudyResult {
    pub fn success_fraction(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().filter(|r| r.success()).count() as f64 / self.runs.len() as f64
    }

    pub fn to_csv(&self) -> String {
        trace_csv(&self.records)
    }
}

/// Sets v to `probe`, zeroes the error nodes and integrates the frozen fast
/// dynamics, sampling the distance to every target.
pub fn simulate_probe(
    net: &Network,
    probe: &DVector<f64>,
    targets: &TargetSet,
    cfg: &StudyConfig,
    run_id: usize,
) -> Result<(Vec<TraceRecord>, DVector<f64>, bool)> {
    let metric = targets.kind.metric();
    let mut net = net.clone();
    net.unclamp_all();
    net.set_values(probe)?;
    net.reset_errors();
    let dt = net.hyper.dt;
    let total = (cfg.horizon / dt).round() as usize;
    let every = ((cfg.sample_interval / dt).round() as usize).max(1);
    let patterns: Vec<_> = (0..targets.len()).map(|k| targets.pattern(k)).collect();

    let mut records = Vec::with_capacity((total / every + 2) * patterns.len());
    let sample = |records: &mut Vec<TraceRecord>, step: usize, v: &DVector<f64>, diverged: bool| -> Result<()> {
        for (k, p) in patterns.iter().enumerate() {
            records.push(TraceRecord {
                run_id,
                t: step as f64 * dt,
                target_id: k,
                distance: distance(v, p, metric)?,
                metric,
                diverged,
            });
        }
        Ok(())
    };

    sample(&mut records, 0, &net.values(), false)?;
    for step in 1..=total {
        if let Err(e) = net.step_fast() {
            return match e {
                PchnError::Diverged { .. } => {
                    let v = net.values();
                    sample(&mut records, step - 1, &v, true)?;
                    Ok((records, v, true))
                }
                other => Err(other),
            };
        }
        if step % every == 0 || step == total {
            sample(&mut records, step, &net.values(), false)?;
        }
    }
    Ok((records, net.values(), false))
}

fn outcome_from(records: &[TraceRecord], n_targets: usize, run_id: usize, source: Option<usize>, diverged: bool, threshold: f64) -> RunOutcome {
    RunOutcome {
        run_id,
        source_target: source,
        initial_distances: records[..n_targets].iter().map(|r| r.distance).collect(),
        final_distances: records[records.len() - n_targets..].iter().map(|r| r.distance).collect(),
        diverged,
        threshold,
    }
}

/// Probe built from target `k`: 13-style bit flips for binary targets,
/// Gaussian noise for real ones.
pub fn make_probe(targets: &TargetSet, k: usize, cfg: &StudyConfig, seed: u64) -> Result<DVector<f64>> {
    let x = targets.pattern(k);
    match targets.kind {
        TargetKind::BinarySign => perturb_flip(&x, cfg.flip_bits, seed),
        TargetKind::RealGaussian => Ok(perturb_gaussian(&x, cfg.perturb_variance, seed)),
    }
}

/// Success threshold for a probe started at `initial_distance` from its
/// source: Hamming <= 1, or Euclidean <= 10% of the initial distance.
pub fn recovery_threshold(kind: TargetKind, initial_distance: f64) -> f64 {
    match kind {
        TargetKind::BinarySign => 1.0,
        TargetKind::RealGaussian => 0.1 * initial_distance,
    }
}

/// Threshold for runs with no source target: the recovery threshold of a
/// typical perturbation of this study's strength.
pub fn random_start_threshold(kind: TargetKind, d: usize, cfg: &StudyConfig) -> f64 {
    match kind {
        TargetKind::BinarySign => 1.0,
        TargetKind::RealGaussian => 0.1 * (cfg.perturb_variance * d as f64).sqrt(),
    }
}

fn run_all<F>(n: usize, f: F) -> Result<Vec<(Vec<TraceRecord>, RunOutcome)>>
where
    F: Fn(usize) -> Result<(Vec<TraceRecord>, RunOutcome)> + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n.max(1));
    let mut slots: Vec<Option<Result<(Vec<TraceRecord>, RunOutcome)>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(n.div_ceil(workers).max(1)).enumerate() {
            let f = &f;
            let base = w * n.div_ceil(workers).max(1);
            s.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(base + i));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every run executed")).collect()
}

fn collect(results: Vec<(Vec<TraceRecord>, RunOutcome)>) -> StudyResult {
    let mut out = StudyResult::default();
    for (records, outcome) in results {
        out.records.extend(records);
        out.runs.push(outcome);
    }
    out
}

/// One run per target, each started from a perturbed copy of that target.
pub fn perturbation_study(net: &Network, targets: &TargetSet, cfg: &StudyConfig) -> Result<StudyResult> {
    let results = run_all(targets.len(), |k| {
        let probe = make_probe(targets, k, cfg, derive_seed(cfg.seed, Stream::Perturbation, k as u64))?;
        let (records, _, diverged) = simulate_probe(net, &probe, targets, cfg, k)?;
        let init = records[k].distance;
        let outcome = outcome_from(&records, targets.len(), k, Some(k), diverged, recovery_threshold(targets.kind, init));
        Ok((records, outcome))
    })?;
    Ok(collect(results))
}

/// `runs` independent perturbations of a single target.
pub fn discrimination_study(
    net: &Network,
    targets: &TargetSet,
    target_id: usize,
    runs: usize,
    cfg: &StudyConfig,
) -> Result<StudyResult> {
    if target_id >= targets.len() {
        return Err(PchnError::InvalidConfig(format!(
            "target {target_id} out of range ({} targets)",
            targets.len()
        )));
    }
    let results = run_all(runs, |r| {
        let seed = derive_seed(cfg.seed, Stream::Discrimination, r as u64);
        let probe = make_probe(targets, target_id, cfg, seed)?;
        let (records, _, diverged) = simulate_probe(net, &probe, targets, cfg, r)?;
        let init = records[target_id].distance;
        let outcome = outcome_from(
            &records,
            targets.len(),
            r,
            Some(target_id),
            diverged,
            recovery_threshold(targets.kind, init),
        );
        Ok((records, outcome))
    })?;
    Ok(collect(results))
}

/// Draws a start state from the target distribution, independent of the
/// stored targets.
pub fn random_start(kind: TargetKind, d: usize, seed: u64) -> DVector<f64> {
    gen_targets(kind, 1, d, seed).pattern(0)
}

/// Runs started from states drawn from the target distribution.
pub fn random_init_study(net: &Network, targets: &TargetSet, cfg: &StudyConfig) -> Result<StudyResult> {
    let d = targets.dim();
    let threshold = random_start_threshold(targets.kind, d, cfg);
    let results = run_all(cfg.random_runs, |r| {
        let start = random_start(targets.kind, d, derive_seed(cfg.seed, Stream::RandomInit, r as u64));
        let (records, _, diverged) = simulate_probe(net, &start, targets, cfg, r)?;
        let outcome = outcome_from(&records, targets.len(), r, None, diverged, threshold);
        Ok((records, outcome))
    })?;
    Ok(collect(results))
}

pub const BASELINE_HEADER: &str = "run_id,target_id,initial_distance,final_distance,sweeps,converged";

/// Classical Hopfield recall of one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub run_id: usize,
    pub target_id: usize,
    pub initial_distance: usize,
    pub final_distance: usize,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineResult {
    pub rows: Vec<BaselineRow>,
}

impl BaselineResult {
    /// Fraction of probes recalled with no wrong bit.
    pub fn exact_recovery_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.final_distance == 0).count() as f64 / self.rows.len() as f64
    }

    /// Fraction of probes ending within Hamming distance 1, the PC success test.
    pub fn success_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.final_distance <= 1).count() as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(BASELINE_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.run_id, r.target_id, r.initial_distance, r.final_distance, r.sweeps, r.converged
            )
            .unwrap();
        }
        out
    }
}

/// Hebbian storage of the targets, then recall from the same probes the
/// perturbation study uses.
pub fn hopfield_baseline(targets: &TargetSet, cfg: &StudyConfig, max_sweeps: usize) -> Result<BaselineResult> {
    if targets.kind != TargetKind::BinarySign {
        return Err(PchnError::UnsupportedKind("the Hopfield baseline needs binary targets"));
    }
    let net = hebbian_store(&targets.patterns)?;
    let mut out = BaselineResult::default();
    for k in 0..targets.len() {
        let x = targets.pattern(k);
        let probe = make_probe(targets, k, cfg, derive_seed(cfg.seed, Stream::Perturbation, k as u64))?;
        let r = recall(&net, &probe, max_sweeps, derive_seed(cfg.seed, Stream::Recall, k as u64));
        out.rows.push(BaselineRow {
            run_id: k,
            target_id: k,
            initial_distance: distance(&probe, &x, Metric::Hamming)? as usize,
            final_distance: distance(&r.v, &x, Metric::Hamming)? as usize,
            sweeps: r.sweeps,
            converged: r.converged,
        });
    }
    Ok(out)
}

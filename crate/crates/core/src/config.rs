//! Run configuration: a flat `key = value` file, command-line overrides on top,
//! and an echo of the effective settings that parses back to the same config.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activation::Activation;
use crate::error::{PchnError, Result};
use crate::experiments::{StudyConfig, TargetKind};
use crate::learning::{TargetOrder, TrainingSchedule};
use crate::network::{CorrectionMode, Hyperparams, Network, TimeConstantOverrides};
use crate::rng::{derive_seed, Stream};
use crate::stability::EquilibriumOptions;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// One 100-unit population predicting itself.
    Single100,
    /// Three populations of 50, 30 and 20 units in a predictive ring.
    Loop50_30_20,
    /// One self-predicting population, or a ring when several sizes are given.
    Custom(Vec<usize>),
}

impl Architecture {
    pub fn sizes(&self) -> Vec<usize> {
        match self {
            Architecture::Single100 => vec![100],
            Architecture::Loop50_30_20 => vec![50, 30, 20],
            Architecture::Custom(s) => s.clone(),
        }
    }

    pub fn total_units(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn build(&self, activation: Activation, hyper: Hyperparams, seed: u64) -> Result<Network> {
        let sizes = self.sizes();
        if sizes.len() == 1 {
            Network::single_population(sizes[0], activation, hyper, seed)
        } else {
            Network::ring(&sizes, activation, hyper, seed)
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Single100 => f.write_str("single100"),
            Architecture::Loop50_30_20 => f.write_str("loop50_30_20"),
            Architecture::Custom(s) => {
                let parts: Vec<String> = s.iter().map(|x| x.to_string()).collect();
                write!(f, "custom:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for Architecture {
    type Err = PchnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single100" => Ok(Architecture::Single100),
            "loop50_30_20" => Ok(Architecture::Loop50_30_20),
            other => {
                let list = other.strip_prefix("custom:").ok_or_else(|| {
                    PchnError::InvalidConfig(format!(
                        "unknown architecture '{s}' (expected single100, loop50_30_20 or custom:a,b,...)"
                    ))
                })?;
                let sizes = list
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| PchnError::InvalidConfig(format!("bad custom architecture '{s}': {e}")))?;
                if sizes.is_empty() || sizes.contains(&0) {
                    return Err(PchnError::InvalidConfig(format!(
                        "custom architecture needs positive sizes, got '{s}'"
                    )));
                }
                Ok(Architecture::Custom(sizes))
            }
        }
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "architecture",
    "target_kind",
    "activation",
    "n_targets",
    "seed",
    "output_dir",
    "tau",
    "gamma",
    "zeta",
    "dt",
    "tau_error",
    "tau_value",
    "gamma_prediction",
    "gamma_correction",
    "gamma_bias",
    "tie_weights",
    "duration_per_target",
    "epochs",
    "target_order",
    "reset_fast_state",
    "horizon",
    "sample_interval",
    "perturb_variance",
    "flip_bits",
    "random_runs",
    "eq_tol",
    "eq_max_steps",
    "max_sweeps",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub architecture: Architecture,
    pub target_kind: TargetKind,
    pub activation: Activation,
    pub hyper: Hyperparams,
    pub schedule: TrainingSchedule,
    pub n_targets: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub tie_weights: bool,
    pub study: StudyConfig,
    pub equilibrium: EquilibriumOptions,
    pub max_sweeps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architecture: Architecture::Single100,
            target_kind: TargetKind::BinarySign,
            activation: default_activation(TargetKind::BinarySign),
            hyper: Hyperparams::default(),
            schedule: TrainingSchedule::default(),
            n_targets: 10,
            seed: 0,
            output_dir: PathBuf::from("out"),
            tie_weights: false,
            study: StudyConfig::default(),
            equilibrium: EquilibriumOptions::default(),
            max_sweeps: 100,
        }
    }
}

/// ReLU for real-valued targets, tanh for binary ones.
pub fn default_activation(kind: TargetKind) -> Activation {
    match kind {
        TargetKind::RealGaussian => Activation::Relu,
        TargetKind::BinarySign => Activation::Tanh,
    }
}

/// Ordered raw settings before interpretation.
pub type Settings = BTreeMap<String, String>;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_settings(text: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            PchnError::InvalidConfig(format!("line {}: expected 'key = value', got '{raw}'", n + 1))
        })?;
        let key = normalize_key(k.trim());
        check_key(&key)?;
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn load_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| PchnError::io(path, e))?;
    parse_settings(&text)
}

/// Accepts `n-targets` as well as `n_targets`.
pub fn normalize_key(k: &str) -> String {
    k.replace('-', "_").to_ascii_lowercase()
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(PchnError::InvalidConfig(format!("unknown config key '{key}'")))
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| PchnError::InvalidConfig(format!("{key}: cannot parse '{v}': {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(PchnError::InvalidConfig(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn parse_order(v: &str) -> Result<TargetOrder> {
    match v.to_ascii_lowercase().as_str() {
        "sequential" => Ok(TargetOrder::Sequential),
        "shuffled" => Ok(TargetOrder::ShuffledPerEpoch),
        _ => Err(PchnError::InvalidConfig(format!(
            "target_order: expected sequential or shuffled, got '{v}'"
        ))),
    }
}

fn order_name(o: TargetOrder) -> &'static str {
    match o {
        TargetOrder::Sequential => "sequential",
        TargetOrder::ShuffledPerEpoch => "shuffled",
    }
}

fn optional_f64(key: &str, v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("none") || v.is_empty() {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

fn opt_str(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Builds a config from defaults overlaid with `settings`. Returns any
    /// warnings alongside.
    pub fn from_settings(settings: &Settings) -> Result<(Self, Vec<String>)> {
        let mut c = RunConfig::default();
        let mut activation: Option<Activation> = None;
        let mut ov = TimeConstantOverrides::default();
        for (key, v) in settings {
            let v = v.as_str();
            match key.as_str() {
                "architecture" => c.architecture = v.parse()?,
                "target_kind" => c.target_kind = v.parse()?,
                "activation" => activation = Some(v.parse()?),
                "n_targets" => c.n_targets = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                "tau" => c.hyper.tau = parse_value(key, v)?,
                "gamma" => c.hyper.gamma = parse_value(key, v)?,
                "zeta" => c.hyper.zeta = parse_value(key, v)?,
                "dt" => c.hyper.dt = parse_value(key, v)?,
                "tau_error" => ov.tau_error = optional_f64(key, v)?,
                "tau_value" => ov.tau_value = optional_f64(key, v)?,
                "gamma_prediction" => ov.gamma_prediction = optional_f64(key, v)?,
                "gamma_correction" => ov.gamma_correction = optional_f64(key, v)?,
                "gamma_bias" => ov.gamma_bias = optional_f64(key, v)?,
                "tie_weights" => c.tie_weights = parse_bool(key, v)?,
                "duration_per_target" => c.schedule.duration_per_target = parse_value(key, v)?,
                "epochs" => c.schedule.epochs = parse_value(key, v)?,
                "target_order" => c.schedule.target_order = parse_order(v)?,
                "reset_fast_state" => c.schedule.reset_fast_state = parse_bool(key, v)?,
                "horizon" => c.study.horizon = parse_value(key, v)?,
                "sample_interval" => c.study.sample_interval = parse_value(key, v)?,
                "perturb_variance" => c.study.perturb_variance = parse_value(key, v)?,
                "flip_bits" => c.study.flip_bits = parse_value(key, v)?,
                "random_runs" => c.study.random_runs = parse_value(key, v)?,
                "eq_tol" => c.equilibrium.tol = parse_value(key, v)?,
                "eq_max_steps" => c.equilibrium.max_steps = parse_value(key, v)?,
                "max_sweeps" => c.max_sweeps = parse_value(key, v)?,
                other => check_key(other)?,
            }
        }
        c.hyper.overrides = ov;
        let mut warnings = Vec::new();
        let preferred = default_activation(c.target_kind);
        c.activation = activation.unwrap_or(preferred);
        if c.activation != preferred {
            warnings.push(format!(
                "activation {} overrides the default {} for {} targets",
                c.activation,
                preferred,
                c.target_kind.name()
            ));
        }
        c.study.seed = c.seed;
        c.validate()?;
        Ok((c, warnings))
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.schedule.validate()?;
        if self.n_targets == 0 {
            return Err(PchnError::InvalidConfig("n_targets must be at least 1".into()));
        }
        let d = self.architecture.total_units();
        if self.target_kind == TargetKind::BinarySign && self.study.flip_bits > d {
            return Err(PchnError::InvalidConfig(format!(
                "flip_bits ({}) exceeds the number of units ({d})",
                self.study.flip_bits
            )));
        }
        let s = &self.study;
        if !(s.horizon.is_finite() && s.horizon >= 0.0) {
            return Err(PchnError::InvalidConfig("horizon must be non-negative".into()));
        }
        if !(s.sample_interval.is_finite() && s.sample_interval > 0.0) {
            return Err(PchnError::InvalidConfig("sample_interval must be positive".into()));
        }
        if !(s.perturb_variance.is_finite() && s.perturb_variance >= 0.0) {
            return Err(PchnError::InvalidConfig("perturb_variance must be non-negative".into()));
        }
        if !(self.equilibrium.tol.is_finite() && self.equilibrium.tol > 0.0) {
            return Err(PchnError::InvalidConfig("eq_tol must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(PchnError::InvalidConfig("max_sweeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective settings, one `key = value` line per key in [`KEYS`] order.
    pub fn echo(&self) -> String {
        let h = &self.hyper;
        let o = &h.overrides;
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("architecture", self.architecture.to_string());
        put("target_kind", self.target_kind.name().to_string());
        put("activation", self.activation.to_string());
        put("n_targets", self.n_targets.to_string());
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("tau", h.tau.to_string());
        put("gamma", h.gamma.to_string());
        put("zeta", h.zeta.to_string());
        put("dt", h.dt.to_string());
        put("tau_error", opt_str(o.tau_error));
        put("tau_value", opt_str(o.tau_value));
        put("gamma_prediction", opt_str(o.gamma_prediction));
        put("gamma_correction", opt_str(o.gamma_correction));
        put("gamma_bias", opt_str(o.gamma_bias));
        put("tie_weights", self.tie_weights.to_string());
        put("duration_per_target", self.schedule.duration_per_target.to_string());
        put("epochs", self.schedule.epochs.to_string());
        put("target_order", order_name(self.schedule.target_order).to_string());
        put("reset_fast_state", self.schedule.reset_fast_state.to_string());
        put("horizon", self.study.horizon.to_string());
        put("sample_interval", self.study.sample_interval.to_string());
        put("perturb_variance", self.study.perturb_variance.to_string());
        put("flip_bits", self.study.flip_bits.to_string());
        put("random_runs", self.study.random_runs.to_string());
        put("eq_tol", self.equilibrium.tol.to_string());
        put("eq_max_steps", self.equilibrium.max_steps.to_string());
        put("max_sweeps", self.max_sweeps.to_string());
        out
    }

    pub fn weight_seed(&self) -> u64 {
        derive_seed(self.seed, Stream::WeightInit, 0)
    }

    pub fn target_seed(&self) -> u64 {
        derive_seed(self.seed, Stream::Targets, 0)
    }

    pub fn order_seed(&self) -> u64 {
        derive_seed(self.seed, Stream::TargetOrder, 0)
    }

    /// Untrained network for this configuration.
    pub fn build_network(&self) -> Result<Network> {
        let net = self
            .architecture
            .build(self.activation, self.hyper, self.weight_seed())?;
        Ok(if self.tie_weights {
            net.with_correction_mode(CorrectionMode::Tied)
        } else {
            net
        })
    }

    pub fn targets(&self) -> crate::experiments::TargetSet {
        crate::experiments::gen_targets(
            self.target_kind,
            self.n_targets,
            self.architecture.total_units(),
            self.target_seed(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[(&str, &str)]) -> Settings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn architecture_names() {
        for a in [
            Architecture::Single100,
            Architecture::Loop50_30_20,
            Architecture::Custom(vec![4, 5, 6]),
        ] {
            assert_eq!(a.to_string().parse::<Architecture>().unwrap(), a);
        }
        assert_eq!(Architecture::Loop50_30_20.total_units(), 100);
        assert!("custom:3,0".parse::<Architecture>().is_err());
        assert!("ring".parse::<Architecture>().is_err());
    }

    #[test]
    fn file_parsing() {
        let s = parse_settings("# comment\n\ntau = 0.5  # trailing\nn-targets=3\n").unwrap();
        assert_eq!(s, settings(&[("tau", "0.5"), ("n_targets", "3")]));
        assert!(parse_settings("bogus = 1").is_err());
        assert!(parse_settings("tau 1").is_err());
    }

    #[test]
    fn activation_follows_target_kind() {
        let (c, w) = RunConfig::from_settings(&settings(&[("target_kind", "real")])).unwrap();
        assert_eq!(c.activation, Activation::Relu);
        assert!(w.is_empty());
        let (c, w) = RunConfig::from_settings(&settings(&[("activation", "relu")])).unwrap();
        assert_eq!(c.activation, Activation::Relu);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn rejects_slow_fast_inversion() {
        let err = RunConfig::from_settings(&settings(&[("tau", "20")])).unwrap_err();
        assert!(matches!(err, PchnError::InvalidConfig(_)));
        assert!(RunConfig::from_settings(&settings(&[("tau_value", "12")])).is_err());
        assert!(RunConfig::from_settings(&settings(&[("flip_bits", "101")])).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let (c, _) = RunConfig::from_settings(&settings(&[
            ("architecture", "custom:7,3"),
            ("target_kind", "real"),
            ("tau_value", "0.7"),
            ("dt", "0.003"),
            ("target_order", "shuffled"),
            ("seed", "18446744073709551615"),
            ("perturb_variance", "0.1"),
        ]))
        .unwrap();
        let echoed = c.echo();
        let (back, _) = RunConfig::from_settings(&parse_settings(&echoed).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.echo(), echoed);
        assert_eq!(echoed.lines().count(), KEYS.len());
    }
}

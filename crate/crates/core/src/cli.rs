//! `pchn` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use crate::checkpoint;
use crate::config::{load_settings, RunConfig, Settings, KEYS};
use crate::error::{PchnError, Result};
use crate::experiments::{self, BaselineResult, StudyResult};
use crate::format::{fmt_sig, write_atomic};
use crate::learning::{self, TrainingReport};
use crate::network::Network;
use crate::stability::{analyze_equilibrium_with, SpectrumReport};

pub const CHECKPOINT_FILE: &str = "checkpoint.pchn";
pub const TRAIN_FILE: &str = "train.csv";
pub const PERTURB_FILE: &str = "perturb.csv";
pub const RANDOM_FILE: &str = "random.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const ECHO_FILE: &str = "config.echo";

pub fn spectrum_file(k: usize) -> String {
    format!("spectrum_t{k}.csv")
}

fn subcommand(name: &'static str, about: &'static str, takes_checkpoint: bool) -> Command {
    let mut cmd = Command::new(name)
        .about(about)
        .args_override_self(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("flat key = value file"),
        )
        .arg(Arg::new("seed").long("seed").value_name("INT").help("root seed"))
        .arg(Arg::new("out").long("out").value_name("DIR").help("output directory"));
    if takes_checkpoint {
        cmd = cmd.arg(
            Arg::new("checkpoint")
                .long("checkpoint")
                .value_name("PATH")
                .help("trained weights [default: <out>/checkpoint.pchn]"),
        );
    }
    for &key in KEYS {
        if key == "seed" || key == "output_dir" {
            continue;
        }
        cmd = cmd.arg(Arg::new(key).long(key).value_name("VALUE").help("config override"));
    }
    cmd
}

pub fn command() -> Command {
    Command::new("pchn")
        .about("Train predictive-coding Hopfield-style networks and probe their memories")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand("train", "Train on generated targets and save a checkpoint", false))
        .subcommand(subcommand("perturb", "Relax from perturbed targets and trace distances", true))
        .subcommand(subcommand("stability", "Eigenvalue spectrum at each target equilibrium", true))
        .subcommand(subcommand("random-init", "Relax from random states and trace distances", true))
        .subcommand(subcommand(
            "hopfield-baseline",
            "Classical Hebbian network on the same targets and probes",
            false,
        ))
}

/// Defaults, then the `--config` file, then explicit flags.
pub fn settings_from_matches(m: &ArgMatches) -> Result<Settings> {
    let mut settings = match m.get_one::<String>("config") {
        Some(p) => load_settings(Path::new(p))?,
        None => Settings::new(),
    };
    if let Some(s) = m.get_one::<String>("seed") {
        settings.insert("seed".into(), s.clone());
    }
    if let Some(o) = m.get_one::<String>("out") {
        settings.insert("output_dir".into(), o.clone());
    }
    for &key in KEYS {
        if key == "seed" || key == "output_dir" {
            continue;
        }
        if let Some(v) = m.get_one::<String>(key) {
            settings.insert(key.into(), v.clone());
        }
    }
    Ok(settings)
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    write_atomic(&cfg.output_dir.join(ECHO_FILE), cfg.echo().as_bytes())
}

/// Trains, freezes and writes the checkpoint and training report. A failed
/// run leaves no checkpoint behind.
pub fn cmd_train(cfg: &RunConfig) -> Result<(Network, TrainingReport)> {
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    let result = (|| {
        write_echo(cfg)?;
        let mut net = cfg.build_network()?;
        let targets = cfg.targets();
        let report = learning::train(&mut net, &targets, &cfg.schedule, cfg.order_seed())?;
        learning::freeze(&mut net);
        checkpoint::save(&net, &ckpt)?;
        write_atomic(&cfg.output_dir.join(TRAIN_FILE), report.to_csv().as_bytes())?;
        Ok((net, report))
    })();
    if result.is_err() && ckpt.exists() {
        let _ = fs::remove_file(&ckpt);
    }
    result
}

/// Network for `cfg` with the checkpoint's weights, frozen.
pub fn load_trained(cfg: &RunConfig, path: &Path) -> Result<Network> {
    let weights = checkpoint::load(path)?;
    let mut net = cfg.build_network()?;
    checkpoint::apply(&mut net, weights)?;
    net.freeze();
    Ok(net)
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE), Path::to_path_buf)
}

pub fn cmd_perturb(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<StudyResult> {
    let net = load_trained(cfg, &checkpoint_path(cfg, ckpt))?;
    let result = experiments::perturbation_study(&net, &cfg.targets(), &cfg.study)?;
    write_echo(cfg)?;
    write_atomic(&cfg.output_dir.join(PERTURB_FILE), result.to_csv().as_bytes())?;
    Ok(result)
}

/// Per-target spectra; a target whose equilibrium cannot be found keeps its
/// error and the rest still run.
pub fn cmd_stability(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<Vec<Result<SpectrumReport>>> {
    let net = load_trained(cfg, &checkpoint_path(cfg, ckpt))?;
    let targets = cfg.targets();
    write_echo(cfg)?;
    let mut out = Vec::with_capacity(targets.len());
    for k in 0..targets.len() {
        let report = analyze_equilibrium_with(&net, &targets.pattern(k), &cfg.equilibrium);
        if let Ok(r) = &report {
            write_atomic(&cfg.output_dir.join(spectrum_file(k)), r.to_csv().as_bytes())?;
        }
        out.push(report);
    }
    Ok(out)
}

pub fn cmd_random_init(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<StudyResult> {
    let net = load_trained(cfg, &checkpoint_path(cfg, ckpt))?;
    let result = experiments::random_init_study(&net, &cfg.targets(), &cfg.study)?;
    write_echo(cfg)?;
    write_atomic(&cfg.output_dir.join(RANDOM_FILE), result.to_csv().as_bytes())?;
    Ok(result)
}

pub fn cmd_hopfield_baseline(cfg: &RunConfig) -> Result<BaselineResult> {
    let result = experiments::hopfield_baseline(&cfg.targets(), &cfg.study, cfg.max_sweeps)?;
    write_echo(cfg)?;
    write_atomic(&cfg.output_dir.join(BASELINE_FILE), result.to_csv().as_bytes())?;
    Ok(result)
}

fn count(frac: f64, n: usize) -> usize {
    (frac * n as f64).round() as usize
}

fn print_study(out: &mut impl Write, result: &StudyResult) -> std::io::Result<()> {
    for r in &result.runs {
        let (closest, d) = r.closest_target();
        match r.source_target {
            Some(k) => writeln!(
                out,
                "run {}: target {} initial {} final {} threshold {}{}{}",
                r.run_id,
                k,
                fmt_sig(r.initial_distances[k], 6),
                fmt_sig(r.final_distances[k], 6),
                fmt_sig(r.threshold, 6),
                if r.success() { " recovered" } else { " not recovered" },
                if r.diverged { " diverged" } else { "" }
            )?,
            None => writeln!(
                out,
                "run {}: closest target {} at {} threshold {}{}{}",
                r.run_id,
                closest,
                fmt_sig(d, 6),
                fmt_sig(r.threshold, 6),
                if r.reached_any() { " reached" } else { "" },
                if r.diverged { " diverged" } else { "" }
            )?,
        }
    }
    Ok(())
}

fn dispatch(name: &str, m: &ArgMatches, out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    let (cfg, warnings) = RunConfig::from_settings(&settings_from_matches(m)?)?;
    for w in warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let ckpt = m
        .try_get_one::<String>("checkpoint")
        .ok()
        .flatten()
        .map(PathBuf::from);
    let io = |e: std::io::Error| PchnError::io(Path::new("<stdout>"), e);
    match name {
        "train" => {
            let (_, report) = cmd_train(&cfg)?;
            writeln!(
                out,
                "trained {} on {} {} targets: {} epochs, {} steps per target, final mean energy {}, prediction mse {}",
                cfg.architecture,
                cfg.n_targets,
                cfg.target_kind,
                cfg.schedule.epochs,
                cfg.schedule.steps_per_target(cfg.hyper.dt),
                fmt_sig(report.final_mean_energy(), 6),
                fmt_sig(report.epoch_mse.last().copied().unwrap_or(0.0), 6)
            )
            .map_err(io)?;
        }
        "perturb" => {
            let r = cmd_perturb(&cfg, ckpt.as_deref())?;
            print_study(out, &r).map_err(io)?;
            writeln!(
                out,
                "success fraction: {}/{}",
                count(r.success_fraction(), r.runs.len()),
                r.runs.len()
            )
            .map_err(io)?;
        }
        "stability" => {
            let reports = cmd_stability(&cfg, ckpt.as_deref())?;
            let mut stable = 0;
            for (k, r) in reports.iter().enumerate() {
                match r {
                    Ok(r) => {
                        stable += usize::from(r.all_stable);
                        writeln!(out, "target {k}: {}", r.summary()).map_err(io)?;
                    }
                    Err(e) => writeln!(out, "target {k}: {e}").map_err(io)?,
                }
            }
            writeln!(out, "stable targets: {stable}/{}", reports.len()).map_err(io)?;
        }
        "random-init" => {
            let r = cmd_random_init(&cfg, ckpt.as_deref())?;
            print_study(out, &r).map_err(io)?;
            let reached = r.runs.iter().filter(|r| r.reached_any()).count();
            writeln!(out, "runs reaching a target: {reached}/{}", r.runs.len()).map_err(io)?;
        }
        "hopfield-baseline" => {
            let r = cmd_hopfield_baseline(&cfg)?;
            for row in &r.rows {
                writeln!(
                    out,
                    "probe {}: hamming {} -> {} after {} sweeps",
                    row.run_id, row.initial_distance, row.final_distance, row.sweeps
                )
                .map_err(io)?;
            }
            writeln!(
                out,
                "exact recovery: {}/{}, within one bit: {}/{}",
                count(r.exact_recovery_rate(), r.rows.len()),
                r.rows.len(),
                count(r.success_fraction(), r.rows.len()),
                r.rows.len()
            )
            .map_err(io)?;
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub, out, err) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            ExitCode::from(match e {
                PchnError::InvalidConfig(_) => 2,
                _ => 1,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_a_flag() {
        let cmd = command();
        let train = cmd.find_subcommand("train").unwrap();
        for &k in KEYS {
            let id = match k {
                "output_dir" => "out",
                other => other,
            };
            assert!(train.get_arguments().any(|a| a.get_id() == id), "{k}");
        }
        assert!(train.get_arguments().all(|a| a.get_id() != "checkpoint"));
        assert!(cmd
            .find_subcommand("perturb")
            .unwrap()
            .get_arguments()
            .any(|a| a.get_id() == "checkpoint"));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        fs::write(&cfg, "tau = 0.5\nepochs = 3\n").unwrap();
        let m = command()
            .try_get_matches_from([
                "pchn",
                "train",
                "--config",
                cfg.to_str().unwrap(),
                "--epochs",
                "2",
                "--seed",
                "9",
            ])
            .unwrap();
        let s = settings_from_matches(m.subcommand_matches("train").unwrap()).unwrap();
        assert_eq!(s["tau"], "0.5");
        assert_eq!(s["epochs"], "2");
        assert_eq!(s["seed"], "9");
    }

    #[test]
    fn invalid_config_exits_nonzero_without_output() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("o");
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            ["pchn", "train", "--tau", "10", "--gamma", "10", "--out", out_dir.to_str().unwrap()],
            &mut out,
            &mut err,
        );
        assert_eq!(code, ExitCode::from(2));
        assert!(String::from_utf8(err).unwrap().contains("error:"));
        assert!(!out_dir.exists());
    }
}

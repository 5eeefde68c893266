//! Clamped training: every value node is pinned to a target while the error
//! nodes and the weights co-evolve, one target after another.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{PchnError, Result};
use crate::experiments::TargetSet;
use crate::format::fmt_sig;
use crate::network::Network;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetOrder {
    #[default]
    Sequential,
    ShuffledPerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSchedule {
    /// Clamp duration per target, seconds.
    pub duration_per_target: f64,
    pub epochs: usize,
    pub target_order: TargetOrder,
    /// Zero the error nodes and set v to the new target at each clamp onset.
    pub reset_fast_state: bool,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            duration_per_target: 10.0,
            epochs: 10,
            target_order: TargetOrder::Sequential,
            reset_fast_state: true,
        }
    }
}

impl TrainingSchedule {
    /// Integration steps per clamp, rounded up.
    pub fn steps_per_target(&self, dt: f64) -> usize {
        let ratio = self.duration_per_target / dt;
        // Absorb representation error so 10.0 / 0.01 is 1000, not 1001.
        (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_per_target.is_finite() && self.duration_per_target > 0.0) {
            return Err(PchnError::InvalidConfig(
                "duration_per_target must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(PchnError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One clamp of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub epoch: usize,
    pub target_id: usize,
    pub steps: usize,
    /// Prediction energy at clamp onset and at clamp end.
    pub energy_start: f64,
    pub energy_end: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub rows: Vec<TrainingRow>,
    /// Mean squared prediction error over the target set after each epoch.
    pub epoch_mse: Vec<f64>,
}

impl TrainingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,target_id,steps,energy_start,energy_end\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.target_id,
                r.steps,
                fmt_sig(r.energy_start, 10),
                fmt_sig(r.energy_end, 10)
            )
            .unwrap();
        }
        out
    }

    /// Mean clamp-end energy of the final epoch.
    pub fn final_mean_energy(&self) -> f64 {
        let last = match self.rows.last() {
            Some(r) => r.epoch,
            None => return 0.0,
        };
        let tail: Vec<_> = self.rows.iter().filter(|r| r.epoch == last).collect();
        tail.iter().map(|r| r.energy_end).sum::<f64>() / tail.len() as f64
    }
}

/// Mean over targets of `|v - mu|^2 / total_units` with v set to the target.
pub fn prediction_mse(net: &Network, targets: &TargetSet) -> Result<f64> {
    let n = net.total_units() as f64;
    let mut acc = 0.0;
    for k in 0..targets.len() {
        let errs = net.prediction_errors_at(&targets.pattern(k))?;
        acc += errs.iter().map(|e| e.norm_squared()).sum::<f64>() / n;
    }
    Ok(acc / targets.len().max(1) as f64)
}

pub fn train(net: &mut Network, targets: &TargetSet, sched: &TrainingSchedule, seed: u64) -> Result<TrainingReport> {
    sched.validate()?;
    if targets.dim() != net.total_units() {
        return Err(PchnError::DimensionMismatch {
            expected: net.total_units(),
            found: targets.dim(),
        });
    }
    if net.weights_frozen {
        return Err(PchnError::WeightsFrozen);
    }
    let steps = sched.steps_per_target(net.hyper.dt);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut rng = rng_from_seed(seed);
    let mut report = TrainingReport::default();

    for epoch in 0..sched.epochs {
        if sched.target_order == TargetOrder::ShuffledPerEpoch {
            order.shuffle(&mut rng);
        }
        for &k in &order {
            let target = targets.pattern(k);
            net.clamp_all(&target)?;
            if sched.reset_fast_state {
                net.reset_errors();
            }
            let energy_start = net.prediction_energy();
            for _ in 0..steps {
                net.step_fast()?;
                net.step_slow()?;
            }
            report.rows.push(TrainingRow {
                epoch,
                target_id: k,
                steps,
                energy_start,
                energy_end: net.prediction_energy(),
            });
        }
        report.epoch_mse.push(prediction_mse(net, targets)?);
    }
    net.unclamp_all();
    Ok(report)
}

/// Switches the network to testing mode: weights and biases stop changing.
pub fn freeze(net: &mut Network) {
    net.freeze();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::checkpoint;
    use crate::experiments::{gen_targets, TargetKind};
    use crate::network::Hyperparams;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn step_count_rounding() {
        let s = TrainingSchedule::default();
        assert_eq!(s.steps_per_target(0.01), 1000);
        assert_eq!(s.steps_per_target(0.003), 3334);
        let s = TrainingSchedule {
            duration_per_target: 0.001,
            ..s
        };
        assert_eq!(s.steps_per_target(0.01), 1);
    }

    #[test]
    fn single_epoch_lowers_every_target_energy() {
        let targets = gen_targets(TargetKind::BinarySign, 10, 100, 3);
        let mut net = Network::single_population(100, Activation::Tanh, Hyperparams::default(), 5).unwrap();
        let sched = TrainingSchedule {
            epochs: 1,
            ..Default::default()
        };
        let report = train(&mut net, &targets, &sched, 0).unwrap();
        assert_eq!(report.rows.len(), 10);
        for r in &report.rows {
            assert!(r.energy_end < r.energy_start, "{r:?}");
        }
    }

    #[test]
    fn perfectly_predicted_target_is_a_noop() {
        let mut net = Network::single_population(4, Activation::Identity, Hyperparams::default(), 1).unwrap();
        net.connections[0].m.fill(0.0);
        net.connections[0].w.fill(0.0);
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        net.connections[0].b = x.clone();
        let targets = TargetSet::from_patterns(TargetKind::RealGaussian, DMatrix::from_row_slice(1, 4, x.as_slice()), 0);
        let before = net.connections.clone();
        train(&mut net, &targets, &TrainingSchedule::default(), 0).unwrap();
        assert_eq!(net.connections, before);
    }

    #[test]
    fn rejects_bad_inputs() {
        let targets = gen_targets(TargetKind::BinarySign, 2, 10, 3);
        let mut net = Network::single_population(12, Activation::Tanh, Hyperparams::default(), 5).unwrap();
        assert!(matches!(
            train(&mut net, &targets, &TrainingSchedule::default(), 0),
            Err(PchnError::DimensionMismatch { .. })
        ));
        let mut net = Network::single_population(10, Activation::Tanh, Hyperparams::default(), 5).unwrap();
        freeze(&mut net);
        assert!(matches!(
            train(&mut net, &targets, &TrainingSchedule::default(), 0),
            Err(PchnError::WeightsFrozen)
        ));
    }

    #[test]
    fn freeze_leaves_weights_and_dump_untouched() {
        let mut net = Network::single_population(20, Activation::Tanh, Hyperparams::default(), 8).unwrap();
        let before = checkpoint::to_string(&net);
        freeze(&mut net);
        assert_eq!(checkpoint::to_string(&net), before);
        net.set_values(&DVector::from_fn(20, |i, _| (i as f64).sin())).unwrap();
        for _ in 0..1000 {
            net.step_fast().unwrap();
        }
        assert_eq!(checkpoint::to_string(&net), before);
    }

    #[test]
    fn shuffled_order_is_seeded() {
        let targets = gen_targets(TargetKind::BinarySign, 4, 12, 1);
        let sched = TrainingSchedule {
            duration_per_target: 0.5,
            epochs: 2,
            target_order: TargetOrder::ShuffledPerEpoch,
            reset_fast_state: true,
        };
        let run = |seed| {
            let mut net = Network::ring(&[6, 6], Activation::Tanh, Hyperparams::default(), 2).unwrap();
            let r = train(&mut net, &targets, &sched, seed).unwrap();
            (r.rows.iter().map(|r| r.target_id).collect::<Vec<_>>(), checkpoint::to_string(&net))
        };
        assert_eq!(run(9), run(9));
        let ids = run(9).0;
        let mut sorted = ids[..4].to_vec();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }
}

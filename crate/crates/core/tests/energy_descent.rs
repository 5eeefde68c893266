use nalgebra::{DMatrix, DVector};
use pchn::{Activation, CorrectionMode, ErrorMode, Hyperparams, Network};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tied_algebraic(sizes: &[usize], act: Activation, seed: u64) -> Network {
    let mut net = if sizes.len() == 1 {
        Network::single_population(sizes[0], act, Hyperparams::default(), seed).unwrap()
    } else {
        Network::ring(sizes, act, Hyperparams::default(), seed).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in &mut net.connections {
        let scale = 1.0 / (c.m.ncols() as f64).sqrt();
        c.m = DMatrix::from_fn(c.m.nrows(), c.m.ncols(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        });
        if c.is_self_connection() {
            c.m.fill_diagonal(0.0);
        }
        c.b = DVector::from_fn(c.b.len(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.3 * z
        });
    }
    let mut net = net
        .with_correction_mode(CorrectionMode::Tied)
        .with_error_mode(ErrorMode::Algebraic);
    net.freeze();
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn energy_never_rises(seed in any::<u64>(), ring in any::<bool>(), relu in any::<bool>()) {
        let sizes: &[usize] = if ring { &[50, 30, 20] } else { &[100] };
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let mut net = tied_algebraic(sizes, act, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let v0 = DVector::from_fn(100, |_, _| StandardNormal.sample(&mut rng));
        net.set_values(&v0).unwrap();
        net.step_fast().unwrap();
        let mut last = net.energy();
        for step in 0..1000 {
            net.step_fast().unwrap();
            let e = net.energy();
            prop_assert!(e <= last + 1e-9, "step {}: {} -> {}", step, last, e);
            last = e;
        }
    }
}

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlscm::likelihood::PriorValue;
use tlscm::vi::{check_gradient, NoiseDraws, ObjectiveSettings};
use tlscm::{ModelDims, ObjectiveMode, PriorConfig, VariationalState};

fn instance(m: usize, n: usize, t: usize, c: usize, seed: u64) -> (Array2<f64>, VariationalState<f64>) {
    let dims = ModelDims::new(m, n, t, c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = VariationalState::initial(dims, &mut rng).unwrap();
    let mut flat = state.to_flat();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    state.set_flat(&flat).unwrap();
    let data = Array2::from_shape_fn((t, m), |_| rng.random_range(-2.0..2.0));
    (data, state)
}

fn check(m: usize, n: usize, t: usize, c: usize, mode: ObjectiveMode, samples: usize, seed: u64) {
    let prior = PriorConfig {
        edge_prob: PriorValue::Global(0.35),
        weight_mean: PriorValue::Global(0.1),
        weight_std: PriorValue::Global(0.9),
    };
    let (data, state) = instance(m, n, t, c, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let draws: Vec<_> = (0..samples).map(|_| NoiseDraws::sample(&state.dims, &mut rng)).collect();
    let settings = ObjectiveSettings {
        lambda: 1.3,
        temperature: 0.6,
        mc_samples: samples,
        mode,
        prior: &prior,
    };
    let bad = check_gradient(data.view(), &state, &settings, &draws, 1e-5, 1e-4, 1e-6, None).unwrap();
    assert!(bad.is_empty(), "({m},{n},{t},{c}) {mode:?}: {bad:?}");
}

#[test]
fn largest_instance_paper_objective() {
    check(3, 2, 10, 3, ObjectiveMode::Paper, 1, 1);
}

#[test]
fn largest_instance_full_elbo() {
    check(3, 2, 10, 3, ObjectiveMode::FullElbo, 2, 2);
}

#[test]
fn assorted_small_shapes() {
    for (i, &(m, n, t, c)) in [(1, 0, 3, 1), (2, 1, 4, 2), (1, 2, 5, 1), (3, 0, 6, 3)].iter().enumerate() {
        for mode in [ObjectiveMode::Paper, ObjectiveMode::FullElbo] {
            check(m, n, t, c, mode, 1, 10 + i as u64);
        }
    }
}

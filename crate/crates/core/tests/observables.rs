use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stable_core::observables::{
    diffusivity, h_of_r, integrated_abs_error, rdf, reweight, vacf, ObservableKind, ObservableSpec,
};
use stable_core::units::A2_PER_FS_TO_M2_PER_S;
use stable_core::{SimState, SystemSpec};

fn gas(n: usize, box_len: f64) -> SystemSpec {
    SystemSpec::builder(vec!["Ar".into()])
        .atoms(vec![0; n], vec![39.948; n])
        .cell(Some([box_len; 3]))
        .build()
        .unwrap()
}

fn uniform_states(n_atoms: usize, box_len: f64, n_states: usize, seed: u64) -> Vec<SimState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_states)
        .map(|_| {
            SimState::at_rest(
                (0..n_atoms)
                    .map(|_| [0.0; 3].map(|_: f64| rng.random_range(0.0..box_len)))
                    .collect(),
            )
        })
        .collect()
}

#[test]
fn ideal_gas_rdf_is_flat_at_one() {
    let spec = gas(50, 20.0);
    let states = uniform_states(50, 20.0, 400, 1);
    let obs = ObservableSpec::new(ObservableKind::Rdf { pair: None }).with_range(40, 10.0);
    let g = rdf(&states, &spec, &obs).unwrap();
    // Inner bins hold few pairs and are noisy; the outer half is well sampled.
    let outer = &g[20..];
    let mean = outer.iter().sum::<f64>() / outer.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    for (k, v) in outer.iter().enumerate() {
        assert!((v - 1.0).abs() < 0.1, "bin {k}: {v}");
    }
}

#[test]
fn hofr_integrates_to_one_when_in_range() {
    let spec = gas(10, 100.0);
    let states = uniform_states(10, 5.0, 1, 2);
    let obs = ObservableSpec::hofr().with_range(200, 12.0);
    let h = h_of_r(&states[0], &spec, &obs).unwrap();
    assert_relative_eq!(h.iter().sum::<f64>() * obs.bin_width(), 1.0, epsilon = 1e-9);
}

#[test]
fn hofr_of_a_dimer_peaks_at_the_bond() {
    let spec = SystemSpec::builder(vec!["C".into()])
        .atoms(vec![0, 0], vec![12.0, 12.0])
        .build()
        .unwrap();
    let s = SimState::at_rest(vec![[0.0; 3], [1.3, 0.0, 0.0]]);
    let obs = ObservableSpec::hofr().with_range(100, 3.0);
    let h = h_of_r(&s, &spec, &obs).unwrap();
    let peak = h.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!((obs.bin_centers()[peak] - 1.3).abs() <= obs.bin_width());
}

/// Atoms doing independent Gaussian steps of standard deviation `sd` per
/// coordinate per frame, recorded every `dt` fs.
fn random_walk(n_atoms: usize, n_frames: usize, sd: f64, dt: f64, seed: u64) -> Vec<SimState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).unwrap();
    let mut pos = vec![[0.0; 3]; n_atoms];
    (0..n_frames)
        .map(|k| {
            if k > 0 {
                for p in pos.iter_mut() {
                    for x in p.iter_mut() {
                        *x += normal.sample(&mut rng);
                    }
                }
            }
            let mut s = SimState::at_rest(pos.clone());
            s.time = k as f64 * dt;
            s
        })
        .collect()
}

#[test]
fn random_walk_diffusivity_matches_its_step_variance() {
    let (sd, dt) = (0.1, 10.0);
    let frames = random_walk(64, 400, sd, dt, 3);
    let spec = gas(64, 1000.0);
    let d = diffusivity(&frames, &spec, (200.0, 1000.0)).unwrap();
    // MSD = 3·sd²·(t/dt) = 6·D·t.
    let expected = sd * sd / (2.0 * dt) * A2_PER_FS_TO_M2_PER_S;
    assert!((d / expected - 1.0).abs() < 0.1, "{d} vs {expected}");
}

#[test]
fn vacf_of_white_noise_decorrelates_immediately() {
    let spec = gas(64, 1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let frames: Vec<SimState> = (0..300)
        .map(|k| {
            let mut s = SimState::at_rest(vec![[0.0; 3]; 64]);
            s.momenta = (0..64)
                .map(|_| [0.0; 3].map(|_: f64| normal.sample(&mut rng)))
                .collect();
            s.time = k as f64;
            s
        })
        .collect();
    let c = vacf(&frames, &spec, 10).unwrap();
    assert_eq!(c[0], 1.0);
    for v in &c[1..] {
        assert!(v.abs() < 0.05, "{v}");
    }
}

#[test]
fn integrated_error_is_a_weighted_l1_distance() {
    assert_relative_eq!(integrated_abs_error(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0], 0.1), 0.15);
}

#[test]
fn reweighting_rejects_bad_input() {
    assert!(reweight(&[vec![1.0]], &[0.0], 0.0, 300.0).is_err());
    assert!(reweight(&[vec![1.0]], &[0.0, 1.0], 300.0, 300.0).is_err());
    assert!(reweight(&[], &[], 300.0, 300.0).is_err());
    assert!(reweight(&[vec![1.0]], &[f64::NAN], 300.0, 310.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reweighting_weights_are_normalized(
        energies in prop::collection::vec(-20.0f64..20.0, 1..50),
        t2 in 100.0f64..1000.0,
        offset in -100.0f64..100.0,
    ) {
        let values: Vec<Vec<f64>> = energies.iter().map(|e| vec![*e, 1.0]).collect();
        let r = reweight(&values, &energies, 400.0, t2).unwrap();
        let n = energies.len() as f64;
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.n_eff >= 1.0 && r.n_eff <= n + 1e-9);
        prop_assert!((r.value[1] - 1.0).abs() < 1e-12);
        let lo = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.value[0] >= lo - 1e-9 && r.value[0] <= hi + 1e-9);

        let shifted: Vec<f64> = energies.iter().map(|e| e + offset).collect();
        let s = reweight(&values, &shifted, 400.0, t2).unwrap();
        for (a, b) in r.weights.iter().zip(&s.weights) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cooling_shifts_weight_to_low_energy(energies in prop::collection::vec(-5.0f64..5.0, 2..30)) {
        let values: Vec<Vec<f64>> = energies.iter().map(|e| vec![*e]).collect();
        let mean = energies.iter().sum::<f64>() / energies.len() as f64;
        let r = reweight(&values, &energies, 500.0, 300.0).unwrap();
        prop_assert!(r.value[0] <= mean + 1e-9);
    }
}

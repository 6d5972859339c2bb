use approx::assert_relative_eq;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stable_core::estimator::{
    boltzmann_jacobian, covariance_unbiased, fused_observable_gradient, localized_jacobian, minibatched_jacobian,
    observable_loss_and_gradient, observable_loss_weights, EstimatorBatch, ObservableSamples,
};
use stable_core::units::kt;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
}

#[test]
fn covariance_matches_the_two_pass_formula() {
    let x = random_matrix(30, 3, 1);
    let y = random_matrix(30, 4, 2);
    let c = covariance_unbiased(x.view(), y.view()).unwrap();
    let mx = x.mean_axis(Axis(0)).unwrap();
    let my = y.mean_axis(Axis(0)).unwrap();
    for g in 0..3 {
        for p in 0..4 {
            let direct: f64 = (0..30).map(|i| (x[[i, g]] - mx[g]) * (y[[i, p]] - my[p])).sum::<f64>() / 29.0;
            assert_relative_eq!(c[[g, p]], direct, epsilon = 1e-12);
        }
    }
}

#[test]
fn jacobian_is_negative_covariance_over_kt() {
    let batch = EstimatorBatch::new(random_matrix(40, 2, 3), random_matrix(40, 5, 4), 300.0).unwrap();
    let j = boltzmann_jacobian(&batch).unwrap();
    let c = covariance_unbiased(batch.observables.view(), batch.param_gradients.view()).unwrap();
    assert_eq!(j.n_samples, 40);
    for (a, b) in j.matrix.iter().zip(c.iter()) {
        assert_relative_eq!(*a, -b / kt(300.0), epsilon = 1e-12);
    }
}

#[test]
fn single_minibatch_equals_the_full_estimator() {
    let batch = EstimatorBatch::new(random_matrix(12, 2, 5), random_matrix(12, 3, 6), 500.0).unwrap();
    assert_eq!(
        minibatched_jacobian(&batch, 12).unwrap(),
        boltzmann_jacobian(&batch).unwrap()
    );
    assert_eq!(
        localized_jacobian(&batch, None).unwrap(),
        boltzmann_jacobian(&batch).unwrap()
    );
}

#[test]
fn minibatching_averages_per_batch_estimates() {
    let batch = EstimatorBatch::new(random_matrix(24, 2, 7), random_matrix(24, 3, 8), 500.0).unwrap();
    let m = minibatched_jacobian(&batch, 6).unwrap();
    let mut acc = Array2::<f64>::zeros((2, 3));
    for b in 0..4 {
        acc += &boltzmann_jacobian(&batch.rows(b * 6..(b + 1) * 6)).unwrap().matrix;
    }
    for (a, b) in m.matrix.iter().zip((acc / 4.0).iter()) {
        assert_relative_eq!(*a, *b, epsilon = 1e-12);
    }
}

#[test]
fn invalid_batches_are_rejected() {
    assert!(EstimatorBatch::new(random_matrix(1, 1, 0), random_matrix(1, 1, 1), 300.0).is_err());
    assert!(EstimatorBatch::new(random_matrix(4, 1, 0), random_matrix(5, 1, 1), 300.0).is_err());
    assert!(EstimatorBatch::new(random_matrix(4, 1, 0), random_matrix(4, 1, 1), 0.0).is_err());
    let batch = EstimatorBatch::new(random_matrix(10, 1, 0), random_matrix(10, 1, 1), 300.0).unwrap();
    assert!(minibatched_jacobian(&batch, 3).is_err());
    assert!(minibatched_jacobian(&batch, 1).is_err());
}

#[test]
fn loss_weights_and_value() {
    let g = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let values = [g];
    let refs = [vec![1.0, 1.0]];
    let (loss, c) = observable_loss_weights(&ObservableSamples {
        values: &values,
        references: &refs,
    })
    .unwrap();
    // mean (2, 3), residual (1, 2)
    assert_relative_eq!(loss, 5.0);
    assert_relative_eq!(c[0], 2.0 * (1.0 + 4.0));
    assert_relative_eq!(c[1], 2.0 * (3.0 + 8.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The fused gradient equals residual-contracted Jacobians for any
    /// minibatch size that divides the sample count.
    #[test]
    fn fused_gradient_matches_explicit_jacobians(seed in 0u64..1000, b in prop::sample::select(vec![2usize, 3, 4, 6, 12])) {
        let n = 12;
        let g1 = random_matrix(n, 3, seed);
        let g2 = random_matrix(n, 2, seed + 1);
        let grads = random_matrix(n, 4, seed + 2);
        let refs = vec![vec![0.1, -0.2, 0.3], vec![1.0, 0.0]];
        let values = [g1.clone(), g2.clone()];
        let (loss, grad) = observable_loss_and_gradient(&values, &refs, grads.view(), 400.0, Some(b)).unwrap();

        let mut expected = vec![0.0; 4];
        let mut expected_loss = 0.0;
        for (g, r) in values.iter().zip(&refs) {
            let batch = EstimatorBatch::new(g.clone(), grads.clone(), 400.0).unwrap();
            let j = minibatched_jacobian(&batch, b).unwrap().matrix;
            let mean = g.mean_axis(Axis(0)).unwrap();
            for k in 0..r.len() {
                let resid = mean[k] - r[k];
                expected_loss += resid * resid;
                for (p, e) in expected.iter_mut().enumerate() {
                    *e += 2.0 * resid * j[[k, p]];
                }
            }
        }
        prop_assert!((loss - expected_loss).abs() < 1e-10);
        for (a, e) in grad.iter().zip(&expected) {
            prop_assert!((a - e).abs() < 1e-9 * e.abs().max(1.0));
        }
    }

    #[test]
    fn fused_gradient_is_independent_of_thread_count(seed in 0u64..1000) {
        let c: Vec<f64> = random_matrix(16, 1, seed).into_raw_vec_and_offset().0;
        let grads = random_matrix(16, 3, seed + 9);
        let f = |i: usize, out: &mut [f64]| {
            out.copy_from_slice(grads.row(i).as_slice().unwrap());
            Ok(())
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| fused_observable_gradient(&c, 3, 300.0, 4, f)).unwrap();
        let b = four.install(|| fused_observable_gradient(&c, 3, 300.0, 4, f)).unwrap();
        prop_assert_eq!(a, b);
    }
}

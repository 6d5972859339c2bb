//! Fluctuation estimator for the parameter Jacobian of ensemble averages.
//!
//! For samples Γ⁽ⁱ⁾ from the Boltzmann distribution of U_θ at temperature
//! T, ∂E[g]/∂θ = −Cov(g, ∇_θU)/k_BT. The estimator below is the sample
//! version with the unbiased covariance,
//! N/(k_BT(N−1))·[Ê[g]Ê[∇U]ᵀ − Ê[g∇Uᵀ]].

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::units::kt;

/// Per-sample observable values (N × G) and parameter gradients (N × P)
/// drawn at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBatch {
    pub observables: Array2<f64>,
    pub param_gradients: Array2<f64>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    /// G × P.
    pub matrix: Array2<f64>,
    pub n_samples: usize,
}

impl EstimatorBatch {
    pub fn new(observables: Array2<f64>, param_gradients: Array2<f64>, temperature: f64) -> Result<Self> {
        let batch = EstimatorBatch {
            observables,
            param_gradients,
            temperature,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn n_samples(&self) -> usize {
        self.observables.nrows()
    }

    fn validate(&self) -> Result<()> {
        if self.observables.nrows() != self.param_gradients.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} observable rows vs {} gradient rows",
                self.observables.nrows(),
                self.param_gradients.nrows()
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!("temperature {}", self.temperature)));
        }
        if self.n_samples() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.n_samples(),
            });
        }
        Ok(())
    }

    /// Rows `range` of this batch.
    pub fn rows(&self, range: std::ops::Range<usize>) -> EstimatorBatch {
        EstimatorBatch {
            observables: self.observables.slice(s![range.clone(), ..]).to_owned(),
            param_gradients: self.param_gradients.slice(s![range, ..]).to_owned(),
            temperature: self.temperature,
        }
    }
}

/// (1/(N−1))·ΣXᵢYᵢᵀ − (1/(N(N−1)))·(ΣXᵢ)(ΣYᵢ)ᵀ for row-sample matrices
/// X (N × G) and Y (N × P).
pub fn covariance_unbiased(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows vs {} rows", y.nrows())));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let sx = x.sum_axis(Axis(0));
    let sy = y.sum_axis(Axis(0));
    let mut cov = x.t().dot(&y) / (nf - 1.0);
    let outer = outer(sx.view(), sy.view()) / (nf * (nf - 1.0));
    cov -= &outer;
    Ok(cov)
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// The N-sample Boltzmann estimator of ∂E[g]/∂θ (G × P).
pub fn boltzmann_jacobian(batch: &EstimatorBatch) -> Result<JacobianEstimate> {
    batch.validate()?;
    let cov = covariance_unbiased(batch.observables.view(), batch.param_gradients.view())?;
    Ok(JacobianEstimate {
        matrix: cov * (-1.0 / kt(batch.temperature)),
        n_samples: batch.n_samples(),
    })
}

/// Mean of N/B estimators over consecutive B-sample minibatches.
pub fn minibatched_jacobian(batch: &EstimatorBatch, batch_size: usize) -> Result<JacobianEstimate> {
    batch.validate()?;
    let n = batch.n_samples();
    check_minibatch(n, batch_size)?;
    let n_batches = n / batch_size;
    if n_batches == 1 {
        return boltzmann_jacobian(batch);
    }
    let mut acc: Option<Array2<f64>> = None;
    for b in 0..n_batches {
        let sub = batch.rows(b * batch_size..(b + 1) * batch_size);
        let j = boltzmann_jacobian(&sub)?.matrix;
        match &mut acc {
            None => acc = Some(j),
            Some(a) => *a += &j,
        }
    }
    Ok(JacobianEstimate {
        matrix: acc.expect("at least one minibatch") / n_batches as f64,
        n_samples: n,
    })
}

/// Localized estimator: the same arithmetic applied to samples whose rows
/// hold local observables g(γ) and local energy gradients ∇_θU(γ) of
/// neighborhoods γ.
pub fn localized_jacobian(local: &EstimatorBatch, batch_size: Option<usize>) -> Result<JacobianEstimate> {
    match batch_size {
        Some(b) => minibatched_jacobian(local, b),
        None => boltzmann_jacobian(local),
    }
}

fn check_minibatch(n: usize, batch_size: usize) -> Result<()> {
    if batch_size < 2 {
        return Err(Error::InvalidConfig(format!("minibatch size {batch_size} < 2")));
    }
    if !n.is_multiple_of(batch_size) {
        return Err(Error::InvalidConfig(format!(
            "minibatch size {batch_size} does not divide {n} samples"
        )));
    }
    Ok(())
}

/// Observable values of several observables on a shared sample set.
#[derive(Debug, Clone)]
pub struct ObservableSamples<'a> {
    /// One N × G_o matrix per observable.
    pub values: &'a [Array2<f64>],
    pub references: &'a [Vec<f64>],
}

/// L_obs = Σ_o ‖Ê[g_o] − g_ref,o‖² and the per-sample contraction weights
/// c_i = Σ_o 2(Ê[g_o] − g_ref,o)·g_o(Γ⁽ⁱ⁾) that turn the Jacobians into
/// the loss gradient.
pub fn observable_loss_weights(samples: &ObservableSamples) -> Result<(f64, Vec<f64>)> {
    if samples.values.len() != samples.references.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observables vs {} references",
            samples.values.len(),
            samples.references.len()
        )));
    }
    let n = samples.values.first().map_or(0, |v| v.nrows());
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 2, got: 0 });
    }
    let mut loss = 0.0;
    let mut c = Array1::<f64>::zeros(n);
    for (g, r) in samples.values.iter().zip(samples.references) {
        if g.nrows() != n || g.ncols() != r.len() {
            return Err(Error::DimensionMismatch(format!(
                "observable block {}×{} vs {n} samples and reference of length {}",
                g.nrows(),
                g.ncols(),
                r.len()
            )));
        }
        let mean = g.mean_axis(Axis(0)).expect("non-empty");
        let resid = &mean - &Array1::from(r.clone());
        loss += resid.dot(&resid);
        c += &g.dot(&(&resid * 2.0));
    }
    Ok((loss, c.to_vec()))
}

/// Gradient Σ_o vₒᵀĴₒ of the observable loss, contracted on the fly: with
/// per-sample weights c (from [`observable_loss_weights`]) this is the mean
/// over consecutive minibatches of −Ĉov_b(c, ∇_θU)/k_BT. `param_gradient`
/// writes ∇_θU of sample `i` into its buffer; it is called once per sample,
/// in parallel across minibatches, and the reduction is ordered so the
/// result does not depend on the number of workers.
pub fn fused_observable_gradient<F>(
    c: &[f64],
    n_params: usize,
    temperature: f64,
    batch_size: usize,
    param_gradient: F,
) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let n = c.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    check_minibatch(n, batch_size)?;
    let n_batches = n / batch_size;
    let partials: Vec<Result<Vec<f64>>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut buf = vec![0.0; n_params];
            let mut sum_cg = vec![0.0; n_params];
            let mut sum_g = vec![0.0; n_params];
            let mut sum_c = 0.0;
            for i in b * batch_size..(b + 1) * batch_size {
                buf.iter_mut().for_each(|x| *x = 0.0);
                param_gradient(i, &mut buf)?;
                let ci = c[i];
                sum_c += ci;
                for ((a, g), &x) in sum_cg.iter_mut().zip(sum_g.iter_mut()).zip(&buf) {
                    *a += ci * x;
                    *g += x;
                }
            }
            let nb = batch_size as f64;
            let scale = -1.0 / kt(temperature);
            Ok(sum_cg
                .iter()
                .zip(&sum_g)
                .map(|(a, g)| scale * (a / (nb - 1.0) - sum_c * g / (nb * (nb - 1.0))))
                .collect())
        })
        .collect();
    let mut grad = vec![0.0; n_params];
    for p in partials {
        grad.iter_mut().zip(p?).for_each(|(a, b)| *a += b);
    }
    if n_batches > 1 {
        grad.iter_mut().for_each(|x| *x /= n_batches as f64);
    }
    Ok(grad)
}

/// Observable loss and its estimated gradient from materialized samples.
/// All observables share the one ∇_θU matrix in `param_gradients`.
pub fn observable_loss_and_gradient(
    values: &[Array2<f64>],
    references: &[Vec<f64>],
    param_gradients: ArrayView2<f64>,
    temperature: f64,
    batch_size: Option<usize>,
) -> Result<(f64, Vec<f64>)> {
    let (loss, c) = observable_loss_weights(&ObservableSamples { values, references })?;
    if param_gradients.nrows() != c.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gradient rows vs {} samples",
            param_gradients.nrows(),
            c.len()
        )));
    }
    let b = batch_size.unwrap_or(c.len());
    let grad = fused_observable_gradient(&c, param_gradients.ncols(), temperature, b, |i, out| {
        out.iter_mut().zip(param_gradients.row(i)).for_each(|(o, &x)| *o = x);
        Ok(())
    })?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::BOLTZMANN;
    use ndarray::array;

    /// Temperature at which k_B·T = 1 kcal/mol.
    fn unit_kt() -> f64 {
        1.0 / BOLTZMANN
    }

    #[test]
    fn two_sample_covariance_by_hand() {
        let x = array![[1.0], [3.0]];
        let y = array![[2.0], [4.0]];
        let c = covariance_unbiased(x.view(), y.view()).unwrap();
        assert_eq!(c[[0, 0]], 2.0);
        let j = boltzmann_jacobian(&EstimatorBatch::new(x, y, unit_kt()).unwrap()).unwrap();
        assert!((j.matrix[[0, 0]] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn alternating_signs_covariance() {
        let x = array![[1.0], [-1.0], [1.0], [-1.0]];
        let c = covariance_unbiased(x.view(), x.view()).unwrap();
        assert!((c[[0, 0]] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_inputs_give_zero() {
        let g = array![[2.0, 1.0], [2.0, 1.0], [2.0, 1.0]];
        let du = array![[0.3, 1.0, -2.0], [1.5, 0.2, 0.1], [-0.7, 0.0, 4.0]];
        let j = boltzmann_jacobian(&EstimatorBatch::new(g, du.clone(), 300.0).unwrap()).unwrap();
        assert!(j.matrix.iter().all(|&v| v.abs() < 1e-15));
        let y = array![[5.0], [5.0], [5.0]];
        let c = covariance_unbiased(du.view(), y.view()).unwrap();
        assert!(c.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let x = array![[1.0]];
        assert!(covariance_unbiased(x.view(), x.view()).is_err());
        assert!(EstimatorBatch::new(x.clone(), x, 300.0).is_err());
    }

    #[test]
    fn minibatch_of_everything_is_bit_identical() {
        let g = array![[1.0], [0.4], [2.5], [-0.3]];
        let du = array![[0.2, 3.0], [1.1, -0.5], [0.0, 0.7], [2.2, 1.9]];
        let batch = EstimatorBatch::new(g, du, 450.0).unwrap();
        assert_eq!(
            minibatched_jacobian(&batch, 4).unwrap(),
            boltzmann_jacobian(&batch).unwrap()
        );
        assert!(minibatched_jacobian(&batch, 3).is_err());
    }

    #[test]
    fn scripted_chain_rule() {
        // two samples with Ĵ = −Ĉov/kT = −1 and Ê[g] − g_ref = 0.5
        let g = array![[0.0], [1.0]];
        let du = array![[-1.0], [1.0]];
        let j = boltzmann_jacobian(&EstimatorBatch::new(g.clone(), du.clone(), unit_kt()).unwrap()).unwrap();
        assert!((j.matrix[[0, 0]] + 1.0).abs() < 1e-12);
        let (loss, grad) =
            observable_loss_and_gradient(std::slice::from_ref(&g), &[vec![0.0]], du.view(), unit_kt(), None).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
        assert!((grad[0] + 1.0).abs() < 1e-12);
        let (loss, grad) = observable_loss_and_gradient(&[g], &[vec![0.5]], du.view(), unit_kt(), None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn fused_gradient_matches_explicit_contraction() {
        let g1 = array![[1.0, 0.2], [0.5, -0.4], [2.0, 0.1], [0.3, 0.9], [1.2, 1.1], [-0.6, 0.0]];
        let g2 = array![[3.0], [1.0], [-1.0], [0.5], [0.25], [2.0]];
        let du = array![
            [0.2, 3.0, 1.0],
            [1.1, -0.5, 0.0],
            [0.0, 0.7, 2.0],
            [2.2, 1.9, -1.0],
            [0.4, 0.4, 0.4],
            [-1.0, 2.0, 0.5]
        ];
        let refs = vec![vec![0.7, 0.3], vec![1.5]];
        let t = 350.0;
        let (_, fused) = observable_loss_and_gradient(&[g1.clone(), g2.clone()], &refs, du.view(), t, Some(3)).unwrap();
        let mut explicit = vec![0.0; 3];
        for (g, r) in [(&g1, &refs[0]), (&g2, &refs[1])] {
            let batch = EstimatorBatch::new(g.clone(), du.clone(), t).unwrap();
            let j = minibatched_jacobian(&batch, 3).unwrap().matrix;
            let mean = g.mean_axis(Axis(0)).unwrap();
            for (row, (m, rr)) in mean.iter().zip(r).enumerate() {
                for p in 0..3 {
                    explicit[p] += 2.0 * (m - rr) * j[[row, p]];
                }
            }
        }
        for (a, b) in fused.iter().zip(&explicit) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Frame};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::md::replica_rng;
use crate::potentials::{NeuralPotential, Potential};
use crate::system::SystemSpec;

/// Frames per parallel work unit; fixed so reductions do not depend on the
/// worker count.
const CHUNK: usize = 8;

/// Mean energy/force loss over `frames`,
/// λ_U·(U_ref − U_θ)² + λ_F·‖F_ref + ∇_rU_θ‖², and its parameter gradient.
pub fn qm_loss(
    model: &NeuralPotential,
    frames: &[&Frame],
    spec: &SystemSpec,
    lambda_u: f64,
    lambda_f: f64,
) -> Result<(f64, Vec<f64>)> {
    if frames.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let p = model.param_count();
    let partials: Vec<Result<(f64, Vec<f64>)>> = frames
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; p];
            for f in chunk {
                let t = model.qm_frame_terms(spec, &f.state.positions, f.energy, &f.forces, lambda_u, lambda_f)?;
                loss += t.loss();
                grad.iter_mut().zip(&t.gradient).for_each(|(a, b)| *a += b);
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p];
    for part in partials {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = frames.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// The loss of [`qm_loss`] without its gradient.
pub fn qm_loss_value(
    model: &dyn Potential,
    frames: &[Frame],
    spec: &SystemSpec,
    lambda_u: f64,
    lambda_f: f64,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let partials: Vec<Result<f64>> = frames
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            for f in chunk {
                let (u, forces) = model.energy_forces(spec, &f.state.positions)?;
                let de = u - f.energy;
                let df: f64 = forces
                    .iter()
                    .flatten()
                    .zip(f.forces.iter().flatten())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                loss += lambda_u * de * de + lambda_f * df;
            }
            Ok(loss)
        })
        .collect();
    let mut loss = 0.0;
    for p in partials {
        loss += p?;
    }
    Ok(loss / frames.len() as f64)
}

/// Mean absolute force error per component, kcal/mol/Å.
pub fn force_mae(model: &dyn Potential, frames: &[Frame], spec: &SystemSpec) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in frames {
        let forces = model.forces(spec, &f.state.positions)?;
        for (a, b) in forces.iter().flatten().zip(f.forces.iter().flatten()) {
            sum += (a - b).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Frames per gradient step; the whole dataset when absent.
    pub batch_size: Option<usize>,
    pub lambda_u: f64,
    pub lambda_f: f64,
    pub optimizer: OptimizerKind,
    /// Stop once the loss improves by less than this fraction over
    /// `plateau_window` epochs.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub divergence_threshold: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 1e-5,
            max_epochs: 2000,
            batch_size: None,
            lambda_u: 1.0,
            lambda_f: 100.0,
            optimizer: OptimizerKind::Momentum { beta: 0.9 },
            plateau_tol: 1e-4,
            plateau_window: 10,
            divergence_threshold: 1e6,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.max_epochs == 0 || self.plateau_window == 0 {
            return Err(Error::InvalidConfig(
                "pretraining needs lr > 0, max_epochs > 0 and plateau_window > 0".into(),
            ));
        }
        if self.lambda_u < 0.0 || self.lambda_f < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Resumable pretraining progress: completed epochs and the loss after
/// each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainProgress {
    pub losses: Vec<f64>,
    pub optimizer: Optimizer,
    pub converged: bool,
}

impl PretrainProgress {
    pub fn new(cfg: &PretrainConfig) -> Self {
        PretrainProgress {
            losses: Vec::new(),
            optimizer: Optimizer::new(cfg.optimizer),
            converged: false,
        }
    }

    pub fn epochs(&self) -> usize {
        self.losses.len()
    }

    fn plateaued(&self, cfg: &PretrainConfig) -> bool {
        let n = self.losses.len();
        if n <= cfg.plateau_window {
            return false;
        }
        let (old, new) = (self.losses[n - 1 - cfg.plateau_window], self.losses[n - 1]);
        old <= 0.0 || (old - new) / old < cfg.plateau_tol
    }
}

/// Minimizes the energy/force loss on `data` until the loss plateaus or
/// `cfg.max_epochs` epochs have run in total. `on_epoch` sees the epoch
/// index and the full-dataset loss after that epoch.
pub fn pretrain(
    model: &mut NeuralPotential,
    data: &Dataset,
    cfg: &PretrainConfig,
    progress: &mut PretrainProgress,
    mut on_epoch: impl FnMut(usize, f64, &NeuralPotential) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let spec = &data.spec;
    let batch = cfg.batch_size.unwrap_or(data.len()).min(data.len());
    while progress.epochs() < cfg.max_epochs && !progress.converged {
        let epoch = progress.epochs();
        let mut order: Vec<usize> = (0..data.len()).collect();
        if batch < data.len() {
            order.shuffle(&mut replica_rng(cfg.seed, epoch as u64));
        }
        for idx in order.chunks(batch) {
            let frames: Vec<&Frame> = idx.iter().map(|&i| &data.frames[i]).collect();
            let (loss, grad) = qm_loss(model, &frames, spec, cfg.lambda_u, cfg.lambda_f)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("pretraining loss at epoch {epoch}")));
            }
            let mut params = model.params().to_vec();
            progress.optimizer.step(&mut params, &grad, cfg.lr)?;
            model.set_params(&params)?;
        }
        let loss = qm_loss_value(model, &data.frames, spec, cfg.lambda_u, cfg.lambda_f)?;
        check_divergence(loss, cfg, epoch)?;
        progress.losses.push(loss);
        log::debug!("pretrain epoch {epoch}: loss {loss:.6e}");
        on_epoch(epoch, loss, model)?;
        progress.converged = progress.plateaued(cfg);
    }
    Ok(())
}

fn check_divergence(loss: f64, cfg: &PretrainConfig, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("pretraining loss at epoch {epoch}")));
    }
    if loss > cfg.divergence_threshold {
        return Err(Error::Diverged(format!(
            "pretraining loss {loss:.3e} exceeded {:.1e} at epoch {epoch}",
            cfg.divergence_threshold
        )));
    }
    Ok(())
}

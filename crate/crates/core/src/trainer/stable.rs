use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Frame};
use super::neighborhoods::sample_local_neighborhoods;
use super::optim::{Optimizer, OptimizerKind};
use super::qm::qm_loss;
use crate::error::{Error, Result};
use crate::estimator::{fused_observable_gradient, observable_loss_weights, ObservableSamples};
use crate::md::{Integrator, IntegratorConfig, Replica, ReplicaSet};
use crate::observables::{evaluate_state, ObservableSpec};
use crate::potentials::NeuralPotential;
use crate::stability::{unstable_fraction, StabilityCriterion, StabilityMonitor};
use crate::system::{LocalNeighborhood, SimState, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizedConfig {
    pub bins: usize,
    pub per_bin: usize,
}

impl Default for LocalizedConfig {
    fn default() -> Self {
        LocalizedConfig { bins: 100, per_bin: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StableConfig {
    /// Learning rate α at the start of every learning phase.
    pub lr: f64,
    /// α ← lr_decay·α after each learning epoch.
    pub lr_decay: f64,
    /// Weight λ of the energy/force loss added to the observable loss.
    pub qm_weight: f64,
    pub lambda_u: f64,
    pub lambda_f: f64,
    /// Steps per simulation segment and per learning epoch (t).
    pub steps_per_epoch: usize,
    /// Sampling and stability-check stride in steps (S).
    pub sample_every: usize,
    pub n_replicas: usize,
    /// Estimator minibatch size (B).
    pub batch_size: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub max_cycles: usize,
    pub max_learning_epochs: usize,
    /// Segments a simulation phase may run without reaching f_max.
    pub max_simulation_segments: usize,
    pub optimizer: OptimizerKind,
    /// Use single-molecule neighborhoods instead of whole states.
    pub localized: Option<LocalizedConfig>,
    pub seed: u64,
}

impl Default for StableConfig {
    fn default() -> Self {
        StableConfig {
            lr: 0.001,
            lr_decay: 0.95,
            qm_weight: 10.0,
            lambda_u: 1.0,
            lambda_f: 100.0,
            steps_per_epoch: 2000,
            sample_every: 20,
            n_replicas: 32,
            batch_size: 40,
            f_min: 0.2,
            f_max: 0.6,
            max_cycles: 4,
            max_learning_epochs: 200,
            max_simulation_segments: 100,
            optimizer: OptimizerKind::Sgd,
            localized: None,
            seed: 0,
        }
    }
}

impl StableConfig {
    /// Settings for periodic condensed-phase systems trained through local
    /// neighborhoods.
    pub fn condensed() -> Self {
        StableConfig {
            lr: 0.003,
            qm_weight: 0.0,
            steps_per_epoch: 1000,
            batch_size: 4,
            localized: Some(LocalizedConfig::default()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= 1.0) {
            return fail("need 0 <= f_min < f_max <= 1");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if self.qm_weight < 0.0 || self.lambda_u < 0.0 || self.lambda_f < 0.0 {
            return fail("loss weights must be non-negative");
        }
        if self.sample_every == 0
            || self.steps_per_epoch == 0
            || !self.steps_per_epoch.is_multiple_of(self.sample_every)
        {
            return fail("steps_per_epoch must be a positive multiple of sample_every");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if self.n_replicas == 0 || self.max_learning_epochs == 0 || self.max_simulation_segments == 0 {
            return fail("n_replicas, max_learning_epochs and max_simulation_segments must be positive");
        }
        if let Some(l) = &self.localized {
            if l.bins == 0 || l.per_bin == 0 {
                return fail("localized sampling needs bins > 0 and per_bin > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Simulation,
    Learning,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Simulation => "simulation",
            Phase::Learning => "learning",
        }
    }
}

/// One row per simulation segment or learning epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cycle: usize,
    pub phase: Phase,
    /// Segment or epoch index within the phase.
    pub epoch: usize,
    pub f_unst: f64,
    pub l_obs: Option<f64>,
    pub l_qm: Option<f64>,
    pub lr: f64,
}

/// Everything needed to continue training from a phase boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub params: Vec<f64>,
    pub optimizer: Optimizer,
    pub replicas: ReplicaSet,
    /// Per-replica rewind point: the replica at the start of its most
    /// recent simulation segment.
    pub snapshots: Vec<Replica>,
    pub monitors: Vec<StabilityMonitor>,
    pub snapshot_monitors: Vec<StabilityMonitor>,
    /// Phase to run next.
    pub phase: Phase,
    pub cycle: usize,
    pub lr: f64,
    pub f_unst: f64,
    pub learning_epochs: usize,
    pub metrics: Vec<MetricsRow>,
    pub finished: bool,
}

/// Static inputs of a training run.
pub struct StableProblem<'a> {
    pub train: &'a Dataset,
    /// Static observables, each carrying its reference value.
    pub observables: &'a [ObservableSpec],
    pub criterion: &'a StabilityCriterion,
    pub integrator: &'a IntegratorConfig,
    pub config: &'a StableConfig,
}

/// Independent generator for one purpose (`domain`) of the run seed.
fn derived_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

const DOMAIN_INITIAL_STATES: u64 = 1;
const DOMAIN_NEIGHBORHOODS: u64 = 2;

impl StableProblem<'_> {
    fn spec(&self) -> &SystemSpec {
        &self.train.spec
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.integrator.validate()?;
        self.criterion.validate()?;
        self.train.validate()?;
        if self.config.n_replicas > self.train.len() {
            return Err(Error::InvalidConfig(format!(
                "{} replicas but only {} training frames to start from",
                self.config.n_replicas,
                self.train.len()
            )));
        }
        if self.observables.is_empty() {
            return Err(Error::InvalidConfig("training needs at least one observable".into()));
        }
        for o in self.observables {
            o.validate()?;
            if !o.is_static() {
                return Err(Error::InvalidConfig(format!(
                    "{} depends on dynamics and cannot be trained on",
                    o.name()
                )));
            }
            if o.reference.is_none() {
                return Err(Error::InvalidConfig(format!("{} has no reference value", o.name())));
            }
        }
        Ok(())
    }

    /// Starting point: R distinct training frames with fresh
    /// Maxwell–Boltzmann momenta, all replicas active.
    pub fn initial_state(&self, model: &NeuralPotential) -> Result<TrainerState> {
        self.validate()?;
        let cfg = self.config;
        let mut rng = derived_rng(cfg.seed, DOMAIN_INITIAL_STATES, 0);
        let mut picks = sample(&mut rng, self.train.len(), cfg.n_replicas).into_vec();
        picks.sort_unstable();
        let states: Vec<SimState> = picks.iter().map(|&i| self.train.frames[i].state.clone()).collect();
        let replicas = ReplicaSet::thermalized(self.spec(), &states, self.integrator.temperature, cfg.seed)?;
        let monitor = self.monitor();
        Ok(TrainerState {
            params: model.params().to_vec(),
            optimizer: Optimizer::new(cfg.optimizer),
            snapshots: replicas.replicas.clone(),
            monitors: vec![monitor.clone(); cfg.n_replicas],
            snapshot_monitors: vec![monitor; cfg.n_replicas],
            replicas,
            phase: Phase::Simulation,
            cycle: 0,
            lr: cfg.lr,
            f_unst: 0.0,
            learning_epochs: 0,
            metrics: Vec::new(),
            finished: false,
        })
    }

    fn monitor(&self) -> StabilityMonitor {
        self.criterion
            .monitor(self.config.sample_every as f64 * self.integrator.dt)
    }
}

/// Outcome of advancing one replica for one segment.
struct Segment {
    replica: Replica,
    monitor: StabilityMonitor,
    unstable: bool,
    samples: Vec<SimState>,
}

/// Runs `replica` for t steps, checking stability at every sampled frame
/// and stopping at the first violation.
fn run_segment(
    integ: &Integrator,
    problem: &StableProblem,
    mut replica: Replica,
    mut monitor: StabilityMonitor,
    keep_samples: bool,
) -> Result<Segment> {
    let cfg = problem.config;
    let spec = problem.spec();
    let mut unstable = false;
    let mut samples = Vec::new();
    integ.run(&mut replica, cfg.steps_per_epoch, cfg.sample_every, |s| {
        if keep_samples {
            samples.push(s.clone());
        }
        unstable = monitor.observe(problem.criterion, s, spec)?;
        Ok(!unstable)
    })?;
    Ok(Segment {
        replica,
        monitor,
        unstable,
        samples,
    })
}

/// Alternating simulation and learning phases, continued from `state` until
/// `max_cycles` cycles have completed. `on_boundary` is called with the
/// state at every phase boundary; returning `false` stops training there,
/// leaving a state that can be passed back in to continue.
pub fn stable_train(
    model: &mut NeuralPotential,
    problem: &StableProblem,
    state: &mut TrainerState,
    mut on_boundary: impl FnMut(&TrainerState) -> Result<bool>,
) -> Result<()> {
    problem.validate()?;
    if state.replicas.len() != problem.config.n_replicas {
        return Err(Error::InvalidConfig(format!(
            "state holds {} replicas, configuration asks for {}",
            state.replicas.len(),
            problem.config.n_replicas
        )));
    }
    model.set_params(&state.params)?;
    while state.cycle < problem.config.max_cycles {
        match state.phase {
            Phase::Simulation => {
                let reached = simulation_phase(model, problem, state)?;
                if reached {
                    state.phase = Phase::Learning;
                } else {
                    log::info!(
                        "cycle {}: f_unst stayed at {:.3} below f_max; no learning phase",
                        state.cycle,
                        state.f_unst
                    );
                    state.cycle += 1;
                }
            }
            Phase::Learning => {
                learning_phase(model, problem, state)?;
                state.phase = Phase::Simulation;
                state.cycle += 1;
            }
        }
        state.finished = state.cycle >= problem.config.max_cycles;
        if !on_boundary(state)? {
            return Ok(());
        }
    }
    state.finished = true;
    Ok(())
}

/// Advances active replicas in t-step segments until at least f_max of
/// them are unstable. Returns whether f_max was reached.
fn simulation_phase(model: &NeuralPotential, problem: &StableProblem, state: &mut TrainerState) -> Result<bool> {
    let cfg = problem.config;
    let integ = Integrator::new(model, problem.spec(), problem.integrator)?;
    state.f_unst = unstable_fraction(&state.replicas);
    let mut segment = 0;
    while state.f_unst < cfg.f_max {
        if segment == cfg.max_simulation_segments {
            return Ok(false);
        }
        let active = state.replicas.active.clone();
        let results: Vec<Result<Option<Segment>>> = (0..state.replicas.len())
            .into_par_iter()
            .map(|i| {
                if !active[i] {
                    return Ok(None);
                }
                let seg = run_segment(
                    &integ,
                    problem,
                    state.replicas.replicas[i].clone(),
                    state.monitors[i].clone(),
                    false,
                )?;
                Ok(Some(seg))
            })
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            let Some(seg) = r? else { continue };
            state.snapshots[i] = std::mem::replace(&mut state.replicas.replicas[i], seg.replica);
            state.snapshot_monitors[i] = std::mem::replace(&mut state.monitors[i], seg.monitor);
            if seg.unstable {
                state.replicas.active[i] = false;
            } else {
                state.replicas.total_time[i] += cfg.steps_per_epoch as f64 * problem.integrator.dt;
            }
        }
        state.f_unst = unstable_fraction(&state.replicas);
        log::info!(
            "cycle {} simulation segment {segment}: f_unst = {:.3}",
            state.cycle,
            state.f_unst
        );
        state.metrics.push(MetricsRow {
            cycle: state.cycle,
            phase: Phase::Simulation,
            epoch: segment,
            f_unst: state.f_unst,
            l_obs: None,
            l_qm: None,
            lr: state.lr,
        });
        segment += 1;
    }
    Ok(true)
}

/// Repeats epochs from the rewind points until at most f_min of the
/// replicas go unstable within t steps, then leaves every replica at its
/// endpoint of the last epoch, active iff it stayed stable.
fn learning_phase(model: &mut NeuralPotential, problem: &StableProblem, state: &mut TrainerState) -> Result<()> {
    let cfg = problem.config;
    let r = state.replicas.len();
    state.lr = cfg.lr;
    let mut epoch = 0;
    loop {
        let integ = Integrator::new(&*model, problem.spec(), problem.integrator)?;
        let results: Vec<Result<Segment>> = (0..r)
            .into_par_iter()
            .map(|i| {
                run_segment(
                    &integ,
                    problem,
                    state.snapshots[i].clone(),
                    state.snapshot_monitors[i].clone(),
                    true,
                )
            })
            .collect();
        let segments = results.into_iter().collect::<Result<Vec<_>>>()?;
        let n_unstable = segments.iter().filter(|s| s.unstable).count();
        let f_unst = n_unstable as f64 / r as f64;
        let samples: Vec<SimState> = segments.iter().flat_map(|s| s.samples.iter().cloned()).collect();

        let (l_obs, l_qm) = learning_step(model, problem, state, &samples)?;
        log::info!(
            "cycle {} learning epoch {epoch}: f_unst = {f_unst:.3}, L_obs = {l_obs:.6e}, lr = {:.3e}",
            state.cycle,
            state.lr
        );
        state.metrics.push(MetricsRow {
            cycle: state.cycle,
            phase: Phase::Learning,
            epoch,
            f_unst,
            l_obs: Some(l_obs),
            l_qm,
            lr: state.lr,
        });
        state.lr *= cfg.lr_decay;
        state.learning_epochs += 1;
        state.f_unst = f_unst;
        epoch += 1;

        let done = f_unst <= cfg.f_min;
        if done || epoch == cfg.max_learning_epochs {
            if !done {
                log::warn!(
                    "cycle {}: learning phase hit the {}-epoch cap with f_unst = {f_unst:.3}",
                    state.cycle,
                    cfg.max_learning_epochs
                );
            }
            for (i, seg) in segments.into_iter().enumerate() {
                state.replicas.replicas[i] = seg.replica;
                state.monitors[i] = seg.monitor;
                state.replicas.active[i] = !seg.unstable;
            }
            state.f_unst = unstable_fraction(&state.replicas);
            return Ok(());
        }
    }
}

/// One gradient step on L_obs + λ·L_QM. Returns (L_obs, L_QM when used).
fn learning_step(
    model: &mut NeuralPotential,
    problem: &StableProblem,
    state: &mut TrainerState,
    samples: &[SimState],
) -> Result<(f64, Option<f64>)> {
    let cfg = problem.config;
    let spec = problem.spec();
    let p = model.param_count();

    let (l_obs, mut grad) = match &cfg.localized {
        None => global_observable_gradient(model, problem, samples)?,
        Some(local) => {
            let mut rng = derived_rng(cfg.seed, DOMAIN_NEIGHBORHOODS, state.learning_epochs as u64);
            let hoods = sample_local_neighborhoods(samples, spec, local.bins, local.per_bin, &mut rng)?;
            local_observable_gradient(model, problem, samples, &hoods)?
        }
    };
    if grad.is_empty() {
        grad = vec![0.0; p];
    }

    let l_qm = if cfg.qm_weight > 0.0 {
        let frames: Vec<&Frame> = problem.train.frames.iter().collect();
        let (l, g) = qm_loss(model, &frames, spec, cfg.lambda_u, cfg.lambda_f)?;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += cfg.qm_weight * b);
        Some(l)
    } else {
        None
    };

    let mut params = model.params().to_vec();
    state.optimizer.step(&mut params, &grad, state.lr)?;
    model.set_params(&params)?;
    state.params = params;
    Ok((l_obs, l_qm))
}

/// Number of leading samples used and the minibatch size: the largest
/// multiple of B not exceeding N, or one batch of all N when N < B.
fn usable_samples(n: usize, batch_size: usize) -> Option<(usize, usize)> {
    if n < 2 {
        return None;
    }
    let b = batch_size.min(n);
    Some((n - n % b, b))
}

fn observable_matrix(rows: &[Vec<Vec<f64>>], o: usize) -> Array2<f64> {
    let g = rows[0][o].len();
    Array2::from_shape_fn((rows.len(), g), |(i, k)| rows[i][o][k])
}

fn references(problem: &StableProblem) -> Vec<Vec<f64>> {
    problem
        .observables
        .iter()
        .map(|o| o.reference.clone().expect("validated"))
        .collect()
}

fn global_observable_gradient(
    model: &NeuralPotential,
    problem: &StableProblem,
    samples: &[SimState],
) -> Result<(f64, Vec<f64>)> {
    let spec = problem.spec();
    let Some((n, b)) = usable_samples(samples.len(), problem.config.batch_size) else {
        log::warn!("fewer than two samples; skipping the observable gradient");
        return Ok((f64::NAN, Vec::new()));
    };
    let samples = &samples[..n];
    let rows: Vec<Vec<Vec<f64>>> = samples
        .par_iter()
        .map(|s| problem.observables.iter().map(|o| evaluate_state(o, s, spec)).collect())
        .collect::<Result<_>>()?;
    let values: Vec<Array2<f64>> = (0..problem.observables.len())
        .map(|o| observable_matrix(&rows, o))
        .collect();
    let refs = references(problem);
    let (loss, c) = observable_loss_weights(&ObservableSamples {
        values: &values,
        references: &refs,
    })?;
    let grad = fused_observable_gradient(&c, model.param_count(), problem.integrator.temperature, b, |i, out| {
        let g = model.param_gradient(spec, &samples[i].positions)?;
        out.copy_from_slice(&g);
        Ok(())
    })?;
    Ok((loss, grad))
}

fn local_observable_gradient(
    model: &NeuralPotential,
    problem: &StableProblem,
    samples: &[SimState],
    hoods: &[LocalNeighborhood],
) -> Result<(f64, Vec<f64>)> {
    let spec = problem.spec();
    let Some((n, b)) = usable_samples(hoods.len(), problem.config.batch_size) else {
        log::warn!("fewer than two neighborhoods; skipping the observable gradient");
        return Ok((f64::NAN, Vec::new()));
    };
    let hoods = &hoods[..n];
    let rows: Vec<Vec<Vec<f64>>> = hoods
        .par_iter()
        .map(|h| {
            let (local, sub) = h.extract(&samples[h.state_index], spec)?;
            problem
                .observables
                .iter()
                .map(|o| evaluate_state(o, &local, &sub))
                .collect()
        })
        .collect::<Result<_>>()?;
    let values: Vec<Array2<f64>> = (0..problem.observables.len())
        .map(|o| observable_matrix(&rows, o))
        .collect();
    let refs = references(problem);
    let (loss, c) = observable_loss_weights(&ObservableSamples {
        values: &values,
        references: &refs,
    })?;
    let grad = fused_observable_gradient(&c, model.param_count(), problem.integrator.temperature, b, |i, out| {
        let h = &hoods[i];
        let (_, g) = model.local_energy_and_param_gradient(spec, &samples[h.state_index].positions, h.atoms())?;
        out.copy_from_slice(&g);
        Ok(())
    })?;
    Ok((loss, grad))
}

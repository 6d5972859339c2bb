//! Time integration and parallel replica simulation.
//!
//! NVE uses velocity Verlet. NVT wraps the Verlet step in two half-steps of
//! a single Nosé–Hoover thermostat (friction ξ, position η, mass
//! Q = 3N·k_B·T/ω²), which conserves H + ½Qξ² + 3N·k_B·T·η.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::potentials::Potential;
use crate::system::{kinetic_energy, SimState, SystemSpec};
use crate::units::{kt, wavenumber_to_angular_frequency, AMU_A2_FS2_TO_KCAL_MOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    Nve,
    Nvt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Timestep in fs.
    pub dt: f64,
    pub ensemble: Ensemble,
    /// Target temperature in K (also used for momentum initialization).
    pub temperature: f64,
    /// Nosé–Hoover effective mass expressed as a frequency in cm⁻¹.
    pub thermostat_wavenumber: f64,
    pub seed: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 0.5,
            ensemble: Ensemble::Nvt,
            temperature: 500.0,
            thermostat_wavenumber: 2000.0,
            seed: 0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.ensemble == Ensemble::Nvt {
            if !(self.temperature > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "NVT needs a positive temperature, got {}",
                    self.temperature
                )));
            }
            if !(self.thermostat_wavenumber > 0.0) {
                return Err(Error::InvalidConfig("thermostat frequency must be positive".into()));
            }
        }
        Ok(())
    }

    /// Nosé–Hoover mass Q in kcal/mol·fs².
    pub fn thermostat_mass(&self, n_atoms: usize) -> f64 {
        let omega = wavenumber_to_angular_frequency(self.thermostat_wavenumber);
        3.0 * n_atoms as f64 * kt(self.temperature) / (omega * omega)
    }
}

/// Friction ξ (fs⁻¹) and its time integral η of the Nosé–Hoover thermostat.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThermostatState {
    pub xi: f64,
    pub eta: f64,
}

/// One trajectory: its state plus thermostat variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replica {
    pub state: SimState,
    pub thermostat: ThermostatState,
}

impl Replica {
    pub fn new(state: SimState) -> Self {
        Replica {
            state,
            thermostat: ThermostatState::default(),
        }
    }
}

/// R replicas sharing one system, with activity flags and per-replica
/// accumulated simulation time (fs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSet {
    pub replicas: Vec<Replica>,
    pub active: Vec<bool>,
    pub total_time: Vec<f64>,
}

impl ReplicaSet {
    pub fn new(replicas: Vec<Replica>) -> Result<Self> {
        if replicas.is_empty() {
            return Err(Error::InvalidConfig("replica set needs at least one replica".into()));
        }
        let r = replicas.len();
        Ok(ReplicaSet {
            replicas,
            active: vec![true; r],
            total_time: vec![0.0; r],
        })
    }

    /// Replicas started from `states` with fresh Maxwell–Boltzmann momenta,
    /// replica `i` drawing from stream `i` of `seed`.
    pub fn thermalized(spec: &SystemSpec, states: &[SimState], temperature: f64, seed: u64) -> Result<Self> {
        let replicas = states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.check_shape(spec)?;
                let mut rng = replica_rng(seed, i as u64);
                let momenta = maxwell_boltzmann_momenta(spec, temperature, &mut rng)?;
                Ok(Replica::new(SimState::new(s.positions.clone(), momenta, 0.0)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(replicas)
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

/// Independent stream `index` of the master `seed` (ChaCha stream split),
/// so adding replicas never perturbs an existing replica's stream.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Momenta drawn from the Maxwell–Boltzmann distribution at `temperature`,
/// with the center-of-mass momentum removed.
pub fn maxwell_boltzmann_momenta(spec: &SystemSpec, temperature: f64, rng: &mut impl rand::Rng) -> Result<Vec<Vec3>> {
    if !(temperature >= 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {temperature}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p: Vec<Vec3> = spec
        .masses()
        .iter()
        .map(|&m| {
            // p_x ~ N(0, m k_B T) in amu·Å/fs
            let sd = (m * kt(temperature) / AMU_A2_FS2_TO_KCAL_MOL).sqrt();
            [
                normal.sample(rng) * sd,
                normal.sample(rng) * sd,
                normal.sample(rng) * sd,
            ]
        })
        .collect();
    if p.len() > 1 {
        let total_mass: f64 = spec.masses().iter().sum();
        let mut com = [0.0; 3];
        for pi in &p {
            for k in 0..3 {
                com[k] += pi[k];
            }
        }
        for (pi, &m) in p.iter_mut().zip(spec.masses()) {
            for k in 0..3 {
                pi[k] -= com[k] * m / total_mass;
            }
        }
    }
    Ok(p)
}

/// H + ½Qξ² + 3N·k_B·T·η, the quantity Nosé–Hoover dynamics conserves.
pub fn extended_energy(
    model: &dyn Potential,
    replica: &Replica,
    spec: &SystemSpec,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let ke = kinetic_energy(&replica.state, spec)?;
    let u = model.energy(spec, &replica.state.positions)?;
    let q = cfg.thermostat_mass(spec.n_atoms());
    let g = 3.0 * spec.n_atoms() as f64;
    let th = replica.thermostat;
    Ok(ke + u + 0.5 * q * th.xi * th.xi + g * kt(cfg.temperature) * th.eta)
}

/// Integrator bound to a model, a system and a configuration.
pub struct Integrator<'a> {
    model: &'a dyn Potential,
    spec: &'a SystemSpec,
    cfg: &'a IntegratorConfig,
    q: f64,
    target_2ke: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a dyn Potential, spec: &'a SystemSpec, cfg: &'a IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        let n = spec.n_atoms();
        Ok(Integrator {
            model,
            spec,
            cfg,
            q: cfg.thermostat_mass(n),
            target_2ke: 3.0 * n as f64 * kt(cfg.temperature),
        })
    }

    fn kinetic(&self, p: &[Vec3]) -> f64 {
        p.iter()
            .zip(self.spec.masses())
            .map(|(p, &m)| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * m))
            .sum::<f64>()
            * AMU_A2_FS2_TO_KCAL_MOL
    }

    /// Thermostat update over half a timestep.
    fn thermostat_half_step(&self, state: &mut SimState, th: &mut ThermostatState) {
        let dt = self.cfg.dt;
        let mut ke = self.kinetic(&state.momenta);
        th.xi += 0.25 * dt * (2.0 * ke - self.target_2ke) / self.q;
        th.eta += 0.5 * dt * th.xi;
        let s = (-0.5 * dt * th.xi).exp();
        for p in state.momenta.iter_mut() {
            for x in p.iter_mut() {
                *x *= s;
            }
        }
        ke *= s * s;
        th.xi += 0.25 * dt * (2.0 * ke - self.target_2ke) / self.q;
    }

    fn kick(&self, state: &mut SimState, forces: &[Vec3], half_dt: f64) {
        let c = half_dt / AMU_A2_FS2_TO_KCAL_MOL;
        for (p, f) in state.momenta.iter_mut().zip(forces) {
            for k in 0..3 {
                p[k] += c * f[k];
            }
        }
    }

    fn drift(&self, state: &mut SimState) {
        let dt = self.cfg.dt;
        for ((r, p), &m) in state.positions.iter_mut().zip(&state.momenta).zip(self.spec.masses()) {
            for k in 0..3 {
                r[k] += dt * p[k] / m;
            }
        }
    }

    /// Forces at the current positions of `state`.
    pub fn forces(&self, state: &SimState) -> Result<Vec<Vec3>> {
        let f = self.model.forces(self.spec, &state.positions)?;
        if f.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("forces at t = {} fs", state.time)));
        }
        Ok(f)
    }

    /// Advances one step. `forces` must hold the forces at the incoming
    /// positions; on return it holds the forces at the new positions.
    pub fn step(&self, replica: &mut Replica, forces: &mut Vec<Vec3>) -> Result<()> {
        let half = 0.5 * self.cfg.dt;
        let nvt = self.cfg.ensemble == Ensemble::Nvt;
        if nvt {
            self.thermostat_half_step(&mut replica.state, &mut replica.thermostat);
        }
        self.kick(&mut replica.state, forces, half);
        self.drift(&mut replica.state);
        *forces = self.forces(&replica.state)?;
        self.kick(&mut replica.state, forces, half);
        if nvt {
            self.thermostat_half_step(&mut replica.state, &mut replica.thermostat);
        }
        replica.state.time += self.cfg.dt;
        replica.state.check_finite()
    }

    /// Runs `n_steps`, calling `on_sample` on every `sample_every`-th state
    /// (the endpoint included, the start excluded). Stops early when the
    /// callback returns `false`; returns the number of steps taken.
    pub fn run(
        &self,
        replica: &mut Replica,
        n_steps: usize,
        sample_every: usize,
        mut on_sample: impl FnMut(&SimState) -> Result<bool>,
    ) -> Result<usize> {
        if sample_every == 0 {
            return Err(Error::InvalidConfig("sampling stride must be positive".into()));
        }
        replica.state.check_shape(self.spec)?;
        replica.state.check_finite()?;
        let mut forces = self.forces(&replica.state)?;
        for step in 1..=n_steps {
            self.step(replica, &mut forces)?;
            if step % sample_every == 0 && !on_sample(&replica.state)? {
                return Ok(step);
            }
        }
        Ok(n_steps)
    }
}

/// One velocity-Verlet step from `state`.
pub fn step_nve(
    model: &dyn Potential,
    state: &SimState,
    spec: &SystemSpec,
    cfg: &IntegratorConfig,
) -> Result<SimState> {
    let cfg = IntegratorConfig {
        ensemble: Ensemble::Nve,
        ..cfg.clone()
    };
    let integ = Integrator::new(model, spec, &cfg)?;
    let mut replica = Replica::new(state.clone());
    replica.state.check_shape(spec)?;
    let mut f = integ.forces(&replica.state)?;
    integ.step(&mut replica, &mut f)?;
    Ok(replica.state)
}

/// One Nosé–Hoover step from `(state, thermostat)`.
pub fn step_nvt(
    model: &dyn Potential,
    state: &SimState,
    thermostat: ThermostatState,
    spec: &SystemSpec,
    cfg: &IntegratorConfig,
) -> Result<(SimState, ThermostatState)> {
    let cfg = IntegratorConfig {
        ensemble: Ensemble::Nvt,
        ..cfg.clone()
    };
    let integ = Integrator::new(model, spec, &cfg)?;
    let mut replica = Replica {
        state: state.clone(),
        thermostat,
    };
    replica.state.check_shape(spec)?;
    let mut f = integ.forces(&replica.state)?;
    integ.step(&mut replica, &mut f)?;
    Ok((replica.state, replica.thermostat))
}

/// Advances every active replica by `n_steps` in parallel and returns the
/// updated set with `n_steps / sample_every` evenly strided samples per
/// active replica (none for inactive ones, which are left untouched).
pub fn simulate_replicas(
    model: &dyn Potential,
    spec: &SystemSpec,
    replicas: &ReplicaSet,
    cfg: &IntegratorConfig,
    n_steps: usize,
    sample_every: usize,
) -> Result<(ReplicaSet, Vec<Vec<SimState>>)> {
    if sample_every == 0 || !n_steps.is_multiple_of(sample_every) {
        return Err(Error::InvalidConfig(format!(
            "{n_steps} steps is not a multiple of the sampling stride {sample_every}"
        )));
    }
    let integ = Integrator::new(model, spec, cfg)?;
    let results: Vec<Result<(Replica, Vec<SimState>)>> = replicas
        .replicas
        .par_iter()
        .zip(replicas.active.par_iter())
        .map(|(rep, &active)| {
            let mut rep = rep.clone();
            let mut samples = Vec::new();
            if active {
                integ.run(&mut rep, n_steps, sample_every, |s| {
                    samples.push(s.clone());
                    Ok(true)
                })?;
            }
            Ok((rep, samples))
        })
        .collect();

    let mut out = replicas.clone();
    let mut all_samples = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let (rep, samples) = r?;
        if replicas.active[i] {
            out.total_time[i] += n_steps as f64 * cfg.dt;
        }
        out.replicas[i] = rep;
        all_samples.push(samples);
    }
    Ok((out, all_samples))
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::md::{maxwell_boltzmann_momenta, replica_rng, Integrator, IntegratorConfig, Replica};
use crate::potentials::Potential;
use crate::stability::StabilityCriterion;
use crate::system::{SimState, SystemSpec};

/// A configuration labeled with reference energy and forces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub state: SimState,
    pub energy: f64,
    pub forces: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub frames: Vec<Frame>,
    /// Temperature the frames were sampled at, K.
    pub temperature: f64,
    /// Name of the labeling potential.
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn states(&self) -> Vec<SimState> {
        self.frames.iter().map(|f| f.state.clone()).collect()
    }

    /// The frames in `range` as a dataset of their own.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InvalidConfig(format!(
                "frames {range:?} out of a {}-frame dataset",
                self.len()
            )));
        }
        Ok(Dataset {
            spec: self.spec.clone(),
            frames: self.frames[range].to_vec(),
            temperature: self.temperature,
            source: self.source.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (k, f) in self.frames.iter().enumerate() {
            f.state.check_shape(&self.spec)?;
            if f.forces.len() != self.spec.n_atoms() {
                return Err(Error::DimensionMismatch(format!("frame {k}: force rows")));
            }
            if !f.energy.is_finite() || f.forces.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("frame {k}: labels")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_frames: usize,
    /// Steps between recorded frames.
    pub stride: usize,
    /// Steps discarded before the first frame.
    pub equilibration: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_frames: 1000,
            stride: 200,
            equilibration: 10_000,
        }
    }
}

/// Samples `cfg.n_frames` frames from an NVT run of `reference` started at
/// `initial` with Maxwell–Boltzmann momenta, labeling each with reference
/// energies and forces. Aborts when `criterion` (if any) trips.
pub fn generate_dataset(
    reference: &dyn Potential,
    spec: &SystemSpec,
    initial: &[Vec3],
    integrator: &IntegratorConfig,
    cfg: &SamplingConfig,
    criterion: Option<&StabilityCriterion>,
) -> Result<Dataset> {
    if cfg.n_frames == 0 || cfg.stride == 0 {
        return Err(Error::InvalidConfig(
            "need at least one frame and a positive stride".into(),
        ));
    }
    let mut rng = replica_rng(integrator.seed, 0);
    let momenta = maxwell_boltzmann_momenta(spec, integrator.temperature, &mut rng)?;
    let mut replica = Replica::new(SimState::new(initial.to_vec(), momenta, 0.0)?);
    let integ = Integrator::new(reference, spec, integrator)?;
    let mut monitor = criterion.map(|c| c.monitor(cfg.stride as f64 * integrator.dt));
    integ.run(&mut replica, cfg.equilibration, cfg.equilibration.max(1), |_| Ok(true))?;
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut failure = None;
    integ.run(&mut replica, cfg.n_frames * cfg.stride, cfg.stride, |s| {
        if let (Some(c), Some(m)) = (criterion, monitor.as_mut()) {
            if m.observe(c, s, spec)? {
                failure = Some(s.time);
                return Ok(false);
            }
        }
        let (energy, forces) = reference.energy_forces(spec, &s.positions)?;
        frames.push(Frame {
            state: s.clone(),
            energy,
            forces,
        });
        Ok(true)
    })?;
    if let Some(t) = failure {
        return Err(Error::Diverged(format!(
            "reference simulation became unstable at t = {t} fs"
        )));
    }
    Ok(Dataset {
        spec: spec.clone(),
        frames,
        temperature: integrator.temperature,
        source: reference.name().to_string(),
    })
}

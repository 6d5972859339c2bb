//! Potential energy models: analytic reference potentials that label the
//! synthetic datasets, and the learnable [`NeuralPotential`].

mod features;
mod mlp;
mod neural;
mod reference;

pub use features::RadialBasis;
pub use mlp::{MlpShape, MlpTape};
pub use neural::{Architecture, NeuralPotential, QmFrameTerms};
pub use reference::{DoubleWellDimer, HarmonicOscillator, LennardJones, LjSpecies, ToyWater};

use crate::error::Result;
use crate::geometry::Vec3;
use crate::system::{SimState, SystemSpec};

/// A potential energy surface U(r).
///
/// Energies are kcal/mol, forces kcal/(mol·Å). The total energy is always
/// the sum of the per-atom energies, in atom order.
pub trait Potential: Send + Sync {
    fn name(&self) -> &str;

    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>>;

    /// Total energy and forces (−∇U) in one pass.
    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)>;

    fn energy(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<f64> {
        Ok(self.per_atom_energies(spec, positions)?.iter().sum())
    }

    fn forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<Vec3>> {
        Ok(self.energy_forces(spec, positions)?.1)
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        (**self).per_atom_energies(spec, positions)
    }
    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        (**self).energy_forces(spec, positions)
    }
}

impl<P: Potential + ?Sized> Potential for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        (**self).per_atom_energies(spec, positions)
    }
    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        (**self).energy_forces(spec, positions)
    }
}

/// Potential energy of a state.
pub fn state_energy(model: &dyn Potential, state: &SimState, spec: &SystemSpec) -> Result<f64> {
    state.check_shape(spec)?;
    model.energy(spec, &state.positions)
}

/// Forces acting in a state.
pub fn state_forces(model: &dyn Potential, state: &SimState, spec: &SystemSpec) -> Result<Vec<Vec3>> {
    state.check_shape(spec)?;
    model.forces(spec, &state.positions)
}

/// Sums the per-atom terms the same way every model does.
pub(crate) fn total(per_atom: &[f64]) -> f64 {
    per_atom.iter().sum()
}

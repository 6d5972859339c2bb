use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::RadialBasis;
use super::mlp::{MlpShape, MlpTape};
use super::{total, Potential};
use crate::error::{Error, Result};
use crate::geometry::{dot, NeighborList, Vec3};
use crate::system::SystemSpec;

/// Hyperparameters of the per-atom network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Species channels, by element symbol.
    pub species: Vec<String>,
    pub n_basis: usize,
    pub r_max: f64,
    pub hidden: Vec<usize>,
}

impl Architecture {
    /// 32 Gaussians up to 5 Å feeding two tanh layers of width 64.
    pub fn new(species: Vec<String>) -> Self {
        Architecture {
            species,
            n_basis: 32,
            r_max: 5.0,
            hidden: vec![64, 64],
        }
    }

    /// Radial channels per species plus a one-hot of the atom's own species.
    pub fn input_dim(&self) -> usize {
        self.species.len() * self.n_basis + self.species.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    pub fn param_count(&self) -> usize {
        MlpShape::new(self.layer_sizes()).n_params()
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::InvalidConfig("architecture has no species".into()));
        }
        if self.n_basis < 2 {
            return Err(Error::InvalidConfig("need at least 2 radial basis functions".into()));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::InvalidConfig("r_max must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

/// Learnable potential: atomic energies from a shared perceptron over
/// smooth radial features, summed over atoms.
#[derive(Debug, Clone)]
pub struct NeuralPotential {
    arch: Architecture,
    basis: RadialBasis,
    shape: MlpShape,
    params: Vec<f64>,
}

/// Energy/force loss of one labeled frame and its parameter gradient.
#[derive(Debug, Clone)]
pub struct QmFrameTerms {
    pub energy_term: f64,
    pub force_term: f64,
    pub gradient: Vec<f64>,
}

impl QmFrameTerms {
    pub fn loss(&self) -> f64 {
        self.energy_term + self.force_term
    }
}

struct Environment {
    nl: NeighborList,
    channel: Vec<usize>,
    features: Vec<f64>,
}

impl NeuralPotential {
    /// Fresh network. Weights and biases are uniform in ±1/√fan_in; the
    /// output weights are scaled down by 10 so the untrained surface is
    /// nearly flat.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shape = MlpShape::new(arch.layer_sizes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; shape.n_params()];
        let last = shape.n_layers() - 1;
        for l in 0..shape.n_layers() {
            let bound = 1.0 / (shape.sizes()[l] as f64).sqrt();
            for p in &mut params[shape.weight_range(l)] {
                *p = rng.random_range(-bound..bound);
                if l == last {
                    *p *= 0.1;
                }
            }
            for p in &mut params[shape.bias_range(l)] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self::assemble(arch, shape, params))
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let shape = MlpShape::new(arch.layer_sizes());
        if params.len() != shape.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                shape.n_params()
            )));
        }
        Ok(Self::assemble(arch, shape, params))
    }

    fn assemble(arch: Architecture, shape: MlpShape, params: Vec<f64>) -> Self {
        let basis = RadialBasis::new(arch.n_basis, arch.r_max);
        NeuralPotential {
            arch,
            basis,
            shape,
            params,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch("parameter vector length".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Species channel of every atom of `spec`.
    pub fn channels(&self, spec: &SystemSpec) -> Result<Vec<usize>> {
        let lut: Vec<Option<usize>> = spec
            .symbols()
            .iter()
            .map(|s| self.arch.species.iter().position(|a| a == s))
            .collect();
        spec.species()
            .iter()
            .map(|&c| {
                lut[c].ok_or_else(|| {
                    Error::InvalidSystem(format!(
                        "species {} is not known to the model ({:?})",
                        spec.symbols()[c],
                        self.arch.species
                    ))
                })
            })
            .collect()
    }

    fn environment(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Environment> {
        let channel = self.channels(spec)?;
        let nl = NeighborList::build(spec, positions, self.arch.r_max)?;
        let k = self.arch.n_basis;
        let s = self.arch.species.len();
        let dim = self.arch.input_dim();
        let mut features = vec![0.0; positions.len() * dim];
        for i in 0..positions.len() {
            let row = &mut features[i * dim..(i + 1) * dim];
            for nb in nl.neighbors(i) {
                let c = channel[nb.j];
                self.basis.accumulate(nb.dist, &mut row[c * k..(c + 1) * k]);
            }
            row[s * k + channel[i]] = 1.0;
        }
        Ok(Environment { nl, channel, features })
    }

    fn feature_row<'a>(&self, env: &'a Environment, i: usize) -> &'a [f64] {
        let dim = self.arch.input_dim();
        &env.features[i * dim..(i + 1) * dim]
    }

    /// Per-atom input gradients ∂e_i/∂x_i and the resulting ∇_r U.
    fn input_gradients(&self, env: &Environment, tape: &mut MlpTape) -> (Vec<f64>, Vec<f64>) {
        let n = env.channel.len();
        let dim = self.arch.input_dim();
        let mut energies = vec![0.0; n];
        let mut gx = vec![0.0; n * dim];
        for i in 0..n {
            energies[i] = self.shape.forward(&self.params, self.feature_row(env, i), tape);
            self.shape
                .input_gradient(&self.params, tape, &mut gx[i * dim..(i + 1) * dim]);
        }
        (energies, gx)
    }

    fn position_gradient(&self, env: &Environment, gx: &[f64]) -> Vec<Vec3> {
        let n = env.channel.len();
        let k = self.arch.n_basis;
        let dim = self.arch.input_dim();
        let mut der = vec![0.0; k];
        let mut grad = vec![[0.0; 3]; n];
        for i in 0..n {
            let gi = &gx[i * dim..(i + 1) * dim];
            for nb in env.nl.neighbors(i) {
                let ch = env.channel[nb.j];
                self.basis.derivatives(nb.dist, &mut der);
                let c: f64 = gi[ch * k..(ch + 1) * k].iter().zip(&der).map(|(g, d)| g * d).sum();
                // x_i depends on d = |r_j − r_i|: ∂d/∂r_i = −u, ∂d/∂r_j = u
                let s = c / nb.dist;
                for x in 0..3 {
                    grad[i][x] -= s * nb.disp[x];
                    grad[nb.j][x] += s * nb.disp[x];
                }
            }
        }
        grad
    }

    /// ∇_θ of Σ_{i ∈ atoms} e_i, plus that partial energy.
    fn restricted_param_gradient(&self, env: &Environment, atoms: impl Iterator<Item = usize>) -> (f64, Vec<f64>) {
        let mut tape = self.shape.new_tape();
        let mut grad = vec![0.0; self.params.len()];
        let mut energy = 0.0;
        for i in atoms {
            energy += self.shape.forward(&self.params, self.feature_row(env, i), &mut tape);
            self.shape
                .param_backward(&self.params, &mut tape, 1.0, false, &mut grad);
        }
        (energy, grad)
    }

    /// Energy and ∇_θ U of a configuration.
    pub fn energy_and_param_gradient(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<f64>)> {
        let env = self.environment(spec, positions)?;
        Ok(self.restricted_param_gradient(&env, 0..positions.len()))
    }

    /// ∇_θ U of a configuration.
    pub fn param_gradient(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self.energy_and_param_gradient(spec, positions)?.1)
    }

    /// Sum of the atomic energies of `atoms`, each computed in the full
    /// environment of the configuration.
    pub fn local_energy(&self, spec: &SystemSpec, positions: &[Vec3], atoms: &[usize]) -> Result<f64> {
        Ok(self.local_energy_and_param_gradient(spec, positions, atoms)?.0)
    }

    /// Local energy of `atoms` and its parameter gradient.
    pub fn local_energy_and_param_gradient(
        &self,
        spec: &SystemSpec,
        positions: &[Vec3],
        atoms: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        if atoms.is_empty() {
            return Err(Error::InvalidSystem("empty neighborhood".into()));
        }
        if let Some(&a) = atoms.iter().find(|&&a| a >= positions.len()) {
            return Err(Error::InvalidSystem(format!("neighborhood atom {a} out of range")));
        }
        let env = self.environment(spec, positions)?;
        Ok(self.restricted_param_gradient(&env, atoms.iter().cloned()))
    }

    fn atomic_energies(&self, env: &Environment) -> Vec<f64> {
        let mut tape = self.shape.new_tape();
        (0..env.channel.len())
            .map(|i| self.shape.forward(&self.params, self.feature_row(env, i), &mut tape))
            .collect()
    }

    /// Energy/force loss terms of one frame,
    /// λ_U·(U_ref − U_θ)² + λ_F·Σ_i |F_ref,i + ∇_i U_θ|², with the exact
    /// parameter gradient (the force term is differentiated through ∇_r U).
    pub fn qm_frame_terms(
        &self,
        spec: &SystemSpec,
        positions: &[Vec3],
        ref_energy: f64,
        ref_forces: &[Vec3],
        lambda_u: f64,
        lambda_f: f64,
    ) -> Result<QmFrameTerms> {
        if ref_forces.len() != positions.len() {
            return Err(Error::DimensionMismatch("reference forces".into()));
        }
        let env = self.environment(spec, positions)?;
        let n = positions.len();
        let k = self.arch.n_basis;
        let dim = self.arch.input_dim();
        let mut tape = self.shape.new_tape();

        let (energies, gx) = self.input_gradients(&env, &mut tape);
        let energy = total(&energies);
        let grad_r = self.position_gradient(&env, &gx);

        let e_res = energy - ref_energy;
        let energy_term = lambda_u * e_res * e_res;
        let mut force_term = 0.0;
        // v = ∂(force term)/∂(∇_r U) = 2 λ_F (∇_r U + F_ref)
        let mut v = vec![[0.0; 3]; n];
        for i in 0..n {
            for x in 0..3 {
                let r = grad_r[i][x] + ref_forces[i][x];
                force_term += lambda_f * r * r;
                v[i][x] = 2.0 * lambda_f * r;
            }
        }

        // z_i = (∂x_i/∂r)·v, the feature-space direction of each atom
        let mut z = vec![0.0; n * dim];
        let mut der = vec![0.0; k];
        if lambda_f != 0.0 {
            for i in 0..n {
                for nb in env.nl.neighbors(i) {
                    let ch = env.channel[nb.j];
                    let dv = [v[nb.j][0] - v[i][0], v[nb.j][1] - v[i][1], v[nb.j][2] - v[i][2]];
                    let proj = dot(nb.disp, dv) / nb.dist;
                    if proj == 0.0 {
                        continue;
                    }
                    self.basis.derivatives(nb.dist, &mut der);
                    let row = &mut z[i * dim + ch * k..i * dim + (ch + 1) * k];
                    for (zz, d) in row.iter_mut().zip(&der) {
                        *zz += d * proj;
                    }
                }
            }
        }

        let mut gradient = vec![0.0; self.params.len()];
        let with_tangent = lambda_f != 0.0;
        for i in 0..n {
            self.shape.forward(&self.params, self.feature_row(&env, i), &mut tape);
            if with_tangent {
                self.shape
                    .forward_tangent(&self.params, &z[i * dim..(i + 1) * dim], &mut tape);
            }
            self.shape.param_backward(
                &self.params,
                &mut tape,
                2.0 * lambda_u * e_res,
                with_tangent,
                &mut gradient,
            );
        }
        Ok(QmFrameTerms {
            energy_term,
            force_term,
            gradient,
        })
    }
}

impl Potential for NeuralPotential {
    fn name(&self) -> &str {
        "neural"
    }

    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        let env = self.environment(spec, positions)?;
        Ok(self.atomic_energies(&env))
    }

    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let env = self.environment(spec, positions)?;
        let mut tape = self.shape.new_tape();
        let (energies, gx) = self.input_gradients(&env, &mut tape);
        let grad = self.position_gradient(&env, &gx);
        let forces = grad.into_iter().map(|g| [-g[0], -g[1], -g[2]]).collect();
        Ok((total(&energies), forces))
    }
}

//! Static system description and per-replica simulation state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, minimum_image_displacement, norm, Vec3};
use crate::units::{AMU_A2_FS2_TO_KCAL_MOL, BOLTZMANN};

/// Orthorhombic periodic box. Its presence on a [`SystemSpec`] turns on
/// periodic boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lengths: [f64; 3],
}

impl Cell {
    pub fn cubic(l: f64) -> Self {
        Cell { lengths: [l; 3] }
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn min_length(&self) -> f64 {
        self.lengths.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// A covalent bond between two atoms with its equilibrium length in Å.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

/// Species, masses, bond topology and box of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    symbols: Vec<String>,
    species: Vec<usize>,
    masses: Vec<f64>,
    bonds: Vec<Bond>,
    cell: Option<Cell>,
    #[serde(skip)]
    molecule_of: Vec<usize>,
}

pub struct SystemSpecBuilder {
    symbols: Vec<String>,
    species: Vec<usize>,
    masses: Vec<f64>,
    bonds: Vec<Bond>,
    cell: Option<Cell>,
}

impl SystemSpecBuilder {
    pub fn atoms(mut self, species: Vec<usize>, masses: Vec<f64>) -> Self {
        self.species = species;
        self.masses = masses;
        self
    }

    pub fn bonds(mut self, bonds: Vec<Bond>) -> Self {
        self.bonds = bonds;
        self
    }

    pub fn cell(mut self, lengths: Option<[f64; 3]>) -> Self {
        self.cell = lengths.map(|lengths| Cell { lengths });
        self
    }

    pub fn build(self) -> Result<SystemSpec> {
        let mut spec = SystemSpec {
            symbols: self.symbols,
            species: self.species,
            masses: self.masses,
            bonds: self.bonds,
            cell: self.cell,
            molecule_of: Vec::new(),
        };
        spec.validate()?;
        spec.molecule_of = connected_components(spec.n_atoms(), &spec.bonds);
        Ok(spec)
    }
}

impl SystemSpec {
    /// Starts a builder; `symbols[c]` is the element symbol of species code `c`.
    pub fn builder(symbols: Vec<String>) -> SystemSpecBuilder {
        SystemSpecBuilder {
            symbols,
            species: Vec::new(),
            masses: Vec::new(),
            bonds: Vec::new(),
            cell: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.species.len();
        if n == 0 {
            return Err(Error::InvalidSystem("system has no atoms".into()));
        }
        if self.masses.len() != n {
            return Err(Error::InvalidSystem(format!(
                "{} masses for {} atoms",
                self.masses.len(),
                n
            )));
        }
        if let Some(&m) = self.masses.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidSystem(format!("non-positive mass {m}")));
        }
        if let Some(&s) = self.species.iter().find(|&&s| s >= self.symbols.len()) {
            return Err(Error::InvalidSystem(format!(
                "species code {s} has no symbol ({} known)",
                self.symbols.len()
            )));
        }
        for b in &self.bonds {
            if b.i >= n || b.j >= n {
                return Err(Error::InvalidSystem(format!(
                    "bond ({}, {}) out of range for {n} atoms",
                    b.i, b.j
                )));
            }
            if b.i == b.j {
                return Err(Error::InvalidSystem(format!("self-bond on atom {}", b.i)));
            }
            if !(b.length > 0.0) {
                return Err(Error::InvalidSystem(format!(
                    "bond ({}, {}) has non-positive length {}",
                    b.i, b.j, b.length
                )));
            }
        }
        if let Some(cell) = &self.cell {
            if cell.lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                return Err(Error::InvalidSystem(format!(
                    "box lengths must be positive, got {:?}",
                    cell.lengths
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds derived data after deserialization.
    pub fn revalidate(mut self) -> Result<Self> {
        self.validate()?;
        self.molecule_of = connected_components(self.n_atoms(), &self.bonds);
        Ok(self)
    }

    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n_species(&self) -> usize {
        self.symbols.len()
    }

    pub fn species(&self) -> &[usize] {
        &self.species
    }

    pub fn symbol_of(&self, atom: usize) -> &str {
        &self.symbols[self.species[atom]]
    }

    pub fn species_code(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn cell(&self) -> Option<&Cell> {
        self.cell.as_ref()
    }

    pub fn is_periodic(&self) -> bool {
        self.cell.is_some()
    }

    /// Box volume in Å³ when periodic.
    pub fn volume(&self) -> Option<f64> {
        self.cell.map(|c| c.volume())
    }

    pub fn with_cell(&self, cell: Option<Cell>) -> Result<Self> {
        let mut s = self.clone();
        s.cell = cell;
        s.validate()?;
        Ok(s)
    }

    pub fn is_bonded(&self, i: usize, j: usize) -> bool {
        self.bonds
            .iter()
            .any(|b| (b.i == i && b.j == j) || (b.i == j && b.j == i))
    }

    /// Molecule index of every atom (connected components of the bond graph,
    /// numbered by their lowest atom index).
    pub fn molecule_of(&self) -> &[usize] {
        &self.molecule_of
    }

    /// Atom lists of every molecule, in molecule-index order.
    pub fn molecules(&self) -> Vec<Vec<usize>> {
        let n_mol = self.molecule_of.iter().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); n_mol];
        for (atom, &m) in self.molecule_of.iter().enumerate() {
            out[m].push(atom);
        }
        out
    }

    /// Sub-system made of `atoms`, keeping bonds with both ends inside.
    pub fn subsystem(&self, atoms: &[usize]) -> Result<SystemSpec> {
        let mut remap = vec![usize::MAX; self.n_atoms()];
        for (k, &a) in atoms.iter().enumerate() {
            if a >= self.n_atoms() {
                return Err(Error::InvalidSystem(format!("atom {a} out of range")));
            }
            remap[a] = k;
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.i] != usize::MAX && remap[b.j] != usize::MAX)
            .map(|b| Bond {
                i: remap[b.i],
                j: remap[b.j],
                length: b.length,
            })
            .collect();
        SystemSpec::builder(self.symbols.clone())
            .atoms(
                atoms.iter().map(|&a| self.species[a]).collect(),
                atoms.iter().map(|&a| self.masses[a]).collect(),
            )
            .bonds(bonds)
            .cell(self.cell.map(|c| c.lengths))
            .build()
    }
}

fn connected_components(n: usize, bonds: &[Bond]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for b in bonds {
        if b.i >= n || b.j >= n {
            continue;
        }
        let (ri, rj) = (find(&mut parent, b.i), find(&mut parent, b.j));
        if ri != rj {
            let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
            parent[hi] = lo;
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    roots
        .iter()
        .map(|&r| {
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            label[r]
        })
        .collect()
}

/// Positions (Å), momenta (amu·Å/fs) and time (fs) of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub momenta: Vec<Vec3>,
    pub time: f64,
}

impl SimState {
    pub fn new(positions: Vec<Vec3>, momenta: Vec<Vec3>, time: f64) -> Result<Self> {
        let s = SimState {
            positions,
            momenta,
            time,
        };
        if s.positions.len() != s.momenta.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions but {} momenta",
                s.positions.len(),
                s.momenta.len()
            )));
        }
        s.check_finite()?;
        Ok(s)
    }

    /// State at rest.
    pub fn at_rest(positions: Vec<Vec3>) -> Self {
        let n = positions.len();
        SimState {
            positions,
            momenta: vec![[0.0; 3]; n],
            time: 0.0,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn check_shape(&self, spec: &SystemSpec) -> Result<()> {
        if self.positions.len() != spec.n_atoms() || self.momenta.len() != spec.n_atoms() {
            return Err(Error::DimensionMismatch(format!(
                "state has {}/{} positions/momenta, system has {} atoms",
                self.positions.len(),
                self.momenta.len(),
                spec.n_atoms()
            )));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let bad = self
            .positions
            .iter()
            .chain(self.momenta.iter())
            .flatten()
            .any(|x| !x.is_finite());
        if bad || !self.time.is_finite() {
            return Err(Error::NonFinite(format!("state at t = {} fs", self.time)));
        }
        Ok(())
    }

    /// Velocities in Å/fs.
    pub fn velocities(&self, spec: &SystemSpec) -> Vec<Vec3> {
        self.momenta
            .iter()
            .zip(spec.masses())
            .map(|(p, &m)| [p[0] / m, p[1] / m, p[2] / m])
            .collect()
    }
}

/// Σ|p_i|²/(2 m_i) in kcal/mol.
pub fn kinetic_energy(state: &SimState, spec: &SystemSpec) -> Result<f64> {
    state.check_shape(spec)?;
    let ke: f64 = state
        .momenta
        .iter()
        .zip(spec.masses())
        .map(|(p, &m)| dot(*p, *p) / (2.0 * m))
        .sum();
    Ok(ke * AMU_A2_FS2_TO_KCAL_MOL)
}

/// 2·KE / (3N·k_B) in K.
pub fn instantaneous_temperature(state: &SimState, spec: &SystemSpec) -> Result<f64> {
    let ke = kinetic_energy(state, spec)?;
    Ok(2.0 * ke / (3.0 * spec.n_atoms() as f64 * BOLTZMANN))
}

/// Bonded distance of `bond` in `state`, minimum-image under PBC.
pub fn bond_length(state: &SimState, spec: &SystemSpec, bond: &Bond) -> f64 {
    norm(minimum_image_displacement(
        state.positions[bond.i],
        state.positions[bond.j],
        spec,
    ))
}

/// A set of atoms of one sampled state (`state_index` into the sample list
/// it was drawn from).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalNeighborhood {
    pub state_index: usize,
    atoms: Vec<usize>,
}

impl LocalNeighborhood {
    pub fn new(state_index: usize, atoms: Vec<usize>, n_atoms: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidSystem("empty neighborhood".into()));
        }
        let mut seen = vec![false; n_atoms];
        for &a in &atoms {
            if a >= n_atoms {
                return Err(Error::InvalidSystem(format!(
                    "neighborhood atom {a} out of range for {n_atoms} atoms"
                )));
            }
            if std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidSystem(format!("atom {a} repeated in neighborhood")));
            }
        }
        Ok(LocalNeighborhood { state_index, atoms })
    }

    pub fn atoms(&self) -> &[usize] {
        &self.atoms
    }

    /// Local state: positions and momenta of the neighborhood atoms, with a
    /// matching sub-system description.
    pub fn extract(&self, state: &SimState, spec: &SystemSpec) -> Result<(SimState, SystemSpec)> {
        let sub = spec.subsystem(&self.atoms)?;
        let local = SimState {
            positions: self.atoms.iter().map(|&a| state.positions[a]).collect(),
            momenta: self.atoms.iter().map(|&a| state.momenta[a]).collect(),
            time: state.time,
        };
        Ok((local, sub))
    }
}

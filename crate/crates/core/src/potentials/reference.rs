use super::{total, Potential};
use crate::error::{Error, Result};
use crate::geometry::{dot, minimum_image_displacement, norm, scale, sub, NeighborList, Vec3};
use crate::system::SystemSpec;

fn check_len(spec: &SystemSpec, positions: &[Vec3]) -> Result<()> {
    if positions.len() != spec.n_atoms() {
        return Err(Error::DimensionMismatch(format!(
            "{} positions for {} atoms",
            positions.len(),
            spec.n_atoms()
        )));
    }
    Ok(())
}

/// U = ½k·|r_i − r0_i|² for every atom, each pinned to its own center.
#[derive(Debug, Clone)]
pub struct HarmonicOscillator {
    pub k: f64,
    pub centers: Vec<Vec3>,
}

impl HarmonicOscillator {
    pub fn new(k: f64, centers: Vec<Vec3>) -> Self {
        HarmonicOscillator { k, centers }
    }
}

impl Potential for HarmonicOscillator {
    fn name(&self) -> &str {
        "harmonic"
    }

    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        check_len(spec, positions)?;
        if self.centers.len() != positions.len() {
            return Err(Error::DimensionMismatch("harmonic centers".into()));
        }
        Ok(positions
            .iter()
            .zip(&self.centers)
            .map(|(r, c)| {
                let d = sub(*r, *c);
                0.5 * self.k * dot(d, d)
            })
            .collect())
    }

    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let e = self.per_atom_energies(spec, positions)?;
        let f = positions
            .iter()
            .zip(&self.centers)
            .map(|(r, c)| scale(sub(*r, *c), -self.k))
            .collect();
        Ok((total(&e), f))
    }
}

/// U(d) = a·(d² − d0²)² on the distance between atoms `i` and `j`.
#[derive(Debug, Clone)]
pub struct DoubleWellDimer {
    pub a: f64,
    pub d0: f64,
    pub i: usize,
    pub j: usize,
}

impl DoubleWellDimer {
    pub fn new(a: f64, d0: f64) -> Self {
        DoubleWellDimer { a, d0, i: 0, j: 1 }
    }

    pub fn pair_energy(&self, d: f64) -> f64 {
        let x = d * d - self.d0 * self.d0;
        self.a * x * x
    }

    /// Harmonic force constant at the bottom of the well, 8·a·d0².
    pub fn curvature(&self) -> f64 {
        8.0 * self.a * self.d0 * self.d0
    }
}

impl Potential for DoubleWellDimer {
    fn name(&self) -> &str {
        "double_well_dimer"
    }

    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        check_len(spec, positions)?;
        let d = norm(minimum_image_displacement(positions[self.i], positions[self.j], spec));
        let half = 0.5 * self.pair_energy(d);
        let mut e = vec![0.0; positions.len()];
        e[self.i] += half;
        e[self.j] += half;
        Ok(e)
    }

    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let e = self.per_atom_energies(spec, positions)?;
        let disp = minimum_image_displacement(positions[self.i], positions[self.j], spec);
        let d = norm(disp);
        // dU/dd = 4a d (d² − d0²); F_j = −dU/dd · u, u = disp/d
        let du = 4.0 * self.a * d * (d * d - self.d0 * self.d0);
        let fj = scale(disp, -du / d);
        let mut f = vec![[0.0; 3]; positions.len()];
        f[self.j] = fj;
        f[self.i] = scale(fj, -1.0);
        Ok((total(&e), f))
    }
}

/// Pairwise Lennard-Jones with energy shifted to zero at the cutoff.
/// Forces are truncated (not shifted) at the cutoff.
#[derive(Debug, Clone)]
pub struct LennardJones {
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
}

impl LennardJones {
    pub fn new(epsilon: f64, sigma: f64, cutoff: f64) -> Self {
        LennardJones { epsilon, sigma, cutoff }
    }

    fn raw(&self, r: f64) -> f64 {
        let s6 = (self.sigma / r).powi(6);
        4.0 * self.epsilon * (s6 * s6 - s6)
    }

    /// Shifted pair energy.
    pub fn pair_energy(&self, r: f64) -> f64 {
        if r >= self.cutoff {
            0.0
        } else {
            self.raw(r) - self.raw(self.cutoff)
        }
    }

    /// dU/dr.
    pub fn pair_derivative(&self, r: f64) -> f64 {
        if r >= self.cutoff {
            return 0.0;
        }
        let s6 = (self.sigma / r).powi(6);
        24.0 * self.epsilon * (s6 - 2.0 * s6 * s6) / r
    }
}

impl Potential for LennardJones {
    fn name(&self) -> &str {
        "lennard_jones"
    }

    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        let nl = NeighborList::build(spec, positions, self.cutoff)?;
        Ok((0..positions.len())
            .map(|i| nl.neighbors(i).iter().map(|nb| 0.5 * self.pair_energy(nb.dist)).sum())
            .collect())
    }

    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let nl = NeighborList::build(spec, positions, self.cutoff)?;
        let mut e = vec![0.0; positions.len()];
        let mut f = vec![[0.0; 3]; positions.len()];
        for i in 0..positions.len() {
            for nb in nl.neighbors(i) {
                e[i] += 0.5 * self.pair_energy(nb.dist);
                // F_i = dU/dr · u_ij with u_ij pointing from i to j
                let c = self.pair_derivative(nb.dist) / nb.dist;
                for k in 0..3 {
                    f[i][k] += c * nb.disp[k];
                }
            }
        }
        Ok((total(&e), f))
    }
}

/// Per-species Lennard-Jones parameters for the intermolecular part of
/// [`ToyWater`] (Lorentz–Berthelot mixing).
#[derive(Debug, Clone, Copy)]
pub struct LjSpecies {
    pub epsilon: f64,
    pub sigma: f64,
}

/// Flexible three-site water without electrostatics: harmonic O–H bonds,
/// harmonic H–O–H angle, and Lennard-Jones between atoms of different
/// molecules.
#[derive(Debug, Clone)]
pub struct ToyWater {
    /// U_bond = ½·k_b·(r − b)²
    pub bond_k: f64,
    pub bond_length: f64,
    /// U_angle = ½·k_θ·(θ − θ0)², θ in radians
    pub angle_k: f64,
    pub angle_theta0: f64,
    pub oxygen: LjSpecies,
    pub hydrogen: LjSpecies,
    pub cutoff: f64,
}

impl Default for ToyWater {
    fn default() -> Self {
        ToyWater {
            bond_k: 1059.162,
            bond_length: 1.012,
            angle_k: 75.90,
            angle_theta0: 113.24_f64.to_radians(),
            oxygen: LjSpecies {
                epsilon: 0.1554,
                sigma: 3.1655,
            },
            hydrogen: LjSpecies {
                epsilon: 0.02,
                sigma: 2.0,
            },
            cutoff: 6.0,
        }
    }
}

struct WaterTopology {
    oxygen: usize,
    hydrogens: [usize; 2],
}

impl ToyWater {
    fn lj_of(&self, spec: &SystemSpec, atom: usize) -> LjSpecies {
        if spec.symbol_of(atom) == "O" {
            self.oxygen
        } else {
            self.hydrogen
        }
    }

    fn pair(&self, a: LjSpecies, b: LjSpecies, r: f64) -> (f64, f64) {
        let lj = LennardJones::new((a.epsilon * b.epsilon).sqrt(), 0.5 * (a.sigma + b.sigma), self.cutoff);
        (lj.pair_energy(r), lj.pair_derivative(r))
    }

    fn topology(&self, spec: &SystemSpec) -> Result<Vec<WaterTopology>> {
        let mut out = Vec::new();
        for mol in spec.molecules() {
            let oxygens: Vec<usize> = mol.iter().cloned().filter(|&a| spec.symbol_of(a) == "O").collect();
            let hydrogens: Vec<usize> = mol.iter().cloned().filter(|&a| spec.symbol_of(a) == "H").collect();
            if oxygens.len() != 1 || hydrogens.len() != 2 || mol.len() != 3 {
                return Err(Error::InvalidSystem(format!(
                    "toy water expects H2O molecules, found molecule {mol:?}"
                )));
            }
            out.push(WaterTopology {
                oxygen: oxygens[0],
                hydrogens: [hydrogens[0], hydrogens[1]],
            });
        }
        Ok(out)
    }

    fn evaluate(&self, spec: &SystemSpec, positions: &[Vec3], want_forces: bool) -> Result<(Vec<f64>, Vec<Vec3>)> {
        check_len(spec, positions)?;
        let n = positions.len();
        let mut e = vec![0.0; n];
        let mut f = vec![[0.0; 3]; if want_forces { n } else { 0 }];

        for w in self.topology(spec)? {
            let o = w.oxygen;
            let mut vecs = [[0.0; 3]; 2];
            let mut lens = [0.0; 2];
            for (k, &h) in w.hydrogens.iter().enumerate() {
                let d = minimum_image_displacement(positions[o], positions[h], spec);
                let r = norm(d);
                vecs[k] = d;
                lens[k] = r;
                let dev = r - self.bond_length;
                let eb = 0.5 * self.bond_k * dev * dev;
                e[o] += 0.5 * eb;
                e[h] += 0.5 * eb;
                if want_forces {
                    let c = -self.bond_k * dev / r;
                    for x in 0..3 {
                        f[h][x] += c * d[x];
                        f[o][x] -= c * d[x];
                    }
                }
            }
            // angle at the oxygen
            let cos = (dot(vecs[0], vecs[1]) / (lens[0] * lens[1])).clamp(-1.0, 1.0);
            let theta = cos.acos();
            let dtheta = theta - self.angle_theta0;
            e[o] += 0.5 * self.angle_k * dtheta * dtheta;
            if want_forces {
                let sin = (1.0 - cos * cos).sqrt().max(1e-12);
                let du = self.angle_k * dtheta;
                let [a, b] = vecs;
                let [la, lb] = lens;
                // dθ/da = −(b/(|a||b|) − cos·a/|a|²)/sinθ, same with a↔b
                let mut fo = [0.0; 3];
                for x in 0..3 {
                    let da = -(b[x] / (la * lb) - cos * a[x] / (la * la)) / sin;
                    let db = -(a[x] / (la * lb) - cos * b[x] / (lb * lb)) / sin;
                    f[w.hydrogens[0]][x] -= du * da;
                    f[w.hydrogens[1]][x] -= du * db;
                    fo[x] += du * (da + db);
                }
                for x in 0..3 {
                    f[o][x] += fo[x];
                }
            }
        }

        let nl = NeighborList::build(spec, positions, self.cutoff)?;
        let mol = spec.molecule_of();
        for i in 0..n {
            let pi = self.lj_of(spec, i);
            for nb in nl.neighbors(i) {
                if mol[i] == mol[nb.j] {
                    continue;
                }
                let (u, du) = self.pair(pi, self.lj_of(spec, nb.j), nb.dist);
                e[i] += 0.5 * u;
                if want_forces {
                    let c = du / nb.dist;
                    for x in 0..3 {
                        f[i][x] += c * nb.disp[x];
                    }
                }
            }
        }
        Ok((e, f))
    }
}

impl Potential for ToyWater {
    fn name(&self) -> &str {
        "toy_water"
    }

    fn per_atom_energies(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self.evaluate(spec, positions, false)?.0)
    }

    fn energy_forces(&self, spec: &SystemSpec, positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let (e, f) = self.evaluate(spec, positions, true)?;
        Ok((total(&e), f))
    }
}

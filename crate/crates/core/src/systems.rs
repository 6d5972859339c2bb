//! Ready-made toy systems: topology, a starting geometry and the reference
//! potential that labels datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, dot, norm, scale, sub, wrap_displacement, Vec3};
use crate::potentials::{DoubleWellDimer, HarmonicOscillator, LennardJones, Potential, ToyWater};
use crate::system::{Bond, Cell, SystemSpec};
use crate::units::atomic_mass;

/// Avogadro's number × 1e-24, converting g/cm³ to amu/Å³.
const G_PER_CM3_TO_AMU_PER_A3: f64 = 0.602214076;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimerParams {
    /// Well stiffness a in U = a(d² − d0²)², kcal/mol/Å⁴.
    pub a: f64,
    pub d0: f64,
    pub symbol: String,
}

impl Default for DimerParams {
    fn default() -> Self {
        DimerParams {
            a: 50.0,
            d0: 1.0,
            symbol: "C".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LjClusterParams {
    pub n_atoms: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
    pub symbol: String,
}

impl Default for LjClusterParams {
    fn default() -> Self {
        LjClusterParams {
            n_atoms: 13,
            epsilon: 3.0,
            sigma: 3.0,
            cutoff: 9.0,
            symbol: "Ar".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaterParams {
    pub n_molecules: usize,
    /// Mass density in g/cm³, which fixes the cubic box.
    pub density: f64,
}

impl Default for WaterParams {
    fn default() -> Self {
        WaterParams {
            n_molecules: 8,
            density: 0.997,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicParams {
    pub n_atoms: usize,
    /// Spring constant, kcal/mol/Å².
    pub k: f64,
    pub mass: f64,
}

impl Default for HarmonicParams {
    fn default() -> Self {
        HarmonicParams {
            n_atoms: 1,
            k: 1.0,
            mass: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Dimer(DimerParams),
    LjCluster(LjClusterParams),
    Water(WaterParams),
    Harmonic(HarmonicParams),
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::Dimer(DimerParams::default())
    }
}

pub struct ToySystem {
    pub spec: SystemSpec,
    pub initial_positions: Vec<Vec3>,
    pub reference: Box<dyn Potential>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<ToySystem> {
        match self {
            SystemConfig::Dimer(p) => dimer(p),
            SystemConfig::LjCluster(p) => lj_cluster(p),
            SystemConfig::Water(p) => water_box(p),
            SystemConfig::Harmonic(p) => harmonic(p),
        }
    }
}

fn mass_of(symbol: &str) -> Result<f64> {
    atomic_mass(symbol).ok_or_else(|| Error::InvalidConfig(format!("no mass known for element {symbol}")))
}

pub fn dimer(p: &DimerParams) -> Result<ToySystem> {
    if !(p.a > 0.0 && p.d0 > 0.0) {
        return Err(Error::InvalidConfig("dimer needs a > 0 and d0 > 0".into()));
    }
    let m = mass_of(&p.symbol)?;
    let spec = SystemSpec::builder(vec![p.symbol.clone()])
        .atoms(vec![0, 0], vec![m, m])
        .bonds(vec![Bond {
            i: 0,
            j: 1,
            length: p.d0,
        }])
        .build()?;
    Ok(ToySystem {
        spec,
        initial_positions: vec![[0.0; 3], [p.d0, 0.0, 0.0]],
        reference: Box::new(DoubleWellDimer::new(p.a, p.d0)),
    })
}

/// Atoms on a simple cubic grid at the pair-minimum spacing, filled in
/// x-fastest order.
pub fn lj_cluster(p: &LjClusterParams) -> Result<ToySystem> {
    if p.n_atoms < 2 || !(p.epsilon > 0.0 && p.sigma > 0.0 && p.cutoff > p.sigma) {
        return Err(Error::InvalidConfig("invalid Lennard-Jones cluster parameters".into()));
    }
    let m = mass_of(&p.symbol)?;
    let side = (p.n_atoms as f64).cbrt().ceil() as usize;
    let a = 2f64.powf(1.0 / 6.0) * p.sigma;
    let positions = (0..p.n_atoms)
        .map(|k| {
            let (x, y, z) = (k % side, (k / side) % side, k / (side * side));
            [x as f64 * a, y as f64 * a, z as f64 * a]
        })
        .collect();
    let spec = SystemSpec::builder(vec![p.symbol.clone()])
        .atoms(vec![0; p.n_atoms], vec![m; p.n_atoms])
        .build()?;
    Ok(ToySystem {
        spec,
        initial_positions: positions,
        reference: Box::new(LennardJones::new(p.epsilon, p.sigma, p.cutoff)),
    })
}

/// Molecules in their equilibrium geometry filling a periodic box at the
/// requested density: on a cubic lattice when the count is a perfect
/// cube, randomly packed otherwise. Atom order is O, H, H per
/// molecule.
pub fn water_box(p: &WaterParams) -> Result<ToySystem> {
    if p.n_molecules == 0 || !(p.density > 0.0) {
        return Err(Error::InvalidConfig("invalid water box parameters".into()));
    }
    let model = ToyWater::default();
    let (mo, mh) = (mass_of("O")?, mass_of("H")?);
    let n = p.n_molecules;
    let volume = n as f64 * (mo + 2.0 * mh) / (p.density * G_PER_CM3_TO_AMU_PER_A3);
    let l = volume.cbrt();
    let half = 0.5 * model.angle_theta0;
    let (b, s, c) = (model.bond_length, half.sin(), half.cos());
    let side = (n as f64).cbrt().round() as usize;
    let molecules = if side.pow(3) == n {
        let spacing = l / side as f64;
        (0..n)
            .map(|k| {
                let (x, y, z) = (k % side, (k / side) % side, k / (side * side));
                let o = [
                    (x as f64 + 0.25) * spacing,
                    (y as f64 + 0.25) * spacing,
                    (z as f64 + 0.5) * spacing,
                ];
                [
                    o,
                    [o[0] + b * s, o[1] + b * c, o[2]],
                    [o[0] - b * s, o[1] + b * c, o[2]],
                ]
            })
            .collect()
    } else {
        random_packing(n, l, b, s, c)?
    };
    let mut positions = Vec::with_capacity(3 * n);
    let mut species = Vec::with_capacity(3 * n);
    let mut masses = Vec::with_capacity(3 * n);
    let mut bonds = Vec::with_capacity(2 * n);
    for (k, m) in molecules.into_iter().enumerate() {
        positions.extend(m);
        species.extend([0, 1, 1]);
        masses.extend([mo, mh, mh]);
        bonds.push(Bond {
            i: 3 * k,
            j: 3 * k + 1,
            length: b,
        });
        bonds.push(Bond {
            i: 3 * k,
            j: 3 * k + 2,
            length: b,
        });
    }
    let spec = SystemSpec::builder(vec!["O".into(), "H".into()])
        .atoms(species, masses)
        .bonds(bonds)
        .cell(Some([l; 3]))
        .build()?;
    Ok(ToySystem {
        spec,
        initial_positions: positions,
        reference: Box::new(model),
    })
}

/// Seeded random insertion of rigid molecules for counts that do not fill
/// a cubic lattice. Rejects trial placements closer than 2.6 Å O–O or
/// 1.7 Å for any other pair.
fn random_packing(n: usize, l: f64, b: f64, s: f64, c: f64) -> Result<Vec<[Vec3; 3]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cell = Cell::cubic(l);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v: Vec3 = [0.0; 3].map(|_: f64| rng.sample(StandardNormal));
        let r = norm(v);
        if r > 1e-6 {
            return scale(v, 1.0 / r);
        }
    };
    let mut placed: Vec<[Vec3; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..100_000 {
            let o: Vec3 = [0.0; 3].map(|_: f64| rng.random_range(0.0..l));
            let u = unit(&mut rng);
            let w = unit(&mut rng);
            let v = sub(w, scale(u, dot(w, u)));
            if norm(v) < 1e-3 {
                continue;
            }
            let v = scale(v, 1.0 / norm(v));
            let m = [
                o,
                add(o, scale(add(scale(u, c), scale(v, s)), b)),
                add(o, scale(sub(scale(u, c), scale(v, s)), b)),
            ];
            let clear = placed.iter().all(|other| {
                (0..3).all(|i| {
                    (0..3).all(|j| {
                        let d = norm(wrap_displacement(sub(m[i], other[j]), &cell));
                        d >= if i == 0 && j == 0 { 2.6 } else { 1.7 }
                    })
                })
            });
            if clear {
                found = Some(m);
                break;
            }
        }
        placed.push(found.ok_or_else(|| Error::InvalidConfig(format!("could not pack {n} molecules in the box")))?);
    }
    Ok(placed)
}

/// Independent atoms, each pinned to the origin.
pub fn harmonic(p: &HarmonicParams) -> Result<ToySystem> {
    if p.n_atoms == 0 || !(p.k > 0.0 && p.mass > 0.0) {
        return Err(Error::InvalidConfig("invalid harmonic parameters".into()));
    }
    let centers: Vec<Vec3> = (0..p.n_atoms).map(|_| [0.0; 3]).collect();
    let spec = SystemSpec::builder(vec!["X".into()])
        .atoms(vec![0; p.n_atoms], vec![p.mass; p.n_atoms])
        .build()?;
    Ok(ToySystem {
        spec,
        initial_positions: centers.clone(),
        reference: Box::new(HarmonicOscillator::new(p.k, centers)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn water_box_has_bulk_density() {
        let sys = water_box(&WaterParams::default()).unwrap();
        let v = sys.spec.volume().unwrap();
        assert!((v / 8.0 - 29.99).abs() < 0.1, "volume per molecule {}", v / 8.0);
        assert_eq!(sys.spec.molecules().len(), 8);
        let e = sys.reference.energy(&sys.spec, &sys.initial_positions).unwrap();
        assert!(e.is_finite());
    }

    #[test]
    fn small_water_boxes_start_without_overlaps() {
        for n in 1..=30 {
            let sys = water_box(&WaterParams {
                n_molecules: n,
                ..Default::default()
            })
            .unwrap();
            let s = crate::SimState::at_rest(sys.initial_positions.clone());
            let d = crate::stability::min_nonbonded_distance(&s, &sys.spec);
            assert!(d > 1.2, "{n} molecules: {d}");
        }
    }

    #[test]
    fn lj_cluster_starts_bound() {
        let sys = lj_cluster(&LjClusterParams::default()).unwrap();
        let e = sys.reference.energy(&sys.spec, &sys.initial_positions).unwrap();
        assert!(e < 0.0);
    }

    #[test]
    fn dimer_starts_at_the_well_bottom() {
        let sys = dimer(&DimerParams::default()).unwrap();
        assert_eq!(sys.reference.energy(&sys.spec, &sys.initial_positions).unwrap(), 0.0);
    }

    #[test]
    fn config_parses_with_defaults() {
        let c: SystemConfig = serde_json::from_str(r#"{"kind":"dimer","a":20.0}"#).unwrap();
        assert_eq!(
            c,
            SystemConfig::Dimer(DimerParams {
                a: 20.0,
                ..Default::default()
            })
        );
        assert!(serde_json::from_str::<SystemConfig>(r#"{"kind":"dimer","b":1.0}"#).is_err());
    }
}

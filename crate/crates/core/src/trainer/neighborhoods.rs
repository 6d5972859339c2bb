use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{minimum_image_displacement, norm};
use crate::system::{LocalNeighborhood, SimState, SystemSpec};

/// Largest |bond length − equilibrium length| over the bonds inside
/// `molecule`; 0 for a molecule without bonds.
pub fn molecule_bond_deviation(state: &SimState, spec: &SystemSpec, molecule: &[usize]) -> f64 {
    spec.bonds()
        .iter()
        .filter(|b| molecule.contains(&b.i))
        .map(|b| {
            let d = norm(minimum_image_displacement(
                state.positions[b.i],
                state.positions[b.j],
                spec,
            ));
            (d - b.length).abs()
        })
        .fold(0.0, f64::max)
}

/// Bin index of every (state, molecule) pair, with `bins` equal-width
/// bins spanning [0, largest deviation]. Returned in state-major order.
pub fn deviation_bins(states: &[SimState], spec: &SystemSpec, bins: usize) -> Vec<(usize, usize, usize)> {
    let molecules = spec.molecules();
    let mut devs = Vec::with_capacity(states.len() * molecules.len());
    for (s, state) in states.iter().enumerate() {
        for (m, mol) in molecules.iter().enumerate() {
            devs.push((s, m, molecule_bond_deviation(state, spec, mol)));
        }
    }
    let max = devs.iter().map(|d| d.2).fold(0.0, f64::max);
    devs.into_iter()
        .map(|(s, m, d)| {
            let b = if max > 0.0 {
                ((d / max * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            (s, m, b)
        })
        .collect()
}

/// Single-molecule neighborhoods drawn from `states`, balanced over bond
/// deviation: molecules are binned by their largest bond deviation and up
/// to `per_bin` are drawn uniformly from each bin. The result is sorted by
/// state and then by first atom.
pub fn sample_local_neighborhoods(
    states: &[SimState],
    spec: &SystemSpec,
    bins: usize,
    per_bin: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LocalNeighborhood>> {
    let bins = bins.max(1);
    let molecules = spec.molecules();
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); bins];
    for (s, m, b) in deviation_bins(states, spec, bins) {
        members[b].push((s, m));
    }
    let mut picked = Vec::new();
    for occupants in &members {
        if occupants.is_empty() {
            continue;
        }
        let k = per_bin.min(occupants.len());
        let mut chosen: Vec<usize> = sample(rng, occupants.len(), k).into_vec();
        chosen.sort_unstable();
        picked.extend(chosen.into_iter().map(|c| occupants[c]));
    }
    picked.sort_by_key(|&(s, m)| (s, molecules[m][0]));
    picked
        .into_iter()
        .map(|(s, m)| LocalNeighborhood::new(s, molecules[m].clone(), spec.n_atoms()))
        .collect()
}

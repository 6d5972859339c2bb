//! Instability detectors applied to sampled simulation frames.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{minimum_image_displacement, norm};
use crate::md::ReplicaSet;
use crate::observables::{integrated_abs_error, rdf_single, ObservableSpec};
use crate::system::{SimState, SystemSpec};

/// Reference RDF of one species pair for the windowed RDF criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdfReference {
    pub observable: ObservableSpec,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StabilityCriterion {
    /// Unstable when any bond deviates from its equilibrium length by more
    /// than `threshold` Å.
    BondDeviation { threshold: f64 },
    /// Unstable when any pair of atoms not joined by a bond comes closer
    /// than `threshold` Å.
    MinNonbonded { threshold: f64 },
    /// Unstable when, for any reference, the RDF averaged over the last
    /// `window` ps differs from the reference by more than `threshold` in
    /// integrated absolute error.
    RdfMae {
        threshold: f64,
        window: f64,
        references: Vec<RdfReference>,
    },
}

impl StabilityCriterion {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StabilityCriterion::BondDeviation { threshold } | StabilityCriterion::MinNonbonded { threshold } => {
                *threshold > 0.0
            }
            StabilityCriterion::RdfMae {
                threshold,
                window,
                references,
            } => {
                for r in references {
                    r.observable.validate()?;
                    if r.values.len() != r.observable.bins {
                        return Err(Error::DimensionMismatch("RDF reference length".into()));
                    }
                }
                *threshold > 0.0 && *window > 0.0 && !references.is_empty()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid stability criterion {self:?}")))
        }
    }

    /// Fresh per-replica detector. `frame_interval` is the time between
    /// checked frames in fs, which sets the RDF window length.
    pub fn monitor(&self, frame_interval: f64) -> StabilityMonitor {
        let capacity = match self {
            StabilityCriterion::RdfMae { window, .. } => ((window * 1000.0 / frame_interval).round() as usize).max(1),
            _ => 0,
        };
        StabilityMonitor {
            capacity,
            frames: VecDeque::new(),
        }
    }
}

/// max over bonds of |‖r_i − r_j‖ − b_ij|.
pub fn max_bond_deviation(state: &SimState, spec: &SystemSpec) -> f64 {
    spec.bonds()
        .iter()
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

/// min over non-bonded pairs of the minimum-image distance.
pub fn min_nonbonded_distance(state: &SimState, spec: &SystemSpec) -> f64 {
    let n = spec.n_atoms();
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            if spec.is_bonded(i, j) {
                continue;
            }
            let d = norm(minimum_image_displacement(state.positions[i], state.positions[j], spec));
            min = min.min(d);
        }
    }
    min
}

/// Returns `true` when the state is unstable.
pub fn check_bond_deviation(state: &SimState, spec: &SystemSpec, threshold: f64) -> Result<bool> {
    state.check_shape(spec)?;
    if spec.bonds().is_empty() {
        return Err(Error::InvalidSystem("bond-deviation check needs bonds".into()));
    }
    Ok(max_bond_deviation(state, spec) > threshold)
}

/// Returns `true` when the state is unstable.
pub fn check_min_nonbonded(state: &SimState, spec: &SystemSpec, threshold: f64) -> Result<bool> {
    state.check_shape(spec)?;
    if spec.n_atoms() < 2 {
        return Err(Error::InvalidSystem("distance check needs two atoms".into()));
    }
    Ok(min_nonbonded_distance(state, spec) < threshold)
}

/// Integrated absolute RDF error of the frame average against each
/// reference; `true` when any exceeds `threshold`. An empty window counts
/// as stable.
pub fn check_rdf_mae(
    frames: &[SimState],
    spec: &SystemSpec,
    references: &[RdfReference],
    threshold: f64,
) -> Result<bool> {
    if frames.is_empty() {
        return Ok(false);
    }
    for r in references {
        let rdfs = frames
            .iter()
            .map(|f| rdf_single(f, spec, &r.observable))
            .collect::<Result<Vec<_>>>()?;
        if rdf_window_error(&rdfs, r)? > threshold {
            return Ok(true);
        }
    }
    Ok(false)
}

fn rdf_window_error(rdfs: &[Vec<f64>], r: &RdfReference) -> Result<f64> {
    let mut mean = vec![0.0; r.values.len()];
    for v in rdfs {
        if v.len() != mean.len() {
            return Err(Error::DimensionMismatch("RDF length".into()));
        }
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    let n = rdfs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(integrated_abs_error(&mean, &r.values, r.observable.bin_width()))
}

/// Per-replica detector state: the trailing RDF window for the RDF
/// criterion, nothing for the geometric ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityMonitor {
    capacity: usize,
    /// Per-frame RDFs, one vector per reference.
    frames: VecDeque<Vec<Vec<f64>>>,
}

impl StabilityMonitor {
    pub fn reset(&mut self) {
        self.frames.clear();
    }

    /// Feeds one frame; returns `true` when the criterion trips.
    pub fn observe(&mut self, criterion: &StabilityCriterion, state: &SimState, spec: &SystemSpec) -> Result<bool> {
        match criterion {
            StabilityCriterion::BondDeviation { threshold } => check_bond_deviation(state, spec, *threshold),
            StabilityCriterion::MinNonbonded { threshold } => check_min_nonbonded(state, spec, *threshold),
            StabilityCriterion::RdfMae {
                threshold, references, ..
            } => {
                let rdfs = references
                    .iter()
                    .map(|r| rdf_single(state, spec, &r.observable))
                    .collect::<Result<Vec<_>>>()?;
                if self.frames.len() == self.capacity {
                    self.frames.pop_front();
                }
                self.frames.push_back(rdfs);
                if self.frames.len() < self.capacity {
                    return Ok(false);
                }
                for (k, r) in references.iter().enumerate() {
                    let window: Vec<Vec<f64>> = self.frames.iter().map(|f| f[k].clone()).collect();
                    if rdf_window_error(&window, r)? > *threshold {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }
}

/// Fraction of inactive replicas.
pub fn unstable_fraction(replicas: &ReplicaSet) -> f64 {
    let inactive = replicas.active.iter().filter(|a| !**a).count();
    inactive as f64 / replicas.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::md::Replica;
    use crate::observables::ObservableKind;
    use crate::system::Bond;

    fn water_pair() -> SystemSpec {
        // two waters: O H H O H H
        let bonds = vec![
            Bond {
                i: 0,
                j: 1,
                length: 1.0,
            },
            Bond {
                i: 0,
                j: 2,
                length: 1.0,
            },
            Bond {
                i: 3,
                j: 4,
                length: 1.0,
            },
            Bond {
                i: 3,
                j: 5,
                length: 1.0,
            },
        ];
        SystemSpec::builder(vec!["O".into(), "H".into()])
            .atoms(vec![0, 1, 1, 0, 1, 1], vec![16.0, 1.0, 1.0, 16.0, 1.0, 1.0])
            .bonds(bonds)
            .build()
            .unwrap()
    }

    fn water_at(offset: f64) -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [offset, 0.0, 0.0],
            [offset + 1.0, 0.0, 0.0],
            [offset, 1.0, 0.0],
        ]
    }

    #[test]
    fn bond_deviation_thresholds() {
        let spec = water_pair();
        let s = SimState::at_rest(water_at(5.0));
        assert!(!check_bond_deviation(&s, &spec, 0.25).unwrap());
        let mut stretched = s.clone();
        stretched.positions[1][0] = 1.6;
        assert!(check_bond_deviation(&stretched, &spec, 0.5).unwrap());
        stretched.positions[1][0] = 1.3;
        assert!(check_bond_deviation(&stretched, &spec, 0.25).unwrap());
        assert!(!check_bond_deviation(&stretched, &spec, 0.5).unwrap());
    }

    #[test]
    fn nonbonded_distance_excludes_bonds() {
        let spec = water_pair();
        let s = SimState::at_rest(water_at(5.0));
        // H–H inside a molecule is non-bonded at √2 Å
        assert!(!check_min_nonbonded(&s, &spec, 1.2).unwrap());
        let mut close = s.clone();
        close.positions[4] = [0.0, -1.0, 0.0];
        assert!(check_min_nonbonded(&close, &spec, 1.2).unwrap());
    }

    #[test]
    fn unstable_fraction_counts_inactive() {
        let rep = Replica::new(SimState::at_rest(vec![[0.0; 3]]));
        let mut set = ReplicaSet::new(vec![rep; 4]).unwrap();
        assert_eq!(unstable_fraction(&set), 0.0);
        set.active = vec![false, true, false, false];
        assert_eq!(unstable_fraction(&set), 0.75);
    }

    #[test]
    fn rdf_window_waits_until_filled() {
        let spec = SystemSpec::builder(vec!["X".into()])
            .atoms(vec![0; 2], vec![1.0; 2])
            .cell(Some([10.0; 3]))
            .build()
            .unwrap();
        let obs = ObservableSpec::new(ObservableKind::Rdf { pair: None }).with_range(100, 5.0);
        let criterion = StabilityCriterion::RdfMae {
            threshold: 0.1,
            window: 0.004,
            references: vec![RdfReference {
                observable: obs.clone(),
                values: vec![0.0; 100],
            }],
        };
        let mut m = criterion.monitor(1.0);
        let s = SimState::at_rest(vec![[0.0; 3], [2.0, 0.0, 0.0]]);
        for _ in 0..3 {
            assert!(!m.observe(&criterion, &s, &spec).unwrap());
        }
        assert!(m.observe(&criterion, &s, &spec).unwrap());
    }
}

//! Small 3-vector helpers, periodic geometry and neighbor search.

use crate::error::{Error, Result};
use crate::system::{Cell, SystemSpec};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Wraps a raw displacement into the minimum image of `cell`.
#[inline]
pub fn wrap_displacement(mut d: Vec3, cell: &Cell) -> Vec3 {
    for k in 0..3 {
        let l = cell.lengths[k];
        d[k] -= l * (d[k] / l).round();
    }
    d
}

/// Shortest displacement `b - a`, honoring periodic boundaries when the
/// system has them.
pub fn minimum_image_displacement(a: Vec3, b: Vec3, spec: &SystemSpec) -> Vec3 {
    let d = sub(b, a);
    match spec.cell() {
        Some(cell) => wrap_displacement(d, cell),
        None => d,
    }
}

/// One entry of a full neighbor list: atom `j` seen from atom `i`, with
/// `disp = r_j (+ image shift) - r_i`.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub j: usize,
    pub disp: Vec3,
    pub dist: f64,
}

/// Full (both directions) neighbor list in compressed row form.
///
/// With periodic boxes shorter than twice the cutoff, an atom may appear
/// several times in a row (one entry per periodic image), including images
/// of the atom itself.
#[derive(Debug, Clone)]
pub struct NeighborList {
    pub cutoff: f64,
    offsets: Vec<usize>,
    entries: Vec<Neighbor>,
}

/// Default per-atom neighbor capacity.
pub const DEFAULT_NEIGHBOR_CAPACITY: usize = 512;

impl NeighborList {
    pub fn build(spec: &SystemSpec, positions: &[Vec3], cutoff: f64) -> Result<Self> {
        Self::build_with_capacity(spec, positions, cutoff, DEFAULT_NEIGHBOR_CAPACITY)
    }

    pub fn build_with_capacity(spec: &SystemSpec, positions: &[Vec3], cutoff: f64, capacity: usize) -> Result<Self> {
        if positions.len() != spec.n_atoms() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions for {} atoms",
                positions.len(),
                spec.n_atoms()
            )));
        }
        let rows = match spec.cell() {
            None => brute_force(positions, cutoff, |d| d),
            Some(cell) => {
                let min_image_ok = cell.lengths.iter().all(|&l| l >= 2.0 * cutoff);
                let cells_ok = cell.lengths.iter().all(|&l| l >= 3.0 * cutoff);
                if cells_ok && positions.len() > 64 {
                    cell_list(positions, cell, cutoff)
                } else if min_image_ok {
                    brute_force(positions, cutoff, |d| wrap_displacement(d, cell))
                } else {
                    all_images(positions, cell, cutoff)
                }
            }
        };

        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for (atom, row) in rows.into_iter().enumerate() {
            if row.len() > capacity {
                return Err(Error::Capacity {
                    atom,
                    found: row.len(),
                    capacity,
                });
            }
            entries.extend(row);
            offsets.push(entries.len());
        }
        Ok(NeighborList {
            cutoff,
            offsets,
            entries,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }
}

fn brute_force(positions: &[Vec3], cutoff: f64, wrap: impl Fn(Vec3) -> Vec3) -> Vec<Vec<Neighbor>> {
    let n = positions.len();
    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = wrap(sub(positions[j], positions[i]));
            let dist = norm(d);
            if dist < cutoff {
                rows[i].push(Neighbor { j, disp: d, dist });
                rows[j].push(Neighbor {
                    j: i,
                    disp: scale(d, -1.0),
                    dist,
                });
            }
        }
    }
    rows
}

fn all_images(positions: &[Vec3], cell: &Cell, cutoff: f64) -> Vec<Vec<Neighbor>> {
    let n = positions.len();
    let reach: Vec<i64> = cell.lengths.iter().map(|&l| (cutoff / l).ceil() as i64 + 1).collect();
    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            let base = wrap_displacement(sub(positions[j], positions[i]), cell);
            for sx in -reach[0]..=reach[0] {
                for sy in -reach[1]..=reach[1] {
                    for sz in -reach[2]..=reach[2] {
                        if i == j && sx == 0 && sy == 0 && sz == 0 {
                            continue;
                        }
                        let d = [
                            base[0] + sx as f64 * cell.lengths[0],
                            base[1] + sy as f64 * cell.lengths[1],
                            base[2] + sz as f64 * cell.lengths[2],
                        ];
                        let dist = norm(d);
                        if dist < cutoff {
                            rows[i].push(Neighbor { j, disp: d, dist });
                        }
                    }
                }
            }
        }
    }
    rows
}

fn cell_list(positions: &[Vec3], cell: &Cell, cutoff: f64) -> Vec<Vec<Neighbor>> {
    let n = positions.len();
    let dims: [usize; 3] = [0, 1, 2].map(|k| ((cell.lengths[k] / cutoff).floor() as usize).max(3));
    let n_cells = dims[0] * dims[1] * dims[2];
    let mut heads: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    let index_of = |p: Vec3| -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let l = cell.lengths[k];
            let frac = p[k] / l - (p[k] / l).floor();
            ((frac * dims[k] as f64) as usize).min(dims[k] - 1)
        })
    };
    let flat = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
    let mut owner = Vec::with_capacity(n);
    for (i, &p) in positions.iter().enumerate() {
        let c = index_of(p);
        heads[flat(c)].push(i);
        owner.push(c);
    }

    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        let c = owner[i];
        let mut visited = Vec::with_capacity(27);
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    let nc = [
                        (c[0] as i64 + dx).rem_euclid(dims[0] as i64) as usize,
                        (c[1] as i64 + dy).rem_euclid(dims[1] as i64) as usize,
                        (c[2] as i64 + dz).rem_euclid(dims[2] as i64) as usize,
                    ];
                    let f = flat(nc);
                    if visited.contains(&f) {
                        continue;
                    }
                    visited.push(f);
                    for &j in &heads[f] {
                        if j == i {
                            continue;
                        }
                        let d = wrap_displacement(sub(positions[j], positions[i]), cell);
                        let dist = norm(d);
                        if dist < cutoff {
                            rows[i].push(Neighbor { j, disp: d, dist });
                        }
                    }
                }
            }
        }
        rows[i].sort_by_key(|nb| nb.j);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SystemSpec;

    fn spec(n: usize, cell: Option<[f64; 3]>) -> SystemSpec {
        SystemSpec::builder(vec!["X".into()])
            .atoms(vec![0; n], vec![1.0; n])
            .cell(cell)
            .build()
            .unwrap()
    }

    #[test]
    fn minimum_image_wraps() {
        let s = spec(2, Some([10.0; 3]));
        let d = minimum_image_displacement([0.0; 3], [9.0, 0.0, 0.0], &s);
        assert_eq!(d, [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn minimum_image_without_pbc_is_plain_difference() {
        let s = spec(2, None);
        let d = minimum_image_displacement([0.0; 3], [9.0, 0.0, 0.0], &s);
        assert_eq!(d, [9.0, 0.0, 0.0]);
    }

    #[test]
    fn minimum_image_is_antisymmetric() {
        let s = spec(2, Some([10.0, 7.0, 13.0]));
        let a = [1.3, -4.2, 8.8];
        let b = [-3.1, 5.5, 0.4];
        let ab = minimum_image_displacement(a, b, &s);
        let ba = minimum_image_displacement(b, a, &s);
        for k in 0..3 {
            assert!((ab[k] + ba[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_overflow_is_reported() {
        let s = spec(5, None);
        let pos = vec![
            [0.0; 3],
            [0.5, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let err = NeighborList::build_with_capacity(&s, &pos, 5.0, 2).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn small_box_lists_periodic_images() {
        // single atom in a 3 Å box with a 5 Å cutoff sees its own images
        let s = spec(1, Some([3.0; 3]));
        let nl = NeighborList::build(&s, &[[0.0; 3]], 5.0).unwrap();
        // images at distance 3 (6 of them) and 3*sqrt(2) = 4.24 (12 of them)
        assert_eq!(nl.neighbors(0).len(), 18);
    }

    #[test]
    fn cell_list_agrees_with_brute_force() {
        use rand::{Rng, SeedableRng};
        let n = 120;
        let l = 20.0;
        let s = spec(n, Some([l; 3]));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<Vec3> = (0..n)
            .map(|_| {
                [
                    rng.random::<f64>() * l,
                    rng.random::<f64>() * l,
                    rng.random::<f64>() * l,
                ]
            })
            .collect();
        let cells = NeighborList::build(&s, &pos, 5.0).unwrap();
        let brute = brute_force(&pos, 5.0, |d| wrap_displacement(d, s.cell().unwrap()));
        for i in 0..n {
            let mut a: Vec<usize> = cells.neighbors(i).iter().map(|nb| nb.j).collect();
            let mut b: Vec<usize> = brute[i].iter().map(|nb| nb.j).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }
}

//! Structural and dynamical observables, reference values and temperature
//! reweighting.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{minimum_image_displacement, norm, Vec3};
use crate::potentials::Potential;
use crate::system::{kinetic_energy, SimState, SystemSpec};
use crate::units::{A2_PER_FS_TO_M2_PER_S, BOLTZMANN};

pub const DEFAULT_BINS: usize = 500;
pub const DEFAULT_SMEAR_SIGMA: f64 = 0.05;
pub const DEFAULT_HIST_RANGE: f64 = 10.0;
pub const DEFAULT_VACF_LAGS: usize = 100;

/// Gaussian kernels are cut at this many standard deviations.
const KERNEL_HALF_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableKind {
    /// Distribution of all interatomic distances.
    Hofr,
    /// Radial distribution function, optionally restricted to one species pair.
    Rdf {
        #[serde(default)]
        pair: Option<(String, String)>,
    },
    /// Mean length of the bonds joining the given species.
    MeanBondLength { pair: (String, String) },
    /// Mean squared coordinate, (1/3N)·Σ|r_i|².
    SecondMoment,
    /// Normalized velocity autocorrelation over `lags` frames.
    Vacf { lags: usize },
    /// Self-diffusion coefficient in m²/s from a fit of the MSD between
    /// `fit_window` (fs); the middle half of the trajectory when absent.
    Diffusivity {
        #[serde(default)]
        fit_window: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    #[serde(flatten)]
    pub kind: ObservableKind,
    pub bins: usize,
    /// Upper edge of the distance histogram in Å.
    pub r_max: f64,
    pub smear_sigma: f64,
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
}

impl ObservableSpec {
    pub fn new(kind: ObservableKind) -> Self {
        ObservableSpec {
            kind,
            bins: DEFAULT_BINS,
            r_max: DEFAULT_HIST_RANGE,
            smear_sigma: DEFAULT_SMEAR_SIGMA,
            reference: None,
        }
    }

    pub fn hofr() -> Self {
        Self::new(ObservableKind::Hofr)
    }

    pub fn with_range(mut self, bins: usize, r_max: f64) -> Self {
        self.bins = bins;
        self.r_max = r_max;
        self
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ObservableKind::Hofr => "hofr".into(),
            ObservableKind::Rdf { pair: None } => "rdf".into(),
            ObservableKind::Rdf { pair: Some((a, b)) } => format!("rdf_{a}{b}"),
            ObservableKind::MeanBondLength { pair: (a, b) } => format!("bond_{a}{b}"),
            ObservableKind::SecondMoment => "second_moment".into(),
            ObservableKind::Vacf { .. } => "vacf".into(),
            ObservableKind::Diffusivity { .. } => "diffusivity".into(),
        }
    }

    /// Whether the observable is a function of a single state (as opposed
    /// to a trajectory window).
    pub fn is_static(&self) -> bool {
        !matches!(
            self.kind,
            ObservableKind::Vacf { .. } | ObservableKind::Diffusivity { .. }
        )
    }

    pub fn output_len(&self) -> usize {
        match &self.kind {
            ObservableKind::Hofr | ObservableKind::Rdf { .. } => self.bins,
            ObservableKind::Vacf { lags } => *lags,
            _ => 1,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.r_max / self.bins as f64
    }

    /// Abscissae of the output vector: bin centers (Å) for histograms, lag
    /// index for the VACF, 0 for scalars.
    pub fn bin_centers(&self) -> Vec<f64> {
        match &self.kind {
            ObservableKind::Hofr | ObservableKind::Rdf { .. } => {
                let w = self.bin_width();
                (0..self.bins).map(|k| (k as f64 + 0.5) * w).collect()
            }
            ObservableKind::Vacf { lags } => (0..*lags).map(|k| k as f64).collect(),
            _ => vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!("{}: need at least 2 bins", self.name())));
        }
        if !(self.smear_sigma > 0.0) || !(self.r_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{}: smearing width and histogram range must be positive",
                self.name()
            )));
        }
        if let ObservableKind::Vacf { lags } = self.kind {
            if lags < 1 {
                return Err(Error::InvalidConfig("vacf needs at least one lag".into()));
            }
        }
        if let Some(r) = &self.reference {
            if r.len() != self.output_len() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: reference has {} entries, expected {}",
                    self.name(),
                    r.len(),
                    self.output_len()
                )));
            }
        }
        Ok(())
    }
}

/// Adds one smeared unit of mass at distance `d` to `hist`, as mass per
/// bin. The Gaussian is truncated at ±3σ and renormalized, so it has
/// compact support; mass falling outside [0, r_max] is dropped.
fn deposit(hist: &mut [f64], d: f64, weight: f64, r_max: f64, sigma: f64) {
    let nb = hist.len();
    let w = r_max / nb as f64;
    let lo = d - KERNEL_HALF_WIDTH * sigma;
    let hi = d + KERNEL_HALF_WIDTH * sigma;
    if hi <= 0.0 || lo >= r_max {
        return;
    }
    let norm = libm::erf(KERNEL_HALF_WIDTH / std::f64::consts::SQRT_2);
    let cdf = |x: f64| 0.5 * libm::erf((x - d) / (sigma * std::f64::consts::SQRT_2)) / norm;
    let k0 = ((lo.max(0.0) / w).floor() as usize).min(nb - 1);
    let k1 = ((hi.min(r_max) / w).ceil() as usize).min(nb);
    for (k, h) in hist.iter_mut().enumerate().take(k1).skip(k0) {
        let a = (k as f64 * w).max(lo);
        let b = ((k + 1) as f64 * w).min(hi);
        if b > a {
            *h += weight * (cdf(b) - cdf(a));
        }
    }
}

fn pair_distance(spec: &SystemSpec, positions: &[Vec3], i: usize, j: usize) -> f64 {
    norm(minimum_image_displacement(positions[i], positions[j], spec))
}

/// Smeared distribution of interatomic distances, normalized as a density
/// over ordered pairs: Σ_k h_k·Δr = 1 when all distances lie inside the
/// histogram range.
pub fn h_of_r(state: &SimState, spec: &SystemSpec, obs: &ObservableSpec) -> Result<Vec<f64>> {
    state.check_shape(spec)?;
    let n = spec.n_atoms();
    if n < 2 {
        return Err(Error::InvalidSystem("h(r) needs at least two atoms".into()));
    }
    let mut hist = vec![0.0; obs.bins];
    for i in 0..n {
        for j in i + 1..n {
            let d = pair_distance(spec, &state.positions, i, j);
            deposit(&mut hist, d, 2.0, obs.r_max, obs.smear_sigma);
        }
    }
    let scale = 1.0 / ((n * (n - 1)) as f64 * obs.bin_width());
    hist.iter_mut().for_each(|h| *h *= scale);
    Ok(hist)
}

fn species_filter(spec: &SystemSpec, symbol: &str) -> Result<usize> {
    spec.species_code(symbol)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown species {symbol}")))
}

/// Radial distribution function of one state. For a species pair (a, b)
/// the density of b around a is normalized by N_a·N_b ordered pairs, or
/// N_a(N_a − 1) when a = b, so an uncorrelated fluid gives 1.
pub fn rdf_single(state: &SimState, spec: &SystemSpec, obs: &ObservableSpec) -> Result<Vec<f64>> {
    state.check_shape(spec)?;
    let cell = spec
        .cell()
        .ok_or_else(|| Error::InvalidSystem("the RDF needs a periodic box".into()))?;
    if obs.r_max > 0.5 * cell.min_length() + 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "RDF range {} Å exceeds half the box ({} Å)",
            obs.r_max,
            0.5 * cell.min_length()
        )));
    }
    let pair = match &obs.kind {
        ObservableKind::Rdf { pair } => pair.clone(),
        _ => None,
    };
    let (sel_a, sel_b): (Vec<usize>, Vec<usize>) = match &pair {
        None => ((0..spec.n_atoms()).collect(), (0..spec.n_atoms()).collect()),
        Some((a, b)) => {
            let (ca, cb) = (species_filter(spec, a)?, species_filter(spec, b)?);
            let pick = |c| (0..spec.n_atoms()).filter(|&i| spec.species()[i] == c).collect();
            (pick(ca), pick(cb))
        }
    };
    let mut hist = vec![0.0; obs.bins];
    let mut n_pairs = 0usize;
    for &i in &sel_a {
        for &j in &sel_b {
            if i == j {
                continue;
            }
            n_pairs += 1;
            let d = pair_distance(spec, &state.positions, i, j);
            deposit(&mut hist, d, 1.0, obs.r_max, obs.smear_sigma);
        }
    }
    if n_pairs == 0 {
        return Err(Error::InvalidSystem("no atom pairs for the RDF".into()));
    }
    let w = obs.bin_width();
    let v = cell.volume();
    for (k, h) in hist.iter_mut().enumerate() {
        let r = (k as f64 + 0.5) * w;
        *h *= v / (n_pairs as f64 * 4.0 * PI * r * r * w);
    }
    Ok(hist)
}

/// RDF averaged over `states`.
pub fn rdf(states: &[SimState], spec: &SystemSpec, obs: &ObservableSpec) -> Result<Vec<f64>> {
    mean_of(states, |s| rdf_single(s, spec, obs))
}

/// Mean length of the bonds whose endpoints carry the given species (in
/// either order), using minimum-image distances.
pub fn mean_bond_length(state: &SimState, spec: &SystemSpec, pair: (&str, &str)) -> Result<f64> {
    state.check_shape(spec)?;
    let (a, b) = (species_filter(spec, pair.0)?, species_filter(spec, pair.1)?);
    let sp = spec.species();
    let mut sum = 0.0;
    let mut count = 0usize;
    for bond in spec.bonds() {
        let (si, sj) = (sp[bond.i], sp[bond.j]);
        if (si == a && sj == b) || (si == b && sj == a) {
            sum += pair_distance(spec, &state.positions, bond.i, bond.j);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidSystem(format!("no {}-{} bonds", pair.0, pair.1)));
    }
    Ok(sum / count as f64)
}

/// Value of a static observable on one state.
pub fn evaluate_state(obs: &ObservableSpec, state: &SimState, spec: &SystemSpec) -> Result<Vec<f64>> {
    match &obs.kind {
        ObservableKind::Hofr => h_of_r(state, spec, obs),
        ObservableKind::Rdf { .. } => rdf_single(state, spec, obs),
        ObservableKind::MeanBondLength { pair } => {
            Ok(vec![mean_bond_length(state, spec, (pair.0.as_str(), pair.1.as_str()))?])
        }
        ObservableKind::SecondMoment => {
            state.check_shape(spec)?;
            let s: f64 = state.positions.iter().flatten().map(|x| x * x).sum();
            Ok(vec![s / (3 * state.n_atoms()) as f64])
        }
        ObservableKind::Vacf { .. } | ObservableKind::Diffusivity { .. } => Err(Error::InvalidConfig(format!(
            "{} is a trajectory observable",
            obs.name()
        ))),
    }
}

/// Value of any observable over a trajectory: the mean over frames for
/// static observables, the windowed estimate for dynamical ones.
pub fn evaluate_trajectory(obs: &ObservableSpec, frames: &[SimState], spec: &SystemSpec) -> Result<Vec<f64>> {
    match &obs.kind {
        ObservableKind::Vacf { lags } => vacf(frames, spec, *lags),
        ObservableKind::Diffusivity { fit_window } => {
            let window = match fit_window {
                Some(w) => *w,
                None => default_fit_window(frames)?,
            };
            Ok(vec![diffusivity(frames, spec, window)?])
        }
        _ => mean_of(frames, |s| evaluate_state(obs, s, spec)),
    }
}

/// Dataset average of a static observable.
pub fn reference_observable(dataset: &[SimState], spec: &SystemSpec, obs: &ObservableSpec) -> Result<Vec<f64>> {
    if !obs.is_static() {
        return Err(Error::InvalidConfig(format!(
            "{} has no per-state value; use evaluate_trajectory",
            obs.name()
        )));
    }
    mean_of(dataset, |s| evaluate_state(obs, s, spec))
}

fn mean_of(states: &[SimState], f: impl Fn(&SimState) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for s in states {
        let v = f(s)?;
        match &mut acc {
            None => acc = Some(v),
            Some(a) => a.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
        }
    }
    let mut acc = acc.ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let n = states.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Velocity autocorrelation over `frames` (consecutive, evenly spaced),
/// averaged over atoms and the W − L + 1 time origins for which every lag
/// is available, and normalized by its value at lag 0.
pub fn vacf(frames: &[SimState], spec: &SystemSpec, lags: usize) -> Result<Vec<f64>> {
    if lags == 0 || frames.len() < lags {
        return Err(Error::InsufficientSamples {
            needed: lags.max(1),
            got: frames.len(),
        });
    }
    let v: Vec<Vec<Vec3>> = frames
        .iter()
        .map(|f| {
            f.check_shape(spec)?;
            Ok(f.velocities(spec))
        })
        .collect::<Result<_>>()?;
    let n_origins = frames.len() - lags + 1;
    let mut c = vec![0.0; lags];
    for t0 in 0..n_origins {
        for (lag, c) in c.iter_mut().enumerate() {
            *c += v[t0]
                .iter()
                .zip(&v[t0 + lag])
                .map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
                .sum::<f64>();
        }
    }
    let c0 = c[0];
    if !(c0 > 0.0) {
        return Err(Error::NonFinite("zero velocity autocorrelation at lag 0".into()));
    }
    Ok(c.iter().map(|x| x / c0).collect())
}

/// Positions with periodic jumps removed by accumulating minimum-image
/// frame-to-frame displacements.
pub fn unwrap_positions(frames: &[SimState], spec: &SystemSpec) -> Result<Vec<Vec<Vec3>>> {
    let mut out: Vec<Vec<Vec3>> = Vec::with_capacity(frames.len());
    let limit = spec.cell().map(|c| 0.25 * c.min_length());
    for (k, f) in frames.iter().enumerate() {
        f.check_shape(spec)?;
        if k == 0 {
            out.push(f.positions.clone());
            continue;
        }
        let prev_raw = &frames[k - 1].positions;
        let prev = &out[k - 1];
        let mut cur = Vec::with_capacity(f.positions.len());
        for i in 0..f.positions.len() {
            let step = minimum_image_displacement(prev_raw[i], f.positions[i], spec);
            if let Some(limit) = limit {
                if step.iter().any(|x| x.abs() > limit) {
                    return Err(Error::InvalidConfig(format!(
                        "atom {i} moved more than a quarter box between frames {} and {k}; \
                         frames are too sparse to unwrap",
                        k - 1
                    )));
                }
            }
            cur.push([prev[i][0] + step[0], prev[i][1] + step[1], prev[i][2] + step[2]]);
        }
        out.push(cur);
    }
    Ok(out)
}

/// Mean squared displacement at every lag, averaged over all time origins
/// and atoms (FFT-based).
pub fn mean_squared_displacement(unwrapped: &[Vec<Vec3>]) -> Vec<f64> {
    let t = unwrapped.len();
    if t == 0 {
        return Vec::new();
    }
    let n_atoms = unwrapped[0].len();
    let mut msd = vec![0.0; t];
    let mut planner = FftPlanner::<f64>::new();
    let m = (2 * t).next_power_of_two();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    for atom in 0..n_atoms {
        // MSD(k) = S1(k) − 2·S2(k), S2 the positional autocorrelation
        let sq: Vec<f64> = unwrapped.iter().map(|f| f[atom].iter().map(|x| x * x).sum()).collect();
        let mut s2 = vec![0.0; t];
        for dim in 0..3 {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (b, f) in buf.iter_mut().zip(unwrapped) {
                b.re = f[atom][dim];
            }
            fwd.process(&mut buf);
            buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
            inv.process(&mut buf);
            for (k, s) in s2.iter_mut().enumerate() {
                *s += buf[k].re / (m as f64 * (t - k) as f64);
            }
        }
        let total: f64 = sq.iter().sum::<f64>() * 2.0;
        let mut q = total;
        for k in 0..t {
            if k > 0 {
                q -= sq[k - 1] + sq[t - k];
            }
            let s1 = q / (t - k) as f64;
            msd[k] += s1 - 2.0 * s2[k];
        }
    }
    msd.iter_mut().for_each(|x| *x = (*x / n_atoms as f64).max(0.0));
    msd
}

fn frame_interval(frames: &[SimState]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: frames.len(),
        });
    }
    let dt = frames[1].time - frames[0].time;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("frames must be ordered in time".into()));
    }
    Ok(dt)
}

fn default_fit_window(frames: &[SimState]) -> Result<(f64, f64)> {
    let dt = frame_interval(frames)?;
    let span = dt * (frames.len() - 1) as f64;
    Ok((0.25 * span, 0.75 * span))
}

/// Self-diffusion coefficient in m²/s: the least-squares slope of MSD
/// against lag time over `fit_window` (fs), divided by 6.
pub fn diffusivity(frames: &[SimState], spec: &SystemSpec, fit_window: (f64, f64)) -> Result<f64> {
    let dt = frame_interval(frames)?;
    let unwrapped = unwrap_positions(frames, spec)?;
    let msd = mean_squared_displacement(&unwrapped);
    let (t_lo, t_hi) = fit_window;
    let pts: Vec<(f64, f64)> = msd
        .iter()
        .enumerate()
        .map(|(k, &y)| (k as f64 * dt, y))
        .filter(|&(t, _)| t >= t_lo - 1e-9 && t <= t_hi + 1e-9)
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx / 6.0 * A2_PER_FS_TO_M2_PER_S)
}

/// Which Hamiltonian enters the reweighting factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightMode {
    /// Potential energy only. Momenta integrate out analytically, leaving
    /// a sample-independent prefactor that cancels on normalization.
    #[default]
    PotentialOnly,
    /// Potential plus kinetic energy of the stored momenta.
    FullHamiltonian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightingResult {
    pub weights: Vec<f64>,
    pub n_eff: f64,
    pub value: Vec<f64>,
}

/// Energies to reweight with under `mode`.
pub fn reweighting_energies(
    model: &dyn Potential,
    states: &[SimState],
    spec: &SystemSpec,
    mode: ReweightMode,
) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| {
            let u = model.energy(spec, &s.positions)?;
            Ok(match mode {
                ReweightMode::PotentialOnly => u,
                ReweightMode::FullHamiltonian => u + kinetic_energy(s, spec)?,
            })
        })
        .collect()
}

/// Reweights per-sample observable `values` drawn at `t1` to `t2` with
/// w_i ∝ exp(−E_i/k_B·(1/T2 − 1/T1)), normalized in log space.
pub fn reweight(values: &[Vec<f64>], energies: &[f64], t1: f64, t2: f64) -> Result<ReweightingResult> {
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperatures must be positive: {t1}, {t2}"
        )));
    }
    if values.len() != energies.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observable values vs {} energies",
            values.len(),
            energies.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let beta = (1.0 / t2 - 1.0 / t1) / BOLTZMANN;
    let logw: Vec<f64> = energies.iter().map(|e| -e * beta).collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || logw.iter().any(|l| l.is_nan()) {
        return Err(Error::ReweightDegenerate("non-finite log-weights".into()));
    }
    let mut w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::ReweightDegenerate("all weights vanished".into()));
    }
    w.iter_mut().for_each(|x| *x /= z);
    let entropy: f64 = w.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
    let n = w.len() as f64;
    let n_eff = entropy.exp().clamp(1.0, n);
    let dim = values[0].len();
    let mut value = vec![0.0; dim];
    for (wi, v) in w.iter().zip(values) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch("ragged observable values".into()));
        }
        value.iter_mut().zip(v).for_each(|(a, b)| *a += wi * b);
    }
    Ok(ReweightingResult {
        weights: w,
        n_eff,
        value,
    })
}

/// Mean absolute difference integrated over the histogram range,
/// Σ_k |a_k − b_k|·Δr.
pub fn integrated_abs_error(a: &[f64], b: &[f64], bin_width: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * bin_width
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Bond;

    fn atoms(n: usize, cell: Option<[f64; 3]>) -> SystemSpec {
        SystemSpec::builder(vec!["X".into()])
            .atoms(vec![0; n], vec![1.0; n])
            .cell(cell)
            .build()
            .unwrap()
    }

    #[test]
    fn hofr_peaks_at_the_pair_distance() {
        let spec = atoms(2, None);
        let obs = ObservableSpec::hofr();
        let s = SimState::at_rest(vec![[0.0; 3], [1.23, 0.0, 0.0]]);
        let h = h_of_r(&s, &spec, &obs).unwrap();
        let peak = h.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, (1.23 / obs.bin_width()) as usize);
        let total: f64 = h.iter().sum::<f64>() * obs.bin_width();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hofr_counts_ordered_pairs() {
        let spec = atoms(3, None);
        let obs = ObservableSpec::hofr();
        let s = SimState::at_rest(vec![[0.0; 3], [1.5, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let h = h_of_r(&s, &spec, &obs).unwrap();
        let w = obs.bin_width();
        let mass = |lo: f64, hi: f64| -> f64 {
            h.iter()
                .enumerate()
                .filter(|(k, _)| (*k as f64 + 0.5) * w > lo && (*k as f64 + 0.5) * w < hi)
                .map(|(_, v)| v * w)
                .sum()
        };
        let short = mass(1.0, 2.0);
        let long = mass(2.5, 3.5);
        assert!((short / long - 2.0).abs() < 1e-9);
        assert!((short - 4.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn rdf_vanishes_below_the_closest_pair() {
        let spec = atoms(2, Some([10.0; 3]));
        let obs = ObservableSpec::new(ObservableKind::Rdf { pair: None }).with_range(500, 5.0);
        let s = SimState::at_rest(vec![[0.0; 3], [2.0, 0.0, 0.0]]);
        let g = rdf_single(&s, &spec, &obs).unwrap();
        for (r, v) in obs.bin_centers().iter().zip(&g) {
            if *r + 0.5 * obs.bin_width() <= 2.0 - 3.0 * obs.smear_sigma {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn rdf_scales_with_volume() {
        let obs = ObservableSpec::new(ObservableKind::Rdf { pair: None }).with_range(100, 4.0);
        let s = SimState::at_rest(vec![[0.0; 3], [2.0, 0.5, 0.0], [1.0, 3.0, 1.0]]);
        let a = rdf_single(&s, &atoms(3, Some([10.0, 10.0, 10.0])), &obs).unwrap();
        let b = rdf_single(&s, &atoms(3, Some([10.0, 10.0, 20.0])), &obs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn rdf_rejects_range_beyond_half_box() {
        let obs = ObservableSpec::new(ObservableKind::Rdf { pair: None }).with_range(100, 6.0);
        let s = SimState::at_rest(vec![[0.0; 3], [2.0, 0.0, 0.0]]);
        assert!(rdf_single(&s, &atoms(2, Some([10.0; 3])), &obs).is_err());
    }

    #[test]
    fn bond_lengths_average() {
        let spec = SystemSpec::builder(vec!["O".into(), "H".into()])
            .atoms(vec![0, 1, 1], vec![16.0, 1.0, 1.0])
            .bonds(vec![
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
            ])
            .build()
            .unwrap();
        let s = SimState::at_rest(vec![[0.0; 3], [0.9, 0.0, 0.0], [0.0, 1.1, 0.0]]);
        assert!((mean_bond_length(&s, &spec, ("O", "H")).unwrap() - 1.0).abs() < 1e-15);
        assert!((mean_bond_length(&s, &spec, ("H", "O")).unwrap() - 1.0).abs() < 1e-15);
        assert!(mean_bond_length(&s, &spec, ("H", "H")).is_err());
    }

    fn with_velocities(v: Vec<Vec3>, t: f64) -> SimState {
        let n = v.len();
        SimState::new(vec![[0.0; 3]; n], v, t).unwrap()
    }

    #[test]
    fn vacf_of_constant_and_alternating_velocities() {
        let spec = atoms(2, None);
        let frames: Vec<_> = (0..20)
            .map(|k| with_velocities(vec![[1.0, 2.0, 0.0], [0.0, -1.0, 3.0]], k as f64))
            .collect();
        let c = vacf(&frames, &spec, 5).unwrap();
        assert!(c.iter().all(|&x| x == 1.0));

        let frames: Vec<_> = (0..20)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                with_velocities(vec![[s, 0.0, 0.0], [0.0, 2.0 * s, 0.0]], k as f64)
            })
            .collect();
        let c = vacf(&frames, &spec, 6).unwrap();
        for (lag, x) in c.iter().enumerate() {
            assert_eq!(*x, if lag % 2 == 0 { 1.0 } else { -1.0 });
        }
        assert!(vacf(&frames[..3], &spec, 6).is_err());
    }

    #[test]
    fn reweighting_to_the_same_temperature_is_uniform() {
        let values: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let energies: Vec<f64> = (0..10).map(|k| (k * k) as f64).collect();
        let r = reweight(&values, &energies, 400.0, 400.0).unwrap();
        assert!(r.weights.iter().all(|&w| (w - 0.1).abs() < 1e-15));
        assert!((r.n_eff - 10.0).abs() < 1e-12);
        assert!((r.value[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn reweighting_ignores_an_energy_offset() {
        let values: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let energies: Vec<f64> = (0..10).map(|k| 0.3 * k as f64).collect();
        let shifted: Vec<f64> = energies.iter().map(|e| e + 1e4).collect();
        let a = reweight(&values, &energies, 500.0, 350.0).unwrap();
        let b = reweight(&values, &shifted, 500.0, 350.0).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.n_eff < 10.0);
    }

    #[test]
    fn stationary_particles_do_not_diffuse() {
        let spec = atoms(2, Some([5.0; 3]));
        let frames: Vec<_> = (0..50)
            .map(|k| SimState::new(vec![[1.0, 2.0, 3.0], [4.0, 4.0, 0.5]], vec![[0.0; 3]; 2], k as f64).unwrap())
            .collect();
        assert_eq!(diffusivity(&frames, &spec, (10.0, 30.0)).unwrap(), 0.0);
    }

    #[test]
    fn msd_of_ballistic_motion_is_quadratic() {
        let frames: Vec<Vec<Vec3>> = (0..40).map(|k| vec![[0.5 * k as f64, 0.0, 0.0]]).collect();
        let msd = mean_squared_displacement(&frames);
        for (k, m) in msd.iter().enumerate() {
            let expected = 0.25 * (k * k) as f64;
            assert!(
                (m - expected).abs() < 1e-9 * expected.max(1.0),
                "lag {k}: {m} vs {expected}"
            );
        }
    }

    #[test]
    fn unwrapping_follows_atoms_across_the_boundary() {
        let spec = atoms(1, Some([10.0; 3]));
        let frames: Vec<_> = (0..30)
            .map(|k| {
                let x = (0.7 * k as f64).rem_euclid(10.0);
                SimState::new(vec![[x, 0.0, 0.0]], vec![[0.0; 3]], k as f64).unwrap()
            })
            .collect();
        let u = unwrap_positions(&frames, &spec).unwrap();
        assert!((u[29][0][0] - 0.7 * 29.0).abs() < 1e-9);
    }
}

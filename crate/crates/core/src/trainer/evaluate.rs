use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::md::{Integrator, IntegratorConfig, ReplicaSet};
use crate::observables::{evaluate_trajectory, integrated_abs_error, ObservableKind, ObservableSpec};
use crate::potentials::Potential;
use crate::stability::StabilityCriterion;
use crate::system::{SimState, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Simulation horizon per replica in ps.
    pub max_time: f64,
    /// Stability-check and frame stride in steps.
    pub sample_every: usize,
    /// Replicas to run; all held-out states when absent.
    pub n_replicas: Option<usize>,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            max_time: 50.0,
            sample_every: 20,
            n_replicas: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableResult {
    pub name: String,
    pub values: Vec<f64>,
    pub reference: Option<Vec<f64>>,
    /// Integrated absolute error for histograms, mean absolute error
    /// otherwise.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Time to first instability per replica in ps, capped at `max_time`.
    pub stable_times: Vec<f64>,
    pub median_stable_time: f64,
    pub mean_stable_time: f64,
    /// Fraction of replicas unstable by each time (ps), as a step function.
    pub unstable_curve: Vec<(f64, f64)>,
    /// Replica whose trajectory provides the observables.
    pub median_replica: usize,
    pub n_frames: usize,
    pub observables: Vec<ObservableResult>,
    /// Frames of the median replica up to its first instability.
    #[serde(skip)]
    pub trajectory: Vec<SimState>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Step function of the unstable fraction: one point at t = 0, one per
/// distinct failure time and one at the horizon.
pub fn unstable_curve(stable_times: &[f64], max_time: f64) -> Vec<(f64, f64)> {
    let r = stable_times.len() as f64;
    let mut failures: Vec<f64> = stable_times.iter().copied().filter(|&t| t < max_time).collect();
    failures.sort_by(f64::total_cmp);
    let mut curve = vec![(0.0, 0.0)];
    for (k, &t) in failures.iter().enumerate() {
        let f = (k + 1) as f64 / r;
        match curve.last_mut() {
            Some(last) if last.0 == t => last.1 = f,
            _ => curve.push((t, f)),
        }
    }
    let end = failures.len() as f64 / r;
    if curve.last().map(|p| p.0) != Some(max_time) {
        curve.push((max_time, end));
    }
    curve
}

fn observable_error(obs: &ObservableSpec, values: &[f64], reference: &[f64]) -> Option<f64> {
    if values.len() != reference.len() || values.is_empty() {
        return None;
    }
    match obs.kind {
        ObservableKind::Hofr | ObservableKind::Rdf { .. } => {
            Some(integrated_abs_error(values, reference, obs.bin_width()))
        }
        _ => Some(values.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / values.len() as f64),
    }
}

/// Runs one replica from each held-out state until the criterion first
/// trips or `max_time` elapses, then computes observables on the stable
/// part of the median-lifetime trajectory.
pub fn evaluate(
    model: &dyn Potential,
    spec: &SystemSpec,
    held_out: &[SimState],
    criterion: &StabilityCriterion,
    observables: &[ObservableSpec],
    integrator: &IntegratorConfig,
    cfg: &EvaluationConfig,
) -> Result<EvaluationReport> {
    integrator.validate()?;
    criterion.validate()?;
    for o in observables {
        o.validate()?;
    }
    if cfg.sample_every == 0 || !(cfg.max_time > 0.0) {
        return Err(Error::InvalidConfig(
            "evaluation needs max_time > 0 and sample_every > 0".into(),
        ));
    }
    let r = cfg.n_replicas.unwrap_or(held_out.len());
    if r == 0 || r > held_out.len() {
        return Err(Error::InvalidConfig(format!(
            "asked for {r} replicas from {} held-out states",
            held_out.len()
        )));
    }
    let horizon_fs = cfg.max_time * 1000.0;
    let n_steps = (horizon_fs / integrator.dt).round() as usize;
    let set = ReplicaSet::thermalized(spec, &held_out[..r], integrator.temperature, cfg.seed)?;
    let integ = Integrator::new(model, spec, integrator)?;
    let frame_interval = cfg.sample_every as f64 * integrator.dt;

    let stable_times: Vec<f64> = set
        .replicas
        .par_iter()
        .map(|rep| {
            let mut rep = rep.clone();
            let t0 = rep.state.time;
            let mut monitor = criterion.monitor(frame_interval);
            let mut tripped = false;
            let steps = integ.run(&mut rep, n_steps, cfg.sample_every, |s| {
                tripped = monitor.observe(criterion, s, spec)?;
                Ok(!tripped)
            });
            match steps {
                Ok(steps) if tripped => Ok(steps as f64 * integrator.dt / 1000.0),
                Ok(_) => Ok(cfg.max_time),
                // a blow-up before the next check counts as failure there
                Err(Error::NonFinite(_)) => Ok((rep.state.time - t0) / 1000.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| stable_times[a].total_cmp(&stable_times[b]).then(a.cmp(&b)));
    let median_replica = order[(r - 1) / 2];

    let mut rep = set.replicas[median_replica].clone();
    let mut monitor = criterion.monitor(frame_interval);
    let mut frames = vec![rep.state.clone()];
    let rerun = integ.run(&mut rep, n_steps, cfg.sample_every, |s| {
        if monitor.observe(criterion, s, spec)? {
            return Ok(false);
        }
        frames.push(s.clone());
        Ok(true)
    });
    match rerun {
        Ok(_) | Err(Error::NonFinite(_)) => {}
        Err(e) => return Err(e),
    }

    let observables = observables
        .iter()
        .map(|o| {
            let values = match evaluate_trajectory(o, &frames, spec) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("{} could not be computed: {e}", o.name());
                    Vec::new()
                }
            };
            let error = o.reference.as_ref().and_then(|rf| observable_error(o, &values, rf));
            ObservableResult {
                name: o.name(),
                values,
                reference: o.reference.clone(),
                error,
            }
        })
        .collect();

    Ok(EvaluationReport {
        median_stable_time: median(&stable_times),
        mean_stable_time: stable_times.iter().sum::<f64>() / r as f64,
        unstable_curve: unstable_curve(&stable_times, cfg.max_time),
        median_replica,
        n_frames: frames.len(),
        stable_times,
        observables,
        trajectory: frames,
    })
}

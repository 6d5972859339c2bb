use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stable_core::md::{Integrator, IntegratorConfig, ReplicaSet};
use stable_core::observables::{
    evaluate_state, evaluate_trajectory, reference_observable, reweight, ObservableSpec, ReweightMode,
};
use stable_core::potentials::NeuralPotential;
use stable_core::stability::StabilityCriterion;
use stable_core::trainer::{
    evaluate, generate_dataset, pretrain, qm_loss_value, stable_train, Dataset, EvaluationReport, MetricsRow, Phase,
    PretrainProgress, StableProblem,
};
use stable_core::{kinetic_energy, SimState};

use crate::checkpoint::{Checkpoint, Stage};
use crate::config::{CriterionKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::xyz::{self, Header};

/// Seed of the held-out trajectory, kept apart from the training one.
pub fn held_out_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0F0D_D0A7_A5E7
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

/// Appends a wall-clock line to the run's timing log. Timings live only
/// here so that every other output stays reproducible.
pub fn log_timing(out: &Path, command: &str, seconds: f64) {
    use std::io::Write;
    let path = out.join("timing.log");
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(&path) {
        let _ = writeln!(f, "{command} {seconds:.3}s");
    }
}

fn provenance(cfg: &RunConfig, seed: u64) -> Header {
    let mut h = Header::new();
    h.insert("seed".into(), seed.to_string());
    h.insert("dt".into(), format!("{:.16e}", cfg.integrator.dt));
    h
}

fn load_dataset(cfg: &RunConfig, path: &Path) -> CliResult<Dataset> {
    let sys = cfg.system.build()?;
    Ok(xyz::read_dataset(path, &sys.spec)?.0)
}

pub struct GenDataOutput {
    pub train: Dataset,
    pub held_out: Option<Dataset>,
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<GenDataOutput> {
    create_dir(&cfg.out)?;
    let sys = cfg.system.build()?;
    let criterion = if cfg.data.check_stability {
        if cfg.criterion.kind == CriterionKind::RdfMae {
            return Err(CliError::Config(
                "the RDF criterion needs reference data and cannot check data generation".into(),
            ));
        }
        let empty = Dataset {
            spec: sys.spec.clone(),
            frames: Vec::new(),
            temperature: cfg.integrator.temperature,
            source: String::new(),
        };
        Some(cfg.criterion.build(&empty)?)
    } else {
        None
    };
    let train = generate_dataset(
        sys.reference.as_ref(),
        &sys.spec,
        &sys.initial_positions,
        &cfg.integrator,
        &cfg.data.sampling(cfg.data.n_frames),
        criterion.as_ref(),
    )?;
    xyz::write_dataset(&cfg.dataset_path(), &train, &provenance(cfg, cfg.seed))?;
    let held_out = if cfg.data.n_held_out > 0 {
        let seed = held_out_seed(cfg.seed);
        let integ = IntegratorConfig {
            seed,
            ..cfg.integrator.clone()
        };
        let d = generate_dataset(
            sys.reference.as_ref(),
            &sys.spec,
            &sys.initial_positions,
            &integ,
            &cfg.data.sampling(cfg.data.n_held_out),
            criterion.as_ref(),
        )?;
        xyz::write_dataset(&cfg.held_out_path(), &d, &provenance(cfg, seed))?;
        Some(d)
    } else {
        None
    };
    log::info!(
        "wrote {} training frames to {}",
        train.len(),
        cfg.dataset_path().display()
    );
    Ok(GenDataOutput { train, held_out })
}

pub struct PretrainOutput {
    pub model: NeuralPotential,
    pub progress: PretrainProgress,
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (k, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{k},{l}");
    }
    s
}

pub fn cmd_pretrain(cfg: &RunConfig, resume: Option<&Path>) -> CliResult<PretrainOutput> {
    create_dir(&cfg.out)?;
    let data = load_dataset(cfg, &cfg.dataset_path())?;
    let (mut model, mut progress) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let progress = ck
                .meta
                .pretrain
                .clone()
                .ok_or_else(|| CliError::format(path, "checkpoint holds no pretraining progress"))?;
            (ck.model()?, progress)
        }
        None => {
            let arch = cfg.model.architecture(&data.spec);
            let model = NeuralPotential::new(arch, cfg.model.init_seed.unwrap_or(cfg.seed))?;
            (model, PretrainProgress::new(&cfg.pretrain))
        }
    };
    // a dataset with species the model has no channel for is refused here
    model.channels(&data.spec)?;
    if resume.is_some() {
        progress.converged = false;
    }
    pretrain(&mut model, &data, &cfg.pretrain, &mut progress, |epoch, loss, _| {
        if epoch % 100 == 0 {
            log::info!("pretrain epoch {epoch}: loss {loss:.6e}");
        }
        Ok(())
    })?;
    let mut ck = Checkpoint::new(&model, Stage::Pretrained);
    ck.meta.pretrain = Some(progress.clone());
    ck.save(&cfg.pretrained_path())?;
    write_text(&cfg.out.join("pretrain_loss.csv"), &loss_csv(&progress.losses))?;
    let final_loss = qm_loss_value(
        &model,
        &data.frames,
        &data.spec,
        cfg.pretrain.lambda_u,
        cfg.pretrain.lambda_f,
    )?;
    log::info!(
        "pretraining finished after {} epochs, loss {final_loss:.6e}",
        progress.epochs()
    );
    Ok(PretrainOutput { model, progress })
}

/// Static observables marked for training, with references computed on
/// the training data.
pub fn training_observables(cfg: &RunConfig, data: &Dataset) -> CliResult<Vec<ObservableSpec>> {
    let states = data.states();
    cfg.observables
        .iter()
        .filter(|o| o.train)
        .map(|o| {
            let spec = o.spec()?;
            if !spec.is_static() {
                return Err(CliError::Config(format!(
                    "{} cannot be trained on; set train = false",
                    spec.name()
                )));
            }
            let r = reference_observable(&states, &data.spec, &spec)?;
            Ok(spec.with_reference(r))
        })
        .collect()
}

/// One row per simulation segment or learning epoch. `qm_weight` is the
/// constant λ, repeated on learning rows so each row is self-contained.
pub fn metrics_csv(rows: &[MetricsRow], qm_weight: f64) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("cycle,phase,epoch,f_unst,l_obs,l_qm,lr,qm_weight\n");
    for r in rows {
        let lambda = match r.phase {
            Phase::Learning => qm_weight.to_string(),
            Phase::Simulation => String::new(),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.cycle,
            r.phase.as_str(),
            r.epoch,
            r.f_unst,
            opt(r.l_obs),
            opt(r.l_qm),
            r.lr,
            lambda
        );
    }
    s
}

/// One line per phase: its cycle, kind, number of rows and the unstable
/// fraction at its start and end.
pub fn phase_log(rows: &[MetricsRow]) -> String {
    let mut s = String::from("cycle,phase,steps,f_unst_first,f_unst_last\n");
    let mut i = 0;
    while i < rows.len() {
        let mut j = i;
        while j + 1 < rows.len() && rows[j + 1].cycle == rows[i].cycle && rows[j + 1].phase == rows[i].phase {
            j += 1;
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            rows[i].cycle,
            rows[i].phase.as_str(),
            j - i + 1,
            rows[i].f_unst,
            rows[j].f_unst
        );
        i = j + 1;
    }
    s
}

pub struct StableTrainOutput {
    pub model: NeuralPotential,
    pub metrics: Vec<MetricsRow>,
    pub finished: bool,
}

/// Runs the training loop from the pretrained checkpoint, or from a saved
/// trainer state when `resume` is given. With `max_boundaries`, stops after
/// that many phase boundaries (used to exercise resuming).
pub fn cmd_stable_train(
    cfg: &RunConfig,
    resume: Option<&Path>,
    max_boundaries: Option<usize>,
) -> CliResult<StableTrainOutput> {
    create_dir(&cfg.out)?;
    let data = load_dataset(cfg, &cfg.dataset_path())?;
    let observables = training_observables(cfg, &data)?;
    let criterion = cfg.criterion.build(&data)?;
    let problem = StableProblem {
        train: &data,
        observables: &observables,
        criterion: &criterion,
        integrator: &cfg.integrator,
        config: &cfg.stable,
    };
    let (mut model, mut state) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let state = ck
                .meta
                .trainer
                .clone()
                .ok_or_else(|| CliError::format(path, "checkpoint holds no trainer state"))?;
            (ck.model()?, state)
        }
        None => {
            let model = Checkpoint::load(&cfg.pretrained_path())?.model()?;
            let state = problem.initial_state(&model)?;
            (model, state)
        }
    };
    model.channels(&data.spec)?;

    let state_path = cfg.trainer_state_path();
    let metrics_path = cfg.out.join("metrics.csv");
    let phases_path = cfg.out.join("phases.csv");
    let arch = model.architecture().clone();
    let mut boundaries = 0;
    let mut io_error = None;
    stable_train(&mut model, &problem, &mut state, |s| {
        let mut ck = Checkpoint {
            meta: crate::checkpoint::Metadata {
                architecture: arch.clone(),
                stage: Stage::Trained,
                pretrain: None,
                trainer: Some(s.clone()),
            },
            params: s.params.clone(),
        };
        ck.meta.trainer = Some(s.clone());
        let saved = ck
            .save(&state_path)
            .and_then(|_| write_text(&metrics_path, &metrics_csv(&s.metrics, problem.config.qm_weight)))
            .and_then(|_| write_text(&phases_path, &phase_log(&s.metrics)));
        if let Err(e) = saved {
            io_error = Some(e);
            return Ok(false);
        }
        boundaries += 1;
        Ok(max_boundaries.is_none_or(|m| boundaries < m))
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    if state.finished {
        let mut ck = Checkpoint::new(&model, Stage::Trained);
        ck.meta.trainer = Some(state.clone());
        ck.save(&cfg.trained_path())?;
    }
    Ok(StableTrainOutput {
        model,
        metrics: state.metrics,
        finished: state.finished,
    })
}

#[derive(Debug, Serialize)]
struct EvaluationSummary<'a> {
    checkpoint: String,
    n_replicas: usize,
    max_time_ps: f64,
    median_stable_time_ps: f64,
    mean_stable_time_ps: f64,
    median_replica: usize,
    n_frames: usize,
    observable_errors: Vec<(&'a str, Option<f64>)>,
}

/// The checkpoint `evaluate` reads: the trained model when present,
/// otherwise the pretrained one.
pub fn default_eval_checkpoint(cfg: &RunConfig) -> PathBuf {
    let trained = cfg.trained_path();
    if trained.exists() {
        trained
    } else {
        cfg.pretrained_path()
    }
}

/// Reference values for observables: dataset averages for static ones, a
/// reference-potential trajectory from the first held-out state for
/// dynamical ones.
fn evaluation_observables(cfg: &RunConfig, data: &Dataset, held_out: &[SimState]) -> CliResult<Vec<ObservableSpec>> {
    let specs = cfg.observable_specs()?;
    let states = data.states();
    let needs_dynamics = specs.iter().any(|o| !o.is_static());
    let reference_frames = if needs_dynamics {
        reference_trajectory(cfg, &held_out[0])?
    } else {
        Vec::new()
    };
    specs
        .into_iter()
        .map(|o| {
            let r = if o.is_static() {
                reference_observable(&states, &data.spec, &o)?
            } else {
                evaluate_trajectory(&o, &reference_frames, &data.spec)?
            };
            Ok(o.with_reference(r))
        })
        .collect()
}

fn reference_trajectory(cfg: &RunConfig, start: &SimState) -> CliResult<Vec<SimState>> {
    let sys = cfg.system.build()?;
    let integ_cfg = IntegratorConfig {
        seed: cfg.evaluate.seed,
        ..cfg.integrator.clone()
    };
    let set = ReplicaSet::thermalized(
        &sys.spec,
        std::slice::from_ref(start),
        integ_cfg.temperature,
        integ_cfg.seed,
    )?;
    let integ = Integrator::new(sys.reference.as_ref(), &sys.spec, &integ_cfg)?;
    let n_steps = (cfg.evaluate.max_time * 1000.0 / integ_cfg.dt).round() as usize;
    let mut rep = set.replicas[0].clone();
    let mut frames = vec![rep.state.clone()];
    integ.run(&mut rep, n_steps, cfg.evaluate.sample_every, |s| {
        frames.push(s.clone());
        Ok(true)
    })?;
    Ok(frames)
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> CliResult<EvaluationReport> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_eval_checkpoint(cfg));
    let model = Checkpoint::load(&path)?.model()?;
    let data = load_dataset(cfg, &cfg.dataset_path())?;
    let held_out = load_dataset(cfg, &cfg.held_out_path())?.states();
    if held_out.is_empty() {
        return Err(CliError::Config("no held-out states to evaluate from".into()));
    }
    model.channels(&data.spec)?;
    let criterion: StabilityCriterion = cfg.eval_criterion().build(&data)?;
    let observables = evaluation_observables(cfg, &data, &held_out)?;
    let report = evaluate(
        &model,
        &data.spec,
        &held_out,
        &criterion,
        &observables,
        &cfg.integrator,
        &cfg.evaluate,
    )?;

    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let dir = cfg.out.join(format!("eval_{stem}"));
    create_dir(&dir)?;
    let mut s = String::from("replica,stable_time_ps\n");
    for (i, t) in report.stable_times.iter().enumerate() {
        let _ = writeln!(s, "{i},{t}");
    }
    write_text(&dir.join("stability.csv"), &s)?;
    let mut s = String::from("time_ps,unstable_fraction\n");
    for (t, f) in &report.unstable_curve {
        let _ = writeln!(s, "{t},{f}");
    }
    write_text(&dir.join("unstable_fraction.csv"), &s)?;
    for (o, r) in observables.iter().zip(&report.observables) {
        let x = o.bin_centers();
        let mut s = String::from("x,value,reference\n");
        for k in 0..r.values.len() {
            let reference = r.reference.as_ref().and_then(|v| v.get(k)).map(|v| v.to_string());
            let _ = writeln!(
                s,
                "{},{},{}",
                x.get(k).copied().unwrap_or(k as f64),
                r.values[k],
                reference.unwrap_or_default()
            );
        }
        write_text(&dir.join(format!("{}.csv", r.name)), &s)?;
    }
    xyz::write_trajectory(
        &dir.join("median_trajectory.xyz"),
        &report.trajectory,
        &data.spec,
        &provenance(cfg, cfg.evaluate.seed),
    )?;
    let summary = EvaluationSummary {
        // Relative to the run directory so reruns elsewhere match byte for byte.
        checkpoint: path.strip_prefix(&cfg.out).unwrap_or(&path).display().to_string(),
        n_replicas: report.stable_times.len(),
        max_time_ps: cfg.evaluate.max_time,
        median_stable_time_ps: report.median_stable_time,
        mean_stable_time_ps: report.mean_stable_time,
        median_replica: report.median_replica,
        n_frames: report.n_frames,
        observable_errors: report.observables.iter().map(|o| (o.name.as_str(), o.error)).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!(
        "median stable time {:.3} ps over {} replicas",
        report.median_stable_time,
        report.stable_times.len()
    );
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReweightSummary {
    pub observable: String,
    pub t1: f64,
    pub t2: f64,
    pub n_samples: usize,
    pub n_eff: f64,
    pub min_effective_samples: f64,
    pub value: Vec<f64>,
}

/// Reweights the dataset average of one observable from the sampling
/// temperature to `reweight.temperature`, using the stored reference
/// energies.
pub fn cmd_reweight(cfg: &RunConfig) -> CliResult<ReweightSummary> {
    create_dir(&cfg.out)?;
    let data = load_dataset(cfg, &cfg.dataset_path())?;
    let oc = cfg
        .observables
        .get(cfg.reweight.observable)
        .ok_or_else(|| CliError::Config("no observable to reweight".into()))?;
    let obs = oc.spec()?;
    if !obs.is_static() {
        return Err(CliError::Config(format!(
            "{} cannot be reweighted per frame",
            obs.name()
        )));
    }
    let values = data
        .frames
        .iter()
        .map(|f| evaluate_state(&obs, &f.state, &data.spec))
        .collect::<stable_core::Result<Vec<_>>>()?;
    let energies = data
        .frames
        .iter()
        .map(|f| {
            Ok(match cfg.reweight.mode {
                ReweightMode::PotentialOnly => f.energy,
                ReweightMode::FullHamiltonian => f.energy + kinetic_energy(&f.state, &data.spec)?,
            })
        })
        .collect::<stable_core::Result<Vec<_>>>()?;
    let (t1, t2) = (data.temperature, cfg.reweight.temperature);
    let result = reweight(&values, &energies, t1, t2)?;
    let summary = ReweightSummary {
        observable: obs.name(),
        t1,
        t2,
        n_samples: data.len(),
        n_eff: result.n_eff,
        min_effective_samples: cfg.reweight.min_effective_samples,
        value: result.value.clone(),
    };
    if result.n_eff < cfg.reweight.min_effective_samples {
        return Err(CliError::EffectiveSampleSize {
            n_eff: result.n_eff,
            floor: cfg.reweight.min_effective_samples,
        });
    }
    let plain = reference_observable(&data.states(), &data.spec, &obs)?;
    let x = obs.bin_centers();
    let mut s = String::from("x,reweighted,unweighted\n");
    for k in 0..result.value.len() {
        let _ = writeln!(s, "{},{},{}", x[k], result.value[k], plain[k]);
    }
    write_text(&cfg.out.join(format!("reweighted_{}.csv", obs.name())), &s)?;
    write_json(&cfg.out.join("reweight.json"), &summary)?;
    Ok(summary)
}

//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stable_core::md::IntegratorConfig;
use stable_core::observables::{
    reference_observable, ObservableKind, ObservableSpec, ReweightMode, DEFAULT_BINS, DEFAULT_HIST_RANGE,
    DEFAULT_SMEAR_SIGMA,
};
use stable_core::potentials::Architecture;
use stable_core::stability::{RdfReference, StabilityCriterion};
use stable_core::systems::SystemConfig;
use stable_core::trainer::{Dataset, EvaluationConfig, PretrainConfig, SamplingConfig, StableConfig};
use stable_core::SystemSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; replaces the seed of every section.
    pub seed: u64,
    pub out: PathBuf,
    pub system: SystemConfig,
    pub integrator: IntegratorConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub stable: StableConfig,
    /// Criterion used while training.
    pub criterion: CriterionConfig,
    /// Criterion used by `evaluate`; the training criterion when absent.
    pub eval_criterion: Option<CriterionConfig>,
    pub evaluate: EvaluationConfig,
    pub observables: Vec<ObservableConfig>,
    pub reweight: ReweightConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            system: SystemConfig::default(),
            integrator: IntegratorConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            stable: StableConfig::default(),
            criterion: CriterionConfig::default(),
            eval_criterion: None,
            evaluate: EvaluationConfig::default(),
            observables: vec![ObservableConfig::default()],
            reweight: ReweightConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_frames: usize,
    /// Steps between recorded frames.
    pub stride: usize,
    /// Steps discarded before the first frame.
    pub equilibration: usize,
    /// Frames in the separately sampled held-out set.
    pub n_held_out: usize,
    /// Abort generation when the reference run trips the training
    /// criterion.
    pub check_stability: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        DataConfig {
            n_frames: s.n_frames,
            stride: s.stride,
            equilibration: s.equilibration,
            n_held_out: 32,
            check_stability: false,
        }
    }
}

impl DataConfig {
    pub fn sampling(&self, n_frames: usize) -> SamplingConfig {
        SamplingConfig {
            n_frames,
            stride: self.stride,
            equilibration: self.equilibration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_basis: usize,
    pub r_max: f64,
    pub hidden: Vec<usize>,
    /// Species channels; the system's species when absent.
    pub species: Option<Vec<String>>,
    pub init_seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::new(Vec::new());
        ModelConfig {
            n_basis: a.n_basis,
            r_max: a.r_max,
            hidden: a.hidden,
            species: None,
            init_seed: None,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, spec: &SystemSpec) -> Architecture {
        Architecture {
            species: self.species.clone().unwrap_or_else(|| spec.symbols().to_vec()),
            n_basis: self.n_basis,
            r_max: self.r_max,
            hidden: self.hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    #[default]
    BondDeviation,
    MinNonbonded,
    RdfMae,
}

/// Stability criterion as written in the configuration. RDF references
/// are computed from the training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriterionConfig {
    pub kind: CriterionKind,
    pub threshold: f64,
    /// RDF averaging window in ps.
    pub window: f64,
    /// Species pairs whose RDFs are monitored.
    pub pairs: Vec<(String, String)>,
    pub bins: usize,
    pub r_max: f64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        CriterionConfig {
            kind: CriterionKind::BondDeviation,
            threshold: 0.5,
            window: 1.0,
            pairs: Vec::new(),
            bins: DEFAULT_BINS,
            r_max: 6.0,
        }
    }
}

impl CriterionConfig {
    pub fn build(&self, reference: &Dataset) -> CliResult<StabilityCriterion> {
        let c = match self.kind {
            CriterionKind::BondDeviation => StabilityCriterion::BondDeviation {
                threshold: self.threshold,
            },
            CriterionKind::MinNonbonded => StabilityCriterion::MinNonbonded {
                threshold: self.threshold,
            },
            CriterionKind::RdfMae => {
                let states = reference.states();
                let references = self
                    .pairs
                    .iter()
                    .map(|p| {
                        let obs = ObservableSpec::new(ObservableKind::Rdf { pair: Some(p.clone()) })
                            .with_range(self.bins, self.r_max);
                        let values = reference_observable(&states, &reference.spec, &obs)?;
                        Ok(RdfReference {
                            observable: obs,
                            values,
                        })
                    })
                    .collect::<stable_core::Result<Vec<_>>>()?;
                StabilityCriterion::RdfMae {
                    threshold: self.threshold,
                    window: self.window,
                    references,
                }
            }
        };
        c.validate()?;
        Ok(c)
    }

    /// Validation that does not need a dataset.
    fn check(&self) -> CliResult<()> {
        if !(self.threshold > 0.0) {
            return Err(CliError::Config("criterion threshold must be positive".into()));
        }
        if self.kind == CriterionKind::RdfMae && (self.pairs.is_empty() || !(self.window > 0.0)) {
            return Err(CliError::Config(
                "rdf_mae needs species pairs and a positive window".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    #[default]
    Hofr,
    Rdf,
    MeanBondLength,
    SecondMoment,
    Vacf,
    Diffusivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservableConfig {
    pub kind: ObservableName,
    pub pair: Option<(String, String)>,
    pub lags: usize,
    /// Diffusivity fit window in fs.
    pub fit_window: Option<(f64, f64)>,
    pub bins: usize,
    pub r_max: f64,
    pub smear_sigma: f64,
    /// Whether the observable enters the training loss.
    pub train: bool,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig {
            kind: ObservableName::Hofr,
            pair: None,
            lags: stable_core::observables::DEFAULT_VACF_LAGS,
            fit_window: None,
            bins: DEFAULT_BINS,
            r_max: DEFAULT_HIST_RANGE,
            smear_sigma: DEFAULT_SMEAR_SIGMA,
            train: true,
        }
    }
}

impl ObservableConfig {
    pub fn spec(&self) -> CliResult<ObservableSpec> {
        let kind = match self.kind {
            ObservableName::Hofr => ObservableKind::Hofr,
            ObservableName::Rdf => ObservableKind::Rdf {
                pair: self.pair.clone(),
            },
            ObservableName::MeanBondLength => ObservableKind::MeanBondLength {
                pair: self
                    .pair
                    .clone()
                    .ok_or_else(|| CliError::Config("mean_bond_length needs a species pair".into()))?,
            },
            ObservableName::SecondMoment => ObservableKind::SecondMoment,
            ObservableName::Vacf => ObservableKind::Vacf { lags: self.lags },
            ObservableName::Diffusivity => ObservableKind::Diffusivity {
                fit_window: self.fit_window,
            },
        };
        let mut spec = ObservableSpec::new(kind).with_range(self.bins, self.r_max);
        spec.smear_sigma = self.smear_sigma;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReweightConfig {
    /// Target temperature, K.
    pub temperature: f64,
    /// Index into `observables`.
    pub observable: usize,
    pub mode: ReweightMode,
    pub min_effective_samples: f64,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            temperature: 350.0,
            observable: 0,
            mode: ReweightMode::PotentialOnly,
            min_effective_samples: 1000.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::format(path, m),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Applies command-line overrides, propagates the master seed and
    /// validates every section.
    pub fn finalize(mut self, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        self.integrator.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.stable.seed = self.seed;
        self.evaluate.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.system.build()?;
        self.integrator.validate()?;
        self.pretrain.validate()?;
        self.stable.validate()?;
        self.criterion.check()?;
        if let Some(c) = &self.eval_criterion {
            c.check()?;
        }
        if self.data.n_frames == 0 || self.data.stride == 0 {
            return Err(CliError::Config("data needs n_frames > 0 and stride > 0".into()));
        }
        if self.model.n_basis < 2 || !(self.model.r_max > 0.0) || self.model.hidden.contains(&0) {
            return Err(CliError::Config("invalid model architecture".into()));
        }
        if self.evaluate.sample_every == 0 || !(self.evaluate.max_time > 0.0) {
            return Err(CliError::Config(
                "evaluate needs max_time > 0 and sample_every > 0".into(),
            ));
        }
        for o in &self.observables {
            o.spec()?;
        }
        if !(self.reweight.temperature > 0.0) || self.reweight.min_effective_samples < 0.0 {
            return Err(CliError::Config(
                "reweight needs a positive temperature and a non-negative sample floor".into(),
            ));
        }
        if !self.observables.is_empty() && self.reweight.observable >= self.observables.len() {
            return Err(CliError::Config(format!(
                "reweight.observable = {} but only {} observables are configured",
                self.reweight.observable,
                self.observables.len()
            )));
        }
        Ok(())
    }

    pub fn eval_criterion(&self) -> &CriterionConfig {
        self.eval_criterion.as_ref().unwrap_or(&self.criterion)
    }

    pub fn observable_specs(&self) -> CliResult<Vec<ObservableSpec>> {
        self.observables.iter().map(|o| o.spec()).collect()
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out.join("dataset.xyz")
    }

    pub fn held_out_path(&self) -> PathBuf {
        self.out.join("held_out.xyz")
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.out.join("pretrained.ckpt")
    }

    pub fn trained_path(&self) -> PathBuf {
        self.out.join("stable.ckpt")
    }

    pub fn trainer_state_path(&self) -> PathBuf {
        self.out.join("trainer_state.ckpt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[stable]\nlearning_rate = 0.1").is_err());
        assert!(RunConfig::parse("[[observables]]\nkind = \"hofr\"\nbinz = 3").is_err());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::parse(
            r#"
seed = 4
[system]
kind = "lj_cluster"
n_atoms = 8
[integrator]
dt = 1.0
[stable]
f_min = 0.1
f_max = 0.3
[criterion]
kind = "min_nonbonded"
threshold = 2.0
[[observables]]
kind = "rdf"
bins = 100
r_max = 8.0
"#,
        )
        .unwrap()
        .finalize(Some(9), None)
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.stable.seed, 9);
        assert_eq!(c.integrator.dt, 1.0);
        assert_eq!(c.criterion.kind, CriterionKind::MinNonbonded);
        assert_eq!(c.observable_specs().unwrap()[0].bins, 100);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = RunConfig::parse("[stable]\nf_min = 0.7\nf_max = 0.6").unwrap();
        assert!(c.finalize(None, None).is_err());
    }
}

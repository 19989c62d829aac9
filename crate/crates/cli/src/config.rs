//! The TOML run configuration and its resolution into core types.

use std::path::{Path, PathBuf};

use biblab::distributions::{GaussianLikelihood, LaplacianLikelihood, Likelihood};
use biblab::estimators::RbfKernel;
use biblab::harness::{generate, Dataset, DatasetKind, DatasetSpec, ModelConfig, NoveltyWeights, QuantizerConfig, TrainConfig};
use biblab::objectives::{
    preset, Composition, EncoderRequirement, Objective, Preset, PresetSpec, TermA, TermB, TermBindings, TermC,
    TermD, TermDSource, TermWeights,
};
use biblab::oracle::DiscreteWorld;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_beta() -> f64 {
    1.0
}

fn default_data() -> DatasetSpec {
    DatasetSpec::new(DatasetKind::Gmm2d, 0, 1000, 1000)
}

/// Overrides applied on top of a preset, or a full objective when no
/// preset is named.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub w_a: Option<f64>,
    pub w_b: Option<f64>,
    pub w_c: Option<f64>,
    pub w_d: Option<f64>,
    pub term_a: Option<TermA>,
    pub term_b: Option<TermB>,
    pub term_c: Option<TermC>,
    pub term_d: Option<TermD>,
    pub composition: Option<Composition>,
    pub encoder: Option<EncoderRequirement>,
    pub dither: Option<bool>,
    /// Laplacian rate `λ` or Gaussian `σ`, whichever term C uses.
    pub likelihood_scale: Option<f64>,
    pub term_d_source: Option<TermDSource>,
    /// Fixed MMD bandwidths; the median heuristic is used when absent.
    pub kernel_bandwidths: Option<Vec<f64>>,
}

impl ObjectiveSection {
    fn changes_shape(&self) -> bool {
        self.w_a.is_some()
            || self.w_b.is_some()
            || self.w_c.is_some()
            || self.w_d.is_some()
            || self.term_a.is_some()
            || self.term_b.is_some()
            || self.term_c.is_some()
            || self.term_d.is_some()
            || self.composition.is_some()
            || self.encoder.is_some()
            || self.dither.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdSection {
    #[serde(default = "default_ls")]
    pub ls: Vec<usize>,
    /// Number of seeds, counted up from the run seed.
    #[serde(default = "default_rd_seeds")]
    pub seeds: u64,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
}

fn default_ls() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}

fn default_rd_seeds() -> u64 {
    1
}

fn default_kmeans_iters() -> usize {
    50
}

impl Default for RdSection {
    fn default() -> Self {
        Self {
            ls: default_ls(),
            seeds: default_rd_seeds(),
            kmeans_iters: default_kmeans_iters(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoveltySection {
    #[serde(default = "one")]
    pub disc: f64,
    #[serde(default = "one")]
    pub recon: f64,
    /// Shift of the outliers in units of the mixture standard deviation.
    #[serde(default = "default_sigmas")]
    pub outlier_sigmas: f64,
    #[serde(default = "default_n_outliers")]
    pub n_outliers: usize,
}

fn one() -> f64 {
    1.0
}

fn default_sigmas() -> f64 {
    5.0
}

fn default_n_outliers() -> usize {
    1000
}

impl Default for NoveltySection {
    fn default() -> Self {
        Self {
            disc: 1.0,
            recon: 1.0,
            outlier_sigmas: default_sigmas(),
            n_outliers: default_n_outliers(),
        }
    }
}

impl NoveltySection {
    pub fn weights(&self) -> NoveltyWeights {
        NoveltyWeights {
            disc: self.disc,
            recon: self.recon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSection {
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
}

fn default_n_eval() -> usize {
    1000
}

impl Default for DecomposeSection {
    fn default() -> Self {
        Self { n_eval: default_n_eval() }
    }
}

/// Everything one experiment needs, read from a single TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed`.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<Preset>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default = "default_data")]
    pub data: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub quantizer: QuantizerConfig,
    #[serde(default)]
    pub rd: RdSection,
    #[serde(default)]
    pub novelty: NoveltySection,
    #[serde(default)]
    pub decompose: DecomposeSection,
    /// Directory relative paths inside the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            preset: None,
            beta: 1.0,
            objective: ObjectiveSection::default(),
            data: default_data(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            quantizer: QuantizerConfig::default(),
            rd: RdSection::default(),
            novelty: NoveltySection::default(),
            decompose: DecomposeSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies the seed precedence `cli > top-level seed > train.seed`.
    pub fn apply_seed(&mut self, cli_seed: Option<u64>) {
        if let Some(s) = cli_seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
        }
    }

    pub fn run_seed(&self) -> u64 {
        self.train.seed
    }

    pub fn objective(&self) -> CliResult<Objective> {
        resolve_objective(self.preset, self.beta, &self.objective)
    }

    /// Generates the dataset, loading `data.world_file` when given.
    pub fn dataset(&self) -> CliResult<Dataset> {
        let mut spec = self.data.clone();
        if let Some(file) = &spec.world_file {
            let path = self.base_dir.join(file);
            spec.world = Some(read_world(&path)?);
        }
        Ok(generate(&spec)?)
    }
}

/// Reads and validates a world table.
pub fn read_world(path: &Path) -> CliResult<DiscreteWorld> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let w = DiscreteWorld::parse(&text)?;
    w.validate()?;
    Ok(w)
}

fn required<T>(v: Option<T>, key: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Config(format!("objective.{key} is required when no preset is named")))
}

pub fn resolve_objective(preset_name: Option<Preset>, beta: f64, o: &ObjectiveSection) -> CliResult<Objective> {
    let mut spec = match preset_name {
        Some(p) => {
            let mut s = preset(p).with_beta(beta)?;
            if o.changes_shape() {
                s.preset = None;
            }
            s
        }
        None => PresetSpec {
            preset: None,
            weights: TermWeights::new(
                required(o.w_a, "w_a")?,
                required(o.w_b, "w_b")?,
                required(o.w_c, "w_c")?,
                required(o.w_d, "w_d")?,
                beta,
            )?,
            bindings: TermBindings {
                term_a: required(o.term_a, "term_a")?,
                term_b: required(o.term_b, "term_b")?,
                term_c: required(o.term_c, "term_c")?,
                term_d: required(o.term_d, "term_d")?,
            },
            composition: o.composition.unwrap_or(Composition::Canonical),
            encoder: required(o.encoder, "encoder")?,
            dither: o.dither.unwrap_or(false),
        },
    };
    let w = &mut spec.weights;
    w.w_a = o.w_a.unwrap_or(w.w_a);
    w.w_b = o.w_b.unwrap_or(w.w_b);
    w.w_c = o.w_c.unwrap_or(w.w_c);
    w.w_d = o.w_d.unwrap_or(w.w_d);
    let b = &mut spec.bindings;
    b.term_a = o.term_a.unwrap_or(b.term_a);
    b.term_b = o.term_b.unwrap_or(b.term_b);
    b.term_c = o.term_c.unwrap_or(b.term_c);
    b.term_d = o.term_d.unwrap_or(b.term_d);
    spec.composition = o.composition.unwrap_or(spec.composition);
    spec.encoder = o.encoder.unwrap_or(spec.encoder);
    spec.dither = o.dither.unwrap_or(spec.dither);

    let mut obj = Objective::new(spec)?;
    if let Some(s) = o.likelihood_scale {
        obj.likelihood = match spec.bindings.term_c {
            TermC::GaussianLoglik => Likelihood::Gaussian(GaussianLikelihood::new(s)?),
            _ => Likelihood::Laplacian(LaplacianLikelihood::new(s)?),
        };
    }
    if let Some(bw) = &o.kernel_bandwidths {
        obj.kernel = Some(RbfKernel::new(bw.clone())?);
    }
    obj.term_d_source = o.term_d_source.unwrap_or(obj.term_d_source);
    obj.validate()?;
    Ok(obj)
}

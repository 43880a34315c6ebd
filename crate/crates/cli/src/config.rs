//! TOML run configurations. Every command takes `--config <file>` plus flag
//! overrides; flags win over file values.

use serde::Deserialize;
use std::path::{Path, PathBuf};

use gasnitrom::fom::{self, QuadraticFOM, SinTerm, WaveKind};
use gasnitrom::optim::LineSearchParams;
use gasnitrom::training::{CoordinateBlock, OptimizerKind, PenaltyConfig, TrainConfig, WeightConvention};

use crate::error::{CliError, CliResult};

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Full-order model selector.
#[derive(Debug, Clone, Deserialize)]
pub struct FomSpec {
    /// "toy" | "synthetic-nonnormal"
    pub kind: String,
    /// Toy coupling parameter (default 20).
    pub nu: Option<f64>,
    /// Synthetic state dimension.
    pub n: Option<usize>,
    /// Synthetic construction seed.
    pub seed: Option<u64>,
}

impl FomSpec {
    pub fn build(&self) -> CliResult<QuadraticFOM> {
        match self.kind.as_str() {
            "toy" => Ok(fom::toy_model(self.nu.unwrap_or(20.0))),
            "synthetic-nonnormal" => {
                let n = self
                    .n
                    .ok_or_else(|| CliError::Config("fom.n is required for synthetic-nonnormal".into()))?;
                Ok(fom::synthetic_nonnormal_fom(n, self.seed.unwrap_or(0)).fom)
            }
            other => Err(CliError::Config(format!("unknown fom.kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProtocolSpec {
    /// "step" | "impulse"
    pub kind: String,
    pub amplitudes: Vec<f64>,
    pub samples: usize,
    pub t_end: f64,
    /// "steady-state-output" | "time-averaged-energy" | "unit"
    pub weight_convention: Option<String>,
    pub substeps: Option<usize>,
}

impl ProtocolSpec {
    pub fn protocol(&self) -> CliResult<fom::Protocol> {
        match self.kind.as_str() {
            "step" => Ok(fom::Protocol::Step),
            "impulse" => Ok(fom::Protocol::Impulse),
            other => Err(CliError::Config(format!("unknown protocol.kind '{other}'"))),
        }
    }

    pub fn convention(&self) -> CliResult<WeightConvention> {
        match &self.weight_convention {
            Some(s) => WeightConvention::parse(s).map_err(CliError::from),
            None => Ok(match self.kind.as_str() {
                "impulse" => WeightConvention::TimeAveragedEnergy,
                _ => WeightConvention::SteadyStateOutput,
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// "csv" | "bin"
    pub format: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GenerateConfig {
    pub fom: FomSpec,
    pub protocol: ProtocolSpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct TrainSection {
    pub horizons: Option<Vec<f64>>,
    pub substeps: Option<usize>,
    /// "lbfgs" | "adam"
    pub optimizer: Option<String>,
    pub lbfgs_memory: Option<usize>,
    /// Iterations for the default single joint block (ignored when `blocks`
    /// is given).
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub ls_initial: Option<f64>,
    pub ls_contraction: Option<f64>,
    pub ls_sufficient_decrease: Option<f64>,
    pub adam_lr: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_weight_decay: Option<f64>,
    /// Coordinate-descent blocks, e.g. [["projection", 50], ["tensors", 50]].
    pub blocks: Option<Vec<(String, usize)>>,
    pub penalty_weight: Option<f64>,
    pub penalty_tf: Option<f64>,
}

impl TrainSection {
    pub fn to_train_config(&self) -> CliResult<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(h) = &self.horizons {
            cfg.horizons = h.clone();
        }
        if let Some(s) = self.substeps {
            cfg.substeps = s;
        }
        if let Some(g) = self.grad_tol {
            cfg.grad_tol = g;
        }
        let max_iters = self.max_iters.unwrap_or(200);
        cfg.blocks = match &self.blocks {
            Some(blocks) => blocks
                .iter()
                .map(|(kind, count)| Ok((CoordinateBlock::parse(kind).map_err(CliError::from)?, *count)))
                .collect::<CliResult<Vec<_>>>()?,
            None => vec![(CoordinateBlock::Joint, max_iters)],
        };
        cfg.optimizer = match self.optimizer.as_deref().unwrap_or("lbfgs") {
            "lbfgs" => OptimizerKind::Lbfgs {
                memory: self.lbfgs_memory.unwrap_or(10),
            },
            "adam" => OptimizerKind::Adam {
                learning_rate: self.adam_lr.unwrap_or(1e-3),
                beta1: self.adam_beta1.unwrap_or(0.9),
                beta2: self.adam_beta2.unwrap_or(0.999),
                weight_decay: self.adam_weight_decay.unwrap_or(0.0),
            },
            other => return Err(CliError::Config(format!("unknown optimizer '{other}'"))),
        };
        cfg.line_search = LineSearchParams {
            initial_step: self.ls_initial.unwrap_or(1.0),
            contraction: self.ls_contraction.unwrap_or(0.5),
            sufficient_decrease: self.ls_sufficient_decrease.unwrap_or(1e-4),
            max_backtracks: 60,
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            weight: self.penalty_weight.unwrap_or(1e-3),
            t_f: self.penalty_tf.unwrap_or(20.0),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct OpinfSection {
    pub lambda: Option<f64>,
    /// "exact" | "finite-difference"
    pub derivative: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TrainConfigFile {
    /// gasnitrom | nitrom | opinf | gasopinf | pod-galerkin
    pub method: String,
    pub r: usize,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Re-express the ingested full-state data in the span of this many
    /// leading POD modes before training (non-intrusive runs only; off by
    /// default, intended for large n).
    pub preproject_modes: Option<usize>,
    pub fom: Option<FomSpec>,
    pub train: Option<TrainSection>,
    pub opinf: Option<OpinfSection>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SinTermSpec(pub f64, pub f64, pub f64, pub String);

impl SinTermSpec {
    pub fn to_term(&self) -> CliResult<SinTerm> {
        let kind = match self.3.as_str() {
            "sin" => WaveKind::Sin,
            "cos" => WaveKind::Cos,
            other => return Err(CliError::Config(format!("unknown wave kind '{other}'"))),
        };
        Ok(SinTerm {
            amplitude: self.0,
            frequency: self.1,
            phase: self.2,
            kind,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct TestSpec {
    /// "random-steps" | "random-impulses" | "sinusoid" | "dataset"
    pub kind: String,
    pub count: Option<usize>,
    pub amp_min: Option<f64>,
    pub amp_max: Option<f64>,
    pub t_end: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub substeps: Option<usize>,
    /// Sinusoid terms: (amplitude, frequency, phase, "sin"|"cos").
    pub terms: Option<Vec<SinTermSpec>>,
    /// Ground-truth dataset directory for kind = "dataset".
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EvaluateConfig {
    pub model: PathBuf,
    pub out: PathBuf,
    pub test: TestSpec,
    pub fom: Option<FomSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareConfig {
    pub models: Vec<PathBuf>,
    pub out: PathBuf,
    pub test: TestSpec,
    pub fom: Option<FomSpec>,
}

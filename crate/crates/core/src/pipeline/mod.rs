//! Restartable staged workflow: synthetic data, gradient sampling, subspace
//! estimation, surrogate fitting, two-level MCMC, posterior reconstruction
//! and a summary report.
//!
//! Each stage hashes the configuration sections it depends on together with
//! the hash of its upstream stage. A stage whose hash and output digests match
//! the manifest is skipped; a stage whose prerequisite is missing or stale
//! fails with a message naming both stages.

pub mod config;
pub mod io;
pub mod manifest;
mod stages;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{ForwardKind, PipelineConfig};
pub use manifest::RunManifest;
pub use stages::{load_dataset, GradientRow, McmcSummary, ObservedData, ParameterSummary, ReconstructSummary, Report, SubspaceSummary};

use crate::inverse::synthetic::PlantedRidge;
use crate::inverse::{ForwardModel, TriaxForward};
use crate::triax::TriaxialTest;
use manifest::sha256_hex;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{location}: {message}")]
    Config { location: String, message: String },
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
    #[error("stage {stage}: prerequisite {prerequisite} is missing or stale; run it first")]
    Prerequisite { stage: String, prerequisite: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn io(path: &Path, message: impl Into<String>) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    pub fn stage(stage: &str, message: impl ToString) -> Self {
        PipelineError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

/// Whether a stage did work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    UpToDate,
    /// `computed` counts newly evaluated gradient samples for the gradient
    /// stage and is zero elsewhere.
    Ran { computed: usize },
}

/// Stream indices of the per-stage random generators.
mod streams {
    pub const SYNTH: u64 = 1;
    pub const GRADIENTS: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const KDE: u64 = 4;
    pub const ACTIVE: u64 = 5;
    pub const INACTIVE: u64 = 6;
}

pub const STAGES: [&str; 7] = [
    "synth-data",
    "gradients",
    "subspace",
    "surrogate",
    "mcmc",
    "reconstruct",
    "report",
];

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pool: Arc<rayon::ThreadPool>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let workers = if cfg.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            cfg.workers
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PipelineError::Internal(e.to_string()))?;
        std::fs::create_dir_all(&cfg.out).map_err(|e| PipelineError::io(&cfg.out, e.to_string()))?;
        Ok(Pipeline {
            cfg,
            pool: Arc::new(pool),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    /// Seed of stage stream `stream`, derived from the master seed.
    fn stage_seed(&self, stream: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream);
        rng.next_u64()
    }

    pub fn forward(&self) -> Box<dyn ForwardModel> {
        let stations = self.cfg.station_values();
        match self.cfg.forward.model {
            ForwardKind::Triaxial => Box::new(TriaxForward {
                test: TriaxialTest::new(self.cfg.elastic, self.cfg.schedule).with_settings(self.cfg.triax),
                prior: self.cfg.prior.clone(),
                stations,
            }),
            ForwardKind::PlantedRidge => Box::new(PlantedRidge::with_outputs(stations.len())),
        }
    }

    pub fn manifest(&self) -> Result<RunManifest, PipelineError> {
        RunManifest::load(&self.cfg.out)
    }

    /// Runs `stage` (one of [`STAGES`]) or every stage for `"all"`.
    pub fn run(&self, stage: &str) -> Result<Vec<(String, StageStatus)>, PipelineError> {
        let names: Vec<&str> = if stage == "all" {
            STAGES.to_vec()
        } else if STAGES.contains(&stage) {
            vec![stage]
        } else {
            return Err(PipelineError::Internal(format!("unknown stage {stage}")));
        };
        let mut out = Vec::new();
        for name in names {
            let status = self.pool.install(|| match name {
                "synth-data" => self.synth_data(),
                "gradients" => self.gradients(),
                "subspace" => self.subspace(),
                "surrogate" => self.surrogate(),
                "mcmc" => self.mcmc(),
                "reconstruct" => self.reconstruct(),
                _ => self.report(),
            })?;
            log::info!("{name}: {status:?}");
            out.push((name.to_string(), status));
        }
        Ok(out)
    }

    fn section(value: &impl serde::Serialize) -> toml::Value {
        toml::Value::try_from(value).expect("configuration sections serialize")
    }

    /// SHA-256 over the stage name, upstream hash and named sections.
    fn hash(stage: &str, upstream: Option<&str>, parts: Vec<(&str, toml::Value)>) -> String {
        let mut table = toml::map::Map::new();
        table.insert("stage".into(), toml::Value::String(stage.into()));
        if let Some(u) = upstream {
            table.insert("upstream".into(), toml::Value::String(u.into()));
        }
        for (k, v) in parts {
            table.insert(k.into(), v);
        }
        sha256_hex(toml::to_string(&toml::Value::Table(table)).expect("table serializes").as_bytes())
    }

    fn synth_hash(&self) -> String {
        let c = &self.cfg;
        Self::hash(
            "synth-data",
            None,
            vec![
                ("seed", Self::section(&self.stage_seed(streams::SYNTH).to_string())),
                ("forward", Self::section(&c.forward)),
                ("prior", Self::section(&c.prior)),
                ("elastic", Self::section(&c.elastic)),
                ("schedule", Self::section(&c.schedule)),
                ("triax", Self::section(&c.triax)),
                ("stations", Self::section(&c.station_values())),
                ("noise", Self::section(&c.noise)),
                ("synthetic", Self::section(&c.synthetic)),
            ],
        )
    }

    fn gradients_hash(&self) -> String {
        Self::hash(
            "gradients",
            Some(&self.synth_hash()),
            vec![
                ("seed", Self::section(&self.stage_seed(streams::GRADIENTS).to_string())),
                ("gradients", Self::section(&self.cfg.gradients)),
            ],
        )
    }

    fn subspace_hash(&self) -> String {
        Self::hash(
            "subspace",
            Some(&self.gradients_hash()),
            vec![
                ("seed", Self::section(&self.stage_seed(streams::BOOTSTRAP).to_string())),
                ("n_boot", Self::section(&(self.cfg.subspace.n_boot as i64))),
            ],
        )
    }

    fn surrogate_hash(&self, k: usize) -> String {
        Self::hash(
            "surrogate",
            Some(&self.subspace_hash()),
            vec![("k", Self::section(&(k as i64)))],
        )
    }

    fn mcmc_hash(&self, k: usize) -> String {
        Self::hash(
            "mcmc",
            Some(&self.surrogate_hash(k)),
            vec![
                ("kde", Self::section(&self.cfg.kde)),
                ("kde_seed", Self::section(&self.stage_seed(streams::KDE).to_string())),
                ("active", Self::section(&self.cfg.mcmc.active_chain(k, 0))),
                ("active_seed", Self::section(&self.stage_seed(streams::ACTIVE).to_string())),
                ("inactive", Self::section(&self.cfg.mcmc.inactive_chain(k, 0))),
                ("inactive_seed", Self::section(&self.stage_seed(streams::INACTIVE).to_string())),
                ("trace_rows", Self::section(&(self.cfg.mcmc.trace_rows as i64))),
            ],
        )
    }

    fn reconstruct_hash(&self, k: usize) -> String {
        Self::hash(
            "reconstruct",
            Some(&self.mcmc_hash(k)),
            vec![("report", Self::section(&self.cfg.report))],
        )
    }

    fn report_hash(&self, k: usize) -> String {
        Self::hash("report", Some(&self.reconstruct_hash(k)), vec![])
    }
}

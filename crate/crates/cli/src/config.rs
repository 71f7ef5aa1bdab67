use std::path::{Path, PathBuf};

use ilora::adapter::ILoRAConfig;
use ilora::harness::{generate_tasks, ModelKind, TaskGenConfig, TrainConfig};
use ilora::numkit::Rng;
use ilora::{Error, Result};
use serde::{Deserialize, Serialize};

/// Output directory override, taking precedence over the config file.
pub const OUT_DIR_ENV: &str = "ILORA_OUT_DIR";

/// One reproducible training experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub arm: ModelKind,
    pub adapter: ILoRAConfig,
    pub tasks: TaskGenConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            arm: ModelKind::Ilora,
            adapter: ILoRAConfig::new(16, 16, 4, 3, 8.0),
            tasks: TaskGenConfig::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every field a run touches, before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.adapter.validate()?;
        self.train.validate()?;
        if self.tasks.h != self.adapter.h || self.tasks.d != self.adapter.d {
            return Err(Error::InvalidConfig {
                field: "tasks",
                reason: format!(
                    "task dims {}→{} differ from adapter dims {}→{}",
                    self.tasks.h, self.tasks.d, self.adapter.h, self.adapter.d
                ),
            });
        }
        generate_tasks(&self.tasks, &mut Rng::new(0)).map(|_| ())
    }
}

/// `--out` flag, then the environment, then the config value.
pub fn resolve_out_dir(flag: Option<PathBuf>, configured: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| configured.to_path_buf())
}

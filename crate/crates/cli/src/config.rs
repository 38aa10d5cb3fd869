//! Experiment configuration files and the effective run they describe.

use std::fs;
use std::path::{Path, PathBuf};

use adicflow::cohomology::FunctionSpec;
use adicflow::diagram::DiagramSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

fn default_horizon() -> usize {
    adicflow::cocycle::DEFAULT_HORIZON
}

fn default_t_min() -> f64 {
    10.0
}

fn default_t_max() -> f64 {
    1e5
}

fn default_per_decade() -> usize {
    20
}

fn default_start_vertex() -> usize {
    1
}

/// Contents of a `--config` file. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to a diagram spec file.
    pub diagram: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<FunctionSpec>,
    /// Top level of the working window; overrides the spec's window top.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Seed for i.i.d. extensions; overrides the spec's seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub split_level: i64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    /// 1-based vertex at the top level where the flow orbit starts.
    #[serde(default = "default_start_vertex")]
    pub start_vertex: usize,
    /// Not part of the config hash, so moving the output changes no file.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub t_max: Option<f64>,
}

/// Everything a subcommand needs, with overrides applied and the diagram
/// spec loaded. The hash covers exactly what is serialized here.
#[derive(Clone, Debug, Serialize)]
pub struct Run {
    pub config: ExperimentConfig,
    pub diagram: DiagramSpec,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub hash: String,
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {what} {}: {e}", path.display())))
}

impl Run {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, Failure> {
        let text = read(path, "config")?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let diagram_path = base.join(&config.diagram);
        let mut diagram = DiagramSpec::from_json(&read(&diagram_path, "diagram spec")?)
            .map_err(|e| Failure::Config(format!("{}: {e}", diagram_path.display())))?;

        if let Some(out) = &overrides.out {
            config.out = Some(out.clone());
        }
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(levels) = overrides.levels {
            config.levels = Some(levels);
        }
        if let Some(t_max) = overrides.t_max {
            config.t_max = t_max;
        }
        config.check()?;

        if let Some(levels) = config.levels {
            diagram.window[1] = levels as i64;
        }
        if let Some(seed) = config.seed {
            if diagram.extension.kind == "iid" {
                diagram.extension.seed = Some(seed);
            }
        }
        let out = match &config.out {
            Some(p) if overrides.out.is_some() => p.clone(),
            Some(p) => base.join(p),
            None => PathBuf::from("adicflow-out"),
        };
        let mut run = Run {
            config,
            diagram,
            out,
            hash: String::new(),
        };
        let canonical = serde_json::to_string(&run).expect("serializable run");
        run.hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
        Ok(run)
    }

    pub fn function(&self) -> Result<&FunctionSpec, Failure> {
        self.config
            .function
            .as_ref()
            .ok_or_else(|| Failure::Config("function: this subcommand needs a function spec".into()))
    }

    pub fn grid(&self) -> Vec<f64> {
        adicflow::cohomology::log_grid(self.config.t_min, self.config.t_max, self.config.per_decade)
    }
}

impl ExperimentConfig {
    fn check(&self) -> Result<(), Failure> {
        let bad = |key: &str, why: &str| Err(Failure::Config(format!("{key}: {why}")));
        if !(self.t_min.is_finite() && self.t_min > 0.0) {
            return bad("t_min", "must be a positive number");
        }
        if !(self.t_max.is_finite() && self.t_max > self.t_min) {
            return bad("t_max", "must exceed t_min");
        }
        if self.per_decade == 0 {
            return bad("per_decade", "must be at least 1");
        }
        if self.start_vertex == 0 {
            return bad("start_vertex", "vertices are 1-based");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1");
        }
        Ok(())
    }
}
